"""Wavefunction family, plasma Gibbs weight and the scaled point Hamiltonian.

Three coordinate systems appear in this package:

* physical ``w``: the wavefunction variables (magnetic length 1/sqrt(2)),
  the Laughlin droplet has radius sqrt(ell*N) and density 1/(pi*ell);
* sampling ``z = w / sqrt(N)``: the Gibbs measure at temperature 1/N,
  droplet radius sqrt(ell);
* ground-state ``x = w / sqrt(pi*ell)``: the point Hamiltonian with unit
  background density, droplet radius sqrt(N/pi).

Sampler state lives in ``z``, minimizer state in ``x``.  Physical
coordinates are only used when a prefactor is evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np

QUADRATIC_COEFFICIENT_CAP = 0.4


class SingularConfigurationError(ValueError):
    """Two particles (or a particle and a quasi-hole) coincide exactly."""


@dataclass(frozen=True)
class PlasmaParams:
    n_particles: int
    ell: int = 2

    def __post_init__(self):
        if int(self.n_particles) != self.n_particles or self.n_particles < 1:
            raise ValueError(f"n_particles must be a positive integer, got {self.n_particles}")
        if int(self.ell) != self.ell or self.ell < 1:
            raise ValueError(f"ell must be an integer >= 1, got {self.ell}")

    @property
    def temperature(self) -> Fraction:
        # exact rational so that temperature * N == 1 holds without round-off
        return Fraction(1, self.n_particles)

    @property
    def droplet_radius_scaled(self) -> float:
        return math.sqrt(self.ell)

    @property
    def droplet_radius_physical(self) -> float:
        return math.sqrt(self.ell * self.n_particles)

    @property
    def droplet_radius_ground(self) -> float:
        return math.sqrt(self.n_particles / math.pi)

    @property
    def plateau_density(self) -> float:
        return 1.0 / (math.pi * self.ell)

    @property
    def statistics(self) -> str:
        # metadata only: nothing downstream depends on it
        if self.ell == 1:
            return "free fermions"
        return "fermions" if self.ell % 2 else "bosons"

    def to_dict(self) -> dict:
        return {"n_particles": self.n_particles, "ell": self.ell}


# -- prefactors ---------------------------------------------------------------

def _as_complex(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, 2)
    return pts[:, 0] + 1j * pts[:, 1]


class Prefactor:
    """Analytic symmetric factor F = prod_j f(w_j) multiplying the Laughlin state.

    Subclasses implement ``site_log_modulus`` (log|f| per point) and
    ``site_log_gradient`` (gradient of log|f| as a real 2-vector).
    """

    kind = "abstract"
    code = -1

    def site_log_modulus(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def site_log_gradient(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def kernel_args(self):
        """Flat encoding consumed by the compiled Metropolis kernel."""
        return (self.code, np.zeros((0, 2)), np.zeros(0), 0.0, 0.0)

    def extent_hint(self, params: PlasmaParams) -> float:
        """Rough radius (sampling units) that holds the whole droplet."""
        return params.droplet_radius_scaled

    def to_dict(self) -> dict:
        raise NotImplementedError

    @property
    def label(self) -> str:
        return self.kind


@dataclass(frozen=True)
class Identity(Prefactor):
    kind = "identity"
    code = 0

    def site_log_modulus(self, w):
        return np.zeros(np.shape(w)[0] if np.ndim(w) > 1 else 1)

    def site_log_gradient(self, w):
        return np.zeros((np.shape(w)[0] if np.ndim(w) > 1 else 1, 2))

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class QuasiHoleProduct(Prefactor):
    """f(w) = prod_k (w - a_k)^{m_k}; hole locations in physical coordinates."""

    holes: tuple = field(default_factory=tuple)

    kind = "quasi_hole"
    code = 1

    def __post_init__(self):
        cleaned = []
        for loc, mult in self.holes:
            loc = tuple(float(v) for v in loc)
            if len(loc) != 2 or not all(math.isfinite(v) for v in loc):
                raise ValueError(f"bad hole location {loc!r}")
            if int(mult) != mult or mult < 1:
                raise ValueError(f"hole multiplicity must be a positive integer, got {mult!r}")
            cleaned.append((loc, int(mult)))
        if not cleaned:
            raise ValueError("QuasiHoleProduct needs at least one hole")
        object.__setattr__(self, "holes", tuple(cleaned))

    @property
    def locations(self) -> np.ndarray:
        return np.array([loc for loc, _ in self.holes], dtype=float)

    @property
    def multiplicities(self) -> np.ndarray:
        return np.array([m for _, m in self.holes], dtype=float)

    @property
    def total_degree(self) -> int:
        return sum(m for _, m in self.holes)

    def _offsets(self, w):
        zw = _as_complex(w)
        a = _as_complex(self.locations)
        diff = zw[:, None] - a[None, :]
        if np.any(diff == 0):
            raise SingularConfigurationError("particle sits exactly on a quasi-hole")
        return diff

    def site_log_modulus(self, w):
        diff = self._offsets(w)
        return np.log(np.abs(diff)) @ self.multiplicities

    def site_log_gradient(self, w):
        diff = self._offsets(w)
        # grad Re(g) = (Re g', -Im g') with g' = sum_k m_k / (w - a_k)
        gp = (self.multiplicities[None, :] / diff).sum(axis=1)
        return np.stack([gp.real, -gp.imag], axis=1)

    def kernel_args(self):
        return (self.code, self.locations, self.multiplicities, 0.0, 0.0)

    def extent_hint(self, params):
        n = params.n_particles
        far = max(math.hypot(*loc) for loc, _ in self.holes) / math.sqrt(n)
        grow = math.sqrt(params.ell + params.ell * self.total_degree / n * 2.0)
        return max(grow, far + 0.5 * params.droplet_radius_scaled)

    def to_dict(self):
        return {"kind": self.kind,
                "holes": [{"location": list(loc), "multiplicity": m} for loc, m in self.holes]}

    @property
    def label(self):
        parts = [f"({loc[0]:g},{loc[1]:g})x{m}" for loc, m in self.holes]
        return "hole:" + ";".join(parts)


@dataclass(frozen=True)
class QuadraticExponential(Prefactor):
    """f(w) = exp(c w^2), i.e. F = exp(c sum_j w_j^2)."""

    coefficient: complex = 0.0

    kind = "quadratic"
    code = 2

    def __post_init__(self):
        c = complex(self.coefficient)
        if not (math.isfinite(c.real) and math.isfinite(c.imag)):
            raise ValueError("quadratic coefficient must be finite")
        if abs(c) > QUADRATIC_COEFFICIENT_CAP:
            raise ValueError(
                f"|c| = {abs(c):.3g} exceeds the cap {QUADRATIC_COEFFICIENT_CAP} "
                "(square integrability needs |c| < 1/2)")
        object.__setattr__(self, "coefficient", c)

    def site_log_modulus(self, w):
        zw = _as_complex(w)
        return (self.coefficient * zw * zw).real

    def site_log_gradient(self, w):
        gp = 2.0 * self.coefficient * _as_complex(w)
        return np.stack([gp.real, -gp.imag], axis=1)

    def kernel_args(self):
        c = self.coefficient
        return (self.code, np.zeros((0, 2)), np.zeros(0), c.real, c.imag)

    def extent_hint(self, params):
        a = abs(self.coefficient)
        return params.droplet_radius_scaled * math.sqrt((1 + 2 * a) / (1 - 2 * a))

    def to_dict(self):
        c = self.coefficient
        return {"kind": self.kind, "coefficient": [c.real, c.imag]}

    @property
    def label(self):
        c = self.coefficient
        return f"quadratic:{c.real:g}{c.imag:+g}j"


def prefactor_from_dict(d: dict) -> Prefactor:
    kind = d.get("kind", "identity")
    if kind == "identity":
        return Identity()
    if kind == "quasi_hole":
        return QuasiHoleProduct(tuple((h["location"], h["multiplicity"]) for h in d["holes"]))
    if kind == "quadratic":
        c = d["coefficient"]
        if isinstance(c, (list, tuple)):
            c = complex(c[0], c[1] if len(c) > 1 else 0.0)
        return QuadraticExponential(complex(c))
    raise ValueError(f"unknown prefactor kind {kind!r}")


def prefactor_log_modulus(pf: Prefactor, physical_points) -> float:
    """log|F| at the given physical points (a sum of per-particle terms)."""
    pts = np.asarray(physical_points, dtype=float).reshape(-1, 2)
    if isinstance(pf, Identity) or len(pts) == 0:
        return 0.0
    return float(np.sum(pf.site_log_modulus(pts)))


# -- configurations ------------------------------------------------------------

@dataclass(frozen=True)
class Configuration:
    """N planar points in scaled coordinates; the array is made read-only."""

    points: np.ndarray
    params: PlasmaParams

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        if len(pts) != self.params.n_particles:
            raise ValueError(f"expected {self.params.n_particles} points, got {len(pts)}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("configuration has non-finite coordinates")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def moved(self, index: int, new_position) -> "Configuration":
        pts = self.points.copy()
        pts[index] = new_position
        return Configuration(pts, self.params)


def _pair_sq_distances(points: np.ndarray) -> np.ndarray:
    d = points[:, None, :] - points[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def _log_pairs(points: np.ndarray) -> float:
    """sum_{i<j} log|p_i - p_j|, raising on coincidences."""
    n = len(points)
    if n < 2:
        return 0.0
    iu = np.triu_indices(n, 1)
    d2 = _pair_sq_distances(points)[iu]
    if np.any(d2 == 0):
        raise SingularConfigurationError("two points coincide")
    return 0.5 * float(np.sum(np.log(d2)))


class GibbsWeightParts(NamedTuple):
    confinement: float
    interaction: float
    prefactor: float

    @property
    def total(self) -> float:
        return self.confinement + self.interaction + self.prefactor


def gibbs_weight_parts(config: Configuration, pf: Prefactor | None = None) -> GibbsWeightParts:
    n = config.params.n_particles
    ell = config.params.ell
    z = config.points
    interaction = 2.0 * ell * _log_pairs(z)
    confinement = -n * float(np.sum(z * z))
    pref = 0.0
    if pf is not None and not isinstance(pf, Identity):
        pref = 2.0 * prefactor_log_modulus(pf, math.sqrt(n) * z)
    return GibbsWeightParts(confinement, interaction, pref)


def log_gibbs_weight(config: Configuration, pf: Prefactor | None = None) -> float:
    """Unnormalized log of the scaled N-particle density, i.e. -N * H_N(Z)."""
    return gibbs_weight_parts(config, pf).total


# -- scaled (ground-state) Hamiltonian ------------------------------------------

def ground_to_physical_factor(ell: int) -> float:
    return math.sqrt(math.pi * ell)


def ground_to_sampling(x, params: PlasmaParams) -> np.ndarray:
    return np.asarray(x, dtype=float) * math.sqrt(math.pi * params.ell / params.n_particles)


def sampling_to_ground(z, params: PlasmaParams) -> np.ndarray:
    return np.asarray(z, dtype=float) / math.sqrt(math.pi * params.ell / params.n_particles)


def external_term(points: np.ndarray, w_ext: Prefactor | None, ell: int) -> float:
    """W(X) = -(1/ell) log|F(sqrt(pi ell) X)|, the prefactor seen by the minimizer."""
    if w_ext is None or isinstance(w_ext, Identity):
        return 0.0
    return -prefactor_log_modulus(w_ext, ground_to_physical_factor(ell) * points) / ell


def external_gradient(points: np.ndarray, w_ext: Prefactor | None, ell: int) -> np.ndarray:
    if w_ext is None or isinstance(w_ext, Identity):
        return np.zeros_like(points)
    s = ground_to_physical_factor(ell)
    return -(s / ell) * w_ext.site_log_gradient(s * points)


def scaled_hamiltonian(config: Configuration, w_ext: Prefactor | None = None) -> float:
    x = config.points
    return (0.5 * math.pi * float(np.sum(x * x)) - _log_pairs(x)
            + external_term(x, w_ext, config.params.ell))


def _pair_forces(x: np.ndarray) -> np.ndarray:
    d = x[:, None, :] - x[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", d, d)
    np.fill_diagonal(d2, np.inf)
    if np.any(d2 == 0):
        raise SingularConfigurationError("two points coincide")
    return (d / d2[:, :, None]).sum(axis=1)


def scaled_gradient(config: Configuration, w_ext: Prefactor | None = None) -> np.ndarray:
    x = config.points
    return math.pi * x - _pair_forces(x) + external_gradient(x, w_ext, config.params.ell)


def scaled_energy_change(x: np.ndarray, step: np.ndarray, w_ext: Prefactor | None,
                         ell: int) -> float:
    """H(x + step) - H(x) evaluated without cancellation.

    Each logarithmic term is written as log1p of a relative change, so tiny
    steps near convergence still give a correctly signed difference.  Returns
    +inf if the step makes two points (or a point and a hole) collide.
    """
    dconf = 0.5 * math.pi * float(np.sum(step * (2.0 * x + step)))
    n = len(x)
    dpair = 0.0
    if n > 1:
        iu = np.triu_indices(n, 1)
        d = (x[:, None, :] - x[None, :, :])[iu]
        dd = (step[:, None, :] - step[None, :, :])[iu]
        d2 = np.einsum("ij,ij->i", d, d)
        rel = np.einsum("ij,ij->i", dd, 2.0 * d + dd) / d2
        if np.any(rel <= -1.0):
            return math.inf
        dpair = -0.5 * float(np.sum(np.log1p(rel)))
    dext = 0.0
    if isinstance(w_ext, QuasiHoleProduct):
        s = ground_to_physical_factor(ell)
        p = s * x
        dp = s * step
        off = p[:, None, :] - w_ext.locations[None, :, :]
        o2 = np.einsum("ijk,ijk->ij", off, off)
        rel = np.einsum("ik,ijk->ij", dp, 2.0 * off) + np.einsum("ik,ik->i", dp, dp)[:, None]
        rel = rel / o2
        if np.any(rel <= -1.0):
            return math.inf
        dext = -(0.5 / ell) * float(np.sum(np.log1p(rel) @ w_ext.multiplicities))
    elif isinstance(w_ext, QuadraticExponential):
        zx = x[:, 0] + 1j * x[:, 1]
        zs = step[:, 0] + 1j * step[:, 1]
        dext = -math.pi * float((w_ext.coefficient * np.sum(zs * (2.0 * zx + zs))).real)
    return dconf + dpair + dext
