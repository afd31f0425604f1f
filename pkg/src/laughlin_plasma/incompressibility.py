"""Physics-level verdicts built from sampler output.

Trap energies are compared with the bathtub energy (fill the disk of
physical radius sqrt(ell N) at the maximal density 1/(pi ell)); the
angular momentum is measured through <sum |w|^2> = <L> + N, valid for any
state in the lowest Landau level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gibbs_sampler import DensityHistogram, SamplerRun, chain_stderr, disk_averages, series_mean_stderr
from .states import Identity, PlasmaParams, Prefactor, QuadraticExponential, QuasiHoleProduct

COROLLARY_BAND = 0.10
CLIPPED_MASS = 1e-3


class SupportClippedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrapPotential:
    """V(w) = |w|^s in physical coordinates."""

    exponent: float

    def __post_init__(self):
        if not self.exponent > 0:
            raise ValueError("trap exponent must be positive")

    def __call__(self, r):
        return np.abs(np.asarray(r, dtype=float)) ** self.exponent


def bathtub_energy(params: PlasmaParams, trap: TrapPotential) -> float:
    """Minimum of int V rho over 0 <= rho <= 1/(pi ell), int rho = N, for radial increasing V."""
    s = trap.exponent
    ell, n = params.ell, params.n_particles
    return 2.0 * (ell * n) ** ((s + 2) / 2) / (ell * (s + 2))


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float


def trap_energy_mc(params: PlasmaParams, density: DensityHistogram, trap) -> Estimate:
    """int V rho_F from a density histogram; ``trap`` is any callable of the physical radius."""
    if density.outside_fraction > CLIPPED_MASS:
        raise SupportClippedError(
            f"{density.outside_fraction:.2e} of the mass lies outside the histogram")
    n = params.n_particles
    h = density.cell
    ny, nx = density.shape
    # centers of the grid plus a one-cell border
    xs = density.origin[0] + h * (np.arange(-1, nx + 1) + 0.5)
    ys = density.origin[1] + h * (np.arange(-1, ny + 1) + 0.5)
    X, Y = np.meshgrid(xs, ys)
    # cell average of V by 2x2 Gauss points
    g = 0.5 * h / math.sqrt(3.0)
    vbar = sum(trap(math.sqrt(n) * np.hypot(X + dx, Y + dy))
               for dx in (-g, g) for dy in (-g, g)) / 4.0
    # the histogram only knows cell means of rho; the in-cell covariance of rho
    # and V integrates to -(h^2/12) int rho lap V, removed here with the 5-point
    # Laplacian of the cell averages
    c = vbar[1:-1, 1:-1]
    lap_h2 = vbar[1:-1, 2:] + vbar[1:-1, :-2] + vbar[2:, 1:-1] + vbar[:-2, 1:-1] - 4.0 * c
    v = c - lap_h2 / 12.0
    w = n * h ** 2
    value = float(np.sum(v * density.density) * w)
    per_chain = np.einsum("cij,ij->c", density.chain_density, v) * w
    return Estimate(value, float(chain_stderr(per_chain)))


@dataclass(frozen=True)
class EnergyReport:
    label: str
    params: PlasmaParams
    exponent: float
    mc_energy: float
    mc_stderr: float
    bathtub_energy: float

    @property
    def ratio(self) -> float:
        return self.mc_energy / self.bathtub_energy

    @property
    def ratio_stderr(self) -> float:
        return self.mc_stderr / self.bathtub_energy

    @property
    def above_bathtub(self) -> bool:
        return self.ratio >= 1.0 - 3.0 * self.ratio_stderr

    def to_dict(self):
        return {"label": self.label, **self.params.to_dict(), "s": self.exponent,
                "mc_energy": self.mc_energy, "mc_stderr": self.mc_stderr,
                "bathtub_energy": self.bathtub_energy, "ratio": self.ratio,
                "ratio_stderr": self.ratio_stderr, "above_bathtub": self.above_bathtub}


def energy_report(run: SamplerRun, trap: TrapPotential, label: str | None = None) -> EnergyReport:
    est = trap_energy_mc(run.params, run.histogram, trap)
    return EnergyReport(label or run.prefactor.label, run.params, trap.exponent, est.value,
                        est.stderr, bathtub_energy(run.params, trap))


@dataclass
class CorollaryVerdict:
    reference: str
    band: float
    ratio_ok: bool
    comparisons: list = field(default_factory=list)

    @property
    def not_worse(self) -> bool:
        return all(c["not_worse"] for c in self.comparisons)

    @property
    def beats_all(self) -> bool:
        return all(c["beats"] for c in self.comparisons)

    @property
    def passed(self) -> bool:
        return self.ratio_ok and self.not_worse

    def to_dict(self):
        return {"reference": self.reference, "band": self.band, "ratio_ok": self.ratio_ok,
                "not_worse": self.not_worse, "beats_all": self.beats_all, "passed": self.passed,
                "comparisons": self.comparisons}


def corollary_check(reference: EnergyReport, others: list[EnergyReport],
                    band: float = COROLLARY_BAND, sigmas: float = 3.0) -> CorollaryVerdict:
    """Laughlin-state trap energy against perturbed prefactors at the same (N, ell, s).

    ``not_worse``: reference <= other + 3 combined standard errors.
    ``beats``: other - reference > 3 combined standard errors.
    """
    for o in others:
        if (o.params, o.exponent) != (reference.params, reference.exponent):
            raise ValueError("reports must share params and trap")
    verdict = CorollaryVerdict(reference.label, band, abs(reference.ratio - 1.0) <= band)
    for o in others:
        se = math.hypot(reference.mc_stderr, o.mc_stderr)
        diff = o.mc_energy - reference.mc_energy
        verdict.comparisons.append({
            "label": o.label, "energy": o.mc_energy, "stderr": o.mc_stderr,
            "difference": diff, "combined_stderr": se,
            "z": diff / se if se > 0 else (math.inf if diff > 0 else -math.inf if diff < 0 else 0.0),
            "not_worse": reference.mc_energy <= o.mc_energy + sigmas * se,
            "beats": diff > sigmas * se})
    return verdict


def angular_momentum_estimate(run: SamplerRun) -> tuple[float, float, float]:
    """<L_N> = <sum_i |w_i|^2> - N from per-sweep samples; returns (L, stderr, L / N^2)."""
    n = run.params.n_particles
    series = [n * c.r2_series - n for c in run.chains]
    mean, se = series_mean_stderr(series)
    return mean, se, mean / n ** 2


def laughlin_angular_momentum(params: PlasmaParams, central_degree: int = 0) -> float:
    """Exact <L> for the Laughlin state times prod_j w_j^m (holes at the origin)."""
    n = params.n_particles
    return params.ell * n * (n - 1) / 2 + central_degree * n


def disk_bound_check(run: SamplerRun, alphas=(0.3, 0.4), tolerance: float = 0.10) -> dict:
    """Disk averages at each alpha; ``passed`` when no disk exceeds the tolerated bound."""
    out = {"label": run.prefactor.label, "tolerance": tolerance, "alphas": {}}
    ok = True
    for a in alphas:
        disks = disk_averages(run.histogram, run.params, a, tolerance)
        worst = max(disks, key=lambda d: d.mean - 2 * d.stderr)
        flagged = [d for d in disks if d.exceeds]
        ok &= not flagged
        out["alphas"][str(a)] = {"n_disks": len(disks), "n_exceed": len(flagged),
                                 "max_mean": max(d.mean for d in disks),
                                 "worst": worst.to_dict()}
    out["passed"] = ok
    return out


def prefactor_matrix(params: PlasmaParams, include_quadratic=(0.1,),
                     ring_radius: float = 3.0) -> dict[str, Prefactor]:
    """Perturbations exercised by the uniformity checks.

    Holes at the center and at half the droplet radius (physical units), a
    ring of four simple holes of physical radius ``ring_radius``, and
    quadratic exponentials.
    """
    off = (0.5 * params.droplet_radius_physical, 0.0)
    ring = tuple(((ring_radius * math.cos(t), ring_radius * math.sin(t)), 1)
                 for t in np.arange(4) * math.pi / 2)
    out = {"identity": Identity()}
    for m in (1, 2):
        out[f"hole_center_m{m}"] = QuasiHoleProduct((((0.0, 0.0), m),))
        out[f"hole_off_m{m}"] = QuasiHoleProduct(((off, m),))
    out["ring4"] = QuasiHoleProduct(ring)
    for c in include_quadratic:
        out[f"quadratic_{c:g}"] = QuadraticExponential(complex(c))
    return out
