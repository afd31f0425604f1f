"""Two-dimensional logarithmic Thomas-Fermi model on a uniform grid.

For K point charges ("nuclei") the density sigma minimizes

    E[sigma] = -int V sigma - 1/2 iint sigma(x) log|x - y| sigma(y)

with V(x) = -sum_i log|x - x_i|, subject to 0 <= sigma <= 1 and int sigma = K.
The minimizer is (up to the grid) the indicator of the screening region where
the total potential Phi = V + log * sigma is positive; a single nucleus
screens exactly the disk of radius pi^{-1/2}.

Arrays on a grid are indexed ``[iy, ix]``; cell ``(iy, ix)`` has center
``origin + h * (ix + 1/2, iy + 1/2)``.
"""

from __future__ import annotations

import base64
import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage import measure

UNIT_DISK_RADIUS = 1.0 / math.sqrt(math.pi)


class TFConvergenceError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class NucleiSet:
    positions: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 2)
        if len(pos) < 1:
            raise ValueError("need at least one nucleus")
        if not np.all(np.isfinite(pos)):
            raise ValueError("nuclei must have finite coordinates")
        d = pos[:, None, :] - pos[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", d, d)
        np.fill_diagonal(d2, 1.0)
        if np.any(d2 == 0):
            raise ValueError("nuclei must be pairwise distinct")
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)

    @property
    def K(self) -> int:
        return len(self.positions)

    def translated(self, t) -> "NucleiSet":
        return NucleiSet(self.positions + np.asarray(t, dtype=float))


@dataclass(frozen=True)
class GridSpec:
    origin: tuple
    h: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.h <= 0 or self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs h > 0 and at least 2x2 cells")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def extent(self):
        x0, y0 = self.origin
        return (x0, x0 + self.nx * self.h, y0, y0 + self.ny * self.h)

    def centers(self):
        x0, y0 = self.origin
        xs = x0 + self.h * (np.arange(self.nx) + 0.5)
        ys = y0 + self.h * (np.arange(self.ny) + 0.5)
        return np.meshgrid(xs, ys)

    def cell_index(self, points):
        """(iy, ix) of the cell containing each point, -1 when outside."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        x0, y0 = self.origin
        ix = np.floor((pts[:, 0] - x0) / self.h).astype(int)
        iy = np.floor((pts[:, 1] - y0) / self.h).astype(int)
        inside = (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny)
        ix[~inside] = -1
        iy[~inside] = -1
        return iy, ix

    def contains(self, points, margin=0.0) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        x0, x1, y0, y1 = self.extent
        return ((pts[:, 0] >= x0 + margin) & (pts[:, 0] <= x1 - margin)
                & (pts[:, 1] >= y0 + margin) & (pts[:, 1] <= y1 - margin))

    def shifted(self, t) -> "GridSpec":
        return GridSpec((self.origin[0] + t[0], self.origin[1] + t[1]), self.h, self.nx, self.ny)

    def to_dict(self):
        return {"origin": list(self.origin), "h": self.h, "nx": self.nx, "ny": self.ny}


def auto_grid(nuclei: NucleiSet, cells: int | None = None, h: float | None = None,
              pad: float | None = None) -> GridSpec:
    """Grid around the nuclei bounding box, padded by 2 sqrt(K/pi) by default.

    Either ``cells`` (cells along the longer side) or ``h`` fixes the spacing;
    the default resolves the unit-area disk with 24 cells across.
    """
    K = nuclei.K
    if pad is None:
        pad = 2.0 * math.sqrt(K / math.pi)
    lo = nuclei.positions.min(axis=0) - pad
    hi = nuclei.positions.max(axis=0) + pad
    width, height = hi - lo
    if h is None:
        h = (2.0 * UNIT_DISK_RADIUS / 24) if cells is None else max(width, height) / cells
    nx = int(math.ceil(width / h - 1e-9))
    ny = int(math.ceil(height / h - 1e-9))
    # center the (slightly larger) grid on the padded box
    origin = ((lo[0] + hi[0] - nx * h) / 2.0, (lo[1] + hi[1] - ny * h) / 2.0)
    return GridSpec(origin, h, nx, ny)


def check_grid(nuclei: NucleiSet, grid: GridSpec, pad: float | None = None):
    if 2.0 * UNIT_DISK_RADIUS / grid.h < 16 - 1e-9:
        raise ValueError(f"grid too coarse: unit-area disk spans {2 * UNIT_DISK_RADIUS / grid.h:.1f} "
                         "cells, need >= 16")
    if pad is None:
        pad = 2.0 * math.sqrt(nuclei.K / math.pi)
    if not np.all(grid.contains(nuclei.positions, margin=pad * (1 - 1e-9))):
        raise ValueError("nuclei outside the grid domain or padding below 2 sqrt(K/pi)")


@dataclass(frozen=True)
class GridField:
    grid: GridSpec
    values: np.ndarray
    role: str = "sigma"

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid field has non-finite values")
        if self.role == "sigma" and (vals.min() < -1e-12 or vals.max() > 1 + 1e-12):
            raise ValueError("sigma values must lie in [0, 1]")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.grid.h ** 2)

    def to_dict(self, payload="base64"):
        header = {"role": self.role, **self.grid.to_dict(), "order": "row-major [iy, ix]",
                  "dtype": "float64-le"}
        if payload == "base64":
            raw = np.ascontiguousarray(self.values, dtype="<f8").tobytes()
            header["payload"] = base64.b64encode(raw).decode("ascii")
        else:
            header["values"] = self.values.ravel().tolist()
        return header

    @classmethod
    def from_dict(cls, d):
        grid = GridSpec(tuple(d["origin"]), d["h"], d["nx"], d["ny"])
        if "payload" in d:
            vals = np.frombuffer(base64.b64decode(d["payload"]), dtype="<f8")
        else:
            vals = np.asarray(d["values"], dtype=float)
        return cls(grid, vals.reshape(grid.shape), d.get("role", "sigma"))


# -- potentials ----------------------------------------------------------------

def disk_log_potential(d, mass=1.0, radius=None):
    """Potential int log|x - y| rho(y) dy of a uniform disk, at distance d from its center.

    Outside the disk this is ``mass * log d`` (Newton's theorem).
    """
    if radius is None:
        radius = math.sqrt(mass / math.pi)
    d = np.asarray(d, dtype=float)
    inner = mass * (math.log(radius) - (radius ** 2 - d ** 2) / (2.0 * radius ** 2))
    with np.errstate(divide="ignore"):
        outer = mass * np.log(d)
    return np.where(d < radius, inner, outer)


def single_nucleus_phi(d):
    """Exact TF potential of one nucleus at distance d (zero outside the unit-area disk)."""
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore"):
        phi = -np.log(d) + disk_log_potential(d, 1.0)
    return np.where(d >= UNIT_DISK_RADIUS, 0.0, phi)


def _cell_disk_radius(h):
    return h / math.sqrt(math.pi)


def nuclear_potential(nuclei: NucleiSet, grid: GridSpec) -> GridField:
    X, Y = grid.centers()
    rho = _cell_disk_radius(grid.h)
    V = np.zeros(grid.shape)
    for (px, py) in nuclei.positions:
        d = np.hypot(X - px, Y - py)
        # equal-area disk average near the singularity; agrees with the point value outside it
        V -= disk_log_potential(d, 1.0, rho)
    return GridField(grid, V, "phi")


@functools.lru_cache(maxsize=32)
def _kernel_fft(nx: int, ny: int, h: float):
    ix = np.arange(2 * nx)
    iy = np.arange(2 * ny)
    ix = np.where(ix < nx, ix, ix - 2 * nx)
    iy = np.where(iy < ny, iy, iy - 2 * ny)
    DX, DY = np.meshgrid(ix, iy)
    r = h * np.hypot(DX, DY)
    r[0, 0] = 1.0
    kern = h * h * np.log(r)
    rho = _cell_disk_radius(h)
    kern[0, 0] = h * h * (math.log(rho) - 0.5)
    return np.fft.rfft2(kern)


def _log_convolve(values: np.ndarray, h: float) -> np.ndarray:
    ny, nx = values.shape
    kf = _kernel_fft(nx, ny, float(h))
    out = np.fft.irfft2(np.fft.rfft2(values, s=(2 * ny, 2 * nx)) * kf, s=(2 * ny, 2 * nx))
    return out[:ny, :nx]


def log_convolution(sigma: GridField) -> GridField:
    """Potential int log|x - y| sigma(y) dy at every cell center."""
    return GridField(sigma.grid, _log_convolve(np.asarray(sigma.values), sigma.grid.h), "phi")


def log_potential_at(points, sigma: GridField) -> np.ndarray:
    """Direct quadrature of int log|x - y| sigma(y) dy at arbitrary points."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    X, Y = sigma.grid.centers()
    mask = sigma.values > 0
    cx, cy, w = X[mask], Y[mask], sigma.values[mask] * sigma.grid.h ** 2
    rho = _cell_disk_radius(sigma.grid.h)
    out = np.empty(len(pts))
    for k, (px, py) in enumerate(pts):
        d = np.hypot(cx - px, cy - py)
        out[k] = float(np.sum(disk_log_potential(d, 1.0, rho) * w))
    return out


def nuclear_potential_at(points, nuclei: NucleiSet) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    d = np.linalg.norm(pts[:, None, :] - nuclei.positions[None, :, :], axis=2)
    with np.errstate(divide="ignore"):
        return -np.log(d).sum(axis=1)


# -- projection and solver ------------------------------------------------------

def project_box_mass(y: np.ndarray, target: float, h: float, tol: float = 1e-13):
    """Euclidean projection onto {0 <= s <= 1, h^2 sum s = target}.

    The projection is clip(y - shift, 0, 1); the shift is found by bisection.
    Returns (projected array, shift).
    """
    n_target = target / (h * h)
    if n_target > y.size:
        raise ValueError("mass target exceeds grid capacity")
    lo = float(y.min()) - 1.0
    hi = float(y.max())
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        m = np.clip(y - mid, 0.0, 1.0).sum()
        if m > n_target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, abs(mid)):
            break
    shift = 0.5 * (lo + hi)
    s = np.clip(y - shift, 0.0, 1.0)
    # remove the last bit of bisection error on the free cells
    free = (s > 0) & (s < 1)
    if free.any():
        s[free] += (n_target - s.sum()) / free.sum()
        np.clip(s, 0.0, 1.0, out=s)
    return s, shift


def _hessian_bound(grid: GridSpec, iterations: int = 40, seed: int = 0) -> float:
    """Largest eigenvalue of -conv restricted to zero-mass densities (power iteration)."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(grid.shape)
    v -= v.mean()
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iterations):
        w = -_log_convolve(v, grid.h)
        w -= w.mean()
        lam = float(np.vdot(v, w))
        v = w / np.linalg.norm(w)
    return lam


def _energy(sigma, V, phi, h):
    # E = h^2 [ -V.s - 1/2 s.(conv s) ] with conv s = phi - V
    return -0.5 * h * h * float(np.vdot(sigma, V + phi))


@dataclass(frozen=True)
class ScreeningRegion:
    grid: GridSpec
    mask: np.ndarray
    boundary: list = field(default_factory=list)

    @property
    def area(self) -> float:
        return float(self.mask.sum()) * self.grid.h ** 2

    def contains(self, points) -> np.ndarray:
        iy, ix = self.grid.cell_index(points)
        out = np.zeros(len(iy), dtype=bool)
        ok = ix >= 0
        out[ok] = self.mask[iy[ok], ix[ok]]
        return out

    def signed_depth(self, points) -> np.ndarray:
        """Approximate distance to the region boundary: > 0 inside, < 0 outside."""
        inside = ndimage.distance_transform_edt(self.mask) * self.grid.h
        outside = ndimage.distance_transform_edt(~self.mask) * self.grid.h
        iy, ix = self.grid.cell_index(points)
        depth = np.full(len(iy), -np.inf)
        ok = ix >= 0
        depth[ok] = np.where(self.mask[iy[ok], ix[ok]],
                             inside[iy[ok], ix[ok]] - 0.5 * self.grid.h,
                             -(outside[iy[ok], ix[ok]] - 0.5 * self.grid.h))
        return depth

    def boundary_points(self, minimum: int = 64) -> np.ndarray:
        pts = np.concatenate(self.boundary) if self.boundary else np.zeros((0, 2))
        if len(pts) >= minimum or len(pts) == 0:
            return pts
        out = []
        for line in self.boundary:
            seg = np.diff(line, axis=0)
            s = np.concatenate([[0.0], np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))])
            n = max(4, int(math.ceil(minimum * len(line) / len(pts))))
            t = np.linspace(0.0, s[-1], n, endpoint=False)
            out.append(np.stack([np.interp(t, s, line[:, 0]), np.interp(t, s, line[:, 1])], axis=1))
        return np.concatenate(out)


def _region_from_sigma(sigma: np.ndarray, grid: GridSpec) -> ScreeningRegion:
    mask = sigma >= 0.5
    padded = np.pad(sigma, 1)
    lines = []
    for c in measure.find_contours(padded, 0.5):
        rows, cols = c[:, 0] - 1.0, c[:, 1] - 1.0
        x = grid.origin[0] + (cols + 0.5) * grid.h
        y = grid.origin[1] + (rows + 0.5) * grid.h
        lines.append(np.stack([x, y], axis=1))
    mask.flags.writeable = False
    return ScreeningRegion(grid, mask, lines)


def _boundary_band(mask: np.ndarray, width: int) -> np.ndarray:
    st = ndimage.generate_binary_structure(2, 2)
    grown = ndimage.binary_dilation(mask, st, iterations=width)
    shrunk = ndimage.binary_erosion(mask, st, iterations=width, border_value=0)
    return grown & ~shrunk


@dataclass(frozen=True)
class TFSolution:
    nuclei: NucleiSet
    sigma: GridField
    phi: GridField
    region: ScreeningRegion
    energy: float
    iterations: int
    multiplier: float
    eps_grid: float
    energy_history: np.ndarray

    @property
    def grid(self) -> GridSpec:
        return self.sigma.grid

    def phi_at(self, points) -> np.ndarray:
        return nuclear_potential_at(points, self.nuclei) + log_potential_at(points, self.sigma)

    def complementarity_residual(self) -> float:
        """h^2 sum [ s max(-Phi, 0) + (1 - s) max(Phi, 0) outside the region ]."""
        s = self.sigma.values
        phi = self.phi.values
        outside = ~self.region.mask
        r = s * np.maximum(-phi, 0.0) + (1.0 - s) * np.where(outside, np.maximum(phi, 0.0), 0.0)
        return float(r.sum() * self.grid.h ** 2)

    def exterior_phi_max(self) -> float:
        outside = ~self.region.mask
        return float(np.abs(self.phi.values[outside]).max()) if outside.any() else 0.0

    def summary(self) -> dict:
        return {"K": self.nuclei.K, "area": self.region.area, "energy": self.energy,
                "iterations": self.iterations, "multiplier": self.multiplier,
                "eps_grid": self.eps_grid, "mass": self.sigma.mass,
                "complementarity_residual": self.complementarity_residual(),
                "exterior_phi_max": self.exterior_phi_max(), "grid": self.grid.to_dict()}


def tf_solve(nuclei: NucleiSet, grid: GridSpec | None = None, *, max_iterations: int = 5000,
             rtol: float = 1e-9, patience: int = 10, check: bool = True) -> TFSolution:
    """Minimize the discretized TF functional by accelerated projected gradient.

    Steps use the exact Lipschitz bound of the quadratic form on zero-mass
    perturbations, and any momentum step that would raise the energy is
    replaced by a plain projected-gradient step, so the energy sequence is
    non-increasing.  Convergence means the relative energy change stayed
    below ``rtol`` for ``patience`` consecutive iterations.
    """
    if grid is None:
        grid = auto_grid(nuclei)
    if check:
        check_grid(nuclei, grid)
    K = nuclei.K
    h = grid.h
    V = nuclear_potential(nuclei, grid).values
    tau = 1.0 / _hessian_bound(grid)

    # start from the union of unit-area disks around each nucleus
    X, Y = grid.centers()
    start = np.zeros(grid.shape)
    for (px, py) in nuclei.positions:
        start = np.maximum(start, (np.hypot(X - px, Y - py) < UNIT_DISK_RADIUS).astype(float))
    sigma, shift = project_box_mass(start + 1e-3 * V, K, h)
    phi = V + _log_convolve(sigma, h)
    energy = _energy(sigma, V, phi, h)
    history = [energy]

    prev_sigma, prev_phi = sigma, phi
    t_mom = 1.0
    converged = False
    quiet = 0
    it = 0
    for it in range(1, max_iterations + 1):
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))
        beta = (t_mom - 1.0) / t_next
        y = sigma + beta * (sigma - prev_sigma)
        phi_y = phi + beta * (phi - prev_phi)
        cand, cand_shift = project_box_mass(y + tau * phi_y, K, h)
        cand_phi = V + _log_convolve(cand, h)
        cand_energy = _energy(cand, V, cand_phi, h)
        if cand_energy > energy:
            cand, cand_shift = project_box_mass(sigma + tau * phi, K, h)
            cand_phi = V + _log_convolve(cand, h)
            cand_energy = _energy(cand, V, cand_phi, h)
            t_next = 1.0
        prev_sigma, prev_phi = sigma, phi
        change = energy - cand_energy
        if cand_energy <= energy:
            sigma, phi, energy, shift = cand, cand_phi, cand_energy, cand_shift
        t_mom = t_next
        history.append(energy)
        quiet = quiet + 1 if abs(change) <= rtol * abs(energy) else 0
        if quiet >= patience:
            converged = True
            break

    if not converged:
        raise TFConvergenceError(
            f"TF solve did not reach relative energy change {rtol:g} in {max_iterations} iterations",
            {"K": K, "energy": energy, "last_change": history[-2] - history[-1] if len(history) > 1 else None,
             "grid": grid.to_dict()})

    region = _region_from_sigma(sigma, grid)
    gy, gx = np.gradient(phi, h)
    band = _boundary_band(region.mask, 2)
    for (px, py) in nuclei.positions:
        band &= np.hypot(X - px, Y - py) > 2.0 * h
    grad = np.hypot(gx, gy)[band]
    eps = h * float(grad.max()) if grad.size else h
    sigma = np.clip(sigma, 0.0, 1.0)
    return TFSolution(nuclei, GridField(grid, sigma, "sigma"), GridField(grid, phi, "phi"), region,
                      energy, it, shift / tau, eps, np.asarray(history))


# -- region diagnostics ---------------------------------------------------------

def region_properties(region: ScreeningRegion, nuclei: NucleiSet,
                      larger: ScreeningRegion | None = None) -> dict:
    """Area against K, connectivity, and (optionally) containment in ``larger``.

    Containment is checked on the cells of ``region`` eroded by one cell, so
    one-cell boundary jitter is tolerated; the two regions may live on
    different grids.
    """
    st = ndimage.generate_binary_structure(2, 1)
    _, n_components = ndimage.label(region.mask, st)
    # holes: complement components that do not touch the padded border
    outside, n_out = ndimage.label(np.pad(~region.mask, 1, constant_values=True), st)
    out = {"K": nuclei.K, "area": region.area, "area_error": region.area - nuclei.K,
           "relative_area_error": (region.area - nuclei.K) / nuclei.K,
           "n_components": int(n_components), "n_holes": int(n_out - 1),
           "simply_connected": bool(n_components == 1 and n_out == 1)}
    if larger is not None:
        core = ndimage.binary_erosion(region.mask, st, border_value=0)
        X, Y = region.grid.centers()
        pts = np.stack([X[core], Y[core]], axis=1)
        missing = ~larger.contains(pts) if len(pts) else np.zeros(0, dtype=bool)
        out["containment_checked"] = int(len(pts))
        out["containment_violations"] = int(missing.sum())
    return out


def radial_deviation(region: ScreeningRegion, center, radius: float = UNIT_DISK_RADIUS) -> float:
    """Largest | |p - center| - radius | over the boundary polylines."""
    pts = region.boundary_points(0)
    if len(pts) == 0:
        return math.inf
    r = np.hypot(pts[:, 0] - center[0], pts[:, 1] - center[1])
    return float(np.abs(r - radius).max())


@dataclass(frozen=True)
class BinaryReport:
    n_intermediate: int
    n_occupied: int
    n_boundary: int
    coefficient: float

    @property
    def intermediate_fraction(self) -> float:
        return self.n_intermediate / self.n_occupied if self.n_occupied else 0.0

    @property
    def bound(self) -> float:
        return self.coefficient * self.n_boundary / self.n_occupied if self.n_occupied else 0.0

    @property
    def passed(self) -> bool:
        return self.intermediate_fraction <= self.bound

    def to_dict(self):
        return {"n_intermediate": self.n_intermediate, "n_occupied": self.n_occupied,
                "n_boundary": self.n_boundary, "intermediate_fraction": self.intermediate_fraction,
                "bound": self.bound, "passed": self.passed}


def tf_binary_check(sigma: GridField, coefficient: float = 1.0, low: float = 0.05,
                    high: float = 0.95) -> BinaryReport:
    """Share of occupied cells with intermediate values, against a perimeter-sized allowance.

    Occupied cells have sigma > low; boundary cells are those of {sigma >= 1/2}
    with a 4-neighbor outside the set (the grid edge counts as outside).
    """
    s = sigma.values
    mask = s >= 0.5
    st = ndimage.generate_binary_structure(2, 1)
    boundary = mask & ~ndimage.binary_erosion(mask, st, border_value=0)
    return BinaryReport(int(((s > low) & (s < high)).sum()), int((s > low).sum()),
                        int(boundary.sum()), coefficient)
