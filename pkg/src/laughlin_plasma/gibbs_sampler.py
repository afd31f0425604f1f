"""Metropolis sampling of the plasma Gibbs measure and one-particle density estimates.

Chains make single-particle Gaussian moves in sampling coordinates.  The step
size is tuned during burn-in only; afterwards the kernel is fixed and exactly
stationary.  Error bars come from the spread between independent chains.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .states import Configuration, PlasmaParams, Prefactor, SingularConfigurationError

log = logging.getLogger(__name__)

ACCEPTANCE_WINDOW = (0.05, 0.9)


class ResolutionError(ValueError):
    """Averaging disks are too small for the histogram cells."""


class MixingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ChainSettings:
    sweeps: int = 20_000
    burn_in: int = 2_000
    proposal_sigma: float = 0.05
    seed: int = 0
    target_acceptance: float = 0.35
    n_chains: int = 4
    cell_size: float | None = None
    half_width: float | None = None
    snapshot_every: int = 0
    threads: int = 1
    block_sweeps: int = 500
    adapt_every: int = 20

    def __post_init__(self):
        if self.sweeps < 1 or self.burn_in < 1:
            raise ValueError("sweeps and burn_in must be positive")
        if self.burn_in >= self.sweeps:
            raise ValueError("burn_in must be smaller than sweeps")
        if not self.proposal_sigma > 0:
            raise ValueError("proposal_sigma must be positive")
        if not 0.0 < self.target_acceptance < 1.0:
            raise ValueError("target_acceptance must lie in (0, 1)")
        if self.n_chains < 1:
            raise ValueError("n_chains must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def production_sweeps(self) -> int:
        return self.sweeps - self.burn_in

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "sweeps", "burn_in", "proposal_sigma", "seed", "target_acceptance", "n_chains",
            "cell_size", "half_width", "snapshot_every", "block_sweeps", "adapt_every")}


@dataclass(frozen=True)
class DensityHistogram:
    """Per-chain position counts on a square grid in sampling coordinates.

    ``chain_counts[c, iy, ix]`` counts samples of chain c in cell (iy, ix);
    samples falling off the grid are counted in ``chain_outside``.
    """

    origin: tuple
    cell: float
    chain_counts: np.ndarray
    chain_outside: np.ndarray
    chain_samples: np.ndarray

    @property
    def shape(self):
        return self.chain_counts.shape[1:]

    @property
    def n_chains(self) -> int:
        return self.chain_counts.shape[0]

    @property
    def counts(self) -> np.ndarray:
        return self.chain_counts.sum(axis=0)

    @property
    def total(self) -> float:
        return float(self.chain_samples.sum())

    @property
    def density(self) -> np.ndarray:
        """Estimate of the scaled one-particle density (integrates to 1 with the outside mass)."""
        return self.counts / (self.total * self.cell ** 2)

    @property
    def chain_density(self) -> np.ndarray:
        return self.chain_counts / (self.chain_samples[:, None, None] * self.cell ** 2)

    @property
    def stderr(self) -> np.ndarray:
        return chain_stderr(self.chain_density)

    @property
    def outside_fraction(self) -> float:
        return float(self.chain_outside.sum()) / self.total

    def normalization(self) -> float:
        return float(self.density.sum() * self.cell ** 2) + self.outside_fraction

    def centers(self):
        ny, nx = self.shape
        xs = self.origin[0] + self.cell * (np.arange(nx) + 0.5)
        ys = self.origin[1] + self.cell * (np.arange(ny) + 0.5)
        return np.meshgrid(xs, ys)

    def radius_containing(self, fraction: float = 0.999) -> float:
        X, Y = self.centers()
        r = np.hypot(X, Y).ravel()
        w = self.counts.ravel()
        order = np.argsort(r)
        cum = np.cumsum(w[order]) / max(self.total, 1.0)
        k = int(np.searchsorted(cum, fraction))
        return float(r[order][min(k, len(r) - 1)])

    @classmethod
    def from_density(cls, density: np.ndarray, origin, cell: float, samples: float = 1e6,
                     n_chains: int = 1) -> "DensityHistogram":
        """Noise-free histogram with the given density; identical across chains."""
        density = np.asarray(density, dtype=float)
        counts = density * cell ** 2 * samples
        inside = counts.sum()
        chain_counts = np.repeat(counts[None], n_chains, axis=0)
        return cls(tuple(origin), cell, chain_counts,
                   np.full(n_chains, max(samples - inside, 0.0)), np.full(n_chains, float(samples)))

    def to_dict(self) -> dict:
        ny, nx = self.shape
        return {
            "geometry": {"origin": list(self.origin), "cell": self.cell, "nx": nx, "ny": ny,
                         "coordinates": "sampling (z = w / sqrt(N))",
                         "order": "row-major [iy, ix]"},
            "n_chains": self.n_chains,
            "total_samples": self.total,
            "outside_fraction": self.outside_fraction,
            "density": self.density.ravel().tolist(),
            "stderr": self.stderr.ravel().tolist(),
            "chain_counts": self.chain_counts.reshape(self.n_chains, -1).tolist(),
            "chain_outside": self.chain_outside.tolist(),
            "chain_samples": self.chain_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DensityHistogram":
        g = d["geometry"]
        counts = np.asarray(d["chain_counts"], dtype=float).reshape(-1, g["ny"], g["nx"])
        return cls(tuple(g["origin"]), g["cell"], counts,
                   np.asarray(d["chain_outside"], dtype=float),
                   np.asarray(d["chain_samples"], dtype=float))


def chain_stderr(per_chain: np.ndarray) -> np.ndarray:
    """Standard error of the mean from the spread over the leading (chain) axis."""
    per_chain = np.asarray(per_chain, dtype=float)
    c = per_chain.shape[0]
    if c < 2:
        return np.zeros(per_chain.shape[1:])
    return per_chain.std(axis=0, ddof=1) / math.sqrt(c)


@dataclass
class ChainResult:
    index: int
    acceptance_rate: float
    burn_in_acceptance: float
    proposal_sigma: float
    r2_series: np.ndarray
    final_positions: np.ndarray
    snapshots: np.ndarray
    warnings: list = field(default_factory=list)


@dataclass
class SamplerRun:
    params: PlasmaParams
    prefactor: Prefactor
    settings: ChainSettings
    histogram: DensityHistogram
    chains: list

    @property
    def warnings(self) -> list:
        return [w for c in self.chains for w in c.warnings]

    @property
    def acceptance_rates(self):
        return [c.acceptance_rate for c in self.chains]

    def snapshots(self) -> np.ndarray:
        return np.concatenate([c.snapshots for c in self.chains]) if self.chains else np.zeros((0, 0, 2))


# -- Metropolis pieces ----------------------------------------------------------

def delta_log_weight(config: Configuration, pf: Prefactor, particle_index: int, new_position) -> float:
    """log weight after moving one particle minus log weight before, in O(N)."""
    code, holes, mult, c_re, c_im = pf.kernel_args()
    q = np.asarray(new_position, dtype=float)
    delta, singular = _kernels.delta_log_weight(
        np.ascontiguousarray(config.points), int(particle_index), float(q[0]), float(q[1]),
        float(config.params.ell), code, np.ascontiguousarray(holes, dtype=float),
        np.ascontiguousarray(mult, dtype=float), c_re, c_im)
    if singular:
        raise SingularConfigurationError("move lands on another particle or a quasi-hole")
    return delta


def log_acceptance_probability(log_weight_old: float, log_weight_new: float) -> float:
    """Metropolis acceptance for a symmetric proposal, in log space."""
    return min(0.0, log_weight_new - log_weight_old)


def log_proposal_density(before: np.ndarray, after: np.ndarray, sigma: float) -> float:
    """Log density of the single-particle Gaussian proposal taking ``before`` to ``after``.

    A uniformly chosen particle is displaced by an isotropic Gaussian; the
    configurations must differ in exactly one particle.
    """
    moved = np.flatnonzero(np.any(before != after, axis=1))
    if len(moved) != 1:
        return -math.inf
    d = after[moved[0]] - before[moved[0]]
    n = len(before)
    return -math.log(n) - math.log(2 * math.pi * sigma ** 2) - float(d @ d) / (2 * sigma ** 2)


def _initial_positions(rng, params: PlasmaParams, pf: Prefactor) -> np.ndarray:
    n = params.n_particles
    r = params.droplet_radius_scaled * np.sqrt(rng.random(n))
    t = 2 * math.pi * rng.random(n)
    return np.stack([r * np.cos(t), r * np.sin(t)], axis=1)


def _histogram_geometry(params: PlasmaParams, pf: Prefactor, settings: ChainSettings):
    cell = settings.cell_size or 2.0 * params.droplet_radius_scaled / 128
    half = settings.half_width or (1.3 * pf.extent_hint(params) + 0.2 * params.droplet_radius_scaled)
    n = int(math.ceil(2 * half / cell))
    return (-0.5 * n * cell, -0.5 * n * cell), cell, n


def _run_single(index, seed_seq, params, pf, settings, geometry):
    (x0, y0), cell, ncell = geometry
    rng = np.random.default_rng(seed_seq)
    n = params.n_particles
    code, holes, mult, c_re, c_im = pf.kernel_args()
    holes = np.ascontiguousarray(holes, dtype=float)
    mult = np.ascontiguousarray(mult, dtype=float)
    ell = float(params.ell)
    pos = _initial_positions(rng, params, pf)
    counts = np.zeros((ncell, ncell), dtype=np.int64)
    outside = np.zeros(1, dtype=np.int64)
    scratch = np.zeros(1)
    sigma = settings.proposal_sigma

    burn_acc = 0
    done = 0
    while done < settings.burn_in:
        k = min(settings.adapt_every, settings.burn_in - done)
        normals = rng.standard_normal((k, n, 2))
        uniforms = rng.random((k, n))
        a = _kernels.metropolis_block(pos, sigma, ell, code, holes, mult, c_re, c_im, normals,
                                      uniforms, False, counts, outside, x0, y0, cell, scratch, 0)
        burn_acc += a
        rate = a / (k * n)
        sigma *= math.exp(min(max(rate - settings.target_acceptance, -0.5), 0.5))
        done += k

    prod = settings.production_sweeps
    r2 = np.zeros(prod)
    snaps = []
    accepted = 0
    done = 0
    every = settings.snapshot_every
    while done < prod:
        k = min(settings.block_sweeps, prod - done)
        if every:
            # stop blocks on snapshot boundaries
            k = min(k, every - (done % every))
        normals = rng.standard_normal((k, n, 2))
        uniforms = rng.random((k, n))
        accepted += _kernels.metropolis_block(pos, sigma, ell, code, holes, mult, c_re, c_im,
                                              normals, uniforms, True, counts, outside, x0, y0,
                                              cell, r2, done)
        done += k
        if every and done % every == 0:
            snaps.append(pos.copy())

    rate = accepted / (prod * n)
    notes = []
    lo, hi = ACCEPTANCE_WINDOW
    if not lo <= rate <= hi:
        notes.append(f"mixing failure: chain {index} acceptance {rate:.3f} outside [{lo}, {hi}]")
    return ChainResult(index, rate, burn_acc / (settings.burn_in * n), sigma, r2, pos.copy(),
                       np.array(snaps).reshape(-1, n, 2), notes), counts, int(outside[0])


def run_chain(params: PlasmaParams, pf: Prefactor, settings: ChainSettings) -> SamplerRun:
    """Run ``settings.n_chains`` independent chains and merge their histograms.

    Output is a deterministic function of (params, pf, settings), whatever
    the thread count.
    """
    geometry = _histogram_geometry(params, pf, settings)
    seeds = np.random.SeedSequence(settings.seed).spawn(settings.n_chains)
    jobs = [(i, seeds[i], params, pf, settings, geometry) for i in range(settings.n_chains)]
    if settings.threads > 1 and settings.n_chains > 1:
        with ThreadPoolExecutor(max_workers=settings.threads) as pool:
            results = list(pool.map(lambda a: _run_single(*a), jobs))
    else:
        results = [_run_single(*a) for a in jobs]

    chains = [r[0] for r in results]
    chain_counts = np.stack([r[1] for r in results]).astype(float)
    chain_outside = np.array([r[2] for r in results], dtype=float)
    per_chain = float(settings.production_sweeps * params.n_particles)
    hist = DensityHistogram(geometry[0], geometry[1], chain_counts, chain_outside,
                            np.full(settings.n_chains, per_chain))
    run = SamplerRun(params, pf, settings, hist, chains)
    for note in run.warnings:
        warnings.warn(note, MixingWarning, stacklevel=2)
    return run


# -- density post-processing ----------------------------------------------------

@dataclass(frozen=True)
class DiskAverage:
    center: tuple
    radius: float
    mean: float
    stderr: float
    bound: float
    tolerance: float = 0.0

    @property
    def exceeds(self) -> bool:
        # 1e-12 absorbs round-off when the mean sits exactly on the bound
        return self.mean - 2.0 * self.stderr > self.bound * (1.0 + self.tolerance) * (1.0 + 1e-12)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "radius": self.radius, "mean": self.mean,
                "stderr": self.stderr, "bound": self.bound, "tolerance": self.tolerance,
                "exceeds": self.exceeds}


def disk_averages(hist: DensityHistogram, params: PlasmaParams, alpha: float,
                  tolerance: float = 0.0, tile_radius: float | None = None) -> list[DiskAverage]:
    """Mean density over disks of physical radius N^alpha tiling the droplet.

    Disk centers sit on a square lattice of spacing half a radius, covering
    |z| <= R + 2 r where R is the larger of sqrt(ell) and the radius holding
    99.9% of the sampled mass.
    """
    n = params.n_particles
    r = n ** (alpha - 0.5)
    if r < 2 * hist.cell:
        raise ResolutionError(f"disk radius {r:.4g} is below two histogram cells ({hist.cell:.4g})")
    if tile_radius is None:
        tile_radius = max(params.droplet_radius_scaled, hist.radius_containing(0.999))
    reach = tile_radius + 2 * r
    X, Y = hist.centers()
    chain_density = hist.chain_density
    pooled = hist.density
    bound = params.plateau_density
    step = r / 2
    k = int(math.floor(reach / step))
    out = []
    for iy in range(-k, k + 1):
        for ix in range(-k, k + 1):
            cx, cy = ix * step, iy * step
            if math.hypot(cx, cy) > reach:
                continue
            sel = (X - cx) ** 2 + (Y - cy) ** 2 <= r * r
            if not sel.any():
                continue
            mean = float(pooled[sel].mean())
            se = float(chain_stderr(chain_density[:, sel].mean(axis=1)))
            out.append(DiskAverage((cx, cy), r, mean, se, bound, tolerance))
    return out


@dataclass(frozen=True)
class RadialProfile:
    edges: np.ndarray
    density: np.ndarray
    stderr: np.ndarray

    @property
    def radius(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def radial_profile(hist: DensityHistogram, n_bins: int = 64, r_max: float | None = None) -> RadialProfile:
    X, Y = hist.centers()
    r = np.hypot(X, Y)
    if r_max is None:
        r_max = float(min(-hist.origin[0], -hist.origin[1]))
    edges = np.linspace(0.0, r_max, n_bins + 1)
    idx = np.digitize(r.ravel(), edges) - 1
    ok = (idx >= 0) & (idx < n_bins)
    ncell = np.bincount(idx[ok], minlength=n_bins).astype(float)
    cd = hist.chain_density.reshape(hist.n_chains, -1)
    sums = np.stack([np.bincount(idx[ok], weights=c[ok], minlength=n_bins) for c in cd])
    with np.errstate(invalid="ignore", divide="ignore"):
        per_chain = sums / ncell
        pooled = np.bincount(idx[ok], weights=hist.density.ravel()[ok], minlength=n_bins) / ncell
    return RadialProfile(edges, pooled, chain_stderr(per_chain))


def angular_modes(run: SamplerRun, m_values=(1, 2, 3, 4), r_min: float = 0.0,
                  r_max: float | None = None):
    """Angular Fourier coefficients of the density on an annulus, from chain snapshots.

    Returns a list of (m, amplitude, stderr) with amplitude = |<e^{i m theta}>|
    over particles in the annulus; stderr comes from the chain spread of the
    real and imaginary parts.
    """
    if r_max is None:
        r_max = run.params.droplet_radius_scaled
    out = []
    per_chain = []
    for c in run.chains:
        if len(c.snapshots) == 0:
            raise ValueError("angular_modes needs snapshots (set snapshot_every)")
        p = c.snapshots.reshape(-1, 2)
        rr = np.hypot(p[:, 0], p[:, 1])
        sel = (rr >= r_min) & (rr <= r_max)
        th = np.arctan2(p[sel, 1], p[sel, 0])
        per_chain.append([np.mean(np.exp(1j * m * th)) for m in m_values])
    per_chain = np.array(per_chain)
    mean = per_chain.mean(axis=0)
    se = np.hypot(chain_stderr(per_chain.real), chain_stderr(per_chain.imag))
    for k, m in enumerate(m_values):
        out.append((m, float(abs(mean[k])), float(se[k])))
    return out


def integrated_autocorrelation(series) -> float:
    """Integrated autocorrelation time by Geyer's initial monotone sequence.

    ``tau = 1 + 2 sum_k rho_k``; for white noise tau = 1.  Raises on series
    shorter than 1000 samples or with zero variance.
    """
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n < 1000:
        raise ValueError(f"series too short for an autocorrelation estimate ({n} < 1000)")
    x = x - x.mean()
    var = float(x @ x) / n
    if not var > 0 or not math.isfinite(var):
        raise ValueError("autocorrelation undefined for a constant series")
    m = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(x, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n] / n
    rho = acov / acov[0]
    # pair sums Gamma_k = rho_{2k} + rho_{2k+1}, truncated at the first
    # non-positive one and made monotone
    npairs = (n - 1) // 2
    gam = rho[0:2 * npairs:2] + rho[1:2 * npairs:2]
    pos = np.flatnonzero(gam <= 0)
    cut = int(pos[0]) if len(pos) else npairs
    gam = np.minimum.accumulate(gam[:cut])
    return float(-1.0 + 2.0 * gam.sum())


def series_mean_stderr(per_chain_series: list) -> tuple[float, float]:
    """Mean of per-chain series and a conservative error bar.

    The error bar is the larger of the inter-chain standard error and the
    autocorrelation-corrected error of the pooled series.
    """
    means = np.array([np.mean(s) for s in per_chain_series])
    pooled = np.concatenate(per_chain_series)
    mean = float(pooled.mean())
    se_chain = float(chain_stderr(means)) if len(means) > 1 else 0.0
    try:
        taus = [integrated_autocorrelation(s) for s in per_chain_series]
        tau = max(1.0, float(np.mean(taus)))
        se_tau = math.sqrt(float(pooled.var()) * tau / len(pooled))
    except ValueError:
        se_tau = 0.0
    return mean, max(se_chain, se_tau)
