"""Minimizing configurations of the scaled point Hamiltonian and exclusion checks.

    H(X) = pi/2 sum |x_i|^2 - sum_{i<j} log|x_i - x_j| + W(X)

The background has unit density, so a minimizer fills a disk of radius
sqrt(N/pi).  Checks provided here: the minimal pair distance (at least
pi^{-1/2}), no configuration point inside the TF screening region of a
small cluster of other points, the centered-disk point counts, and the
boundary-descent mechanism behind the exclusion rule.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .states import (Configuration, PlasmaParams, Prefactor, SingularConfigurationError,
                     scaled_energy_change, scaled_gradient, scaled_hamiltonian)
from .tf_model import UNIT_DISK_RADIUS, NucleiSet, auto_grid, tf_solve

GEOMETRIC_SLACK = 0.02


@dataclass(frozen=True)
class MinimizeSettings:
    restarts: int = 8
    max_iterations: int = 50_000
    gradient_tolerance: float = 1e-8
    armijo: float = 1e-4
    backtrack: float = 0.5
    initial_step: float = 0.05
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.restarts < 1 or self.max_iterations < 1:
            raise ValueError("restarts and max_iterations must be positive")
        if not (self.gradient_tolerance > 0 and self.initial_step > 0):
            raise ValueError("tolerances and step sizes must be positive")
        if not (0 < self.armijo < 1 and 0 < self.backtrack < 1):
            raise ValueError("armijo and backtrack factors must lie in (0, 1)")

    def to_dict(self):
        return {k: getattr(self, k) for k in ("restarts", "max_iterations", "gradient_tolerance",
                                              "armijo", "backtrack", "initial_step", "seed")}


@dataclass(frozen=True)
class DescentTrace:
    restart: int
    initial_energy: float
    energy: float
    max_gradient: float
    iterations: int
    converged: bool
    points: np.ndarray


@dataclass(frozen=True)
class MinimizerResult:
    configuration: Configuration
    energy: float
    max_gradient: float
    restart_index: int
    converged: bool
    w_ext: Prefactor | None = None
    traces: tuple = field(default_factory=tuple)

    @property
    def points(self) -> np.ndarray:
        return self.configuration.points

    def to_dict(self) -> dict:
        return {
            "params": self.configuration.params.to_dict(),
            "w_ext": None if self.w_ext is None else self.w_ext.to_dict(),
            "points": self.points.tolist(),
            "energy": self.energy,
            "max_gradient": self.max_gradient,
            "restart_index": self.restart_index,
            "converged": self.converged,
            "restarts": [{"restart": t.restart, "initial_energy": t.initial_energy,
                          "energy": t.energy, "max_gradient": t.max_gradient,
                          "iterations": t.iterations, "converged": t.converged}
                         for t in self.traces],
        }


def _max_norm(g: np.ndarray) -> float:
    return float(np.sqrt((g * g).sum(axis=1)).max()) if len(g) else 0.0


def _descend(x: np.ndarray, params: PlasmaParams, w_ext, settings: MinimizeSettings, restart: int):
    """Gradient descent with Armijo backtracking.

    The trial step is the Barzilai-Borwein length of the previous iteration;
    a step is only accepted on sufficient decrease, so energies never rise.
    """
    ell = params.ell
    cfg = Configuration(x, params)
    e0 = energy = scaled_hamiltonian(cfg, w_ext)
    g = scaled_gradient(cfg, w_ext)
    gmax = _max_norm(g)
    step = settings.initial_step
    it = 0
    while gmax > settings.gradient_tolerance and it < settings.max_iterations:
        it += 1
        gg = float(np.sum(g * g))
        t = step
        while True:
            d = -t * g
            de = scaled_energy_change(x, d, w_ext, ell)
            if de <= -settings.armijo * t * gg:
                break
            t *= settings.backtrack
            if t < 1e-18:
                break
        if t < 1e-18:
            break
        x_new = x + d
        try:
            g_new = scaled_gradient(Configuration(x_new, params), w_ext)
        except SingularConfigurationError:
            break
        s_vec = d
        y_vec = g_new - g
        sy = float(np.sum(s_vec * y_vec))
        step = float(np.sum(s_vec * s_vec)) / sy if sy > 0 else 2.0 * t
        step = min(max(step, 1e-6), 1e3)
        x, g, energy = x_new, g_new, energy + de
        gmax = _max_norm(g)
    energy = scaled_hamiltonian(Configuration(x, params), w_ext)
    return DescentTrace(restart, e0, energy, gmax, it, gmax <= settings.gradient_tolerance, x)


def initial_configuration(rng: np.random.Generator, n: int) -> np.ndarray:
    """Gaussian points with the mean square radius of the unit-density disk of radius sqrt(N/pi)."""
    return rng.normal(scale=0.5 * math.sqrt(n / math.pi), size=(n, 2))


def minimize(params: PlasmaParams, w_ext: Prefactor | None = None,
             settings: MinimizeSettings | None = None) -> MinimizerResult:
    """Best of several gradient-descent restarts from random initial configurations."""
    settings = settings or MinimizeSettings()
    n = params.n_particles
    seeds = np.random.SeedSequence(settings.seed).spawn(settings.restarts)

    def one(r):
        rng = np.random.default_rng(seeds[r])
        while True:
            x0 = initial_configuration(rng, n)
            try:
                return _descend(x0, params, w_ext, settings, r)
            except SingularConfigurationError:
                continue

    if settings.threads > 1:
        with ThreadPoolExecutor(max_workers=settings.threads) as pool:
            traces = list(pool.map(one, range(settings.restarts)))
    else:
        traces = [one(r) for r in range(settings.restarts)]

    pool_ = [t for t in traces if t.converged] or traces
    best = min(pool_, key=lambda t: (t.energy, t.restart))
    return MinimizerResult(Configuration(best.points, params), best.energy, best.max_gradient,
                           best.restart, best.converged, w_ext, tuple(traces))


# -- geometric checks -----------------------------------------------------------

def _points(obj) -> np.ndarray:
    if isinstance(obj, MinimizerResult):
        return obj.points
    if isinstance(obj, Configuration):
        return obj.points
    return np.asarray(obj, dtype=float).reshape(-1, 2)


def min_pairwise_distance(result) -> float:
    x = _points(result)
    if len(x) < 2:
        return math.inf
    d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2))
    iu = np.triu_indices(len(x), 1)
    return float(d[iu].min())


def density_counts(result, radii, center=(0.0, 0.0)):
    """Points inside centered disks: list of (R, n(R), n(R) / (pi R^2))."""
    x = _points(result) - np.asarray(center, dtype=float)
    r = np.hypot(x[:, 0], x[:, 1])
    out = []
    for R in radii:
        n = int(np.sum(r <= R))
        out.append((float(R), n, n / (math.pi * R * R)))
    return out


def density_slack(R: float) -> float:
    return 3.0 / math.sqrt(math.pi * R * R)


def grow_cluster(x: np.ndarray, seed: int, k: int) -> list[int]:
    """Greedy cluster of k points: repeatedly add the point closest to the cluster."""
    members = [seed]
    dist = np.linalg.norm(x - x[seed], axis=1)
    dist[seed] = np.inf
    while len(members) < k:
        j = int(np.argmin(dist))
        members.append(j)
        dist = np.minimum(dist, np.linalg.norm(x - x[j], axis=1))
        dist[members] = np.inf
    return sorted(members)


@dataclass
class ExclusionReport:
    k_max: int
    slack: float
    checks: list = field(default_factory=list)
    min_margin: dict = field(default_factory=dict)

    @property
    def violations(self) -> list:
        return [c for c in self.checks if c["violation"]]

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"k_max": self.k_max, "slack": self.slack, "passed": self.passed,
                "n_checks": len(self.checks), "n_violations": len(self.violations),
                "min_margin": {str(k): v for k, v in self.min_margin.items()},
                "violations": self.violations,
                "checks": self.checks}


def exclusion_check(result, k_max: int = 2, grid_factory=None, slack: float = GEOMETRIC_SLACK,
                    solver=tf_solve) -> ExclusionReport:
    """Check that no configuration point lies in the screening region of K others.

    K = 1 is exhaustive over pairs (the screening region of one point is the
    disk of radius pi^{-1/2}).  For 2 <= K <= k_max, one greedy nearest-neighbor
    cluster is grown from every point and its screening region computed with
    the TF solver.  A point violates the rule when it lies deeper than one grid
    cell plus ``slack`` times the equivalent radius sqrt(K/pi) inside the region.
    Margins are signed distances to the region boundary (positive = outside).
    """
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    x = _points(result)
    n = len(x)
    report = ExclusionReport(k_max, slack)
    if n >= 2:
        d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2))
        np.fill_diagonal(d, np.inf)
        limit = (1.0 - slack) * UNIT_DISK_RADIUS
        for i in range(n):
            j = int(np.argmin(d[i]))
            if i > j and d[j].argmin() == i:
                continue
            margin = float(d[i, j] - UNIT_DISK_RADIUS)
            report.checks.append({"K": 1, "cluster": [i], "point": j, "margin": margin,
                                  "violation": bool(d[i, j] < limit)})
        report.min_margin[1] = min(c["margin"] for c in report.checks)
    if grid_factory is None:
        grid_factory = auto_grid
    for K in range(2, k_max + 1):
        if n <= K:
            break
        seen = set()
        margins = []
        for i in range(n):
            cluster = tuple(grow_cluster(x, i, K))
            if cluster in seen:
                continue
            seen.add(cluster)
            nuclei = NucleiSet(x[list(cluster)])
            sol = solver(nuclei, grid_factory(nuclei))
            others = np.array([j for j in range(n) if j not in cluster])
            depth = sol.region.signed_depth(x[others])
            k = int(np.argmax(depth))
            allowed = sol.grid.h + slack * math.sqrt(K / math.pi)
            margin = float(-depth[k])
            margins.append(margin)
            report.checks.append({"K": K, "cluster": list(cluster), "point": int(others[k]),
                                  "margin": margin, "violation": bool(depth[k] > allowed),
                                  "area": sol.region.area})
        if margins:
            report.min_margin[K] = min(margins)
    return report


# -- boundary descent -------------------------------------------------------------

class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryDescentReport:
    g_probe: float
    g_boundary_min: float
    phi_probe: float
    phi_boundary_max: float
    r_probe: float
    r_boundary_min: float
    n_boundary: int

    @property
    def descent_margin(self) -> float:
        return self.g_probe - self.g_boundary_min

    @property
    def passed(self) -> bool:
        return self.descent_margin > 0 and self.phi_probe > 0

    def to_dict(self):
        return {"g_probe": self.g_probe, "g_boundary_min": self.g_boundary_min,
                "descent_margin": self.descent_margin, "phi_probe": self.phi_probe,
                "phi_boundary_max": self.phi_boundary_max, "r_probe": self.r_probe,
                "r_boundary_min": self.r_boundary_min, "n_boundary": self.n_boundary,
                "passed": self.passed}


def verify_boundary_descent(config: Configuration, subset, interior_probe, mover: int,
                            w_ext: Prefactor | None = None, solution=None,
                            grid_factory=None, n_boundary: int = 64) -> BoundaryDescentReport:
    """Compare G(x) = H(.., x at index ``mover``, ..) inside and on the boundary of a screening region.

    G is split as Phi + R where Phi is the TF potential of the ``subset``
    nuclei; Phi is positive inside the region and vanishes on its boundary,
    while R has no interior minimum there.  A pre-computed TF ``solution`` for
    the subset may be passed in.
    """
    subset = [int(i) for i in subset]
    if mover in subset:
        raise PreconditionError("the moved particle cannot be one of the nuclei")
    x = config.points
    nuclei = NucleiSet(x[subset])
    if solution is None:
        solution = tf_solve(nuclei, (grid_factory or auto_grid)(nuclei))
    probe = np.asarray(interior_probe, dtype=float).reshape(1, 2)
    phi_probe = float(solution.phi_at(probe)[0])
    if not (solution.region.contains(probe)[0] and phi_probe > 0):
        raise PreconditionError("probe is not inside the screening region")

    def G(p):
        return scaled_hamiltonian(config.moved(mover, p), w_ext)

    boundary = solution.region.boundary_points(n_boundary)
    g_b = []
    for p in boundary:
        try:
            g_b.append(G(p))
        except SingularConfigurationError:
            g_b.append(math.inf)
    g_b = np.array(g_b)
    phi_b = solution.phi_at(boundary)
    g_probe = G(probe[0])
    r_b = g_b - phi_b
    return BoundaryDescentReport(g_probe, float(g_b.min()), phi_probe, float(np.abs(phi_b).max()),
                                 g_probe - phi_probe, float(r_b.min()), len(boundary))


def random_descent_probes(result, n_probes: int, seed: int, w_ext) -> list[dict]:
    """Random probes inside the single-point screening disk of a random particle."""
    rng = np.random.default_rng(seed)
    x = result.points
    n = len(x)
    solutions = {}
    out = []
    attempts = 0
    while len(out) < n_probes and n >= 2 and attempts < 20 * n_probes:
        attempts += 1
        j = int(rng.integers(n))
        d = np.hypot(*(x - x[j]).T)
        d[j] = np.inf
        mover = int(np.argmin(d))
        rad = 0.9 * UNIT_DISK_RADIUS * math.sqrt(rng.random())
        th = 2 * math.pi * rng.random()
        probe = x[j] + rad * np.array([math.cos(th), math.sin(th)])
        if j not in solutions:
            nuclei = NucleiSet(x[[j]])
            solutions[j] = tf_solve(nuclei, auto_grid(nuclei))
        try:
            rep = verify_boundary_descent(result.configuration, [j], probe, mover, w_ext,
                                          solution=solutions[j])
        except PreconditionError:
            continue
        out.append({"nucleus": j, "mover": mover, "probe": probe.tolist(), **rep.to_dict()})
    return out
