"""Command-line pipelines: sample, minimize, tf, verify, energy, report.

Every subcommand writes its artifacts atomically into ``--out`` (default:
``$LAUGHLIN_PLASMA_OUT/<command>-<config hash>``, falling back to ``runs/``).
JSON artifacts carry ``schema_version`` and the resolved config hash and are
byte-identical for identical configs; wall-clock data goes to metadata.json.

Exit status: 0 success, 1 a verification check failed, 2 usage/config error,
3 numerical non-convergence.  Failures print a JSON diagnostic on stderr and,
when the output directory is known, write it to diagnostics.json.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import io as aio
from .gibbs_sampler import (ChainSettings, DensityHistogram, MixingWarning, ResolutionError,
                            disk_averages, radial_profile, run_chain, series_mean_stderr)
from .ground_state import (GEOMETRIC_SLACK, MinimizeSettings, density_counts, density_slack,
                           exclusion_check, min_pairwise_distance, minimize, random_descent_probes)
from .incompressibility import (COROLLARY_BAND, EnergyReport, SupportClippedError, TrapPotential,
                                bathtub_energy, corollary_check, laughlin_angular_momentum,
                                prefactor_matrix, trap_energy_mc)
from .states import (Identity, PlasmaParams, Prefactor, QuadraticExponential, QuasiHoleProduct,
                     prefactor_from_dict)
from .tf_model import (TFConvergenceError, NucleiSet, auto_grid, region_properties,
                       tf_binary_check, tf_solve)

OUT_ENV = "LAUGHLIN_PLASMA_OUT"
EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_NONCONVERGED = 0, 1, 2, 3
DEFAULT_TOLERANCE = 0.10
# options that never change numerical results stay out of the config hash
_UNHASHED = {"out", "threads", "plots", "config", "command"}


class UsageError(Exception):
    pass


class NonConvergence(Exception):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- argument helpers -------------------------------------------------------------

def _json_arg(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON {text!r}: {exc}") from None


def _float_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def parse_prefactor(spec, params: PlasmaParams) -> Prefactor:
    """Prefactor from a name, a JSON document, or a dict.

    Names: ``identity``, ``hole`` (simple hole at the origin), any key of the
    test matrix (``hole_center_m1``, ``hole_off_m2``, ``ring4``,
    ``quadratic_0.1``), or ``quadratic:<c>``.
    """
    if spec is None:
        return Identity()
    if isinstance(spec, dict):
        return prefactor_from_dict(spec)
    text = str(spec).strip()
    if text.startswith("{"):
        return prefactor_from_dict(_json_arg(text))
    if text in ("identity", "none"):
        return Identity()
    if text == "hole":
        return QuasiHoleProduct((((0.0, 0.0), 1),))
    if text.startswith("quadratic:"):
        return QuadraticExponential(complex(text.split(":", 1)[1]))
    matrix = prefactor_matrix(params, include_quadratic=(0.1, 0.2))
    if text in matrix:
        return matrix[text]
    raise UsageError(f"unknown prefactor {text!r}; known: identity, hole, quadratic:<c>, "
                     + ", ".join(sorted(matrix)))


def _prefactor_list(spec, params: PlasmaParams) -> dict[str, Prefactor]:
    if spec in (None, "matrix"):
        return prefactor_matrix(params, include_quadratic=(0.1, 0.2))
    names = spec if isinstance(spec, list) else [s for s in str(spec).split(",") if s]
    return {name: parse_prefactor(name, params) for name in names}


def _params(args) -> PlasmaParams:
    try:
        return PlasmaParams(int(args.n), int(args.ell))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _chain_settings(args) -> ChainSettings:
    try:
        return ChainSettings(sweeps=int(args.sweeps), burn_in=int(args.burn),
                             proposal_sigma=float(args.sigma), seed=int(args.seed),
                             n_chains=int(args.chains), threads=int(args.threads),
                             snapshot_every=int(args.snapshot_every))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _resolved_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _UNHASHED and k != "func"}


def _out_dir(args, cfg_hash: str) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(OUT_ENV) or "runs"
    return Path(root) / f"{args.command}-{cfg_hash}"


# -- sample --------------------------------------------------------------------------

def _sample_artifacts(run, out: Path, cfg_hash: str, alphas, tolerance: float, plots: bool,
                      label: str | None = None) -> dict:
    params = run.params
    hist = run.histogram
    write = aio.write_json
    write(out / "density.json", {"params": params.to_dict(), "prefactor": run.prefactor.to_dict(),
                                 "settings": run.settings.to_dict(), **hist.to_dict()},
          "density_histogram", cfg_hash, compact=True)
    prof = radial_profile(hist, r_max=min(-hist.origin[0], -hist.origin[1]))
    aio.write_csv(out / "radial.csv", ["radius", "density", "stderr"],
                  zip(prof.radius, prof.density, prof.stderr), cfg_hash)
    disks_out = {}
    flagged_all = []
    for a in alphas:
        try:
            disks = disk_averages(hist, params, a, tolerance)
        except ResolutionError as exc:
            disks_out[f"{a:g}"] = {"error": str(exc)}
            continue
        flagged = [d for d in disks if d.exceeds]
        flagged_all += flagged
        disks_out[f"{a:g}"] = {"disk_radius_scaled": disks[0].radius if disks else None,
                               "n_disks": len(disks), "n_exceed": len(flagged),
                               "max_mean": max(d.mean for d in disks),
                               "disks": [d.to_dict() for d in disks]}
    write(out / "disk_averages.json", {"bound": params.plateau_density, "tolerance": tolerance,
                                       "alphas": disks_out, "passed": not flagged_all},
          "disk_averages", cfg_hash)
    n = params.n_particles
    L, L_se = series_mean_stderr([n * c.r2_series - n for c in run.chains])
    chains = [{"index": c.index, "acceptance": c.acceptance_rate,
               "burn_in_acceptance": c.burn_in_acceptance, "proposal_sigma": c.proposal_sigma,
               "mean_r2_physical": float(n * c.r2_series.mean())} for c in run.chains]
    observables = {"label": label or run.prefactor.label, "params": params.to_dict(),
                   "prefactor": run.prefactor.to_dict(),
                   "angular_momentum": L, "angular_momentum_stderr": L_se,
                   "angular_momentum_over_n2": L / n ** 2,
                   "outside_fraction": hist.outside_fraction,
                   "normalization": hist.normalization(), "chains": chains,
                   "warnings": run.warnings}
    write(out / "observables.json", observables, "observables", cfg_hash)
    if plots:
        from . import plotting
        title = f"{label or run.prefactor.label}  N={n} ell={params.ell}"
        plotting.radial_density(prof, params.plateau_density, params.droplet_radius_scaled,
                                out / "radial.png", title)
        plotting.density_map(hist, out / "density.png", flagged_all, title)
    return {"label": observables["label"], "n_exceed": len(flagged_all),
            "angular_momentum": L, "angular_momentum_stderr": L_se,
            "warnings": run.warnings}


def _run_sampler(params, pf, settings):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MixingWarning)
        return run_chain(params, pf, settings)


def cmd_sample(args, out: Path, cfg_hash: str) -> tuple[int, dict]:
    params = _params(args)
    pf = parse_prefactor(args.prefactor, params)
    settings = _chain_settings(args)
    alphas = _float_list(args.alphas)
    run = _run_sampler(params, pf, settings)
    info = _sample_artifacts(run, out, cfg_hash, alphas, args.tolerance, args.plots)
    status = EXIT_VIOLATION if info["n_exceed"] else EXIT_OK
    return status, info


# -- minimize / verify ----------------------------------------------------------------

def _minimize(args, params) -> tuple:
    w_ext = None if args.w_ext in (None, "none") else parse_prefactor(args.w_ext, params)
    try:
        settings = MinimizeSettings(restarts=int(args.restarts), max_iterations=int(args.max_iterations),
                                    gradient_tolerance=float(args.gradient_tolerance),
                                    seed=int(args.seed), threads=int(args.threads))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return minimize(params, w_ext, settings), w_ext


def cmd_minimize(args, out: Path, cfg_hash: str) -> tuple[int, dict]:
    params = _params(args)
    result, _ = _minimize(args, params)
    aio.write_json(out / "minimizer.json", result.to_dict(), "minimizer_result", cfg_hash)
    if args.plots:
        from . import plotting
        plotting.configuration(result.points, out / "configuration.png",
                               title=f"N={params.n_particles}  E={result.energy:.6f}")
    info = {"energy": result.energy, "max_gradient": result.max_gradient,
            "converged": result.converged, "min_distance": min_pairwise_distance(result)}
    if not result.converged:
        raise NonConvergence("no restart reached the gradient tolerance", info)
    return EXIT_OK, info


def cmd_verify(args, out: Path, cfg_hash: str) -> tuple[int, dict]:
    params = PlasmaParams(int(args.minimize_n), int(args.ell))
    result, w_ext = _minimize(args, params)
    aio.write_json(out / "minimizer.json", result.to_dict(), "minimizer_result", cfg_hash)
    if not result.converged:
        raise NonConvergence("no restart reached the gradient tolerance",
                             {"energy": result.energy, "max_gradient": result.max_gradient})
    excl = exclusion_check(result, k_max=int(args.k_max))
    d_min = min_pairwise_distance(result)
    dist_ok = d_min >= (1.0 - GEOMETRIC_SLACK) / math.sqrt(math.pi)
    radii = _float_list(args.radii) if args.radii else [2.0, 4.0]
    radii.append(0.5 * params.droplet_radius_ground)
    counts = []
    for R, n_in, ratio in density_counts(result, radii):
        bound = 1.0 + density_slack(R)
        counts.append({"R": R, "count": n_in, "ratio": ratio, "bound": bound,
                       "violation": bool(ratio > bound)})
    descent = []
    if int(args.descent_probes) > 0:
        descent = random_descent_probes(result, int(args.descent_probes), int(args.seed), w_ext)
    violations = (len(excl.violations) + (not dist_ok) + sum(c["violation"] for c in counts)
                  + sum(not d["passed"] for d in descent))
    aio.write_json(out / "exclusion_report.json", {
        "params": params.to_dict(), "slack": GEOMETRIC_SLACK,
        "slack_note": "geometric slack applied to all exclusion assertions",
        "min_pairwise_distance": d_min, "min_distance_bound": (1 - GEOMETRIC_SLACK) / math.sqrt(math.pi),
        "min_distance_violation": not dist_ok,
        "exclusion": excl.to_dict(), "density_counts": counts, "boundary_descent": descent,
        "n_violations": int(violations), "passed": violations == 0}, "exclusion_report", cfg_hash)
    aio.write_csv(out / "density_counts.csv", ["R", "count", "ratio", "bound"],
                  [(c["R"], c["count"], c["ratio"], c["bound"]) for c in counts], cfg_hash)
    if args.plots:
        from . import plotting
        bad = {c["point"] for c in excl.violations}
        plotting.configuration(result.points, out / "configuration.png", highlight=bad,
                               title=f"N={params.n_particles}  violations={violations}")
    info = {"n_violations": int(violations), "min_pairwise_distance": d_min,
            "min_margin": {str(k): v for k, v in excl.min_margin.items()}}
    return (EXIT_VIOLATION if violations else EXIT_OK), info


# -- tf ----------------------------------------------------------------------------------

def cmd_tf(args, out: Path, cfg_hash: str) -> tuple[int, dict]:
    nuclei_spec = args.nuclei if isinstance(args.nuclei, list) else _json_arg(args.nuclei)
    try:
        nuclei = NucleiSet(np.asarray(nuclei_spec, dtype=float))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    pad = None if args.pad in (None, "auto") else float(args.pad)
    cells = None if args.grid in (None, "auto") else int(args.grid)
    grid = auto_grid(nuclei, cells=cells, pad=pad)
    try:
        sol = tf_solve(nuclei, grid, max_iterations=int(args.max_iterations))
    except TFConvergenceError as exc:
        raise NonConvergence(str(exc), exc.diagnostics) from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    props = region_properties(sol.region, nuclei)
    binary = tf_binary_check(sol.sigma)
    K = nuclei.K
    comp = sol.complementarity_residual()
    checks = {
        "area": bool(abs(props["relative_area_error"]) <= 0.02),
        "binary": bool(binary.passed),
        "complementarity": bool(comp <= sol.eps_grid * K),
        "multiplier": bool(abs(sol.multiplier) <= sol.eps_grid),
        "mass": bool(abs(sol.sigma.mass - K) <= 1e-6),
    }
    aio.write_json(out / "sigma.json", sol.sigma.to_dict(), "grid_field", cfg_hash)
    aio.write_json(out / "phi.json", sol.phi.to_dict(), "grid_field", cfg_hash)
    rows = [(i, p[0], p[1]) for i, line in enumerate(sol.region.boundary) for p in line]
    aio.write_csv(out / "region.csv", ["polyline", "x", "y"], rows, cfg_hash)
    report = {"nuclei": nuclei.positions.tolist(), **sol.summary(), "region": props,
              "binary": binary.to_dict(), "checks": checks, "passed": all(checks.values())}
    aio.write_json(out / "tf_report.json", report, "tf_report", cfg_hash)
    if args.plots:
        from . import plotting
        plotting.tf_solution(sol, out / "tf.png", title=f"K={K}  area={sol.region.area:.4f}")
    info = {"area": sol.region.area, "eps_grid": sol.eps_grid, "iterations": sol.iterations,
            "checks": checks}
    return (EXIT_OK if all(checks.values()) else EXIT_VIOLATION), info


# -- energy ------------------------------------------------------------------------------

def _load_sample_dir(path: Path):
    dens = aio.read_json(path / "density.json")
    obs = aio.read_json(path / "observables.json")
    params = PlasmaParams(dens["params"]["n_particles"], dens["params"]["ell"])
    return params, DensityHistogram.from_dict(dens), obs


def cmd_energy(args, out: Path, cfg_hash: str) -> tuple[int, dict]:
    exponents = _float_list(args.s)
    samples = []  # (label, params, hist, observables)
    if args.runs:
        for d in args.runs:
            try:
                params, hist, obs = _load_sample_dir(Path(d))
            except FileNotFoundError as exc:
                raise UsageError(f"not a sample directory: {d} ({exc})") from None
            samples.append((obs["label"], params, hist, obs))
    else:
        params = _params(args)
        settings = _chain_settings(args)
        for name, pf in _prefactor_list(args.prefactors, params).items():
            run = _run_sampler(params, pf, settings)
            sub = out / "runs" / name
            _sample_artifacts(run, sub, cfg_hash, _float_list(args.alphas), args.tolerance,
                              args.plots, label=name)
            samples.append((name, params, run.histogram, aio.read_json(sub / "observables.json")))
    if not samples:
        raise UsageError("nothing to evaluate")
    reference = args.reference
    reports, corollaries, rows = [], [], []
    for s in exponents:
        trap = TrapPotential(s)
        by_label = {}
        for label, params, hist, obs in samples:
            try:
                est = trap_energy_mc(params, hist, trap)
            except SupportClippedError as exc:
                raise NonConvergence(str(exc), {"label": label}) from None
            rep = EnergyReport(label, params, s, est.value, est.stderr, bathtub_energy(params, trap))
            by_label[label] = rep
            reports.append(rep)
            rows.append((label, params.ell, params.n_particles, s, rep.mc_energy, rep.mc_stderr,
                         rep.bathtub_energy, rep.ratio, rep.ratio_stderr,
                         obs["angular_momentum"], obs["angular_momentum_stderr"]))
        if reference in by_label:
            ref = by_label[reference]
            others = [r for k, r in by_label.items()
                      if k != reference and (r.params, r.exponent) == (ref.params, ref.exponent)]
            corollaries.append({"s": s, **corollary_check(ref, others, band=args.band).to_dict()})
    momentum = []
    for label, params, _, obs in samples:
        momentum.append({"label": label, **params.to_dict(), "L": obs["angular_momentum"],
                         "stderr": obs["angular_momentum_stderr"],
                         "L_over_n2": obs["angular_momentum_over_n2"],
                         "bound": 2 * params.ell,
                         "laughlin_exact": laughlin_angular_momentum(params)
                         if label == reference else None,
                         "violation": bool(obs["angular_momentum_over_n2"] > 2 * params.ell)})
    failed = (any(not v["passed"] for v in corollaries) or any(m["violation"] for m in momentum)
              or any(not r.above_bathtub for r in reports))
    aio.write_json(out / "energy_reports.json",
                   {"reference": reference, "band": args.band,
                    "reports": [r.to_dict() for r in reports],
                    "corollary": corollaries, "angular_momentum": momentum,
                    "passed": not failed}, "energy_reports", cfg_hash)
    aio.write_csv(out / "summary.csv",
                  ["prefactor", "ell", "n", "s", "mc_energy", "mc_stderr", "bathtub_energy",
                   "ratio", "ratio_stderr", "angular_momentum", "angular_momentum_stderr"],
                  rows, cfg_hash)
    if args.plots:
        from . import plotting
        for s in exponents:
            plotting.energy_summary([r.to_dict() for r in reports if r.exponent == s],
                                    out / f"energy_s{s:g}.png", title=f"s={s:g}")
    info = {"n_reports": len(rows), "corollary_passed": [v["passed"] for v in corollaries]}
    return (EXIT_VIOLATION if failed else EXIT_OK), info


# -- report ------------------------------------------------------------------------------

def cmd_report(args, out: Path, cfg_hash: str) -> tuple[int, dict]:
    from . import plotting
    root = Path(args.runs_dir)
    if not root.is_dir():
        raise UsageError(f"no such directory: {root}")
    disk_rows, energy_rows, excl_rows, tf_rows = [], [], [], []
    violations = 0
    for path in sorted(root.rglob("disk_averages.json")):
        d = aio.read_json(path)
        obs_path = path.parent / "observables.json"
        label = aio.read_json(obs_path)["label"] if obs_path.exists() else path.parent.name
        for a, rec in sorted(d["alphas"].items()):
            if "error" in rec:
                continue
            disk_rows.append({"run": str(path.parent.relative_to(root)), "label": label,
                              "alpha": a, "n_disks": rec["n_disks"], "n_exceed": rec["n_exceed"],
                              "max_mean": rec["max_mean"], "bound": d["bound"],
                              "tolerance": d["tolerance"]})
            violations += rec["n_exceed"] > 0
    for path in sorted(root.rglob("energy_reports.json")):
        d = aio.read_json(path)
        for r in d["reports"]:
            energy_rows.append({"run": str(path.parent.relative_to(root)), **r})
        violations += not d["passed"]
    for path in sorted(root.rglob("exclusion_report.json")):
        d = aio.read_json(path)
        excl_rows.append({"run": str(path.parent.relative_to(root)), "n": d["params"]["n_particles"],
                          "n_violations": d["n_violations"],
                          "min_pairwise_distance": d["min_pairwise_distance"]})
        violations += d["n_violations"] > 0
    for path in sorted(root.rglob("tf_report.json")):
        d = aio.read_json(path)
        tf_rows.append({"run": str(path.parent.relative_to(root)), "K": d["K"], "area": d["area"],
                        "passed": d["passed"]})
        violations += not d["passed"]
    aio.write_csv(out / "disk_bounds.csv",
                  ["run", "prefactor", "alpha", "n_disks", "n_exceed", "max_mean", "bound", "tolerance"],
                  [(r["run"], r["label"], r["alpha"], r["n_disks"], r["n_exceed"], r["max_mean"],
                    r["bound"], r["tolerance"]) for r in disk_rows], cfg_hash)
    aio.write_csv(out / "summary.csv",
                  ["run", "prefactor", "ell", "n", "s", "mc_energy", "mc_stderr", "bathtub_energy",
                   "ratio", "ratio_stderr"],
                  [(r["run"], r["label"], r["ell"], r["n_particles"], r["s"], r["mc_energy"],
                    r["mc_stderr"], r["bathtub_energy"], r["ratio"], r["ratio_stderr"])
                   for r in energy_rows], cfg_hash)
    aio.write_json(out / "report.json", {"runs_dir": str(root), "disk_bounds": disk_rows,
                                         "energies": energy_rows, "exclusion": excl_rows,
                                         "tf": tf_rows, "n_failed": int(violations),
                                         "passed": violations == 0}, "report", cfg_hash)
    if energy_rows:
        plotting.energy_summary(energy_rows, out / "energy_summary.png", "trap energy vs bathtub")
    if disk_rows:
        b = disk_rows[0]
        plotting.disk_exceedance(disk_rows, out / "disk_exceedance.png", b["bound"], b["tolerance"],
                                 "largest disk average")
    info = {"disk_rows": len(disk_rows), "energy_rows": len(energy_rows),
            "exclusion_rows": len(excl_rows), "tf_rows": len(tf_rows), "n_failed": int(violations)}
    return (EXIT_VIOLATION if violations else EXIT_OK), info


# -- parser --------------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="JSON file of option values (keys are option names)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads")
    p.add_argument("--plots", action="store_true", help="also render PNG figures")


def _add_system(p, n_flag="--n"):
    p.add_argument(n_flag, type=int, default=50, dest=n_flag.lstrip("-").replace("-", "_"),
                   help="particle number N")
    p.add_argument("--ell", type=int, default=2, help="Laughlin exponent")


def _add_chain(p):
    p.add_argument("--sweeps", type=int, default=100_000, help="total sweeps per chain")
    p.add_argument("--burn", type=int, default=10_000, help="burn-in sweeps (adaptive)")
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--sigma", type=float, default=0.05, help="initial proposal width")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snapshot-every", type=int, default=0)
    p.add_argument("--alphas", default="0.3,0.4,0.5", help="disk exponents for averages")
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE,
                   help="relative slack on the disk bound")


def _add_minimize(p):
    p.add_argument("--w-ext", default=None, help="prefactor generating the external term")
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--max-iterations", type=int, default=50_000)
    p.add_argument("--gradient-tolerance", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="laughlin-plasma", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sample", help="Metropolis density estimate for one prefactor")
    _add_common(p)
    _add_system(p)
    p.add_argument("--prefactor", default="identity")
    _add_chain(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("minimize", help="minimize the scaled Hamiltonian")
    _add_common(p)
    _add_system(p)
    _add_minimize(p)
    p.set_defaults(func=cmd_minimize)

    p = sub.add_parser("tf", help="solve the Thomas-Fermi screening problem")
    _add_common(p)
    p.add_argument("--nuclei", required=False, default="[[0,0]]", help="JSON list of points")
    p.add_argument("--grid", default="auto", help="cells along the longer side, or auto")
    p.add_argument("--pad", default="auto", help="domain padding, or auto (2 sqrt(K/pi))")
    p.add_argument("--max-iterations", type=int, default=5000)
    p.set_defaults(func=cmd_tf)

    p = sub.add_parser("verify", help="minimize and check exclusion and density rules")
    _add_common(p)
    _add_system(p, "--minimize-n")
    _add_minimize(p)
    p.add_argument("--k-max", type=int, default=2)
    p.add_argument("--radii", default=None, help="disk radii for density counts (plus half the droplet)")
    p.add_argument("--descent-probes", type=int, default=0,
                   help="random interior probes for the boundary-descent check")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("energy", help="trap energies against the bathtub bound")
    _add_common(p)
    _add_system(p)
    _add_chain(p)
    p.add_argument("--s", default="2", help="trap exponents, comma separated")
    p.add_argument("--prefactors", default="matrix", help="'matrix' or comma-separated names")
    p.add_argument("--runs", nargs="*", default=None, help="reuse existing sample directories")
    p.add_argument("--reference", default="identity")
    p.add_argument("--band", type=float, default=COROLLARY_BAND)
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("report", help="aggregate a directory of runs")
    _add_common(p)
    p.add_argument("--runs-dir", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def _parse(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        known = set(vars(args))
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {unknown}")
        # explicit flags win over the config file
        explicit = set(vars(_explicit(argv)))
        for k, v in cfg.items():
            if k not in explicit:
                setattr(args, k, v)
    if args.command == "report" and not args.runs_dir:
        args.runs_dir = os.environ.get(OUT_ENV) or "runs"
    return args


def _explicit(argv) -> argparse.Namespace:
    """Namespace holding only the options given on the command line."""
    parser = build_parser()
    for action in _all_actions(parser):
        action.default = argparse.SUPPRESS
    return parser.parse_args(argv)


def _all_actions(parser):
    for action in parser._actions:
        yield action
        if isinstance(action, argparse._SubParsersAction):
            for p in action.choices.values():
                yield from _all_actions(p)


def _fail(code: int, kind: str, message: str, out: Path | None, extra=None):
    diag = {"status": code, "error": kind, "message": message, **({"details": extra} if extra else {})}
    print(json.dumps(diag, sort_keys=True, default=str), file=sys.stderr)
    if out is not None:
        try:
            aio.write_json(out / "diagnostics.json", diag, "diagnostics")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    out = None
    try:
        args = _parse(argv)
        config = _resolved_config(args)
        cfg_hash = aio.config_hash(config)
        out = _out_dir(args, cfg_hash)
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.time()
        started = datetime.now(timezone.utc).isoformat()
        aio.write_json(out / "config.json", {"command": args.command, "config": config},
                       "config", cfg_hash)
        status, info = args.func(args, out, cfg_hash)
        aio.write_json(out / "metadata.json", {
            "command": args.command, "argv": argv, "started": started,
            "finished": datetime.now(timezone.utc).isoformat(), "wall_seconds": time.time() - t0,
            "version": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "threads": args.threads, "status": status},
            "metadata", cfg_hash)
        print(json.dumps({"status": status, "out": str(out), **info}, sort_keys=True, default=str))
        return status
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc), out)
    except NonConvergence as exc:
        return _fail(EXIT_NONCONVERGED, "non_convergence", str(exc), out, exc.diagnostics)
    except (ValueError, TypeError, KeyError) as exc:
        return _fail(EXIT_USAGE, "config", f"{type(exc).__name__}: {exc}", out)


if __name__ == "__main__":
    sys.exit(main())
