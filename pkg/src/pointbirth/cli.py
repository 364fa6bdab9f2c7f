"""Batch front-end: config parsing, experiment orchestration, structured
result emission.

Subcommands: kernel, flow, solve, simulate, verify.  Configuration is JSON;
bulk numerics go to CSV (17 significant digits); each run writes a summary
JSON embedding the exact resolved configuration.  Exit codes: 0 ok,
2 config error, 3 numerical nonconvergence, 4 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from .kernel import (
    KernelParams,
    NonconvergenceError,
    heat_residual,
    palpha_batch,
    pbar_radial,
)
from .field import (RadialGrid, TestFunction, FieldSample, apply_heat,
                    apply_palpha, h_norm)
from . import loglaplace as ll
from . import simulate as sim
from . import specfun

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_VERIFY = 4

_NUMERIC_ERRORS = (
    ll.PicardError,
    ll.IterationDivergence,
    NonconvergenceError,
    sim.ParticleCapError,
)


class ConfigError(Exception):
    """Schema or hypothesis violation; carries field-precise messages."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


def _fmt(x) -> str:
    return f"{float(x):.17g}"


@dataclass
class RunConfig:
    """Fully resolved experiment configuration."""

    experiment: str
    model: ll.ModelParams
    solver: ll.SolverConfig
    sim: sim.SimConfig
    method: str = "picard"
    trotter_n: int = 64
    time: float = 1.0
    times: tuple = (0.25, 1.0)
    radii: tuple = (0.25, 1.0, 2.0)
    initial_x: tuple = (1.0, 0.0)
    initial_mass: float = 1.0
    phi_scale: float = 4.0
    out: str = "."
    threads: int = 1
    quad_level: int = 1

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = dataclasses.asdict(self.model)
        d["solver"] = dataclasses.asdict(self.solver)
        d["sim"] = dataclasses.asdict(self.sim)
        return d


_MODEL_KEYS = {"d", "alpha", "beta", "eta", "rho"}
_SOLVER_KEYS = {"horizon", "picard_tol", "max_picard_iters", "trotter_n",
                "time_panels_per_unit", "quad_level", "inner_tol",
                "max_inner_iters"}
_SIM_KEYS = {"trotter_n", "replicates", "seed", "particle_cap",
             "split_factor", "branch_first"}
_TOP_KEYS = {"experiment", "model", "solver", "sim", "method", "n", "time",
             "times", "radii", "initial", "test_function", "out", "threads"}
_INITIAL_KEYS = {"x", "mass"}
_PHI_KEYS = {"kind", "scale"}


def _check_keys(obj: dict, allowed: set, path: str, errors: list) -> None:
    for key in obj:
        if key not in allowed:
            errors.append(f"{path}{key}: unknown key")


def _section(raw: dict, name: str, errors: list) -> dict:
    val = raw.get(name, {})
    if not isinstance(val, dict):
        errors.append(f"{name}: must be an object")
        return {}
    return val


def parse_config(text: str) -> RunConfig:
    """Validate a JSON config; raises ConfigError with field-precise
    messages (unknown keys are named; parameter-hypothesis violations are
    delegated to validate_hypothesis)."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"invalid JSON: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["top level: must be a JSON object"])
    errors: list[str] = []
    _check_keys(raw, _TOP_KEYS, "", errors)

    experiment = raw.get("experiment", "solve")
    if experiment not in ("kernel", "flow", "solve", "simulate", "verify"):
        errors.append(f"experiment: {experiment!r} is not one of "
                      "kernel/flow/solve/simulate/verify")

    model_raw = _section(raw, "model", errors)
    _check_keys(model_raw, _MODEL_KEYS, "model.", errors)
    d = model_raw.get("d", 2)
    defaults = {2: ll.reference_params(2), 3: ll.reference_params(3)}
    ref = defaults.get(d)
    if ref is None:
        errors.append(f"model.d: {d!r} must be 2 or 3")
        raise ConfigError(errors)
    try:
        model = ll.ModelParams(
            d=int(d),
            alpha=float(model_raw.get("alpha", ref.alpha)),
            beta=float(model_raw.get("beta", ref.beta)),
            eta=float(model_raw.get("eta", ref.eta)),
            rho=float(model_raw.get("rho", ref.rho)),
        )
    except (TypeError, ValueError) as exc:
        errors.append(f"model: {exc}")
        raise ConfigError(errors)
    if experiment in ("solve", "simulate"):
        rep = ll.validate_hypothesis(model)
        if not rep.ok:
            errors.extend(f"model: {v}" for v in rep.violations)

    solver_raw = _section(raw, "solver", errors)
    _check_keys(solver_raw, _SOLVER_KEYS, "solver.", errors)
    try:
        solver = ll.SolverConfig(**{k: v for k, v in solver_raw.items()
                                    if k in _SOLVER_KEYS})
    except (TypeError, ValueError) as exc:
        errors.append(f"solver: {exc}")
        solver = ll.SolverConfig()

    sim_raw = _section(raw, "sim", errors)
    _check_keys(sim_raw, _SIM_KEYS, "sim.", errors)
    try:
        sim_cfg = sim.SimConfig(**{k: v for k, v in sim_raw.items()
                                   if k in _SIM_KEYS})
    except (TypeError, ValueError) as exc:
        errors.append(f"sim: {exc}")
        sim_cfg = sim.SimConfig()

    method = raw.get("method", "picard")
    if method not in ("picard", "trotter"):
        errors.append(f"method: {method!r} is not picard or trotter")
    trotter_n = raw.get("n", solver.trotter_n)
    if not isinstance(trotter_n, int) or trotter_n < 1:
        errors.append(f"n: {trotter_n!r} must be a positive integer")
        trotter_n = 64

    t_val = raw.get("time", solver.horizon)
    if not isinstance(t_val, (int, float)) or t_val < 0:
        errors.append(f"time: {t_val!r} must be a nonnegative number")
        t_val = 1.0

    def _num_list(name, default):
        vals = raw.get(name, default)
        if (not isinstance(vals, list) or not vals
                or not all(isinstance(v, (int, float)) and v > 0 for v in vals)):
            if name in raw:
                errors.append(f"{name}: must be a nonempty list of positive "
                              "numbers")
            return tuple(default)
        return tuple(float(v) for v in vals)

    times = _num_list("times", [0.25, 1.0])
    radii = _num_list("radii", [0.25, 1.0, 2.0])

    init_raw = _section(raw, "initial", errors)
    _check_keys(init_raw, _INITIAL_KEYS, "initial.", errors)
    x0 = init_raw.get("x", [1.0] + [0.0] * (model.d - 1))
    if (not isinstance(x0, list) or len(x0) != model.d
            or not all(isinstance(v, (int, float)) for v in x0)
            or not any(v != 0 for v in x0)):
        errors.append("initial.x: must be a nonzero point with d coordinates")
        x0 = [1.0] + [0.0] * (model.d - 1)
    mass0 = init_raw.get("mass", 1.0)
    if not isinstance(mass0, (int, float)) or mass0 <= 0:
        errors.append(f"initial.mass: {mass0!r} must be positive")
        mass0 = 1.0

    phi_raw = _section(raw, "test_function", errors)
    _check_keys(phi_raw, _PHI_KEYS, "test_function.", errors)
    kind = phi_raw.get("kind", "gaussian")
    if kind != "gaussian":
        errors.append(f"test_function.kind: {kind!r} (only gaussian is "
                      "supported here)")
    phi_scale = phi_raw.get("scale", 4.0)
    if not isinstance(phi_scale, (int, float)) or phi_scale <= 0:
        errors.append(f"test_function.scale: {phi_scale!r} must be positive")
        phi_scale = 4.0

    out = raw.get("out", ".")
    if not isinstance(out, str):
        errors.append("out: must be a directory path string")
        out = "."
    threads = raw.get("threads", 1)
    if not isinstance(threads, int) or threads < 1:
        errors.append(f"threads: {threads!r} must be a positive integer")
        threads = 1

    if errors:
        raise ConfigError(errors)
    return RunConfig(
        experiment=experiment, model=model, solver=solver, sim=sim_cfg,
        method=method, trotter_n=trotter_n, time=float(t_val), times=times,
        radii=radii, initial_x=tuple(float(v) for v in x0),
        initial_mass=float(mass0), phi_scale=float(phi_scale), out=out,
        threads=threads, quad_level=solver.quad_level,
    )


# ---------------------------------------------------------------------------
# artifact helpers
# ---------------------------------------------------------------------------

def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([c if isinstance(c, (str, int)) else _fmt(c)
                             for c in row])


def _write_summary(path: str, cfg: RunConfig, payload: dict) -> None:
    doc = {"config": cfg.as_dict(), **payload}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=float)
        fh.write("\n")


def _apply_threads(budget: int) -> None:
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=budget)
    except ImportError:
        pass  # single-threaded BLAS default; budget is advisory


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def _phi(cfg: RunConfig) -> TestFunction:
    return TestFunction.gaussian(cfg.model.d, cfg.model.rho,
                                 scale=cfg.phi_scale)


def _run_kernel(cfg: RunConfig) -> dict:
    params = cfg.model.kernel
    rows = []
    spec = specfun.AccuracySpec()
    for t in cfg.times:
        for rx in cfg.radii:
            for ry in cfg.radii:
                for c in (-1.0, 0.0, 1.0):
                    parts = palpha_batch(params, t, rx, ry, c,
                                         level=cfg.quad_level)
                    rows.append([
                        t, rx, ry, c,
                        float(parts["heat"][0]), float(parts["image"][0]),
                        float(parts["alpha_corr"][0]), float(parts["total"][0]),
                        pbar_radial(params.d, t, rx, ry), spec.rel_tol,
                    ])
    path = os.path.join(cfg.out, "kernel.csv")
    _write_csv(path, ["t", "rx", "ry", "cos_angle", "heat", "image",
                      "alpha_corr", "total", "pbar", "tolerance"], rows)
    return {"artifacts": [path], "rows": len(rows)}


def _run_flow(cfg: RunConfig) -> dict:
    model = cfg.model
    phi = _phi(cfg)
    grid = RadialGrid.default(model.d, horizon=max(cfg.times))
    rows = []
    for t in cfg.times:
        flowed = apply_palpha(model.kernel, t, phi, grid,
                              level=cfg.quad_level)
        heat_part = apply_heat(model.d, t, phi, grid)
        for r, v, h in zip(grid.nodes, flowed.values, heat_part.values):
            rows.append([t, r, v, h, v - h, 1e-8])
    path = os.path.join(cfg.out, "flow.csv")
    _write_csv(path, ["t", "r", "s_alpha_phi", "heat_flow", "excess",
                      "tolerance"], rows)
    return {"artifacts": [path], "rows": len(rows)}


def _run_solve(cfg: RunConfig) -> dict:
    model = cfg.model
    phi = _phi(cfg)
    grid = RadialGrid.solver(model.d)
    t = cfg.time
    if cfg.method == "picard":
        sol = ll.picard_solve(model, phi, t, cfg.solver, grid)
    else:
        sol = ll.trotter_solve(model, phi, t, cfg.trotter_n, grid,
                               level=cfg.quad_level)
    res = ll.residual(sol, phi, model, cfg.solver)
    n = sol.times.size - 1
    delta = sol.times[1] - sol.times[0]
    chain = ll._flow_chain(model.kernel, grid, float(delta), n,
                           cfg.quad_level)
    phi_vals = phi.evaluator(grid.nodes)
    rows = []
    for i, tv in enumerate(sol.times):
        upper = chain[i] @ phi_vals if i else phi_vals
        vals = sol.fields[i].values
        for j, r in enumerate(grid.nodes):
            rows.append([tv, r, vals[j], upper[j], res[i],
                         cfg.solver.picard_tol])
    path = os.path.join(cfg.out, "solve.csv")
    _write_csv(path, ["t", "r", "v", "upper_bound", "residual", "tolerance"],
               rows)
    summary_path = os.path.join(cfg.out, "solve_summary.json")
    payload = {
        "method": cfg.method,
        "residual_max": float(np.max(res)),
        "picard_iters": sol.info.get("picard_iters"),
        "trotter_n": cfg.trotter_n if cfg.method == "trotter" else None,
        "artifacts": [path],
    }
    _write_summary(summary_path, cfg, payload)
    return {"artifacts": [path, summary_path],
            "residual_max": payload["residual_max"]}


def _run_simulate(cfg: RunConfig) -> dict:
    model = cfg.model
    phi = _phi(cfg)
    t = cfg.time
    n = cfg.sim.trotter_n
    x0 = np.asarray(cfg.initial_x, dtype=float)
    mu0 = sim.ParticleCloud.point_mass(x0, cfg.initial_mass)
    clouds = sim.simulate_replicates(mu0, t, model, cfg.sim,
                                     level=cfg.quad_level)
    lap = sim.estimate_laplace(clouds, phi)
    mean = sim.estimate_mean(clouds, phi)
    # oracles: the level-n splitting solution for the Laplace functional
    # (same-level comparison) and the flowed test function for the mean
    sol = ll.trotter_solve(model, phi, t, n, level=cfg.quad_level)
    r0 = float(np.linalg.norm(x0))
    lap_oracle = math.exp(-cfg.initial_mass * sol.at(t)(r0))
    # the splitting scheme front-loads one flow step, so the exact mean
    # target sits at t + 1/n (criticality preserves the mean thereafter)
    mean_oracle = cfg.initial_mass * apply_palpha(
        model.kernel, t + 1.0 / n, phi, RadialGrid.default(model.d),
        level=cfg.quad_level)(r0)
    rows = [[i, c.size, c.total_mass, c.pairing(phi)]
            for i, c in enumerate(clouds)]
    path = os.path.join(cfg.out, "simulate.csv")
    _write_csv(path, ["replicate", "n_particles", "total_mass",
                      "pairing_value"], rows)
    summary_path = os.path.join(cfg.out, "simulate_summary.json")
    payload = {
        "estimates": {
            "laplace": {"mean": lap.mean, "stderr": lap.stderr,
                        "oracle": lap_oracle,
                        "z_score": lap.z_score(lap_oracle)},
            "mean_pairing": {"mean": mean.mean, "stderr": mean.stderr,
                             "oracle": mean_oracle,
                             "z_score": mean.z_score(mean_oracle)},
        },
        "replicates": len(clouds),
        "artifacts": [path],
    }
    _write_summary(summary_path, cfg, payload)
    return {"artifacts": [path, summary_path],
            "z_laplace": payload["estimates"]["laplace"]["z_score"],
            "z_mean": payload["estimates"]["mean_pairing"]["z_score"]}


# ---------------------------------------------------------------------------
# verification suite
# ---------------------------------------------------------------------------

def _verify_checks(cfg: RunConfig):
    """Desk-scale invariant suite spanning all modules; each check yields
    (name, measured, tolerance, ok)."""
    rng = np.random.default_rng(cfg.sim.seed)

    def check_k0():
        from scipy.integrate import quad
        worst = 0.0
        for z in np.geomspace(1e-3, 40.0, 12):
            # scaled integrand keeps the oracle accurate relative to K0(z)
            upper = math.acosh(1.0 + 745.0 / z)
            ref = quad(lambda u: math.exp(-z * (math.cosh(u) - 1.0)),
                       0.0, upper, limit=300, epsabs=0.0,
                       epsrel=1e-11)[0] * math.exp(-z)
            worst = max(worst, abs(specfun.macdonald_k0(z) - ref) / ref)
        return worst, 1e-8

    def check_sandwich():
        bad = 0
        for d in (2, 3):
            params = KernelParams(d=d, alpha=0.0)
            ts = rng.uniform(0.1, 2.0, 60)
            rx = rng.uniform(0.05, 3.0, 60)
            ry = rng.uniform(0.05, 3.0, 60)
            cs = rng.uniform(-1.0, 1.0, 60)
            excess = []
            for t, a, b, c in zip(ts, rx, ry, cs):
                parts = palpha_batch(params, t, a, b, c)
                ex = float(parts["total"][0] - parts["heat"][0])
                if ex < -1e-12:
                    bad += 1
                pb = pbar_radial(d, t, a, b)
                excess.append(ex / pb if pb > 0 else 0.0)
            c_fit = max(excess)
            bad += sum(1 for t, a, b, c, e in
                       zip(ts, rx, ry, cs, excess) if e > c_fit * (1 + 1e-12))
        return float(bad), 0.5

    def check_heat_eq():
        worst = 0.0
        for d in (2, 3):
            params = KernelParams(d=d, alpha=0.0)
            for t, a, b in ((0.6, 0.8, 1.1), (1.0, 1.5, 0.7)):
                x = np.zeros(d)
                y = np.zeros(d)
                x[0], y[0] = a, b
                worst = max(worst, abs(heat_residual(params, t, x, y,
                                                     1e-3, 1e-2)))
        return worst, 1e-4

    def check_chapman():
        worst = 0.0
        for d in (2, 3):
            model = ll.reference_params(d)
            phi = TestFunction.gaussian(d, model.rho)
            grid = RadialGrid.default(d)
            s_t = apply_palpha(model.kernel, 0.5, phi, grid)
            two = apply_palpha(model.kernel, 0.25,
                               apply_palpha(model.kernel, 0.25, phi, grid),
                               grid)
            num = h_norm(FieldSample(grid, s_t.values - two.values,
                                     sing_order=0.5 * (d - 1)), model.rho)
            worst = max(worst, num / h_norm(phi, model.rho, grid))
        return worst, 1e-4

    def check_csb():
        v1 = ll.csb_step(np.array([1.0]), 1.0, 1.0, 1.0)[0]
        v2 = ll.csb_step(np.array([2.0]), 1.0, 1.0, 0.5)[0]
        worst = max(abs(v1 - 0.5), abs(v2 - 2.0 / (1.0 + math.sqrt(2.0) / 2.0) ** 2))
        bad = 0
        a = rng.uniform(-10, 10, 10000)
        b = rng.uniform(-10, 10, 10000)
        betas = rng.uniform(0.0, 1.0, 10000) + 1e-12
        for ai, bi, bb in zip(a, b, betas):
            lhs, rhs = ll.elementary_bound(ai, bi, bb)
            if lhs > rhs * (1 + 1e-12):
                bad += 1
        return max(worst, float(bad)), 1e-10 if not bad else 0.5

    def check_determinism():
        model = ll.reference_params(2)
        cfg_s = sim.SimConfig(trotter_n=8, replicates=20, seed=123)
        mu = sim.ParticleCloud.point_mass(np.array([1.0, 0.0]))
        a = sim.simulate_replicates(mu, 0.25, model, cfg_s)
        b = sim.simulate_replicates(mu, 0.25, model, cfg_s)
        same = all(np.array_equal(x.positions, y.positions)
                   and np.array_equal(x.masses, y.masses)
                   for x, y in zip(a, b))
        return (0.0 if same else 1.0), 0.5

    def check_duality_smoke():
        model = ll.reference_params(2)
        phi = TestFunction.gaussian(2, model.rho)
        cfg_s = sim.SimConfig(trotter_n=8, replicates=400, seed=7)
        mu = sim.ParticleCloud.point_mass(np.array([1.0, 0.0]))
        clouds = sim.simulate_replicates(mu, 0.25, model, cfg_s)
        est = sim.estimate_laplace(clouds, phi)
        sol = ll.trotter_solve(model, phi, 0.25, 8)
        target = math.exp(-sol.at(0.25)(1.0))
        return abs(est.z_score(target)), 4.0

    yield ("specfun_k0_vs_oracle", *check_k0())
    yield ("kernel_sandwich_violations", *check_sandwich())
    yield ("kernel_heat_equation_residual", *check_heat_eq())
    yield ("field_chapman_kolmogorov", *check_chapman())
    yield ("loglaplace_csb_and_inequality", *check_csb())
    yield ("simulate_seed_determinism", *check_determinism())
    yield ("simulate_duality_z", *check_duality_smoke())


def _run_verify(cfg: RunConfig) -> dict:
    results = []
    all_ok = True
    for name, measured, tol in _verify_checks(cfg):
        ok = measured <= tol
        all_ok &= ok
        results.append({"check": name, "measured": float(measured),
                        "tolerance": float(tol),
                        "status": "pass" if ok else "FAIL"})
        print(f"{name:40s} {measured:12.4g} <= {tol:8.3g}  "
              f"{'pass' if ok else 'FAIL'}")
    path = os.path.join(cfg.out, "verify.json")
    _write_summary(path, cfg, {"results": results,
                               "status": "pass" if all_ok else "fail"})
    return {"artifacts": [path], "ok": all_ok}


_EXPERIMENTS = {
    "kernel": _run_kernel,
    "flow": _run_flow,
    "solve": _run_solve,
    "simulate": _run_simulate,
    "verify": _run_verify,
}


def run_experiment(cfg: RunConfig) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    _apply_threads(cfg.threads)
    t0 = time.time()
    result = _EXPERIMENTS[cfg.experiment](cfg)
    result["runtime_s"] = round(time.time() - t0, 3)
    print(json.dumps({"experiment": cfg.experiment, **result}, default=float))
    if cfg.experiment == "verify" and not result.get("ok", False):
        return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument surface
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pointbirth",
        description="Singular-kernel flows, log-Laplace solvers, and "
                    "branching-particle Monte Carlo (d = 2, 3).")
    parser.add_argument("--config", help="path to a JSON config file")
    parser.add_argument("--seed", type=int, help="override the RNG seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--threads", type=int,
                        help="thread budget (or POINTBIRTH_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("kernel", "flow", "simulate", "verify"):
        sub.add_parser(name)
    solve = sub.add_parser("solve")
    solve.add_argument("--method", choices=("picard", "trotter"))
    solve.add_argument("--n", type=int, help="splitting level for trotter")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.config:
            with open(args.config) as fh:
                text = fh.read()
        else:
            text = "{}"
        raw = json.loads(text) if text.strip() else {}
        if not isinstance(raw, dict):
            raise ConfigError(["top level: must be a JSON object"])
        raw["experiment"] = args.command
        if getattr(args, "method", None):
            raw["method"] = args.method
        if getattr(args, "n", None):
            raw["n"] = args.n
            raw["method"] = raw.get("method", "trotter")
        if args.out:
            raw["out"] = args.out
        threads = args.threads or int(os.environ.get("POINTBIRTH_THREADS", 0))
        if threads:
            raw["threads"] = threads
        cfg = parse_config(json.dumps(raw))
        if args.seed is not None:
            cfg.sim = dataclasses.replace(cfg.sim, seed=args.seed)
        return run_experiment(cfg)
    except ConfigError as exc:
        json.dump({"error": "config", "details": exc.errors}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_CONFIG
    except _NUMERIC_ERRORS as exc:
        json.dump({"error": "nonconvergence", "type": type(exc).__name__,
                   "details": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
