"""Command-line front end: solve, sweep, simulate, confidence-density.

Configs are JSON (schema in docs/config_schema.md); outputs are CSV with a
stable, golden-tested column set and full double precision (shortest
round-trip formatting). Exit codes: 0 success, 2 config error,
3 convergence failure, 4 simulation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

from .channels import ChannelSpec, training_loss
from .errors import ConfigError, RfensembleError
from .observables import (
    EnsembleCovariance,
    classification_error_avg,
    classification_error_bar,
    confidence_density,
    disagreement_probability,
    mse_test_error,
)
from .quadrature import gauss_hermite_rule
from .solver import (
    FixedPoint,
    ModelConfig,
    SolveOptions,
    solve_fixed_point,
    solve_kernel_limit,
    warm_options,
)
from .spectrum import activation_coeffs, empirical_spectral_model, mp_spectral_model
from . import erm_lab

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3
EXIT_SIMULATION = 4

ACTIVATIONS = {
    "erf": erf,
    "identity": lambda x: x,
    "tanh": np.tanh,
}

SWEEP_AXES = ("p_over_n", "alpha", "lambda", "K", "delta")


def _require(cfg: dict, key: str, path: str = ""):
    if key not in cfg:
        raise ConfigError(f"missing field {path + key!r} in config")
    return cfg[key]


@dataclass
class TheoryProblem:
    """Parsed scalar problem: everything but the swept axis."""

    loss: str
    teacher: str
    activation_name: str
    rho: float
    lam: float
    n_over_d: float
    K_list: list
    kernel: bool = False
    spectrum_kind: str = "closed_form_mp"
    spectrum_seed: int = 0
    spectrum_p: int = 2000

    def spec(self) -> ChannelSpec:
        return ChannelSpec(loss=self.loss, teacher=self.teacher)

    def coeffs(self):
        return activation_coeffs(ACTIVATIONS[self.activation_name], gauss_hermite_rule(201))


def parse_problem(cfg: dict) -> TheoryProblem:
    loss = _require(cfg, "loss")
    teacher = cfg.get("teacher", "linear" if loss == "square" else "sign")
    activation_name = cfg.get("activation", "erf")
    if activation_name not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation_name!r}; known: {sorted(ACTIVATIONS)}")
    k_raw = cfg.get("K", [1])
    if not isinstance(k_raw, list):
        k_raw = [k_raw]
    K_list = []
    for k in k_raw:
        if k == "inf":
            K_list.append("inf")
        elif isinstance(k, int) and k >= 1:
            K_list.append(k)
        else:
            raise ConfigError(f"K entries must be positive integers or 'inf', got {k!r}")
    return TheoryProblem(
        loss=loss,
        teacher=teacher,
        activation_name=activation_name,
        rho=float(_require(cfg, "rho")),
        lam=float(_require(cfg, "lambda")),
        n_over_d=float(cfg.get("n_over_d", 2.0)),
        K_list=K_list,
        kernel=bool(cfg.get("kernel", False)),
        spectrum_kind=cfg.get("spectrum", "closed_form_mp"),
        spectrum_seed=int(cfg.get("spectrum_seed", 0)),
        spectrum_p=int(cfg.get("spectrum_p", 2000)),
    )


def solve_options_from(cfg: dict, args) -> SolveOptions:
    opts = SolveOptions(
        damping=float(cfg.get("damping", 0.5)),
        tol=float(cfg.get("tol", 1e-9)),
        max_iters=int(cfg.get("max_iters", 50000)),
        order_1d=int(cfg.get("order_1d", 101)),
        order_2d=int(cfg.get("order_2d", 61)),
    )
    if getattr(args, "tol", None) is not None:
        opts = replace(opts, tol=args.tol)
    if getattr(args, "damping", None) is not None:
        opts = replace(opts, damping=args.damping)
    return opts


def _build_model(problem: TheoryProblem, alpha: float, K: int) -> ModelConfig:
    gamma = alpha / problem.n_over_d
    coeffs = problem.coeffs()
    if problem.spectrum_kind == "closed_form_mp":
        spectrum = mp_spectral_model(alpha, gamma, coeffs)
    elif problem.spectrum_kind == "empirical":
        p = problem.spectrum_p
        spectrum = empirical_spectral_model(problem.spectrum_seed, p, max(int(round(p * gamma)), 1), coeffs)
    else:
        raise ConfigError(f"unknown spectrum kind {problem.spectrum_kind!r}")
    return ModelConfig(
        alpha=alpha, gamma=gamma, rho=problem.rho, lam=problem.lam,
        K=K, spec=problem.spec(), spectrum=spectrum, coeffs=coeffs,
    )


def _solve_theory_point(problem: TheoryProblem, axis: str, value, opts: SolveOptions) -> FixedPoint:
    if problem.kernel or axis == "delta":
        delta = float(value) if axis == "delta" else problem.n_over_d
        return solve_kernel_limit(delta, problem.rho, problem.lam, problem.spec(), problem.coeffs(), opts)
    if axis == "p_over_n":
        alpha = 1.0 / float(value)
    elif axis == "alpha":
        alpha = float(value)
    else:
        raise ConfigError(f"axis {axis!r} cannot drive the theory solve")
    finite_K = [k for k in problem.K_list if k != "inf"]
    K = finite_K[0] if finite_K else 1
    model = _build_model(problem, alpha, K)
    return solve_fixed_point(model, opts)


def observable_row(problem: TheoryProblem, fp: FixedPoint) -> dict:
    params = fp.params
    row: dict = {}
    for K in problem.K_list:
        label = f"eps_g_K{K}"
        if problem.loss == "square":
            if K == "inf":
                row[label] = problem.rho + params.q1 - 2 * params.m
            else:
                cov = EnsembleCovariance.from_params(params, problem.rho, int(K))
                row[label] = mse_test_error(cov)[0]
        else:
            if K == "inf":
                row[label] = classification_error_bar(problem.rho, params.m, params.q1)
            else:
                cov = EnsembleCovariance.from_params(params, problem.rho, int(K))
                row[label] = classification_error_avg(cov)
    if problem.loss == "square":
        cov1 = EnsembleCovariance.from_params(params, problem.rho, 1)
        eps_g, eps_bar, delta_eps = mse_test_error(cov1)
    else:
        eps_bar = classification_error_bar(problem.rho, params.m, params.q1)
        cov1 = EnsembleCovariance.from_params(params, problem.rho, 1)
        eps_g = classification_error_avg(cov1)
        delta_eps = eps_g - eps_bar
    row["eps_bar"] = eps_bar
    row["delta_eps"] = delta_eps
    row["disagreement"] = disagreement_probability(params.q0, params.q1)
    row["q1_over_q0"] = params.q1 / params.q0
    return row


def cmd_solve(args) -> int:
    cfg = _load_config(args.config)
    problem = parse_problem(cfg)
    opts = solve_options_from(cfg, args)
    if problem.kernel:
        fp = solve_kernel_limit(problem.n_over_d, problem.rho, problem.lam, problem.spec(), problem.coeffs(), opts)
    else:
        alpha = float(_require(cfg, "alpha")) if "alpha" in cfg else 1.0 / float(_require(cfg, "p_over_n"))
        finite_K = [k for k in problem.K_list if k != "inf"]
        model = _build_model(problem, alpha, finite_K[0] if finite_K else 1)
        fp = solve_fixed_point(model, opts)
    payload = fp.as_dict()
    payload["observables"] = observable_row(problem, fp)
    try:
        payload["train_loss"] = training_loss(fp.params, fp.conj, problem.rho, problem.spec())
    except RfensembleError:
        payload["train_loss"] = math.nan
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK if fp.converged else EXIT_NO_CONVERGENCE


THEORY_COLUMNS = ["axis", "value", "m", "q0", "q1", "v", "m_hat", "q0_hat", "q1_hat", "v_hat", "status", "iterations"]


def sweep_rows(cfg: dict, args) -> tuple[list, list, TheoryProblem]:
    problem = parse_problem(cfg)
    axis = _require(cfg, "axis")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    grid = _require(cfg, "grid")
    if not isinstance(grid, list) or not grid:
        raise ConfigError("grid must be a nonempty list")
    diffs = np.diff(np.asarray(grid, dtype=float))
    if len(grid) > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise ConfigError("grid must be strictly monotone")
    if axis == "delta" and not problem.kernel:
        raise ConfigError("axis 'delta' requires kernel mode")
    opts = solve_options_from(cfg, args)
    if axis in ("lambda", "K") and not problem.kernel and "alpha" not in cfg and "p_over_n" not in cfg:
        raise ConfigError(f"axis {axis!r} sweeps need a fixed 'alpha' or 'p_over_n' in the config")
    rows, fps = [], []
    for value in grid:
        if axis == "lambda":
            point_problem = replace(problem, lam=float(value))
            if point_problem.kernel:
                fp = _solve_theory_point(point_problem, "delta", point_problem.n_over_d, opts)
            elif "p_over_n" in cfg:
                fp = _solve_theory_point(point_problem, "p_over_n", cfg["p_over_n"], opts)
            else:
                fp = _solve_theory_point(point_problem, "alpha", cfg["alpha"], opts)
        elif axis == "K":
            point_problem = replace(problem, K_list=[int(value)])
            alpha = float(cfg["alpha"]) if "alpha" in cfg else 1.0 / float(cfg["p_over_n"])
            fp = _solve_theory_point(point_problem, "alpha", alpha, opts)
        else:
            point_problem = problem
            fp = _solve_theory_point(problem, axis, value, opts)
        opts = warm_options(opts, fp)
        row = {
            "axis": axis,
            "value": value,
            "m": fp.params.m,
            "q0": fp.params.q0,
            "q1": fp.params.q1,
            "v": fp.params.v,
            "m_hat": fp.conj.m_hat,
            "q0_hat": fp.conj.q0_hat,
            "q1_hat": fp.conj.q1_hat,
            "v_hat": fp.conj.v_hat,
            "status": fp.status,
            "iterations": fp.iterations,
        }
        row.update(observable_row(point_problem, fp))
        rows.append(row)
        fps.append(fp)
    return rows, fps, problem


def _theory_columns(problem: TheoryProblem) -> list:
    return THEORY_COLUMNS + [f"eps_g_K{K}" for K in problem.K_list] + [
        "eps_bar", "delta_eps", "disagreement", "q1_over_q0",
    ]


def _write_csv(path: str, columns: Sequence[str], rows: Sequence[dict]) -> None:
    def fmt(value):
        if isinstance(value, (float, np.floating)):
            return repr(float(value))
        return value

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(row.get(c, "")) for c in columns])


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    rows, fps, problem = sweep_rows(cfg, args)
    out = args.out or _require(cfg, "out")
    _write_csv(out, _theory_columns(problem), rows)
    if not all(fp.converged for fp in fps):
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


SIM_EXTRA_COLUMNS = [
    "emp_m", "emp_m_se", "emp_q0", "emp_q0_se", "emp_q1", "emp_q1_se",
    "emp_test_error", "emp_test_error_se", "emp_train_loss", "emp_train_loss_se",
    "emp_disagreement", "emp_disagreement_se", "trials", "failures",
    "z_m", "z_q0", "z_q1", "z_test_error", "sim_status",
]


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    sim = _require(cfg, "simulate")
    trials = int(_require(sim, "trials", "simulate."))
    rows, fps, problem = sweep_rows(cfg, args)
    axis = _require(cfg, "axis")
    # a degenerate simulate block produces exactly the theory-only sweep file
    columns = _theory_columns(problem) + (SIM_EXTRA_COLUMNS if trials > 0 else [])
    out = args.out or _require(cfg, "out")
    sim_failed = False
    if trials > 0:
        executor = None
        map_fn = map
        if args.jobs and args.jobs > 1:
            executor = ProcessPoolExecutor(max_workers=args.jobs)
            map_fn = executor.map
        try:
            for row, fp in zip(rows, fps):
                try:
                    row.update(_simulate_point(problem, sim, axis, row["value"], fp, args.seed, map_fn))
                except RfensembleError as exc:
                    row["sim_status"] = f"failed: {exc}"
                    sim_failed = True
        finally:
            if executor is not None:
                executor.shutdown()
    _write_csv(out, columns, rows)
    if sim_failed:
        return EXIT_SIMULATION
    if not all(fp.converged for fp in fps):
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def _simulate_point(problem: TheoryProblem, sim: dict, axis: str, value, fp: FixedPoint, seed_flag, map_fn) -> dict:
    if problem.kernel:
        raise ConfigError("simulate runs at finite sizes; kernel mode has no (n, p, d)")
    if axis == "p_over_n":
        alpha = 1.0 / float(value)
    elif axis == "alpha":
        alpha = float(value)
    else:
        raise ConfigError(f"simulate cannot map axis {axis!r} onto integer sizes")
    d = int(_require(sim, "d", "simulate."))
    n = int(round(d * problem.n_over_d))
    p = int(round(n / alpha))
    trials = int(sim["trials"])
    master_seed = int(seed_flag if seed_flag is not None else sim.get("seed", 0))
    estimator = sim.get("estimator")
    result = erm_lab.run_experiment(
        problem.spec(), problem.coeffs(), n=n, p=p, d=d,
        K=max([k for k in problem.K_list if k != "inf"], default=1),
        rho=problem.rho, lam=problem.lam, trials=trials, master_seed=master_seed,
        estimator=estimator, activation=ACTIVATIONS[problem.activation_name],
        test_samples=int(sim.get("test_samples", erm_lab.DEFAULT_TEST_SAMPLES)),
        seeds=sim.get("seeds"),
        map_fn=map_fn,
    )
    agg = result.aggregate()
    theory = observable_row(problem, fp)
    K_emp = max([k for k in problem.K_list if k != "inf"], default=1)
    theory_eps = theory.get(f"eps_g_K{K_emp}", math.nan)
    out = {
        "emp_m": agg["m"]["mean"], "emp_m_se": agg["m"]["std_error"],
        "emp_q0": agg["q0"]["mean"], "emp_q0_se": agg["q0"]["std_error"],
        "emp_q1": agg["q1"]["mean"], "emp_q1_se": agg["q1"]["std_error"],
        "emp_test_error": agg["test_error"]["mean"], "emp_test_error_se": agg["test_error"]["std_error"],
        "emp_train_loss": agg["train_loss"]["mean"], "emp_train_loss_se": agg["train_loss"]["std_error"],
        "emp_disagreement": agg["disagreement"]["mean"], "emp_disagreement_se": agg["disagreement"]["std_error"],
        "trials": trials, "failures": agg["failures"],
        "sim_status": "ok" if agg["failures"] == 0 else f"{agg['failures']} failed trials",
    }
    for name, theory_val in (("m", fp.params.m), ("q0", fp.params.q0), ("q1", fp.params.q1), ("test_error", theory_eps)):
        se = out[f"emp_{name}_se"]
        emp = out[f"emp_{name}"]
        out[f"z_{name}"] = abs(theory_val - emp) / se if se and math.isfinite(emp) else math.nan
    return out


def cmd_confidence_density(args) -> int:
    cfg = _load_config(args.config)
    problem = parse_problem(cfg)
    if problem.loss == "square":
        raise ConfigError("confidence density is defined for the classification losses")
    opts = solve_options_from(cfg, args)
    alpha = float(_require(cfg, "alpha")) if "alpha" in cfg else 1.0 / float(_require(cfg, "p_over_n"))
    finite_K = [k for k in problem.K_list if k != "inf"]
    model = _build_model(problem, alpha, finite_K[0] if finite_K else 2)
    fp = solve_fixed_point(model, opts)
    if not fp.converged:
        return EXIT_NO_CONVERGENCE
    resolution = int(cfg.get("resolution", 64))
    eps = 1.0 / (resolution + 1)
    grid = np.linspace(eps, 1 - eps, resolution)
    dens = confidence_density(fp.params.q0, fp.params.q1, grid)
    out = args.out or _require(cfg, "out")
    with open(out, "w", newline="") as fh:
        fh.write(f"# q0={float(fp.params.q0)!r} q1={float(fp.params.q1)!r} p_over_n={1.0 / alpha!r}\n")
        writer = csv.writer(fh)
        writer.writerow(["phi"] + [repr(float(g)) for g in grid])
        for i, g in enumerate(grid):
            writer.writerow([repr(float(g))] + [repr(float(x)) for x in dens[i]])
    return EXIT_OK


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rfensemble",
        description="Solve the asymptotic fixed point for ensembles of random-feature GLMs and compare against finite-size training runs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("solve", cmd_solve),
        ("sweep", cmd_sweep),
        ("simulate", cmd_simulate),
        ("confidence-density", cmd_confidence_density),
    ):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", default=None)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--tol", type=float, default=None)
        sp.add_argument("--damping", type=float, default=None)
        sp.set_defaults(fn=fn)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RfensembleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION if args.command == "simulate" else EXIT_NO_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
