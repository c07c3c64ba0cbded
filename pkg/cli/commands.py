"""
Command-line drivers: abc, sweep-d, portfolio, sweep-rho and mc-check
"""
import argparse
import logging
import math
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from cli.writers import (failure_row, fmt12, hedge_solution_to_dict, moment_data_to_dict,
                         selection_header, selection_row, write_csv, write_json)
from database.moment_cache import MomentCache
from models.config_models import (DEFAULT_RHO_GRID, ExperimentConfig, load_claims, load_experiment,
                                  load_params)
from models.data_models import ClaimSet, HestonParams, MomentData, SelectionStep, SimConfig
from models.errors import (ConfigError, HedgingError, InvalidParameters, OracleDisagreement,
                           QuadratureFailure)
from pricing.claims import neuberger_portfolio
from pricing.fourier_engine import QuadratureSettings, compute_moments, reciprocal_condition
from simulation.mc_oracle import compare_with_analytic, estimate_moments, realized_error
from solver.hedge_solver import (hedging_error, nonneg_constraints, solve_constrained,
                                 solve_unconstrained)
from solver.sparse_selector import SparseSelector

logger = logging.getLogger(__name__)

MAX_ABS_Z = 4.0
PORTFOLIO_D = [3, 6, 12]
RHO_SWEEP_D = [0, 3, 6, 12]
EXACT_METHODS = ("leaps_and_bounds", "brute_force")


def _csv_list(cast):
    def parse(text: str):
        try:
            return [cast(x) for x in text.split(",") if x.strip()]
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e))
    return parse


LIST_FLAGS = ("--methods", "--d-list", "--lambda-grid", "--rho-grid")


def join_list_values(argv: Sequence[str]) -> List[str]:
    """Glue each list flag to its value so that "--rho-grid -0.9,0.9" is not read as two options."""
    out: List[str] = []
    it = iter(argv)
    for token in it:
        if token in LIST_FLAGS:
            value = next(it, None)
            out.append(token if value is None else f"{token}={value}")
        else:
            out.append(token)
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--experiment", help="Experiment JSON; explicit flags override its fields.")
    common.add_argument("--params", help="Heston parameter JSON (kappa, lambda, rho, sigma, v0, s0, maturity).")
    common.add_argument("--claims", help="Claim set JSON; defaults to puts/calls on 50..150 step 5.")
    common.add_argument("--out", help="Output directory.")
    common.add_argument("--cache", help="Directory of the moment cache.")
    common.add_argument("--methods", type=_csv_list(str), help="Comma-separated selection methods.")
    common.add_argument("--d-max", type=int, help="Largest portfolio size in sweeps.")
    common.add_argument("--d-list", type=_csv_list(int), help="Portfolio sizes for portfolio and sweep-rho.")
    common.add_argument("--lambda-grid", type=_csv_list(float), help="LASSO penalties.")
    common.add_argument("--nonneg", action="store_true", default=None, help="Forbid short option positions.")
    common.add_argument("--rho-grid", type=_csv_list(float), help="Correlations for sweep-rho.")
    common.add_argument("--seed", type=int, help="Monte-Carlo seed.")
    common.add_argument("--paths", type=int, help="Monte-Carlo paths.")
    common.add_argument("--steps", type=int, help="Monte-Carlo steps per year.")
    common.add_argument("--no-richardson", action="store_true",
                        help="Monte-Carlo: report the plain Euler estimates without extrapolation.")
    common.add_argument("--time-nodes", type=int, help="Gauss-Legendre nodes of the time integrals.")
    common.add_argument("--workers", type=int, help="Worker processes for moment assembly and simulation.")
    common.add_argument("--lb-timeout", type=float, help="Seconds before Leaps-and-Bounds returns its incumbent.")
    common.add_argument("--residuals", action="store_true", default=None, help="mc-check: write per-path residuals.")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")

    p = argparse.ArgumentParser(prog="hedge", description="Variance-optimal semi-static hedging of a variance swap")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("abc", parents=[common], help="Compute A, B and C.")
    sub.add_parser("sweep-d", parents=[common], help="Hedging error against portfolio size.")
    sub.add_parser("portfolio", parents=[common], help="Optimal weights by strike.")
    sub.add_parser("sweep-rho", parents=[common], help="Hedging error against correlation.")
    sub.add_parser("mc-check", parents=[common], help="Compare analytic moments with Monte Carlo.")
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig(params_path="")
    mc = {"paths": cfg.sim.n_paths, "steps": cfg.sim.n_steps, "seed": cfg.sim.seed,
          "richardson": cfg.sim.richardson}
    if args.experiment:
        exp = load_experiment(args.experiment)
        base = Path(args.experiment).parent
        cfg.params_path = str(base / exp.params)
        cfg.claims_path = str(base / exp.claims) if exp.claims else None
        cfg.methods = list(exp.methods)
        cfg.d_max = exp.d_max
        cfg.d_list = exp.d_list
        cfg.lambda_grid = exp.lambda_grid
        cfg.rho_grid = exp.rho_grid or list(DEFAULT_RHO_GRID)
        cfg.nonneg = exp.nonneg
        cfg.out_dir = exp.out
        cfg.cache_dir = exp.cache
        cfg.constraints = exp.constraints
        cfg.time_nodes = exp.time_nodes
        cfg.workers = exp.workers
        mc = {"paths": exp.mc.paths, "steps": exp.mc.steps, "seed": exp.mc.seed,
              "richardson": exp.mc.richardson}

    overrides = {
        "params_path": args.params, "claims_path": args.claims, "out_dir": args.out,
        "cache_dir": args.cache, "methods": args.methods, "d_max": args.d_max, "d_list": args.d_list,
        "lambda_grid": args.lambda_grid, "nonneg": args.nonneg, "rho_grid": args.rho_grid,
        "time_nodes": args.time_nodes, "workers": args.workers, "lb_timeout": args.lb_timeout,
        "save_residuals": args.residuals,
    }
    for name, value in overrides.items():
        if value is not None:
            setattr(cfg, name, value)
    if args.no_richardson:
        mc["richardson"] = False
    for key, value in (("paths", args.paths), ("steps", args.steps), ("seed", args.seed)):
        if value is not None:
            mc[key] = value

    if not cfg.params_path:
        raise ConfigError("a parameter file is required (--params or --experiment)")
    try:
        cfg.sim = SimConfig(n_paths=mc["paths"], n_steps=mc["steps"], seed=mc["seed"],
                            richardson=mc["richardson"])
    except InvalidParameters as e:
        raise ConfigError(str(e)) from e
    return cfg


class Experiment:
    """Loaded inputs of one command run."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.params = load_params(cfg.params_path)
        if cfg.claims_path:
            self.claims = load_claims(cfg.claims_path)
        else:
            self.claims = ClaimSet.standard_grid(spot=self.params.s0)
        self.out = Path(cfg.out_dir)
        try:
            self.settings = QuadratureSettings(time_nodes=cfg.time_nodes, workers=cfg.workers)
        except InvalidParameters as e:
            raise ConfigError(str(e)) from e

    @property
    def n(self) -> int:
        return self.claims.n

    def validate(self, allow_unit_rho: bool = False):
        self.cfg.validate(self.n, allow_unit_rho=allow_unit_rho)

    def moments(self, params: Optional[HestonParams] = None) -> MomentData:
        cache = MomentCache(self.cfg.cache_dir)
        try:
            return compute_moments(params or self.params, self.claims, self.settings, cache)
        finally:
            cache.close()

    def d_range(self) -> List[int]:
        d_max = self.n if self.cfg.d_max is None else self.cfg.d_max
        return list(range(d_max + 1))

    def constraint_matrix(self) -> Optional[np.ndarray]:
        rows = []
        if self.cfg.nonneg:
            rows.append(nonneg_constraints(self.n))
        if self.cfg.constraints:
            rows.append(np.asarray(self.cfg.constraints, dtype=float))
        return np.vstack(rows) if rows else None


def _banner(title: str):
    print("=" * 50)
    print(title)
    print("=" * 50)


def full_set_solution(m: MomentData, constraints: Optional[np.ndarray]):
    if constraints is None:
        return solve_unconstrained(m)
    return solve_constrained(m, constraints)


def run_methods(m: MomentData, methods: Sequence[str], d_values: Sequence[int], nonneg: bool,
                lambda_grid=None, lb_timeout=None) -> Tuple[List[SelectionStep], List[Tuple[str, Optional[int], str]]]:
    """Steps of every requested method over d_values; failures are collected, not raised."""
    selector = SparseSelector(m, nonneg)
    d_max = max(d_values)
    steps: List[SelectionStep] = []
    failures: List[Tuple[str, Optional[int], str]] = []
    for method in methods:
        started = time.perf_counter()
        try:
            if method in EXACT_METHODS:
                for d in d_values:
                    try:
                        if method == "brute_force":
                            steps.append(selector.brute_force(d))
                        else:
                            steps.append(selector.leaps_and_bounds(d, timeout=lb_timeout))
                    except HedgingError as e:
                        logger.error("%s failed at d=%d: %s", method, d, e)
                        failures.append((method, d, str(e)))
            elif method == "greedy_forward":
                steps.extend(selector.greedy_forward(d_max).steps)
            elif method == "greedy_backward":
                steps.extend(s for s in selector.greedy_backward().steps if s.d <= d_max)
            elif method == "lasso":
                steps.extend(s for s in selector.lasso_path(lambda_grid).steps if s.d <= d_max)
        except HedgingError as e:
            logger.error("%s failed: %s", method, e)
            failures.append((method, None, str(e)))
        logger.info("%s finished in %.2fs", method, time.perf_counter() - started)
    return steps, failures


def cmd_abc(cfg: ExperimentConfig) -> MomentData:
    exp = Experiment(cfg)
    exp.validate()
    m = exp.moments()
    write_json(exp.out / "moments.json", moment_data_to_dict(m))

    meta = m.quad_meta
    max_err = max([0.0] + list(meta.get("B_abs_err", [])) + [e for row in meta.get("C_abs_err", []) for e in row])
    _banner("MOMENTS")
    print(f"swap rate k*          {m.k_star:.6f}")
    print(f"A                     {m.A:.10g}")
    print(f"sqrt(A)/k*            {math.sqrt(m.A) / m.k_star:.4%}")
    print(f"options               {m.n}")
    print(f"rcond(C)              {reciprocal_condition(m.C):.3e}")
    print(f"max quadrature error  {max_err:.2e}")
    print(f"min eig [[A,B],[B,C]] {meta.get('min_eig_extended', float('nan')):.3e}")
    return m


def cmd_sweep_d(cfg: ExperimentConfig) -> List[SelectionStep]:
    exp = Experiment(cfg)
    exp.validate()
    m = exp.moments()
    d_values = exp.d_range()
    steps, failures = run_methods(m, cfg.methods, d_values, cfg.nonneg, cfg.lambda_grid, cfg.lb_timeout)

    rows = [selection_row(s, exp.claims.strikes) for s in steps]
    rows += [failure_row(method, d, msg, m.n) for method, d, msg in failures]

    v_nb = neuberger_portfolio(exp.claims, exp.params.s0)
    eps2_nb = hedging_error(v_nb, m)
    nb = SelectionStep(d=int(np.count_nonzero(v_nb)), support=tuple(int(i) for i in np.flatnonzero(v_nb)),
                       v=v_nb, eps2=eps2_nb, rel_err=math.sqrt(eps2_nb) / m.k_star, method="neuberger",
                       wall_time=0.0)
    rows.append(selection_row(nb, exp.claims.strikes))

    try:
        full = full_set_solution(m, exp.constraint_matrix())
        full_step = SelectionStep(d=m.n, support=tuple(range(m.n)), v=full.v, eps2=full.eps2, rel_err=full.rel_err,
                                  method=f"full_{full.method}", wall_time=0.0)
        rows.append(selection_row(full_step, exp.claims.strikes))
        write_json(exp.out / "full_solution.json", hedge_solution_to_dict(full, m.labels))
    except HedgingError as e:
        logger.error("full-set solve failed: %s", e)
        rows.append(failure_row("full", m.n, str(e), m.n))

    write_csv(exp.out / "sweep_d.csv", selection_header(m.labels), rows)

    _banner("RELATIVE HEDGING ERROR")
    for method in cfg.methods:
        picked = {}
        for s in steps:
            if s.method == method and s.d in (0, 3, 6, m.n):
                picked[s.d] = s.rel_err
        if picked:
            print(f"{method:18s} " + "  ".join(f"d={d}: {r:.2%}" for d, r in sorted(picked.items())))
    print(f"{'neuberger':18s} d={nb.d}: {nb.rel_err:.2%}")
    return steps


def log_log_slope(strikes: Sequence[float], weights: Sequence[float]) -> Optional[float]:
    """Least-squares slope of log(weight) against log(strike) over positive weights."""
    k = np.asarray(strikes, dtype=float)
    w = np.asarray(weights, dtype=float)
    active = w > 0
    if active.sum() < 2:
        return None
    return float(np.polyfit(np.log(k[active]), np.log(w[active]), 1)[0])


def cmd_portfolio(cfg: ExperimentConfig) -> Dict[Tuple[str, int], SelectionStep]:
    exp = Experiment(cfg)
    exp.validate()
    m = exp.moments()
    d_values = [d for d in (cfg.d_list or PORTFOLIO_D) if d <= m.n]
    if not d_values:
        raise ConfigError(f"no portfolio size in {cfg.d_list or PORTFOLIO_D} fits {m.n} options")
    steps, failures = run_methods(m, cfg.methods, list(range(max(d_values) + 1)), cfg.nonneg,
                                  cfg.lambda_grid, cfg.lb_timeout)

    chosen: Dict[Tuple[str, int], SelectionStep] = {}
    for s in steps:
        if s.d in d_values:
            chosen[(s.method, s.d)] = s
    v_nb = neuberger_portfolio(exp.claims, exp.params.s0)

    rows, slopes = [], []
    for (method, d), s in sorted(chosen.items()):
        for i, c in enumerate(exp.claims.supplementary):
            w = s.v[i]
            rows.append([method, d, c.kind.value, c.strike, math.log(c.strike), w,
                         math.log(w) if w > 0 else None, v_nb[i]])
        slope = log_log_slope(exp.claims.strikes, s.v)
        slopes.append([method, d, int(np.count_nonzero(s.v)), slope, s.rel_err])
    slopes.append(["neuberger", int(np.count_nonzero(v_nb)), int(np.count_nonzero(v_nb)),
                   log_log_slope(exp.claims.strikes, v_nb), None])
    for method, d, msg in failures:
        logger.warning("%s d=%s skipped: %s", method, d, msg)

    write_csv(exp.out / "portfolio.csv",
              ["method", "d", "kind", "strike", "log_strike", "weight", "log_weight", "neuberger_weight"], rows)
    write_csv(exp.out / "portfolio_slopes.csv", ["method", "d", "n_active", "slope", "rel_err"], slopes)

    _banner("PORTFOLIOS")
    for method, d, n_active, slope, rel in slopes:
        slope_txt = "n/a" if slope is None else f"{slope:.3f}"
        print(f"{method:18s} d={d:<3d} active={n_active:<3d} log-log slope {slope_txt}")
    return chosen


def semicircle_fit(rhos: Sequence[float], errors: Sequence[float]) -> Tuple[float, float]:
    """c minimising sum (e - c sqrt(1 - rho^2))^2 and the max relative deviation from the fit."""
    s = np.sqrt(1 - np.asarray(rhos, dtype=float) ** 2)
    e = np.asarray(errors, dtype=float)
    c = float(e @ s / (s @ s))
    fit = c * s
    with np.errstate(divide="ignore", invalid="ignore"):
        dev = np.where(fit > 0, np.abs(e - fit) / fit, 0.0)
    return c, float(dev.max(initial=0.0))


def cmd_sweep_rho(cfg: ExperimentConfig) -> Dict[int, Tuple[float, float]]:
    exp = Experiment(cfg)
    exp.validate()
    d_values = sorted({d for d in (cfg.d_list or RHO_SWEEP_D) if d <= exp.n})
    method = next((mt for mt in cfg.methods if mt in EXACT_METHODS), "leaps_and_bounds")

    rows = []
    by_d: Dict[int, List[Tuple[float, float]]] = {}
    for rho in cfg.rho_grid:
        logger.info("rho = %g", rho)
        m = exp.moments(exp.params.with_rho(rho))
        steps, failures = run_methods(m, [method], d_values, cfg.nonneg, lb_timeout=cfg.lb_timeout)
        for s in steps:
            rows.append([rho, s.d, s.method, s.rel_err])
            by_d.setdefault(s.d, []).append((rho, s.rel_err))
        for name, d, msg in failures:
            rows.append([rho, d, name, None])
        try:
            full = full_set_solution(m, exp.constraint_matrix())
            rows.append([rho, m.n, f"full_{full.method}", full.rel_err])
        except HedgingError as e:
            logger.error("full-set solve failed at rho=%g: %s", rho, e)
            rows.append([rho, m.n, "full", None])

    write_csv(exp.out / "sweep_rho.csv", ["rho", "d", "method", "rel_err"], rows)

    fits = {}
    fit_rows = []
    for d, points in sorted(by_d.items()):
        rhos, errs = zip(*points)
        c, dev = semicircle_fit(rhos, errs)
        fits[d] = (c, dev)
        fit_rows.append([d, c, dev])
    write_csv(exp.out / "rho_fit.csv", ["d", "c_d", "max_rel_dev"], fit_rows)

    _banner("SEMICIRCLE FIT rel_err = c_d sqrt(1 - rho^2)")
    for d, (c, dev) in fits.items():
        print(f"d={d:<3d} c_d={fmt12(c)}  max deviation {dev:.2%}")
    return fits


def cmd_mc_check(cfg: ExperimentConfig) -> Dict:
    exp = Experiment(cfg)
    exp.validate()
    m = exp.moments()
    sample = estimate_moments(exp.params, exp.claims, cfg.sim, workers=cfg.workers)
    entries = compare_with_analytic(m, sample)
    max_z = max(abs(e["z"]) for e in entries)

    optimal = solve_unconstrained(m)
    realized, realized_se = realized_error(optimal.v, exp.params, exp.claims, cfg.sim, workers=cfg.workers)
    report = {
        "seed": cfg.sim.seed,
        "config": {"paths": cfg.sim.n_paths, "steps": cfg.sim.n_steps, "scheme": cfg.sim.scheme,
                   "batch_size": cfg.sim.batch_size, "u_nodes": cfg.sim.n_u_nodes,
                   "jackknife_groups": cfg.sim.jackknife_groups,
                   "richardson": cfg.sim.richardson},
        "params_hash": m.params_hash,
        "entries": entries,
        "residual_means": [{"entry": name, "mean": float(mu), "se": float(se)}
                           for name, mu, se in zip(["L0"] + list(m.labels), sample.mean, sample.mean_se)],
        "realized_error": {"eps2": realized, "se": realized_se, "analytic_eps2": optimal.eps2,
                           "rel_err": math.sqrt(realized) / m.k_star},
        "max_abs_z": max_z,
    }
    write_json(exp.out / "mc_check.json", report)
    if cfg.save_residuals:
        write_csv(exp.out / "residuals.csv", ["L0"] + list(m.labels),
                  np.column_stack([sample.L0, sample.L]).tolist())

    _banner("MONTE-CARLO CHECK")
    for e in entries:
        flag = "  <--" if abs(e["z"]) > MAX_ABS_Z else ""
        print(f"{e['entry']:16s} analytic {e['analytic']:.6e}  mc {e['mc']:.6e}  z {e['z']:+.2f}{flag}")
    print(f"realized rel_err {report['realized_error']['rel_err']:.2%} (analytic {optimal.rel_err:.2%})")

    if max_z > MAX_ABS_Z:
        raise OracleDisagreement(f"max |z| = {max_z:.2f} exceeds {MAX_ABS_Z}")
    return report


COMMANDS = {
    "abc": cmd_abc,
    "sweep-d": cmd_sweep_d,
    "portfolio": cmd_portfolio,
    "sweep-rho": cmd_sweep_rho,
    "mc-check": cmd_mc_check,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    args = build_parser().parse_args(join_list_values(argv))
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = config_from_args(args)
        COMMANDS[args.command](cfg)
    except ConfigError as e:
        logger.error("configuration error: %s", e)
        return 2
    except QuadratureFailure as e:
        logger.error("quadrature failure: %s", e)
        return 3
    except OracleDisagreement as e:
        logger.error("oracle disagreement: %s", e)
        return 4
    except HedgingError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 1
    return 0
