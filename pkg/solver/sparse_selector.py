"""
Cardinality-constrained hedging: choose at most d of the n options.

Exact methods (enumeration, Leaps-and-Bounds) and heuristics (greedy
forward/backward, LASSO by coordinate descent). Every reported error is
hedging_error of the reported weights on the full moment data.
"""
import itertools
import logging
import math
import time
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from models.data_models import MomentData, SelectionPath, SelectionStep
from models.errors import BudgetExceeded, InvalidParameters, RedundantAsset
from solver.hedge_solver import (hedging_error, nonneg_constraints, relative_hedge_contribution,
                                 solve_constrained, solve_unconstrained)

logger = logging.getLogger(__name__)

SUBSET_BUDGET = 2_000_000
MAX_LEAPS_ASSETS = 64
PRUNE_SLACK = 1e-9
LASSO_TOL = 1e-12
LASSO_MAX_SWEEPS = 20_000
LASSO_GRID_POINTS = 50
LASSO_GRID_DECADES = 6


def soft_threshold(x: float, t: float) -> float:
    return math.copysign(max(abs(x) - t, 0.0), x)


class SparseSelector:
    def __init__(self, m: MomentData, nonneg: bool = False):
        self.m = m
        self.n = m.n
        self.nonneg = nonneg
        self._solved: Dict[Tuple[int, ...], Tuple[np.ndarray, float]] = {}
        self._bounds: Dict[Tuple[int, ...], float] = {}

    def _rel(self, eps2: float) -> float:
        return math.sqrt(eps2) / self.m.k_star

    def solve_support(self, support: Sequence[int]) -> Tuple[np.ndarray, float]:
        """Optimal weights restricted to ``support`` (zeros elsewhere) and their error."""
        key = tuple(sorted(support))
        if key in self._solved:
            return self._solved[key]
        v = np.zeros(self.n)
        if key:
            sub = self.m.subset(key)
            if self.nonneg:
                sol = solve_constrained(sub, nonneg_constraints(len(key)))
            else:
                sol = solve_unconstrained(sub)
            v[list(key)] = sol.v
        result = (v, hedging_error(v, self.m))
        self._solved[key] = result
        return result

    def _unconstrained_error(self, support: Tuple[int, ...]) -> float:
        if support not in self._bounds:
            if not support:
                self._bounds[support] = self.m.A
            else:
                sol = solve_unconstrained(self.m.subset(support))
                self._bounds[support] = sol.eps2
        return self._bounds[support]

    def _step(self, d: int, support: Sequence[int], method: str, started: float,
              **extra) -> SelectionStep:
        v, eps2 = self.solve_support(support)
        return SelectionStep(d=d, support=tuple(sorted(support)), v=v, eps2=eps2, rel_err=self._rel(eps2),
                             method=method, wall_time=time.perf_counter() - started, **extra)

    def _check_d(self, d: int):
        if not 0 <= d <= self.n:
            raise InvalidParameters(f"cardinality d={d} outside [0, {self.n}]")

    def brute_force(self, d: int, budget: int = SUBSET_BUDGET) -> SelectionStep:
        self._check_d(d)
        count = math.comb(self.n, d)
        if count > budget:
            raise BudgetExceeded(f"{count} subsets of size {d} exceed the budget of {budget}")
        started = time.perf_counter()

        best_key = None
        for support in itertools.combinations(range(self.n), d):
            _, eps2 = self.solve_support(support)
            key = (eps2, support)
            if best_key is None or key < best_key:
                best_key = key
        return self._step(d, best_key[1], "brute_force", started)

    def single_asset_rhc(self) -> np.ndarray:
        m = self.m
        rhc = np.zeros(self.n)
        for i in range(self.n):
            if m.C[i, i] > 0 and m.A > 0:
                rhc[i] = m.B[i] ** 2 / (m.C[i, i] * m.A)
        return rhc

    def leaps_and_bounds(self, d: int, timeout: Optional[float] = None) -> SelectionStep:
        """Exact best subset of size d by branch and bound.

        Nodes include or exclude assets in order of decreasing single-asset
        RHC. The bound of a node is the unconstrained error of all assets it
        can still use.
        """
        self._check_d(d)
        if self.n > MAX_LEAPS_ASSETS:
            raise InvalidParameters(f"Leaps-and-Bounds supports at most {MAX_LEAPS_ASSETS} assets")
        started = time.perf_counter()
        rhc = self.single_asset_rhc()
        order = sorted(range(self.n), key=lambda i: (-rhc[i], i))
        slack = PRUNE_SLACK * self.m.A

        seed = self.greedy_forward(d).at(d).support
        best = [(self.solve_support(seed)[1], seed)]
        timed_out = [False]
        nodes = [0]

        def dfs(pos: int, included: List[int]):
            if timed_out[0]:
                return
            if timeout is not None and time.perf_counter() - started > timeout:
                timed_out[0] = True
                return
            nodes[0] += 1

            remaining = order[pos:]
            if len(included) + len(remaining) < d:
                return
            candidate = tuple(sorted(included + remaining))
            if self._unconstrained_error(candidate) > best[0][0] + slack:
                return

            if len(included) == d or len(candidate) == d:
                leaf = tuple(sorted(included)) if len(included) == d else candidate
                key = (self.solve_support(leaf)[1], leaf)
                if key < best[0]:
                    best[0] = key
                return

            dfs(pos + 1, included + [order[pos]])
            dfs(pos + 1, included)

        dfs(0, [])

        if timed_out[0]:
            logger.warning("Leaps-and-Bounds d=%d timed out after %d nodes; incumbent not certified", d, nodes[0])
        else:
            logger.debug("Leaps-and-Bounds d=%d explored %d nodes", d, nodes[0])
        return self._step(d, best[0][1], "leaps_and_bounds", started, certified=not timed_out[0])

    def _forward_score(self, active: List[int], i: int, current_eps2: float) -> float:
        if self.nonneg:
            if current_eps2 <= 0:
                return 0.0
            _, eps2 = self.solve_support(active + [i])
            return (current_eps2 - eps2) / current_eps2
        m = self.m
        sub = m.subset(active)
        newcol = (m.C[active, i], m.B[i], m.C[i, i])
        try:
            return relative_hedge_contribution(sub, newcol)
        except RedundantAsset:
            return 0.0

    def greedy_forward(self, d_max: Optional[int] = None) -> SelectionPath:
        d_max = self.n if d_max is None else d_max
        self._check_d(d_max)
        started = time.perf_counter()
        path = SelectionPath(method="greedy_forward")
        active: List[int] = []
        path.steps.append(self._step(0, active, path.method, started))

        for d in range(1, d_max + 1):
            current = self.solve_support(active)[1]
            best_i, best_score = None, -math.inf
            for i in range(self.n):
                if i in active:
                    continue
                score = self._forward_score(active, i, current)
                if score > best_score:
                    best_i, best_score = i, score
            active.append(best_i)
            path.steps.append(self._step(d, active, path.method, started))
        return path

    def greedy_backward(self) -> SelectionPath:
        started = time.perf_counter()
        path = SelectionPath(method="greedy_backward")
        active = list(range(self.n))
        path.steps.append(self._step(self.n, active, path.method, started))

        while active:
            best_i, best_eps2 = None, math.inf
            for i in active:
                _, eps2 = self.solve_support([j for j in active if j != i])
                if eps2 < best_eps2:
                    best_i, best_eps2 = i, eps2
            active.remove(best_i)
            path.steps.append(self._step(len(active), active, path.method, started))
        return path

    def default_lambda_grid(self) -> np.ndarray:
        b = np.maximum(self.m.B, 0.0) if self.nonneg else np.abs(self.m.B)
        lam_max = 2 * float(np.max(b, initial=0.0))
        if lam_max <= 0:
            return np.array([1.0])
        return lam_max * np.logspace(0, -LASSO_GRID_DECADES, LASSO_GRID_POINTS)

    def coordinate_descent(self, lam: float, v0: Optional[np.ndarray] = None,
                           max_sweeps: int = LASSO_MAX_SWEEPS) -> Tuple[np.ndarray, bool]:
        """Minimise v^T C v - 2 v^T B + lam |v|_1 (and v >= 0 when nonneg)."""
        C, B = self.m.C, self.m.B
        v = np.zeros(self.n) if v0 is None else np.array(v0, dtype=float)
        half = lam / 2
        for _ in range(max_sweeps):
            max_delta = 0.0
            for i in range(self.n):
                cii = C[i, i]
                if cii <= 0:
                    new = 0.0
                else:
                    r = B[i] - C[i] @ v + cii * v[i]
                    new = soft_threshold(r, half) / cii
                    if self.nonneg:
                        new = max(new, 0.0)
                max_delta = max(max_delta, abs(new - v[i]))
                v[i] = new
            if max_delta < LASSO_TOL:
                return v, True
        return v, False

    def lasso_path(self, lambdas: Optional[Iterable[float]] = None,
                   max_sweeps: int = LASSO_MAX_SWEEPS) -> SelectionPath:
        grid = self.default_lambda_grid() if lambdas is None else np.asarray(list(lambdas), dtype=float)
        if np.any(grid <= 0):
            raise InvalidParameters("LASSO penalties must be positive")
        started = time.perf_counter()
        path = SelectionPath(method="lasso")
        v = np.zeros(self.n)
        for lam in sorted(grid, reverse=True):
            v, converged = self.coordinate_descent(lam, v, max_sweeps)
            if not converged:
                logger.warning("coordinate descent did not converge at lambda=%.3e after %d sweeps",
                               lam, max_sweeps)
            support = tuple(int(i) for i in np.flatnonzero(v))
            eps2 = hedging_error(v, self.m)
            path.steps.append(SelectionStep(d=len(support), support=support, v=v.copy(), eps2=eps2,
                                            rel_err=self._rel(eps2), method=path.method,
                                            wall_time=time.perf_counter() - started,
                                            lam=float(lam), converged=converged))
        return path


def lasso_kkt_residual(v, m: MomentData, lam: float, nonneg: bool = False) -> float:
    """Subgradient optimality violation of v for the penalised problem."""
    v = np.asarray(v, dtype=float)
    grad = 2 * (m.C @ v - m.B)
    worst = 0.0
    for i, x in enumerate(v):
        if x != 0:
            worst = max(worst, abs(grad[i] + lam * math.copysign(1.0, x)))
        elif nonneg:
            worst = max(worst, max(-(grad[i] + lam), 0.0))
        else:
            worst = max(worst, max(abs(grad[i]) - lam, 0.0))
    return worst


def brute_force(m: MomentData, d: int, nonneg: bool = False, budget: int = SUBSET_BUDGET) -> SelectionStep:
    return SparseSelector(m, nonneg).brute_force(d, budget)


def leaps_and_bounds(m: MomentData, d: int, nonneg: bool = False,
                     timeout: Optional[float] = None) -> SelectionStep:
    return SparseSelector(m, nonneg).leaps_and_bounds(d, timeout)


def greedy_forward(m: MomentData, d_max: Optional[int] = None, nonneg: bool = False) -> SelectionPath:
    return SparseSelector(m, nonneg).greedy_forward(d_max)


def greedy_backward(m: MomentData, nonneg: bool = False) -> SelectionPath:
    return SparseSelector(m, nonneg).greedy_backward()


def lasso_path(m: MomentData, lambdas: Optional[Iterable[float]] = None, nonneg: bool = False) -> SelectionPath:
    return SparseSelector(m, nonneg).lasso_path(lambdas)
