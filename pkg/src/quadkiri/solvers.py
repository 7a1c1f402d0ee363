"""Derivative-free inverse-design baselines over the ratio field.

All solvers minimize a black-box objective over the box [0.1, 10]^d with a
shared tolerance-based stop rule (best-point movement and relative objective
improvement both small for `patience` consecutive iterations) plus a hard
evaluation cap. An iteration is one generation (CMA-ES, PSO), one proposal
batch (random restart) or one direction sweep (Powell).

The kirigami objective is 1 - reward: feasible decodes score 1 - alignedIoU,
a failed decode scores 1 + the failure penalty. The simulator runs for every
successful decode and #F counts exactly those calls.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    BoundaryAnchors,
    GridShape,
    RatioField,
    check_feasible,
    default_anchors,
    march_decode,
)
from .metrics import AlignConfig, MetricError, RewardConfig, reward, siou
from .raster import RasterConfig, SilhouetteMask, simulate

__all__ = [
    "StopRule",
    "SolverRun",
    "BestOfK",
    "InverseObjective",
    "solve_cmaes",
    "solve_pso",
    "solve_random_restart",
    "solve_powell",
    "solve_target",
    "best_of_k",
    "grid_sweep_bench",
    "SOLVER_IDS",
    "cma_lambda",
]

BOX_LO = 0.1
BOX_HI = 10.0
MAX_KEPT = 12

SOLVER_IDS = ("cmaes", "pso", "rrls", "powell")


@dataclass(frozen=True)
class StopRule:
    x_tol: float = 1e-3
    rel_obj_tol: float = 1e-3
    patience: int = 5
    max_evals: int = 1000

    def __post_init__(self) -> None:
        if min(self.x_tol, self.rel_obj_tol) <= 0 or self.patience < 1 or self.max_evals < 1:
            raise ValueError("stop rule parameters must be positive")


class _StopTracker:
    """Patience counter over per-iteration best-point movement and the run's
    relative objective improvement. Both must stay below tolerance for
    `patience` consecutive iterations; tracking the iteration's best point
    (not the incumbent) keeps exploration phases from triggering early."""

    def __init__(self, rule: StopRule) -> None:
        self.rule = rule
        self.prev_x: np.ndarray | None = None
        self.prev_f: float | None = None
        self.streak = 0

    def update(self, iter_best_x: np.ndarray, run_best_f: float) -> bool:
        if self.prev_x is not None:
            move = float(np.max(np.abs(iter_best_x - self.prev_x)))
            rel = (self.prev_f - run_best_f) / max(abs(self.prev_f), 1e-12)
            if move < self.rule.x_tol and rel < self.rule.rel_obj_tol:
                self.streak += 1
            else:
                self.streak = 0
        self.prev_x = iter_best_x.copy()
        self.prev_f = run_best_f
        return self.streak >= self.rule.patience


@dataclass
class OptResult:
    best_x: np.ndarray
    best_f: float
    evals: int
    iterations: int
    stop_reason: str
    trace: list[float] = field(default_factory=list)


class InverseObjective:
    """Silhouette-matching objective with evaluation accounting.

    Counts every candidate toward the budget; counts a forward-simulator call
    (#F) for every successful decode. Keeps up to 12 feasible candidates with
    their aligned-IoU scores, worst evicted.
    """

    def __init__(
        self,
        target: SilhouetteMask,
        grid: GridShape,
        phi: float,
        anchors: BoundaryAnchors | None = None,
        raster: RasterConfig | None = None,
        align: AlignConfig | None = None,
        reward_cfg: RewardConfig | None = None,
    ) -> None:
        self.target = target
        self.grid = grid
        self.phi = phi
        self.anchors = anchors or default_anchors(grid, phi)
        self.raster = raster or RasterConfig(target.width, target.height)
        self.align = align or AlignConfig()
        self.reward_cfg = reward_cfg or RewardConfig(lambda_tv=0.0, mode="accuracy")
        self.eval_count = 0
        self.n_forward = 0
        self.kept: list[tuple[float, np.ndarray]] = []

    @property
    def dim(self) -> int:
        return self.grid.cells

    def __call__(self, vec: np.ndarray) -> float:
        self.eval_count += 1
        x = RatioField(np.clip(np.asarray(vec, float), BOX_LO, BOX_HI).reshape(self.grid.m, self.grid.n))
        layout = march_decode(x, self.phi, self.anchors)
        feas = layout.feasibility
        siou_val: float | None = None
        if not feas.decode_failed:
            mask = simulate(layout, self.raster)
            self.n_forward += 1
            try:
                siou_val = siou(mask, self.target, self.align)
            except MetricError:
                siou_val = None
        r = reward(x, feas, siou_val, self.reward_cfg)
        if siou_val is not None and check_feasible(layout, self.reward_cfg.tau_ov):
            self._keep(siou_val, x.values)
        return 1.0 - r

    def _keep(self, score: float, values: np.ndarray) -> None:
        if len(self.kept) < MAX_KEPT:
            self.kept.append((score, values.copy()))
            return
        worst = min(range(MAX_KEPT), key=lambda k: self.kept[k][0])
        if score > self.kept[worst][0]:
            self.kept[worst] = (score, values.copy())

    def best_kept(self) -> tuple[float, np.ndarray] | None:
        if not self.kept:
            return None
        return max(self.kept, key=lambda kv: kv[0])


def cma_lambda(d: int) -> int:
    """Default CMA-ES population size 4 + floor(3 ln d)."""
    return 4 + int(math.floor(3.0 * math.log(d)))


def solve_cmaes(
    f,
    dim: int,
    stop: StopRule,
    seed: int,
    lo: float = BOX_LO,
    hi: float = BOX_HI,
) -> OptResult:
    """Standard (mu/mu_w, lambda)-CMA-ES with resample-then-clamp box handling."""
    rng = np.random.default_rng(seed)
    lam = cma_lambda(dim)
    mu = lam // 2
    w = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    mueff = 1.0 / float((w ** 2).sum())
    sigma = 0.3 * (hi - lo)
    mean = rng.uniform(lo, hi, dim)
    cc = (4 + mueff / dim) / (dim + 4 + 2 * mueff / dim)
    cs = (mueff + 2) / (dim + mueff + 5)
    c1 = 2 / ((dim + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((dim + 2) ** 2 + mueff))
    ds = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (dim + 1)) - 1) + cs
    pc = np.zeros(dim)
    ps = np.zeros(dim)
    C = np.eye(dim)
    chi_n = math.sqrt(dim) * (1 - 1 / (4 * dim) + 1 / (21 * dim * dim))

    best_f = math.inf
    best_x = mean.copy()
    tracker = _StopTracker(stop)
    trace: list[float] = []
    evals = 0
    gen = 0
    reason = "cap"
    while evals + lam <= stop.max_evals:
        eigvals, B = np.linalg.eigh(C)
        D = np.sqrt(np.maximum(eigvals, 1e-20))
        X = np.empty((lam, dim))
        Y = np.empty((lam, dim))
        for k in range(lam):
            for _ in range(10):
                y = B @ (D * rng.standard_normal(dim))
                xk = mean + sigma * y
                if np.all((xk >= lo) & (xk <= hi)):
                    break
            else:
                xk = np.clip(mean + sigma * y, lo, hi)
                y = (xk - mean) / sigma
            X[k] = xk
            Y[k] = y
        F = np.array([f(xk) for xk in X])
        evals += lam
        gen += 1
        order = np.argsort(F)
        if F[order[0]] < best_f:
            best_f = float(F[order[0]])
            best_x = X[order[0]].copy()
        trace.append(best_f)

        yw = (w[:, None] * Y[order[:mu]]).sum(axis=0)
        mean = mean + sigma * yw
        c_inv_sqrt_y = B @ ((B.T @ yw) / D)
        ps = (1 - cs) * ps + math.sqrt(cs * (2 - cs) * mueff) * c_inv_sqrt_y
        hsig = (
            np.linalg.norm(ps) / math.sqrt(1 - (1 - cs) ** (2 * gen)) / chi_n
            < 1.4 + 2 / (dim + 1)
        )
        pc = (1 - cc) * pc + hsig * math.sqrt(cc * (2 - cc) * mueff) * yw
        arz = Y[order[:mu]]
        C = (
            (1 - c1 - cmu) * C
            + c1 * (np.outer(pc, pc) + (not hsig) * cc * (2 - cc) * C)
            + cmu * (arz.T * w) @ arz
        )
        sigma = sigma * math.exp((cs / ds) * (np.linalg.norm(ps) / chi_n - 1))
        if tracker.update(X[order[0]], best_f):
            reason = "tolerance"
            break
    return OptResult(best_x, best_f, evals, gen, reason, trace)


def solve_pso(
    f,
    dim: int,
    stop: StopRule,
    seed: int,
    lo: float = BOX_LO,
    hi: float = BOX_HI,
    swarm: int = 24,
    inertia: float = 0.7,
    c1: float = 1.5,
    c2: float = 1.5,
    vmax_frac: float = 0.05,
) -> OptResult:
    """Global-best PSO: uniform init, zero initial velocity, box clamping.

    Velocities are clamped to a fraction of the box width; without the clamp
    the swarm oscillates too widely to refine within the evaluation budget.
    """
    rng = np.random.default_rng(seed)
    X = rng.uniform(lo, hi, (swarm, dim))
    V = np.zeros((swarm, dim))
    vmax = vmax_frac * (hi - lo)
    pbest = X.copy()
    pbest_f = np.full(swarm, math.inf)
    gbest = X[0].copy()
    gbest_f = math.inf
    tracker = _StopTracker(stop)
    trace: list[float] = []
    evals = 0
    it = 0
    reason = "cap"
    while evals + swarm <= stop.max_evals:
        gen_best_f = math.inf
        gen_best_x = X[0]
        for k in range(swarm):
            fk = f(X[k])
            evals += 1
            if fk < pbest_f[k]:
                pbest_f[k] = fk
                pbest[k] = X[k].copy()
            if fk < gbest_f:
                gbest_f = fk
                gbest = X[k].copy()
            if fk < gen_best_f:
                gen_best_f = fk
                gen_best_x = X[k]
        gen_best_x = gen_best_x.copy()
        it += 1
        trace.append(gbest_f)
        r1 = rng.uniform(size=(swarm, dim))
        r2 = rng.uniform(size=(swarm, dim))
        V = inertia * V + c1 * r1 * (pbest - X) + c2 * r2 * (gbest - X)
        V = np.clip(V, -vmax, vmax)
        X = np.clip(X + V, lo, hi)
        if tracker.update(gen_best_x, gbest_f):
            reason = "tolerance"
            break
    return OptResult(gbest, gbest_f, evals, it, reason, trace)


def solve_random_restart(
    f,
    dim: int,
    stop: StopRule,
    seed: int,
    lo: float = BOX_LO,
    hi: float = BOX_HI,
    restarts: int = 8,
    batch: int = 10,
    step0: float = 0.25,
    shrink: float = 0.5,
) -> OptResult:
    """Random-restart local search: Gaussian proposal batches, shrinking step."""
    rng = np.random.default_rng(seed)
    width = hi - lo
    per_restart = stop.max_evals // restarts
    best_x = None
    best_f = math.inf
    trace: list[float] = []
    evals = 0
    iters = 0
    reason = "tolerance"
    for _ in range(restarts):
        if evals >= stop.max_evals:
            reason = "cap"
            break
        budget = min(per_restart, stop.max_evals - evals)
        x = rng.uniform(lo, hi, dim)
        fx = f(x)
        evals += 1
        budget -= 1
        step = step0
        tracker = _StopTracker(stop)
        while budget > 0:
            nb = min(batch, budget)
            P = np.clip(x + step * width * rng.standard_normal((nb, dim)), lo, hi)
            FP = np.array([f(p) for p in P])
            evals += nb
            budget -= nb
            iters += 1
            k = int(np.argmin(FP))
            if FP[k] < fx:
                fx = float(FP[k])
                x = P[k].copy()
            else:
                step *= shrink
            if fx < best_f:
                best_f = fx
                best_x = x.copy()
            trace.append(best_f)
            if tracker.update(x, fx) or step * width < stop.x_tol:
                break
        if best_x is None or fx < best_f:
            best_f = fx
            best_x = x.copy()
    if evals >= stop.max_evals:
        reason = "cap"
    return OptResult(best_x, best_f, evals, iters, reason, trace)


def _golden_section(f1d, t_lo: float, t_hi: float, tol: float, budget: int):
    """Golden-section minimization on [t_lo, t_hi]; returns (t, f(t), evals)."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = t_lo, t_hi
    evals = 0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = f1d(c)
    fd = f1d(d)
    evals += 2
    while (b - a) > tol and evals < budget:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f1d(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f1d(d)
        evals += 1
    if fc < fd:
        return c, fc, evals
    return d, fd, evals


def solve_powell(
    f,
    dim: int,
    stop: StopRule,
    seed: int,
    lo: float = BOX_LO,
    hi: float = BOX_HI,
) -> OptResult:
    """Powell's direction-set method with bounded golden-section line searches."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(lo, hi, dim)
    dirs = [np.eye(dim)[k] for k in range(dim)]
    evals = 0

    def line_min(x0, fx0, u):
        nonlocal evals
        # feasible t range keeping x0 + t*u inside the box
        t_lo, t_hi = -math.inf, math.inf
        for k in range(dim):
            if u[k] > 1e-300:
                t_lo = max(t_lo, (lo - x0[k]) / u[k])
                t_hi = min(t_hi, (hi - x0[k]) / u[k])
            elif u[k] < -1e-300:
                t_lo = max(t_lo, (hi - x0[k]) / u[k])
                t_hi = min(t_hi, (lo - x0[k]) / u[k])
        if not (t_lo < t_hi) or not math.isfinite(t_lo) or not math.isfinite(t_hi):
            return x0, fx0
        budget = stop.max_evals - evals
        if budget <= 2:
            return x0, fx0
        t, ft, used = _golden_section(
            lambda t: f(np.clip(x0 + t * u, lo, hi)), t_lo, t_hi, stop.x_tol, budget
        )
        evals += used
        if ft < fx0:
            return np.clip(x0 + t * u, lo, hi), ft
        return x0, fx0

    fx = f(x)
    evals += 1
    best_x = x.copy()
    best_f = fx
    tracker = _StopTracker(stop)
    trace: list[float] = []
    sweeps = 0
    reason = "cap"
    while evals < stop.max_evals:
        x_start = x.copy()
        f_start = fx
        biggest_drop = 0.0
        drop_idx = 0
        for k, u in enumerate(dirs):
            f_before = fx
            x, fx = line_min(x, fx, u)
            if f_before - fx > biggest_drop:
                biggest_drop = f_before - fx
                drop_idx = k
            if evals >= stop.max_evals:
                break
        sweeps += 1
        if fx < best_f:
            best_f = fx
            best_x = x.copy()
        trace.append(best_f)
        if evals >= stop.max_evals:
            break
        # Powell's direction update with the extrapolation test
        new_dir = x - x_start
        if np.linalg.norm(new_dir) > 0 and evals < stop.max_evals:
            xe = np.clip(2.0 * x - x_start, lo, hi)
            fe = f(xe)
            evals += 1
            if fe < f_start:
                t1 = 2.0 * (f_start - 2.0 * fx + fe)
                t2 = (f_start - fx - biggest_drop) ** 2
                t3 = (f_start - fe) ** 2
                if t1 * t2 < biggest_drop * t3:
                    dirs[drop_idx] = new_dir / np.linalg.norm(new_dir)
                    x, fx = line_min(x, fx, dirs[drop_idx])
                    if fx < best_f:
                        best_f = fx
                        best_x = x.copy()
        if tracker.update(best_x, best_f):
            reason = "tolerance"
            break
    return OptResult(best_x, best_f, evals, sweeps, reason, trace)


_SOLVER_FUNCS = {
    "cmaes": solve_cmaes,
    "pso": solve_pso,
    "rrls": solve_random_restart,
    "powell": solve_powell,
}


@dataclass
class SolverRun:
    method: str
    seed: int
    best_x: RatioField | None
    best_siou: float
    evals_used: int
    n_forward: int
    stop_reason: str
    best_f: float
    iterations: int
    seconds: float
    kept_count: int
    trace: list[float] = field(default_factory=list)


def solve_target(
    method: str,
    objective: InverseObjective,
    stop: StopRule,
    seed: int,
) -> SolverRun:
    """Run one solver on one target; report the best kept feasible candidate."""
    if method not in _SOLVER_FUNCS:
        raise ValueError(f"unknown solver {method!r}; choose from {SOLVER_IDS}")
    t0 = time.perf_counter()
    res = _SOLVER_FUNCS[method](objective, objective.dim, stop, seed)
    dt = time.perf_counter() - t0
    top = objective.best_kept()
    if top is not None:
        best_siou, best_vals = top
        best_x = RatioField(best_vals.reshape(objective.grid.m, objective.grid.n))
    else:
        best_siou = 0.0
        best_x = None
    return SolverRun(
        method=method,
        seed=seed,
        best_x=best_x,
        best_siou=best_siou,
        evals_used=objective.eval_count,
        n_forward=objective.n_forward,
        stop_reason=res.stop_reason,
        best_f=res.best_f,
        iterations=res.iterations,
        seconds=dt,
        kept_count=len(objective.kept),
        trace=res.trace,
    )


@dataclass
class BestOfK:
    best: SolverRun
    runs: list[SolverRun]

    @property
    def total_evals(self) -> int:
        return sum(r.evals_used for r in self.runs)

    @property
    def total_forward(self) -> int:
        return sum(r.n_forward for r in self.runs)


def best_of_k(method: str, make_objective, k: int, seeds, stop: StopRule) -> BestOfK:
    """Run k independent solver runs and keep the one with the best final sIoU."""
    seeds = list(seeds)
    if k < 1 or len(seeds) < k:
        raise ValueError("need k >= 1 and at least k seeds")
    runs = [solve_target(method, make_objective(), stop, seeds[i]) for i in range(k)]
    best = max(runs, key=lambda r: r.best_siou)
    return BestOfK(best=best, runs=runs)


def grid_sweep_bench(
    grid_sizes,
    targets: dict[str, SilhouetteMask],
    methods,
    stop: StopRule,
    seed: int = 0,
    phi: float = math.pi / 3,
) -> list[dict]:
    """Wall-clock timing sweep over grid sizes; timing covers the solve only."""
    rows: list[dict] = []
    for g in grid_sizes:
        if not (6 <= g <= 24):
            raise ValueError(f"grid size {g} outside the supported sweep range 6..24")
        grid = GridShape(g, g)
        for name, mask in targets.items():
            for method in methods:
                obj = InverseObjective(mask, grid, phi)
                run = solve_target(method, obj, stop, seed)
                rows.append(
                    {
                        "grid": g,
                        "method": method,
                        "target": name,
                        "seconds": run.seconds,
                        "evals": run.n_forward,
                        "siou": run.best_siou,
                    }
                )
    return rows
