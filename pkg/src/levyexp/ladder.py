"""Ladder-height renewal functions and h-transform weighted expectations.

Everything is computed on the step-h random-walk skeleton.  The continuous
local-time normalisation cannot be reproduced by a walk, so renewal functions
are reported in the *mean-height* normalisation

    U~(x) = E[H_1] * sum_k P(H_1 + ... + H_k <= x),

which grows like x.  It equals the product P[H(1)] V(x) for any choice of
local-time scale, which is the only form in which V enters the limit constants.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .levy_core import LevyTriplet, dual, mean_increment, triplet_hash
from .path_sim import IncrementSampler, SimConfig, make_rng, run_batches, sum_batches

ESS_MIN = 100.0
LADDER_CHUNK = 256
MEAN_ZERO_TOL = 1e-10


def _ladder_batch(rng, size, triplet, config, max_steps):
    """First weak ascending ladder heights; inf when not reached within max_steps."""
    sampler = IncrementSampler(triplet, config.step_h, config.small_jump_cutoff)
    out = np.full(size, np.inf)
    pos = np.zeros(size)
    act = np.arange(size)
    taken = 0
    while act.size and taken < max_steps:
        inc = sampler(rng, act.size * LADDER_CHUNK).reshape(act.size, LADDER_CHUNK)
        run = pos[act, None] + np.cumsum(inc, axis=1)
        hit = run >= 0.0
        got = hit.any(axis=1)
        first = hit.argmax(axis=1)
        out[act[got]] = run[got, first[got]]
        pos[act] = run[:, -1]
        act = act[~got]
        taken += LADDER_CHUNK
    return out, act.size


@dataclass(frozen=True)
class RenewalTable:
    """Tabulated U~ with per-point standard errors.

    ``fine_x``/``fine_u`` hold the internal table used by :meth:`evaluate`;
    beyond its end the function is continued with slope ``tail_slope``.
    """

    grid: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    fine_x: np.ndarray
    fine_u: np.ndarray
    tail_slope: float
    mean_height: float
    killed_share: float
    max_iteration_flag: bool
    normalization: str
    provenance: dict = field(default_factory=dict)

    def evaluate(self, y):
        y = np.asarray(y, dtype=float)
        out = np.interp(y, self.fine_x, self.fine_u)
        beyond = y > self.fine_x[-1]
        if np.any(beyond):
            out = np.where(beyond, self.fine_u[-1] + self.tail_slope * (y - self.fine_x[-1]), out)
        return np.where(y < 0, 0.0, out)

    __call__ = evaluate

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "value", "stderr"])
            for row in zip(self.grid, self.values, self.stderr):
                w.writerow([f"{v:.17g}" for v in row])
        with open(str(path) + ".meta.json", "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)

    def metadata(self) -> dict:
        return {
            "normalization": self.normalization,
            "mean_ladder_height": self.mean_height,
            "killed_share": self.killed_share,
            "max_iteration_flag": self.max_iteration_flag,
            **self.provenance,
        }


def _renewal_counts(heights, xs, rng, n_chains):
    """sum_k P(H_1+...+H_k <= x), k >= 0, by resampling the empirical ladder law."""
    counts = np.full(xs.size, float(n_chains))
    total = np.zeros(n_chains)
    alive = np.ones(n_chains, dtype=bool)
    top = xs[-1]
    while alive.any():
        total[alive] += rng.choice(heights, int(alive.sum()))
        alive &= total <= top
        counts += np.searchsorted(np.sort(total[alive]), xs, side="right")
    return counts / n_chains


def renewal_function(
    triplet: LevyTriplet,
    grid,
    config: SimConfig,
    descending: bool = False,
    n_ladder: int | None = None,
    max_steps: int = 100_000,
    groups: int = 10,
    fine_step: float | None = None,
) -> RenewalTable:
    """Renewal function of the weak ascending (or descending) ladder heights.

    ``n_ladder`` ladder-height samples (default ``config.n_paths``) are split
    into ``groups`` independent groups for standard errors.  Samples that do
    not reach a new maximum within ``max_steps`` steps count as killed; if
    that happens while the walk does not drift down, ``max_iteration_flag``
    is raised.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid < 0):
        raise ValueError("grid must be a nonempty 1-D array of points >= 0")
    walk_triplet = dual(triplet) if descending else triplet
    n = int(n_ladder or config.n_paths)
    res = run_batches(_ladder_batch, config, walk_triplet, config, int(max_steps), stream=10 + int(descending), n_paths=n)
    heights = np.concatenate([r[0] for r in res])
    unfinished = sum(r[1] for r in res)
    finite = np.isfinite(heights)
    if not finite.any():
        raise RuntimeError("no ladder epoch observed; increase max_steps")
    mean_h = float(heights[finite].mean())
    killed = float(1.0 - finite.mean())
    # rounding in tilted drifts must not turn a zero-mean walk into a killed one
    drifts_down = mean_increment(walk_triplet) < -MEAN_ZERO_TOL * max(1.0, walk_triplet.sigma**2)
    top = max(float(grid.max()), 1.0)
    step = fine_step or min(0.05, top / 400)
    xs = np.arange(0.0, top + step, step)
    rng = make_rng(config.seed, 20 + int(descending))
    chains = max(20_000, n)
    # without downward drift every ladder height is finite: unfinished samples
    # are truncation, not killing, so they are dropped rather than resampled
    pool = heights if drifts_down else heights[finite]
    fine = mean_h * _renewal_counts(pool, xs, rng, chains)
    per_group = []
    for g in np.array_split(np.arange(pool.size), groups):
        hg = pool[g]
        fg = np.isfinite(hg)
        if fg.any():
            per_group.append(float(hg[fg].mean()) * _renewal_counts(hg, grid, rng, max(2000, chains // groups)))
    per_group = np.array(per_group)
    se = per_group.std(axis=0, ddof=1) / math.sqrt(len(per_group)) if len(per_group) > 1 else np.full(grid.size, np.nan)
    return RenewalTable(
        grid=grid,
        values=np.interp(grid, xs, fine),
        stderr=se,
        fine_x=xs,
        fine_u=fine,
        tail_slope=0.0 if killed > 0 and drifts_down else 1.0,
        mean_height=mean_h,
        killed_share=killed,
        max_iteration_flag=bool(unfinished and not drifts_down),
        normalization="mean ladder height: U~(x) = E[H_1 | H_1 < inf] * expected number of weak ladder points with height <= x",
        provenance={
            "triplet_hash": triplet_hash(triplet),
            "descending": descending,
            "skeleton_step": config.step_h,
            "seed": config.seed,
            "n_ladder_samples": n,
            "max_steps": max_steps,
        },
    )


# ---------------------------------------------------------------------------
# h-transform weighting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathFunctional:
    """What to average under Q_x.

    kind "one" is the constant 1, "exp_functional" is A_T itself, and "F"
    applies ``fn`` to the shifted functional e^{alpha x} A_T, i.e. the
    functional of the path started at 0 and killed below -x.  ``endpoint``
    selects left- or right-endpoint Riemann sums.
    """

    kind: str = "one"
    alpha: float = 1.0
    fn: object = None
    endpoint: str = "left"

    def apply(self, a_shifted, x):
        if self.kind == "one":
            return np.ones_like(a_shifted)
        if self.kind == "exp_functional":
            return math.exp(-self.alpha * x) * a_shifted
        if self.kind == "F":
            return self.fn(a_shifted)
        raise ValueError(f"unknown functional kind {self.kind!r}")


@dataclass(frozen=True)
class WeightedEstimate:
    """Estimate of Q_x[functional] together with the unnormalised product V(x) Q_x[...]."""

    value: float
    stderr: float
    product: float
    product_stderr: float
    ess: float
    n_paths: int
    horizon: float
    x: float
    reliable: bool
    survivors: int = 0


def _conditioned_batch(rng, size, triplet, config, xs, checkpoints, functional, renewal):
    """Sums over paths of w, w^2, w f, (w f)^2 at each (checkpoint, x)."""
    h, alpha = config.step_h, functional.alpha
    sampler = IncrementSampler(triplet, h, config.small_jump_cutoff)
    z = np.zeros(size)
    low = np.zeros(size)
    acc = np.zeros(size)
    shape = (len(checkpoints), len(xs))
    out = {k: np.zeros(shape) for k in ("w", "w2", "wf", "wf2", "alive")}
    right = functional.endpoint == "right"
    k = 0
    for ci, n_steps in enumerate(checkpoints):
        while k < n_steps:
            if not right:
                acc += h * np.exp(-alpha * z)
            z = z + sampler(rng, size)
            np.minimum(low, z, out=low)
            if right:
                acc += h * np.exp(-alpha * z)
            k += 1
        for xi, x in enumerate(xs):
            alive = low > -x
            w = np.where(alive, renewal.evaluate(x + z), 0.0)
            f = functional.apply(acc, x)
            wf = w * f
            out["w"][ci, xi] = w.sum()
            out["w2"][ci, xi] = (w * w).sum()
            out["wf"][ci, xi] = wf.sum()
            out["wf2"][ci, xi] = (wf * wf).sum()
            out["alive"][ci, xi] = alive.sum()
    return out


def conditioned_sums(triplet, xs, horizons, functional, config, renewal, stream=30):
    """Batch-reduced weighted sums for several start points and horizons on shared paths."""
    checkpoints = [max(1, round(T / config.step_h)) for T in horizons]
    if any(b <= a for a, b in zip(checkpoints, checkpoints[1:])):
        raise ValueError("horizons must be increasing and at least one step apart")
    res = run_batches(_conditioned_batch, config, triplet, config, list(map(float, xs)), checkpoints, functional, renewal, stream=stream)
    return sum_batches(res)


def weighted_estimates(sums, xs, horizons, n, renewal) -> list[list[WeightedEstimate]]:
    out = []
    for ci, T in enumerate(horizons):
        row = []
        for xi, x in enumerate(xs):
            w, w2, wf, wf2 = (sums[k][ci, xi] for k in ("w", "w2", "wf", "wf2"))
            vx = float(renewal.evaluate(x))
            prod = wf / n
            prod_se = math.sqrt(max(wf2 / n - prod * prod, 0.0) / n)
            ess = w * w / w2 if w2 > 0 else 0.0
            row.append(
                WeightedEstimate(
                    value=prod / vx,
                    stderr=prod_se / vx,
                    product=prod,
                    product_stderr=prod_se,
                    ess=ess,
                    n_paths=n,
                    horizon=T,
                    x=x,
                    reliable=ess >= ESS_MIN,
                    survivors=int(sums["alive"][ci, xi]),
                )
            )
        out.append(row)
    return out


def conditioned_expectation(
    triplet: LevyTriplet,
    x: float,
    functional: PathFunctional,
    horizon: float,
    config: SimConfig,
    renewal: RenewalTable | None = None,
) -> WeightedEstimate:
    """Q_x[functional] as V(x)^-1 E_x[V(xi_T) 1{tau_0 > T} functional].

    V is the descending-ladder renewal function (computed when not supplied).
    Paths with all weights zero, or an effective sample size below 100, are
    reported with ``reliable=False``.
    """
    if not x > 0:
        raise ValueError("x must be > 0")
    if renewal is None:
        renewal = renewal_function(triplet, np.linspace(0, 10, 11), config, descending=True)
    sums = conditioned_sums(triplet, [x], [horizon], functional, config, renewal)
    return weighted_estimates(sums, [x], [horizon], config.n_paths, renewal)[0][0]
