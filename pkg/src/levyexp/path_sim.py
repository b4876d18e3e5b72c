"""Skeleton simulation of Lévy paths and their exponential functionals.

Paths are sampled on a grid of mesh ``step_h``; every increment has the exact
law of xi(h) for Brownian and compound Poisson parts, while tempered stable
jumps below a cutoff are replaced by a Gaussian of the same variance.

Randomness comes from Philox streams keyed by ``(seed, stream, batch)``; the
batch partition is fixed by ``batch_size`` so results do not depend on how
batches are spread over workers, and reductions always run in batch order.
"""
from __future__ import annotations

import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

import numpy as np
from scipy import optimize

from .errors import InfiniteFunctional
from .levy_core import (
    CompoundPoisson,
    LevyTriplet,
    TemperedStable,
    ZeroJumps,
    mean_increment,
    triplet_hash,
)

SMALL_JUMP_VARIANCE_SHARE = 1e-6
MAX_BIG_JUMPS_PER_STEP = 64.0


@dataclass(frozen=True)
class SimConfig:
    step_h: float = 0.01
    horizon_t: float | None = 1.0  # None: adaptive (only meaningful for A_inf)
    n_paths: int = 1000
    seed: int = 0
    small_jump_cutoff: float | None = None
    batch_size: int = 50_000
    workers: int = 1
    rel_tol: float = 1e-4
    max_horizon: float = 1e4

    def validate(self) -> list[str]:
        out = []
        if not (self.step_h > 0 and math.isfinite(self.step_h)):
            out.append(f"step_h must be a positive finite time (got {self.step_h})")
        if self.horizon_t is not None:
            if not self.horizon_t > 0:
                out.append(f"horizon_t must be > 0 (got {self.horizon_t})")
            elif self.step_h > self.horizon_t:
                out.append(f"step_h={self.step_h} exceeds horizon_t={self.horizon_t}")
        if self.n_paths < 1:
            out.append("n_paths must be a positive integer")
        if not 0 <= int(self.seed) < 2**64:
            out.append("seed must be an unsigned 64-bit integer")
        if self.small_jump_cutoff is not None and not self.small_jump_cutoff > 0:
            out.append("small_jump_cutoff must be > 0")
        if self.batch_size < 1:
            out.append("batch_size must be >= 1")
        if self.workers < 1:
            out.append("workers must be >= 1")
        if not 0 < self.rel_tol < 1:
            out.append("rel_tol must lie in (0, 1)")
        return out

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)


# ---------------------------------------------------------------------------
# random streams and batch scheduling
# ---------------------------------------------------------------------------


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator for the substream identified by ``keys``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))


def batch_plan(n_paths: int, batch_size: int) -> list[int]:
    full, rest = divmod(int(n_paths), int(batch_size))
    return [batch_size] * full + ([rest] if rest else [])


def run_batches(job: Callable, config: SimConfig, *args, stream: int = 0, n_paths: int | None = None) -> list:
    """Apply ``job(rng, size, *args)`` to every batch; results come back in batch order.

    ``job`` must be a module-level callable so that it can be shipped to worker
    processes when ``config.workers > 1``.
    """
    sizes = batch_plan(config.n_paths if n_paths is None else n_paths, config.batch_size)
    tasks = [(job, config.seed, stream, i, size, args) for i, size in enumerate(sizes)]
    if config.workers <= 1 or len(tasks) <= 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(config.workers, len(tasks))) as pool:
        return list(pool.map(_run_task, tasks))


def _run_task(task):
    job, seed, stream, index, size, args = task
    return job(make_rng(seed, stream, index), size, *args)


def sum_batches(results: list[dict]) -> dict:
    """Add per-batch dicts of arrays, strictly in list order."""
    out = {k: np.array(v, dtype=float, copy=True) for k, v in results[0].items()}
    for res in results[1:]:
        for k, v in res.items():
            out[k] = out[k] + v
    return out


# ---------------------------------------------------------------------------
# increments
# ---------------------------------------------------------------------------


def default_cutoff(ts: TemperedStable, sigma: float, h: float) -> tuple[float, bool]:
    """Small-jump cutoff for a tempered stable part.

    Target: the replaced variance is below 1e-6 of the per-step increment
    variance.  The cutoff is raised when that would need more than
    ``MAX_BIG_JUMPS_PER_STEP`` exact jumps per step; the second return value
    says whether this floor was hit.
    """
    total = sigma**2 + ts.second_moment()
    target = SMALL_JUMP_VARIANCE_SHARE * total
    f = lambda le: ts.small_jump_variance(math.exp(le)) - target
    lo, hi = -60.0, math.log(50.0 / ts.tempering)
    eps = math.exp(optimize.brentq(f, lo, hi, xtol=1e-10)) if f(lo) < 0 < f(hi) else math.exp(lo)
    if ts.big_jump_rate(eps) * h <= MAX_BIG_JUMPS_PER_STEP:
        return eps, False
    g = lambda le: ts.big_jump_rate(math.exp(le)) * h - MAX_BIG_JUMPS_PER_STEP
    return math.exp(optimize.brentq(g, math.log(eps), hi, xtol=1e-10)), True


class IncrementSampler:
    """Draws i.i.d. copies of the step-h increment xi(h)."""

    def __init__(self, triplet: LevyTriplet, h: float, cutoff: float | None = None):
        self.triplet, self.h = triplet, float(h)
        j = triplet.jumps
        self.meta: dict = {"step_h": self.h, "scheme": "exact"}
        var = triplet.sigma**2 * h
        shift = -triplet.drift_a * h
        self._cp = self._ts = None
        if isinstance(j, CompoundPoisson):
            self._cp = j
            shift -= j.rate * j.law.mean * h
        elif isinstance(j, TemperedStable):
            eps, floored = (cutoff, False) if cutoff is not None else default_cutoff(j, triplet.sigma, h)
            small = j.small_jump_variance(eps)
            self._ts = j
            self._eps = eps
            self._big_rate = j.big_jump_rate(eps)
            shift -= j.big_jump_mean(eps) * h
            var += small * h
            self.meta.update(
                scheme="small-jump gaussian",
                small_jump_cutoff=eps,
                replaced_variance_share=small / (triplet.sigma**2 + j.second_moment()),
                cutoff_floored=floored,
                big_jumps_per_step=self._big_rate * h,
            )
        elif not isinstance(j, ZeroJumps):
            raise TypeError(f"no sampler for jump family {j.family}")
        self.shift, self.sd = shift, math.sqrt(var)

    def __call__(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.sd > 0:
            inc = self.shift + self.sd * rng.standard_normal(size)
        else:
            inc = np.full(size, self.shift)
        if self._cp is not None:
            counts = rng.poisson(self._cp.rate * self.h, size)
            inc += self._cp.law.sample_sum(rng, counts)
        elif self._ts is not None:
            counts = rng.poisson(self._big_rate * self.h, size)
            total = int(counts.sum())
            if total:
                sizes = self._tempered_sizes(rng, total)
                inc += np.bincount(np.repeat(np.arange(size), counts), weights=sizes, minlength=size)
        return inc

    def _tempered_sizes(self, rng, m):
        # Pareto(index) proposals on (eps, inf), accepted with prob exp(-tempering (x - eps))
        ts, eps = self._ts, self._eps
        out = np.empty(0)
        while out.size < m:
            need = m - out.size
            k = int(need * 1.2) + 16
            x = eps * rng.random(k) ** (-1.0 / ts.index)
            keep = rng.random(k) < np.exp(-ts.tempering * (x - eps))
            out = np.concatenate([out, x[keep]])
        return ts.side * out[:m]


def time_grid(horizon: float, h: float) -> np.ndarray:
    n = max(1, math.ceil(horizon / h - 1e-9))
    t = h * np.arange(n + 1)
    t[-1] = horizon
    return t


def walk(triplet: LevyTriplet, config: SimConfig, rng, size: int, n_steps: int, start=0.0) -> Iterator[np.ndarray]:
    """Yield xi at grid times h, 2h, ..., n_steps*h for ``size`` independent paths."""
    sampler = IncrementSampler(triplet, config.step_h, config.small_jump_cutoff)
    x = np.full(size, start, dtype=float) if np.ndim(start) == 0 else np.array(start, dtype=float)
    for _ in range(n_steps):
        x = x + sampler(rng, size)
        yield x


# ---------------------------------------------------------------------------
# paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathSample:
    """Sampled path(s) on a common grid; ``values`` has time on the last axis."""

    times: np.ndarray
    values: np.ndarray
    start: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def sup(self) -> np.ndarray:
        return np.maximum.accumulate(self.values, axis=-1)

    @property
    def inf(self) -> np.ndarray:
        return np.minimum.accumulate(self.values, axis=-1)

    @property
    def n_paths(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[0]

    def row(self, i: int) -> "PathSample":
        return PathSample(self.times, self.values[i], self.start, self.meta) if self.values.ndim == 2 else self


def _path_batch(rng, size, triplet, config, start, times):
    steps = np.diff(times)
    out = np.empty((size, times.size))
    out[:, 0] = start
    body = IncrementSampler(triplet, config.step_h, config.small_jump_cutoff)
    last = body if math.isclose(steps[-1], config.step_h) else IncrementSampler(triplet, steps[-1], config.small_jump_cutoff)
    for k in range(steps.size):
        out[:, k + 1] = out[:, k] + (last if k == steps.size - 1 else body)(rng, size)
    return out


def simulate_path(triplet: LevyTriplet, config: SimConfig, start: float = 0.0) -> PathSample:
    """Sample ``config.n_paths`` paths on [0, horizon_t] started at ``start``.

    One path gives 1-D ``values``; several give an array of shape (n_paths, n_grid).
    """
    problems = config.validate()
    if config.horizon_t is None:
        problems.append("simulate_path needs a finite horizon_t")
    if problems:
        raise ValueError("; ".join(problems))
    times = time_grid(config.horizon_t, config.step_h)
    blocks = run_batches(_path_batch, config, triplet, config, float(start), times, stream=1)
    values = np.concatenate(blocks, axis=0)
    meta = dict(IncrementSampler(triplet, config.step_h, config.small_jump_cutoff).meta)
    meta.update(seed=config.seed, triplet_hash=triplet_hash(triplet))
    return PathSample(times, values[0] if config.n_paths == 1 else values, float(start), meta)


@dataclass(frozen=True)
class ExpFunctionalSample:
    alpha: float
    t: float
    value: float | np.ndarray
    truncation_flag: bool | np.ndarray = False
    meta: dict = field(default_factory=dict)


def exp_functional(path: PathSample, alpha: float, t: float | None = None) -> ExpFunctionalSample:
    """Left-endpoint Riemann sum of exp(-alpha xi) over [0, t] (default: whole grid)."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    times = path.times
    if t is None:
        t = float(times[-1])
    # grid cells fully inside [0, t]; a partial cell is clipped
    dt = np.clip(np.minimum(times[1:], t) - times[:-1], 0.0, None)
    vals = np.exp(-alpha * path.values[..., :-1]) @ dt
    return ExpFunctionalSample(alpha, float(t), float(vals) if np.ndim(vals) == 0 else vals)


def _a_inf_batch(rng, size, triplet, config, alpha, block_steps, margin):
    h = config.step_h
    sampler = IncrementSampler(triplet, h, config.small_jump_cutoff)
    x = np.zeros(size)
    acc = np.zeros(size)
    active = np.ones(size, dtype=bool)
    by_tail = np.zeros(size, dtype=bool)
    geom = 1.0 / -math.expm1(-alpha * margin * block_steps * h)
    max_blocks = max(1, math.ceil(config.max_horizon / (block_steps * h)))
    idx = np.arange(size)
    for _ in range(max_blocks):
        xa = x[idx]
        aa = np.zeros(idx.size)
        low = xa.copy()
        for _ in range(block_steps):
            aa += h * np.exp(-alpha * xa)
            xa = xa + sampler(rng, idx.size)
            np.minimum(low, xa, out=low)
        x[idx] = xa
        acc[idx] += aa
        # remaining tail bounded by blocks of length L whose minima climb by margin*L each
        tail = np.exp(-alpha * low) * (block_steps * h) * geom
        done = tail < config.rel_tol * acc[idx]
        by_tail[idx[done]] = True
        idx = idx[~done]
        if idx.size == 0:
            break
    return {"value": acc, "by_tail": by_tail}


def exp_functional_inf(triplet: LevyTriplet, alpha: float, config: SimConfig) -> ExpFunctionalSample:
    """Per-path A_inf for ``config.n_paths`` paths, simulated in blocks until the tail is negligible.

    Raises InfiniteFunctional unless the mean increment is positive.
    """
    m = mean_increment(triplet)
    if not m > 0:
        raise InfiniteFunctional(f"mean increment {m:.6g} <= 0: A_inf is infinite almost surely")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    block_steps = max(1, round(10.0 / m / config.step_h))
    res = run_batches(_a_inf_batch, config, triplet, config, float(alpha), block_steps, 0.5 * m, stream=2)
    value = np.concatenate([r["value"] for r in res])
    flag = np.concatenate([r["by_tail"] for r in res])
    meta = {
        "block_length": block_steps * config.step_h,
        "rel_tol": config.rel_tol,
        "stopped_by_tail_share": float(flag.mean()),
        "quadrature": "left-endpoint",
    }
    if config.n_paths == 1:
        return ExpFunctionalSample(alpha, math.inf, float(value[0]), bool(flag[0]), meta)
    return ExpFunctionalSample(alpha, math.inf, value, flag, meta)


def hitting_time(path: PathSample, level: float):
    """First grid time with xi <= level; None (1-D) or NaN (per row) if never."""
    hit = path.values <= level
    if path.values.ndim == 1:
        k = np.flatnonzero(hit)
        return float(path.times[k[0]]) if k.size else None
    first = hit.argmax(axis=-1)
    out = path.times[first].astype(float)
    out[~hit.any(axis=-1)] = np.nan
    return out


# ---------------------------------------------------------------------------
# binary dump: "LVYP" | u32 version | u64 seed | f64 step | 16-byte triplet hash
#              | u64 n_paths | u64 n_points | per path: n_points (time, value) f64 pairs
# ---------------------------------------------------------------------------

_MAGIC = b"LVYP"
_HEADER = struct.Struct("<4sIQd16sQQ")


def write_paths_binary(path: PathSample, fh, seed: int, step: float, digest: str) -> None:
    values = np.atleast_2d(path.values)
    fh.write(_HEADER.pack(_MAGIC, 1, int(seed), float(step), digest.encode()[:16].ljust(16, b"0"), *values.shape))
    pairs = np.empty(values.shape + (2,), dtype="<f8")
    pairs[..., 0] = path.times
    pairs[..., 1] = values
    fh.write(pairs.tobytes())


def read_paths_binary(fh) -> tuple[dict, PathSample]:
    magic, version, seed, step, digest, n_paths, n_points = _HEADER.unpack(fh.read(_HEADER.size))
    if magic != _MAGIC:
        raise ValueError("not a path dump (bad magic)")
    raw = np.frombuffer(fh.read(n_paths * n_points * 16), dtype="<f8").reshape(n_paths, n_points, 2)
    header = {"version": version, "seed": seed, "step": step, "triplet_hash": digest.decode()}
    values = raw[..., 1].copy()
    return header, PathSample(raw[0, :, 0].copy(), values[0] if n_paths == 1 else values, float(values[0, 0]))
