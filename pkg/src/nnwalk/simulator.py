"""Monte Carlo for the walk on the non-negative integers.

Every replica draws from its own stream, derived from a root seed and the
replica index with ``numpy.random.SeedSequence(root, spawn_key=(index,))``
feeding a PCG64 generator.  Results depend only on (model, parameters, root
seed, index), never on the number of worker threads.

Total local times are sampled in finite time by stopping the walk at a
barrier ``M`` beyond which the probability of ever coming back to the
observed sites is at most ``eps`` (the escape certificate).  Far from the
observed window the walk is advanced by exact exit-interval jumps; see
:func:`nnwalk._kernels.walk_window`.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from nnwalk import _kernels
from nnwalk.analytics import (
    DEFAULT_POLICY,
    NonConvergent,
    TruncationPolicy,
    d_infinity,
    prefix_table,
)
from nnwalk.model import StepModel

__all__ = [
    "BudgetExceeded",
    "EscapeCertificate",
    "LocalTimeSample",
    "PathSummary",
    "ScanResult",
    "WindowBatch",
    "conditional_pairs",
    "first_hit_time",
    "first_hit_times",
    "make_rng",
    "position_paths",
    "position_samples",
    "sample_local_time",
    "sample_local_times",
    "sample_window",
    "scan_ones",
    "shadow_check",
    "simulate_path",
    "step",
]

DEFAULT_MAX_MOVES = 10**10


class BudgetExceeded(RuntimeError):
    pass


def make_rng(seed: int, replica: int = 0) -> np.random.Generator:
    """Independent generator for replica ``replica`` of root ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(replica),))))


def default_threads() -> int:
    env = os.environ.get("NNWALK_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def _map_replicas(fn: Callable[[int], object], replicas: int, threads: int | None) -> list:
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or replicas < 2:
        return [fn(r) for r in range(replicas)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(replicas)))


# -- single steps and plain paths ---------------------------------------------


def step(model: StepModel, position: int, u: float) -> int:
    if position < 0:
        raise ValueError("position must be non-negative")
    if position == 0:
        return 1
    return position + 1 if u < model.e_at(position) else position - 1


@dataclass(frozen=True)
class PathSummary:
    n_steps: int
    final_position: int
    checkpoint_positions: tuple[tuple[int, int], ...]
    local_time_profile: dict[int, int]


def _checkpoints(n: int) -> np.ndarray:
    out = []
    t = 1
    while t <= n:
        out.append(t)
        t *= 2
    return np.array(out, dtype=np.int64)


def _run_positions(model: StepModel, n: int, rng_factory, checkpoints, keep_profile: bool):
    cap = min(n, 4096) + 1
    while True:
        rng = rng_factory()
        e_tab = model.e_array(cap + 1)
        pos = np.zeros(len(checkpoints), dtype=np.int64)
        profile = np.zeros(cap + 1 if keep_profile else 0, dtype=np.int64)
        x, ok = _kernels.walk_positions(rng, e_tab, n, checkpoints, pos, profile)
        if ok:
            return x, pos, profile
        # the path outran the table: redo it with the same stream
        cap = min(2 * cap, n + 1)


def simulate_path(model: StepModel, n: int, seed: int, replica: int = 0) -> PathSummary:
    """Run ``n`` steps from 0 and keep the full local-time profile."""
    if n < 0:
        raise ValueError("n must be non-negative")
    cps = _checkpoints(n)
    x, pos, profile = _run_positions(model, n, lambda: make_rng(seed, replica), cps, True)
    nz = np.nonzero(profile)[0]
    prof = {int(i): int(profile[i]) for i in nz}
    return PathSummary(n, int(x), tuple((int(t), int(p)) for t, p in zip(cps, pos)), prof)


def position_samples(
    model: StepModel, n: int, replicas: int, seed: int, threads: int | None = None
) -> np.ndarray:
    """``X_n`` for ``replicas`` independent walks."""
    if replicas < 1 or n < 0:
        raise ValueError("need replicas >= 1 and n >= 0")
    empty = np.empty(0, dtype=np.int64)

    def one(r):
        x, _, _ = _run_positions(model, n, lambda: make_rng(seed, r), empty, False)
        return x

    return np.array(_map_replicas(one, replicas, threads), dtype=np.int64)


def position_paths(
    model: StepModel, n: int, replicas: int, seed: int, threads: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Positions at times ``1, 2, 4, ... <= n``; returns ``(times, positions[replica, k])``."""
    cps = _checkpoints(n)

    def one(r):
        _, pos, _ = _run_positions(model, n, lambda: make_rng(seed, r), cps, False)
        return pos

    rows = _map_replicas(one, replicas, threads)
    return cps, np.array(rows, dtype=np.int64).reshape(replicas, len(cps))


def first_hit_times(
    model: StepModel, R: int, seed: int, replica: int = 0, max_steps: int = DEFAULT_MAX_MOVES
) -> np.ndarray:
    """``T_r`` for every ``0 <= r <= R`` along one trajectory."""
    if R < 0:
        raise ValueError("R must be non-negative")
    out = np.full(R + 1, -1, dtype=np.int64)
    if R == 0:
        out[0] = 0
        return out
    e_tab = model.e_array(R + 1)
    if not _kernels.walk_first_hits(make_rng(seed, replica), e_tab, R, max_steps, out):
        raise BudgetExceeded(f"site {R} not reached within {max_steps} steps")
    return out


def first_hit_time(model: StepModel, R: int, seed: int, replica: int = 0, max_steps: int = DEFAULT_MAX_MOVES) -> int:
    return int(first_hit_times(model, R, seed, replica, max_steps)[R])


# -- certified escape ------------------------------------------------------------


@dataclass(frozen=True)
class EscapeCertificate:
    """``basis`` bounds the probability of returning to the watched sites from ``barrier``."""

    barrier: int
    eps: float
    basis: float


@dataclass(frozen=True)
class _Plan:
    lo: int
    hi: int
    certificate: EscapeCertificate
    shadow_to: int
    e_tab: np.ndarray
    log_h: np.ndarray
    prefix: np.ndarray


def _barrier(model: StepModel, hi: int, eps: float, policy: TruncationPolicy) -> tuple[int, float, np.ndarray]:
    res = d_infinity(model, hi, policy)
    if not res.converged:
        raise NonConvergent(f"cannot certify transience at site {hi}", res)
    # upper end of D(hi, inf) makes the return probability an upper bound
    d_up = res.value + res.tail_bound
    length = 1024
    while True:
        pre = prefix_table(model, hi, length)
        ret = (d_up - pre[1:]) / d_up
        hit = np.nonzero(ret <= eps)[0]
        if hit.size:
            k = int(hit[0]) + 1
            return hi + k, float(max(ret[k - 1], 0.0)), pre
        length *= 4


def _plan(
    model: StepModel,
    lo: int,
    hi: int,
    eps: float,
    policy: TruncationPolicy,
    shadow_factor: float = 0.0,
    stepwise: bool = False,
) -> _Plan:
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if not 0 <= lo <= hi:
        raise ValueError(f"need 0 <= lo <= hi, got {lo}, {hi}")
    M, basis, pre = _barrier(model, hi, eps, policy)
    shadow_to = int(math.ceil(shadow_factor * M)) if shadow_factor > 1 else 0
    if stepwise:
        # no jumps: the whole range below the barrier is walked step by step
        lo, hi_w = 0, M
    else:
        hi_w = hi
    far = max(M, shadow_to)
    top = 2 * (far - hi_w) + 2
    if len(pre) < top + 1:
        pre = prefix_table(model, hi_w, top)
    elif hi_w != hi:
        pre = prefix_table(model, hi_w, top)
    logu = model.log_u_array(1, lo + 1)[::-1].copy()
    log_h = _kernels.log_suffix_table(logu)
    e_tab = model.e_array(hi_w + 1)
    return _Plan(lo, hi_w, EscapeCertificate(M, eps, basis), shadow_to, e_tab, log_h, pre)


@dataclass(frozen=True)
class WindowBatch:
    """Local times and upcrossings at the sites ``lo..hi`` for many replicas.

    ``xi[r, j]`` and ``up[r, j]`` refer to site ``lo + j``.  Replicas that ran
    out of budget are flagged in ``discarded`` and hold zeros.
    """

    lo: int
    hi: int
    seed: int
    xi: np.ndarray
    up: np.ndarray
    certificate: EscapeCertificate
    discarded: np.ndarray
    returned: np.ndarray | None = None

    @property
    def kept(self) -> np.ndarray:
        return ~self.discarded

    def site(self, R: int) -> tuple[np.ndarray, np.ndarray]:
        j = R - self.lo
        if not 0 <= j <= self.hi - self.lo:
            raise IndexError(f"site {R} outside window [{self.lo}, {self.hi}]")
        k = self.kept
        return self.xi[k, j], self.up[k, j]


def sample_window(
    model: StepModel,
    lo: int,
    hi: int,
    eps: float,
    seed: int,
    replicas: int,
    policy: TruncationPolicy = DEFAULT_POLICY,
    threads: int | None = None,
    stepwise: bool = False,
    shadow_factor: float = 0.0,
    max_moves: int = DEFAULT_MAX_MOVES,
    first_replica: int = 0,
) -> WindowBatch:
    """Certified samples of ``xi(x, inf)`` and ``xi(x, inf, up)`` for ``lo <= x <= hi``."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    plan = _plan(model, lo, hi, eps, policy, shadow_factor, stepwise)
    width = plan.hi - plan.lo + 1
    barrier = plan.certificate.barrier

    def one(r):
        xi = np.zeros(width, dtype=np.int64)
        up = np.zeros(width, dtype=np.int64)
        status, _, _, ret = _kernels.walk_window(
            make_rng(seed, first_replica + r), plan.e_tab, plan.log_h, plan.prefix,
            plan.lo, plan.hi, barrier, plan.shadow_to, max_moves, xi, up,
        )
        return status, xi, up, ret

    rows = _map_replicas(one, replicas, threads)
    a, b = lo - plan.lo, hi - plan.lo + 1
    xi = np.stack([row[1][a:b] for row in rows])
    up = np.stack([row[2][a:b] for row in rows])
    discarded = np.array([row[0] != 0 for row in rows])
    xi[discarded] = 0
    up[discarded] = 0
    returned = np.array([row[3] for row in rows]) if plan.shadow_to else None
    return WindowBatch(lo, hi, seed, xi, up, plan.certificate, discarded, returned)


@dataclass(frozen=True)
class LocalTimeSample:
    R: int
    xi: int
    xi_up: int
    certificate: EscapeCertificate
    seed_id: str


@dataclass(frozen=True)
class LocalTimeBatch:
    R: int
    seed: int
    replicas: np.ndarray
    xi: np.ndarray
    xi_up: np.ndarray
    certificate: EscapeCertificate
    discarded: int

    def __len__(self) -> int:
        return len(self.xi)

    def __iter__(self) -> Iterator[LocalTimeSample]:
        for r, a, b in zip(self.replicas, self.xi, self.xi_up):
            yield LocalTimeSample(self.R, int(a), int(b), self.certificate, f"{self.seed}:{int(r)}")


def sample_local_times(
    model: StepModel,
    R: int,
    eps: float,
    seed: int,
    replicas: int,
    policy: TruncationPolicy = DEFAULT_POLICY,
    threads: int | None = None,
    stepwise: bool = False,
    max_moves: int = DEFAULT_MAX_MOVES,
) -> LocalTimeBatch:
    """Certified samples of ``(xi(R, inf), xi(R, inf, up))``.

    Samples can undercount only on an event of probability at most ``eps``
    per replica.
    """
    w = sample_window(model, R, R, eps, seed, replicas, policy, threads, stepwise, max_moves=max_moves)
    kept = w.kept
    xi, up = w.site(R)
    return LocalTimeBatch(R, seed, np.nonzero(kept)[0], xi, up, w.certificate, int((~kept).sum()))


def sample_local_time(
    model: StepModel,
    R: int,
    eps: float = 1e-6,
    seed: int = 0,
    policy: TruncationPolicy = DEFAULT_POLICY,
    replica: int = 0,
    max_moves: int = DEFAULT_MAX_MOVES,
) -> LocalTimeSample:
    w = sample_window(model, R, R, eps, seed, 1, policy, 1, max_moves=max_moves, first_replica=replica)
    if w.discarded[0]:
        raise BudgetExceeded(f"barrier {w.certificate.barrier} not reached within {max_moves} moves")
    return LocalTimeSample(R, int(w.xi[0, 0]), int(w.up[0, 0]), w.certificate, f"{seed}:{replica}")


def conditional_pairs(
    model: StepModel,
    R: int,
    eps: float,
    seed: int,
    replicas: int,
    policy: TruncationPolicy = DEFAULT_POLICY,
    threads: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Paired upcrossing counts ``(xi(R-1, inf, up), xi(R, inf, up))``."""
    if R < 1:
        raise ValueError("R must be >= 1")
    w = sample_window(model, R - 1, R, eps, seed, replicas, policy, threads)
    k = w.kept
    return w.up[k, 0], w.up[k, 1]


def shadow_check(
    model: StepModel,
    R: int,
    eps: float,
    seed: int,
    replicas: int,
    factor: float = 10.0,
    policy: TruncationPolicy = DEFAULT_POLICY,
    threads: int | None = None,
) -> float:
    """Fraction of walks that, continued to ``factor`` times the barrier, come back to R."""
    w = sample_window(model, R, R, eps, seed, replicas, policy, threads, shadow_factor=factor)
    k = w.kept
    return float(w.returned[k].mean())


@dataclass(frozen=True)
class ScanResult:
    lo: int
    hi: int
    runs: tuple[tuple[int, int], ...]
    xi: np.ndarray
    certificate: EscapeCertificate
    seed_id: str


def _runs_of_ones(xi: np.ndarray, lo: int) -> tuple[tuple[int, int], ...]:
    ones = np.concatenate(([False], xi == 1, [False]))
    edges = np.flatnonzero(ones[1:] != ones[:-1])
    starts, stops = edges[0::2], edges[1::2]
    return tuple((int(lo + s), int(e - s)) for s, e in zip(starts, stops))


def scan_ones(
    model: StepModel,
    R_lo: int,
    R_hi: int,
    eps: float,
    seed: int,
    policy: TruncationPolicy = DEFAULT_POLICY,
    replica: int = 0,
) -> ScanResult:
    """Maximal blocks ``(start, length)`` of sites in ``[R_lo, R_hi]`` with total local time 1."""
    w = sample_window(model, R_lo, R_hi, eps, seed, 1, policy, 1, first_replica=replica)
    if w.discarded[0]:
        raise BudgetExceeded("scan did not reach its barrier")
    xi = w.xi[0]
    return ScanResult(R_lo, R_hi, _runs_of_ones(xi, R_lo), xi, w.certificate, f"{seed}:{replica}")


def scan_many(
    model: StepModel,
    R_lo: int,
    R_hi: int,
    eps: float,
    seed: int,
    replicas: int,
    policy: TruncationPolicy = DEFAULT_POLICY,
    threads: int | None = None,
) -> list[ScanResult]:
    """Independent scans, one per replica stream."""
    w = sample_window(model, R_lo, R_hi, eps, seed, replicas, policy, threads)
    out = []
    for r in range(replicas):
        if w.discarded[r]:
            continue
        out.append(ScanResult(R_lo, R_hi, _runs_of_ones(w.xi[r], R_lo), w.xi[r], w.certificate, f"{seed}:{r}"))
    return out
