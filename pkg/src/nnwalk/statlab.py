"""Statistical checks of simulated local times and positions against exact laws.

Special functions (Gamma, the Kolmogorov distribution) and the quadrature
behind the limit-law CDF are implemented here so that the test suite can
compare them with scipy as an independent reference.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from nnwalk.analytics import (
    DEFAULT_POLICY,
    TruncationPolicy,
    d_infinity,
    d_infinity_range,
    gamma_c,
    ones_run_prob_range,
)
from nnwalk.model import StepModel, iterated_log

__all__ = [
    "FitReport",
    "LILTrace",
    "adaptive_simpson",
    "conditional_mean_check",
    "fit_exponential_limit",
    "fit_geometric",
    "gamma_fn",
    "kolmogorov_cdf",
    "kolmogorov_critical",
    "ks_critical_value",
    "limit_cdf",
    "limit_density",
    "limit_density_check",
    "lil_trace_local_time",
    "lil_trace_position",
    "lln_check",
    "local_time_bound_trace",
    "mean_identity_check",
    "ones_run_frequency",
    "submartingale_trace",
]

LEVEL = 0.01
Z_BAND = 3.0


@dataclass(frozen=True)
class FitReport:
    test: str
    statistic: float
    critical_value: float
    level: float
    n: int
    decision: str
    note: str = ""
    details: dict = field(default_factory=dict)

    @classmethod
    def judge(cls, test, statistic, critical_value, level, n, note="", details=None) -> "FitReport":
        decision = "consistent" if statistic <= critical_value else "rejected"
        return cls(test, float(statistic), float(critical_value), level, int(n), decision, note, details or {})

    @property
    def consistent(self) -> bool:
        return self.decision == "consistent"

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class LILTrace:
    """Ratios along a grid with their running maximum.

    ``points`` holds ``(x, ratio)`` pairs in traversal order; ``running_max``
    is the largest ratio.  ``stderr``/``expected`` are filled by traces of
    means.
    """

    name: str
    points: tuple[tuple[float, float], ...]
    running_max: float
    normalizer: str
    stderr: tuple[float, ...] | None = None
    expected: tuple[float, ...] | None = None
    decision: str | None = None

    @property
    def running_max_sequence(self) -> np.ndarray:
        return np.maximum.accumulate(np.array([r for _, r in self.points])) if self.points else np.empty(0)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["x", "ratio", "running_max"]
        if self.stderr is not None:
            cols.append("stderr")
        if self.expected is not None:
            cols.append("expected")
        w.writerow(cols)
        run = self.running_max_sequence
        for k, (x, r) in enumerate(self.points):
            row = [_g(x), _g(r), _g(run[k])]
            if self.stderr is not None:
                row.append(_g(self.stderr[k]))
            if self.expected is not None:
                row.append(_g(self.expected[k]))
            w.writerow(row)
        return buf.getvalue()


def _g(v: float) -> str:
    return format(float(v), ".17g")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


# -- special functions --------------------------------------------------------

# Lanczos approximation, g = 7, nine coefficients
_LANCZOS_G = 7.0
_LANCZOS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


def gamma_fn(x: float) -> float:
    if x <= 0 and float(x).is_integer():
        raise ValueError(f"Gamma has a pole at {x}")
    if x < 0.5:
        return math.pi / (math.sin(math.pi * x) * gamma_fn(1.0 - x))
    x -= 1.0
    a = _LANCZOS[0]
    t = x + _LANCZOS_G + 0.5
    for k in range(1, 9):
        a += _LANCZOS[k] / (x + k)
    return math.sqrt(2.0 * math.pi) * t ** (x + 0.5) * math.exp(-t) * a


def kolmogorov_cdf(x: float) -> float:
    """P(K <= x) for the Kolmogorov distribution."""
    if x <= 0:
        return 0.0
    if x < 1.0:
        # theta-function form converges fast for small x
        s = 0.0
        for k in range(1, 20):
            s += math.exp(-((2 * k - 1) ** 2) * math.pi**2 / (8.0 * x * x))
        return math.sqrt(2.0 * math.pi) / x * s
    s = 0.0
    for k in range(1, 101):
        term = math.exp(-2.0 * k * k * x * x)
        s += term if k % 2 else -term
        if term < 1e-18:
            break
    return 1.0 - 2.0 * s


def kolmogorov_critical(level: float) -> float:
    """``c`` with ``P(K > c) = level``."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    lo, hi = 0.2, 5.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 1.0 - kolmogorov_cdf(mid) > level:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ks_critical_value(n: int, level: float = LEVEL) -> float:
    return kolmogorov_critical(level) / math.sqrt(n)


def adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float = 1e-10, max_depth: int = 60) -> float:
    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def rec(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        delta = left + right - whole
        if depth <= 0:
            raise ArithmeticError(f"quadrature did not converge on [{a}, {b}]")
        if abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        return rec(a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(m, b, fm, frm, fb, right, tol / 2.0, depth - 1)

    if b == a:
        return 0.0
    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    return rec(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, max_depth)


# -- limit law of X_n / sqrt(n) -------------------------------------------------

_LIMIT_TOP = 12.0


def limit_density(u: float, B: float) -> float:
    """Density ``u^B exp(-u^2/2) / (2^((B-1)/2) Gamma((B+1)/2))`` on ``u >= 0``."""
    if u <= 0:
        return 0.0
    norm = 2.0 ** ((B - 1.0) / 2.0) * gamma_fn((B + 1.0) / 2.0)
    return u**B * math.exp(-0.5 * u * u) / norm


def limit_cdf(x, B: float, tol: float = 1e-10) -> np.ndarray:
    """CDF of the limit law at the points ``x`` (vectorised, cumulative)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    order = np.argsort(x)
    out = np.empty_like(x)
    f = lambda u: limit_density(u, B)  # noqa: E731
    acc = 0.0
    prev = 0.0
    for k in order:
        v = min(max(x[k], 0.0), _LIMIT_TOP)
        if v > prev:
            acc += adaptive_simpson(f, prev, v, tol)
            prev = v
        out[k] = min(acc, 1.0) if x[k] < _LIMIT_TOP else 1.0
    return out


# -- KS machinery -----------------------------------------------------------------


def _ks_continuous(samples: np.ndarray, cdf_sorted: np.ndarray) -> float:
    n = len(samples)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - cdf_sorted), np.max(cdf_sorted - (i - 1) / n)))


def _degenerate(name: str, n: int, level: float) -> FitReport:
    return FitReport(name, math.inf, ks_critical_value(max(n, 1), level), level, n, "rejected", "degenerate sample: all values equal")


def fit_geometric(samples: Sequence[int], q: float, level: float = LEVEL) -> FitReport:
    """KS distance between the sample and Geometric(q) on {1, 2, ...}.

    The statistic compares right-continuous CDFs at the integer atoms.
    """
    if not 0 < q < 1:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    x = np.asarray(samples, dtype=np.int64)
    n = len(x)
    if n < 100:
        raise ValueError(f"need at least 100 samples, got {n}")
    if np.any(x < 1):
        raise ValueError("geometric samples must be >= 1")
    if np.all(x == x[0]):
        return _degenerate("geometric", n, level)
    top = int(x.max())
    k = np.arange(1, top + 1)
    counts = np.bincount(x, minlength=top + 1)[1:]
    emp = np.cumsum(counts) / n
    model = -np.expm1(k * math.log1p(-q))
    stat = float(np.max(np.abs(emp - model)))
    return FitReport.judge("geometric", stat, ks_critical_value(n, level), level, n, details={"q": q, "mean": float(x.mean())})


def fit_exponential_limit(samples: Sequence[float], level: float = LEVEL) -> FitReport:
    """KS test against the unit exponential."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n < 2:
        raise ValueError("need at least 2 samples")
    if np.all(x == x[0]):
        return _degenerate("exponential", n, level)
    stat = _ks_continuous(x, -np.expm1(-np.maximum(x, 0.0)))
    return FitReport.judge("exponential", stat, ks_critical_value(n, level), level, n, details={"mean": float(x.mean())})


def limit_density_check(samples: Sequence[float], B: float, level: float = LEVEL) -> FitReport:
    """KS test of ``X_n / sqrt(n)`` against the limit law with parameter B."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n < 2:
        raise ValueError("need at least 2 samples")
    if np.all(x == x[0]):
        return _degenerate("limit_density", n, level)
    try:
        F = limit_cdf(x, B)
    except ArithmeticError as exc:
        return FitReport("limit_density", math.nan, ks_critical_value(n, level), level, n, "rejected", f"quadrature failure: {exc}")
    stat = _ks_continuous(x, F)
    return FitReport.judge("limit_density", stat, ks_critical_value(n, level), level, n, details={"B": B})


# -- moment checks ------------------------------------------------------------------


def conditional_mean_check(
    prev_up: Sequence[int],
    next_up: Sequence[int],
    model: StepModel,
    R: int,
    min_group: int = 30,
    policy: TruncationPolicy = DEFAULT_POLICY,
) -> FitReport:
    """Group ``xi(R, up)`` by ``xi(R-1, up) = i`` and compare means with ``c_R i + 1``."""
    i = np.asarray(prev_up, dtype=np.int64)
    y = np.asarray(next_up, dtype=float)
    if i.shape != y.shape:
        raise ValueError("paired arrays differ in length")
    _, c = gamma_c(model, R, policy)
    groups = {}
    worst = 0.0
    for v in np.unique(i):
        if v < 1:
            continue
        sel = y[i == v]
        if len(sel) < min_group:
            continue
        mean = sel.mean()
        se = sel.std(ddof=1) / math.sqrt(len(sel))
        target = c * v + 1.0
        z = abs(mean - target) / se if se > 0 else (0.0 if mean == target else math.inf)
        worst = max(worst, z)
        groups[int(v)] = {"n": int(len(sel)), "mean": float(mean), "se": float(se), "target": target, "z": float(z)}
    if len(groups) < 2:
        raise ValueError(f"insufficient groups with >= {min_group} observations")
    return FitReport.judge(
        "conditional_mean", worst, Z_BAND, 2.0 * (1.0 - _phi(Z_BAND)), len(y), details={"c_R": c, "groups": groups}
    )


def _phi(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def mean_identity_check(
    xi: Sequence[int], xi_up: Sequence[int], model: StepModel, R: int, policy: TruncationPolicy = DEFAULT_POLICY
) -> FitReport:
    """``E xi - 2 E xi_up + 4 p_R D / (1 + 2 p_R) = 0`` on paired samples."""
    a = np.asarray(xi, dtype=float)
    b = np.asarray(xi_up, dtype=float)
    d = d_infinity(model, R, policy).value
    p = model.e_at(R) - 0.5
    diff = a - 2.0 * b
    target = -4.0 * p * d / (1.0 + 2.0 * p)
    se = diff.std(ddof=1) / math.sqrt(len(diff))
    z = abs(diff.mean() - target) / se if se > 0 else 0.0
    return FitReport.judge("mean_identity", z, Z_BAND, 2.0 * (1.0 - _phi(Z_BAND)), len(diff),
                           details={"mean_diff": float(diff.mean()), "target": target, "se": float(se)})


def _log_c_products(model: StepModel, R_max: int, policy: TruncationPolicy) -> np.ndarray:
    """``log(c_1 ... c_R)`` for ``R = 0 .. R_max``."""
    d = d_infinity_range(model, 1, R_max, policy)
    e = model.e_array(R_max + 1)[1:]
    gamma = e * (1.0 - 1.0 / d)
    logc = np.log(gamma) - np.log1p(-gamma)
    return np.concatenate(([0.0], np.cumsum(logc)))


def submartingale_trace(
    Rs: Sequence[int], xi_up: np.ndarray, model: StepModel, policy: TruncationPolicy = DEFAULT_POLICY
) -> LILTrace:
    """Means of ``zeta(R) = xi(R, up) / (c_1 ... c_R)`` across replicas.

    ``xi_up[r, k]`` is replica r at grid point ``Rs[k]``.  Consistent when the
    means never drop by more than 3 combined standard errors between adjacent
    grid points.
    """
    Rs = [int(R) for R in Rs]
    xi_up = np.asarray(xi_up, dtype=float).reshape(-1, len(Rs))
    logc = _log_c_products(model, max(Rs), policy)
    d = np.array([d_infinity(model, R, policy).value for R in Rs])
    scale = np.exp(-logc[Rs])
    means = xi_up.mean(axis=0) * scale
    se = xi_up.std(axis=0, ddof=1) * scale / math.sqrt(xi_up.shape[0]) if xi_up.shape[0] > 1 else np.zeros(len(Rs))
    ok = all(means[k + 1] >= means[k] - Z_BAND * math.hypot(se[k], se[k + 1]) for k in range(len(Rs) - 1))
    pts = tuple((float(R), float(m)) for R, m in zip(Rs, means))
    return LILTrace(
        "submartingale", pts, float(np.max(means)), "xi_up(R) / (c_1 ... c_R)",
        tuple(float(s) for s in se), tuple(float(v) for v in d * scale), "consistent" if ok else "rejected",
    )


# -- ratio traces -----------------------------------------------------------------------


def _trace(name: str, xs, ratios, normalizer: str) -> LILTrace:
    pts = tuple((float(x), float(r)) for x, r in zip(xs, ratios))
    return LILTrace(name, pts, max((r for _, r in pts), default=-math.inf), normalizer)


def lil_trace_local_time(Rs: Sequence[int], xi: np.ndarray, B: float) -> LILTrace:
    """Per-R maximum over replicas of ``(B-1) xi(R) / (2 R log log R)``."""
    if B <= 1:
        raise ValueError("needs B > 1")
    xi = np.asarray(xi, dtype=float).reshape(-1, len(Rs))
    norm = np.array([2.0 * R * iterated_log(2, R) / (B - 1.0) for R in Rs])
    return _trace("lil_local_time", Rs, xi.max(axis=0) / norm, "2 R log log R / (B - 1)")


def local_time_bound_trace(
    Rs: Sequence[int], xi: np.ndarray, model: StepModel, bound: float = 1.5, policy: TruncationPolicy = DEFAULT_POLICY
) -> LILTrace:
    """Per-R maximum over replicas of ``xi(R) / (2 D(R, inf) log R)``, judged against ``bound``."""
    xi = np.asarray(xi, dtype=float).reshape(-1, len(Rs))
    norm = np.array([2.0 * d_infinity(model, R, policy).value * math.log(R) for R in Rs])
    tr = _trace("local_time_bound", Rs, xi.max(axis=0) / norm, "2 D(R, inf) log R")
    return LILTrace(tr.name, tr.points, tr.running_max, tr.normalizer,
                    decision="consistent" if tr.running_max <= bound else "rejected")


def lil_trace_position(times: Sequence[int], positions: np.ndarray) -> LILTrace:
    """Per-checkpoint maximum over replicas of ``X_n / sqrt(2 n log log n)``.

    Checkpoints with ``log log n <= 0`` are skipped.
    """
    times = np.asarray(times)
    pos = np.asarray(positions, dtype=float).reshape(-1, len(times))
    keep = [k for k, n in enumerate(times) if n > math.e and math.log(math.log(n)) > 0]
    xs = times[keep]
    norm = np.sqrt(2.0 * xs * np.log(np.log(xs.astype(float))))
    return _trace("lil_position", xs, pos[:, keep].max(axis=0) / norm, "sqrt(2 n log log n)")


def lln_check(samples: Sequence[float], n: int, alpha: float, B: float, max_cv: float = 0.05) -> FitReport:
    """Concentration of ``X_n / n^(1/(1+alpha))`` for the power family.

    Reports both candidate constants for the limit: the drift-ODE value
    ``((1+alpha) B / 2)^(1/(1+alpha))`` and ``2c(1+alpha)`` with ``c = B/4``.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    x = np.asarray(samples, dtype=float) / n ** (1.0 / (1.0 + alpha))
    mean = float(x.mean())
    sd = float(x.std(ddof=1))
    c = B / 4.0
    details = {
        "mean": mean,
        "sd": sd,
        "se": sd / math.sqrt(len(x)),
        "ode_constant": ((1.0 + alpha) * 2.0 * c) ** (1.0 / (1.0 + alpha)),
        "stated_constant": 2.0 * c * (1.0 + alpha),
    }
    return FitReport.judge("lln", sd / mean, max_cv, math.nan, len(x), details=details)


def ones_run_frequency(
    scans: Sequence, model: StepModel, window: tuple[int, int], lengths: Sequence[int], min_expected: float = 5.0,
    policy: TruncationPolicy = DEFAULT_POLICY,
) -> FitReport:
    """Count, per trajectory, the R in ``window`` with ``xi(R+1) = ... = xi(R+L) = 1``.

    The mean count over trajectories is compared with the sum of exact run
    probabilities over the window, for each L.  Each scan must cover the sites
    ``window[0] + 1 .. window[1] + max(lengths)``.
    """
    R_lo, R_hi = window
    L_max = max(lengths)
    per_len = {}
    worst = 0.0
    notes = []
    for L in lengths:
        counts = []
        for sc in scans:
            if sc.lo > R_lo + 1 or sc.hi < R_hi + L_max:
                raise ValueError("scan does not cover the window")
            c = 0
            for start, length in sc.runs:
                # R + 1 ranges over [start, start + length - L]
                a = max(start - 1, R_lo)
                b = min(start + length - L - 1, R_hi)
                if b >= a:
                    c += b - a + 1
            counts.append(c)
        counts = np.array(counts, dtype=float)
        expected = float(ones_run_prob_range(model, R_lo, R_hi, L, policy).sum())
        if expected * len(scans) < min_expected:
            notes.append(f"L={L} skipped: expected total count {expected * len(scans):.3g} below {min_expected}")
            continue
        mean = counts.mean()
        se = counts.std(ddof=1) / math.sqrt(len(counts)) if len(counts) > 1 else math.sqrt(expected)
        z = abs(mean - expected) / se if se > 0 else math.inf
        worst = max(worst, z)
        per_len[int(L)] = {"mean": float(mean), "expected": expected, "se": float(se), "z": float(z)}
    return FitReport.judge("ones_run", worst, Z_BAND, 2.0 * (1.0 - _phi(Z_BAND)), len(scans), "; ".join(notes),
                           {"lengths": per_len})
