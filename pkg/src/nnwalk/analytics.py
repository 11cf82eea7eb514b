"""Escape series, hitting probabilities and local-time laws.

The central object is the escape series

    D(m, n) = sum_{j=0}^{n-m-1} prod_{i=m+1}^{m+j} U_i,   U_i = (1/2 - p_i) / (1/2 + p_i),

with ``D(m, m) = 0`` and ``D(m, m+1) = 1``.  Products are carried as running
sums of ``log U_i`` and the series itself is summed with compensation.

Infinite series are truncated with a certified two-sided bracket on the
omitted mass whenever the family admits one:

* constant ``p``: the tail is an exact geometric series;
* Lambda family: ``-log U_i >= 4 p_i`` and the closed-form antiderivative of
  ``Lambda(K, x, B)`` give integral bounds on both sides;
* power and log-power families: a dyadic-block geometric majorant (upper
  bound only).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from nnwalk import _kernels
from nnwalk.model import DomainError, StepModel, iterated_log, lambda_fn

__all__ = [
    "ClassificationVerdict",
    "ExcursionLaws",
    "Interval",
    "NonConvergent",
    "SeriesResult",
    "Thresholds",
    "TruncationPolicy",
    "UnsupportedFamily",
    "asym_d_infinity",
    "classify",
    "d_finite",
    "d_infinity",
    "d_infinity_range",
    "escape_prob",
    "excursion_pmfs",
    "gamma_c",
    "hitting_prob",
    "local_time_mean",
    "local_time_pmf",
    "ones_run_prob",
    "ones_run_prob_range",
    "prefix_table",
    "run_thresholds",
    "upcross_mgf",
    "upcross_pmf",
]

_EPS = 2.0**-52


class NonConvergent(ArithmeticError):
    """A series needed for the answer could not be certified."""

    def __init__(self, message: str, result: "SeriesResult | None" = None):
        super().__init__(message)
        self.result = result


class UnsupportedFamily(ValueError):
    pass


@dataclass(frozen=True)
class TruncationPolicy:
    tol: float = 1e-10
    max_terms: int = 100_000_000
    block: int = 1024

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ValueError(f"tol must lie in (0, 1), got {self.tol}")
        if self.max_terms < 1 or self.block < 1:
            raise ValueError("max_terms and block must be positive")


DEFAULT_POLICY = TruncationPolicy()


@dataclass(frozen=True)
class SeriesResult:
    """Truncated value of ``D(m, inf)``.

    ``value`` is the partial sum plus the midpoint of the certified tail
    bracket ``[tail_lower, tail_upper]``; ``tail_bound`` is the half-width of
    that bracket plus a rounding allowance, i.e. a bound on ``|D - value|``
    (``inf`` when no upper bracket is known).
    """

    value: float
    terms_used: int
    tail_bound: float
    converged: bool
    partial: float
    tail_lower: float
    tail_upper: float
    criterion: str

    @property
    def upper(self) -> float:
        return self.value + self.tail_bound

    @property
    def diverges(self) -> bool:
        return math.isinf(self.tail_lower)


@dataclass(frozen=True)
class ClassificationVerdict:
    verdict: str
    partial_sum: float
    terms_used: int
    tail_upper: float
    tail_lower: float
    criterion: str
    note: str = ""


class _Series:
    """Running ``D(m, m+1+j)``; ``site`` is the index of the last U used."""

    def __init__(self, model: StepModel, m: int):
        self.model = model
        self.m = m
        self.site = m
        self.level = 0.0
        self.level_c = 0.0
        self.total = 1.0
        self.total_c = 0.0
        self.terms = 1
        self._empty = np.empty(0)

    @property
    def sum(self) -> float:
        return self.total + self.total_c

    @property
    def log_term(self) -> float:
        return self.level + self.level_c

    def extend(self, count: int, record: np.ndarray | None = None) -> int:
        """Add up to ``count`` terms; returns how many were added."""
        stop = self.site + 1 + count
        cap = self.model.max_site
        if cap is not None:
            stop = min(stop, cap + 1)
        n = stop - self.site - 1
        if n <= 0:
            return 0
        logu = self.model.log_u_array(self.site + 1, stop)
        rec = self._empty if record is None else record
        self.level, self.level_c, self.total, self.total_c = _kernels.accumulate_terms(
            logu, self.level, self.level_c, self.total, self.total_c, rec
        )
        self.site = stop - 1
        self.terms += n
        return n

    def restart_sum(self):
        self.total = 0.0
        self.total_c = 0.0


# -- tail brackets ------------------------------------------------------------
# Each returns bounds (lo, hi) on sum_{k>=1} prod_{i=N+1}^{N+k} U_i, the tail
# measured in units of the last included term.


def _lambda_tail_ratio(model: StepModel, N: int) -> tuple[float, float]:
    K = int(model["K"])
    B = model["B"]
    if N < model.i0:
        return 0.0, math.inf
    if B <= 1.0:
        # the lower integral diverges: the series is certified infinite
        return math.inf, math.inf
    y = N + 1.0
    try:
        hi = lambda_fn(K, y) / (B - 1.0)
        # lower side: sum p_i <= integral from N, cubic remainder of -log U
        p1 = model.raw_continuous(y)
        c = y * p1
        eps = 16.0 / 3.0 / (1.0 - 4.0 * p1 * p1) * (p1**3 + c**3 / (2.0 * y * y))
        l_n = iterated_log(K - 1, float(N))
        l_y = iterated_log(K - 1, y)
        log_lo = (
            -eps
            + math.log(lambda_fn(K - 1, float(N)))
            + B * math.log(l_n)
            + (1.0 - B) * math.log(l_y)
            - math.log(B - 1.0)
        )
        lo = math.exp(log_lo)
    except (DomainError, ValueError):
        return 0.0, math.inf
    return min(lo, hi), hi


def _dyadic_tail_ratio(model: StepModel, N: int) -> tuple[float, float]:
    # U_i increases towards 1 here, so bound each block [a, 2a) by its right end
    if N < model.i0:
        return 0.0, math.inf
    a = float(N + 1)
    log_start = 0.0  # log of the term preceding the block, relative to t_N
    total = 0.0
    prev = math.inf
    for _ in range(200):
        b = 2.0 * a
        p = model.raw_continuous(b)
        log_u = math.log1p(-2.0 * p) - math.log1p(2.0 * p)
        u = math.exp(log_u)
        contrib = math.exp(log_start) * u / (-math.expm1(log_u))
        total += contrib
        if contrib <= 1e-18 * total and contrib <= 0.5 * prev:
            # block bounds now shrink at least geometrically
            return 0.0, total + contrib
        prev = contrib
        log_start += (b - a) * log_u
        a = b
    return 0.0, math.inf


def _tail_ratio(model: StepModel, N: int) -> tuple[float, float, str]:
    f = model.family
    if f == "const":
        p = model["p"]
        lu = model.log_u_at(1)
        if lu == 0.0:
            return math.inf, math.inf, "exact_geometric"
        r = math.exp(lu) / -math.expm1(lu)
        return r, r, "exact_geometric"
    if f == "lambda":
        lo, hi = _lambda_tail_ratio(model, N)
        return lo, hi, "integral_bracket"
    if f in ("power", "logpow"):
        lo, hi = _dyadic_tail_ratio(model, N)
        return lo, hi, "dyadic_majorant"
    return 0.0, math.inf, "none"


def _bracket(series: _Series) -> tuple[float, float, str]:
    lo_r, hi_r, crit = _tail_ratio(series.model, series.site)
    t = math.exp(series.log_term)
    lo = math.inf if math.isinf(lo_r) else lo_r * t
    hi = math.inf if math.isinf(hi_r) else hi_r * t
    return lo, hi, crit


def _result(series: _Series, lo: float, hi: float, crit: str, tol: float) -> SeriesResult:
    partial = series.sum
    rounding = 8.0 * _EPS * partial * (1.0 + abs(series.log_term))
    if math.isinf(hi):
        value = partial + (0.0 if math.isinf(lo) else lo)
        return SeriesResult(value, series.terms, math.inf, False, partial, lo, hi, crit)
    mid = 0.5 * (lo + hi)
    value = partial + mid
    bound = 0.5 * (hi - lo) + rounding
    return SeriesResult(value, series.terms, bound, bound <= tol * value, partial, lo, hi, crit)


def _run(model: StepModel, m: int, policy: TruncationPolicy, stop_when_finite: bool = False) -> SeriesResult:
    series = _Series(model, m)
    block = policy.block
    res = None
    while True:
        room = policy.max_terms - series.terms
        if room <= 0:
            break
        added = series.extend(min(block, room))
        lo, hi, crit = _bracket(series)
        res = _result(series, lo, hi, crit, policy.tol)
        if res.converged or res.diverges or added == 0:
            break
        if stop_when_finite and not math.isinf(hi):
            break
        block *= 2
    if res is None:
        lo, hi, crit = _bracket(series)
        res = _result(series, lo, hi, crit, policy.tol)
    return res


# -- public operations ----------------------------------------------------------


def d_finite(model: StepModel, m: int, n: int) -> float:
    """D(m, n) for ``n >= m``."""
    if m < 0 or n < m:
        raise ValueError(f"need 0 <= m <= n, got m={m}, n={n}")
    if n == m:
        return 0.0
    series = _Series(model, m)
    remaining = n - m - 1
    while remaining > 0:
        added = series.extend(min(remaining, 1 << 22))
        if added == 0:
            raise IndexError(f"model undefined beyond site {series.site}")
        remaining -= added
    return series.sum


def prefix_table(model: StepModel, m: int, length: int) -> np.ndarray:
    """``D(m, m+k)`` for ``k = 0 .. length``."""
    if length < 1:
        raise ValueError("length must be >= 1")
    out = np.empty(length + 1)
    out[0] = 0.0
    out[1] = 1.0
    if length > 1:
        series = _Series(model, m)
        added = series.extend(length - 1, out[2:])
        if added < length - 1:
            raise IndexError(f"model undefined beyond site {series.site}")
    return out


@functools.lru_cache(maxsize=4096)
def d_infinity(model: StepModel, m: int, policy: TruncationPolicy = DEFAULT_POLICY) -> SeriesResult:
    """D(m, inf) with a certified error bound.

    ``converged`` is False when the bound exceeds ``policy.tol * value`` after
    ``policy.max_terms`` terms, and in particular for recurrent models.
    """
    if m < 0:
        raise ValueError(f"m must be non-negative, got {m}")
    return _run(model, m, policy)


def _require(res: SeriesResult, what: str) -> SeriesResult:
    if not res.converged:
        raise NonConvergent(
            f"{what}: series not certified (value {res.value:.6g}, bound {res.tail_bound:.3g}, "
            f"{res.terms_used} terms, {res.criterion})",
            res,
        )
    return res


def d_infinity_range(model: StepModel, lo: int, hi: int, policy: TruncationPolicy = DEFAULT_POLICY) -> np.ndarray:
    """``D(x, inf)`` for ``lo <= x <= hi`` via ``D(x-1) = 1 + U_x D(x)``.

    The backward recursion contracts errors, so one certified value at ``hi``
    suffices.
    """
    top = _require(d_infinity(model, hi, policy), f"D({hi}, inf)").value
    out = np.empty(hi - lo + 1)
    out[-1] = top
    if hi > lo:
        u = np.exp(model.log_u_array(lo + 1, hi + 1))
        for k in range(hi - lo - 1, -1, -1):
            out[k] = 1.0 + u[k] * out[k + 1]
    return out


def classify(model: StepModel, policy: TruncationPolicy = DEFAULT_POLICY) -> ClassificationVerdict:
    """Transient / Recurrent / Undecided from the series ``sum_k prod_{i<=k} U_i``."""
    res = _run(model, 0, policy, stop_when_finite=True)
    if not math.isinf(res.tail_upper):
        return ClassificationVerdict("Transient", res.partial, res.terms_used, res.tail_upper, res.tail_lower, res.criterion)
    if res.diverges:
        return ClassificationVerdict(
            "Recurrent", res.partial, res.terms_used, res.tail_upper, res.tail_lower, res.criterion,
            "certified lower bound on the tail is infinite",
        )
    # no bracket for this family: fall back to a flatness test on the last terms
    series = _Series(model, 0)
    series.extend(min(policy.max_terms, 1 << 22) - 1)
    last = math.exp(series.log_term)
    blk = min(policy.block, series.terms - 1)
    if blk > 0:
        before = series.sum
        tail = _Series(model, 0)
        tail.extend(series.terms - 1 - blk)
        first_of_block = math.exp(tail.log_term)
        flat = last >= first_of_block * (1.0 - policy.tol)
        if before > 1.0 / policy.tol and flat:
            return ClassificationVerdict(
                "Recurrent", before, series.terms, math.inf, 0.0, "flat_terms",
                "partial sum exceeds 1/tol with non-decaying terms",
            )
    return ClassificationVerdict(
        "Undecided", series.sum, series.terms, math.inf, 0.0, res.criterion, "no certificate either way"
    )


def hitting_prob(
    model: StepModel, a: int, b: int, c: Optional[int] = None, policy: TruncationPolicy = DEFAULT_POLICY
) -> float:
    """Probability that the walk started at ``b`` hits ``a`` before ``c``.

    ``c=None`` stands for ``c = infinity`` (never escaping to the right).
    """
    if a < 0 or b < a or (c is not None and c < b):
        raise ValueError(f"need 0 <= a <= b <= c, got a={a}, b={b}, c={c}")
    if b == a:
        return 1.0
    if c is not None and b == c:
        return 0.0
    series = _Series(model, a)
    if b - a - 1 > 0:
        series.extend(b - a - 1)
    lower = series.sum  # D(a, b)
    if c is None:
        log_prod = series.log_term + model.log_u_at(b)
        rest = _require(d_infinity(model, b, policy), f"D({b}, inf)").value
        upper = math.exp(log_prod) * rest
    else:
        series.restart_sum()
        # the next c - b terms form D(a, c) - D(a, b)
        series.extend(c - b)
        upper = series.sum
    return upper / (lower + upper)


def escape_prob(model: StepModel, m: int, policy: TruncationPolicy = DEFAULT_POLICY) -> float:
    """``1 - p(m, m+1, inf) = 1 / D(m, inf)``: from ``m+1``, never return to ``m``."""
    return 1.0 / _require(d_infinity(model, m, policy), f"D({m}, inf)").value


def _p_eff(model: StepModel, R: int) -> float:
    # E_0 = 1 corresponds to p_0 = 1/2 in the local-time formulas
    return model.e_at(R) - 0.5


def local_time_q(model: StepModel, R: int, policy: TruncationPolicy = DEFAULT_POLICY) -> float:
    D = _require(d_infinity(model, R, policy), f"D({R}, inf)").value
    return (1.0 + 2.0 * _p_eff(model, R)) / (2.0 * D)


def local_time_pmf(model: StepModel, R: int, L, policy: TruncationPolicy = DEFAULT_POLICY):
    """P(total local time at R equals L), geometric on L = 1, 2, ..."""
    q = local_time_q(model, R, policy)
    L = np.asarray(L)
    if np.any(L < 1):
        raise ValueError("L must be >= 1")
    out = q * np.exp((L - 1) * math.log1p(-q))
    return float(out) if out.ndim == 0 else out


def local_time_mean(model: StepModel, R: int, policy: TruncationPolicy = DEFAULT_POLICY) -> float:
    return 1.0 / local_time_q(model, R, policy)


def upcross_pmf(model: StepModel, R: int, L, policy: TruncationPolicy = DEFAULT_POLICY):
    """P(number of R -> R+1 steps equals L), geometric with success 1/D(R, inf)."""
    D = _require(d_infinity(model, R, policy), f"D({R}, inf)").value
    L = np.asarray(L)
    if np.any(L < 1):
        raise ValueError("L must be >= 1")
    out = (1.0 / D) * np.exp((L - 1) * math.log1p(-1.0 / D))
    return float(out) if out.ndim == 0 else out


def upcross_mgf(model: StepModel, R: int, lam: float, policy: TruncationPolicy = DEFAULT_POLICY) -> float:
    D = _require(d_infinity(model, R, policy), f"D({R}, inf)").value
    el = math.exp(lam)
    denom = D - el * (D - 1.0)
    if not denom > 0:
        raise DomainError(f"mgf undefined at lambda={lam}: need e^lambda < D/(D-1) = {D / (D - 1.0) if D > 1 else math.inf}")
    return el / denom


def gamma_c(model: StepModel, R: int, policy: TruncationPolicy = DEFAULT_POLICY) -> tuple[float, float]:
    """(gamma_R, c_R): probability of stepping up and coming back, and its odds."""
    ret = 1.0 - escape_prob(model, R, policy)
    gamma = model.e_at(R) * ret
    return gamma, gamma / (1.0 - gamma)


@dataclass(frozen=True)
class ExcursionLaws:
    """Sub-probability laws of upcrossings at R during one sojourn started at R.

    ``down(j)``: j upcrossings, then the walk steps down to R-1.
    ``escape(j)``: j upcrossings, the last one never returns.
    """

    p_R: float
    gamma: float

    def down(self, j):
        j = np.asarray(j)
        out = (0.5 - self.p_R) * self.gamma**j
        return float(out) if out.ndim == 0 else out

    def escape(self, j):
        j = np.asarray(j)
        if np.any(j < 1):
            raise ValueError("escape law lives on j >= 1")
        out = (0.5 + self.p_R - self.gamma) * self.gamma ** (j - 1)
        return float(out) if out.ndim == 0 else out

    @property
    def down_mass(self) -> float:
        return (0.5 - self.p_R) / (1.0 - self.gamma)

    @property
    def escape_mass(self) -> float:
        return (0.5 + self.p_R - self.gamma) / (1.0 - self.gamma)


def excursion_pmfs(model: StepModel, R: int, policy: TruncationPolicy = DEFAULT_POLICY) -> ExcursionLaws:
    if R < 1:
        raise ValueError("excursion laws need R >= 1")
    gamma, _ = gamma_c(model, R, policy)
    return ExcursionLaws(model.p_at(R), gamma)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __contains__(self, x: float) -> bool:
        return self.lo <= x <= self.hi


def asym_d_infinity(model: StepModel, m: int) -> float | Interval:
    """Leading-order size of ``D(m, inf)`` for the drift families."""
    f = model.family
    if f == "lambda":
        B = model["B"]
        if B <= 1:
            raise UnsupportedFamily("D(m, inf) is infinite for B <= 1")
        return lambda_fn(int(model["K"]), m) / (B - 1.0)
    if f == "power":
        return m ** model["alpha"] / model["B"]
    if f == "logpow":
        s = math.log(m) ** model["alpha"]
        # the bounding constants are only known to exist; report a wide band
        return Interval(0.1 * s, 10.0 * s)
    raise UnsupportedFamily(f"no asymptotic form for the {f} family")


@dataclass(frozen=True)
class Thresholds:
    f: float
    g: float
    f_star: float | None
    g_star: float | None


def run_thresholds(R: float, N: int, eps: float = 0.0, alpha: float | None = None) -> Thresholds:
    """Run-length thresholds for the Lambda(1) and power families (base-2 units)."""
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    logs = [iterated_log(j, R) for j in range(2, N + 1)]
    ln2 = math.log(2.0)
    g = math.fsum(logs) / ln2
    f = (math.fsum(logs) + eps * logs[-1]) / ln2
    f_star = g_star = None
    if alpha is not None:
        if not 0 < alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        g_star = (1.0 - alpha) * math.log(R) / ln2
        f_star = (1.0 + eps) * g_star
    return Thresholds(f, g, f_star, g_star)


def ones_run_prob(model: StepModel, R: int, length: int, policy: TruncationPolicy = DEFAULT_POLICY) -> float:
    """P(sites R+1 .. R+length are each visited exactly once).

    The walk must climb straight from R+1 to R+length+1 and never come back
    to R+length.  ``length = 0`` gives the escape probability from R.
    """
    if length < 0:
        raise ValueError("length must be non-negative")
    log_climb = math.fsum(math.log(model.e_at(R + j)) for j in range(1, length + 1))
    return math.exp(log_climb) * escape_prob(model, R + length, policy)


def ones_run_prob_range(
    model: StepModel, R_lo: int, R_hi: int, length: int, policy: TruncationPolicy = DEFAULT_POLICY
) -> np.ndarray:
    """``ones_run_prob(R, length)`` for every ``R_lo <= R <= R_hi``."""
    d = d_infinity_range(model, R_lo + length, R_hi + length, policy)
    e = model.e_array(R_hi + length + 1)
    log_e = np.log(e)
    csum = np.concatenate(([0.0], np.cumsum(log_e)))
    R = np.arange(R_lo, R_hi + 1)
    log_climb = csum[R + length + 1] - csum[R + 1]
    return np.exp(log_climb) / d
