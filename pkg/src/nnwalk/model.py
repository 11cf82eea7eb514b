"""Step-probability families for nearest-neighbour walks on {0, 1, 2, ...}.

A walk at site ``i >= 1`` steps up with probability ``E_i = 1/2 + p_i`` and
down otherwise; site 0 always steps up.  Every family here is clamped the
same way: below the first index ``i0`` where the raw formula drops under 1/2,
the value at ``i0`` is reused.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "DomainError",
    "ModelSpecError",
    "StepModel",
    "iterated_log",
    "iterated_log_array",
    "lambda_fn",
    "big_lambda",
    "parse_model",
]

# intermediate arguments of an iterated log must exceed this
LOG_GUARD = 1.0 + 1e-12
# i0 scan gives up here; every supported family is below 1/2 long before
_I0_SCAN_LIMIT = 10**7


class DomainError(ValueError):
    """An iterated logarithm was asked for outside its domain."""


class ModelSpecError(ValueError):
    """A model specification string or parameter set is malformed."""


def iterated_log(k: int, x: float) -> float:
    """Natural log applied ``k`` times; ``iterated_log(0, x) == x``."""
    if k < 0:
        raise DomainError(f"iteration count must be non-negative, got {k}")
    v = float(x)
    for _ in range(k):
        if not v > LOG_GUARD:
            raise DomainError(f"log_{k}({x}) undefined: intermediate value {v} <= 1")
        v = math.log(v)
    return v


def iterated_log_array(k: int, x: np.ndarray) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    for _ in range(k):
        if v.size and not np.all(v > LOG_GUARD):
            raise DomainError(f"log_{k} undefined on part of the index range")
        v = np.log(v)
    return v


def lambda_fn(k: int, i: float) -> float:
    """lambda(0,i) = 1, lambda(k,i) = lambda(k-1,i) * log_{k-1} i."""
    if k < 0:
        raise DomainError(f"k must be non-negative, got {k}")
    out = 1.0
    v = float(i)
    for j in range(k):
        if j > 0:
            if not v > LOG_GUARD:
                raise DomainError(f"lambda({k},{i}) undefined: intermediate value {v} <= 1")
            v = math.log(v)
        out *= v
    return out


def _lambda_array(k: int, x: np.ndarray) -> np.ndarray:
    out = np.ones_like(x, dtype=np.float64)
    v = np.asarray(x, dtype=np.float64)
    for j in range(k):
        if j > 0:
            if v.size and not np.all(v > LOG_GUARD):
                raise DomainError(f"lambda({k}, .) undefined on part of the index range")
            v = np.log(v)
        out = out * v
    return out


def big_lambda(K: int, i: float, B: float | None = None) -> float:
    """Sum of 1/lambda(k,i) for k < K plus B/lambda(K,i).

    With ``B`` omitted this is the plain sum up to ``K`` (``B = 1``).
    """
    if K < 0:
        raise DomainError(f"K must be non-negative, got {K}")
    if K == 0:
        return 0.0
    b = 1.0 if B is None else float(B)
    total = 0.0
    for k in range(1, K):
        total += 1.0 / lambda_fn(k, i)
    return total + b / lambda_fn(K, i)


def _big_lambda_array(K: int, x: np.ndarray, B: float) -> np.ndarray:
    total = np.zeros_like(x, dtype=np.float64)
    for k in range(1, K):
        total += 1.0 / _lambda_array(k, x)
    return total + B / _lambda_array(K, x)


@dataclass(frozen=True)
class StepModel:
    """A ``p_i`` family together with its clamping index ``i0``.

    Build instances through the family constructors (``StepModel.constant``,
    ``StepModel.lambda_family`` ...) or :func:`parse_model`.
    """

    family: str
    params: tuple[tuple[str, float], ...]
    values: tuple[float, ...] = ()
    source: str | None = None
    i0: int = field(default=1)

    # -- construction -----------------------------------------------------

    @classmethod
    def lambda_family(cls, K: int, B: float) -> "StepModel":
        if int(K) != K or K < 1:
            raise ModelSpecError(f"lambda family needs a positive integer K, got {K}")
        if not B > 0:
            raise ModelSpecError(f"lambda family needs B > 0, got {B}")
        return cls._clamped("lambda", (("K", int(K)), ("B", float(B))))

    @classmethod
    def power(cls, alpha: float, B: float) -> "StepModel":
        if not 0 < alpha < 1:
            raise ModelSpecError(f"power family needs 0 < alpha < 1, got {alpha}")
        if not B > 0:
            raise ModelSpecError(f"power family needs B > 0, got {B}")
        return cls._clamped("power", (("alpha", float(alpha)), ("B", float(B))))

    @classmethod
    def log_power(cls, alpha: float, B: float) -> "StepModel":
        if not alpha > 0:
            raise ModelSpecError(f"log-power family needs alpha > 0, got {alpha}")
        if not B > 0:
            raise ModelSpecError(f"log-power family needs B > 0, got {B}")
        return cls._clamped("logpow", (("alpha", float(alpha)), ("B", float(B))))

    @classmethod
    def constant(cls, p: float) -> "StepModel":
        if not 0 <= p < 0.5:
            raise ModelSpecError(f"constant family needs 0 <= p < 1/2, got {p}")
        return cls("const", (("p", float(p)),))

    @classmethod
    def table(cls, values: Sequence[float], source: str | None = None) -> "StepModel":
        vals = tuple(float(v) for v in values)
        if not vals:
            raise ModelSpecError("table family needs at least one value")
        bad = [v for v in vals if not 0 <= v < 0.5]
        if bad:
            raise ModelSpecError(f"table values must lie in [0, 1/2), got {bad[0]}")
        return cls("table", (), vals, source)

    @classmethod
    def _clamped(cls, family, params):
        proto = cls(family, params)

        def below_half(i):
            try:
                return proto._raw(i) < 0.5
            except (DomainError, OverflowError):
                return False

        # the predicate is monotone (domain is an up-set, formula decreasing on
        # it), so bisection finds the same i0 as a linear scan from 1
        hi = 1
        while not below_half(hi):
            hi *= 2
            if hi > _I0_SCAN_LIMIT:
                raise ModelSpecError(f"{family}{params}: raw formula never drops below 1/2")
        lo = hi // 2
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if below_half(mid):
                hi = mid
            else:
                lo = mid
        return cls(family, params, i0=hi)

    # -- parameters -------------------------------------------------------

    def __getitem__(self, name: str) -> float:
        return dict(self.params)[name]

    @property
    def is_clamped(self) -> bool:
        return self.family in ("lambda", "power", "logpow")

    @property
    def spec(self) -> str:
        """Canonical model string (inverse of :func:`parse_model`)."""
        if self.family == "table":
            if self.source is not None:
                return f"table:@{self.source}"
            return "table:" + ";".join(repr(v) for v in self.values)
        name = {"lambda": "lambda", "power": "power", "logpow": "logpow", "const": "const"}[self.family]
        return f"{name}:" + ",".join(f"{k}={_fmt_param(v)}" for k, v in self.params)

    def __str__(self) -> str:
        return self.spec

    # -- p_i and friends --------------------------------------------------

    def _raw(self, i: float) -> float:
        f = self.family
        if f == "lambda":
            return 0.25 * big_lambda(int(self["K"]), i, self["B"])
        if f == "power":
            return self["B"] / (4.0 * i ** self["alpha"])
        if f == "logpow":
            li = iterated_log(1, i)
            return self["B"] / (4.0 * li ** self["alpha"])
        raise AssertionError(f)

    def raw_continuous(self, x: float) -> float:
        """Unclamped formula at a real argument (used by tail bounds)."""
        if not self.is_clamped:
            raise ModelSpecError(f"{self.family} family has no continuous formula")
        return self._raw(x)

    def p_at(self, i: int) -> float:
        if i < 1:
            raise IndexError(f"p_i is defined for i >= 1, got {i}")
        f = self.family
        if f == "const":
            return self["p"]
        if f == "table":
            if i > len(self.values):
                raise IndexError(f"table model has {len(self.values)} entries, asked for p_{i}")
            return self.values[i - 1]
        return self._raw(max(i, self.i0))

    def e_at(self, i: int) -> float:
        """Probability of stepping up from site ``i`` (1 at the origin)."""
        if i == 0:
            return 1.0
        return 0.5 + self.p_at(i)

    def u_at(self, i: int) -> float:
        p = self.p_at(i)
        return (0.5 - p) / (0.5 + p)

    def log_u_at(self, i: int) -> float:
        p = self.p_at(i)
        return math.log1p(-2.0 * p) - math.log1p(2.0 * p)

    def p_array(self, start: int, stop: int) -> np.ndarray:
        """``p_i`` for ``start <= i < stop`` as a float64 array."""
        if start < 1:
            raise IndexError(f"p_i is defined for i >= 1, got start={start}")
        n = max(0, stop - start)
        f = self.family
        if f == "const":
            return np.full(n, self["p"])
        if f == "table":
            if stop - 1 > len(self.values):
                raise IndexError(f"table model has {len(self.values)} entries, asked up to p_{stop - 1}")
            return np.asarray(self.values[start - 1 : stop - 1], dtype=np.float64)
        idx = np.arange(start, stop, dtype=np.float64)
        x = np.maximum(idx, float(self.i0))
        if f == "lambda":
            return 0.25 * _big_lambda_array(int(self["K"]), x, self["B"])
        if f == "power":
            return self["B"] / (4.0 * x ** self["alpha"])
        return self["B"] / (4.0 * iterated_log_array(1, x) ** self["alpha"])

    def log_u_array(self, start: int, stop: int) -> np.ndarray:
        p = self.p_array(start, stop)
        return np.log1p(-2.0 * p) - np.log1p(2.0 * p)

    def e_array(self, stop: int) -> np.ndarray:
        """``E_i`` for ``0 <= i < stop``."""
        out = np.empty(max(stop, 1))
        out[0] = 1.0
        if stop > 1:
            out[1:stop] = 0.5 + self.p_array(1, stop)
        return out[:stop]

    @property
    def max_site(self) -> int | None:
        """Largest ``i`` with a defined ``p_i`` (``None`` when unbounded)."""
        return len(self.values) if self.family == "table" else None


def _fmt_param(v: float) -> str:
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


_FAMILY_KEYS = {
    "lambda": ("K", "B"),
    "power": ("alpha", "B"),
    "logpow": ("alpha", "B"),
    "const": ("p",),
}


def parse_model(text: str, base_dir: str | Path | None = None) -> StepModel:
    """Parse ``lambda:K=1,B=3``, ``power:alpha=0.5,B=1``, ``logpow:alpha=1,B=2``,
    ``const:p=0.1`` or ``table:@file.csv`` (one ``p_i`` per line, from ``i = 1``).

    Inline tables ``table:0.1;0.05;0.02`` are also accepted.
    """
    name, sep, rest = text.strip().partition(":")
    if not sep:
        raise ModelSpecError(f"model spec {text!r} lacks a ':'")
    name = name.strip().lower()
    if name == "table":
        rest = rest.strip()
        if rest.startswith("@"):
            path = Path(rest[1:])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            try:
                lines = path.read_text().splitlines()
            except OSError as exc:
                raise ModelSpecError(f"cannot read table file {path}: {exc}") from exc
            vals = [ln.split(",")[0].strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
            source = rest[1:]
        else:
            vals = [v for v in rest.split(";") if v.strip()]
            source = None
        try:
            return StepModel.table([float(v) for v in vals], source=source)
        except ValueError as exc:
            raise ModelSpecError(f"bad table entry in {text!r}: {exc}") from exc
    if name not in _FAMILY_KEYS:
        raise ModelSpecError(f"unknown model family {name!r}")
    params: dict[str, float] = {}
    for item in rest.split(","):
        if not item.strip():
            continue
        key, eq, val = item.partition("=")
        if not eq:
            raise ModelSpecError(f"expected key=value in {text!r}, got {item!r}")
        key = key.strip()
        if key not in _FAMILY_KEYS[name]:
            raise ModelSpecError(f"unexpected parameter {key!r} for {name} family")
        try:
            params[key] = float(val)
        except ValueError as exc:
            raise ModelSpecError(f"parameter {key} is not a number: {val!r}") from exc
    missing = [k for k in _FAMILY_KEYS[name] if k not in params]
    if missing:
        raise ModelSpecError(f"{name} family missing parameter(s): {', '.join(missing)}")
    if name == "lambda":
        K = params["K"]
        if not float(K).is_integer():
            raise ModelSpecError(f"lambda family needs integer K, got {K}")
        return StepModel.lambda_family(int(K), params["B"])
    if name == "power":
        return StepModel.power(params["alpha"], params["B"])
    if name == "logpow":
        return StepModel.log_power(params["alpha"], params["B"])
    return StepModel.constant(params["p"])
