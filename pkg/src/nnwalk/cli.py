"""Command-line front end: ``nnwalk classify|analyze|simulate|verify``.

Exit codes: 0 success (or a consistent verification), 1 rejected
verification, 2 input or I/O error, 3 a series could not be certified,
4 a simulation ran out of budget.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from nnwalk import analytics as an
from nnwalk import simulator as sim
from nnwalk import statlab as st
from nnwalk.model import DomainError, ModelSpecError, StepModel, lambda_fn, parse_model

SCHEMA = "nnwalk-output/1"

EXIT_OK, EXIT_REJECTED, EXIT_INPUT, EXIT_NONCONVERGENT, EXIT_BUDGET = 0, 1, 2, 3, 4

DEFAULTS = {
    "seed": 1,
    "eps": 1e-6,
    "tol": 1e-10,
    "max_terms": 100_000_000,
    "replicas": 1000,
    "threads": None,
    "out": None,
}
_CONFIG_TYPES = {"seed": int, "eps": float, "tol": float, "max_terms": int, "replicas": int, "threads": int, "out": str}


class InputError(Exception):
    pass


# -- configuration ---------------------------------------------------------------


def read_config(path: str) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment, dashes in keys are allowed."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CONFIG_TYPES:
            raise InputError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _CONFIG_TYPES[key](float(value)) if _CONFIG_TYPES[key] is int else _CONFIG_TYPES[key](value)
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return out


def effective_settings(args: argparse.Namespace) -> dict:
    """Flags > config file > environment (threads only) > defaults."""
    merged = dict(DEFAULTS)
    env = os.environ.get("NNWALK_THREADS")
    if env:
        try:
            merged["threads"] = max(1, int(env))
        except ValueError as exc:
            raise InputError(f"NNWALK_THREADS must be an integer, got {env!r}") from exc
    if getattr(args, "config", None):
        merged.update(read_config(args.config))
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            merged[key] = v
    if merged["threads"] is None:
        merged["threads"] = 1
    if not 0 < merged["eps"] < 1:
        raise InputError("--eps must lie in (0, 1)")
    if not 0 < merged["tol"] < 1:
        raise InputError("--tol must lie in (0, 1)")
    if merged["replicas"] < 1 or merged["max_terms"] < 1 or merged["threads"] < 1:
        raise InputError("--replicas, --max-terms and --threads must be positive")
    return merged


@dataclass
class RunConfig:
    command: str
    model: str
    target: str | None
    params: dict
    seed: int
    replicas: int
    eps: float
    tol: float
    max_terms: int

    def canonical(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


@dataclass
class Outcome:
    results: Any
    human: list[str]
    rows: list[dict] | None = None
    exit_code: int = EXIT_OK


# -- output helpers -----------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _h(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".6g")
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(rows[0]))
    for r in rows:
        w.writerow([_fmt(v) for v in r.values()])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _out_paths(out: str) -> tuple[Path, Path]:
    p = Path(out)
    stem = p.with_suffix("") if p.suffix in (".csv", ".json") else p
    return stem.with_name(stem.name + ".csv"), stem.with_name(stem.name + ".json")


# -- grids ----------------------------------------------------------------------------------


def parse_grid(text: str, allow_inf: bool = False, kind=int) -> list:
    """``5``, ``1,2,7``, ``1..5`` or ``0..100:10``; ``inf`` when allowed."""
    values = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            raise InputError(f"empty item in grid {text!r}")
        if part.lower() in ("inf", "infinity"):
            if not allow_inf:
                raise InputError(f"'inf' not allowed in {text!r}")
            values.append(None)
            continue
        try:
            if ".." in part:
                span, _, stride = part.partition(":")
                a, b = span.split("..")
                a, b = kind(float(a)), kind(float(b))
                s = kind(float(stride)) if stride else 1
                if s <= 0 or b < a:
                    raise InputError(f"bad range {part!r}")
                values.extend(range(a, b + 1, s) if kind is int else np.arange(a, b + s / 2, s).tolist())
            else:
                v = float(part)
                if kind is int and not v.is_integer():
                    raise InputError(f"expected an integer, got {part!r}")
                values.append(kind(v))
        except ValueError as exc:
            raise InputError(f"bad grid item {part!r}") from exc
    return values


def _one(text, name, kind=int, allow_inf=False):
    vals = parse_grid(text, allow_inf, kind)
    if len(vals) != 1:
        raise InputError(f"--{name} takes a single value")
    return vals[0]


def _need(args, *names):
    for n in names:
        if getattr(args, n, None) is None:
            raise InputError(f"missing --{n.replace('_', '-')}")


# -- commands ---------------------------------------------------------------------------------


def cmd_classify(model: StepModel, args, cfg, policy) -> Outcome:
    v = an.classify(model, policy)
    res = {
        "verdict": v.verdict,
        "partial_sum": v.partial_sum,
        "terms_used": v.terms_used,
        "tail_lower": v.tail_lower,
        "tail_upper": v.tail_upper,
        "criterion": v.criterion,
        "note": v.note,
    }
    human = [v.verdict, f"  partial sum {_h(v.partial_sum)} after {v.terms_used} terms ({v.criterion})"]
    if v.note:
        human.append(f"  {v.note}")
    return Outcome(res, human)


def _d_rows(model, args, policy):
    _need(args, "m", "n")
    rows = []
    for m in parse_grid(args.m):
        for n in parse_grid(args.n, allow_inf=True):
            if n is None:
                r = an.d_infinity(model, m, policy)
                if not r.converged:
                    raise an.NonConvergent(f"D({m}, inf) not certified: value {r.value:.6g}, bound {r.tail_bound:.3g}", r)
                rows.append({"m": m, "n": "inf", "value": r.value, "tail_bound": r.tail_bound, "terms_used": r.terms_used})
            else:
                rows.append({"m": m, "n": n, "value": an.d_finite(model, m, n), "tail_bound": 0.0, "terms_used": max(n - m, 0)})
    return rows


def _hit_rows(model, args, policy):
    _need(args, "a", "b", "c")
    rows = []
    for a in parse_grid(args.a):
        for b in parse_grid(args.b):
            for c in parse_grid(args.c, allow_inf=True):
                rows.append({"a": a, "b": b, "c": "inf" if c is None else c, "p": an.hitting_prob(model, a, b, c, policy)})
    return rows


def _pmf_rows(model, args, policy):
    _need(args, "R", "L")
    rows = []
    fn = an.local_time_pmf if args.kind == "xi" else an.upcross_pmf
    for R in parse_grid(args.R):
        for L in parse_grid(args.L):
            rows.append({"R": R, "L": L, "pmf": fn(model, R, L, policy)})
    return rows


def _mgf_rows(model, args, policy):
    _need(args, "R", "lam")
    rows = []
    for R in parse_grid(args.R):
        for lam in parse_grid(args.lam, kind=float):
            rows.append({"R": R, "lambda": lam, "mgf": an.upcross_mgf(model, R, lam, policy)})
    return rows


def _threshold_rows(model, args, policy):
    _need(args, "R", "N")
    rows = []
    for R in parse_grid(args.R):
        for N in parse_grid(args.N):
            t = an.run_thresholds(R, N, args.epsilon, args.alpha)
            rows.append({
                "R": R, "N": N, "f": t.f, "g": t.g,
                "f_star": "" if t.f_star is None else t.f_star,
                "g_star": "" if t.g_star is None else t.g_star,
                "identity_rel_err": abs(R * 2.0**t.g / lambda_fn(N, R) - 1.0),
            })
    return rows


_QUERIES = {"d": _d_rows, "hit": _hit_rows, "pmf": _pmf_rows, "mgf": _mgf_rows, "thresholds": _threshold_rows}


def cmd_analyze(model, args, cfg, policy) -> Outcome:
    rows = _QUERIES[args.query](model, args, policy)
    human = [", ".join(f"{k}={_h(v)}" for k, v in r.items()) for r in rows]
    return Outcome(rows, human, rows)


def cmd_simulate(model, args, cfg, policy) -> Outcome:
    seed, reps, threads, eps = cfg["seed"], cfg["replicas"], cfg["threads"], cfg["eps"]
    mode = args.mode
    if mode == "path":
        _need(args, "n")
        p = sim.simulate_path(model, _one(args.n, "n"), seed)
        rows = [{"site": k, "local_time": v} for k, v in sorted(p.local_time_profile.items())]
        res = {"n_steps": p.n_steps, "final_position": p.final_position, "checkpoints": p.checkpoint_positions}
        return Outcome(res, [f"final position {p.final_position} after {p.n_steps} steps"], rows)
    if mode == "position":
        _need(args, "n")
        n = _one(args.n, "n")
        xs = sim.position_samples(model, n, reps, seed, threads)
        rows = [{"seed_id": f"{seed}:{r}", "n": n, "position": int(x)} for r, x in enumerate(xs)]
        res = {"n": n, "replicas": reps, "mean": float(xs.mean()), "sd": float(xs.std(ddof=1)) if reps > 1 else 0.0}
        return Outcome(res, [f"mean X_n {_h(res['mean'])} over {reps} replicas"], rows)
    if mode == "localtime":
        _need(args, "R")
        rows = []
        certs = []
        discarded = 0
        for R in parse_grid(args.R):
            b = sim.sample_local_times(model, R, eps, seed, reps, policy, threads)
            discarded += b.discarded
            c = b.certificate
            certs.append({"R": R, "barrier": c.barrier, "eps": c.eps, "basis": c.basis, "discarded": b.discarded})
            for s in b:
                rows.append({"seed_id": s.seed_id, "R": R, "xi": s.xi, "xi_up": s.xi_up, "barrier": c.barrier, "basis": c.basis})
        xi = np.array([r["xi"] for r in rows], dtype=float)
        up = np.array([r["xi_up"] for r in rows], dtype=float)
        res = {"certificates": certs, "samples": len(rows), "mean_xi": float(xi.mean()), "mean_xi_up": float(up.mean())}
        human = [f"{len(rows)} samples, mean xi {_h(res['mean_xi'])}, mean xi_up {_h(res['mean_xi_up'])}"]
        if discarded:
            human.append(f"{discarded} replicas discarded (budget)")
        return Outcome(res, human, rows)
    if mode == "scan":
        _need(args, "R_lo", "R_hi")
        sc = sim.scan_ones(model, args.R_lo, args.R_hi, eps, seed, policy)
        rows = [{"start": s, "length": L} for s, L in sc.runs]
        c = sc.certificate
        res = {"runs": len(rows), "barrier": c.barrier, "basis": c.basis, "seed_id": sc.seed_id,
               "longest": max((L for _, L in sc.runs), default=0)}
        return Outcome(res, [f"{len(rows)} runs of ones, longest {res['longest']}"], rows)
    raise InputError(f"unknown mode {mode}")


def _verdict(report: st.FitReport) -> list[str]:
    return [
        f"{report.test}: statistic {_h(report.statistic)} vs critical {_h(report.critical_value)} "
        f"(n={report.n}) -> {report.decision}"
    ] + ([f"  {report.note}"] if report.note else [])


def _exit_for(decision: str) -> int:
    return EXIT_OK if decision == "consistent" else EXIT_REJECTED


def cmd_verify(model, args, cfg, policy) -> Outcome:
    seed, reps, threads, eps = cfg["seed"], cfg["replicas"], cfg["threads"], cfg["eps"]
    suite = args.suite
    nsamp = _one(args.n, "n") if args.n is not None else reps
    if suite in ("geom", "exp", "condmean"):
        R = _one(args.R, "R") if args.R is not None else 50
        if suite == "condmean":
            i, j = sim.conditional_pairs(model, R, eps, seed, nsamp, policy, threads)
            rep = st.conditional_mean_check(i, j, model, R, policy=policy)
        else:
            b = sim.sample_local_times(model, R, eps, seed, nsamp, policy, threads)
            if suite == "geom":
                if args.kind == "xi":
                    q = args.q if args.q is not None else an.local_time_q(model, R, policy)
                    rep = st.fit_geometric(b.xi, q)
                else:
                    q = args.q if args.q is not None else an.escape_prob(model, R, policy)
                    rep = st.fit_geometric(b.xi_up, q)
            else:
                D = an.d_infinity(model, R, policy).value
                x = b.xi_up / D if args.kind == "up" else b.xi / (2.0 * D)
                rep = st.fit_exponential_limit(x)
        return Outcome(rep.to_dict(), _verdict(rep), exit_code=_exit_for(rep.decision))
    if suite in ("submart", "lil"):
        Rs = parse_grid(args.R) if args.R is not None else [100, 316, 1000, 3162, 10000]
        w = [sim.sample_local_times(model, R, eps, seed, nsamp, policy, threads) for R in Rs]
        if suite == "submart":
            tr = st.submartingale_trace(Rs, np.column_stack([b.xi_up for b in w]), model, policy)
            rows = [{"R": x, "mean_zeta": y, "stderr": s, "expected": e}
                    for (x, y), s, e in zip(tr.points, tr.stderr, tr.expected)]
            return Outcome(tr.to_dict(), [f"submartingale trace -> {tr.decision}"], rows, _exit_for(tr.decision))
        xi = np.column_stack([b.xi for b in w])
        bound = st.local_time_bound_trace(Rs, xi, model, args.bound, policy)
        res = {"bound_trace": bound.to_dict()}
        rows = [{"R": x, "max_ratio": y} for x, y in bound.points]
        human = [f"max xi/(2D log R) = {_h(bound.running_max)} vs {_h(args.bound)} -> {bound.decision}"]
        if model.family == "lambda" and model["K"] == 1 and model["B"] > 1:
            lil = st.lil_trace_local_time(Rs, xi, model["B"])
            res["lil_trace"] = lil.to_dict()
            for row, (_, y) in zip(rows, lil.points):
                row["lil_ratio"] = y
            human.append(f"running max of (B-1)xi/(2R log log R) = {_h(lil.running_max)} (reported, no decision)")
        return Outcome(res, human, rows, _exit_for(bound.decision))
    if suite in ("lln", "limitdist"):
        n = nsamp if args.n is not None else 100_000
        xs = sim.position_samples(model, n, reps, seed, threads)
        if suite == "lln":
            if model.family != "power":
                raise InputError("lln needs a power model")
            rep = st.lln_check(xs, n, model["alpha"], model["B"])
        else:
            if model.family != "lambda" or model["K"] != 1:
                raise InputError("limitdist needs a lambda model with K=1")
            rep = st.limit_density_check(xs / math.sqrt(n), model["B"])
        return Outcome(rep.to_dict(), _verdict(rep), exit_code=_exit_for(rep.decision))
    if suite == "ones":
        _need(args, "R_lo", "R_hi")
        Ls = parse_grid(args.L) if args.L is not None else [1, 2, 3, 4, 5]
        scans = sim.scan_many(model, args.R_lo + 1, args.R_hi + max(Ls), eps, seed, reps, policy, threads)
        rep = st.ones_run_frequency(scans, model, (args.R_lo, args.R_hi), Ls, policy=policy)
        return Outcome(rep.to_dict(), _verdict(rep), exit_code=_exit_for(rep.decision))
    raise InputError(f"unknown suite {suite}")


_COMMANDS = {"classify": cmd_classify, "analyze": cmd_analyze, "simulate": cmd_simulate, "verify": cmd_verify}


# -- parser ---------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a flag given before the subcommand from being reset by
    # the subparser's copy of the same option
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, help="root seed (default 1)")
    g.add_argument("--out", help="write PATH.csv and PATH.json instead of printing the table")
    g.add_argument("--config", help="flat key = value file with defaults for these options")
    g.add_argument("--tol", type=float, help="relative tolerance for series (default 1e-10)")
    g.add_argument("--max-terms", dest="max_terms", type=int, help="series term budget (default 1e8)")
    g.add_argument("--eps", type=float, help="escape certificate level (default 1e-6)")
    g.add_argument("--replicas", type=int, help="number of replicas (default 1000)")
    g.add_argument("--threads", type=int, help="worker threads (default $NNWALK_THREADS or 1)")
    g.add_argument("--json", action="store_true", help="print the JSON record instead of the summary")

    parser = argparse.ArgumentParser(prog="nnwalk", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", parents=[common], help="transient / recurrent verdict")
    p.add_argument("model")

    p = sub.add_parser("analyze", parents=[common], help="exact quantities over index grids")
    p.add_argument("model")
    p.add_argument("query", choices=sorted(_QUERIES))
    for name in ("m", "n", "a", "b", "c", "R", "L", "N"):
        p.add_argument(f"--{name}")
    p.add_argument("--lam", help="mgf argument grid")
    p.add_argument("--kind", choices=("xi", "up"), default="xi", help="pmf of local time or upcrossings")
    p.add_argument("--epsilon", type=float, default=0.0, help="threshold epsilon")
    p.add_argument("--alpha", type=float, help="power exponent for f*, g*")

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo samples as CSV")
    p.add_argument("model")
    p.add_argument("mode", choices=("path", "localtime", "scan", "position"))
    p.add_argument("--n")
    p.add_argument("--R")
    p.add_argument("--R-lo", dest="R_lo", type=int)
    p.add_argument("--R-hi", dest="R_hi", type=int)

    p = sub.add_parser("verify", parents=[common], help="simulation plus statistical check")
    p.add_argument("suite", choices=("geom", "exp", "condmean", "submart", "lil", "lln", "limitdist", "ones"))
    p.add_argument("model")
    p.add_argument("--n", help="samples (geom/exp/condmean/submart/lil) or steps (lln/limitdist)")
    p.add_argument("--R")
    p.add_argument("--q", type=float, help="geometric parameter to test (default: exact value)")
    p.add_argument("--kind", choices=("xi", "up"), default="xi")
    p.add_argument("--R-lo", dest="R_lo", type=int)
    p.add_argument("--R-hi", dest="R_hi", type=int)
    p.add_argument("--L")
    p.add_argument("--bound", type=float, default=1.5, help="band for max xi/(2 D log R)")
    return parser


def _params(args) -> dict:
    skip = set(DEFAULTS) | {"config", "json", "command", "model", "query", "mode", "suite"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip and v is not None}


def run(argv: list[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = effective_settings(args)
        model = parse_model(args.model, base_dir=Path.cwd())
        policy = an.TruncationPolicy(tol=cfg["tol"], max_terms=cfg["max_terms"])
        target = getattr(args, "query", None) or getattr(args, "mode", None) or getattr(args, "suite", None)
        rc = RunConfig(args.command, model.spec, target, _params(args), cfg["seed"], cfg["replicas"],
                       cfg["eps"], cfg["tol"], cfg["max_terms"])
        t0 = time.perf_counter()
        outcome = _COMMANDS[args.command](model, args, cfg, policy)
        wall = time.perf_counter() - t0
        record = {
            "schema": SCHEMA,
            "command": " ".join(["nnwalk"] + (argv if argv is not None else sys.argv[1:])),
            "config": rc.__dict__,
            "config_hash": rc.digest(),
            "effective": {k: cfg[k] for k in ("seed", "eps", "tol", "max_terms", "replicas", "threads", "out")},
            "results": _jsonable(outcome.results),
            "wall_time": wall,
        }
        text_json = json.dumps(record, sort_keys=True, indent=2) + "\n"
        if cfg["out"]:
            csv_path, json_path = _out_paths(cfg["out"])
            if outcome.rows is not None:
                atomic_write(csv_path, rows_to_csv(outcome.rows))
            atomic_write(json_path, text_json)
        if getattr(args, "json", False):
            stdout.write(text_json)
        elif outcome.rows is not None and not cfg["out"] and args.command in ("analyze", "simulate"):
            stdout.write(rows_to_csv(outcome.rows))
        else:
            stdout.write("\n".join(outcome.human) + "\n")
        return outcome.exit_code
    except an.NonConvergent as exc:
        stderr.write(f"nnwalk: not certified: {exc}\n")
        return EXIT_NONCONVERGENT
    except sim.BudgetExceeded as exc:
        stderr.write(f"nnwalk: {exc}\n")
        return EXIT_BUDGET
    except (InputError, ModelSpecError, DomainError, an.UnsupportedFamily, ValueError, IndexError, OSError) as exc:
        stderr.write(f"nnwalk: {exc}\n")
        return EXIT_INPUT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
