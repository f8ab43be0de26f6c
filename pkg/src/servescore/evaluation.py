"""Out-of-sample evaluation: match split, server outcomes, grouped binomial GLMs."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit

from .ingest import MatchMeta, PointRecord
from .sqs import SqsEntry
from .welo import INITIAL_RATING

OUTCOMES = ("ServeEff", "WinPct")
PREDICTORS = ("SQS", "wElo")
OUTCOME_LABELS = {"ServeEff": "Serve efficiency", "WinPct": "Win percentage"}


class EvalError(Exception):
    pass


class Separation(EvalError):
    pass


class ConstantPredictor(EvalError):
    pass


class ConstantInput(EvalError):
    pass


class GlmNotConverged(EvalError):
    pass


@dataclass
class SplitAssignment:
    train_match_ids: set
    test_match_ids: set
    seed: int
    fraction: float = 0.8

    def split_of(self, match_id: str) -> str:
        if match_id in self.train_match_ids:
            return "train"
        if match_id in self.test_match_ids:
            return "test"
        raise KeyError(match_id)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "fraction": self.fraction,
                "train": sorted(self.train_match_ids), "test": sorted(self.test_match_ids)}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitAssignment":
        return cls(set(d["train"]), set(d["test"]), d["seed"], d["fraction"])


def split_matches(matches: Iterable[MatchMeta], seed: int, fraction: float = 0.8) -> SplitAssignment:
    """Shuffle match ids within each season and send the first share to training."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    by_year = defaultdict(list)
    for m in matches:
        by_year[m.year].append(m.match_id)
    rng = np.random.default_rng(seed)
    train, test = set(), set()
    for year in sorted(by_year):
        ids = sorted(by_year[year])
        order = rng.permutation(len(ids))
        n_train = int(math.floor(fraction * len(ids) + 0.5))
        train.update(ids[i] for i in order[:n_train])
        test.update(ids[i] for i in order[n_train:])
    return SplitAssignment(train, test, seed, fraction)


@dataclass(frozen=True)
class ServerOutcome:
    server: str
    serve_type: int
    n_points: int
    n_won: int
    n_efficient: int

    @property
    def serve_eff(self) -> float:
        return self.n_efficient / self.n_points

    @property
    def win_pct(self) -> float:
        return self.n_won / self.n_points

    def successes(self, outcome: str) -> int:
        return self.n_efficient if outcome == "ServeEff" else self.n_won


def server_outcomes(test_points: Iterable[PointRecord], serve_type: int) -> list[ServerOutcome]:
    counts: dict = defaultdict(lambda: [0, 0, 0])
    for p in test_points:
        if p.serve_type != serve_type:
            continue
        c = counts[p.server]
        c[0] += 1
        c[1] += p.server_won
        c[2] += p.efficient
    return [ServerOutcome(s, serve_type, *counts[s]) for s in sorted(counts)]


@dataclass
class GlmResult:
    coefficient: float
    std_error: float
    p_value: float
    intercept: float
    iterations: int


def normal_two_sided_p(z: float) -> float:
    # erfc keeps full relative precision far into the tail
    return math.erfc(abs(z) / math.sqrt(2.0))


def grouped_binomial_glm(successes, trials, x, tol: float = 1e-10, maxiter: int = 100) -> GlmResult:
    """Fit logit(pi_j) = a + g * x_j to grouped binomial counts by Newton's method.

    The p-value is the two-sided Wald test of g = 0.
    """
    s = np.asarray(successes, dtype=float)
    n = np.asarray(trials, dtype=float)
    x = np.asarray(x, dtype=float)
    if not (len(s) == len(n) == len(x)):
        raise ValueError("successes, trials and x must have equal length")
    if len(x) < 3:
        raise ValueError("need at least three groups")
    if np.any(n < 1) or np.any(s < 0) or np.any(s > n):
        raise ValueError("need 1 <= trials and 0 <= successes <= trials")
    if np.ptp(x) == 0:
        raise ConstantPredictor("predictor is constant across groups")
    total = s.sum() / n.sum()
    if total in (0.0, 1.0):
        raise Separation("all trials share one outcome")
    X = np.column_stack([np.ones_like(x), x])
    theta = np.array([math.log(total / (1 - total)), 0.0])

    def loglik(t):
        eta = X @ t
        return float(s @ eta - n @ np.logaddexp(0.0, eta))

    ll = loglik(theta)
    for it in range(1, maxiter + 1):
        mu = expit(X @ theta)
        grad = X.T @ (s - n * mu)
        info = (X * (n * mu * (1 - mu))[:, None]).T @ X
        step = np.linalg.solve(info, grad)
        t = 1.0
        while True:
            cand = theta + t * step
            new_ll = loglik(cand)
            if new_ll >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        theta, ll = cand, new_ll
        if np.abs(X @ theta).max() > 30:
            raise Separation("fitted probabilities reached 0 or 1")
        if np.abs(t * step).max() < tol * (1 + np.abs(theta).max()):
            break
    else:
        raise GlmNotConverged(f"no convergence in {maxiter} iterations")
    mu = expit(X @ theta)
    info = (X * (n * mu * (1 - mu))[:, None]).T @ X
    cov = np.linalg.inv(info)
    se = math.sqrt(cov[1, 1])
    return GlmResult(float(theta[1]), se, normal_two_sided_p(theta[1] / se), float(theta[0]), it)


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("need two equal-length vectors with at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(dx @ dx), math.sqrt(dy @ dy)
    if sx == 0 or sy == 0:
        raise ConstantInput("correlation undefined for a constant input")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def weighted_pearson_r(x, y, w) -> float:
    x, y, w = (np.asarray(a, dtype=float) for a in (x, y, w))
    w = w / w.sum()
    dx, dy = x - w @ x, y - w @ y
    sx, sy = math.sqrt(w @ (dx * dx)), math.sqrt(w @ (dy * dy))
    if sx == 0 or sy == 0:
        raise ConstantInput("correlation undefined for a constant input")
    return float(np.clip(w @ (dx * dy) / (sx * sy), -1.0, 1.0))


@dataclass
class EvalRow:
    dataset: str
    serve_type: int
    outcome: str
    predictor: str
    n_servers: int
    coefficient: float = math.nan
    std_error: float = math.nan
    p_value: float = math.nan
    pearson_r: float = math.nan
    weighted_r: float = math.nan
    excluded_servers: int = 0
    error: Optional[str] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = None
        return d


def _zscore(x: np.ndarray) -> np.ndarray:
    sd = x.std(ddof=1)
    return (x - x.mean()) / sd if sd > 0 else x - x.mean()


def evaluate(dataset: str, sqs: Mapping[int, Sequence[SqsEntry]], welo_ratings: Mapping[str, float],
             test_points: Sequence[PointRecord], standardize_predictor: bool = True) -> list[EvalRow]:
    """Eight rows per dataset: serve type x outcome x predictor.

    Only test-set servers that have a training SQS of the matching serve type
    enter either predictor's rows, so SQS and wElo are compared on one server
    set. Predictors are z-scored across that set when ``standardize_predictor``
    is true, so coefficients are per predictor standard deviation.
    """
    rows = []
    for st in (1, 2):
        scores = {e.server: e.sqs for e in sqs.get(st, ())}
        outcomes = server_outcomes(test_points, st)
        usable = [o for o in outcomes if o.server in scores]
        excluded = len(outcomes) - len(usable)
        trials = np.array([o.n_points for o in usable], dtype=float)
        preds = {
            "SQS": np.array([scores[o.server] for o in usable], dtype=float),
            "wElo": np.array([welo_ratings.get(o.server, INITIAL_RATING) for o in usable], dtype=float),
        }
        for outcome in OUTCOMES:
            succ = np.array([o.successes(outcome) for o in usable], dtype=float)
            for name in PREDICTORS:
                row = EvalRow(dataset, st, outcome, name, len(usable), excluded_servers=excluded)
                x = preds[name]
                try:
                    xx = _zscore(x) if standardize_predictor else x
                    fit = grouped_binomial_glm(succ, trials, xx)
                    row.coefficient, row.std_error, row.p_value = fit.coefficient, fit.std_error, fit.p_value
                    rate = succ / trials
                    row.pearson_r = pearson_r(x, rate)
                    row.weighted_r = weighted_pearson_r(x, rate, trials)
                except (EvalError, ValueError, np.linalg.LinAlgError) as exc:
                    row.error = f"{type(exc).__name__}: {exc}"
                rows.append(row)
    return rows


def scatter_table(sqs: Mapping[int, Sequence[SqsEntry]], welo_ratings: Mapping[str, float],
                  test_points: Sequence[PointRecord]) -> pd.DataFrame:
    """Per-server predictor and observed-rate table suitable for plotting."""
    recs = []
    for st in (1, 2):
        scores = {e.server: e.sqs for e in sqs.get(st, ())}
        for o in server_outcomes(test_points, st):
            if o.server not in scores:
                continue
            recs.append({
                "server": o.server, "serve_type": st, "n_points": o.n_points,
                "serve_eff": o.serve_eff, "win_pct": o.win_pct,
                "sqs": scores[o.server], "welo": welo_ratings.get(o.server, INITIAL_RATING),
            })
    return pd.DataFrame(recs, columns=["server", "serve_type", "n_points", "serve_eff", "win_pct",
                                       "sqs", "welo"])


def _fmt_p(p: float) -> str:
    if not math.isfinite(p):
        return "NA"
    if p < 1e-3:
        return f"{p:.1e}"
    return f"{p:.3g}"


def format_eval_table(rows: Sequence[EvalRow], serve_type: int, title: str) -> str:
    """Aligned text table with the columns Outcome, Predictor, n, Coefficient, p-value, Correlation."""
    header = ("Outcome", "Predictor", "n", "Coefficient", "p-value", "Correlation (r)")
    body = []
    for r in rows:
        if r.serve_type != serve_type:
            continue
        pred = f"SQS_{serve_type}" if r.predictor == "SQS" else r.predictor
        coef = "NA" if not math.isfinite(r.coefficient) else f"{r.coefficient:.3f}"
        corr = "NA" if not math.isfinite(r.pearson_r) else f"{r.pearson_r:.3f}"
        body.append((OUTCOME_LABELS[r.outcome], pred, str(r.n_servers), coef, _fmt_p(r.p_value), corr))
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]

    def line(cells):
        return "  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))

    rule = "-" * len(line(header))
    return "\n".join([title, rule, line(header), rule] + [line(b) for b in body] + [rule]) + "\n"


def write_eval_csv(rows: Sequence[EvalRow], path) -> None:
    cols = list(EvalRow.__dataclass_fields__)
    df = pd.DataFrame([r.to_dict() for r in rows], columns=cols)
    for c in ("coefficient", "std_error", "p_value", "pearson_r", "weighted_r"):
        df[c] = [("" if v is None else repr(float(v))) for v in df[c]]
    df.to_csv(path, index=False)


def write_eval_json(rows: Sequence[EvalRow], path, extra: Optional[dict] = None) -> None:
    payload = {"rows": [r.to_dict() for r in rows]}
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_eval_json(path) -> list[EvalRow]:
    payload = json.loads(Path(path).read_text())
    rows = []
    for d in payload["rows"]:
        d = {k: (math.nan if v is None and k not in ("error",) else v) for k, v in d.items()}
        rows.append(EvalRow(**d))
    return rows
