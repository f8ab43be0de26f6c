"""Server Quality Scores: the server-side linear predictor at an average returner."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from .features import ServerFeatures
from .glmm import GlmmFit, loc_column


class UnknownServer(KeyError):
    pass


@dataclass(frozen=True)
class SqsEntry:
    server: str
    serve_type: int
    sqs: float
    sqs_centered: Optional[float] = None
    n_train_serves: int = 0


def feature_vector(fit: GlmmFit, f: ServerFeatures) -> np.ndarray:
    """The fixed-effect row of one server, in the fit's column order."""
    values = {
        "intercept": 1.0,
        "avg_speed_z": f.avg_speed_z,
        "sd_speed_z": f.sd_speed_z,
        "loc_entropy_z": f.loc_entropy_z,
    }
    for b in fit.loc_levels:
        values[loc_column(b)] = 1.0 if f.modal_loc == b else 0.0
    return np.array([values.get(c, 0.0) for c in fit.column_names], dtype=float)


def compute_sqs(fit: GlmmFit, features: Iterable[ServerFeatures]) -> list[SqsEntry]:
    """Score every server in ``features`` (the standardized training rows)."""
    u = fit.server_effects()
    out = []
    for f in features:
        if f.server not in u:
            raise UnknownServer(f.server)
        score = float(feature_vector(fit, f) @ fit.beta) + u[f.server]
        out.append(SqsEntry(f.server, f.serve_type, score, None, f.n))
    return out


def center_scores(entries: Sequence[SqsEntry]) -> list[SqsEntry]:
    """Subtract the mean score within each serve type."""
    if not entries:
        return []
    means = {}
    for st in {e.serve_type for e in entries}:
        means[st] = float(np.mean([e.sqs for e in entries if e.serve_type == st]))
    return [replace(e, sqs_centered=e.sqs - means[e.serve_type]) for e in entries]


def top_k(entries: Sequence[SqsEntry], k: int) -> list[SqsEntry]:
    if k < 1:
        raise ValueError("k must be at least 1")
    ranked = sorted(entries, key=lambda e: (-_centered(e), e.server))
    return ranked[:k]


def _centered(e: SqsEntry) -> float:
    return e.sqs if e.sqs_centered is None else e.sqs_centered


def serving_profiles(first: Iterable[SqsEntry], second: Iterable[SqsEntry]) -> dict:
    """Map server -> (SQS1, SQS2); a missing serve type is ``None``."""
    one = {e.server: e.sqs for e in first}
    two = {e.server: e.sqs for e in second}
    return {s: (one.get(s), two.get(s)) for s in sorted(one.keys() | two.keys())}


def write_sqs_csv(entries: Sequence[SqsEntry], path) -> None:
    ranked = sorted(entries, key=lambda e: (-_centered(e), e.server))
    rows = [{
        "server": e.server,
        "serve_type": e.serve_type,
        "n": e.n_train_serves,
        "sqs": repr(float(e.sqs)),
        "sqs_centered": repr(float(_centered(e))),
        "rank": i + 1,
    } for i, e in enumerate(ranked)]
    pd.DataFrame(rows, columns=["server", "serve_type", "n", "sqs", "sqs_centered", "rank"]).to_csv(
        path, index=False)


def read_sqs_csv(path) -> list[SqsEntry]:
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    return [SqsEntry(r.server, int(r.serve_type), float(r.sqs), float(r.sqs_centered), int(r.n))
            for r in df.itertuples(index=False)]


def format_top_table(first: Sequence[SqsEntry], second: Sequence[SqsEntry], title: str, k: int = 10) -> str:
    """Side-by-side first/second serve top-k table with centered scores."""
    left = top_k(first, k) if first else []
    right = top_k(second, k) if second else []
    width = max([len(e.server) for e in left + right] + [6])
    head = f"{'Rank':>4}  {'Server':<{width}}  {'SQS':>6}"
    lines = [title, "", f"{'First serve':<{len(head)}}    Second serve", f"{head}    {head}",
             f"{'-' * len(head)}    {'-' * len(head)}"]
    for i in range(max(len(left), len(right))):
        cells = []
        for side in (left, right):
            if i < len(side):
                e = side[i]
                cells.append(f"{i + 1:>4}  {e.server:<{width}}  {_centered(e):6.3f}")
            else:
                cells.append(" " * len(head))
        lines.append("    ".join(cells).rstrip())
    return "\n".join(lines) + "\n"
