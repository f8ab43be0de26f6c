"""Per-server serve summaries and within-dataset standardization."""

from __future__ import annotations

import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np
import pandas as pd

from .ingest import LocationBin, PointRecord

MIN_SERVES = 20
Z_COLUMNS = ("avg_speed", "sd_speed", "loc_entropy")


class EmptyCounts(ValueError):
    pass


class ConstantColumn(UserWarning):
    pass


@dataclass(frozen=True)
class ServerFeatures:
    server: str
    serve_type: int
    n: int
    avg_speed: float
    sd_speed: float
    modal_loc: LocationBin
    loc_entropy: float
    avg_speed_z: Optional[float] = None
    sd_speed_z: Optional[float] = None
    loc_entropy_z: Optional[float] = None


@dataclass
class ServeStats:
    """Mergeable sufficient statistics for one server and serve type."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    bins: Counter = field(default_factory=Counter)

    def add(self, speed: float, loc: LocationBin) -> None:
        self.count += 1
        delta = speed - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (speed - self.mean)
        self.bins[loc] += 1

    def merge(self, other: "ServeStats") -> "ServeStats":
        n = self.count + other.count
        if n == 0:
            return ServeStats()
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return ServeStats(n, mean, m2, self.bins + other.bins)


def location_entropy(bin_counts: Mapping[object, int]) -> float:
    """Base-2 Shannon entropy of a placement distribution, in bits."""
    total = sum(bin_counts.values())
    if total < 1:
        raise EmptyCounts("entropy needs at least one serve")
    h = 0.0
    for c in bin_counts.values():
        if c > 0:
            p = c / total
            h -= p * math.log2(p)
    return max(h, 0.0)


def modal_location(bin_counts: Mapping[LocationBin, int]) -> LocationBin:
    # ties go to the lexicographically smallest (width, depth)
    best = max(bin_counts.values())
    return min(b for b, c in bin_counts.items() if c == best)


def summarize(server: str, serve_type: int, stats: ServeStats) -> ServerFeatures:
    sd = math.sqrt(stats.m2 / (stats.count - 1)) if stats.count > 1 else 0.0
    return ServerFeatures(
        server=server,
        serve_type=serve_type,
        n=stats.count,
        avg_speed=stats.mean,
        sd_speed=sd,
        modal_loc=modal_location(stats.bins),
        loc_entropy=location_entropy(stats.bins),
    )


def accumulate(points: Iterable[PointRecord], serve_type: int,
               into: Optional[dict] = None) -> dict[str, ServeStats]:
    stats = {} if into is None else into
    for p in points:
        if p.serve_type != serve_type:
            continue
        stats.setdefault(p.server, ServeStats()).add(p.speed_mph, p.location_bin)
    return stats


def aggregate(points: Iterable[PointRecord], serve_type: int) -> list[ServerFeatures]:
    """Summarize one dataset's points into per-server rows, sorted by server."""
    points = [p for p in points if p.serve_type == serve_type]
    speeds: dict[str, list[float]] = {}
    bins: dict[str, Counter] = {}
    for p in points:
        speeds.setdefault(p.server, []).append(p.speed_mph)
        bins.setdefault(p.server, Counter())[p.location_bin] += 1
    out = []
    for server in sorted(speeds):
        x = np.asarray(speeds[server], dtype=float)
        out.append(ServerFeatures(
            server=server,
            serve_type=serve_type,
            n=len(x),
            avg_speed=float(x.mean()),
            sd_speed=float(x.std(ddof=1)) if len(x) > 1 else 0.0,
            modal_loc=modal_location(bins[server]),
            loc_entropy=location_entropy(bins[server]),
        ))
    return out


def filter_min_serves(features: Iterable[ServerFeatures], threshold: int = MIN_SERVES):
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    return [f for f in features if f.n > threshold]


def standardize(features: list[ServerFeatures]):
    """z-score the continuous columns using the sample sd across servers.

    Returns ``(features, params)`` where ``params[col] = (mean, sd)``. A
    constant column raises a :class:`ConstantColumn` warning and gets z = 0.
    """
    if len(features) < 2:
        raise ValueError("standardization needs at least two servers")
    params = {}
    for col in Z_COLUMNS:
        x = np.array([getattr(f, col) for f in features], dtype=float)
        sd = float(x.std(ddof=1))
        if not sd > 0:
            warnings.warn(f"column {col} is constant; z set to 0", ConstantColumn, stacklevel=2)
            sd = 0.0
        params[col] = (float(x.mean()), sd)
    return apply_standardization(features, params), params


def apply_standardization(features: Iterable[ServerFeatures], params: Mapping[str, tuple]):
    out = []
    for f in features:
        z = {}
        for col in Z_COLUMNS:
            mean, sd = params[col]
            z[col + "_z"] = (getattr(f, col) - mean) / sd if sd > 0 else 0.0
        out.append(replace(f, **z))
    return out


# ---------------------------------------------------------------------------
# serialization

_CSV_COLUMNS = ["server", "serve_type", "n", "avg_speed", "sd_speed", "modal_loc", "loc_entropy",
                "avg_speed_z", "sd_speed_z", "loc_entropy_z"]


def _fmt(x):
    return "" if x is None else repr(float(x))


def write_features_csv(features: Iterable[ServerFeatures], path) -> None:
    rows = [{
        "server": f.server,
        "serve_type": f.serve_type,
        "n": f.n,
        "avg_speed": _fmt(f.avg_speed),
        "sd_speed": _fmt(f.sd_speed),
        "modal_loc": str(f.modal_loc),
        "loc_entropy": _fmt(f.loc_entropy),
        "avg_speed_z": _fmt(f.avg_speed_z),
        "sd_speed_z": _fmt(f.sd_speed_z),
        "loc_entropy_z": _fmt(f.loc_entropy_z),
    } for f in features]
    pd.DataFrame(rows, columns=_CSV_COLUMNS).to_csv(path, index=False)


def read_features_csv(path) -> list[ServerFeatures]:
    df = pd.read_csv(path, dtype=str, keep_default_na=False)

    def opt(v):
        return float(v) if v != "" else None

    return [ServerFeatures(
        server=r.server,
        serve_type=int(r.serve_type),
        n=int(r.n),
        avg_speed=float(r.avg_speed),
        sd_speed=float(r.sd_speed),
        modal_loc=LocationBin.parse(r.modal_loc),
        loc_entropy=float(r.loc_entropy),
        avg_speed_z=opt(r.avg_speed_z),
        sd_speed_z=opt(r.sd_speed_z),
        loc_entropy_z=opt(r.loc_entropy_z),
    ) for r in df.itertuples(index=False)]


def write_params_json(params: Mapping[str, tuple], path, extra: Optional[dict] = None) -> None:
    payload = {"columns": {k: {"mean": v[0], "sd": v[1]} for k, v in params.items()}}
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_params_json(path) -> dict[str, tuple]:
    payload = json.loads(Path(path).read_text())
    return {k: (v["mean"], v["sd"]) for k, v in payload["columns"].items()}
