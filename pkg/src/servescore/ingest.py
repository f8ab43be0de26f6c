"""Loading and cleaning of Grand Slam point-by-point files.

The defaults follow the layout of the public slam point-by-point repository:
one ``{year}-{slam}-matches.csv`` and one ``{year}-{slam}-points.csv`` per
tournament-year, with match ids of the form ``2019-wimbledon-1101`` where the
first digit of the match number encodes the draw (1 = men's singles,
2 = women's singles) and the second digit the round.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Optional

import pandas as pd

logger = logging.getLogger(__name__)

SEASONS = (2018, 2019, 2021, 2022, 2023, 2024)
WIDTH_CODES = ("B", "BC", "BW", "C", "W")
DEPTH_CODES = ("CTL", "NCTL")
TOURNAMENTS = {"wimbledon": "Wimbledon", "usopen": "USOpen"}
GENDERS = {"1": "M", "2": "W"}

MATCH_COLUMNS = {"match_id": "match_id", "player1": "player1", "player2": "player2"}
POINT_COLUMNS = {
    "match_id": "match_id",
    "point_server": "PointServer",
    "serve_number": "ServeNumber",
    "speed_mph": "Speed_MPH",
    "serve_width": "ServeWidth",
    "serve_depth": "ServeDepth",
    "rally_count": "RallyCount",
    "point_winner": "PointWinner",
    "game_winner": "GameWinner",
    "set_winner": "SetWinner",
}

_MATCH_ID = re.compile(r"^(\d{4})-([a-z]+)-(\d{4})$")

DROP_LOCATION = "missing location"
DROP_SERVE_NUMBER = "invalid serve number"
DROP_ZERO_SPEED = "zero speed"
DROP_MISSING_SPEED = "missing speed"
DROP_RALLY = "missing rally count"
DROP_PLAYER_FLAG = "invalid server or winner flag"
DROP_REASONS = (
    DROP_LOCATION,
    DROP_SERVE_NUMBER,
    DROP_ZERO_SPEED,
    DROP_MISSING_SPEED,
    DROP_RALLY,
    DROP_PLAYER_FLAG,
)


class IngestError(Exception):
    pass


class MissingColumn(IngestError):
    def __init__(self, column: str, path: object = None):
        self.column = column
        where = f" in {path}" if path is not None else ""
        super().__init__(f"missing column {column!r}{where}")


class EmptyFile(IngestError):
    pass


class UnknownMatchId(IngestError):
    def __init__(self, match_id: str):
        self.match_id = match_id
        super().__init__(f"point references unknown match id {match_id!r}")


class MalformedRow(IngestError):
    def __init__(self, row: int, reason: str):
        self.row = row
        self.reason = reason
        super().__init__(f"row {row}: {reason}")


class LocationBin(NamedTuple):
    width: str
    depth: str

    def __str__(self) -> str:
        return f"{self.width}/{self.depth}"

    @classmethod
    def parse(cls, text: str) -> "LocationBin":
        width, depth = text.split("/")
        return cls(width, depth)


ALL_BINS = tuple(LocationBin(w, d) for w in WIDTH_CODES for d in DEPTH_CODES)


@dataclass(frozen=True)
class MatchMeta:
    match_id: str
    year: int
    tournament: str
    gender: str
    player1: str
    player2: str

    def player(self, slot: int) -> str:
        return self.player1 if slot == 1 else self.player2

    @property
    def match_number(self) -> int:
        return int(self.match_id.rsplit("-", 1)[1])


@dataclass(frozen=True)
class RawPoint:
    match_id: str
    point_server: Optional[int]
    serve_number: Optional[int]
    speed_mph: Optional[float]
    serve_width: str
    serve_depth: str
    rally_count: Optional[int]
    point_winner: Optional[int]


@dataclass(frozen=True)
class PointRecord:
    match_id: str
    server: str
    returner: str
    serve_type: int
    speed_mph: float
    location_bin: LocationBin
    rally_count: int
    server_won: bool
    efficient: bool


@dataclass
class CleaningReport:
    input_rows: int
    kept: int
    dropped_by_reason: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def parse_match_id(match_id: str) -> tuple[int, str, str]:
    """Split a slam match id into (year, tournament, gender).

    >>> parse_match_id("2019-wimbledon-1101")
    (2019, 'Wimbledon', 'M')
    """
    m = _MATCH_ID.match(match_id.strip())
    if m is None:
        raise ValueError(f"unrecognised match id {match_id!r}")
    year, slam, number = m.groups()
    if slam not in TOURNAMENTS:
        raise ValueError(f"unsupported tournament {slam!r}")
    if number[0] not in GENDERS:
        raise ValueError(f"match number {number} is not a singles draw")
    return int(year), TOURNAMENTS[slam], GENDERS[number[0]]


def _read_table(path, required: Iterable[str]) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as exc:
        raise EmptyFile(f"{path} is empty") from exc
    df.columns = [c.strip() for c in df.columns]
    for col in required:
        if col not in df.columns:
            raise MissingColumn(col, path)
    return df


def load_matches(path, column_map: Optional[Mapping[str, str]] = None):
    """Read a matches file.

    Returns ``(matches, malformed)``; malformed rows are skipped and returned
    as :class:`MalformedRow` instances so callers can surface the count.
    """
    cols = {**MATCH_COLUMNS, **(column_map or {})}
    df = _read_table(path, [cols["match_id"], cols["player1"], cols["player2"]])
    matches: list[MatchMeta] = []
    malformed: list[MalformedRow] = []
    seen: set[str] = set()
    for i, rec in enumerate(df.to_dict("records")):
        mid = rec[cols["match_id"]].strip()
        p1 = rec[cols["player1"]].strip()
        p2 = rec[cols["player2"]].strip()
        try:
            if not mid:
                raise ValueError("missing match id")
            if not p1 or not p2:
                raise ValueError("missing player name")
            if p1 == p2:
                raise ValueError("player1 equals player2")
            if mid in seen:
                raise ValueError(f"duplicate match id {mid}")
            year, tournament, gender = parse_match_id(mid)
            if year not in SEASONS:
                raise ValueError(f"season {year} outside the pooled seasons")
        except ValueError as exc:
            err = MalformedRow(i, str(exc))
            logger.warning("%s: skipping %s", path, err)
            malformed.append(err)
            continue
        seen.add(mid)
        matches.append(MatchMeta(mid, year, tournament, gender, p1, p2))
    return matches, malformed


def _as_int(series: pd.Series) -> list[Optional[int]]:
    num = pd.to_numeric(series.str.strip(), errors="coerce")
    out = []
    for x in num:
        if x is None or not math.isfinite(x) or x != int(x):
            out.append(None)
        else:
            out.append(int(x))
    return out


def _as_float(series: pd.Series) -> list[Optional[float]]:
    num = pd.to_numeric(series.str.strip(), errors="coerce")
    return [float(x) if math.isfinite(x) else None for x in num]


def load_points(path, column_map: Optional[Mapping[str, str]] = None) -> list[RawPoint]:
    """Read a points file into :class:`RawPoint` rows.

    Unparseable numeric fields become ``None``; no filtering happens here.
    """
    cols = {**POINT_COLUMNS, **(column_map or {})}
    keys = ("match_id", "point_server", "serve_number", "speed_mph",
            "serve_width", "serve_depth", "rally_count", "point_winner")
    df = _read_table(path, [cols[k] for k in keys])
    if df.empty:
        raise EmptyFile(f"{path} has a header but no data rows")
    server = _as_int(df[cols["point_server"]])
    serve_no = _as_int(df[cols["serve_number"]])
    speed = _as_float(df[cols["speed_mph"]])
    rally = _as_int(df[cols["rally_count"]])
    winner = _as_int(df[cols["point_winner"]])
    mids = df[cols["match_id"]].str.strip().tolist()
    widths = df[cols["serve_width"]].str.strip().tolist()
    depths = df[cols["serve_depth"]].str.strip().tolist()
    return [
        RawPoint(mids[i], server[i], serve_no[i], speed[i], widths[i], depths[i], rally[i], winner[i])
        for i in range(len(df))
    ]


def _drop_reason(p: RawPoint) -> Optional[str]:
    if p.serve_width not in WIDTH_CODES or p.serve_depth not in DEPTH_CODES:
        return DROP_LOCATION
    if p.serve_number not in (1, 2):
        return DROP_SERVE_NUMBER
    if p.speed_mph is None:
        return DROP_MISSING_SPEED
    if p.speed_mph <= 0:
        return DROP_ZERO_SPEED
    if p.rally_count is None or p.rally_count < 1:
        return DROP_RALLY
    if p.point_server not in (1, 2) or p.point_winner not in (1, 2):
        return DROP_PLAYER_FLAG
    return None


def resolve_and_clean(raw: Iterable[RawPoint], matches: Iterable[MatchMeta]):
    """Join raw points to their matches and apply the cleaning rules.

    Returns ``(records, report)``. Every input row is either kept or counted
    under exactly one drop reason.
    """
    by_id = {m.match_id: m for m in matches}
    records: list[PointRecord] = []
    dropped: Counter = Counter()
    n = 0
    for p in raw:
        n += 1
        match = by_id.get(p.match_id)
        if match is None:
            raise UnknownMatchId(p.match_id)
        reason = _drop_reason(p)
        if reason is not None:
            dropped[reason] += 1
            continue
        won = p.point_winner == p.point_server
        records.append(PointRecord(
            match_id=p.match_id,
            server=match.player(p.point_server),
            returner=match.player(3 - p.point_server),
            serve_type=p.serve_number,
            speed_mph=p.speed_mph,
            location_bin=LocationBin(p.serve_width, p.serve_depth),
            rally_count=p.rally_count,
            server_won=won,
            efficient=won and p.rally_count <= 3,
        ))
    report = CleaningReport(
        input_rows=n,
        kept=len(records),
        dropped_by_reason={r: dropped.get(r, 0) for r in DROP_REASONS},
    )
    return records, report


def to_raw(records: Iterable[PointRecord], matches: Iterable[MatchMeta]) -> list[RawPoint]:
    """Project cleaned records back onto the raw point layout."""
    by_id = {m.match_id: m for m in matches}
    out = []
    for r in records:
        slot = 1 if by_id[r.match_id].player1 == r.server else 2
        out.append(RawPoint(
            match_id=r.match_id,
            point_server=slot,
            serve_number=r.serve_type,
            speed_mph=r.speed_mph,
            serve_width=r.location_bin.width,
            serve_depth=r.location_bin.depth,
            rally_count=r.rally_count,
            point_winner=slot if r.server_won else 3 - slot,
        ))
    return out


def match_results_from_points(path, matches: Iterable[MatchMeta],
                              column_map: Optional[Mapping[str, str]] = None):
    """Derive match winners and game totals from the raw points file.

    The winner is the player with more sets, then more games. Matches whose
    outcome cannot be decided (no completed games) are left out. ``date_order``
    is left at 0; see :func:`assign_date_order`.
    """
    from .welo import MatchResult

    cols = {**POINT_COLUMNS, **(column_map or {})}
    df = _read_table(path, [cols["match_id"], cols["game_winner"], cols["set_winner"]])
    by_id = {m.match_id: m for m in matches}
    df = df[df[cols["match_id"]].str.strip().isin(by_id)]
    games = Counter()
    sets = Counter()
    for mid, gw, sw in zip(df[cols["match_id"]].str.strip(),
                           _as_int(df[cols["game_winner"]]),
                           _as_int(df[cols["set_winner"]])):
        if gw in (1, 2):
            games[(mid, gw)] += 1
        if sw in (1, 2):
            sets[(mid, sw)] += 1
    results = []
    for mid, m in by_id.items():
        g1, g2 = games[(mid, 1)], games[(mid, 2)]
        s1, s2 = sets[(mid, 1)], sets[(mid, 2)]
        if g1 + g2 == 0:
            continue
        if (s1, g1) == (s2, g2):
            continue
        first_wins = (s1, g1) > (s2, g2)
        winner, loser = (m.player1, m.player2) if first_wins else (m.player2, m.player1)
        gw_, gl_ = (g1, g2) if first_wins else (g2, g1)
        results.append(MatchResult(winner, loser, gw_, gl_, 0, match_id=mid))
    return results


def assign_date_order(results, matches: Iterable[MatchMeta]):
    """Order results by (season, round, draw position) and number them 1..n."""
    from dataclasses import replace

    by_id = {m.match_id: m for m in matches}

    def key(r):
        m = by_id[r.match_id]
        return (m.year, m.match_number % 1000, m.match_id)

    ordered = sorted(results, key=key)
    return [replace(r, date_order=i + 1) for i, r in enumerate(ordered)]


# ---------------------------------------------------------------------------
# serialization


def write_points_csv(records: Iterable[PointRecord], path) -> None:
    rows = [
        {
            "match_id": r.match_id,
            "server": r.server,
            "returner": r.returner,
            "serve_type": r.serve_type,
            "speed_mph": repr(float(r.speed_mph)),
            "serve_width": r.location_bin.width,
            "serve_depth": r.location_bin.depth,
            "rally_count": r.rally_count,
            "server_won": int(r.server_won),
            "efficient": int(r.efficient),
        }
        for r in records
    ]
    cols = ["match_id", "server", "returner", "serve_type", "speed_mph", "serve_width",
            "serve_depth", "rally_count", "server_won", "efficient"]
    pd.DataFrame(rows, columns=cols).to_csv(path, index=False)


def read_points_csv(path) -> list[PointRecord]:
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    out = []
    for row in df.itertuples(index=False):
        out.append(PointRecord(
            match_id=row.match_id,
            server=row.server,
            returner=row.returner,
            serve_type=int(row.serve_type),
            speed_mph=float(row.speed_mph),
            location_bin=LocationBin(row.serve_width, row.serve_depth),
            rally_count=int(row.rally_count),
            server_won=row.server_won == "1",
            efficient=row.efficient == "1",
        ))
    return out


def write_matches_csv(matches: Iterable[MatchMeta], path) -> None:
    pd.DataFrame([asdict(m) for m in matches],
                 columns=["match_id", "year", "tournament", "gender", "player1", "player2"]
                 ).to_csv(path, index=False)


def read_matches_csv(path) -> list[MatchMeta]:
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    return [MatchMeta(r.match_id, int(r.year), r.tournament, r.gender, r.player1, r.player2)
            for r in df.itertuples(index=False)]


def write_cleaning_report(report: CleaningReport, path, extra: Optional[dict] = None) -> None:
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
