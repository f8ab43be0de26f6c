"""Weighted Elo baseline.

Each match moves the ratings by the usual Elo residual scaled by the winner's
share of games (clamped to [0.5, 1]), with a per-player K that decays with
the number of matches played.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import pandas as pd

INITIAL_RATING = 1500.0


class OutOfOrder(ValueError):
    pass


@dataclass(frozen=True)
class MatchResult:
    winner: str
    loser: str
    games_winner: int
    games_loser: int
    date_order: int
    match_id: str = ""

    def __post_init__(self):
        if self.winner == self.loser:
            raise ValueError("winner and loser must differ")
        if self.games_winner < 0 or self.games_loser < 0 or self.games_winner + self.games_loser < 1:
            raise ValueError("need at least one game played")


@dataclass
class WeloState:
    ratings: dict = field(default_factory=dict)
    match_counts: dict = field(default_factory=dict)
    last_order: int = -(2 ** 62)

    def rating(self, player: str) -> float:
        return self.ratings.get(player, INITIAL_RATING)

    def count(self, player: str) -> int:
        return self.match_counts.get(player, 0)


def expected_score(r_a: float, r_b: float) -> float:
    return 1.0 / (1.0 + 10.0 ** ((r_b - r_a) / 400.0))


def match_weight(result: MatchResult) -> float:
    share = result.games_winner / (result.games_winner + result.games_loser)
    return min(max(share, 0.5), 1.0)


def k_factor(match_count: int) -> float:
    if match_count < 0:
        raise ValueError("match_count must be non-negative")
    return 250.0 / (match_count + 5) ** 0.4


def update(state: WeloState, result: MatchResult) -> WeloState:
    """Return the state after one match; the input state is left untouched."""
    if result.date_order <= state.last_order:
        raise OutOfOrder(f"match {result.date_order} does not follow {state.last_order}")
    w, l = result.winner, result.loser
    r_w, r_l = state.rating(w), state.rating(l)
    e_w = expected_score(r_w, r_l)
    weight = match_weight(result)
    ratings = dict(state.ratings)
    counts = dict(state.match_counts)
    ratings[w] = r_w + k_factor(state.count(w)) * weight * (1.0 - e_w)
    ratings[l] = r_l - k_factor(state.count(l)) * weight * (1.0 - e_w)
    counts[w] = state.count(w) + 1
    counts[l] = state.count(l) + 1
    return WeloState(ratings, counts, result.date_order)


def fold(results: Iterable[MatchResult], state: WeloState = None) -> WeloState:
    state = state or WeloState()
    for r in results:
        state = update(state, r)
    return state


def ratings_at_cutoff(results: Iterable[MatchResult], cutoff: int) -> dict:
    """Ratings after every match with ``date_order <= cutoff``."""
    return dict(fold(r for r in results if r.date_order <= cutoff).ratings)


def write_ratings_csv(state: WeloState, path) -> None:
    players = sorted(state.ratings)
    pd.DataFrame({
        "player": players,
        "rating": [repr(float(state.ratings[p])) for p in players],
        "matches_played": [state.match_counts.get(p, 0) for p in players],
    }, columns=["player", "rating", "matches_played"]).to_csv(path, index=False)


def read_ratings_csv(path) -> WeloState:
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    return WeloState({r.player: float(r.rating) for r in df.itertuples(index=False)},
                     {r.player: int(r.matches_played) for r in df.itertuples(index=False)})


def write_results_csv(results: Iterable[MatchResult], path) -> None:
    cols = ["match_id", "winner", "loser", "games_winner", "games_loser", "date_order"]
    pd.DataFrame([{c: getattr(r, c) for c in cols} for r in results], columns=cols).to_csv(path, index=False)


def read_results_csv(path) -> list[MatchResult]:
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    return [MatchResult(r.winner, r.loser, int(r.games_winner), int(r.games_loser), int(r.date_order),
                        r.match_id) for r in df.itertuples(index=False)]


def ratings_for(players: Iterable[str], ratings: Mapping[str, float]) -> list[float]:
    return [ratings.get(p, INITIAL_RATING) for p in players]
