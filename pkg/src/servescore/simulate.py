"""Synthetic data generators used by the test suite and for smoke runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .glmm import DesignMatrix
from .ingest import LocationBin, PointRecord

TRUE_BETA = {
    "intercept": -0.3,
    "avg_speed_z": 0.25,
    "sd_speed_z": 0.10,
    "loc[BW/CTL]": 0.15,
    "loc[C/CTL]": -0.10,
    "loc_entropy_z": -0.05,
}


@dataclass
class SimulatedDesign:
    design: DesignMatrix
    beta: np.ndarray
    u: np.ndarray
    v: np.ndarray
    sigma: float
    tau: float


def simulate_design(seed: int, n_servers: int = 200, n_returners: int = 150, points_per_server: int = 100,
                    sigma: float = 0.3, tau: float = 0.2, beta: dict = TRUE_BETA) -> SimulatedDesign:
    """Draw a crossed-intercept logistic data set with server-level covariates.

    Servers get standard-normal speed, speed-sd and entropy covariates and a
    modal location drawn from three levels (reference W/CTL plus two others).
    Each point faces a uniformly drawn returner.
    """
    rng = np.random.default_rng(seed)
    names = list(beta)
    b = np.array([beta[k] for k in names])
    J, K = n_servers, n_returners
    feats = rng.standard_normal((J, 3))
    level = rng.choice(3, size=J, p=[0.5, 0.25, 0.25])
    rows = np.column_stack([
        np.ones(J), feats[:, 0], feats[:, 1],
        (level == 1).astype(float), (level == 2).astype(float), feats[:, 2],
    ])
    u = sigma * rng.standard_normal(J)
    v = tau * rng.standard_normal(K)
    counts = rng.poisson(points_per_server, size=J).clip(min=25)
    si = np.repeat(np.arange(J), counts)
    ri = rng.integers(0, K, size=len(si))
    X = rows[si]
    eta = X @ b + u[si] + v[ri]
    y = (rng.random(len(si)) < expit(eta)).astype(float)
    design = DesignMatrix(
        y=y, X=X, server_index=si, returner_index=ri,
        server_labels=[f"S{j:03d}" for j in range(J)],
        returner_labels=[f"R{k:03d}" for k in range(K)],
        column_names=names,
        reference_loc=LocationBin("W", "CTL"),
        loc_levels=[LocationBin("BW", "CTL"), LocationBin("C", "CTL")],
    )
    return SimulatedDesign(design, b, u, v, sigma, tau)


def simulate_points(seed: int, n_servers: int = 12, n_matches: int = 60, points_per_match: int = 80,
                    years=(2018, 2019)):
    """Draw slam-like matches and cleaned point records.

    Returns ``(matches, points, skill)`` where ``skill`` maps each player to a
    latent serve strength that drives both speed and short-point wins.
    """
    from .ingest import ALL_BINS, MatchMeta

    rng = np.random.default_rng(seed)
    players = [f"Player {chr(65 + i // 26)}{chr(65 + i % 26)}" for i in range(n_servers)]
    skill = dict(zip(players, rng.normal(0.0, 0.5, size=n_servers)))
    matches = []
    points = []
    per_year = max(1, n_matches // len(years))
    for year in years:
        for k in range(per_year):
            p1, p2 = rng.choice(n_servers, size=2, replace=False)
            mid = f"{year}-wimbledon-1{1 + k // 64}{k % 64:02d}"
            m = MatchMeta(mid, year, "Wimbledon", "M", players[p1], players[p2])
            matches.append(m)
            for _ in range(points_per_match):
                slot = int(rng.integers(1, 3))
                server, returner = m.player(slot), m.player(3 - slot)
                st = 1 if rng.random() < 0.62 else 2
                s = skill[server]
                speed = float(rng.normal(118 + 6 * s - 14 * (st - 1), 5))
                loc = ALL_BINS[int(rng.integers(0, len(ALL_BINS)))]
                eta = -0.4 + 1.0 * s - 0.5 * skill[returner] - 0.4 * (st - 1)
                eff = rng.random() < expit(eta)
                if eff:
                    rally = int(rng.integers(1, 4))
                    won = True
                else:
                    rally = int(rng.integers(1, 12))
                    won = bool(rally > 3 and rng.random() < 0.5)
                points.append(PointRecord(mid, server, returner, st, max(speed, 60.0), loc, rally,
                                          won, won and rally <= 3))
    return matches, points, skill


def _play_match(rng, p1: str, p2: str, serve: dict, ret: dict, speed: dict):
    """Simulate a best-of-three match point by point in the raw file layout."""
    rows = []
    sets = [0, 0]
    server_slot = 1
    while max(sets) < 2:
        games = [0, 0]
        while True:
            pts = [0, 0]
            srv, rcv = (p1, p2) if server_slot == 1 else (p2, p1)
            while True:
                first_in = rng.random() < 0.62
                st = 1 if first_in else 2
                mph = rng.normal(speed[srv] - 15.0 * (st - 1), 4.0)
                eta = -0.5 + serve[srv] - ret[rcv] - 0.35 * (st - 1) + 0.03 * (mph - 110.0)
                if rng.random() < expit(eta):
                    rally, won = int(rng.integers(1, 4)), True
                else:
                    rally = int(rng.integers(1, 16))
                    won = rally > 3 and rng.random() < expit(0.3 * (serve[srv] - ret[rcv]))
                winner_slot = server_slot if won else 3 - server_slot
                pts[winner_slot - 1] += 1
                width = str(rng.choice(["B", "BC", "BW", "C", "W"], p=[0.2, 0.1, 0.2, 0.15, 0.35]))
                depth = "CTL" if rng.random() < 0.7 else "NCTL"
                if rng.random() < 0.02:
                    width = ""
                if rng.random() < 0.02:
                    mph = 0.0
                row = {"PointServer": server_slot, "ServeNumber": st, "Speed_MPH": int(round(max(mph, 0))),
                       "ServeWidth": width, "ServeDepth": depth, "RallyCount": rally,
                       "PointWinner": winner_slot, "GameWinner": 0, "SetWinner": 0}
                rows.append(row)
                a, b = pts[winner_slot - 1], pts[2 - winner_slot]
                if a >= 4 and a - b >= 2:
                    row["GameWinner"] = winner_slot
                    games[winner_slot - 1] += 1
                    break
            server_slot = 3 - server_slot
            g = max(games)
            if (g >= 6 and abs(games[0] - games[1]) >= 2) or g == 7:
                w = 1 if games[0] > games[1] else 2
                rows[-1]["SetWinner"] = w
                sets[w - 1] += 1
                break
    # padding row the public files carry between matches
    rows.append({"PointServer": 0, "ServeNumber": 0, "Speed_MPH": 0, "ServeWidth": "", "ServeDepth": "",
                 "RallyCount": 0, "PointWinner": 0, "GameWinner": 0, "SetWinner": 0})
    return rows


def write_demo_slam_files(data_dir, seed: int = 0, years=(2018, 2019, 2021, 2022, 2023, 2024),
                          slams=("wimbledon", "usopen"), n_players: int = 40, matches_per_year: int = 32):
    """Write synthetic ``{year}-{slam}-matches.csv`` / ``-points.csv`` files.

    Both draws (match numbers 1xxx and 2xxx) are generated. Each player has a
    latent serve strength that drives serve speed and short-point wins, so the
    pipeline has real signal to find.
    """
    import pandas as pd
    from pathlib import Path

    out = Path(data_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    written = []
    pools = {}
    for draw in ("1", "2"):
        names = [f"{'Mr' if draw == '1' else 'Ms'} {chr(65 + i // 26)}{chr(97 + i % 26)}son" for i in range(n_players)]
        serve_skill = rng.normal(0.0, 0.4, n_players)
        pools[draw] = (
            names,
            dict(zip(names, serve_skill)),
            dict(zip(names, rng.normal(0.0, 0.25, n_players))),
            dict(zip(names, 112.0 + 10.0 * serve_skill + rng.normal(0, 3, n_players) - 8.0 * (draw == "2"))),
        )
    for year in years:
        for slam in slams:
            mrows, prows = [], []
            for draw in ("1", "2"):
                names, serve, ret, speed = pools[draw]
                for k in range(matches_per_year):
                    i, j = rng.choice(len(names), size=2, replace=False)
                    rnd = 1 + k // 16
                    mid = f"{year}-{slam}-{draw}{rnd}{k % 16 + 1:02d}"
                    mrows.append({"match_id": mid, "year": year, "slam": slam,
                                  "match_num": int(mid[-4:]), "player1": names[i], "player2": names[j]})
                    for r in _play_match(rng, names[i], names[j], serve, ret, speed):
                        prows.append({"match_id": mid, **r})
            mp = out / f"{year}-{slam}-matches.csv"
            pp = out / f"{year}-{slam}-points.csv"
            pd.DataFrame(mrows).to_csv(mp, index=False)
            pd.DataFrame(prows).to_csv(pp, index=False)
            written += [mp, pp]
    return written
