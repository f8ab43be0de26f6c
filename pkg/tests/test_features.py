import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import features_by_groupby
from servescore import features
from servescore.features import ServerFeatures
from servescore.ingest import ALL_BINS, LocationBin, PointRecord


def random_points(seed, n=500, servers=8):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        s = f"S{rng.integers(servers)}"
        out.append(PointRecord(
            match_id="2019-wimbledon-1101", server=s, returner="R", serve_type=int(rng.integers(1, 3)),
            speed_mph=float(rng.normal(115, 10)), location_bin=ALL_BINS[int(rng.integers(10))],
            rally_count=int(rng.integers(1, 10)), server_won=True, efficient=True,
        ))
    return out


def pt(server, speed, loc=LocationBin("W", "CTL"), serve_type=1):
    return PointRecord("m", server, "R", serve_type, speed, loc, 1, True, True)


class TestEntropy:
    def test_single_bin(self):
        assert features.location_entropy({"A": 7}) == 0.0

    def test_two_equal_bins(self):
        assert features.location_entropy({"A": 50, "B": 50}) == pytest.approx(1.0, abs=1e-15)

    def test_two_one_one(self):
        assert features.location_entropy({"A": 2, "B": 1, "C": 1}) == pytest.approx(1.5, abs=1e-15)

    def test_zero_counts_ignored(self):
        assert features.location_entropy({"A": 3, "B": 0}) == 0.0

    def test_empty(self):
        with pytest.raises(features.EmptyCounts):
            features.location_entropy({"A": 0})

    @settings(max_examples=300)
    @given(st.lists(st.integers(0, 500), min_size=10, max_size=10).filter(lambda c: sum(c) > 0))
    def test_bounds_and_permutation(self, counts):
        h = features.location_entropy(dict(zip(ALL_BINS, counts)))
        assert 0.0 <= h <= math.log2(10) + 1e-12
        h_rev = features.location_entropy(dict(zip(ALL_BINS, counts[::-1])))
        assert h == pytest.approx(h_rev, abs=1e-12)
        occupied = sum(c > 0 for c in counts)
        assert h <= math.log2(occupied) + 1e-12


class TestAggregate:
    def test_two_speeds(self):
        (f,) = features.aggregate([pt("A", 120.0), pt("A", 130.0)], 1)
        assert f.avg_speed == 125.0
        assert f.sd_speed == pytest.approx(math.sqrt(50), abs=1e-12)

    def test_plurality_location(self):
        pts = [pt("A", 100, LocationBin("W", "CTL"))] * 6 + [pt("A", 100, LocationBin("B", "NCTL"))] * 4
        (f,) = features.aggregate(pts, 1)
        assert f.modal_loc == LocationBin("W", "CTL")

    def test_tie_breaks_lexicographically(self):
        pts = [pt("A", 100, LocationBin("W", "CTL"))] * 3 + [pt("A", 100, LocationBin("BC", "NCTL"))] * 3
        (f,) = features.aggregate(pts, 1)
        assert f.modal_loc == LocationBin("BC", "NCTL")

    def test_empty(self):
        assert features.aggregate([], 1) == []

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_against_groupby(self, seed):
        pts = random_points(seed)
        for s in (1, 2):
            got = {f.server: f for f in features.aggregate(pts, s)}
            ref = features_by_groupby(pts, s)
            assert got.keys() == ref.keys()
            for k, r in ref.items():
                f = got[k]
                assert f.n == r["n"]
                assert f.avg_speed == pytest.approx(r["avg_speed"], abs=1e-9)
                assert f.sd_speed == pytest.approx(r["sd_speed"], abs=1e-9)
                assert f.loc_entropy == pytest.approx(r["loc_entropy"], abs=1e-9)
                assert tuple(f.modal_loc) == r["modal_loc"]

    def test_streaming_merge_matches_batch(self):
        pts = random_points(5, n=700)
        batch = {f.server: f for f in features.aggregate(pts, 1)}
        left = features.accumulate(pts[:250], 1)
        right = features.accumulate(pts[250:], 1)
        for server in batch:
            merged = left.get(server, features.ServeStats()).merge(right.get(server, features.ServeStats()))
            f = features.summarize(server, 1, merged)
            b = batch[server]
            assert f.n == b.n and f.modal_loc == b.modal_loc
            for col in ("avg_speed", "sd_speed", "loc_entropy"):
                assert getattr(f, col) == pytest.approx(getattr(b, col), abs=1e-9)


class TestFilter:
    def rows(self, *ns):
        return [ServerFeatures(f"S{n}", 1, n, 110.0, 5.0, LocationBin("W", "CTL"), 1.0) for n in ns]

    def test_strict_threshold(self):
        kept = features.filter_min_serves(self.rows(20, 21))
        assert [f.n for f in kept] == [21]

    def test_zero_threshold_keeps_all(self):
        assert len(features.filter_min_serves(self.rows(1, 2, 3), 0)) == 3

    def test_monotone(self):
        rows = self.rows(*range(0, 60, 3))
        prev = None
        for t in range(0, 60, 5):
            cur = {f.server for f in features.filter_min_serves(rows, t)}
            if prev is not None:
                assert cur <= prev
            prev = cur


class TestStandardize:
    def rows(self, speeds, sds=None, ents=None):
        sds = sds or [5.0, 6.0, 8.0][: len(speeds)]
        ents = ents or [1.0, 2.0, 2.5][: len(speeds)]
        return [ServerFeatures(f"S{i}", 1, 30, a, b, LocationBin("W", "CTL"), c)
                for i, (a, b, c) in enumerate(zip(speeds, sds, ents))]

    def test_evenly_spaced(self):
        out, params = features.standardize(self.rows([100.0, 110.0, 120.0]))
        assert [f.avg_speed_z for f in out] == pytest.approx([-1.0, 0.0, 1.0], abs=1e-12)
        assert params["avg_speed"] == (110.0, 10.0)

    def test_constant_column(self):
        with pytest.warns(features.ConstantColumn):
            out, _ = features.standardize(self.rows([5.0, 5.0, 5.0]))
        assert [f.avg_speed_z for f in out] == [0.0, 0.0, 0.0]

    def test_needs_two_rows(self):
        with pytest.raises(ValueError):
            features.standardize(self.rows([100.0]))

    def test_modal_loc_untouched(self):
        rows = self.rows([100.0, 110.0, 120.0])
        out, _ = features.standardize(rows)
        assert [f.modal_loc for f in out] == [f.modal_loc for f in rows]

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(60, 160, allow_nan=False), min_size=3, max_size=40).filter(
        lambda xs: np.std(xs) > 1e-3))
    def test_moments(self, xs):
        rows = [ServerFeatures(f"S{i}", 1, 30, x, 1.0 + i, LocationBin("W", "CTL"), 0.1 * i)
                for i, x in enumerate(xs)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", features.ConstantColumn)
            out, _ = features.standardize(rows)
        z = np.array([f.avg_speed_z for f in out])
        assert abs(z.mean()) < 1e-9
        assert z.std(ddof=1) == pytest.approx(1.0, abs=1e-9)
        again, _ = features.standardize(
            [ServerFeatures(f.server, 1, 30, f.avg_speed_z, f.sd_speed_z, f.modal_loc, f.loc_entropy_z) for f in out])
        assert [f.avg_speed_z for f in again] == pytest.approx(list(z), abs=1e-12)

    def test_reuse_training_params(self):
        train, params = features.standardize(self.rows([100.0, 110.0, 120.0]))
        (test,) = features.apply_standardization(self.rows([130.0, 110.0])[:1], params)
        assert test.avg_speed_z == pytest.approx(2.0)


def test_csv_roundtrip(tmp_path):
    rows, params = features.standardize(features.aggregate(random_points(9), 1))
    features.write_features_csv(rows, tmp_path / "f.csv")
    assert features.read_features_csv(tmp_path / "f.csv") == rows
    features.write_params_json(params, tmp_path / "p.json")
    assert features.read_params_json(tmp_path / "p.json") == params
