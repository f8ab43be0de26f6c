import warnings

import numpy as np
import pytest

from servescore import features, glmm, sqs
from servescore.ingest import LocationBin
from servescore.simulate import simulate_points
from servescore.sqs import SqsEntry


@pytest.fixture(scope="module")
def fitted():
    _, pts, skill = simulate_points(4, n_servers=20, n_matches=200, points_per_match=80)
    rows = features.filter_min_serves(features.aggregate(pts, 1))
    rows, _ = features.standardize(rows)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        design = glmm.build_design(pts, rows, 1)
        fit = glmm.fit_glmm(design)
    return rows, design, fit, skill


def test_equals_server_linear_predictor(fitted):
    rows, design, fit, _ = fitted
    entries = {e.server: e.sqs for e in sqs.compute_sqs(fit, rows)}
    eta0 = design.X @ fit.beta + fit.u[design.server_index]
    for i, s in enumerate(design.server_labels):
        (k,) = np.flatnonzero(design.server_index == i)[:1]
        assert entries[s] == pytest.approx(eta0[k], abs=1e-12)


def test_tracks_latent_skill(fitted):
    rows, _, fit, skill = fitted
    entries = sqs.compute_sqs(fit, rows)
    r = np.corrcoef([e.sqs for e in entries], [skill[e.server] for e in entries])[0, 1]
    assert r > 0.7


def test_centering(fitted):
    rows, _, fit, _ = fitted
    centered = sqs.center_scores(sqs.compute_sqs(fit, rows))
    assert abs(np.mean([e.sqs_centered for e in centered])) < 1e-12
    diffs = [e.sqs - e.sqs_centered for e in centered]
    assert np.ptp(diffs) < 1e-12


def test_unknown_server(fitted):
    rows, _, fit, _ = fitted
    stranger = features.ServerFeatures("Nobody", 1, 30, 1, 1, LocationBin("W", "CTL"), 1, 0.0, 0.0, 0.0)
    with pytest.raises(sqs.UnknownServer):
        sqs.compute_sqs(fit, [stranger])


def test_top_k_ordering():
    es = sqs.center_scores([SqsEntry("b", 1, 1.0), SqsEntry("a", 1, 1.0), SqsEntry("c", 1, 2.0),
                            SqsEntry("d", 1, -1.0)])
    assert [e.server for e in sqs.top_k(es, 3)] == ["c", "a", "b"]
    assert len(sqs.top_k(es, 10)) == 4
    with pytest.raises(ValueError):
        sqs.top_k(es, 0)


def test_centering_per_serve_type():
    es = sqs.center_scores([SqsEntry("a", 1, 1.0), SqsEntry("b", 1, 3.0), SqsEntry("a", 2, -5.0),
                            SqsEntry("b", 2, -3.0)])
    assert [e.sqs_centered for e in es] == [-1.0, 1.0, -1.0, 1.0]


def test_serving_profiles():
    prof = sqs.serving_profiles([SqsEntry("a", 1, 0.5)], [SqsEntry("a", 2, 0.1), SqsEntry("b", 2, 0.2)])
    assert prof == {"a": (0.5, 0.1), "b": (None, 0.2)}


def test_csv_roundtrip_and_table(tmp_path, fitted):
    rows, _, fit, _ = fitted
    es = sqs.center_scores(sqs.compute_sqs(fit, rows))
    sqs.write_sqs_csv(es, tmp_path / "s.csv")
    back = sqs.read_sqs_csv(tmp_path / "s.csv")
    assert sorted(back, key=lambda e: e.server) == sorted(es, key=lambda e: e.server)
    text = sqs.format_top_table(es, [], "Top servers", k=5)
    assert text.startswith("Top servers") and len(text.splitlines()) == 5 + 5
