"""Anomaly scoring mechanics, ensemble, triangulation, AUC-PR."""

from types import SimpleNamespace

import numpy as np
import pytest

from tsduet import anomaly as AN
from tsduet import model as M


def stub_model(S=64):
    return SimpleNamespace(cfg=SimpleNamespace(seq_len=S))


def install_stub(monkeypatch, recon=None, pred=None, F=4):
    """Replace the network with controllable reconstruction/prediction maps.

    recon(stacked (S,B)) -> y of same shape; pred(stacked) -> (B,) first
    forecast point per stream. Defaults: perfect reconstruction, persistence.
    """

    def fake_full_pass(stacked, params, *a, **kw):
        S = stacked.shape[0]
        y = recon(stacked) if recon else stacked.copy()
        first = pred(stacked) if pred else stacked[-1]
        y_pred = np.broadcast_to(first, (F,) + first.shape).copy()
        out = SimpleNamespace(
            y=SimpleNamespace(data=y),
            y_prime=SimpleNamespace(data=y.copy()),
            y_pred=SimpleNamespace(data=y_pred),
        )
        return SimpleNamespace(outputs=out)

    monkeypatch.setattr(AN, "full_pass", fake_full_pass)


# ------------------------------------------------------------ hand arithmetic


def test_window_error_mean_hand_case():
    x = np.zeros((6, 1))
    y = np.zeros((6, 1))
    y[-2:, 0] = [-1.0, -3.0]  # errors 1 and 3 on the last two points
    assert AN.window_error_mean(x, y, 2) == 5.0


def test_window_error_identity_and_constant():
    x = np.random.default_rng(0).normal(size=(10, 2))
    assert AN.window_error_mean(x, x, 4) == 0.0
    assert AN.window_error_mean(x, x - 2.5, 4) == pytest.approx(6.25)


# ------------------------------------------------------------- sliding scores


def test_reconstruction_scores_match_per_window_oracle(monkeypatch):
    rng = np.random.default_rng(1)
    S, w, n, C = 64, 8, 150, 2

    def blur(stacked):
        out = stacked.copy()
        out[1:] = 0.5 * (stacked[1:] + stacked[:-1])
        return out

    install_stub(monkeypatch, recon=blur)
    params = stub_model(S)
    x = rng.normal(size=(n, C))
    got = AN.score_reconstruction(x, params, "time", w).alpha

    # independent naive reimplementation: one window at a time
    want = np.full(n, np.nan)
    for tau in range(n - S + 1):
        win = x[tau : tau + S]
        y = blur(win)
        err = 0.0
        for i in range(S - w, S):
            for c in range(C):
                err += (win[i, c] - y[i, c]) ** 2
        want[tau + S - w + w // 2] = err / (w * C)
    first = np.flatnonzero(~np.isnan(want))[0]
    last = np.flatnonzero(~np.isnan(want))[-1]
    want[:first] = want[first]
    want[last + 1 :] = want[last]
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_reconstruction_perfect_model_scores_zero(monkeypatch):
    install_stub(monkeypatch)
    x = np.random.default_rng(2).normal(size=(100, 1))
    alpha = AN.score_reconstruction(x, stub_model(), "time", 8).alpha
    np.testing.assert_array_equal(alpha, 0.0)


def test_reconstruction_constant_error_scores_c_squared(monkeypatch):
    install_stub(monkeypatch, recon=lambda s: s - 3.0)
    x = np.random.default_rng(3).normal(size=(100, 1))
    alpha = AN.score_reconstruction(x, stub_model(), "fft", 8).alpha
    np.testing.assert_allclose(alpha, 9.0, atol=1e-12)


def test_reconstruction_scale_covariance(monkeypatch):
    install_stub(monkeypatch, recon=lambda s: np.zeros_like(s))
    rng = np.random.default_rng(4)
    x = rng.normal(size=(120, 1))
    a1 = AN.score_reconstruction(x, stub_model(), "time", 8).alpha
    a3 = AN.score_reconstruction(3.0 * x, stub_model(), "time", 8).alpha
    np.testing.assert_allclose(a3, 9.0 * a1, rtol=1e-12)


def test_reconstruction_argument_errors(monkeypatch):
    install_stub(monkeypatch)
    with pytest.raises(ValueError):
        AN.score_reconstruction(np.zeros((100, 1)), stub_model(64), "time", 64)
    with pytest.raises(ValueError):
        AN.score_reconstruction(np.zeros((32, 1)), stub_model(64), "time", 8)
    with pytest.raises(ValueError):
        AN.score_reconstruction(np.zeros((100, 1)), stub_model(64), "bogus", 8)


def test_prediction_persistence_on_constant_series(monkeypatch):
    install_stub(monkeypatch)  # persistence forecaster
    x = np.full((90, 2), 1.5)
    alpha = AN.score_prediction(x, stub_model()).alpha
    np.testing.assert_array_equal(alpha, 0.0)


def test_prediction_constant_offset(monkeypatch):
    install_stub(monkeypatch, pred=lambda s: s[-1] + 0.5)
    x = np.full((90, 1), 2.0)
    alpha = AN.score_prediction(x, stub_model()).alpha
    np.testing.assert_allclose(alpha, 0.25, atol=1e-15)


def test_prediction_spike_argmax(monkeypatch):
    install_stub(monkeypatch)  # persistence
    rng = np.random.default_rng(5)
    t = np.arange(200)
    x = np.sin(2 * np.pi * t / 50)[:, None] + 0.001 * rng.normal(size=(200, 1))
    spike = 150
    x[spike, 0] += 5.0
    alpha = AN.score_prediction(x, stub_model()).alpha
    assert int(np.argmax(alpha)) == spike


def test_prediction_needs_context_plus_one(monkeypatch):
    install_stub(monkeypatch)
    with pytest.raises(ValueError):
        AN.score_prediction(np.zeros((64, 1)), stub_model(64))


# ------------------------------------------------------------------- ensemble


def test_ensemble_identical_inputs():
    a = AN.ScoreSeries(np.array([0.0, 1.0, 2.0, 4.0]), "time", 8)
    out = AN.score_ensemble([a, a, a])
    np.testing.assert_allclose(out.alpha, [0.0, 0.25, 0.5, 1.0])


def test_ensemble_flat_zero_head_drops_out():
    a = AN.ScoreSeries(np.array([0.0, 2.0, 1.0]), "time", 8)
    b = AN.ScoreSeries(np.array([1.0, 0.0, 3.0]), "fft", 8)
    z = AN.ScoreSeries(np.zeros(3), "pred", 0)
    with_z = AN.score_ensemble([a, b, z]).alpha
    without = AN.score_ensemble([a, b]).alpha
    np.testing.assert_array_equal(with_z, without)


def test_ensemble_dominates_components_pointwise():
    rng = np.random.default_rng(6)
    series = [AN.ScoreSeries(rng.random(50), h, 8) for h in ("time", "fft", "pred")]
    out = AN.score_ensemble(series).alpha
    for s in series:
        lo, hi = s.alpha.min(), s.alpha.max()
        norm = (s.alpha - lo) / (hi - lo)
        assert np.all(out >= norm - 1e-15)


def test_ensemble_length_mismatch():
    with pytest.raises(ValueError):
        AN.score_ensemble([
            AN.ScoreSeries(np.zeros(5), "time", 8),
            AN.ScoreSeries(np.zeros(6), "fft", 8),
        ])


def test_ensemble_union_catches_every_specialists_anomaly():
    """A suite of series, each holding the anomaly type one head is good
    at; the fused score must stay competitive with that specialist."""
    rng = np.random.default_rng(7)
    n = 600
    for specialist_head in ("time", "fft", "pred"):
        labels = np.zeros(n, dtype=bool)
        labels[250:260] = True
        heads = []
        for h in ("time", "fft", "pred"):
            # every head reacts to the anomaly; the specialist reacts hardest
            a = 0.05 * rng.random(n)
            a[labels] = (1.0 if h == specialist_head else 0.35) + 0.05 * rng.random(10)
            heads.append(AN.ScoreSeries(a, h, 8))
        fused = AN.score_ensemble(heads)
        specialist = AN.auc_pr(heads[("time", "fft", "pred").index(specialist_head)], labels)
        assert AN.auc_pr(fused, labels) >= 0.8 * specialist


# --------------------------------------------------------------------- AUC-PR


def test_auc_pr_perfect_separation():
    scores = np.array([0.9, 0.8, 0.1, 0.2])
    labels = np.array([True, True, False, False])
    assert AN.auc_pr(scores, labels) == 1.0


def test_auc_pr_hand_case_matches_enumeration_oracle():
    scores = np.array([0.9, 0.8, 0.2, 0.1])
    labels = np.array([True, False, True, False])

    # oracle: explicit sweep over unique thresholds, step-curve area
    def oracle(scores, labels):
        pts = []
        for theta in sorted(set(scores), reverse=True):
            sel = scores >= theta
            tp = int((sel & labels).sum())
            fp = int((sel & ~labels).sum())
            pts.append((tp / labels.sum(), tp / (tp + fp)))
        area, prev_r = 0.0, 0.0
        for r, p in pts:
            area += (r - prev_r) * p
            prev_r = r
        return area

    want = oracle(scores, labels)
    assert want == pytest.approx(1 / 2 + 1 / 2 * 2 / 3)
    assert AN.auc_pr(scores, labels) == pytest.approx(want, abs=1e-15)


def test_auc_pr_random_scores_approach_base_rate():
    rng = np.random.default_rng(8)
    n, p = 20000, 0.15
    labels = rng.random(n) < p
    scores = rng.random(n)
    val = AN.auc_pr(scores, labels)
    assert abs(val - labels.mean()) < 0.02


def test_auc_pr_requires_positives():
    with pytest.raises(ValueError):
        AN.auc_pr(np.ones(4), np.zeros(4, dtype=bool))


# -------------------------------------------------------------- triangulation


def test_triangulate_selects_prediction_head(monkeypatch):
    """Reconstruction is perfect (flat zero scores) while persistence
    prediction flags the spike: the pred head must win."""
    install_stub(monkeypatch)  # recon perfect, pred persistence
    rng = np.random.default_rng(9)
    series, labels = [], []
    for i in range(2):
        x = np.sin(2 * np.pi * np.arange(180) / 45)[:, None]
        x += 0.001 * rng.normal(size=x.shape)
        lab = np.zeros(180, dtype=bool)
        spike = 120 + 10 * i
        x[spike, 0] += 4.0
        lab[spike] = True
        series.append((x, lab))
    choice = AN.triangulate(series, stub_model(), w=8)
    assert choice.selected == "pred"
    assert choice.metrics["pred"] >= max(choice.metrics["time"], choice.metrics["fft"])


def test_triangulate_tie_breaks_to_time(monkeypatch):
    # constant reconstruction error and constant prediction error:
    # every mechanism produces flat scores, so all metrics tie
    install_stub(monkeypatch, recon=lambda s: s - 1.0, pred=lambda s: s[-1] + 1.0)
    x = np.zeros((150, 1))
    labels = np.zeros(150, dtype=bool)
    labels[100:105] = True
    choice = AN.triangulate([(x, labels)], stub_model(), w=8)
    vals = set(round(v, 12) for v in choice.metrics.values())
    assert len(vals) == 1
    assert choice.selected == "time"


def test_triangulate_dominates_single_heads_on_tuning_set(monkeypatch):
    install_stub(monkeypatch)
    rng = np.random.default_rng(10)
    x = rng.normal(size=(160, 1)).cumsum(axis=0)
    labels = np.zeros(160, dtype=bool)
    labels[80:84] = True
    x[80:84] += 6.0
    choice = AN.triangulate([(x, labels)], stub_model(), w=8)
    best = max(choice.metrics.values())
    assert choice.metrics[choice.selected] == pytest.approx(best)


def test_triangulate_requires_positive_labels(monkeypatch):
    install_stub(monkeypatch)
    x = np.zeros((100, 1))
    with pytest.raises(ValueError):
        AN.triangulate([(x, np.zeros(100, dtype=bool))], stub_model(), w=8)


# ------------------------------------------------------------ window selection


def test_select_window_default_without_tuning_set():
    assert AN.select_window(None) == 96
    assert AN.WINDOW_CANDIDATES == (64, 96, 128)


def test_select_window_single_candidate(monkeypatch):
    install_stub(monkeypatch)
    x = np.random.default_rng(11).normal(size=(400, 1))
    labels = np.zeros(400, dtype=bool)
    labels[300] = True
    w = AN.select_window([(x, labels)], stub_model(256), candidates=(32,))
    assert w == 32


def test_select_window_prefers_wide_for_wide_anomalies(monkeypatch):
    """A weak sustained shift buried in noise: only the wide aggregation
    window averages the noise down enough to rank the block on top."""
    install_stub(monkeypatch, recon=lambda s: np.zeros_like(s))
    rng = np.random.default_rng(1)
    n = 3000
    e2 = rng.exponential(1.0, size=n)
    labels = np.zeros(n, dtype=bool)
    e2[1200:1800] += 0.3
    labels[1200:1800] = True
    x = np.sqrt(e2)[:, None]
    params = stub_model(256)
    w = AN.select_window([(x, labels)], params, candidates=(64, 128))
    assert w == 128


def test_select_window_validates_candidates(monkeypatch):
    install_stub(monkeypatch)
    x = np.zeros((100, 1))
    labels = np.ones(100, dtype=bool)
    with pytest.raises(ValueError):
        AN.select_window([(x, labels)], stub_model(64), candidates=())
    with pytest.raises(ValueError):
        AN.select_window([(x, labels)], stub_model(64), candidates=(64,))
