"""Generators, corpora, and distortion metrics."""

import numpy as np
import pytest

from tsduet import synth as SY


# ----------------------------------------------------------------- generators


def test_sin_closed_form_value():
    s = SY.generate(SY.GeneratorSpec("sin", freq=1, length=512))
    assert s.values[128, 0] == pytest.approx(1.0)  # sin(pi/2)
    assert s.values[0, 0] == pytest.approx(0.0)


def test_impulse_positions():
    s = SY.generate(SY.GeneratorSpec("impulse", freq=1, length=512))
    nz = np.flatnonzero(s.values[:, 0])
    np.testing.assert_array_equal(nz, np.arange(0, 512, 10))
    s3 = SY.generate(SY.GeneratorSpec("impulse", freq=3, length=512))
    nz3 = np.flatnonzero(s3.values[:, 0])
    np.testing.assert_array_equal(nz3, np.arange(0, 512, 30))


def test_randwalk_reproducible_and_centered_increments():
    a = SY.generate(SY.GeneratorSpec("randwalk", freq=2, seed=5, length=512))
    b = SY.generate(SY.GeneratorSpec("randwalk", freq=2, seed=5, length=512))
    np.testing.assert_array_equal(a.values, b.values)
    c = SY.generate(SY.GeneratorSpec("randwalk", freq=2, seed=6, length=512))
    assert not np.array_equal(a.values, c.values)
    big = SY.generate(SY.GeneratorSpec("randwalk", freq=0, seed=7, length=10001))
    inc = np.diff(big.values[:, 0])
    assert abs(inc.mean()) < 0.05
    assert abs(inc.std() - 1.0) < 0.05


def test_every_pattern_row_matches_direct_evaluation():
    S = 256
    t = np.arange(S)
    f, ph = 2.0, 0.7
    b = 2 * np.pi * t * f / S + ph
    want = {
        "sin": np.sin(b),
        "modcos": np.cos(b) * np.sin(b / 2),
        "square-modcos": np.sign(np.sin(b)) * np.abs(np.cos(2 * b)),
        "gaussian-spike": np.exp(-40.0 * (t * f / S + ph / (2 * np.pi) - f / 2) ** 2),
        "sincos": np.sin(b) * np.cos(2 * b),
    }
    for pattern, expected in want.items():
        got = SY.generate(SY.GeneratorSpec(pattern, freq=f, phase=ph, length=S)).values[:, 0]
        np.testing.assert_allclose(got, expected, atol=1e-12)


def test_shape_functions():
    S = 128
    b = 2 * np.pi * np.arange(S) * 3 / S
    f2 = SY.generate(SY.GeneratorSpec("shape", shape="F2", freq=3, length=S)).values[:, 0]
    np.testing.assert_allclose(f2, 2 * (np.sin(b) + 1) ** 4 - 1, atol=1e-12)
    f3 = SY.generate(SY.GeneratorSpec("shape", shape="F3", freq=3, length=S)).values[:, 0]
    np.testing.assert_allclose(f3, 2 * (np.sin(b) + 1) ** 0.25 - 1, atol=1e-12)


def test_combo_add_and_mul():
    S = 128
    a = SY.generate(SY.GeneratorSpec("sin", freq=2, length=S)).values
    c = SY.generate(SY.GeneratorSpec("sincos", freq=2, length=S)).values
    both = SY.generate(SY.GeneratorSpec("combo", op="add", p1="sin", p2="sincos", freq=2, length=S)).values
    np.testing.assert_allclose(both, a + c, atol=1e-12)
    prod = SY.generate(SY.GeneratorSpec("combo", op="mul", p1="sin", p2="sincos", freq=2, length=S)).values
    np.testing.assert_allclose(prod, a * c, atol=1e-12)


def test_unknown_pattern_rejected():
    with pytest.raises(ValueError):
        SY.GeneratorSpec("sawtooth")
    with pytest.raises(ValueError):
        SY.GeneratorSpec("combo", op="xor")


def test_outputs_finite_with_noise_and_scale():
    for pattern in SY.BASE_PATTERNS:
        s = SY.generate(SY.GeneratorSpec(pattern, freq=4, noise=0.3, scale=2.5, seed=1, length=128))
        assert np.isfinite(s.values).all()


# -------------------------------------------------------------------- corpora


def test_search_corpus_recipe_size():
    samples, families, fines = SY.build_search_corpus(seed=0, length=64)
    assert len(samples) == 56 * 10 * 3 == 1680
    assert len(set(families)) == 56
    assert len(set(fines)) == 560
    assert all(s.shape == (64, 1) for s in samples[:5])


def test_pretrain_corpus_window_shapes():
    corpus = SY.build_pretrain_corpus(12, seed=0, length=512, future=8)
    assert len(corpus) == 12
    for ctx, fut in corpus:
        assert ctx.shape == (512,)
        assert fut.shape == (8,)
        assert np.isfinite(ctx).all()


def test_pretrain_corpus_seed_disjointness():
    a = SY.build_pretrain_corpus(40, seed=0, length=128)
    b = SY.build_pretrain_corpus(40, seed=1, length=128)
    identical = sum(np.array_equal(x[0], y[0]) for x in a for y in b)
    assert identical == 0
    a2 = SY.build_pretrain_corpus(40, seed=0, length=128)
    assert all(np.array_equal(x[0], y[0]) for x, y in zip(a, a2))


# ------------------------------------------------------------------ distortion


def identity_embed(x, mask=None):
    xs = x.values if hasattr(x, "values") else np.asarray(x, dtype=np.float64)
    out = xs.reshape(-1).copy()
    if mask is not None:
        out = out.copy()
        out[np.asarray(mask, dtype=bool).reshape(-1)] = 0.0
    return out


def test_distortion_mask_zero_under_empty_mask():
    rng = np.random.default_rng(0)
    samples = [rng.normal(size=(32, 1)) for _ in range(6)]
    res = SY.distortion_mask(identity_embed, samples, np.zeros((32, 1), dtype=bool),
                             n_pairs=50, rng=np.random.default_rng(1))
    assert res.value == 0.0


def test_distortion_mask_two_sample_hand_case():
    x = np.array([[1.0], [0.0], [0.0], [0.0]])
    y = np.array([[0.0], [1.0], [0.0], [0.0]])
    mask = np.array([[True], [False], [False], [False]])
    # masked embeddings: x -> 0 vector-ish, distance changes from sqrt(2) to 1
    res = SY.distortion_mask(identity_embed, [x, y], mask, n_pairs=10,
                             rng=np.random.default_rng(2))
    assert res.value == pytest.approx(abs(1 - 1.0 / np.sqrt(2.0)))


def test_distortion_mask_skips_coincident_pairs():
    x = np.ones((8, 1))
    with pytest.warns(UserWarning, match="coincident"):
        with pytest.raises(ValueError):
            SY.distortion_mask(identity_embed, [x, x.copy()], 0.25, n_pairs=5,
                               rng=np.random.default_rng(3))


def test_distortion_noise_zero_at_zero_eta():
    rng = np.random.default_rng(4)
    samples = [rng.normal(size=(16, 1)) for _ in range(5)]
    res = SY.distortion_noise(identity_embed, samples, [s.copy() for s in samples])
    assert res.value == 0.0


def test_distortion_noise_matches_additive_analysis():
    rng = np.random.default_rng(5)
    S, eta, n = 512, 0.3, 400
    base = np.sin(2 * np.pi * 3 * np.arange(S) / S)[:, None]
    clean = [base.copy() for _ in range(n)]
    noisy = [base + eta * rng.normal(size=(S, 1)) for _ in range(n)]
    res = SY.distortion_noise(identity_embed, clean, noisy)
    # ||x + eta*eps|| concentrates around sqrt(||x||^2 + eta^2 S)
    b = np.linalg.norm(base)
    analytic = np.sqrt(b**2 + eta**2 * S) / b - 1.0
    assert abs(res.value - analytic) / analytic < 0.05


def test_distortion_phase_zero_for_identical_signals():
    s = np.sin(2 * np.pi * 4 * np.arange(64) / 64)[:, None]
    res = SY.distortion_phase(identity_embed, [s, s.copy()], [0.0, 0.0], 0.0)
    assert res.value == 0.0


def test_distortion_phase_sine_closed_form():
    S, f = 512, 4
    t = np.arange(S)
    for phi in (np.pi / 3, 2 * np.pi / 3, np.pi):
        x = np.sin(2 * np.pi * f * t / S)[:, None]
        y = np.sin(2 * np.pi * f * t / S + phi)[:, None]
        res = SY.distortion_phase(identity_embed, [x, y], [0.0, phi], phi)
        assert res.value == pytest.approx(2 * abs(np.sin(phi / 2)), abs=1e-6)


def test_distortion_phase_no_matching_pairs():
    s = np.ones((8, 1))
    with pytest.raises(ValueError):
        SY.distortion_phase(identity_embed, [s, s], [0.0, 0.1], 0.5)


def test_suite_builders():
    samples, phases = SY.phase_suite(freq=4, length=128, seed=0)
    assert len(samples) == len(phases) == 7
    groups = SY.noise_suite([0.0, 0.5], freqs=(3.0,), per_freq=4, length=128, seed=0)
    assert set(groups) == {0.0, 0.5}
    # index alignment: same base signal, different noise
    clean, noisy = groups[0.0], groups[0.5]
    assert len(clean) == len(noisy) == 4
    base_corr = np.corrcoef(clean[0][:, 0], noisy[0][:, 0])[0, 1]
    assert base_corr > 0.5
