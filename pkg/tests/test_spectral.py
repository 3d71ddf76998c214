import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phaseat.harness.data import sine_mix_target
from phaseat.spectral import (
    FilterConfig,
    SpectralProbe,
    frequency_errors,
    gaussian_low_pass,
    one_hot,
    write_components_csv,
)

from oracles import direct_errors, direct_low_pass


def test_constant_values():
    pts = np.random.default_rng(0).uniform(size=(10, 2))
    low = gaussian_low_pass(pts, np.full((10, 3), 0.7))
    np.testing.assert_allclose(low, 0.7, atol=1e-15)
    np.testing.assert_allclose(np.full((10, 3), 0.7) - low, 0.0, atol=1e-15)


def test_single_point():
    assert gaussian_low_pass([[0.3]], [[2.5]]).tolist() == [[2.5]]


def test_three_collinear_points():
    low = gaussian_low_pass([[0.0], [1.0], [2.0]], [0.0, 1.0, 0.0], FilterConfig(variance=3))
    expected = 1.0 / (1.0 + 2.0 * math.exp(-1.0 / 6.0))
    assert low[1] == pytest.approx(expected, abs=1e-15)
    ref = direct_low_pass([[0.0], [1.0], [2.0]], [0.0, 1.0, 0.0], 3).ravel()
    np.testing.assert_allclose(low, ref, atol=1e-14)


def test_decomposition_identity():
    rng = np.random.default_rng(1)
    pts, vals = rng.uniform(size=(50, 3)), rng.normal(size=(50, 2))
    low = gaussian_low_pass(pts, vals, FilterConfig(variance=0.05))
    high = vals - low
    np.testing.assert_allclose(low + high, vals, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.005, 5.0))
def test_second_pass_changes_less(seed, variance):
    rng = np.random.default_rng(seed)
    pts, vals = rng.uniform(-1, 1, size=(40, 2)), rng.normal(size=40)
    cfg = FilterConfig(variance=variance)
    once = gaussian_low_pass(pts, vals, cfg)
    twice = gaussian_low_pass(pts, once, cfg)
    assert np.linalg.norm(twice - once) <= np.linalg.norm(once - vals) + 1e-12


def test_variance_monotonic_smoothness_on_sine_mix():
    rng = np.random.default_rng(2)
    x = np.sort(rng.uniform(-1, 1, size=300))
    y = sine_mix_target(x[:, None], (1, 3, 5))
    roughness = []
    for v in (0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0):
        low = gaussian_low_pass(x[:, None], y, FilterConfig(variance=v))
        roughness.append(float(np.sum(np.diff(low) ** 2)))
    assert all(b <= a + 1e-15 for a, b in zip(roughness, roughness[1:]))


def test_perfect_model():
    rng = np.random.default_rng(3)
    x, y = rng.uniform(size=(30, 2)), one_hot(rng.integers(0, 2, 30), 2)
    rep = frequency_errors(lambda _: y, x, y, FilterConfig(variance=0.1))
    assert rep.e_low == 0.0 and rep.e_high == 0.0


def test_low_part_only_model():
    # duplicated points in far-apart clusters: the filter is an exact block
    # average, so filtering the low part again leaves it unchanged
    rng = np.random.default_rng(4)
    x = np.repeat([[0.0], [10.0], [20.0]], 6, axis=0)
    y = one_hot(rng.integers(0, 2, len(x)), 2)
    cfg = FilterConfig(variance=0.01)
    y_low = gaussian_low_pass(x, y, cfg)
    rep = frequency_errors(lambda _: y_low, x, y, cfg)
    assert rep.e_low == pytest.approx(0.0, abs=1e-12)
    assert rep.e_high == pytest.approx(1.0, abs=1e-12)


def test_undefined_denominators_are_flagged():
    # isolated points: low part equals the labels, so the high part vanishes
    x = np.linspace(0, 4, 5)[:, None]
    rep = frequency_errors(lambda v: np.zeros((len(v), 1)), x, np.ones((5, 1)), FilterConfig(variance=1e-4))
    assert rep.low_defined and rep.e_low == 1.0
    assert not rep.high_defined and math.isnan(rep.e_high)
    rep = frequency_errors(lambda v: np.ones((len(v), 1)), x, np.zeros((5, 1)))
    assert not rep.low_defined and not rep.high_defined


def test_random_model_matches_loop_recomputation():
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, size=(60, 1))
    labels = one_hot((sine_mix_target(x, (1, 3, 5)) > 0).astype(int), 2)
    W = rng.normal(size=(1, 2))
    model = lambda v: 1 / (1 + np.exp(-(np.asarray(v) @ W)))
    rep = frequency_errors(model, x, labels, FilterConfig(variance=0.01))
    e_low, e_high = direct_errors(list(x), list(labels), list(model(x)), 0.01)
    assert rep.e_low == pytest.approx(e_low, rel=1e-10)
    assert rep.e_high == pytest.approx(e_high, rel=1e-10)


def test_permutation_invariance():
    rng = np.random.default_rng(6)
    x = rng.uniform(size=(80, 2))
    y = one_hot(rng.integers(0, 3, 80), 3)
    out = rng.dirichlet(np.ones(3), size=80)
    table = {tuple(r): o for r, o in zip(x, out)}
    model = lambda v: np.array([table[tuple(r)] for r in v])
    cfg = FilterConfig(variance=0.05)
    a = frequency_errors(model, x, y, cfg)
    perm = rng.permutation(80)
    b = frequency_errors(model, x[perm], y[perm], cfg)
    assert a.e_low == pytest.approx(b.e_low, rel=1e-12)
    assert a.e_high == pytest.approx(b.e_high, rel=1e-12)


def test_subsampling_is_seeded():
    rng = np.random.default_rng(7)
    x, y = rng.uniform(size=(50, 2)), one_hot(rng.integers(0, 2, 50), 2)
    cfg = FilterConfig(variance=0.1, max_points=20, seed=3)
    p1, p2 = SpectralProbe(x, y, cfg), SpectralProbe(x, y, cfg)
    assert len(p1.indices) == 20 and np.array_equal(p1.indices, p2.indices)


def test_filter_config_validation():
    with pytest.raises(ValueError):
        FilterConfig(variance=0)
    with pytest.raises(ValueError):
        FilterConfig(max_points=1)


def test_component_dump(tmp_path):
    rng = np.random.default_rng(8)
    x, y = rng.uniform(size=(6, 1)), one_hot(rng.integers(0, 2, 6), 2)
    rep = frequency_errors(lambda v: np.full((len(v), 2), 0.5), x, y, keep_components=True)
    write_components_csv(tmp_path / "c.csv", rep, x)
    rows = (tmp_path / "c.csv").read_text().splitlines()
    assert len(rows) == 7 and rows[0].startswith("index,x0,y_low_0")


def test_probe_inputs_must_align():
    rng = np.random.default_rng(4)
    x = rng.uniform(size=(20, 2))
    probe = SpectralProbe(x, one_hot(rng.integers(0, 2, 20), 2), FilterConfig(variance=0.1))
    assert np.array_equal(probe.labels, np.argmax(probe.y, axis=1))
    shifted = probe.evaluate(lambda v: np.clip(v, 0, 1)[:, :2], inputs=probe.x + 0.01)
    same = probe.evaluate(lambda v: np.clip(v, 0, 1)[:, :2])
    assert shifted.e_low != same.e_low
    with pytest.raises(ValueError):
        probe.evaluate(lambda v: v, inputs=probe.x[:5])
