import math
from dataclasses import replace

import numpy as np
import pytest

from phaseat.attacks import AttackConfig
from phaseat.freq_select import FrequencyState
from phaseat.harness.data import DatasetSpec, gen_dataset
from phaseat.inference import inference
from phaseat.nn import Layer, ParameterSet
from phaseat.phase_model import (
    PhaseModel,
    ProjectionSpec,
    base_forward,
    compute_first_pc,
    init_phase_model,
)
from phaseat.spectral import FilterConfig
from phaseat.trainer import (
    Monitor,
    NonFiniteLossError,
    TrainConfig,
    adv_loss,
    adv_loss_and_grad,
    rng_streams,
    train,
    train_phaseat,
    train_phaseat_iterative,
    train_standard_at,
)

from oracles import central_difference, max_relative_error


def _data(n=64, seed=0):
    ds = gen_dataset(DatasetSpec(kind="rings", n=n, seed=seed))
    return ds.x, ds.y


def _small_cfg(**kw):
    base = dict(
        epochs=2, batch_size=16, lr=0.1, n_heads=3, k_max=8, hidden=(8,),
        attack=AttackConfig(epsilon=0.05, alpha=0.06),
    )
    base.update(kw)
    return TrainConfig(**base)


def _const_model(h0re, h0im, h1re, h1im):
    ext = ParameterSet((Layer(np.eye(2), np.zeros(2), "identity"),))

    def const(v):
        return ParameterSet((Layer(np.zeros((2, 2)), np.array(v, float), "identity"),))

    return PhaseModel(
        ext, ((const(h0re), const(h0im)), (const(h1re), const(h1im))),
        ProjectionSpec(np.array([1.0, 0.0])),
    )


class TestObjective:
    def test_all_zero_frequencies_regularizer_is_one(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(size=(10, 2))
        m = init_phase_model(2, 3, rng, (6,), 3, "tanh", compute_first_pc(X))
        y = np.arange(10) % 3
        loss, _, reg = adv_loss_and_grad(m, (0, 0, 0), X, y)
        ce, _, _ = adv_loss_and_grad(m, (0, 0, 0), X, y, regularize=False)
        assert np.all(np.abs(reg - 1.0) <= 1e-12)
        assert loss == pytest.approx(ce + 1.0, abs=1e-12)

    def test_hand_computed_two_class_example(self):
        h0re, h0im, h1re, h1im = [0.5, -0.25], [9.0, 9.0], [1.0, 2.0], [-1.5, 0.5]
        m = _const_model(h0re, h0im, h1re, h1im)
        x = np.array([[3.0, 4.0]])  # z = 3/5
        z = 0.6
        c, s = math.cos(2 * math.pi * z), math.sin(2 * math.pi * z)
        t = [h0re[i] + c * h1re[i] - s * h1im[i] for i in range(2)]
        t0 = [h0re[i] + h1re[i] for i in range(2)]

        def sm(v):
            e = [math.exp(u) for u in v]
            return [u / sum(e) for u in e]

        p, p0 = sm(t), sm(t0)
        ce = -math.log(p[1])
        cos = (p[0] * p0[0] + p[1] * p0[1]) / (math.hypot(*p) * math.hypot(*p0))
        assert adv_loss(m, (0, 1), x, [1]) == pytest.approx(ce + abs(cos), abs=1e-12)

    @pytest.mark.parametrize("freqs", [(0, 0, 0), (0, 3, 5)])
    def test_parameter_gradient_matches_finite_differences(self, freqs):
        rng = np.random.default_rng(1)
        X = rng.uniform(size=(8, 2))
        m = init_phase_model(2, 3, rng, (5,), 3, "tanh", compute_first_pc(X))
        m = m.from_vector(m.to_vector() + 0.2 * rng.normal(size=m.to_vector().size))
        y = np.arange(8) % 3
        _, grads, _ = adv_loss_and_grad(m, freqs, X, y)
        num = central_difference(lambda v: adv_loss(m.from_vector(v), freqs, X, y), m.to_vector())
        assert max_relative_error(grads.to_vector(), num) < 1e-4

    def test_regularizer_bounds_on_random_models(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            X = rng.uniform(size=(16, 2))
            m = init_phase_model(2, 4, rng, (6,), 3, "tanh", compute_first_pc(X))
            m = m.from_vector(m.to_vector() * 3)
            freqs = (0, *rng.integers(0, 32, size=2))
            _, _, reg = adv_loss_and_grad(m, freqs, X, np.arange(16) % 4)
            assert np.all(reg > 0) and np.all(reg <= 1)


class TestAlgorithm:
    def test_batch_parity_targets(self):
        x, y = _data(64)
        events = []
        train_phaseat(_small_cfg(epochs=1), x, y, events=events)
        targets = [e[3] for e in events if e[2] == "sign_step"]
        assert targets == ["T", "T0", "T", "T0"]

    def test_parity_resets_each_epoch(self):
        x, y = _data(48)
        events = []
        train_phaseat(_small_cfg(epochs=2), x, y, events=events)
        targets = [(e[0], e[3]) for e in events if e[2] == "sign_step"]
        assert targets == [(1, "T"), (1, "T0"), (1, "T"), (2, "T"), (2, "T0"), (2, "T")]

    def test_event_order_once_per_batch(self):
        x, y = _data(64)
        events = []
        train_phaseat(_small_cfg(epochs=2), x, y, events=events)
        expected = ["init_delta", "sign_step", "clip", "discrepancy", "sample", "param_step"]
        per_batch = {}
        for e in events:
            per_batch.setdefault(e[:2], []).append(e[2])
        assert len(per_batch) == 8
        assert all(v == expected for v in per_batch.values())

    def test_iterative_respects_budget_every_step(self):
        x, y = _data(64)
        events = []
        cfg = _small_cfg(epochs=1, attack=AttackConfig(epsilon=0.03, alpha=0.02, steps=4))
        train_phaseat_iterative(cfg, x, y, events=events)
        clips = [e[3] for e in events if e[2] == "clip"]
        assert len(clips) == 16 and max(clips) <= 0.03 + 1e-12
        targets = [e[3] for e in events if e[2] == "sign_step"]
        assert targets == ["T"] * 4 + ["T0"] * 4 + ["T"] * 4 + ["T0"] * 4

    def test_one_inner_step_equals_non_iterative(self):
        x, y = _data(64)
        cfg = _small_cfg()
        a = train_phaseat(cfg, x, y)
        b = train_phaseat_iterative(cfg, x, y)
        assert np.array_equal(a.model.to_vector(), b.model.to_vector())
        assert np.array_equal(a.state.d, b.state.d)

    def test_standard_at_zero_budget_is_clean_training(self):
        x, y = _data(64)
        cfg = _small_cfg(attack=AttackConfig(epsilon=0.0, alpha=0.01))
        a = train_standard_at(cfg, x, y)
        b = train(replace(cfg, variant="clean"), x, y)
        assert np.array_equal(a.model.to_vector(), b.model.to_vector())
        assert a.model.n_heads == 1 and a.model.projection is None

    def test_bitwise_determinism(self):
        x, y = _data(64)
        cfg = _small_cfg(seed=7)
        a, b = train_phaseat(cfg, x, y), train_phaseat(cfg, x, y)
        assert np.array_equal(a.model.to_vector(), b.model.to_vector())
        assert [m.train_loss for m in a.metrics] == [m.train_loss for m in b.metrics]
        assert a.reg_log == b.reg_log

    def test_histogram_counts_non_base_heads(self):
        x, y = _data(64)
        res = train_phaseat(_small_cfg(epochs=1), x, y)
        assert res.metrics[0].freq_hist.sum() == 4 * 2

    def test_regularizer_log_bounds(self):
        x, y = _data(64)
        res = train_phaseat(_small_cfg(epochs=3), x, y)
        assert len(res.reg_log) == 12
        for _, _, omegas, lo, _, hi in res.reg_log:
            assert 0 < lo <= hi <= 1
            if not any(omegas):
                assert abs(lo - 1) <= 1e-9 and abs(hi - 1) <= 1e-9

    def test_non_finite_loss_reports_epoch(self):
        x, y = _data(64)
        x[5, 0] = np.nan
        with pytest.raises(NonFiniteLossError) as info:
            train(_small_cfg(epochs=5, variant="clean"), x, y)
        assert info.value.epoch == 1

    def test_monitor_records_accuracies(self):
        x, y = _data(64)
        mon = Monitor(x, y, 2, robust_attack=AttackConfig.for_eval(0.02, 3), include_initial=True)
        res = train_phaseat(_small_cfg(epochs=2), x, y, monitor=mon)
        assert [m.epoch for m in res.metrics] == [0, 1, 2]
        for m in res.metrics:
            assert 0 <= m.clean_acc <= 1 and 0 <= m.robust_acc <= 1

    def test_monitor_spectral_on_attacked_inputs(self):
        x, y = _data(64)
        runs = {}
        for name, atk in (("clean", None), ("attacked", AttackConfig.for_eval(0.05, 3))):
            mon = Monitor(x, y, 2, spectral=FilterConfig(variance=0.01), spectral_attack=atk)
            res = train_phaseat(_small_cfg(epochs=1), x, y, monitor=mon)
            runs[name] = res.metrics[-1]
        assert np.isfinite(runs["attacked"].e_high)
        assert runs["attacked"].e_low != runs["clean"].e_low


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(variant="fast")
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(beta=1.0)


def test_rng_streams_are_independent_and_reproducible():
    a, b = rng_streams(3), rng_streams(3)
    assert a["data"].random() == b["data"].random()
    c = rng_streams(3)
    assert c["data"].random() != c["attack"].random()
    assert rng_streams(3, eval_seed=9)["init"].random() == rng_streams(3)["init"].random()


class TestInferenceModes:
    def _trained(self):
        x, y = _data(64)
        return train_phaseat(_small_cfg(), x, y), x

    def test_zero_mode_is_base_forward(self):
        res, x = self._trained()
        assert np.array_equal(inference(res.model, res.state, x, "zero"), np.argmax(base_forward(res.model, x), 1))

    def test_fixed_seed_is_deterministic(self):
        res, x = self._trained()
        a = inference(res.model, res.state, x, "fixed-seed")
        b = inference(res.model, res.state, x, "fixed-seed")
        assert np.array_equal(a, b)

    def test_sampled_needs_state(self):
        res, x = self._trained()
        with pytest.raises(ValueError):
            inference(res.model, None, x, "sampled")
        with pytest.raises(ValueError):
            inference(res.model, res.state, x, "bogus")

    def test_single_point_returns_int(self):
        res, x = self._trained()
        assert isinstance(inference(res.model, res.state, x[0], "zero"), int)


def test_frequency_state_survives_training():
    x, y = _data(64)
    res = train_phaseat(_small_cfg(), x, y)
    assert isinstance(res.state, FrequencyState) and res.state.d.shape == (8,)
