import math

import numpy as np
import pytest

from geogan import autodiff as ad
from geogan import trainer as TR
from geogan.data import GridData, LinesData, LinesGenerator, RngStream
from geogan.trainer import Constraint, TrainConfig
from geogan.variants import VariantSpec

import oracles

GEOMETRIC = VariantSpec("geometric", C=1.0)


class TestRmsprop:
    def test_zero_gradient(self):
        p, v = TR.rmsprop_step(np.ones(3), np.zeros(3), np.zeros(3), 0.1)
        np.testing.assert_array_equal(p, np.ones(3))

    def test_first_step(self):
        p, v = TR.rmsprop_step(np.zeros(1), np.ones(1), np.zeros(1), 0.001, 0.9)
        assert p[0] == pytest.approx(-0.001 / (math.sqrt(0.1) + 1e-8), rel=1e-14)
        assert v[0] == pytest.approx(0.1)

    def test_constant_gradient_fixed_point(self):
        p, v = np.zeros(2), np.zeros(2)
        g = np.array([3.0, -0.2])
        for _ in range(300):
            prev = p
            p, v = TR.rmsprop_step(p, g, v, 0.01)
        np.testing.assert_allclose(p - prev, -0.01 * np.sign(g), rtol=1e-6)

    def test_errors(self):
        with pytest.raises(ValueError):
            TR.rmsprop_step(np.zeros(2), np.zeros(3), np.zeros(2), 0.1)
        with pytest.raises(ValueError):
            TR.rmsprop_step(np.zeros(2), np.zeros(2), np.zeros(2), 0.1, decay=1.0)
        with pytest.raises(ValueError):
            TR.rmsprop_step(np.zeros(2), np.zeros(2), np.zeros(2), 0.1, eps=0.0)


class TestAdam:
    def test_zero_gradient(self):
        p, m, v = TR.adam_step(np.ones(2), np.zeros(2), np.zeros(2), np.zeros(2), 1, 0.1)
        np.testing.assert_array_equal(p, np.ones(2))

    @pytest.mark.parametrize("beta1", [0.5, 0.9])
    def test_first_step_is_signed_lr(self, beta1):
        g = np.array([5.0, -1e-3, 0.2])
        p, _, _ = TR.adam_step(np.zeros(3), g, np.zeros(3), np.zeros(3), 1, 0.01, beta1)
        np.testing.assert_allclose(p, -0.01 * np.sign(g), rtol=1e-4)

    def test_errors(self):
        with pytest.raises(ValueError):
            TR.adam_step(np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2), 1, 0.1, beta1=1.0)
        with pytest.raises(ValueError):
            TR.adam_step(np.zeros(2), np.zeros(1), np.zeros(2), np.zeros(2), 1, 0.1)

    def test_vanilla_config_uses_half_momentum(self):
        opt = TrainConfig(VariantSpec("vanilla-gan"), optimizer="adam").make_optimizer()
        assert isinstance(opt, TR.Adam) and opt.beta1 == 0.5 and opt.beta2 == 0.999

    def test_optimizer_state_shapes(self):
        t = ad.parameter(np.ones((2, 3)), "p")
        opt = TR.Adam(0.1)
        opt.step([t], {"p": np.full((2, 3), 0.5)})
        m, v = opt.state["p"]
        assert m.shape == v.shape == (2, 3) and np.all(v >= 0)


class TestConstraints:
    def test_clip(self):
        t = ad.parameter(np.array([0.5, -0.5, 0.005]), "p")
        TR.clip_weights([t], 0.01)
        np.testing.assert_array_equal(t.value, [0.01, -0.01, 0.005])
        before = t.value.copy()
        TR.clip_weights([t], 0.01)
        np.testing.assert_array_equal(t.value, before)
        with pytest.raises(ValueError):
            TR.clip_weights([t], 0.0)

    def test_project(self):
        small = ad.parameter(np.array([0.3, 0.4]), "a")
        big = ad.parameter(np.array([0.0, 2.0]), "b")
        zero = ad.parameter(np.zeros(3), "c")
        TR.project_unit_l2([small, big, zero])
        np.testing.assert_array_equal(small.value, [0.3, 0.4])
        np.testing.assert_array_equal(big.value, [0.0, 1.0])
        np.testing.assert_array_equal(zero.value, np.zeros(3))

    def test_weight_decay(self):
        t = ad.parameter(np.ones(1), "p")
        TR.weight_decay_step([t], 0.0, 0.001)
        assert t.value[0] == 1.0
        TR.weight_decay_step([t], 0.001, 0.001)
        assert t.value[0] == pytest.approx(0.999999, rel=1e-15)
        with pytest.raises(ValueError):
            TR.weight_decay_step([t], -1.0, 0.001)

    @pytest.mark.parametrize("mode", ["clip", "l2-project", "weight-decay"])
    def test_scope_excludes_hyperplane(self, mode):
        disc, _ = oracles.small_pair(0)
        before = {n: disc.params[n].value.copy() for n in disc.params.names(["w", "b"])}
        for t in disc.params:
            t.value = t.value * 50.0 + 1.0
        before = {n: disc.params[n].value.copy() for n in before}
        Constraint(mode, 0.01 if mode != "weight-decay" else 0.5).apply(disc.params, 0.1)
        for n, v in before.items():
            np.testing.assert_array_equal(disc.params[n].value, v)

    def test_weight_decay_reaches_generator(self):
        _, gen = oracles.small_pair(0)
        name = gen.params.names(["theta"])[0]
        v = gen.params[name].value.copy()
        Constraint("weight-decay", 0.5).apply(gen.params, 0.1)
        np.testing.assert_allclose(gen.params[name].value, 0.95 * v)
        Constraint("clip", 1e-6).apply(gen.params, 0.1)
        np.testing.assert_allclose(gen.params[name].value, 0.95 * v)

    def test_invalid(self):
        with pytest.raises(ValueError):
            Constraint("nope")
        with pytest.raises(ValueError):
            Constraint("clip", 0.0)
        with pytest.raises(ValueError):
            Constraint("weight-decay", -0.1)


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig(GEOMETRIC)
        assert (cfg.lr, cfg.batch, cfg.k_d, cfg.k_g, cfg.log_every) == (1e-3, 500, 1, 1, 100)

    @pytest.mark.parametrize(
        "kwargs", [dict(lr=0.0), dict(batch=0), dict(k_d=0), dict(optimizer="sgd"), dict(steps=0)]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(GEOMETRIC, **kwargs)

    def test_batchnorm_needs_two_rows(self):
        disc, gen = oracles.small_pair(0)
        with pytest.raises(ValueError):
            TR.train(TrainConfig(GEOMETRIC, batch=1, steps=1), disc, gen, _SmallData(0))

    def test_history_steps_increase(self):
        h = TR.RunHistory()
        h.append(TR.Record(1, 0.0, 0.0, 0.0, 0.0))
        with pytest.raises(ValueError):
            h.append(TR.Record(1, 0.0, 0.0, 0.0, 0.0))


class _SmallData:
    """2-D real points and 2-D normal latents for the small test networks."""

    def __init__(self, seed, scale=1.0):
        self.rng_x = RngStream(seed, 2).generator()
        self.rng_z = RngStream(seed, 3).generator()
        self.scale = scale

    def real(self, n):
        return self.scale * self.rng_x.normal(size=(n, 2)) + 1.0

    def latent(self, n):
        return self.rng_z.normal(size=(n, 2))


def _snapshot(params, labels):
    return {n: params[n].value.copy() for n in params.names(labels)}


ALL_VARIANTS = [
    GEOMETRIC,
    VariantSpec("mean-difference"),
    VariantSpec("wgan"),
    VariantSpec("vanilla-gan"),
    VariantSpec("ebgan", margin=1.0),
    VariantSpec("erm"),
    VariantSpec("fgan", divergence="kl"),
]


class TestPartitionDiscipline:
    @pytest.mark.parametrize("variant", ALL_VARIANTS, ids=lambda v: v.name)
    def test_steps_touch_only_their_partitions(self, variant):
        disc, gen = oracles.small_pair(1)
        cfg = TrainConfig(variant, batch=8, lr=0.01, constraint=Constraint("weight-decay", 0.1))
        opt_d, opt_g = cfg.make_optimizer(), cfg.make_optimizer()
        data = _SmallData(1)
        theta = _snapshot(gen.params, ["theta"])
        d_before = _snapshot(disc.params, ["w", "b", "zeta"])
        TR.discriminator_step(cfg, disc, gen, disc.params, opt_d, data)
        for n, v in theta.items():
            np.testing.assert_array_equal(gen.params[n].value, v)
        assert any(not np.array_equal(disc.params[n].value, v) for n, v in d_before.items())
        d_after = _snapshot(disc.params, ["w", "b", "zeta"])
        TR.generator_step(cfg, disc, gen, gen.params, opt_g, data)
        for n, v in d_after.items():
            np.testing.assert_array_equal(disc.params[n].value, v)
        assert any(not np.array_equal(gen.params[n].value, v) for n, v in theta.items())

    def test_constraint_postconditions_during_training(self):
        for mode, value in (("clip", 0.05), ("l2-project", 0.0)):
            disc, gen = oracles.small_pair(2)
            cfg = TrainConfig(VariantSpec("wgan"), batch=16, steps=1, lr=0.05, constraint=Constraint(mode, value))
            opt = cfg.make_optimizer()
            for _ in range(10):
                TR.discriminator_step(cfg, disc, gen, disc.params, opt, _SmallData(2))
                for n in disc.params.names(["zeta"]):
                    v = disc.params[n].value
                    if mode == "clip":
                        assert np.abs(v).max() <= 0.05
                    else:
                        assert np.sqrt((v**2).sum()) <= 1 + 1e-12
                assert np.abs(disc.head_weight.value).max() <= 1.0


class TestGeometricStep:
    def test_zeta_gradient_zero_outside_margins(self):
        disc, gen = oracles.small_pair(0, d_sizes=(2, 6, 5, 1))
        disc.head_weight.value *= 4.0
        cand = np.random.default_rng(0).normal(scale=3.0, size=(4000, 2))
        disc.head_bias.value -= np.median(disc(cand).value)
        s = disc(cand).value
        real, fake = cand[s > 1.01][:6], cand[s < -1.01][:6]

        class Fixed:
            def real(self, n):
                return real

            def latent(self, n):
                return np.zeros((n, 2))

        # route the constructed fakes through an identity "generator"
        class Passthrough:
            params = ad.ParamSet()

            def __call__(self, z):
                return ad.Tensor(fake)

        cfg = TrainConfig(GEOMETRIC, batch=6, lr=0.01)
        zeta = _snapshot(disc.params, ["zeta"])
        w = disc.head_weight.value.copy()
        TR.discriminator_step(cfg, disc, Passthrough(), disc.params, cfg.make_optimizer(), Fixed())
        for n, v in zeta.items():
            np.testing.assert_array_equal(disc.params[n].value, v)
        assert not np.array_equal(disc.head_weight.value, w)


class _NanData(_SmallData):
    def __init__(self, seed, bad_after):
        super().__init__(seed)
        self.calls, self.bad_after = 0, bad_after

    def real(self, n):
        self.calls += 1
        x = super().real(n)
        if self.calls > self.bad_after:
            x[0, 0] = np.nan
        return x


class TestTrain:
    def test_deterministic(self):
        runs = []
        for _ in range(2):
            disc, gen = oracles.small_pair(3)
            cfg = TrainConfig(GEOMETRIC, batch=16, steps=30, log_every=10)
            runs.append(TR.train(cfg, disc, gen, _SmallData(3)))
        assert runs[0] == runs[1]
        assert [r.step for r in runs[0].records] == [10, 20, 30]

    def test_sink_and_evaluate(self):
        disc, gen = oracles.small_pair(3)
        seen = []
        cfg = TrainConfig(GEOMETRIC, batch=8, steps=5, log_every=2)
        h = TR.train(cfg, disc, gen, _SmallData(3), evaluate=lambda g: {"covered_modes": 3}, sink=seen.append)
        assert [r.step for r in seen] == [2, 4, 5]
        assert all(r.covered_modes == 3 and math.isnan(r.hq_fraction) for r in h.records)
        assert all(r.wall_ms == 0.0 for r in h.records)

    def test_timing_flag(self):
        disc, gen = oracles.small_pair(3)
        h = TR.train(TrainConfig(GEOMETRIC, batch=8, steps=2, timing=True), disc, gen, _SmallData(3))
        assert h.records[-1].wall_ms > 0

    def test_kd_kg_counts(self):
        disc, gen = oracles.small_pair(4)
        data = _SmallData(4)
        calls = {"real": 0, "latent": 0}
        real, latent = data.real, data.latent
        data.real = lambda n: calls.__setitem__("real", calls["real"] + 1) or real(n)
        data.latent = lambda n: calls.__setitem__("latent", calls["latent"] + 1) or latent(n)
        TR.train(TrainConfig(GEOMETRIC, batch=4, steps=3, k_d=1, k_g=10, log_every=100), disc, gen, data)
        assert calls["real"] == 3 and calls["latent"] == 3 * 11

    def test_nonfinite_aborts(self):
        disc, gen = oracles.small_pair(5)
        cfg = TrainConfig(GEOMETRIC, batch=8, steps=50, log_every=5)
        h = TR.train(cfg, disc, gen, _NanData(5, bad_after=12))
        assert not h.finished
        assert h.abort.step == 13 and h.abort.loss == "d_loss" and math.isnan(h.abort.value)
        assert [r.step for r in h.records] == [5, 10]

    def test_parallel_lines(self):
        for theta0 in (2.0, -2.0):
            disc, _ = ad.build_mlp(ad.MlpSpec.simple((2, 1)), RngStream(0, 0).generator())
            gen = LinesGenerator(theta0)
            cfg = TrainConfig(GEOMETRIC, lr=0.01, batch=100, steps=2000, log_every=500)
            h = TR.train(cfg, disc, gen, LinesData(0))
            assert abs(gen.theta.value[0]) < 0.05
            assert abs(h.records[-1].d_loss - 2.0) < 0.1
            assert h.records[-1].equilibrium_gap < 0.1

    def test_grid_smoke(self):
        disc, _ = ad.build_mlp(ad.discriminator_spec(), 0)
        gen, _ = ad.build_mlp(ad.generator_spec(), 1, role="generator")
        h = TR.train(TrainConfig(GEOMETRIC, batch=64, steps=3), disc, gen, GridData(0, pool_size=1000))
        assert h.finished and len(h.records) == 1
