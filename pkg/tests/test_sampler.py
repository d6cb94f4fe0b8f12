"""Schedules, forward noising, guidance mixing, reverse steps, full loop."""

import csv
import math

import numpy as np
import pytest

from helpers import rect_mask
from tryonlab.sampler import CSV_HEADER
from tryonlab import (
    Condition,
    Grid,
    GridError,
    LinearGaussianModel,
    RandomStream,
    SamplerConfig,
    SamplerError,
    ScheduleError,
    ancestral_step,
    cfg_mix,
    csc_correct,
    e_total,
    eps_to_score,
    gaussian_field,
    make_schedule,
    q_sample,
    resample_mask,
    sample,
    toy_init,
)


@pytest.fixture(scope="module")
def schedule():
    return make_schedule(20, 0.05, 0.3)


@pytest.fixture(scope="module")
def toy():
    return toy_init(seed=5, h=16, w=12, channels=4)


@pytest.fixture(scope="module")
def mask():
    return rect_mask(16, 12, 4, 4, 8, 4)


class TestMakeSchedule:
    def test_single_step(self):
        s = make_schedule(1, 0.1, 0.1)
        assert s.alpha_bar_at(1) == 0.9

    def test_two_step_product(self):
        s = make_schedule(2, 0.1, 0.2)
        assert abs(s.alpha_bar_at(2) - 0.72) < 1e-15
        assert s.beta_at(1) == 0.1
        assert s.beta_at(2) == 0.2

    def test_long_schedule_matches_running_product(self):
        s = make_schedule(1000, 1e-4, 0.02)
        running = 1.0
        for t in range(1, 1001):
            running *= 1.0 - s.beta_at(t)
            assert s.alpha_bar_at(t) == pytest.approx(running, rel=1e-12)
        assert s.alpha_bar_at(1000) < 1e-4

    def test_alpha_bar_strictly_decreasing(self):
        s = make_schedule(1000, 1e-4, 0.02)
        assert np.all(np.diff(s.alpha_bar) < 0)

    def test_alpha_is_one_minus_beta(self, schedule):
        assert np.array_equal(schedule.alpha, 1.0 - schedule.beta)

    @pytest.mark.parametrize(
        "args",
        [(0, 0.1, 0.2), (10, 0.0, 0.2), (10, 0.2, 0.1), (10, 0.1, 1.0), (10, -0.1, 0.2)],
    )
    def test_rejects_invalid_parameters(self, args):
        with pytest.raises(ScheduleError):
            make_schedule(*args)

    @pytest.mark.parametrize("t", [0, -1, 21])
    def test_rejects_t_out_of_range(self, schedule, t):
        with pytest.raises(ScheduleError):
            schedule.beta_at(t)
        with pytest.raises(ScheduleError):
            schedule.alpha_bar_at(t)


class TestQSample:
    def test_zero_noise_scales_x0(self, schedule):
        x0 = gaussian_field(RandomStream(1).child("x0"), 6, 5)
        out = q_sample(x0, 7, Grid.zeros(6, 5), schedule)
        ab = schedule.alpha_bar_at(7)
        assert np.array_equal(out.a, np.sqrt(ab) * x0.a)

    def test_zero_x0_scales_noise(self, schedule):
        eps = gaussian_field(RandomStream(2).child("eps"), 6, 5)
        out = q_sample(Grid.zeros(6, 5), 7, eps, schedule)
        ab = schedule.alpha_bar_at(7)
        assert np.array_equal(out.a, np.sqrt(1.0 - ab) * eps.a)

    def test_rejects_t_out_of_range(self, schedule):
        with pytest.raises(ScheduleError):
            q_sample(Grid.zeros(4, 4), 21, Grid.zeros(4, 4), schedule)

    def test_rejects_shape_mismatch(self, schedule):
        with pytest.raises(GridError):
            q_sample(Grid.zeros(4, 4), 5, Grid.zeros(4, 5), schedule)

    def test_marginal_variance(self, schedule):
        """Var[x_t] = abar * Var[x0] + (1 - abar), checked over 1e5 draws."""
        rng = RandomStream(3).child("mc")
        h, w = 250, 400
        mu0, sigma0 = 0.3, 0.7
        x0 = Grid(mu0 + sigma0 * rng.normals(h * w).reshape(h, w))
        eps = gaussian_field(rng, h, w)
        for t in (1, 10, 20):
            ab = schedule.alpha_bar_at(t)
            want = ab * sigma0**2 + (1.0 - ab)
            got = float(q_sample(x0, t, eps, schedule).a.var())
            assert abs(got - want) < 0.03 * want


class TestCfgMix:
    def test_unit_scale_returns_conditional_object(self):
        u = Grid.zeros(3, 3)
        c = Grid.full(3, 3, 0.5)
        assert cfg_mix(u, c, 1.0) is c

    def test_equal_predictions_fixed_point(self):
        u = gaussian_field(RandomStream(4).child("u"), 4, 4)
        c = Grid(u.a.copy())
        for s in (0.0, 2.0, 5.0):
            assert np.allclose(cfg_mix(u, c, s).a, c.a, rtol=0, atol=1e-15)

    def test_extrapolation(self):
        u = Grid.zeros(2, 2)
        c = Grid.full(2, 2, 1.0)
        assert np.array_equal(cfg_mix(u, c, 2.0).a, np.full((2, 2), 2.0))

    def test_zero_scale_returns_unconditional_values(self):
        u = gaussian_field(RandomStream(5).child("u"), 4, 4)
        c = gaussian_field(RandomStream(5).child("c"), 4, 4)
        assert np.array_equal(cfg_mix(u, c, 0.0).a, u.a)

    def test_rejects_shape_mismatch(self):
        with pytest.raises(SamplerError):
            cfg_mix(Grid.zeros(2, 2), Grid.zeros(2, 3), 2.0)


class TestEpsToScore:
    def test_formula(self, schedule):
        eps = gaussian_field(RandomStream(6).child("eps"), 4, 4)
        for t in (1, 10, 20):
            ab = schedule.alpha_bar_at(t)
            got = eps_to_score(eps, t, schedule)
            assert np.array_equal(got.a, eps.a * (-1.0 / math.sqrt(1.0 - ab)))

    def test_zero_noise_zero_score(self, schedule):
        out = eps_to_score(Grid.zeros(4, 4), 10, schedule)
        assert not out.a.any()


class TestAncestralStep:
    def test_final_step_is_deterministic_drift(self, schedule):
        x = gaussian_field(RandomStream(7).child("x"), 5, 5)
        a = ancestral_step(x, 1, Grid.zeros(5, 5), schedule, RandomStream(8))
        b = ancestral_step(x, 1, Grid.zeros(5, 5), schedule, RandomStream(999))
        beta = schedule.beta_at(1)
        assert np.array_equal(a.a, (1.0 + 0.5 * beta) * x.a)
        assert a.a.tobytes() == b.a.tobytes()

    def test_reconstructs_from_public_pieces(self, schedule):
        """The update is exactly drift plus sqrt(beta) times the next field."""
        x = gaussian_field(RandomStream(9).child("x"), 5, 5)
        score = gaussian_field(RandomStream(9).child("score"), 5, 5)
        rng = RandomStream(10).child("step")
        got = ancestral_step(x, 7, score, schedule, rng.clone())
        beta = schedule.beta_at(7)
        want = (1.0 + 0.5 * beta) * x.a + beta * score.a
        want = want + math.sqrt(beta) * gaussian_field(rng, 5, 5).a
        assert got.a.tobytes() == want.tobytes()

    def test_noise_step_consumes_rng(self, schedule):
        rng = RandomStream(11).child("step")
        before = rng.counter
        ancestral_step(Grid.zeros(3, 3), 5, Grid.zeros(3, 3), schedule, rng)
        assert rng.counter > before

    def test_final_step_consumes_no_rng(self, schedule):
        rng = RandomStream(11).child("step")
        before = rng.counter
        ancestral_step(Grid.zeros(3, 3), 1, Grid.zeros(3, 3), schedule, rng)
        assert rng.counter == before

    def test_rejects_t_out_of_range(self, schedule):
        with pytest.raises(ScheduleError):
            ancestral_step(Grid.zeros(3, 3), 0, Grid.zeros(3, 3), schedule, RandomStream(0))

    def test_rejects_shape_mismatch(self, schedule):
        with pytest.raises(SamplerError):
            ancestral_step(Grid.zeros(3, 3), 5, Grid.zeros(3, 4), schedule, RandomStream(0))


class TestCscCorrect:
    def test_zero_rho_returns_same_object(self):
        m = Grid.full(3, 3, 1.0)
        g = Grid.full(3, 3, 123.0)
        assert csc_correct(m, g, 0.0) is m

    def test_zero_gradient_keeps_values(self):
        m = gaussian_field(RandomStream(12).child("m"), 4, 4)
        assert np.array_equal(csc_correct(m, Grid.zeros(4, 4), 0.2).a, m.a)

    def test_scalar_example(self):
        out = csc_correct(Grid.full(1, 1, 1.0), Grid.full(1, 1, 0.5), 0.2)
        assert out.a[0, 0] == 0.9

    def test_rejects_negative_rho(self):
        with pytest.raises(SamplerError):
            csc_correct(Grid.zeros(2, 2), Grid.zeros(2, 2), -0.1)

    def test_rejects_non_finite_gradient(self):
        bad = Grid(np.ones((2, 2)))
        object.__setattr__(bad, "a", np.array([[1.0, np.inf], [0.0, 0.0]]))
        with pytest.raises(SamplerError):
            csc_correct(Grid.zeros(2, 2), bad, 0.2)

    def test_rejects_shape_mismatch(self):
        with pytest.raises(SamplerError):
            csc_correct(Grid.zeros(2, 2), Grid.zeros(2, 3), 0.2)


class TestSamplerConfig:
    def test_defaults(self):
        cfg = SamplerConfig()
        assert cfg.rho == 0.2
        assert cfg.guidance_scale == 2.0
        assert cfg.steps == 20
        assert cfg.csc_enabled is True
        assert cfg.csc_step_range is None

    def test_rejects_negative_rho(self):
        with pytest.raises(SamplerError):
            SamplerConfig(rho=-0.1)

    def test_rejects_zero_steps(self):
        with pytest.raises(SamplerError):
            SamplerConfig(steps=0)

    @pytest.mark.parametrize("bad", [(2, 2), (-1, 3), (0, 21), (5, 3)])
    def test_rejects_bad_step_range(self, bad):
        with pytest.raises(SamplerError):
            SamplerConfig(csc_step_range=bad)

    def test_accepts_valid_step_range(self):
        cfg = SamplerConfig(steps=10, csc_step_range=(2, 6))
        assert cfg.csc_step_range == (2, 6)


def base_cfg(**kw):
    return SamplerConfig(**{"csc_enabled": False, **kw})


class TestSampleLoop:
    def test_disabled_equals_zero_rho(self, toy, mask, schedule):
        run = lambda cfg: sample(toy, mask, cfg, schedule, RandomStream(42).child("run"))
        x_off, rec_off = run(base_cfg())
        x_rho0, rec_rho0 = run(SamplerConfig(rho=0.0))
        assert x_off.a.tobytes() == x_rho0.a.tobytes()
        for a, b in zip(rec_off.entries, rec_rho0.entries):
            assert (a.step, a.t) == (b.step, b.t)
            assert (a.e_total, a.e_attract, a.e_repel) == (b.e_total, b.e_attract, b.e_repel)
            assert a.branch == b.branch
            assert a.in_mask_fraction == b.in_mask_fraction
        assert rec_off.final == rec_rho0.final

    def test_same_seed_bit_identical(self, toy, mask, schedule):
        a, _ = sample(toy, mask, SamplerConfig(), schedule, RandomStream(6).child("run"))
        b, _ = sample(toy, mask, SamplerConfig(), schedule, RandomStream(6).child("run"))
        assert a.a.tobytes() == b.a.tobytes()

    @pytest.mark.parametrize("steps", [1, 7, 20])
    def test_record_length_equals_steps(self, toy, mask, schedule, steps):
        _, rec = sample(
            toy, mask, base_cfg(steps=steps), schedule, RandomStream(13).child("run")
        )
        assert len(rec) == steps
        assert [e.step for e in rec.entries] == list(range(steps))

    def test_stride_subsampling_hits_endpoints(self, toy, mask, schedule):
        _, rec = sample(
            toy, mask, base_cfg(steps=5), schedule, RandomStream(14).child("run")
        )
        assert [e.t for e in rec.entries] == [20, 16, 11, 6, 1]

    def test_full_step_count_walks_every_t(self, toy, mask, schedule):
        _, rec = sample(
            toy, mask, base_cfg(steps=20), schedule, RandomStream(15).child("run")
        )
        assert [e.t for e in rec.entries] == list(range(20, 0, -1))

    def test_single_step_runs_at_t_max(self, toy, mask, schedule):
        _, rec = sample(
            toy, mask, base_cfg(steps=1), schedule, RandomStream(16).child("run")
        )
        assert [e.t for e in rec.entries] == [20]

    def test_rejects_more_steps_than_schedule(self, toy, mask):
        short = make_schedule(5, 0.05, 0.3)
        with pytest.raises(SamplerError):
            sample(toy, mask, base_cfg(steps=6), short, RandomStream(0))

    def test_baseline_records_zero_grad_norm(self, toy, mask, schedule):
        _, rec = sample(toy, mask, base_cfg(), schedule, RandomStream(17).child("run"))
        assert all(e.grad_norm == 0.0 for e in rec.entries)

    def test_correction_records_positive_grad_norm(self, toy, mask, schedule):
        _, rec = sample(toy, mask, SamplerConfig(), schedule, RandomStream(17).child("run"))
        assert all(e.grad_norm > 0.0 for e in rec.entries)

    def test_step_range_limits_correction(self, toy, mask, schedule):
        cfg = SamplerConfig(steps=6, csc_step_range=(2, 4))
        _, rec = sample(toy, mask, cfg, schedule, RandomStream(18).child("run"))
        for e in rec.entries:
            if 2 <= e.step < 4:
                assert e.grad_norm > 0.0
            else:
                assert e.grad_norm == 0.0

    def test_snapshots_follow_flag(self, toy, mask, schedule):
        _, rec = sample(
            toy,
            mask,
            SamplerConfig(steps=3, record_snapshots=True),
            schedule,
            RandomStream(19).child("run"),
        )
        assert all(e.snapshot is not None and e.snapshot.shape == (16, 12) for e in rec.entries)
        _, rec = sample(
            toy, mask, SamplerConfig(steps=3), schedule, RandomStream(19).child("run")
        )
        assert all(e.snapshot is None for e in rec.entries)

    def test_energies_finite_throughout(self, toy, mask, schedule):
        for seed in range(4):
            _, rec = sample(
                toy, mask, SamplerConfig(), schedule, RandomStream(seed).child("run")
            )
            for e in rec.entries:
                assert math.isfinite(e.e_total)
                assert math.isfinite(e.e_attract)
                assert math.isfinite(e.e_repel)
            assert math.isfinite(rec.final.e_total)

    def test_matches_manual_composition_of_public_pieces(self, toy, mask, schedule):
        """The loop is exactly init-field, predict x2, mix, step, measure."""
        cfg = base_cfg(steps=20, guidance_scale=2.0)
        got_x, got_rec = sample(toy, mask, cfg, schedule, RandomStream(20).child("run"))

        rng = RandomStream(20).child("run")
        x = gaussian_field(rng, mask.height, mask.width)
        half_mask = resample_mask(mask, 8, 6)
        want_totals = []
        for t in range(20, 0, -1):
            eps_u, _ = toy.predict(x, t, Condition.NULL)
            eps_c, layers = toy.predict(x, t, Condition.GARMENT)
            eps = cfg_mix(eps_u, eps_c, 2.0)
            x = ancestral_step(x, t, eps_to_score(eps, t, schedule), schedule, rng)
            want_totals.append(e_total(layers, [mask, half_mask]).total)
        assert got_x.a.tobytes() == x.a.tobytes()
        assert [e.e_total for e in got_rec.entries] == want_totals

    def test_correction_pulls_attention_into_mask(self, toy, mask, schedule):
        deltas = []
        for seed in range(8):
            rng = lambda: RandomStream(100 + seed).child("run")
            _, rec_on = sample(toy, mask, SamplerConfig(), schedule, rng())
            _, rec_off = sample(toy, mask, base_cfg(), schedule, rng())
            deltas.append(
                rec_on.final.in_mask_fraction["full"] - rec_off.final.in_mask_fraction["full"]
            )
        assert sum(deltas) / len(deltas) > 0.0

    def test_works_with_uniform_attention_model(self, mask, schedule):
        model = LinearGaussianModel(mu0=0.5, sigma0=1.0, schedule=schedule)
        x, rec = sample(model, mask, SamplerConfig(), schedule, RandomStream(21).child("run"))
        assert x.shape == (16, 12)
        assert set(rec.entries[0].in_mask_fraction) == {"full"}
        assert all(e.grad_norm == 0.0 for e in rec.entries)  # zero VJP model


class TestTrajectoryCsv:
    def test_header_and_roundtrip(self, toy, mask, schedule, tmp_path):
        _, rec = sample(
            toy, mask, SamplerConfig(steps=4), schedule, RandomStream(22).child("run")
        )
        path = tmp_path / "traj.csv"
        rec.write_csv(path)
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert rows[0] == list(CSV_HEADER)
        assert len(rows) == 1 + 4
        for row, entry in zip(rows[1:], rec.entries):
            assert int(row[0]) == entry.step
            assert int(row[1]) == entry.t
            assert float(row[2]) == entry.e_total  # repr round-trips exactly
            assert float(row[3]) == entry.e_attract
            assert float(row[4]) == entry.e_repel
            assert row[5] == entry.branch
            assert float(row[6]) == entry.in_mask_fraction["full"]
            assert float(row[7]) == entry.in_mask_fraction["half"]
            assert float(row[8]) == entry.grad_norm

    def test_missing_layer_leaves_cell_empty(self, mask, schedule, tmp_path):
        model = LinearGaussianModel(mu0=0.5, sigma0=1.0, schedule=schedule)
        _, rec = sample(
            model, mask, SamplerConfig(steps=3), schedule, RandomStream(23).child("run")
        )
        rows = rec.csv_rows()
        assert all(row[7] == "" for row in rows)
        assert all(row[6] != "" for row in rows)
