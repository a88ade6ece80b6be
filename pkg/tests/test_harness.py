import json
import math
from dataclasses import replace

import numpy as np
import pytest

from minimaxreg import rng
from minimaxreg.complexity import calibrated, fixed_point_rM, paper_faithful
from minimaxreg.design import TargetSpec
from minimaxreg.harness import (CellConfig, ExperimentConfig, FixedDesignConfig,
                                RipRefusal, check_isomorphy, check_multiplier,
                                decompose, fixed_design_experiment, localization_check,
                                rate_experiment, small_ball_demo)


class TestDecompose:
    def test_at_target_all_zero(self):
        gen = np.random.default_rng(0)
        X = gen.standard_normal((20, 6))
        ts = gen.standard_normal(6)
        Y = X @ ts + gen.standard_normal(20)
        dec = decompose(X, Y, ts, ts, lambda r: 0.3 * r * r)
        assert dec.quadratic == dec.multiplier == dec.reg_diff == dec.total == 0.0

    def test_noiseless_multiplier_zero(self):
        gen = np.random.default_rng(1)
        X = gen.standard_normal((20, 6))
        ts = gen.standard_normal(6)
        t = gen.standard_normal(6)
        dec = decompose(X, X @ ts, t, ts, lambda r: 0.0)
        assert dec.multiplier == 0.0

    def test_identity_on_random_instances(self):
        gen = np.random.default_rng(2)
        for _ in range(200):
            n, d = int(gen.integers(3, 30)), int(gen.integers(1, 12))
            X = gen.standard_normal((n, d))
            ts, t = gen.standard_normal((2, d))
            Y = X @ ts + gen.standard_normal(n)
            dec = decompose(X, Y, t, ts, lambda r: 0.7 * r)
            gap = abs(dec.total - (dec.quadratic + dec.multiplier + dec.reg_diff))
            assert gap <= 1e-10 * max(1.0, abs(dec.total))


class TestIsomorphy:
    def test_scaled_identity_design(self):
        n, d = 64, 8
        X = np.vstack([math.sqrt(n) * np.eye(d), np.zeros((n - d, d))])
        rep = check_isomorphy(X, rho=10.0, r_q=0.0, trials=200, seed=1)
        assert rep.frequency == 1.0 and not rep.inconclusive

    def test_zero_design(self):
        rep = check_isomorphy(np.zeros((32, 8)), rho=10.0, r_q=0.0, trials=100, seed=1)
        assert rep.frequency == 0.0

    def test_resample_exhaustion_flag(self):
        X = np.ones((8, 4))
        # r_q far above what rho admits: every direction violates the l1 cap
        rep = check_isomorphy(X, rho=0.5, r_q=10.0, trials=50, seed=2)
        assert rep.inconclusive


class TestMultiplier:
    def test_zero_noise_holds(self):
        gen = np.random.default_rng(3)
        X = gen.standard_normal((16, 8))
        rep = check_multiplier(X, np.zeros(16), 1.0, 0.5, paper_faithful())
        assert rep.sup_value == 0.0 and rep.holds

    def test_rho_zero_holds(self):
        gen = np.random.default_rng(4)
        X = gen.standard_normal((16, 8))
        rep = check_multiplier(X, gen.standard_normal(16), 0.0, 0.5, paper_faithful())
        assert rep.sup_value == 0.0 and rep.holds

    def test_event_frequency_monotone_in_eta(self):
        # larger eta -> smaller r_M -> the r^2/4 budget shrinks faster than
        # the supremum: frequencies can only go down
        freqs = []
        n, d, trials = 64, 96, 40
        for eta in (1 / (16 * math.sqrt(2)), 0.25, 0.8):
            prof = replace(paper_faithful(), eta=eta, mc_samples=512)
            fp = fixed_point_rM(1.0, 1.0, n, d, prof, seed=5)
            holds = 0
            for trial in range(trials):
                X = rng.gaussian_rows(50 + trial, (rng.DESIGN,), n, d)
                xi = rng.stream(50 + trial, rng.NOISE).standard_normal(n)
                holds += check_multiplier(X, xi, 1.0, fp.r, prof).holds
            freqs.append(holds / trials)
        assert freqs[0] >= freqs[1] >= freqs[2]


class TestRateExperiment:
    def test_paired_seeds_share_data(self):
        # the zero estimator's error equals ||t*||_2^2; two estimators in the
        # same trial must therefore report identical targets
        cfg = ExperimentConfig(
            cells=[CellConfig(20, 6, 0.5, TargetSpec.sparse(2, 0.7))],
            estimators=["zero", "oracle_erm"], trials=3, seed=5)
        rep = rate_experiment(cfg)
        zero_errs = sorted(r.l2_error_sq for r in rep.records
                           if r.estimator_name == "zero")
        assert all(e == pytest.approx(2 * 0.49, abs=1e-12) for e in zero_errs)
        seeds = {}
        for r in rep.records:
            seeds.setdefault(r.trial, set()).add(r.trial_seed)
        assert all(len(s) == 1 for s in seeds.values())

    def test_report_deterministic(self):
        cfg = ExperimentConfig(
            cells=[CellConfig(24, 8, 0.3, TargetSpec.sparse(2, 0.5))],
            estimators=["oracle_erm", "rerm"], trials=2, seed=9)
        a = rate_experiment(cfg, threads=1)
        b = rate_experiment(cfg, threads=4)
        assert json.dumps(a.to_json_dict(), sort_keys=True) == \
            json.dumps(b.to_json_dict(), sort_keys=True)

    def test_noiseless_zero_errors_and_flags(self):
        cfg = ExperimentConfig(
            cells=[CellConfig(40, 10, 0.0, TargetSpec.sparse(2, 0.5))],
            estimators=["oracle_erm"], trials=2, seed=1)
        rep = rate_experiment(cfg)
        assert rep.cells[0]["estimators"]["oracle_erm"]["median_l2"] < 1e-10
        assert rep.passed()

    def test_failure_flagging_threshold(self):
        cfg = ExperimentConfig(
            cells=[CellConfig(20, 4, 0.1, TargetSpec.sparse(1, 1.0))],
            estimators=["zero"], trials=4, seed=2)
        rep = rate_experiment(cfg)
        assert rep.cells[0]["estimators"]["zero"]["failures"] == 0


class TestLocalization:
    def test_noiseless_frequency_one(self):
        cfg = ExperimentConfig(
            cells=[CellConfig(60, 12, 0.0, TargetSpec.sparse(3, 0.5))],
            estimators=["rerm"], trials=4, seed=3)
        rep = rate_experiment(cfg)
        loc = localization_check(rep.records, cfg.cells, cfg.constants(),
                                 l1_factor=10.0)
        assert loc[0]["freq_l1"] == 1.0


class TestSmallBall:
    def test_zero_noise_zero_error(self):
        out = small_ball_demo(24, 8, 0.0, [0.1], trials=2, seed=4,
                              constants=calibrated())
        zero_rows = [r for r in out["rows"] if r["target"] == "zero"]
        assert zero_rows[0]["median_l2"] < 1e-12
        assert set(out) >= {"threshold", "rows", "N", "d", "sigma"}

    def test_threshold_value(self):
        out = small_ball_demo(256, 512, 1.0, [0.05], trials=1, seed=4,
                              constants=calibrated())
        want = math.log(512 * math.e) / 256
        assert out["threshold"] == pytest.approx(want, rel=1e-12)


class TestFixedDesignExperiment:
    def test_rip_refusal(self):
        cfg = FixedDesignConfig(n=64, d=128, sigma=0.3,
                                target=TargetSpec.sparse(2, 0.5), rip_budget=4)
        with pytest.raises(RipRefusal):
            fixed_design_experiment(cfg, trials=1, seed=0)

    def test_override_runs(self):
        cfg = FixedDesignConfig(n=64, d=128, sigma=0.3,
                                target=TargetSpec.sparse(2, 0.5), rip_budget=4,
                                rip_override=True)
        rep, records = fixed_design_experiment(cfg, trials=2, seed=0)
        assert rep["rip"]["overridden"] and len(records) == 2
        assert rep["rbar_sq"] > 0

    def test_zero_noise(self):
        cfg = FixedDesignConfig(n=64, d=16, sigma=0.0,
                                target=TargetSpec.sparse(2, 0.5), rip_budget=4)
        rep, records = fixed_design_experiment(cfg, trials=2, seed=1)
        assert rep["median_pred"] < 1e-12
