import json

import numpy as np
import pytest

import oracle
from conftest import DESK_CFG, DESK_H
from icl_lab import inference
from icl_lab.errors import ConfigError, DimensionError, SingularityError
from icl_lab.loss import build_context, context_from_table
from icl_lab.model import Params, attention_state, init_params
from icl_lab.problem import LambdaDist, ProblemConfig, gen_dictionary, make_prompt, sample_prompt
from icl_lab.trainer import TrainerConfig, train


class TestInferenceConfig:
    def test_defaults(self):
        cfg = inference.InferenceConfig()
        assert (cfg.B, cfg.eps, cfg.delta_prob) == (3.0, 1e-4, 0.05)

    @pytest.mark.parametrize("kw", [dict(B=0), dict(eps=-1), dict(delta_prob=0), dict(delta_prob=1), dict(n_prompts=0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            inference.InferenceConfig(**kw)


class TestRidge:
    def test_identity_example(self):
        np.testing.assert_allclose(inference.ridge(np.eye(2), np.array([1.0, 0.0]), 1.0), [0.5, 0.0])

    def test_large_reg(self, rng):
        z = rng.standard_normal((3, 5))
        assert np.linalg.norm(inference.ridge(z, rng.standard_normal(5), 1e12)) < 1e-10

    def test_matches_explicit_inverse(self, rng):
        for m, n in ((3, 5), (5, 3), (4, 4)):
            z, y = rng.standard_normal((m, n)), rng.standard_normal(n)
            np.testing.assert_allclose(inference.ridge(z, y, 0.3), oracle.ridge(z, y, 0.3), rtol=1e-10, atol=1e-12)

    def test_optimality(self, desk_ctx, rng):
        y = rng.standard_normal(4)
        for reg in (desk_ctx.m * desk_ctx.tau, desk_ctx.N * desk_ctx.tau):
            lam = inference.ridge(desk_ctx.z, y, reg)
            grad = -(desk_ctx.z @ (y - desk_ctx.z.T @ lam)) / 4 + reg / 4 * lam
            assert np.linalg.norm(grad) <= 1e-10
            base = inference.ridge_objective(desk_ctx.z, y, lam, reg)
            u = rng.standard_normal((1000, desk_ctx.m))
            u *= 1e-3 / np.linalg.norm(u, axis=1, keepdims=True)
            assert all(inference.ridge_objective(desk_ctx.z, y, lam + du, reg) >= base for du in u)

    def test_zero_reg(self, rng):
        z = rng.standard_normal((2, 5))
        y = rng.standard_normal(5)
        np.testing.assert_allclose(inference.ridge(z, y, 0.0), np.linalg.lstsq(z.T, y, rcond=None)[0], atol=1e-12)
        with pytest.raises(SingularityError, match="rank 2"):
            inference.ridge(rng.standard_normal((4, 2)), rng.standard_normal(2), 0.0)

    def test_errors(self, rng):
        with pytest.raises(DimensionError):
            inference.ridge(np.eye(2), np.ones(3), 1.0)
        with pytest.raises(ConfigError):
            inference.ridge(np.eye(2), np.ones(2), -1.0)


class TestLimits:
    def test_two_paths(self, desk_ctx, rng):
        for _ in range(10):
            y = rng.standard_normal(4)
            np.testing.assert_allclose(inference.y_star(desk_ctx, y), inference.y_star_ridge(desk_ctx, y),
                                       rtol=0, atol=1e-10)

    def test_large_tau(self, desk_dict, rng):
        ctx = build_context(desk_dict, 1e9)
        y = rng.standard_normal(4)
        np.testing.assert_allclose(inference.y_star(ctx, y), np.concatenate([y, np.zeros(4)]), atol=1e-8)

    def test_exact_recovery(self, rng):
        m = N = 3
        zhat = rng.standard_normal((m, 9))
        ctx = context_from_table(zhat, N, 0.0)
        lam = rng.standard_normal(m)
        truth = lam @ zhat
        assert np.abs(inference.y_star(ctx, truth[:N]) - truth).max() <= 1e-8
        assert np.abs(inference.y_best(ctx, truth[:N]) - truth).max() <= 1e-8

    def test_best_equals_star_when_m_is_n(self, rng):
        ctx = context_from_table(rng.standard_normal((4, 9)), 4, 0.05)
        y = rng.standard_normal(4)
        np.testing.assert_allclose(inference.y_best(ctx, y), inference.y_star(ctx, y), atol=1e-12)

    def test_best_differs_otherwise(self, desk_ctx, rng):
        y = rng.standard_normal(4)
        assert np.abs(inference.y_best(desk_ctx, y) - inference.y_star(desk_ctx, y)).max() > 1e-6

    def test_best_small_tau(self, rng):
        ctx = context_from_table(rng.standard_normal((3, 8)), 5, 1e-12)
        y = rng.standard_normal(3) @ ctx.z
        np.testing.assert_allclose(inference.y_best(ctx, y), inference.y_star(ctx, y), atol=1e-8)

    def test_length(self, desk_ctx):
        with pytest.raises(DimensionError):
            inference.y_star(desk_ctx, np.ones(3))


class TestEvaluate:
    def test_untrained(self, desk_dict, desk_ctx):
        p = init_params(DESK_H, 4, 8, 1.0, 0)
        prompt = sample_prompt(desk_dict, LambdaDist(), 0.1, seed=1)
        res = inference.evaluate(p, desk_dict, desk_ctx, prompt)
        assert np.array_equal(res.y_hat, np.zeros(8))
        assert res.gap_star == pytest.approx(res.y_star @ res.y_star / 16, rel=1e-14)
        assert np.array_equal(res.y_star[:4], prompt.labels_prompt)
        assert np.array_equal(res.y_best[:4], prompt.labels_prompt)
        doc = json.loads(json.dumps(res.to_dict()))
        assert set(doc) == {"y_hat", "y_star", "y_best", "lambda_hat", "lambda_tau", "gap_star", "gap_best"}

    def test_at_optimum(self, desk_dict, desk_ctx):
        q = np.random.default_rng(0).standard_normal((4, 4, 4))
        c = attention_state(Params(q, np.zeros((4, 8))), desk_dict).c
        w = np.stack([np.linalg.solve(c[k], desk_ctx.a[:, k]) for k in range(8)], axis=1)
        prompt = sample_prompt(desk_dict, LambdaDist(), 0.1, seed=2)
        res = inference.evaluate(Params(q, w), desk_dict, desk_ctx, prompt)
        assert res.gap_star < 1e-24

    def test_gap_normalisations(self):
        assert inference.gap_star(np.ones(4), np.zeros(4)) == 0.5
        assert inference.gap_best(np.ones(4), np.zeros(4)) == 1.0

    def test_out_of_distribution_ratio(self, desk_dict, desk_ctx):
        p0 = init_params(DESK_H, 4, 8, 1.0, DESK_CFG.seed)
        rep = train(p0, desk_ctx, desk_dict, TrainerConfig(T=300, lr_mode="manual", eta_q=0.05, eta_w=0.05))
        p = rep.final_params
        d_in = LambdaDist()
        d_ood = LambdaDist("shifted-gaussian", mean=(1.0, 1.0), stdev=2.0)
        g_in = np.mean([inference.evaluate(p, desk_dict, desk_ctx, sample_prompt(desk_dict, d_in, 0.1, s)).gap_star
                        for s in range(200)])
        g_ood = np.mean([inference.evaluate(p, desk_dict, desk_ctx, sample_prompt(desk_dict, d_ood, 0.1, s)).gap_star
                         for s in range(200)])
        assert g_ood / g_in <= 10 * d_ood.second_moment(2) / d_in.second_moment(2)


class TestSmw:
    def test_zero_table(self):
        ctx = context_from_table(np.zeros((3, 6)), 2, 0.5)
        assert inference.verify_smw(ctx) <= 1e-14

    @pytest.mark.parametrize("m,N", [(2, 5), (5, 2), (4, 4)])
    def test_aspect_ratios(self, m, N, rng):
        ctx = context_from_table(rng.standard_normal((m, 9)), N, 0.1)
        assert inference.verify_smw(ctx) <= 1e-8 * (1 + np.linalg.norm(ctx.a))

    @pytest.mark.parametrize("tau", [1e-6, 1e3])
    def test_extreme_tau(self, tau, rng):
        for m, N in ((2, 5), (5, 2)):
            ctx = context_from_table(rng.standard_normal((m, 9)), N, tau)
            assert inference.verify_smw(ctx) <= 1e-6 * (1 + np.linalg.norm(ctx.a))

    def test_block_structure(self, desk_ctx):
        blk = inference.smw_block(desk_ctx)
        assert np.array_equal(blk[:, :4], np.eye(4))


class TestLabelNormBound:
    def test_noiseless(self, desk_ctx, rng):
        b = inference.label_norm_bound(3.0, 0.0, 4, 0.05, desk_ctx.z_norm)
        assert b == pytest.approx(3.0 * desk_ctx.z_norm)
        for _ in range(200):
            lam = rng.standard_normal(2)
            lam *= 3.0 / np.linalg.norm(lam) * rng.uniform()
            assert np.linalg.norm(desk_ctx.z.T @ lam) <= b + 1e-12

    def test_matches_oracle(self, desk_ctx, oracle_values):
        ov = oracle_values["desk"]
        b = inference.label_norm_bound(ov["B"], ov["tau"], ov["N"], ov["delta_prob"], desk_ctx.z_norm)
        assert b == pytest.approx(ov["label_norm_bound"], rel=1e-12)

    def test_tail(self, desk_dict, desk_ctx):
        B, tau, dp = 3.0, 0.1, 0.05
        bound = inference.label_norm_bound(B, tau, 4, dp, desk_ctx.z_norm)
        # worst case for the bound: every lambda sits on the sphere of radius B
        dist = LambdaDist("shifted-gaussian", mean=(100.0, 0.0), stdev=1.0)
        n = 10_000
        viol = sum(
            np.linalg.norm(sample_prompt(desk_dict, dist, tau, s, clip_norm=B).labels_prompt) > bound
            for s in range(n)
        )
        assert viol / n <= dp + 3 * np.sqrt(dp * (1 - dp) / n)


class TestRegressionEquivalence:
    def test_noise_averages_to_ridge_penalty(self, desk_dict, rng):
        # E over noise of (1/2N) sum (y_i - lam.(z_i + eps_i))^2
        #   = (1/2N) sum (y_i - lam.z_i)^2 + (tau/2) ||lam||^2
        tau, N = 0.1, 4
        z = desk_dict.z
        for _ in range(5):
            lam = rng.standard_normal(2)
            y = make_prompt(desk_dict, rng.standard_normal(2), np.sqrt(tau) * rng.standard_normal((2, 8))).labels_prompt
            eps = np.sqrt(tau) * rng.standard_normal((100_000, 2, N))
            vals = np.sum((y - np.einsum("m,smn->sn", lam, z[None] + eps)) ** 2, axis=1) / (2 * N)
            target = np.sum((y - lam @ z) ** 2) / (2 * N) + tau / 2 * lam @ lam
            assert abs(vals.mean() - target) <= 3 * vals.std(ddof=1) / np.sqrt(len(vals))
