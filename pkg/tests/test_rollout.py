import math
from dataclasses import replace

import numpy as np
import pytest

from cardiosim.actions import Action, default_registry
from cardiosim.codec import CodecParams
from cardiosim.ecg_ode import healthy_params
from cardiosim.rollout import (
    SyntheticEnv,
    _model_predictor,
    ablation_battery,
    contraction_probe,
    env_predictor,
    env_step,
    jitter_params,
    missing_lead_eval,
    random_action_sequence,
    rollout,
)

REG = default_registry()
PLACEBO = Action(drug_id="placebo", dose=1.0)


def identity_env(sigma=0.0):
    codec = CodecParams.identity(n_channels=1, window=256, sample_rate=256.0)
    return SyntheticEnv(codec=codec, base_params=healthy_params(), registry=REG,
                        lead_mix=np.ones(1), sigma_eta=sigma)


# -- env_step -----------------------------------------------------------------

def test_env_step_deterministic():
    env = identity_env()
    z = env.initial_state()
    a = Action(drug_id="dofetilide", dose=1.0)
    z1 = env_step(env, z, a, seed=7)
    z2 = env_step(env, z, a, seed=7)
    assert np.array_equal(z1.z, z2.z)


def test_placebo_is_near_fixed_point():
    env = identity_env()
    z = env.initial_state()
    # one settling step absorbs the codec round-trip / anchor quantization
    z = env_step(env, z, PLACEBO, seed=0)
    z_next = env_step(env, z, PLACEBO, seed=1)
    rel = np.linalg.norm(z_next.z - z.z) / np.linalg.norm(z.z)
    assert rel < 0.02


def test_env_noise_moments_match_sigma():
    # E||eta||^2 = sigma^2 d, Monte Carlo within 3 standard errors
    sigma = 0.05
    env = identity_env(sigma=sigma)
    clean = replace(env, sigma_eta=0.0)
    z = clean.initial_state()
    t_next = env_step(clean, z, PLACEBO, seed=0).z
    d = t_next.size
    n = 2000
    sq = np.empty(n)
    for i in range(n):
        noisy = env_step(env, z, PLACEBO, seed=i).z
        sq[i] = float(np.sum((noisy - t_next) ** 2))
    want = sigma * sigma * d
    se = want * math.sqrt(2.0 / (n * d))
    assert abs(sq.mean() - want) < 3 * se


def test_env_lead_mix_must_match_codec():
    codec = CodecParams.identity(n_channels=1, window=256, sample_rate=256.0)
    with pytest.raises(ValueError):
        SyntheticEnv(codec=codec, base_params=healthy_params(), registry=REG,
                     lead_mix=np.ones(2))


# -- rollout ------------------------------------------------------------------

def test_horizon_one_closed_loop_equals_oracle():
    env = identity_env()
    z0 = env.initial_state()
    predict = env_predictor(identity_env())
    actions = [Action(drug_id="quinidine", dose=1.0)]
    closed = rollout(predict, env, z0, actions, seed=3, mode="closed_loop")
    oracle = rollout(predict, env, z0, actions, seed=3, mode="oracle")
    assert np.array_equal(closed.latent_sq_errors, oracle.latent_sq_errors)
    assert closed.delta == 0.0


def test_perfect_model_has_zero_errors():
    env = identity_env(sigma=0.0)
    z0 = env.initial_state()
    predict = env_predictor(env)  # the environment as its own predictor
    rng = np.random.default_rng(0)
    actions = random_action_sequence_from(REG, 4, rng)
    res = rollout(predict, env, z0, actions, seed=5)
    assert np.allclose(res.latent_sq_errors, 0.0, atol=1e-24)
    assert np.allclose(res.signal_mse, 0.0, atol=1e-24)
    assert res.delta == 0.0


def random_action_sequence_from(registry, horizon, rng):
    ids = [d for d in registry.drug_ids() if registry.drug(d).rules]
    return [Action(drug_id=ids[int(rng.integers(len(ids)))], dose=1.0)
            for _ in range(horizon)]


def test_failing_predictor_flags_partial_result():
    env = identity_env()
    z0 = env.initial_state()
    calls = {"n": 0}

    def flaky(z_hat, action, seed):
        calls["n"] += 1
        if calls["n"] > 3:
            raise RuntimeError("sampler failure")
        return z_hat

    res = rollout(flaky, env, z0, [PLACEBO] * 5, seed=0)
    assert res.partial
    assert len(res.latent_sq_errors) < 5


def test_rollout_validation():
    env = identity_env()
    z0 = env.initial_state()
    predict = env_predictor(env)
    with pytest.raises(ValueError):
        rollout(predict, env, z0, [], seed=0)
    with pytest.raises(ValueError):
        rollout(predict, env, z0, [PLACEBO], seed=0, mode="open_loop")


def test_trained_model_delta_nonnegative(reference_model, standard_corpus):
    rng = np.random.default_rng(11)
    predict = _model_predictor(reference_model, standard_corpus.registry)
    deltas = []
    for r in range(10):
        env = standard_corpus.eval_envs[r % len(standard_corpus.eval_envs)]
        z0 = env.initial_state(seed=int(rng.integers(1 << 31)))
        acts = random_action_sequence(standard_corpus, 5, rng)
        res = rollout(predict, env, z0, acts, seed=int(rng.integers(1 << 31)))
        deltas.append(res.delta)
    # closed-loop error dominates oracle error up to sampling noise: a
    # one-sided check that the mean gap is not significantly negative
    mean = float(np.mean(deltas))
    se = float(np.std(deltas, ddof=1)) / math.sqrt(len(deltas))
    assert mean > -2.0 * se, (mean, se)


# -- contraction probe --------------------------------------------------------

def test_zero_error_predictor_degenerates():
    # single base state + single action: a predictor that reproduces the
    # true transition exactly yields all-zero errors and a degenerate fit
    env = identity_env()
    z0 = env.initial_state().z
    states = z0[None, :]
    clean = replace(env, sigma_eta=0.0)

    def zero_error(z_hat, action, seed):
        return env_step(clean, z0, action, seed=seed).z

    est = contraction_probe(zero_error, env, states, [PLACEBO], n_pairs=40, seed=0)
    assert est.degenerate
    assert est.kappa == 0.0


def test_untrained_model_reports_large_but_finite(standard_corpus, model_cache):
    model = model_cache(0.25, 0, epochs=2)
    predict = _model_predictor(model, standard_corpus.registry)
    states = standard_corpus.train_set.z_k[:40]
    singles = [a for a in standard_corpus.actions if a.second is None]
    est = contraction_probe(predict, standard_corpus.envs[0], states, singles,
                            n_pairs=60, seed=0)
    assert math.isfinite(est.kappa) and math.isfinite(est.delta_sys)
    assert not est.degenerate


# -- missing leads ------------------------------------------------------------

def test_empty_mask_equals_unmasked(reference_model, standard_corpus):
    predict = _model_predictor(reference_model, standard_corpus.registry)
    env = standard_corpus.eval_envs[0]
    singles = [a for a in standard_corpus.actions if a.second is None]
    a = missing_lead_eval(predict, env, set(), singles, n_samples=5, seed=2)
    b = missing_lead_eval(predict, env, set(), singles, n_samples=5, seed=2)
    assert a == b


def test_all_channels_masked_rejected(reference_model, standard_corpus):
    predict = _model_predictor(reference_model, standard_corpus.registry)
    env = standard_corpus.eval_envs[0]
    singles = [a for a in standard_corpus.actions if a.second is None]
    with pytest.raises(ValueError):
        missing_lead_eval(predict, env, {0, 1}, singles, n_samples=2)


def test_single_channel_codec_rejected():
    env = identity_env()
    with pytest.raises(ValueError):
        missing_lead_eval(lambda z, a, s: z, env, {0}, [PLACEBO], n_samples=2)


# -- ablation battery ---------------------------------------------------------

def test_battery_smoke_and_cell_isolation(standard_corpus, tmp_path, monkeypatch):
    import cardiosim.rollout as ro

    real_train = ro.train_on_corpus

    def poisoned(corpus, config):
        if config.c == 0.5:
            raise RuntimeError("poisoned cell: NaN weights")
        return real_train(corpus, config)

    monkeypatch.setattr(ro, "train_on_corpus", poisoned)
    index = ablation_battery(standard_corpus, str(tmp_path),
                             c_grid=(0.0, 0.25, 0.5), lambda_grid=(0.0, 0.6),
                             k_grid=(1, 3), seeds=(0,), epochs=40,
                             horizons=(1, 2), n_rollouts=2)
    assert (tmp_path / "epk_ablation.csv").exists()
    assert (tmp_path / "lambda_sweep.csv").exists()
    assert (tmp_path / "k_sweep.csv").exists()
    assert (tmp_path / "missing_lead.csv").exists()
    assert (tmp_path / "index.json").exists()
    statuses = {(c.get("table"), c.get("c"), c.get("seed")): c["status"]
                for c in index["cells"] if c.get("table") == "epk"}
    assert statuses[("epk", 0.5, 0)].startswith("failed")
    assert statuses[("epk", 0.0, 0)] == "ok"
    assert statuses[("epk", 0.25, 0)] == "ok"


def test_jitter_params_keeps_template_valid():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = jitter_params(healthy_params(), rng)
        assert p.component("T").b > 0
