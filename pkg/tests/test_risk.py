import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cardiosim.actions import Action, default_registry, modulate
from cardiosim.ecg_ode import Waveform, healthy_params, synth_ecg
from cardiosim.metrics import PatientProfile
from cardiosim.risk import (
    AGGREGATION_MODES,
    LABELS,
    SINUS_INDEX,
    DeltaRiskReport,
    RiskDistribution,
    RiskLabels,
    aggregate,
    delta_risk_metrics,
    rank_actions,
    risk_labels,
    risk_stats,
    score,
)

PLACEBO = Action(drug_id="placebo", dose=1.0)


def wave(params=None, hr=60.0, beats=10):
    return synth_ecg(params or healthy_params(), beats=beats, sample_rate=500,
                     heart_rate=hr, lead_mix=[1.0], noise_std=0.0, seed=1)


# -- labels -------------------------------------------------------------------

def test_label_list_is_the_fixed_17():
    assert len(LABELS) == 17
    assert LABELS[0] == "Poor data quality"
    assert LABELS[1] == "Sinus rhythm"
    assert LABELS[-1] == "Electronic pacemaker"


def test_healthy_waveform_is_sinus_dominated():
    labels = risk_labels(wave(), PatientProfile())
    assert labels["Sinus rhythm"] > 0.9
    for name in ("Tachycardia", "Bradycardia", "1st degree AV block",
                 "Ventricular tachycardia", "Poor data quality"):
        assert labels[name] < 0.1, name


def test_fast_heart_rate_drives_tachycardia():
    labels = risk_labels(wave(hr=140.0, beats=20), PatientProfile())
    assert labels["Tachycardia"] > 0.5


def test_flatline_reports_poor_data_quality():
    flat = Waveform(samples=np.zeros((1, 4000)), sample_rate=500.0)
    labels = risk_labels(flat, PatientProfile())
    assert labels["Poor data quality"] == 0.99
    for i, p in enumerate(labels.probs):
        if i != 0:
            assert p == 0.01


def test_qt_prolonging_drug_raises_vt_probability():
    reg = default_registry()
    dosed = modulate(healthy_params(), Action(drug_id="dofetilide", dose=2.0), reg)
    base = risk_labels(wave(), PatientProfile())
    after = risk_labels(wave(params=dosed), PatientProfile())
    assert after["Ventricular tachycardia"] > base["Ventricular tachycardia"]


def test_risk_labels_validation():
    with pytest.raises(ValueError):
        RiskLabels(probs=np.zeros(16))
    with pytest.raises(ValueError):
        RiskLabels(probs=np.full(17, 1.5))


# -- aggregation --------------------------------------------------------------

def test_uniform_half_aggregates_to_half_in_every_mode():
    labels = RiskLabels(probs=np.full(17, 0.5))
    for mode in AGGREGATION_MODES:
        assert aggregate(labels, mode) == pytest.approx(0.5)


def test_single_spike_aggregation_arithmetic():
    probs = np.zeros(17)
    spike = 0 if SINUS_INDEX != 0 else 2
    probs[spike] = 0.9
    labels = RiskLabels(probs=probs)
    assert aggregate(labels, "max") == pytest.approx(0.9)
    assert aggregate(labels, "top3") == pytest.approx(0.3)
    assert aggregate(labels, "mean") == pytest.approx(0.9 / 16)


def test_aggregation_excludes_sinus_rhythm():
    probs = np.zeros(17)
    probs[SINUS_INDEX] = 1.0
    labels = RiskLabels(probs=probs)
    for mode in AGGREGATION_MODES:
        assert aggregate(labels, mode) == 0.0


def test_permutation_invariance_of_aggregation():
    rng = np.random.default_rng(0)
    probs = rng.uniform(0, 1, size=17)
    labels = RiskLabels(probs=probs)
    abnormal = np.delete(probs, SINUS_INDEX)
    permuted = probs.copy()
    permuted_idx = np.delete(np.arange(17), SINUS_INDEX)
    permuted[permuted_idx] = abnormal[rng.permutation(16)]
    for mode in AGGREGATION_MODES:
        assert aggregate(RiskLabels(probs=permuted), mode) == \
            pytest.approx(aggregate(labels, mode))


@given(probs=st.lists(st.floats(0, 1), min_size=17, max_size=17))
@settings(max_examples=80, deadline=None)
def test_mode_ordering_mean_top3_max(probs):
    labels = RiskLabels(probs=np.asarray(probs))
    mean = aggregate(labels, "mean")
    top3 = aggregate(labels, "top3")
    mx = aggregate(labels, "max")
    assert mean <= top3 + 1e-12
    assert top3 <= mx + 1e-12


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        aggregate(RiskLabels(probs=np.zeros(17)), "median")


# -- risk stats ---------------------------------------------------------------

def test_hand_arithmetic_three_samples():
    mu, var = risk_stats([0.2, 0.3, 0.4])
    assert mu == pytest.approx(0.3)
    assert var == pytest.approx(0.01)


def test_constant_samples_zero_variance():
    mu, var = risk_stats([0.7, 0.7, 0.7, 0.7])
    assert (mu, var) == (0.7, 0.0)


def test_two_samples_unbiased_divisor():
    mu, var = risk_stats([0.1, 0.9])
    assert mu == pytest.approx(0.5)
    assert var == pytest.approx(0.32)


def test_k_zero_rejected_k_one_flagged():
    with pytest.raises(ValueError):
        risk_stats([])
    mu, var = risk_stats([0.4])
    assert mu == 0.4 and var is None


@given(samples=st.lists(st.floats(0, 1), min_size=2, max_size=40))
@settings(max_examples=100, deadline=None)
def test_matches_welford_oracle(samples):
    mu, var = risk_stats(samples)
    # one-pass Welford oracle
    w_mean, m2 = 0.0, 0.0
    for i, x in enumerate(samples, start=1):
        delta = x - w_mean
        w_mean += delta / i
        m2 += delta * (x - w_mean)
    w_var = m2 / (len(samples) - 1)
    assert abs(mu - w_mean) < 1e-12
    assert abs(var - w_var) < 1e-12


# -- score --------------------------------------------------------------------

def test_score_paper_default_arithmetic():
    assert score(0.3, 0.01, 0.6).value == pytest.approx(0.36)


def test_lambda_zero_is_pure_mean():
    assert score(0.42, 0.5, 0.0).value == 0.42


def test_zero_variance_is_pure_mean():
    assert score(0.42, 0.0, 3.0).value == 0.42


def test_score_validation():
    with pytest.raises(ValueError):
        score(0.3, -0.1, 0.5)
    with pytest.raises(ValueError):
        score(0.3, 0.1, -0.5)
    with pytest.raises(ValueError):
        score(0.3, None, 0.5)


@given(mu=st.floats(0, 1), sigma2=st.floats(0, 1), lam=st.floats(0, 2),
       bump=st.floats(0, 0.5))
@settings(max_examples=80, deadline=None)
def test_score_monotone_in_mu_and_sigma(mu, sigma2, lam, bump):
    base = score(mu, sigma2, lam).value
    assert score(mu + bump, sigma2, lam).value >= base
    assert score(mu, sigma2 + bump, lam).value >= base


# -- ranking ------------------------------------------------------------------

def dist(samples, drug="placebo", dose=1.0):
    return RiskDistribution.create(samples, Action(drug_id=drug, dose=dose))


def test_lower_score_ranks_first():
    a = dist([0.2, 0.2], drug="lidocaine")
    b = dist([0.5, 0.5], drug="quinidine")
    ranked = rank_actions([b, a], lam=0.6)
    assert ranked[0].action.drug_id == "lidocaine"
    assert [r.rank for r in ranked] == [1, 2]


def test_tie_breaks_toward_smaller_sigma():
    a = dist([0.3, 0.5], drug="quinidine")       # mu .4, sigma .1414
    b = dist([0.35, 0.45], drug="lidocaine")     # mu .4, sigma .0707
    ranked = rank_actions([a, b], lam=0.0)
    assert ranked[0].action.drug_id == "lidocaine"


def test_tie_breaks_lexicographic_last():
    a = dist([0.4, 0.4], drug="quinidine")
    b = dist([0.4, 0.4], drug="lidocaine")
    ranked = rank_actions([a, b], lam=0.6)
    assert [r.action.drug_id for r in ranked] == ["lidocaine", "quinidine"]


def test_positive_scaling_preserves_order():
    rng = np.random.default_rng(4)
    for _ in range(50):
        sets = [rng.uniform(0, 1, size=3) for _ in range(4)]
        drugs = ["diltiazem", "lidocaine", "quinidine", "verapamil"]
        base = [dist(list(s), drug=d) for s, d in zip(sets, drugs)]
        scaled = [dist(list(0.37 * s), drug=d) for s, d in zip(sets, drugs)]
        order_base = [r.action.drug_id for r in rank_actions(base, lam=0.6)]
        order_scaled = [r.action.drug_id for r in rank_actions(scaled, lam=0.6)]
        assert order_base == order_scaled


def test_constant_shift_preserves_order():
    rng = np.random.default_rng(5)
    for _ in range(50):
        sets = [rng.uniform(0, 0.5, size=3) for _ in range(4)]
        drugs = ["diltiazem", "lidocaine", "quinidine", "verapamil"]
        base = [dist(list(s), drug=d) for s, d in zip(sets, drugs)]
        shifted = [dist(list(s + 0.3), drug=d) for s, d in zip(sets, drugs)]
        s_base = rank_actions(base, lam=0.6)
        s_shift = rank_actions(shifted, lam=0.6)
        assert [r.action.drug_id for r in s_base] == [r.action.drug_id for r in s_shift]
        for rb, rs in zip(s_base, s_shift):
            assert rs.s == pytest.approx(rb.s + 0.3)


def test_rank_validation():
    with pytest.raises(ValueError):
        rank_actions([], lam=0.6)
    with pytest.raises(ValueError):
        rank_actions([dist([0.2, 0.3]), dist([0.2, 0.3, 0.4], drug="quinidine")],
                     lam=0.6)
    with pytest.raises(ValueError):
        rank_actions([RiskDistribution.create([0.5], PLACEBO)], lam=0.6)


def test_distribution_invariants():
    with pytest.raises(ValueError):
        RiskDistribution(samples=(0.2, 0.4), action=PLACEBO, mu=0.5, sigma2=0.02)
    d = RiskDistribution.create([0.2, 0.4], PLACEBO)
    assert d.k == 2


# -- delta risk metrics -------------------------------------------------------

def test_identical_vectors_perfect_metrics():
    rep = delta_risk_metrics([0.1, -0.2, 0.3], [0.1, -0.2, 0.3])
    assert rep.pearson == pytest.approx(1.0)
    assert rep.spearman == pytest.approx(1.0)
    assert rep.sign_agreement == 1.0
    assert rep.mae == 0.0 and rep.rmse == 0.0


def test_negated_vector_anticorrelates():
    rep = delta_risk_metrics([0.1, -0.2, 0.3], [-0.1, 0.2, -0.3])
    assert rep.pearson == pytest.approx(-1.0)


def test_worked_example_against_two_pass_oracle():
    pred = [0.1, -0.2, 0.3]
    true = [0.2, -0.1, 0.6]
    rep = delta_risk_metrics(pred, true)
    assert rep.sign_agreement == 1.0
    assert rep.mae == pytest.approx(1.0 / 6.0, abs=1e-12)
    # independent two-pass pearson oracle
    mp, mt = sum(pred) / 3, sum(true) / 3
    cov = sum((p - mp) * (t - mt) for p, t in zip(pred, true))
    sp = math.sqrt(sum((p - mp) ** 2 for p in pred))
    st_ = math.sqrt(sum((t - mt) ** 2 for t in true))
    assert rep.pearson == pytest.approx(cov / (sp * st_), abs=1e-12)


def test_zero_matches_only_zero_in_sign_agreement():
    rep = delta_risk_metrics([0.0, 0.1], [0.0, -0.1])
    assert rep.sign_agreement == 0.5
    rep = delta_risk_metrics([0.0, 0.1], [1e-9, 0.1])
    assert rep.sign_agreement == 0.5


def test_constant_vectors_flagged_not_zeroed():
    rep = delta_risk_metrics([0.5, 0.5, 0.5], [0.1, 0.2, 0.3])
    assert rep.pearson is None and rep.spearman is None
    assert rep.notes


def test_delta_risk_validation():
    with pytest.raises(ValueError):
        delta_risk_metrics([0.1], [0.1])
    with pytest.raises(ValueError):
        delta_risk_metrics([0.1, 0.2], [0.1])
