import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cardiosim.actions import Action, default_registry, modulate
from cardiosim.ecg_ode import TWO_PI, Waveform, healthy_params, synth_ecg, true_r_peak_indices
from cardiosim.metrics import (
    IntervalReport,
    NoBeatsDetected,
    PatientProfile,
    bazett_qtc,
    classify_intervals,
    detect_fiducials,
    extract_intervals,
    interval_match_accuracy,
    pan_tompkins_rpeaks,
    phase_anchor,
)

FS = 500.0
HR = 60.0


def make_wave(beats=10, noise=0.0, seed=0, hr=HR, params=None):
    params = params or healthy_params()
    return synth_ecg(params, beats=beats, sample_rate=FS, heart_rate=hr,
                     lead_mix=[1.0], noise_std=noise, seed=seed)


# -- bazett_qtc ---------------------------------------------------------------

def test_bazett_identity_at_one_second_rr():
    assert bazett_qtc(400.0, 1000.0) == 400.0


def test_bazett_at_640ms():
    assert bazett_qtc(400.0, 640.0) == pytest.approx(500.0, abs=1e-12)


def test_bazett_derived_value_against_arithmetic_oracle():
    # independent oracle: plain arithmetic, qt / sqrt(rr_seconds)
    expected = 442.0 / math.sqrt(820.0 / 1000.0)
    assert bazett_qtc(442.0, 820.0) == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(488.106, abs=0.01)


def test_bazett_rejects_non_positive():
    with pytest.raises(ValueError):
        bazett_qtc(0.0, 1000.0)
    with pytest.raises(ValueError):
        bazett_qtc(400.0, -1.0)


@given(qt=st.floats(1.0, 1000.0))
@settings(max_examples=50, deadline=None)
def test_bazett_identity_property(qt):
    assert bazett_qtc(qt, 1000.0) == qt


# -- classify_intervals -------------------------------------------------------

def report(qtc=400.0, pr=150.0, tpte=90.0, sex="male"):
    rr = 1000.0
    return IntervalReport.create(qt_ms=qtc, rr_ms=rr, pr_ms=pr, tpte_ms=tpte, sex=sex)


def test_qtc_460_male_is_abnormal():
    assert classify_intervals(report(qtc=460.0))[0] is False


def test_qtc_460_female_is_normal():
    assert classify_intervals(report(qtc=460.0, sex="female"))[0] is True


def test_pr_150_is_normal():
    assert classify_intervals(report(pr=150.0))[1] is True


def test_tpte_120_is_abnormal():
    assert classify_intervals(report(tpte=120.0))[2] is False


def test_boundaries_are_inclusive():
    assert classify_intervals(report(qtc=450.0))[0] is True
    assert classify_intervals(report(qtc=470.0, sex="female"))[0] is True
    assert classify_intervals(report(pr=120.0))[1] is True
    assert classify_intervals(report(pr=200.0))[1] is True
    assert classify_intervals(report(tpte=80.0))[2] is True
    assert classify_intervals(report(tpte=113.0))[2] is True


@given(lo=st.floats(100.0, 600.0), hi=st.floats(100.0, 600.0))
@settings(max_examples=50, deadline=None)
def test_qtc_classification_is_monotone(lo, hi):
    lo, hi = sorted((lo, hi))
    normal_lo = classify_intervals(report(qtc=lo))[0]
    normal_hi = classify_intervals(report(qtc=hi))[0]
    assert normal_lo or not normal_hi  # raising qtc never flips false->true


# -- interval_match_accuracy --------------------------------------------------

def test_identical_lists_match_fully():
    labels = [(True, True, False)] * 4
    assert interval_match_accuracy(labels, labels) == 1.0


def test_one_label_off_in_four_samples():
    truth = [(True, True, True)] * 4
    pred = [(True, True, True)] * 3 + [(True, False, True)]
    assert interval_match_accuracy(pred, truth) == 0.75


def test_empty_lists_rejected():
    with pytest.raises(ValueError):
        interval_match_accuracy([], [])


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        interval_match_accuracy([(True, True, True)], [])


# -- pan_tompkins_rpeaks ------------------------------------------------------

def test_zero_signal_gives_empty_list():
    w = Waveform(samples=np.zeros((1, 5000)), sample_rate=FS)
    assert pan_tompkins_rpeaks(w) == []


def test_pure_noise_gives_empty_list():
    rng = np.random.default_rng(0)
    w = Waveform(samples=rng.normal(0, 1, size=(1, 5000)), sample_rate=FS)
    assert pan_tompkins_rpeaks(w) == []


def test_noise_free_detection_within_20ms():
    w = make_wave(beats=10)
    truth = true_r_peak_indices(healthy_params(), 10, FS, HR)
    peaks = pan_tompkins_rpeaks(w)
    assert len(peaks) == 10
    err_ms = np.abs(np.asarray(peaks) - truth) * 1000.0 / FS
    assert np.all(err_ms <= 20.0)


def test_noisy_detection_median_9_of_10_within_30ms():
    # noise at 5% of the R amplitude, median performance over 20 seeds
    params = healthy_params()
    clean = make_wave(beats=10)
    r_amp = float(np.max(clean.samples[0]))
    truth = true_r_peak_indices(params, 10, FS, HR)
    hits = []
    for seed in range(20):
        w = make_wave(beats=10, noise=0.05 * r_amp, seed=seed)
        peaks = np.asarray(pan_tompkins_rpeaks(w))
        good = 0
        for t in truth:
            if peaks.size and np.min(np.abs(peaks - t)) * 1000.0 / FS <= 30.0:
                good += 1
        hits.append(good)
    assert np.median(hits) >= 9


def test_translation_equivariance_under_zero_padding():
    w = make_wave(beats=6)
    base = pan_tompkins_rpeaks(w)
    for shift in (17, 250, 1001):
        shifted = Waveform(
            samples=np.concatenate([np.zeros((1, shift)), w.samples], axis=1),
            sample_rate=FS)
        moved = pan_tompkins_rpeaks(shifted)
        assert moved == [p + shift for p in base]


def test_amplitude_invariance():
    w = make_wave(beats=6)
    base = pan_tompkins_rpeaks(w)
    for c in (0.25, 3.7, 1000.0):
        scaled = Waveform(samples=c * w.samples, sample_rate=FS)
        assert pan_tompkins_rpeaks(scaled) == base


def test_low_sample_rate_rejected():
    w = Waveform(samples=np.zeros((1, 100)), sample_rate=50.0)
    with pytest.raises(ValueError):
        pan_tompkins_rpeaks(w)


def test_bad_channel_rejected():
    w = make_wave(beats=3)
    with pytest.raises(ValueError):
        pan_tompkins_rpeaks(w, channel=5)


# -- phase_anchor -------------------------------------------------------------

def test_anchor_zero_when_final_sample_on_r_peak():
    w = make_wave(beats=8)
    peaks = pan_tompkins_rpeaks(w)
    cut = Waveform(samples=w.samples[:, :peaks[-1] + 1], sample_rate=FS)
    assert phase_anchor(cut) == pytest.approx(0.0, abs=0.05)


def test_anchor_pi_at_half_rr_past_peak():
    w = make_wave(beats=8)
    peaks = pan_tompkins_rpeaks(w)
    rr = int(np.median(np.diff(peaks)))
    cut = Waveform(samples=w.samples[:, :peaks[-2] + rr // 2 + 1], sample_rate=FS)
    assert phase_anchor(cut) == pytest.approx(math.pi, abs=0.1)


def test_anchor_close_to_generator_truth_on_noisy_signal():
    params = healthy_params()
    w = make_wave(beats=5, noise=0.01, seed=3)
    start = (params.component("R").theta + math.pi) % TWO_PI
    dtheta = TWO_PI * HR / (60.0 * FS)
    truth = ((w.n_samples - 1) * dtheta + start - params.component("R").theta) % TWO_PI
    assert abs(phase_anchor(w) - truth) < 0.2


def test_anchor_raises_without_beats():
    w = Waveform(samples=np.zeros((1, 2000)), sample_rate=FS)
    with pytest.raises(NoBeatsDetected):
        phase_anchor(w)


# -- fiducials and extract_intervals -----------------------------------------

def test_fiducials_are_ordered_and_confident():
    fids = detect_fiducials(make_wave(beats=10))
    assert len(fids) >= 7
    for f in fids:
        assert f.p_onset < f.q_onset < f.r_peak < f.t_peak < f.t_end
        assert f.confidence == 1.0


def test_healthy_rr_within_10ms_of_generator_period():
    rep = extract_intervals(make_wave(beats=10), PatientProfile())
    assert abs(rep.rr_ms - 1000.0) <= 10.0


def test_healthy_intervals_classify_normal():
    rep = extract_intervals(make_wave(beats=10), PatientProfile())
    assert classify_intervals(rep) == (True, True, True)


def test_qt_prolonged_waveform_has_strictly_higher_qtc():
    reg = default_registry()
    params = healthy_params()
    dosed = modulate(params, Action(drug_id="dofetilide", dose=1.0), reg)
    base = extract_intervals(make_wave(beats=10, seed=11), PatientProfile())
    mod = extract_intervals(make_wave(beats=10, seed=11, params=dosed), PatientProfile())
    assert mod.qtc_ms > base.qtc_ms


def test_single_beat_raises_no_beats():
    w = make_wave(beats=1)
    with pytest.raises(NoBeatsDetected):
        extract_intervals(w, PatientProfile())


def test_report_csv_row():
    rep = IntervalReport.create(qt_ms=400.0, rr_ms=1000.0, pr_ms=150.0,
                                tpte_ms=90.0, sex="male")
    row = rep.to_csv_row()
    assert row == "400.0,1000.0,400.0,150.0,90.0,male,True,True,True"
    assert IntervalReport.CSV_HEADER.count(",") == row.count(",")


def test_report_rejects_inconsistent_qtc():
    with pytest.raises(ValueError):
        IntervalReport(qt_ms=400.0, rr_ms=640.0, qtc_ms=400.0, pr_ms=150.0,
                       tpte_ms=90.0, sex="male")


def test_profile_validation():
    with pytest.raises(ValueError):
        PatientProfile(sex="other")
    with pytest.raises(ValueError):
        PatientProfile(age=-1.0)
    feats = PatientProfile(sex="female", age=50.0, aux=(0.25,)).features()
    assert feats.tolist() == [1.0, 0.5, 0.25]
