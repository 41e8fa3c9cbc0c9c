"""Rule-based diagnostic risk labels, scalar aggregation, and the
mean-variance intervention ranking.

The label head is a fixed, documented stand-in for a learned classifier:
logistic maps from interval deviations and heart rate drive a handful of
the 17 labels (PR excess -> 1st degree AV block, heart rate -> tachy/brady,
QTc excess -> ventricular tachycardia, detector confidence -> poor data
quality, sinus rhythm = complement of the abnormality mass) and everything
else sits at a 0.01 baseline. Being fixed makes ground-truth risk changes
computable from the generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sp_stats

from .actions import Action
from .ecg_ode import Waveform
from .metrics import NoBeatsDetected, PatientProfile, extract_intervals

LABELS = (
    "Poor data quality", "Sinus rhythm", "PVC", "Tachycardia",
    "Ventricular tachycardia", "SVT with aberrancy", "Atrial fibrillation",
    "Atrial flutter", "Bradycardia", "Accessory pathway conduction",
    "AV block", "1st degree AV block", "Bifascicular block", "RBBB", "LBBB",
    "Myocardial infarction", "Electronic pacemaker",
)
SINUS_INDEX = LABELS.index("Sinus rhythm")
BASELINE_PROB = 0.01

AGGREGATION_MODES = ("mean", "max", "top3")


@dataclass(frozen=True)
class RiskLabels:
    """Probabilities for the fixed 17-label list, index-aligned to LABELS."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if arr.size != len(LABELS):
            raise ValueError(f"need exactly {len(LABELS)} probabilities, got {arr.size}")
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "probs", arr)

    def __getitem__(self, label: str) -> float:
        return float(self.probs[LABELS.index(label)])


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def _clip(p: float) -> float:
    return min(max(p, BASELINE_PROB), 0.99)


def risk_labels(w: Waveform, profile: PatientProfile) -> RiskLabels:
    """Label probabilities for a waveform; detector failure maps to the
    documented degraded mode (poor data quality 0.99, everything else at
    baseline)."""
    probs = np.full(len(LABELS), BASELINE_PROB)
    try:
        report = extract_intervals(w, profile)
    except NoBeatsDetected:
        probs[LABELS.index("Poor data quality")] = 0.99
        return RiskLabels(probs=probs)

    hr = 60000.0 / report.rr_ms
    qtc_limit = 470.0 if profile.sex == "female" else 450.0
    tachy = _clip(_sigmoid((hr - 100.0) / 5.0))
    brady = _clip(_sigmoid((50.0 - hr) / 3.5))
    avb1 = _clip(_sigmoid((report.pr_ms - 200.0) / 8.0))
    vtach = _clip(_sigmoid((report.qtc_ms - qtc_limit) / 12.0))
    pdq = _clip(1.0 - report.confidence)

    probs[LABELS.index("Tachycardia")] = tachy
    probs[LABELS.index("Bradycardia")] = brady
    probs[LABELS.index("1st degree AV block")] = avb1
    probs[LABELS.index("Ventricular tachycardia")] = vtach
    probs[LABELS.index("Poor data quality")] = pdq
    probs[SINUS_INDEX] = _clip(1.0 - max(tachy, brady, avb1, vtach, pdq))
    return RiskLabels(probs=probs)


def beat_window_risk(w: Waveform, profile: PatientProfile,
                     mode: str = "mean", repeats: int = 6) -> float:
    """Scalar risk of a single-beat window: the beat is tiled into a short
    rhythm strip so interval extraction has context, then labelled and
    aggregated."""
    strip = Waveform(samples=np.tile(w.samples, (1, repeats)),
                     sample_rate=w.sample_rate)
    return aggregate(risk_labels(strip, profile), mode)


def aggregate(labels: RiskLabels, mode: str = "mean") -> float:
    """Pool the 16 abnormality-relevant probabilities (sinus rhythm is a
    healthy marker and excluded) into one scalar."""
    if mode not in AGGREGATION_MODES:
        raise ValueError(f"mode must be one of {AGGREGATION_MODES}")
    abnormal = np.delete(labels.probs, SINUS_INDEX)
    if mode == "mean":
        return float(abnormal.mean())
    if mode == "max":
        return float(abnormal.max())
    top3 = np.sort(abnormal)[-3:]
    return float(top3.mean())


def risk_stats(samples) -> tuple[float, float | None]:
    """Empirical mean and unbiased variance (divisor K-1). K = 1 yields an
    undefined variance, returned as None."""
    arr = np.asarray(list(samples), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("need at least one risk sample")
    if np.all(arr == arr[0]):
        # constant samples: exactly zero variance, no rounding residue
        return float(arr[0]), None if arr.size == 1 else 0.0
    mu = float(arr.mean())
    if arr.size == 1:
        return mu, None
    var = float(np.sum((arr - mu) ** 2) / (arr.size - 1))
    return mu, var


@dataclass(frozen=True)
class RiskDistribution:
    """K sampled scalar risks for one action, with their statistics."""

    samples: tuple[float, ...]
    action: Action
    mu: float
    sigma2: float | None

    def __post_init__(self) -> None:
        mu, var = risk_stats(self.samples)
        if abs(mu - self.mu) > 1e-12:
            raise ValueError("mu not recomputable from samples")
        if (var is None) != (self.sigma2 is None):
            raise ValueError("sigma2 flag inconsistent with sample count")
        if var is not None and abs(var - self.sigma2) > 1e-12:
            raise ValueError("sigma2 not recomputable from samples")

    @classmethod
    def create(cls, samples, action: Action) -> "RiskDistribution":
        samples = tuple(float(s) for s in samples)
        mu, var = risk_stats(samples)
        return cls(samples=samples, action=action, mu=mu, sigma2=var)

    @property
    def k(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class DecisionScore:
    """Mean-variance score S = mu + lam * sigma; lower is preferred."""

    value: float
    lam: float


def score(mu: float, sigma2: float, lam: float) -> DecisionScore:
    if sigma2 is None or sigma2 < 0:
        raise ValueError("sigma2 must be a non-negative number")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    return DecisionScore(value=mu + lam * math.sqrt(sigma2), lam=lam)


@dataclass(frozen=True)
class RankEntry:
    action: Action
    mu: float
    sigma2: float
    s: float
    rank: int


def rank_actions(dists: list[RiskDistribution], lam: float) -> list[RankEntry]:
    """Ascending mean-variance score; ties break toward the smaller standard
    deviation, then lexicographic action key, giving a total order."""
    if not dists:
        raise ValueError("cannot rank an empty distribution list")
    ks = {d.k for d in dists}
    if len(ks) != 1:
        raise ValueError("all distributions must share the same K policy")
    if any(d.sigma2 is None for d in dists):
        raise ValueError("ranking needs K >= 2 so sigma is defined")
    scored = []
    for d in dists:
        s = score(d.mu, d.sigma2, lam).value
        scored.append((s, math.sqrt(d.sigma2), d.action.key, d.action.dose, d))
    scored.sort(key=lambda t: t[:4])
    return [RankEntry(action=d.action, mu=d.mu, sigma2=d.sigma2, s=s, rank=i + 1)
            for i, (s, _, _, _, d) in enumerate(scored)]


@dataclass(frozen=True)
class DeltaRiskReport:
    pearson: float | None
    spearman: float | None
    sign_agreement: float
    mae: float
    rmse: float
    notes: tuple[str, ...] = ()


def delta_risk_metrics(predicted, truth) -> DeltaRiskReport:
    """Agreement metrics between predicted and true risk changes.

    Sign agreement counts strict sign matches (zero only matches zero);
    correlations on constant vectors are undefined and flagged in notes
    rather than silently zeroed.
    """
    pred = np.asarray(list(predicted), dtype=np.float64)
    true = np.asarray(list(truth), dtype=np.float64)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ValueError("predicted and true must be equal-length vectors")
    if pred.size < 2:
        raise ValueError("need at least two pairs")
    notes = []
    if np.std(pred) == 0.0 or np.std(true) == 0.0:
        pearson = spearman = None
        notes.append("correlations undefined for constant input")
    else:
        pearson = float(np.corrcoef(pred, true)[0, 1])
        r_pred = sp_stats.rankdata(pred)
        r_true = sp_stats.rankdata(true)
        if np.std(r_pred) == 0.0 or np.std(r_true) == 0.0:
            spearman = None
            notes.append("spearman undefined: constant ranks")
        else:
            spearman = float(np.corrcoef(r_pred, r_true)[0, 1])
    sign_agreement = float(np.mean(np.sign(pred) == np.sign(true)))
    err = pred - true
    return DeltaRiskReport(pearson=pearson, spearman=spearman,
                           sign_agreement=sign_agreement,
                           mae=float(np.mean(np.abs(err))),
                           rmse=float(np.sqrt(np.mean(err * err))),
                           notes=tuple(notes))
