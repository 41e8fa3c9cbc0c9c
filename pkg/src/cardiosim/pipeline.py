"""Shared simulation/ranking core behind the CLI and the HTTP service.

Both interfaces call the same request-dict -> report-dict functions and
serialize with the same canonical JSON, so identical inputs and seeds
produce byte-identical reports through either surface. Every response
carries the seeds used, making any interaction replayable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .actions import (Action, InfeasibleActionError, Registry, default_registry,
                      enumerate_actions, mask_check)
from .codec import CodecParams, decode, encode, beat_windows
from .ecg_ode import OdeParams, PRESETS, Waveform, healthy_params
from .metrics import NoBeatsDetected, PatientProfile, classify_intervals, extract_intervals
from .risk import RiskDistribution, beat_window_risk, rank_actions, score
from .rollout import LEAD_MIX, SyntheticEnv
from .world_model import (EpkAnchor, WorldModel, build_epk, epk_window,
                          predict_next, project_epk)

SCHEMA_VERSION = 1
MAX_TRACE_POINTS = 2000


class ValidationError(ValueError):
    """Malformed request; carries per-field messages."""

    def __init__(self, fields: dict[str, str]):
        super().__init__("; ".join(f"{k}: {v}" for k, v in sorted(fields.items())))
        self.fields = fields


@dataclass
class Bundle:
    """Loaded artifacts a simulation needs."""

    codec: CodecParams
    model: WorldModel
    registry: Registry

    @classmethod
    def load(cls, codec_path: str, wm_path: str, registry_path: str | None) -> "Bundle":
        registry = Registry.load(registry_path) if registry_path else default_registry()
        bundle = cls(codec=CodecParams.load(codec_path),
                     model=WorldModel.load(wm_path), registry=registry)
        if bundle.model.drug_ids != registry.drug_ids():
            raise ValueError("world model was trained against a different registry")
        return bundle

    def lead_mix(self) -> np.ndarray:
        n = self.codec.n_channels
        return np.asarray(LEAD_MIX[:n] if n <= len(LEAD_MIX) else [1.0] * n)


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def sample_seed(master: int, action_index: int, draw: int) -> int:
    return (master * 1_000_003 + action_index * 1009 + draw) % (1 << 31)


def downsample_trace(values: np.ndarray, limit: int = MAX_TRACE_POINTS) -> list[float]:
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size <= limit:
        return [float(x) for x in v]
    idx = np.linspace(0, v.size - 1, limit).round().astype(int)
    return [float(x) for x in v[idx]]


def _baseline_params(choice, fields: dict[str, str]) -> OdeParams | None:
    if not isinstance(choice, dict):
        fields["baseline"] = "must be an object"
        return None
    if "preset" in choice:
        maker = PRESETS.get(choice["preset"])
        if maker is None:
            fields["baseline.preset"] = f"unknown preset {choice['preset']!r}"
            return None
        return maker()
    if "ode_params" in choice:
        try:
            return OdeParams.from_json(json.dumps(choice["ode_params"]))
        except (KeyError, TypeError, ValueError) as exc:
            fields["baseline.ode_params"] = str(exc)
            return None
    if "waveform" not in choice:
        fields["baseline"] = "need one of preset / ode_params / waveform"
    return None


def _baseline_state(bundle: Bundle, choice, fields: dict[str, str]):
    """Returns (z0, params-or-None). Waveform baselines are encoded from
    their beat windows; parametric baselines go through the environment's
    template window."""
    params = _baseline_params(choice, fields)
    if fields:
        return None, None
    if params is not None:
        env = SyntheticEnv(codec=bundle.codec, base_params=params,
                           registry=bundle.registry, lead_mix=bundle.lead_mix(),
                           sigma_eta=0.0)
        return env.initial_state(), params
    try:
        w = Waveform(samples=np.asarray(choice["waveform"]["samples"], dtype=np.float64),
                     sample_rate=float(choice["waveform"]["sample_rate"]))
        windows = beat_windows(w, bundle.codec.window)
        if not windows:
            fields["baseline.waveform"] = "no beats detected in uploaded waveform"
            return None, None
        return encode(bundle.codec, Waveform(samples=windows[0],
                                             sample_rate=bundle.codec.sample_rate)), \
            healthy_params()
    except (KeyError, TypeError, ValueError) as exc:
        fields["baseline.waveform"] = str(exc)
        return None, None


def _parse_action(bundle: Bundle, req: dict, fields: dict[str, str]) -> Action | None:
    action_id = req.get("action_id")
    if not isinstance(action_id, str):
        fields["action_id"] = "required string"
        return None
    dose = req.get("dose")
    if not isinstance(dose, (int, float)) or dose < 0:
        fields["dose"] = "required non-negative number"
        return None
    ids = sorted(action_id.split("+"))
    known = set(bundle.registry.drug_ids())
    for drug in ids:
        if drug not in known:
            fields["action_id"] = f"unknown drug {drug!r}"
            return None
    if len(ids) == 1:
        return Action(drug_id=ids[0], dose=float(dose))
    if len(ids) == 2:
        return Action(drug_id=ids[0], dose=float(dose), protocol="combination",
                      second=(ids[1], float(dose)))
    fields["action_id"] = "at most two drugs in a combination"
    return None


def _require_int(req: dict, key: str, fields: dict[str, str], minimum: int) -> int | None:
    val = req.get(key)
    if not isinstance(val, int) or isinstance(val, bool) or val < minimum:
        fields[key] = f"required integer >= {minimum}"
        return None
    return val


def _require_lambda(req: dict, fields: dict[str, str]) -> float | None:
    lam = req.get("lambda")
    if not isinstance(lam, (int, float)) or lam < 0:
        fields["lambda"] = "required non-negative number"
        return None
    return float(lam)


def _interval_row(w: Waveform, profile: PatientProfile) -> dict | None:
    tiled = Waveform(samples=np.tile(w.samples, (1, 6)), sample_rate=w.sample_rate)
    try:
        rep = extract_intervals(tiled, profile)
    except NoBeatsDetected:
        return None
    qtc_n, pr_n, tpte_n = classify_intervals(rep)
    return {"qt_ms": rep.qt_ms, "rr_ms": rep.rr_ms, "qtc_ms": rep.qtc_ms,
            "pr_ms": rep.pr_ms, "tpte_ms": rep.tpte_ms, "sex": rep.sex,
            "qtc_normal": qtc_n, "pr_normal": pr_n, "tpte_normal": tpte_n}


def run_simulation(bundle: Bundle, req: dict) -> dict:
    """POST /api/simulate semantics: one action, K denoised futures, risk
    distribution, mean-variance score, interval reports, EPK trace."""
    fields: dict[str, str] = {}
    k = _require_int(req, "k", fields, minimum=1)
    seed = _require_int(req, "seed", fields, minimum=0)
    lam = _require_lambda(req, fields)
    action = _parse_action(bundle, req, fields)
    z0, params = _baseline_state(bundle, req.get("baseline", {"preset": "healthy"}),
                                 fields)
    if fields:
        raise ValidationError(fields)
    ok, reason = mask_check(action, bundle.registry.mask)
    if not ok:
        raise InfeasibleActionError(reason, detail=action.key)

    profile = PatientProfile()
    base_params = params or healthy_params()
    e_epk = build_epk(z0, action, bundle.codec, base_params,
                      epk_window(bundle.model.config), bundle.registry,
                      lead_scale=float(bundle.lead_mix()[0]))
    anchor = EpkAnchor(e_epk=e_epk, z_epk=project_epk(e_epk, bundle.model.projection))
    seeds = [sample_seed(seed, 0, i) for i in range(k)]
    batch = predict_next(z0, action, k, bundle.model, bundle.registry,
                         profile=profile, seeds=seeds)
    samples, intervals, risks = [], [], []
    for state in batch.states:
        w = decode(bundle.codec, state)
        risks.append(beat_window_risk(w, profile))
        samples.append([downsample_trace(w.samples[ch])
                        for ch in range(w.n_channels)])
        intervals.append(_interval_row(w, profile))
    dist = RiskDistribution.create(risks, action)
    response = {
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "seeds": seeds,
        "action": {"id": action.key, "dose": action.dose},
        "k": k,
        "lambda": lam,
        "baseline": {"intervals": _interval_row(decode(bundle.codec, z0), profile)},
        "epk_trace": downsample_trace(anchor.e_epk),
        "epk_latent": [float(v) for v in anchor.z_epk],
        "waveforms": samples,
        "sample_rate": bundle.codec.sample_rate,
        "intervals": intervals,
        "risk": {"samples": risks, "mu": dist.mu, "sigma2": dist.sigma2},
        "failures": batch.failures,
    }
    if dist.sigma2 is not None:
        response["score"] = {"S": score(dist.mu, dist.sigma2, lam).value,
                             "lambda": lam}
    return response


def run_ranking(bundle: Bundle, req: dict) -> dict:
    """POST /api/rank semantics: simulate every requested action K times and
    rank by the mean-variance score."""
    fields: dict[str, str] = {}
    k = _require_int(req, "k", fields, minimum=2)
    seed = _require_int(req, "seed", fields, minimum=0)
    lam = _require_lambda(req, fields)
    z0, params = _baseline_state(bundle, req.get("baseline", {"preset": "healthy"}),
                                 fields)
    dose_grid = req.get("doses", [0.5, 1.0, 2.0])
    if not (isinstance(dose_grid, list) and dose_grid
            and all(isinstance(d, (int, float)) for d in dose_grid)
            and sorted(dose_grid) == list(dose_grid)):
        fields["doses"] = "required ascending list of numbers"
    if fields:
        raise ValidationError(fields)

    action_ids = req.get("action_ids")
    actions = enumerate_actions(bundle.registry, bundle.registry.mask,
                                [float(d) for d in dose_grid])
    if action_ids is not None:
        wanted = set(action_ids)
        actions = [a for a in actions if a.key in wanted]
        missing = wanted - {a.key for a in actions}
        if missing:
            raise ValidationError(
                {"action_ids": f"not in the feasible action space: {sorted(missing)}"})
    if not actions:
        raise ValidationError({"action_ids": "no feasible actions selected"})

    profile = PatientProfile()
    dists, seed_map = [], {}
    for ai, action in enumerate(actions):
        seeds = [sample_seed(seed, ai, i) for i in range(k)]
        seed_map[f"{action.key}@{action.dose}"] = seeds
        batch = predict_next(z0, action, k, bundle.model, bundle.registry,
                             profile=profile, seeds=seeds)
        risks = [beat_window_risk(decode(bundle.codec, s), profile)
                 for s in batch.states]
        dists.append(RiskDistribution.create(risks, action))
    ranked = rank_actions(dists, lam)
    samples_by_action = {d.action: list(d.samples) for d in dists}
    return {
        "schema_version": SCHEMA_VERSION,
        "lambda": lam,
        "K": k,
        "seed": seed,
        "seeds": seed_map,
        "actions": [{"id": r.action.key, "dose": r.action.dose, "mu": r.mu,
                     "sigma2": r.sigma2, "S": r.s, "rank": r.rank,
                     "samples": samples_by_action[r.action]}
                    for r in ranked],
    }


def feasible_action_list(bundle: Bundle, dose_grid=(0.5, 1.0, 2.0)) -> dict:
    actions = enumerate_actions(bundle.registry, bundle.registry.mask,
                                list(dose_grid))
    return {
        "schema_version": SCHEMA_VERSION,
        "actions": [{"id": a.key, "dose": a.dose, "protocol": a.protocol}
                    for a in actions],
    }
