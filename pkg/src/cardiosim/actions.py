"""Pharmacological actions, rule-based template modulation, feasibility mask.

A drug is a list of modulation rules; each rule rescales or shifts one
template parameter linearly in dose and clamps the result to a saturation
band chosen so the modulated template stays valid (widths positive, centers
inside [0, 2*pi)). The shipped default registry covers eight regimens with
coefficients sized to move the affected interval by roughly 10-20% at dose
1 on the healthy preset; they are artifact constants validated only by
directional checks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .ecg_ode import TWO_PI, OdeParams, WaveComponent, WAVE_LABELS

PROTOCOL_SINGLE = "single-bolus"
PROTOCOL_COMBINATION = "combination"

REASON_DOSE = "dose-exceeded"
REASON_PAIR = "forbidden-pair"
REASON_PROTOCOL = "protocol-disallowed"


class InfeasibleActionError(ValueError):
    """Action rejected by the feasibility mask; carries the reason code."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}{': ' + detail if detail else ''}")
        self.reason = reason


class ModulationError(ValueError):
    """Modulation would leave the template invalid even after clamping."""


@dataclass(frozen=True)
class Action:
    """A candidate intervention: drug, dose, protocol, optional second agent."""

    drug_id: str
    dose: float
    protocol: str = PROTOCOL_SINGLE
    second: tuple[str, float] | None = None

    def __post_init__(self) -> None:
        if self.dose < 0:
            raise ValueError("dose must be non-negative")
        if self.protocol == PROTOCOL_COMBINATION:
            if self.second is None or self.second[0] == self.drug_id:
                raise ValueError("combination actions need two distinct drug ids")
        elif self.second is not None:
            raise ValueError("second agent only allowed for combination protocol")

    @property
    def drug_ids(self) -> tuple[str, ...]:
        if self.second is None:
            return (self.drug_id,)
        return (self.drug_id, self.second[0])

    @property
    def key(self) -> str:
        """Canonical id string used in reports and tie-breaking."""
        if self.second is None:
            return self.drug_id
        return "+".join(sorted(self.drug_ids))

    def to_dict(self) -> dict:
        d = {"drug_id": self.drug_id, "dose": self.dose, "protocol": self.protocol}
        if self.second is not None:
            d["second"] = [self.second[0], self.second[1]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Action":
        second = tuple(d["second"]) if d.get("second") else None
        return cls(drug_id=d["drug_id"], dose=float(d["dose"]),
                   protocol=d.get("protocol", PROTOCOL_SINGLE), second=second)


_TARGET_FIELDS = ("alpha", "b", "theta")


@dataclass(frozen=True)
class ModulationRule:
    """Linear-in-dose effect on one template parameter with saturation.

    new = clamp(old * (1 + scale_per_dose * dose) + offset_per_dose * dose,
                lo, hi)
    Target selectors are "<wave>.<field>" (e.g. "T.b") or "y0".
    """

    target: str
    scale_per_dose: float = 0.0
    offset_per_dose: float = 0.0
    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self) -> None:
        if self.target != "y0":
            wave, _, fld = self.target.partition(".")
            if wave not in WAVE_LABELS or fld not in _TARGET_FIELDS:
                raise ValueError(f"bad rule target {self.target!r}")
            if fld == "b" and not (self.lo > 0.0):
                raise ValueError("width rules must saturate above 0")
            if fld == "theta" and not (0.0 <= self.lo and self.hi < TWO_PI):
                raise ValueError("theta rules must saturate inside [0, 2*pi)")
        if self.lo > self.hi:
            raise ValueError("saturation lo must not exceed hi")

    def apply(self, params: OdeParams, dose: float) -> OdeParams:
        if self.target == "y0":
            val = params.y0 * (1.0 + self.scale_per_dose * dose) + self.offset_per_dose * dose
            return params.with_y0(min(max(val, self.lo), self.hi))
        wave, _, fld = self.target.partition(".")
        comp = params.component(wave)
        val = getattr(comp, fld) * (1.0 + self.scale_per_dose * dose) + self.offset_per_dose * dose
        val = min(max(val, self.lo), self.hi)
        return params.replace_component(WaveComponent(**{**comp.__dict__, fld: val}))

    def to_dict(self) -> dict:
        return {"target": self.target, "scale_per_dose": self.scale_per_dose,
                "offset_per_dose": self.offset_per_dose, "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_dict(cls, d: dict) -> "ModulationRule":
        return cls(target=d["target"], scale_per_dose=d.get("scale_per_dose", 0.0),
                   offset_per_dose=d.get("offset_per_dose", 0.0),
                   lo=d.get("lo", -math.inf), hi=d.get("hi", math.inf))


@dataclass(frozen=True)
class ActionMask:
    """Deterministic feasibility filter: per-drug dose caps, forbidden
    pairs, allowed protocols."""

    max_dose: dict[str, float]
    forbidden_pairs: frozenset[frozenset[str]]
    allowed_protocols: frozenset[str]


@dataclass(frozen=True)
class Drug:
    id: str
    rules: tuple[ModulationRule, ...]
    max_dose: float


@dataclass(frozen=True)
class Registry:
    """Immutable drug registry plus its feasibility mask."""

    drugs: tuple[Drug, ...]
    forbidden_pairs: frozenset[frozenset[str]] = frozenset()
    protocols: tuple[str, ...] = (PROTOCOL_SINGLE, PROTOCOL_COMBINATION)
    _index: dict[str, Drug] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        index = {d.id: d for d in self.drugs}
        if len(index) != len(self.drugs):
            raise ValueError("duplicate drug ids in registry")
        object.__setattr__(self, "_index", index)

    def drug(self, drug_id: str) -> Drug:
        try:
            return self._index[drug_id]
        except KeyError:
            raise KeyError(f"unknown drug id {drug_id!r}") from None

    def drug_ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.drugs)

    @property
    def mask(self) -> ActionMask:
        return ActionMask(max_dose={d.id: d.max_dose for d in self.drugs},
                          forbidden_pairs=self.forbidden_pairs,
                          allowed_protocols=frozenset(self.protocols))

    def qt_direction(self, action: Action) -> int:
        """Sign of the net rule effect on the T wave (+1 prolonging,
        -1 shortening, 0 neutral) - the reference for directional checks."""
        total = 0.0
        for drug_id in action.drug_ids:
            for rule in self.drug(drug_id).rules:
                if rule.target == "T.b":
                    total += rule.scale_per_dose
                elif rule.target == "T.theta":
                    total += rule.offset_per_dose
        return (total > 0) - (total < 0)

    def to_json(self) -> str:
        return json.dumps({
            "drugs": [{"id": d.id, "rules": [r.to_dict() for r in d.rules],
                       "max_dose": d.max_dose} for d in self.drugs],
            "forbidden_pairs": sorted(sorted(p) for p in self.forbidden_pairs),
            "protocols": list(self.protocols),
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Registry":
        obj = json.loads(text)
        drugs = tuple(Drug(id=d["id"],
                           rules=tuple(ModulationRule.from_dict(r) for r in d.get("rules", [])),
                           max_dose=float(d.get("max_dose", math.inf)))
                      for d in obj["drugs"])
        pairs = frozenset(frozenset(p) for p in obj.get("forbidden_pairs", []))
        return cls(drugs=drugs, forbidden_pairs=pairs,
                   protocols=tuple(obj.get("protocols", [PROTOCOL_SINGLE, PROTOCOL_COMBINATION])))

    @classmethod
    def load(cls, path: str) -> "Registry":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())


def mask_check(action: Action, mask: ActionMask) -> tuple[bool, str | None]:
    """Feasibility verdict with a reason code on rejection."""
    if action.protocol not in mask.allowed_protocols:
        return False, REASON_PROTOCOL
    if action.second is not None:
        if frozenset(action.drug_ids) in mask.forbidden_pairs:
            return False, REASON_PAIR
    for drug_id, dose in _agents(action):
        cap = mask.max_dose.get(drug_id)
        if cap is None:
            raise ValueError(f"unknown drug id {drug_id!r}")
        if dose > cap:
            return False, REASON_DOSE
    return True, None


def _agents(action: Action) -> list[tuple[str, float]]:
    agents = [(action.drug_id, action.dose)]
    if action.second is not None:
        agents.append(action.second)
    return agents


def modulate(params: OdeParams, action: Action, registry: Registry) -> OdeParams:
    """Apply the action's modulation rules, dose-scaled and clamped.

    Combination rules apply sequentially in registry order. Raises
    InfeasibleActionError when the mask rejects the action and
    ModulationError when clamping cannot keep the template valid.
    """
    ok, reason = mask_check(action, registry.mask)
    if not ok:
        raise InfeasibleActionError(reason, detail=action.key)
    doses = dict(_agents(action))
    out = params
    for drug in registry.drugs:  # registry order fixes combination semantics
        if drug.id not in doses:
            continue
        for rule in drug.rules:
            try:
                out = rule.apply(out, doses[drug.id])
            except ValueError as exc:
                raise ModulationError(f"{action.key}: {exc}") from exc
    return out


def enumerate_actions(registry: Registry, mask: ActionMask,
                      dose_grid: list[float]) -> list[Action]:
    """All feasible single-agent actions, then all feasible unordered pairs.

    Ordering is deterministic: drug id lexicographic, then dose ascending.
    Drugs with no rules (placebo) are dose-invariant: emitted once as a
    single agent at the lowest grid dose and never paired (a placebo
    combination collapses to the other agent alone).
    """
    if not dose_grid:
        raise ValueError("dose_grid must be non-empty")
    if sorted(dose_grid) != list(dose_grid):
        raise ValueError("dose_grid must be sorted ascending")

    out: list[Action] = []
    for drug_id in sorted(registry.drug_ids()):
        doses = dose_grid if registry.drug(drug_id).rules else dose_grid[:1]
        for dose in doses:
            action = Action(drug_id=drug_id, dose=dose)
            if mask_check(action, mask)[0]:
                out.append(action)
    ids = sorted(d for d in registry.drug_ids() if registry.drug(d).rules)
    for i, first in enumerate(ids):
        for second in ids[i + 1:]:
            if frozenset((first, second)) in mask.forbidden_pairs:
                continue
            for dose in dose_grid:
                action = Action(drug_id=first, dose=dose,
                                protocol=PROTOCOL_COMBINATION, second=(second, dose))
                if mask_check(action, mask)[0]:
                    out.append(action)
    return out


def default_registry() -> Registry:
    """Eight-regimen default registry (artifact constants, directional only).

    QT-prolonging agents widen and delay the T wave; sodium-channel agents
    shrink it; AV-nodal agents pull the P center earlier, widening the P-R
    phase gap.
    """
    t_theta = math.pi / 2.0
    p_theta = 5.0 * math.pi / 3.0

    def qt_prolong(scale_b: float, shift_t: float) -> tuple[ModulationRule, ...]:
        return (
            ModulationRule(target="T.b", scale_per_dose=scale_b, lo=0.1, hi=0.9),
            ModulationRule(target="T.theta", offset_per_dose=shift_t,
                           lo=1.0, hi=t_theta + 1.0),
        )

    def qt_shorten(scale_b: float, shift_t: float) -> tuple[ModulationRule, ...]:
        return (
            ModulationRule(target="T.b", scale_per_dose=scale_b, lo=0.15, hi=0.9),
            ModulationRule(target="T.theta", offset_per_dose=shift_t,
                           lo=1.0, hi=t_theta + 1.0),
        )

    def pr_prolong(shift_p: float) -> tuple[ModulationRule, ...]:
        return (ModulationRule(target="P.theta", offset_per_dose=shift_p,
                               lo=p_theta - 0.7, hi=p_theta + 0.2),)

    drugs = (
        Drug(id="diltiazem", rules=pr_prolong(-0.12), max_dose=2.0),
        Drug(id="dofetilide", rules=qt_prolong(0.30, 0.15), max_dose=2.0),
        Drug(id="lidocaine", rules=qt_shorten(-0.18, -0.09), max_dose=2.0),
        Drug(id="mexiletine", rules=qt_shorten(-0.15, -0.075), max_dose=2.0),
        Drug(id="moxifloxacin", rules=qt_prolong(0.22, 0.10), max_dose=2.0),
        Drug(id="placebo", rules=(), max_dose=2.0),
        Drug(id="quinidine", rules=qt_prolong(0.26, 0.12), max_dose=2.0),
        Drug(id="ranolazine", rules=qt_prolong(0.18, 0.08), max_dose=2.0),
        Drug(id="verapamil", rules=pr_prolong(-0.15), max_dose=2.0),
    )
    forbidden = frozenset({
        frozenset({"dofetilide", "quinidine"}),   # stacked strong QT prolongers
        frozenset({"verapamil", "diltiazem"}),    # stacked AV-nodal blockers
        frozenset({"lidocaine", "mexiletine"}),   # same-class sodium blockers
    })
    return Registry(drugs=drugs, forbidden_pairs=forbidden)
