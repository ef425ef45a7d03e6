"""Static criterion checks over a use-case description and a dynamic trust
audit over the event log of a run."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

from .consensus import PermissionedQuorum
from .errors import LogMismatch, SpecError
from .eventlog import EventLog, split_log
from .ledger import PartyId
from .validation import Oracle, PredicateDecl, bind_to_ledger


# -- creation modes ----------------------------------------------------------

@dataclass(frozen=True)
class Predefined:
    name = "predefined"


@dataclass(frozen=True)
class ConsensusBased:
    predicate: str
    name = "consensus-based"


@dataclass(frozen=True)
class PartyCreated:
    creators: Optional[frozenset] = None  # PartyIds; None means anyone
    # Creation is a vote run by the consensus protocol itself. Counts as
    # consensus-based on a permissioned quorum engine.
    quorum_vote: bool = False
    name = "party-created"

    @property
    def anyone(self) -> bool:
        return self.creators is None


CreationMode = Union[Predefined, ConsensusBased, PartyCreated]


@dataclass(frozen=True)
class UseCaseSpec:
    name: str
    parties: tuple = ()  # Party
    creation_mode: CreationMode = Predefined()
    predicates: tuple = ()  # PredicateDecl
    goal_predicates: tuple = ()  # predicate names
    validate: tuple = ()  # predicate names the validation service enforces
    ledger_binding_properties: frozenset = frozenset()
    genesis: tuple = ()  # ObjectDescriptor
    oracles: tuple = ()  # Oracle

    def __post_init__(self):
        names = [p.name for p in self.predicates]
        if len(set(names)) != len(names):
            raise SpecError(f"{self.name}: duplicate predicate names")
        known = set(names)
        for label, group in (("goal", self.goal_predicates), ("validated", self.validate)):
            missing = [g for g in group if g not in known]
            if missing:
                raise SpecError(f"{self.name}: {label} predicates not declared: {', '.join(missing)}")
        oracles = {o.name for o in self.oracles}
        for p in self.predicates:
            if not p.internal and p.dependency.oracle not in oracles:
                raise SpecError(f"{self.name}: predicate {p.name!r} reads undeclared oracle "
                                f"{p.dependency.oracle!r}")

    def predicate(self, name: str) -> PredicateDecl:
        for p in self.predicates:
            if p.name == name:
                return p
        raise SpecError(f"{self.name}: no predicate {name!r}")

    def oracle(self, name: str) -> Oracle:
        for o in self.oracles:
            if o.name == name:
                return o
        raise SpecError(f"{self.name}: no oracle {name!r}")

    def bound_predicates(self) -> List[PredicateDecl]:
        return bind_to_ledger(self.predicates, self.ledger_binding_properties)

    def label(self, pid) -> str:
        pid = pid.id if isinstance(pid, PartyId) else int(pid)
        for p in self.parties:
            if p.party_id.id == pid:
                return p.party_id.label or str(p.party_id)
        return f"p{pid}"


# -- verdicts ----------------------------------------------------------------

class Criterion(enum.Enum):
    OBJECT_CREATION = "object_creation"
    INTERNAL_PREDICATE = "internal_predicate"


@dataclass(frozen=True)
class CriterionVerdict:
    criterion: Criterion
    met: bool
    reasons: tuple = ()  # (element, code) pairs

    def __post_init__(self):
        if not self.met and not self.reasons:
            raise ValueError("an unmet criterion needs at least one reason")


REASON_TEXT = {
    "privileged-creator": "may create objects outside consensus",
    "open-creation": "any party may create objects outside consensus",
    "external-oracle": "is evaluated with data supplied by an oracle",
}


def check_object_creation_criterion(spec: UseCaseSpec, engine=None) -> CriterionVerdict:
    mode = spec.creation_mode
    crit = Criterion.OBJECT_CREATION
    if isinstance(mode, Predefined):
        return CriterionVerdict(crit, True)
    if isinstance(mode, ConsensusBased):
        if mode.predicate not in {p.name for p in spec.predicates}:
            raise SpecError(f"{spec.name}: creation predicate {mode.predicate!r} is not declared")
        return CriterionVerdict(crit, True)
    if mode.quorum_vote and isinstance(engine, PermissionedQuorum):
        return CriterionVerdict(crit, True)
    if mode.anyone:
        return CriterionVerdict(crit, False, (("anyone", "open-creation"),))
    reasons = tuple((spec.label(p), "privileged-creator") for p in sorted(mode.creators))
    return CriterionVerdict(crit, False, reasons or (("nobody", "privileged-creator"),))


def check_internal_predicate_criterion(spec: UseCaseSpec) -> CriterionVerdict:
    bound = spec.bound_predicates()
    reasons = tuple((p.name, f"external-oracle:{p.dependency.oracle}") for p in bound if not p.internal)
    return CriterionVerdict(Criterion.INTERNAL_PREDICATE, not reasons, reasons)


def explain_verdict(verdict: CriterionVerdict) -> str:
    title = verdict.criterion.value.replace("_", " ")
    if verdict.met:
        return f"{title} criterion: met\n"
    lines = [f"{title} criterion: not met"]
    for element, code in verdict.reasons:
        base, _, detail = code.partition(":")
        text = REASON_TEXT.get(base, base)
        if detail:
            text += f" ({detail})"
        lines.append(f"  - {element}: {text}")
    return "\n".join(lines) + "\n"


# -- trust audit -------------------------------------------------------------

class TrustReason(enum.Enum):
    OBJECT_CREATION_AUTHORITY = "ObjectCreationAuthority"
    EXTERNAL_ORACLE = "ExternalOracle"
    PRIVILEGED_VALIDATOR = "PrivilegedValidator"


@dataclass(frozen=True)
class TrustedEntity:
    entity: str
    reason: TrustReason


@dataclass(frozen=True)
class TrustAuditReport:
    scenario: str
    trusted_entities: tuple  # sorted TrustedEntity
    object_creation: CriterionVerdict
    internal_predicate: CriterionVerdict
    queried_predicates: frozenset = frozenset()

    @property
    def verdicts(self) -> Tuple[CriterionVerdict, CriterionVerdict]:
        return (self.object_creation, self.internal_predicate)

    @property
    def both_met(self) -> bool:
        return self.object_creation.met and self.internal_predicate.met

    def document(self) -> dict:
        def verdict(v):
            return {"met": v.met, "reasons": [{"element": e, "code": c} for e, c in v.reasons]}
        return {
            "scenario": self.scenario,
            "object_creation": verdict(self.object_creation),
            "internal_predicate": verdict(self.internal_predicate),
            "trusted_entities": [{"entity": t.entity, "reason": t.reason.value} for t in self.trusted_entities],
        }


def audit_trust(log: Union[EventLog, str], spec: UseCaseSpec, engine=None) -> TrustAuditReport:
    """Collect every entity whose honesty the logged run relied on."""
    text = log.text() if isinstance(log, EventLog) else log
    headers, events = split_log(text)
    names = [h["scenario"] for h in headers if "scenario" in h]
    if not names:
        raise LogMismatch("log carries no scenario header")
    if names[0] != spec.name:
        raise LogMismatch(f"log is for scenario {names[0]!r}, not {spec.name!r}")
    found = {}
    queried = set()

    def add(entity, reason):
        found[(entity, reason.value)] = TrustedEntity(entity, reason)

    for ev in events:
        if ev.event == "mint":
            f = ev.fields()
            if f.get("via") == "party":
                add(spec.label(int(f["creator"])), TrustReason.OBJECT_CREATION_AUTHORITY)
        elif ev.event == "oracle-query":
            f = ev.fields()
            add(f"oracle:{f['oracle']}", TrustReason.EXTERNAL_ORACLE)
            if f.get("predicate"):
                queried.add(f["predicate"])
            if f.get("operator", "-") != "-":
                add(spec.label(int(f["operator"])), TrustReason.PRIVILEGED_VALIDATOR)
    entities = tuple(found[k] for k in sorted(found))
    return TrustAuditReport(spec.name, entities,
                            check_object_creation_criterion(spec, engine),
                            check_internal_predicate_criterion(spec),
                            frozenset(queried))


def static_trusted_entities(spec: UseCaseSpec, engine=None) -> Tuple[TrustedEntity, ...]:
    """Entities a run of ``spec`` may have to trust, read off the
    description alone: creators outside consensus, oracles behind external
    predicates and the parties operating them."""
    found = set()
    mode = spec.creation_mode
    if isinstance(mode, PartyCreated) and not (mode.quorum_vote and isinstance(engine, PermissionedQuorum)):
        names = ["anyone"] if mode.anyone else [spec.label(p) for p in mode.creators]
        found.update(TrustedEntity(n, TrustReason.OBJECT_CREATION_AUTHORITY) for n in names)
    oracles = {o.name: o for o in spec.oracles}
    for p in spec.bound_predicates():
        if p.internal:
            continue
        found.add(TrustedEntity(f"oracle:{p.dependency.oracle}", TrustReason.EXTERNAL_ORACLE))
        operator = oracles[p.dependency.oracle].operator
        if operator is not None:
            found.add(TrustedEntity(spec.label(operator), TrustReason.PRIVILEGED_VALIDATOR))
    return tuple(sorted(found, key=lambda t: (t.entity, t.reason.value)))
