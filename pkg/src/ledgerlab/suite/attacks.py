"""Attacks that become possible when a trust criterion is not met."""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import List, Mapping, Optional, Union

from ..consensus import NetworkConfig, PermissionedQuorum, Submission, decided_prefix, run_consensus
from ..criteria import PartyCreated, Predefined
from ..errors import InapplicableAttack
from ..eventlog import EventLog, derive_seed
from ..ledger import ObjectId, PartyId, Payload, PayloadKind, make_record
from ..validation import Internal, LedgerState, PredicateDecl, Scope, evaluate_record_predicate
from .loader import Scenario
from .runner import default_config, genesis_records, run_scenario

SEQUENTIAL = 0  # id scheme: next counter value; any other value is a random bit width
ID_WIDTHS = (8, 16, 32, 64, 128)
RACE_MAINTAINERS = 4
SYBIL_BASE = 900_000


@dataclass(frozen=True)
class AttackOutcome:
    attack: str
    trials: int
    successes: int
    success_rate: float
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.successes <= self.trials:
            raise ValueError("successes must lie in [0, trials]")

    @classmethod
    def of(cls, attack, trials, successes, seed=0):
        return cls(attack, trials, successes, successes / trials if trials else 0.0, seed)

    def document(self) -> dict:
        return {"attack": self.attack, "trials": self.trials, "successes": self.successes,
                "success_rate": self.success_rate, "seed": self.seed}


def parse_id_scheme(text: Union[str, int]) -> int:
    """``sequential`` or ``random<bits>`` (e.g. ``random128``)."""
    if isinstance(text, int):
        return text
    t = text.strip().lower()
    if t == "sequential":
        return SEQUENTIAL
    if t.startswith("random"):
        bits = int(t[len("random"):] or 128)
        if not 1 <= bits <= 128:
            raise ValueError(f"random id width must be 1..128, got {bits}")
        return bits
    raise ValueError(f"unknown id scheme {text!r}")


# -- premature creation ------------------------------------------------------

def _namespace(scenario: Scenario) -> str:
    for d in scenario.spec.genesis:
        return d.object_id.namespace
    return "obj"


def _next_sequential(scenario: Scenario, namespace: str) -> int:
    used = [d.object_id.value for d in scenario.spec.genesis
            if d.object_id.namespace == namespace and not d.object_id.bits]
    return max(used) + 1 if used else 0


def _race_parties(scenario: Scenario):
    creators = sorted(scenario.spec.creation_mode.creators or (), key=lambda p: p.id)
    everyone = [p.party_id for p in scenario.spec.parties]
    creator = creators[0] if creators else everyone[0]
    outsiders = [p for p in everyone if p not in set(creators) and p != creator]
    return creator, (outsiders or [p for p in everyone if p != creator] or [creator])[0]


def _race_validator(scenario: Scenario):
    """Internal record predicates the use case validates, plus the creator
    list. External ones would need oracles and do not bear on the race."""
    spec = scenario.spec
    bound = {p.name: p for p in spec.bound_predicates()}
    checks = [bound[n] for n in spec.validate if bound[n].internal and bound[n].scope is Scope.RECORD]
    creators = spec.creation_mode.creators

    def validator(seq, r):
        if r.kind is PayloadKind.CREATE and creators is not None and r.proposer not in creators:
            return False
        state = LedgerState.of(seq)
        return all(evaluate_record_predicate(d, state, r) for d in checks)
    return validator


def _race(scenario, oid, creator, adversary, advantage, seed, engine, validator) -> bool:
    genesis = genesis_records(scenario)
    claim = make_record(0, [adversary], [oid], Payload.of(PayloadKind.CLAIM, {
        "object_id": str(oid), "claimant": adversary.id, "claim-type": "ownership"}), adversary, 1)
    create = make_record(0, [creator], [oid], Payload.of(PayloadKind.CREATE, {
        "object_id": str(oid), "owner": creator.id}), creator, 2)
    subs = [Submission(claim, max(0, -advantage)), Submission(create, max(0, advantage))]
    if advantage == 0:
        random.Random(seed).shuffle(subs)  # simultaneous: arrival order decides
    cfg = NetworkConfig(num_maintainers=RACE_MAINTAINERS, seed=seed)
    rounds = abs(advantage) + 2 * RACE_MAINTAINERS
    run = run_consensus(cfg, engine, subs, rounds, validator=validator, initial=genesis, log=EventLog())
    decided = decided_prefix([v for v in run.views if v.honest][0])
    order = {r.key: r.index for r in decided[len(genesis):]}
    if claim.key not in order:
        return False
    return create.key not in order or order[claim.key] < order[create.key]


def premature_creation_attack(scenario: Scenario, id_scheme: Union[int, str] = SEQUENTIAL,
                              adversary_latency_advantage: int = 1, trials: int = 1000,
                              seed: int = 0, engine=None) -> AttackOutcome:
    """The adversary predicts the id of an object a creator is about to
    make and gets an ownership claim for it decided first.

    A trial races the two records through consensus only when the guess is
    right. Random ids are drawn as 128 bits and truncated to the width, so
    a guess matching at some width also matches at every narrower one.
    """
    mode = scenario.spec.creation_mode
    if not isinstance(mode, PartyCreated):
        raise InapplicableAttack(
            f"{scenario.name}: objects are created {mode.name}; nobody can create one ahead of time")
    bits = parse_id_scheme(id_scheme)
    engine = engine or PermissionedQuorum()
    namespace = _namespace(scenario)
    creator, adversary = _race_parties(scenario)
    validator = _race_validator(scenario)
    successes = 0
    for t in range(trials):
        trial_seed = derive_seed(seed, "premature-creation", t)
        if bits == SEQUENTIAL:
            actual = guess = _next_sequential(scenario, namespace)
            oid = ObjectId(namespace, actual)
        else:
            rng = random.Random(trial_seed)
            actual = rng.getrandbits(128) >> (128 - bits)
            guess = rng.getrandbits(128) >> (128 - bits)
            oid = ObjectId(namespace, actual, bits)
        if guess != actual:
            continue
        if _race(scenario, oid, creator, adversary, adversary_latency_advantage, trial_seed, engine, validator):
            successes += 1
    return AttackOutcome.of("premature-creation", trials, successes, seed)


# -- sybil voting ------------------------------------------------------------

def sybil_vote_attack(scenario: Scenario, honest_voters: int = 10, bogus_parties: int = 11,
                      trials: int = 100, seed: int = 0, engine=None) -> AttackOutcome:
    """One user mints ``bogus_parties`` identities that vote yes on a
    fraudulent object creation; ``honest_voters`` vote no. The creation
    goes through when it passes the vote-majority rule."""
    if isinstance(engine, PermissionedQuorum):
        raise InapplicableAttack("membership of a permissioned quorum is fixed; identities cannot be minted")
    if isinstance(scenario.spec.creation_mode, Predefined):
        raise InapplicableAttack(f"{scenario.name}: all objects are predefined; there is no creation vote")
    majority = PredicateDecl.make("creation-vote-majority", Scope.RECORD, Internal(), "vote-majority")
    proposer = scenario.spec.parties[0].party_id
    honest = [PartyId(SYBIL_BASE + i, f"voter{i}") for i in range(honest_voters)]
    successes = 0
    for t in range(trials):
        subject = ObjectId("fraud", t)
        bogus = [PartyId(SYBIL_BASE + honest_voters + t * bogus_parties + i, f"bogus{i}")
                 for i in range(bogus_parties)]
        ballots = [(p, "no") for p in honest] + [(p, "yes") for p in bogus]
        random.Random(derive_seed(seed, "sybil-vote", t)).shuffle(ballots)
        records = [make_record(i, [p], [], Payload.of(PayloadKind.ASSERT, {
            "property-name": "vote", "asserted-value": v, "subject": str(subject)}), p, i)
            for i, (p, v) in enumerate(ballots)]
        state = LedgerState.of(records)
        create = make_record(len(records), [proposer], [subject], Payload.of(PayloadKind.CREATE, {
            "object_id": str(subject), "owner": proposer.id}), proposer, len(records))
        if evaluate_record_predicate(majority, state, create):
            successes += 1
    return AttackOutcome.of("sybil-vote", trials, successes, seed)


# -- lying oracle ------------------------------------------------------------

def _override_tuples(oracle_override) -> List[tuple]:
    """Accept ``{(oracle, object, property): value}``, ``{(object, property):
    value}`` or a list of 4-tuples. Objects may be ids or their text form."""
    if oracle_override is None:
        return []
    items = oracle_override.items() if isinstance(oracle_override, Mapping) else \
        [((t[0], t[1], t[2]), t[3]) for t in oracle_override]
    out = []
    for key, value in items:
        oracle, oid, prop = key if len(key) == 3 else (None,) + tuple(key)
        if not isinstance(oid, ObjectId):
            oid = ObjectId.parse(str(oid))
        out.append((oracle, oid, prop, value))
    return out


def lying_oracle_attack(scenario: Scenario, oracle_override=None, rounds: Optional[int] = None,
                        seed: Optional[int] = None, engine=None) -> List[str]:
    """Goal predicates whose ledger outcome differs from the world's once
    the oracles report the overridden facts. The scenario's own overrides
    are dropped; its adversary records stay."""
    if all(p.internal for p in scenario.spec.bound_predicates()):
        raise InapplicableAttack(f"{scenario.name}: every predicate is internal; no oracle to corrupt")
    stripped = replace(scenario, adversaries=tuple(replace(a, oracle_overrides=()) for a in scenario.adversaries))
    cfg = default_config(stripped, seed)
    run = run_scenario(stripped, cfg, engine, rounds, oracle_overrides=_override_tuples(oracle_override))
    return run.divergent_goals()


ATTACKS = ("premature-creation", "sybil-vote", "lying-oracle")
