"""Run a scenario end to end: workload, validation, consensus, contracts,
goal scoring against the ledger and against the world, and the trust audit."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from ..consensus import (
    ConsensusMonitorReport, NetworkConfig, PermissionedQuorum, PermissionlessChain, Submission,
    decided_prefix, run_consensus,
)
from ..criteria import ConsensusBased, PartyCreated, Predefined, TrustAuditReport, audit_trust
from ..eventlog import EventLog
from ..ledger import SYSTEM, ObjectId, Payload, PayloadKind, Record, RecordSequence, make_record
from ..validation import (
    Lies, LedgerState, Oracle, OracleFeed, WorldFacts, WorldModel, Scope, created_object, evaluate,
    evaluate_record_predicate, fire_contract_hooks,
)
from .loader import Scenario
from .workloads import build_record, make_generator, _party_index

DEFAULT_ROUNDS = 300
DEFAULT_MAINTAINERS = 7


@dataclass(frozen=True)
class GoalOutcome:
    ledger: bool
    world: bool

    @property
    def diverges(self) -> bool:
        return self.ledger != self.world


@dataclass
class ScenarioRun:
    log: EventLog
    audit: TrustAuditReport
    goals: Dict[str, GoalOutcome]
    outcomes: Dict[str, GoalOutcome]
    consensus: ConsensusMonitorReport
    decided: RecordSequence
    genesis_length: int
    views: list = field(default_factory=list)

    @property
    def decided_after_genesis(self) -> RecordSequence:
        return self.decided[self.genesis_length:]

    def divergent_goals(self) -> List[str]:
        return [name for name, o in self.goals.items() if o.diverges]


def genesis_records(scenario: Scenario) -> RecordSequence:
    out = []
    for i, d in enumerate(scenario.spec.genesis):
        attrs = dict(d.attributes)
        attrs["object_id"] = str(d.object_id)
        out.append(make_record(i, [SYSTEM], [d.object_id], Payload.of(PayloadKind.CREATE, attrs), SYSTEM, i))
    return RecordSequence(tuple(out))


def default_config(scenario: Scenario, seed: Optional[int] = None) -> NetworkConfig:
    net = scenario.network
    kw = dict(num_maintainers=int(net.get("maintainers", DEFAULT_MAINTAINERS)))
    if seed is not None:
        kw["seed"] = seed
    return NetworkConfig(**kw)


def default_rounds(scenario: Scenario) -> int:
    return int(scenario.network.get("rounds", DEFAULT_ROUNDS))


def _oracles_with_overrides(scenario: Scenario, extra: Iterable[tuple]) -> List[Oracle]:
    """Apply (oracle-or-None, object, property, value) overrides. ``None``
    targets every oracle that reads the property."""
    wanted = {}
    for entry in list(_adversary_overrides(scenario)) + list(extra):
        wanted.setdefault(entry[0], {})[(entry[1], entry[2])] = entry[3]
    out = []
    for o in scenario.spec.oracles:
        lies = {}
        for target in (None, o.name):
            for (oid, prop), v in wanted.get(target, {}).items():
                if prop in o.reads:
                    lies[(oid, prop)] = v
        if lies:
            if isinstance(o.corruption, Lies):
                merged = dict(o.corruption.overrides)
                merged.update(lies)
                lies = merged
            o = Oracle(o.name, o.reads, Lies.of(lies), o.operator)
        out.append(o)
    return out


def _adversary_overrides(scenario: Scenario):
    for a in scenario.adversaries:
        yield from a.oracle_overrides


class _StateCache:
    """LedgerState per record tuple, keyed by identity (the tuple is kept
    alive by the cache so identities are not reused). A miss extends the
    longest cached prefix. Records are fresh objects per block, so an
    identical record at the same index means a shared history."""

    def __init__(self, size=64):
        self.size = size
        self.items = OrderedDict()

    def _base(self, records):
        best = None
        for key, (recs, state) in reversed(self.items.items()):
            n = len(recs)
            if n <= len(records) and (n == 0 or records[n - 1] is recs[-1]):
                if best is None or n > len(best[1]):
                    best = (key, recs, state)
        return best

    def get(self, seq: RecordSequence) -> LedgerState:
        records = seq.records
        key = id(records)
        hit = self.items.get(key)
        if hit is not None and hit[0] is records:
            self.items.move_to_end(key)
            return hit[1]
        base = self._base(records)
        if base is None:
            state = LedgerState.of(records)
        else:
            state = base[2].copy()
            for r in records[len(base[1]):]:
                state.advance(r)
        self.items[key] = (records, state)
        if len(self.items) > self.size:
            self.items.popitem(last=False)
        return state


def _creation_allowed(scenario: Scenario, predicates, feeds, state, r: Record) -> bool:
    if r.kind is not PayloadKind.CREATE:
        return True
    if r.proposer == SYSTEM:
        return False  # genesis is over
    mode = scenario.spec.creation_mode
    if isinstance(mode, Predefined):
        return False
    if isinstance(mode, ConsensusBased):
        decl = predicates[mode.predicate]
        oracle = None if decl.internal else feeds[decl.dependency.oracle]
        return evaluate_record_predicate(decl, state, r, oracle) if decl.scope is Scope.RECORD else True
    if mode.creators is None or r.proposer in mode.creators:
        return True
    return r.proposer.label.startswith("contract:")


def run_scenario(scenario: Scenario, cfg: Optional[NetworkConfig] = None, engine=None,
                 rounds: Optional[int] = None, *, confirmation_depth: Optional[int] = None,
                 oracle_overrides: Sequence[tuple] = (), adversary=None) -> ScenarioRun:
    cfg = cfg or default_config(scenario)
    engine = engine or PermissionlessChain()
    rounds = default_rounds(scenario) if rounds is None else rounds
    spec = scenario.spec
    depth = engine.default_depth if confirmation_depth is None else confirmation_depth

    log = EventLog()
    log.header(scenario=spec.name, engine=engine.name, maintainers=cfg.num_maintainers,
               adversary_power=cfg.adversary_power, delay_rounds=cfg.delay_rounds,
               rounds=rounds, c=depth, seed=cfg.seed)

    world = WorldModel(dict(scenario.world.facts), list(scenario.world.timeline))
    for a in scenario.adversaries:
        for at, oid, prop, value in a.world:
            world.set(at, oid, prop, value)
    clock = [0]
    feeds = {o.name: OracleFeed(o, world, cfg.seed, clock=lambda: clock[0], log=log)
             for o in _oracles_with_overrides(scenario, oracle_overrides)}
    bound = spec.bound_predicates()
    predicates = {p.name: p for p in bound}
    validated = [predicates[n] for n in spec.validate]
    states = _StateCache()

    def oracle_for(decl):
        return None if decl.internal else feeds[decl.dependency.oracle]

    def validator(seq: RecordSequence, r: Record) -> bool:
        state = states.get(seq)
        if not _creation_allowed(scenario, predicates, feeds, state, r):
            return False
        for decl in validated:
            if decl.scope is Scope.RECORD:
                ok = evaluate_record_predicate(decl, state, r, oracle_for(decl))
            else:
                ok = evaluate(decl, seq, r, oracle_for(decl))
            if not ok:
                return False
        return True

    parties = _party_index(scenario)
    items = list(scenario.workload)
    for a in scenario.adversaries:
        items.extend(a.records)
    numbered = sorted(enumerate(items), key=lambda t: (t[1].round, t[0]))
    generators = [make_generator(scenario, g, cfg.seed) for g in scenario.generators]
    hooks_done = [0]
    hook_state = LedgerState()
    pending = list(numbered)

    def feeder(round_: int, decided: RecordSequence):
        clock[0] = round_
        out = []
        while pending and pending[0][1].round <= round_:
            nonce, item = pending.pop(0)
            for oid, prop, value in item.world:
                world.set(round_, oid, prop, value)
            out.append(Submission(build_record(item, nonce, parties, feeds), round_))
        if generators or scenario.contracts:
            state = states.get(decided)
            for g in generators:
                out.extend(g(round_, state))
        if scenario.contracts and len(decided) > hooks_done[0]:
            for rec in fire_contract_hooks(scenario.contracts, decided, cfg.seed, predicates, feeds,
                                           start=hooks_done[0], state=hook_state):
                out.append(Submission(rec, round_))
            hooks_done[0] = len(decided)
        return out

    genesis = genesis_records(scenario)
    run = run_consensus(cfg, engine, [], rounds, confirmation_depth=depth, adversary=adversary,
                        validator=validator, feeder=feeder, initial=genesis, log=log)
    honest = [v for v in run.views if v.honest]
    decided = decided_prefix(honest[0])
    clock[0] = rounds

    quorum_vote = (isinstance(spec.creation_mode, PartyCreated) and spec.creation_mode.quorum_vote
                   and isinstance(engine, PermissionedQuorum))
    for r in decided[len(genesis):]:
        if r.kind is PayloadKind.CREATE:
            via = "consensus" if (r.proposer.label.startswith("contract:") or quorum_vote) else "party"
            oid = created_object(r)
            log.emit(rounds, r.proposer.id, "mint", f"object={oid} creator={r.proposer.id} via={via} index={r.index}")

    truth = WorldFacts(world, rounds)
    outcomes = {}
    for decl in bound:
        if decl.rule == "kind-is":
            continue  # contract triggers, not properties of the use case
        ledger = evaluate(decl, decided, oracle=oracle_for(decl), start=len(genesis))
        world_ok = ledger if decl.internal else evaluate(decl, decided, oracle=truth, start=len(genesis))
        outcomes[decl.name] = GoalOutcome(bool(ledger), bool(world_ok))
    goals = {}
    for name in spec.goal_predicates:
        goals[name] = outcomes[name]
        o = goals[name]
        log.emit(rounds, "runner", "goal", f"predicate={name} ledger={str(o.ledger).lower()} "
                                           f"world={str(o.world).lower()}")
    audit = audit_trust(log, spec, engine)
    return ScenarioRun(log, audit, goals, outcomes, run.report, decided, len(genesis), run.views)
