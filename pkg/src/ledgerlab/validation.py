"""Predicate registry and evaluator.

A predicate is a named, parameterized built-in rule with a declared
dependency class. Internal predicates are evaluated against a ``LedgerState``
derived from the record sequence and nothing else; they are never handed an
oracle. External predicates read object properties through an oracle feed,
which in turn reads the simulation's ``WorldModel``.

Record-scoped predicates are evaluated as ``(preceding records, record)``.
Sequence-scoped predicates hold when the record rule holds for every record
against its own prefix.
"""

from __future__ import annotations

import enum
import functools
import random
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .errors import MissingOracle, OracleRefused, SpecError, UnexpectedOracle, UnknownTrigger
from .eventlog import EventLog, derive_seed
from .ledger import (
    ObjectId, PartyId, Payload, PayloadKind, Record, RecordSequence, Scalar, check_scalar,
    format_scalar, make_record, spender,
)

CONTRACT_BASE = 20_000


class Scope(enum.Enum):
    RECORD = "record"
    SEQUENCE = "sequence"


@dataclass(frozen=True)
class Internal:
    def __str__(self):
        return "internal"


@dataclass(frozen=True)
class External:
    oracle: str

    def __str__(self):
        return f"external({self.oracle})"


Dependency = Union[Internal, External]


@dataclass(frozen=True)
class PredicateDecl:
    name: str
    scope: Scope
    dependency: Dependency
    rule: str
    params: tuple = ()  # sorted (name, value) pairs; list values become tuples

    @classmethod
    def make(cls, name, scope, dependency, rule, params: Optional[Mapping] = None) -> "PredicateDecl":
        scope = scope if isinstance(scope, Scope) else Scope(scope)
        if rule not in RULES:
            raise SpecError(f"predicate {name!r}: unknown rule {rule!r}")
        frozen = []
        for k, v in sorted((params or {}).items()):
            frozen.append((k, tuple(v) if isinstance(v, (list, tuple)) else v))
        decl = cls(name, scope, dependency, rule, tuple(frozen))
        RULES[rule].check(decl)
        return decl

    def param(self, key, default=None):
        for k, v in self.params:
            if k == key:
                return v
        return default

    @property
    def internal(self) -> bool:
        return isinstance(self.dependency, Internal)

    @property
    def reads(self) -> frozenset:
        return RULES[self.rule].reads(self)

    def kinds(self) -> Optional[frozenset]:
        ks = self.param("kinds")
        if ks is None:
            return None
        if isinstance(ks, str):
            ks = (ks,)
        return frozenset(PayloadKind(k) for k in ks)


# -- world and oracles -------------------------------------------------------

@dataclass
class WorldModel:
    """Ground truth of the simulation. ``timeline`` holds
    ``(round, object_id, property, value)`` mutations applied in order."""

    facts: Dict[Tuple[ObjectId, str], Scalar] = field(default_factory=dict)
    timeline: List[tuple] = field(default_factory=list)

    def set(self, round_: int, oid: ObjectId, prop: str, value: Scalar):
        check_scalar(value)
        self.timeline.append((round_, oid, prop, value))

    def fact(self, oid: ObjectId, prop: str, round_: Optional[int] = None):
        value = self.facts.get((oid, prop))
        for at, o, p, v in self.timeline:
            if round_ is not None and at > round_:
                continue
            if o == oid and p == prop:
                value = v
        return value

    def snapshot(self, round_: Optional[int] = None) -> dict:
        out = dict(self.facts)
        for at, o, p, v in self.timeline:
            if round_ is None or at <= round_:
                out[(o, p)] = v
        return out


@dataclass(frozen=True)
class Truthful:
    def __str__(self):
        return "truthful"


@dataclass(frozen=True)
class Lies:
    overrides: tuple = ()  # ((ObjectId, property), value) pairs

    @classmethod
    def of(cls, mapping: Mapping) -> "Lies":
        return cls(tuple(sorted(mapping.items())))

    def lookup(self, oid, prop):
        for (o, p), v in self.overrides:
            if o == oid and p == prop:
                return True, v
        return False, None

    def __str__(self):
        return f"lies({len(self.overrides)})"


@dataclass(frozen=True)
class Noisy:
    flip_probability: float

    def __post_init__(self):
        if not 0.0 <= self.flip_probability <= 1.0:
            raise SpecError("flip probability must be in [0, 1]")

    def __str__(self):
        return f"noisy({self.flip_probability})"


Corruption = Union[Truthful, Lies, Noisy]


@dataclass(frozen=True)
class Oracle:
    name: str
    reads: frozenset
    corruption: Corruption = Truthful()
    operator: Optional[PartyId] = None  # the party running the oracle, if any


def flip(value):
    """The wrong answer a noisy oracle gives."""
    if isinstance(value, bool):
        return not value
    if isinstance(value, int):
        return value + 1
    if isinstance(value, str):
        return value[:-1] + "~" if len(value) >= 64 else value + "~"
    return value


def query_oracle(oracle: Oracle, world: WorldModel, oid: ObjectId, prop: str,
                 rng: Optional[random.Random] = None, round_: Optional[int] = None):
    if prop not in oracle.reads:
        raise OracleRefused(f"oracle {oracle.name} cannot read {prop!r}")
    truth = world.fact(oid, prop, round_)
    c = oracle.corruption
    if isinstance(c, Lies):
        hit, value = c.lookup(oid, prop)
        return value if hit else truth
    if isinstance(c, Noisy):
        if rng is None:
            rng = random.Random(derive_seed(oracle.name, oid, prop, round_))
        if rng.random() < c.flip_probability:
            return flip(truth)
    return truth


class OracleFeed:
    """An oracle wired to a world, a clock and (optionally) a log.

    Answers are cached per (round, object, property) so a value cannot change
    between the maintainers that ask in the same round.
    """

    def __init__(self, oracle: Oracle, world: WorldModel, seed: int = 0,
                 clock: Callable[[], int] = lambda: 0, log: Optional[EventLog] = None):
        self.oracle = oracle
        self.world = world
        self.seed = seed
        self.clock = clock
        self.log = log
        self._cache = {}

    def query(self, oid: ObjectId, prop: str, predicate: str = ""):
        round_ = self.clock()
        key = (round_, oid, prop, predicate)
        if key in self._cache:
            return self._cache[key]
        rng = random.Random(derive_seed(self.seed, self.oracle.name, round_, oid, prop))
        value = query_oracle(self.oracle, self.world, oid, prop, rng, round_)
        self._cache[key] = value
        if self.log is not None:
            operator = self.oracle.operator.id if self.oracle.operator else "-"
            shown = "-" if value is None else format_scalar(value)
            self.log.emit(round_, f"oracle:{self.oracle.name}", "oracle-query",
                          f"oracle={self.oracle.name} predicate={predicate} object={oid} "
                          f"property={prop} value={shown} operator={operator}")
        return value


# -- fact sources ------------------------------------------------------------

@functools.lru_cache(maxsize=65536)
def _parse_oid(text: str) -> Optional[ObjectId]:
    try:
        return ObjectId.parse(text)
    except ValueError:
        return None


def _as_oid(value) -> Optional[ObjectId]:
    if isinstance(value, ObjectId):
        return value
    if isinstance(value, str):
        return _parse_oid(value)
    return None


def created_object(r: Record) -> Optional[ObjectId]:
    if r.kind is PayloadKind.CREATE:
        return _as_oid(r.payload["object_id"])
    return None


class LedgerState:
    """Everything the structural rules and internal fact lookups need,
    folded incrementally over a record sequence."""

    def __init__(self):
        self.balances: Dict[int, int] = {}
        self.holders: Dict[ObjectId, int] = {}
        self.created: Dict[ObjectId, int] = {}
        self.props: Dict[Tuple[ObjectId, str], Scalar] = {}
        self.spends: Dict[tuple, set] = {}
        self.claims: set = set()
        self.owned: set = set()
        self.votes: Dict[str, Dict[int, Scalar]] = {}
        self.length = 0

    @classmethod
    def of(cls, seq: Iterable[Record]) -> "LedgerState":
        st = cls()
        for r in seq:
            st.advance(r)
        return st

    def copy(self) -> "LedgerState":
        st = LedgerState()
        st.balances = dict(self.balances)
        st.holders = dict(self.holders)
        st.created = dict(self.created)
        st.props = dict(self.props)
        st.spends = {k: set(v) for k, v in self.spends.items()}
        st.claims = set(self.claims)
        st.owned = set(self.owned)
        st.votes = {k: dict(v) for k, v in self.votes.items()}
        st.length = self.length
        return st

    def advance(self, r: Record):
        p = r.payload
        kind = r.kind
        if kind is PayloadKind.CREATE:
            oid = created_object(r)
            if oid is not None:
                self.created.setdefault(oid, r.index)
                self.owned.add(oid)
                owner = p.get("owner")
                if isinstance(owner, int) and not isinstance(owner, bool):
                    self.holders[oid] = owner
                    amount = p.get("amount", 0)
                    if isinstance(amount, int) and not isinstance(amount, bool):
                        self.balances[owner] = self.balances.get(owner, 0) + amount
                for k, v in p.items:
                    if k not in ("object_id",):
                        self.props.setdefault((oid, k), v)
        elif kind is PayloadKind.TRANSFER:
            amount, src, dst = p["amount"], p["from"], p["to"]
            if isinstance(amount, int) and not isinstance(amount, bool):
                self.balances[src] = self.balances.get(src, 0) - amount
                self.balances[dst] = self.balances.get(dst, 0) + amount
            for oid in r.objects:
                self.holders[oid] = dst
        elif kind is PayloadKind.CLAIM:
            claim_type = p.get("claim-type")
            for oid in r.objects:
                self.claims.add((oid, claim_type))
                if claim_type == "ownership":
                    self.owned.add(oid)
                    self.holders[oid] = p["claimant"]
        elif kind is PayloadKind.ASSERT:
            prop = p["property-name"]
            if prop == "vote" and "subject" in p:
                self.votes.setdefault(str(p["subject"]), {})[r.proposer.id] = p["asserted-value"]
            for oid in r.objects:
                self.props[(oid, prop)] = p["asserted-value"]
        who = spender(r)
        if who is not None:
            for oid in r.objects:
                self.spends.setdefault((kind, who, oid), set()).add(r.key)
        self.length += 1

    # fact-source interface
    def value(self, oid: ObjectId, prop: str, predicate: str = ""):
        if prop == "holder":
            return self.holders.get(oid)
        if prop == "exists":
            return oid in self.created
        return self.props.get((oid, prop))

    def value_after(self, r: Record, oid: ObjectId, prop: str, predicate: str = ""):
        nxt = self.copy()
        nxt.advance(r)
        return nxt.value(oid, prop)


class OracleFacts:
    def __init__(self, feed: OracleFeed):
        self.feed = feed

    def value(self, oid, prop, predicate=""):
        return self.feed.query(oid, prop, predicate)

    def value_after(self, r, oid, prop, predicate=""):
        # the outside world is observed as it is now, which already
        # includes whatever the record describes
        return self.feed.query(oid, prop, predicate)


class WorldFacts:
    """Ground truth, used only to score goal predicates against reality."""

    def __init__(self, world: WorldModel, round_: Optional[int] = None):
        self.snapshot = world.snapshot(round_)

    def value(self, oid, prop, predicate=""):
        return self.snapshot.get((oid, prop))

    def value_after(self, r, oid, prop, predicate=""):
        return self.value(oid, prop)


# -- rules -------------------------------------------------------------------

@dataclass(frozen=True)
class Rule:
    name: str
    fn: Callable  # (decl, state, record, facts) -> bool
    reads_fn: Callable = lambda decl: frozenset()
    required: tuple = ()

    def reads(self, decl) -> frozenset:
        return frozenset(self.reads_fn(decl))

    def check(self, decl: PredicateDecl):
        for p in self.required:
            if isinstance(p, tuple):
                if not any(decl.param(q) is not None for q in p):
                    raise SpecError(f"predicate {decl.name!r}: rule {self.name} needs one of {', '.join(p)}")
            elif decl.param(p) is None:
                raise SpecError(f"predicate {decl.name!r}: rule {self.name} needs parameter {p!r}")
        if not isinstance(decl.dependency, Internal) and not self.reads(decl):
            raise SpecError(f"predicate {decl.name!r}: rule {self.name} reads only the ledger "
                            "and cannot be declared external")


def _balance(decl, st: LedgerState, r: Record, facts) -> bool:
    if r.kind is not PayloadKind.TRANSFER:
        return True
    amount = r.payload["amount"]
    if not isinstance(amount, int) or isinstance(amount, bool) or amount < 0:
        return False
    return st.balances.get(r.payload["from"], 0) >= amount


def _no_double_spend(decl, st: LedgerState, r: Record, facts) -> bool:
    who = spender(r)
    if who is None or r.kind is not PayloadKind.TRANSFER:
        return True
    for oid in r.objects:
        keys = st.spends.get((r.kind, who, oid))
        if keys and keys - {r.key}:
            return False
    return True


def _no_duplicate_claim(decl, st: LedgerState, r: Record, facts) -> bool:
    if r.kind is not PayloadKind.CLAIM:
        return True
    claim_type = r.payload.get("claim-type")
    return not any((oid, claim_type) in st.claims for oid in r.objects)


def _establishes_ownership(r: Record):
    if r.kind is PayloadKind.CREATE:
        oid = created_object(r)
        return [oid] if oid is not None else []
    if r.kind is PayloadKind.CLAIM and r.payload.get("claim-type") == "ownership":
        return list(r.objects)
    return []


def _ownership_unique(decl, st: LedgerState, r: Record, facts) -> bool:
    return not any(oid in st.owned for oid in _establishes_ownership(r))


def _object_exists(decl, st, r: Record, facts) -> bool:
    made = created_object(r)
    return all(facts.value(oid, "exists", decl.name) is True for oid in r.objects if oid != made)


def _property_equals(decl, st, r: Record, facts) -> bool:
    prop = decl.param("property")
    attr = decl.param("attribute")
    if attr is not None:
        if attr not in r.payload:
            return False
        expected = r.payload[attr]
    else:
        expected = decl.param("value")
    targets = list(r.objects)
    made = created_object(r)
    if made is not None and made not in targets:
        targets.append(made)
    return all(facts.value(oid, prop, decl.name) == expected for oid in targets)


def _provenance(decl, st, r: Record, facts) -> bool:
    if r.kind is not PayloadKind.TRANSFER:
        return True
    return all(facts.value(oid, "holder", decl.name) == r.payload["from"] for oid in r.objects)


def _funds_transferred(decl, st, r: Record, facts) -> bool:
    if r.kind is not PayloadKind.TRANSFER:
        return True
    return all(facts.value_after(r, oid, "holder", decl.name) == r.payload["to"] for oid in r.objects)


def contract_party(name: str) -> PartyId:
    return PartyId(CONTRACT_BASE + derive_seed("contract", name) % 1_000_000, f"contract:{name}")


def _contract_origin(decl, st, r: Record, facts) -> bool:
    contract = decl.param("contract")
    return r.payload.get("hook") == contract and r.proposer == contract_party(contract)


def _kind_is(decl, st, r: Record, facts) -> bool:
    of = decl.param("of")
    of = (of,) if isinstance(of, str) else of
    contract = decl.param("contract")
    if contract is not None and r.payload.get("contract-name") != contract:
        return False
    return r.kind.value in of


def _vote_majority(decl, st: LedgerState, r: Record, facts) -> bool:
    made = created_object(r)
    if made is None:
        return True
    ballots = st.votes.get(str(made), {})
    yes = sum(1 for v in ballots.values() if v == "yes")
    no = sum(1 for v in ballots.values() if v == "no")
    return yes > no


RULES: Dict[str, Rule] = {r.name: r for r in (
    Rule("balance-sufficiency", _balance),
    Rule("no-double-spend", _no_double_spend),
    Rule("no-duplicate-claim", _no_duplicate_claim),
    Rule("ownership-unique", _ownership_unique),
    Rule("object-exists", _object_exists, lambda d: {"exists"}),
    Rule("property-equals", _property_equals,
         lambda d: {d.param("property")},
         required=("property", ("value", "attribute"))),
    Rule("provenance-chain-intact", _provenance, lambda d: {"holder"}),
    Rule("funds-transferred", _funds_transferred, lambda d: {"holder"}),
    Rule("contract-origin", _contract_origin, required=("contract",)),
    Rule("vote-majority", _vote_majority),
    Rule("kind-is", _kind_is, required=("of",)),
)}


def _applies(decl: PredicateDecl, r: Record) -> bool:
    kinds = decl.kinds()
    return kinds is None or r.kind in kinds


def _facts_for(decl: PredicateDecl, state: LedgerState, oracle):
    if decl.internal:
        if oracle is not None:
            raise UnexpectedOracle(f"internal predicate {decl.name!r} was handed an oracle")
        return state
    if oracle is None:
        raise MissingOracle(f"external predicate {decl.name!r} needs oracle {decl.dependency.oracle!r}")
    if isinstance(oracle, OracleFeed):
        if oracle.oracle.name != decl.dependency.oracle:
            raise MissingOracle(f"predicate {decl.name!r} reads {decl.dependency.oracle!r}, "
                                f"got oracle {oracle.oracle.name!r}")
        missing = decl.reads - oracle.oracle.reads
        if missing:
            raise OracleRefused(f"oracle {oracle.oracle.name} cannot read {', '.join(sorted(missing))}")
        return OracleFacts(oracle)
    return oracle  # any object with value()/value_after(), e.g. WorldFacts


def evaluate_record_predicate(decl: PredicateDecl, seq: Union[RecordSequence, LedgerState],
                              r: Record, oracle=None) -> bool:
    """Evaluate a record predicate on ``r`` given the records before it.

    ``seq`` may be a prebuilt LedgerState of the preceding records.
    """
    if decl.scope is not Scope.RECORD:
        raise SpecError(f"predicate {decl.name!r} is sequence-scoped")
    state = seq if isinstance(seq, LedgerState) else LedgerState.of(seq)
    facts = _facts_for(decl, state, oracle)
    if not _applies(decl, r):
        return True
    return bool(RULES[decl.rule].fn(decl, state, r, facts))


def evaluate_sequence_predicate(decl: PredicateDecl, seq: RecordSequence, oracle=None) -> bool:
    if decl.scope is not Scope.SEQUENCE:
        raise SpecError(f"predicate {decl.name!r} is record-scoped")
    return _fold(decl, seq, oracle)


def _fold(decl, seq, oracle, start: int = 0) -> bool:
    state = LedgerState()
    fn = RULES[decl.rule].fn
    facts = _facts_for(decl, state, oracle)
    for i, r in enumerate(seq):
        # internal facts are the state itself and advance with it
        if i >= start and _applies(decl, r) and not fn(decl, state, r, facts):
            return False
        state.advance(r)
    return True


def evaluate(decl: PredicateDecl, seq: RecordSequence, r: Optional[Record] = None, oracle=None,
             start: int = 0) -> bool:
    """Scope-agnostic entry: a record predicate on ``r`` or, when ``r`` is
    None, on every record of ``seq`` from ``start`` on; a sequence predicate
    over ``seq`` (plus ``r`` when given). Records before ``start`` still
    contribute history."""
    if decl.scope is Scope.RECORD:
        if r is not None:
            return evaluate_record_predicate(decl, seq, r, oracle)
        return _fold(decl, seq, oracle, start)
    if r is not None:
        seq = seq.append(r.at(len(seq)))
    return _fold(decl, seq, oracle, start)


# -- ledger binding ----------------------------------------------------------

def bind_to_ledger(decls: Sequence[PredicateDecl], binding: Iterable[str]) -> List[PredicateDecl]:
    """Reclassify external predicates whose every read is a ledger-binding
    property: the ledger itself becomes the authority on those facts."""
    binding = frozenset(binding)
    read_anywhere = set()
    for d in decls:
        read_anywhere |= d.reads
    unknown = binding - read_anywhere
    if unknown:
        raise SpecError(f"ledger-binding properties read by no predicate: {', '.join(sorted(unknown))}")
    out = []
    for d in decls:
        if not d.internal and d.reads and d.reads <= binding:
            d = PredicateDecl(d.name, d.scope, Internal(), d.rule, d.params)
        out.append(d)
    return out


# -- contract hooks ----------------------------------------------------------

@dataclass(frozen=True)
class CreateObject:
    scheme: int = 0  # 0: sequential, otherwise random bit width
    namespace: str = "obj"
    id_from: Optional[str] = None  # payload attribute holding the id; default derives one
    template: tuple = ()  # extra Create attributes, values may be $attr / $proposer


@dataclass(frozen=True)
class AppendRecord:
    kind: PayloadKind
    template: tuple = ()


@dataclass(frozen=True)
class ContractHook:
    name: str
    trigger: str
    action: Union[CreateObject, AppendRecord]


def _fill(template: tuple, trigger: Record) -> dict:
    out = {}
    for k, v in template:
        if isinstance(v, str) and v.startswith("$"):
            ref = v[1:]
            if ref == "proposer":
                v = trigger.proposer.id
            elif ref == "index":
                v = trigger.index
            else:
                v = trigger.payload.get(ref)
                if v is None and ref == "object":
                    v = str(trigger.objects[0]) if trigger.objects else None
                if v is None:
                    raise SpecError(f"template reference ${ref} missing on trigger record {trigger.index}")
        out[k] = v
    return out


def hook_object_id(hook: ContractHook, trigger: Record, seed: int) -> ObjectId:
    act = hook.action
    if act.id_from is not None:
        return ObjectId.parse(str(trigger.payload[act.id_from]))
    if act.scheme == 0:
        return ObjectId(act.namespace, trigger.index)
    rng = random.Random(derive_seed(seed, hook.name, trigger.key))
    return ObjectId(act.namespace, rng.getrandbits(act.scheme), act.scheme)


def fire_contract_hooks(hooks: Sequence[ContractHook], decided: RecordSequence, seed: int = 0,
                        predicates: Optional[Mapping[str, PredicateDecl]] = None,
                        feeds: Optional[Mapping[str, OracleFeed]] = None,
                        start: int = 0, state: Optional[LedgerState] = None) -> List[Record]:
    """Candidate records emitted by ``hooks`` for decided records from
    ``start`` on. Records emitted by a hook never trigger hooks themselves.
    ``state``, if given, is the state of ``decided[:start]`` and is advanced
    in place.
    """
    predicates = predicates or {}
    feeds = feeds or {}
    for h in hooks:
        if h.trigger not in predicates:
            raise UnknownTrigger(h.trigger)
    out = []
    if state is None:
        state = LedgerState.of(decided[:start])
    for r in list(decided)[start:]:
        if "hook" not in r.payload:
            for h in hooks:
                decl = predicates[h.trigger]
                oracle = None if decl.internal else feeds.get(decl.dependency.oracle)
                if decl.scope is Scope.RECORD:
                    fired = evaluate_record_predicate(decl, state, r, oracle)
                else:
                    fired = evaluate_sequence_predicate(decl, decided[:r.index + 1], oracle)
                if fired:
                    out.append(_emit(h, r, seed))
        state.advance(r)
    return out


def _emit(hook: ContractHook, trigger: Record, seed: int) -> Record:
    party = contract_party(hook.name)
    nonce = derive_seed(hook.name, trigger.key) >> 1
    act = hook.action
    if isinstance(act, CreateObject):
        oid = hook_object_id(hook, trigger, seed)
        attrs = _fill(act.template, trigger)
        attrs.update(object_id=str(oid), hook=hook.name)
        payload = Payload.of(PayloadKind.CREATE, attrs)
        objects = [oid]
    else:
        attrs = _fill(act.template, trigger)
        attrs["hook"] = hook.name
        payload = Payload.of(act.kind, attrs)
        objects = list(trigger.objects)
    parties = [party, trigger.proposer]
    return make_record(0, parties, objects, payload, party, nonce)
