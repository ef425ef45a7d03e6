import random

import pytest
from hypothesis import given, settings, strategies as st

from ledgerlab.consensus import NetworkConfig, PermissionedQuorum, decided_prefix, run_consensus
from ledgerlab.errors import MissingOracle, OracleRefused, SpecError, UnexpectedOracle, UnknownTrigger
from ledgerlab.eventlog import EventLog
from ledgerlab.ledger import (
    EMPTY, SYSTEM, ObjectId, PartyId, Payload, PayloadKind, RecordSequence, make_record,
)
from ledgerlab.validation import (
    AppendRecord, ContractHook, CreateObject, External, Internal, Lies, Noisy, Oracle, OracleFeed,
    PredicateDecl, Scope, Truthful, WorldFacts, WorldModel, bind_to_ledger, contract_party, evaluate,
    evaluate_record_predicate, evaluate_sequence_predicate, fire_contract_hooks, query_oracle,
)

from conftest import A, B, C, create, transfer

REC, SEQ = Scope.RECORD, Scope.SEQUENCE


def decl(rule, scope=REC, dep=None, name=None, **params):
    return PredicateDecl.make(name or rule, scope, dep or Internal(), rule, params)


def funded(n_coins=4, amount=10, people=(A, B, C)):
    recs = []
    for i, p in enumerate(people):
        for k in range(n_coins):
            recs.append(create(len(recs), ObjectId("coin", len(recs)), p, proposer=SYSTEM, amount=amount))
    return RecordSequence(tuple(recs))


# -- record predicates ---------------------------------------------------------

def test_funds_transferred_on_decided_transfer(coin0):
    seq = RecordSequence.from_records([create(0, coin0, A, proposer=SYSTEM, amount=5)])
    r = transfer(1, coin0, A, B, amount=5)
    holder = decl("funds-transferred", dep=External("registry"))
    provenance = decl("provenance-chain-intact", dep=External("registry"))
    assert evaluate_record_predicate(decl("funds-transferred", dep=Internal()), seq, r)
    world = WorldModel({(coin0, "holder"): B.id})
    feed = OracleFeed(Oracle("registry", frozenset({"holder"})), world)
    assert evaluate_record_predicate(holder, seq, r, feed)
    assert not evaluate_record_predicate(provenance, seq, r, feed)
    world.facts[(coin0, "holder")] = A.id
    feed = OracleFeed(Oracle("registry", frozenset({"holder"})), world)
    assert not evaluate_record_predicate(holder, seq, r, feed)
    assert evaluate_record_predicate(provenance, seq, r, feed)


def test_vacuous_rule_on_genesis_record(coin0):
    g = create(0, coin0, A, proposer=SYSTEM)
    assert evaluate_record_predicate(decl("balance-sufficiency"), EMPTY, g)
    assert evaluate_record_predicate(decl("no-duplicate-claim"), EMPTY, g)


def _brute_balance_ok(history, r):
    """Recompute every balance from scratch."""
    bal = {}
    for x in history:
        if x.kind is PayloadKind.CREATE and "owner" in x.payload:
            bal[x.payload["owner"]] = bal.get(x.payload["owner"], 0) + x.payload.get("amount", 0)
        elif x.kind is PayloadKind.TRANSFER:
            bal[x.payload["from"]] = bal.get(x.payload["from"], 0) - x.payload["amount"]
            bal[x.payload["to"]] = bal.get(x.payload["to"], 0) + x.payload["amount"]
    amount = r.payload["amount"]
    return amount >= 0 and bal.get(r.payload["from"], 0) >= amount


def test_balance_sufficiency_matches_replay_oracle():
    rng = random.Random(11)
    seq = funded(n_coins=1, amount=10)
    people = [A, B, C]
    rule = decl("balance-sufficiency")
    checked = 0
    for i in range(500):
        src, dst = rng.sample(people, 2)
        r = transfer(len(seq), ObjectId("coin", rng.randrange(3)), src, dst, amount=rng.randrange(0, 9),
                     nonce=1000 + i)
        expected = _brute_balance_ok(seq.records, r)
        assert evaluate_record_predicate(rule, seq, r) == expected
        checked += expected
        if expected:
            seq = seq.append(r)
    assert 0 < checked < 500  # both outcomes exercised


def test_negative_amount_is_never_sufficient(coin0):
    seq = funded()
    assert not evaluate_record_predicate(decl("balance-sufficiency"), seq, transfer(len(seq), coin0, A, B, amount=-1))


# -- sequence predicates -------------------------------------------------------

def test_no_duplicate_claims_on_empty_sequence():
    assert evaluate_sequence_predicate(decl("no-duplicate-claim", SEQ), EMPTY)


def test_double_spend_in_sequence(coin0):
    seq = RecordSequence.from_records([create(0, coin0, A, proposer=SYSTEM, amount=1), transfer(1, coin0, A, B),
                                       transfer(2, coin0, A, C, nonce=7)])
    assert not evaluate_sequence_predicate(decl("no-double-spend", SEQ), seq)
    assert evaluate_sequence_predicate(decl("no-double-spend", SEQ), seq[:2])


def _claims_ownership(r):
    if r.kind is PayloadKind.CREATE:
        return [ObjectId.parse(r.payload["object_id"])]
    if r.kind is PayloadKind.CLAIM and r.payload.get("claim-type") == "ownership":
        return list(r.objects)
    return []


def test_ownership_unique_matches_pairwise_scan():
    rng = random.Random(5)
    for trial in range(6):
        recs = []
        for i in range(1000 if trial == 0 else 200):
            o = ObjectId("lot", rng.randrange(1200))
            who = rng.choice([A, B, C])
            if rng.random() < 0.5:
                recs.append(create(i, o, who))
            else:
                recs.append(make_record(i, [who], [o], Payload.of(PayloadKind.CLAIM, {
                    "object_id": str(o), "claimant": who.id,
                    "claim-type": rng.choice(["ownership", "damage"])}), who, i))
        seq = RecordSequence(tuple(recs))
        pairwise = any(set(_claims_ownership(recs[i])) & set(_claims_ownership(recs[j]))
                       for i in range(len(recs)) for j in range(i))
        assert evaluate_sequence_predicate(decl("ownership-unique", SEQ), seq) == (not pairwise)


def test_scope_mismatch_is_an_error(coin0):
    with pytest.raises(SpecError):
        evaluate_sequence_predicate(decl("no-double-spend"), EMPTY)
    with pytest.raises(SpecError):
        evaluate_record_predicate(decl("no-double-spend", SEQ), EMPTY, transfer(0, coin0, A, B))


def test_vote_majority():
    subject = ObjectId("parcel", 1)
    votes = [make_record(i, [p], [], Payload.of(PayloadKind.ASSERT, {
        "property-name": "vote", "asserted-value": v, "subject": str(subject)}), p, i)
        for i, (p, v) in enumerate([(A, "yes"), (B, "yes"), (C, "no")])]
    seq = RecordSequence(tuple(votes))
    made = create(3, subject, A)
    assert evaluate_record_predicate(decl("vote-majority"), seq, made)
    assert not evaluate_record_predicate(decl("vote-majority"), seq[:1].append(votes[2].at(1)), made)


def test_unknown_rule_and_missing_params():
    with pytest.raises(SpecError):
        decl("no-such-rule")
    with pytest.raises(SpecError):
        decl("property-equals")
    with pytest.raises(SpecError):
        decl("balance-sufficiency", dep=External("o"))  # reads nothing from the world


# -- dependency enforcement ------------------------------------------------------

def test_external_needs_an_oracle(coin0):
    ext = decl("object-exists", dep=External("registry"))
    with pytest.raises(MissingOracle):
        evaluate_record_predicate(ext, EMPTY, transfer(0, coin0, A, B))


def test_external_with_wrong_oracle(coin0):
    ext = decl("object-exists", dep=External("registry"))
    feed = OracleFeed(Oracle("other", frozenset({"exists"})), WorldModel())
    with pytest.raises(MissingOracle):
        evaluate_record_predicate(ext, EMPTY, transfer(0, coin0, A, B), feed)


def test_oracle_that_cannot_read_the_property(coin0):
    ext = decl("object-exists", dep=External("registry"))
    feed = OracleFeed(Oracle("registry", frozenset({"holder"})), WorldModel())
    with pytest.raises(OracleRefused):
        evaluate_record_predicate(ext, EMPTY, transfer(0, coin0, A, B), feed)


def test_internal_predicate_refuses_an_oracle(coin0):
    feed = OracleFeed(Oracle("registry", frozenset({"exists"})), WorldModel())
    with pytest.raises(UnexpectedOracle):
        evaluate_record_predicate(decl("no-double-spend"), EMPTY, transfer(0, coin0, A, B), feed)


# -- oracles --------------------------------------------------------------------

CONTAINER = ObjectId("container", 7)
METER = ObjectId("meter", 3)


def test_truthful_oracle():
    world = WorldModel({(CONTAINER, "location"): "port-b"})
    assert query_oracle(Oracle("gps", frozenset({"location"})), world, CONTAINER, "location") == "port-b"


def test_lying_oracle_override():
    world = WorldModel({(METER, "produced_kwh"): 40})
    liar = Oracle("smart-meter", frozenset({"produced_kwh"}), Lies.of({(METER, "produced_kwh"): 80}))
    assert query_oracle(liar, world, METER, "produced_kwh") == 80
    assert query_oracle(liar, world, ObjectId("meter", 4), "produced_kwh") is None


def test_oracle_refuses_unreadable_property():
    with pytest.raises(OracleRefused):
        query_oracle(Oracle("gps", frozenset({"location"})), WorldModel(), CONTAINER, "owner")


def test_noisy_flip_rate():
    world = WorldModel({(CONTAINER, "sealed"): True})
    noisy = Oracle("seal", frozenset({"sealed"}), Noisy(0.25))
    rng = random.Random(0xD15EA5E)
    flips = sum(query_oracle(noisy, world, CONTAINER, "sealed", rng) is False for _ in range(10_000))
    assert abs(flips / 10_000 - 0.25) <= 0.02


def test_noisy_bounds():
    with pytest.raises(SpecError):
        Noisy(1.5)


def test_timeline_applies_by_round():
    world = WorldModel({(CONTAINER, "location"): "port-a"}, [(10, CONTAINER, "location", "port-b")])
    assert world.fact(CONTAINER, "location", 9) == "port-a"
    assert world.fact(CONTAINER, "location", 10) == "port-b"
    assert world.snapshot(5) == {(CONTAINER, "location"): "port-a"}


def test_feed_logs_and_caches_per_round():
    log = EventLog()
    log.header(scenario="t")
    clock = [0]
    world = WorldModel({(CONTAINER, "location"): "port-a"})
    feed = OracleFeed(Oracle("gps", frozenset({"location"}), operator=C), world, 1, lambda: clock[0], log)
    feed.query(CONTAINER, "location", "arrived")
    feed.query(CONTAINER, "location", "arrived")
    clock[0] = 1
    feed.query(CONTAINER, "location", "arrived")
    events = [e for e in log.events() if e.event == "oracle-query"]
    assert len(events) == 2
    assert events[0].fields() == {"oracle": "gps", "predicate": "arrived", "object": "container7",
                                  "property": "location", "value": "port-a", "operator": str(C.id)}


@settings(max_examples=40)
@given(st.dictionaries(st.tuples(st.integers(0, 20), st.sampled_from(["location", "sealed", "kwh"])),
                       st.one_of(st.integers(0, 100), st.booleans(), st.sampled_from(["port-a", "port-b"])),
                       max_size=20))
def test_truthful_oracle_is_identity_on_facts(facts):
    world = WorldModel({(ObjectId("o", k), p): v for (k, p), v in facts.items()})
    oracle = Oracle("all", frozenset({"location", "sealed", "kwh"}))
    for (oid, prop), v in world.facts.items():
        assert query_oracle(oracle, world, oid, prop) == v


# -- ledger binding ----------------------------------------------------------------

def test_ledger_binding_reclassifies():
    ext = decl("provenance-chain-intact", dep=External("core-banking"), name="balances-correct")
    other = decl("object-exists", dep=External("core-banking"), name="exists")
    bound = bind_to_ledger([ext, other], {"holder"})
    assert bound[0].internal and not bound[1].internal


def test_ledger_binding_unknown_property():
    with pytest.raises(SpecError):
        bind_to_ledger([decl("no-double-spend")], {"colour"})


# -- contract hooks ---------------------------------------------------------------

def _invoke(i, who, contract="mint", **attrs):
    attrs["contract-name"] = contract
    return make_record(i, [who], [], Payload.of(PayloadKind.CONTRACT_INVOKE, attrs), who, i)


MINT_TRIGGER = decl("kind-is", name="mint-requested", of=["ContractInvoke"], contract="mint")
MINT = ContractHook("mint", "mint-requested", CreateObject(namespace="token", template=(("owner", "$proposer"),)))


def test_hook_fires_once():
    decided = RecordSequence.from_records([_invoke(0, A), transfer(1, ObjectId("coin", 0), A, B)])
    out = fire_contract_hooks([MINT], decided, 0, {MINT_TRIGGER.name: MINT_TRIGGER})
    assert len(out) == 1
    r = out[0]
    assert r.kind is PayloadKind.CREATE and r.payload["owner"] == A.id and r.proposer == contract_party("mint")


def test_hook_not_triggered():
    decided = RecordSequence.from_records([transfer(0, ObjectId("coin", 0), A, B)])
    assert fire_contract_hooks([MINT], decided, 0, {MINT_TRIGGER.name: MINT_TRIGGER}) == []


def test_unknown_trigger():
    with pytest.raises(UnknownTrigger):
        fire_contract_hooks([MINT], EMPTY, 0, {})


def test_hook_output_does_not_retrigger():
    decided = RecordSequence.from_records([_invoke(0, A)])
    first = fire_contract_hooks([MINT], decided, 0, {MINT_TRIGGER.name: MINT_TRIGGER})
    again = fire_contract_hooks([MINT], decided.append(first[0].at(1)), 0, {MINT_TRIGGER.name: MINT_TRIGGER})
    assert again == first


def test_append_hook_fills_template():
    pay = ContractHook("pay", "mint-requested", AppendRecord(PayloadKind.TRANSFER, (
        ("amount", "$amount"), ("from", "$payer"), ("to", "$proposer"))))
    decided = RecordSequence.from_records([_invoke(0, A, amount=5, payer=B.id)])
    (r,) = fire_contract_hooks([pay], decided, 0, {MINT_TRIGGER.name: MINT_TRIGGER})
    assert (r.payload["amount"], r.payload["from"], r.payload["to"]) == (5, B.id, A.id)


@pytest.mark.parametrize("bits", [0, 32, 128])
def test_hook_ids_are_deterministic(bits):
    hook = ContractHook("mint", "mint-requested", CreateObject(scheme=bits, namespace="token"))
    decided = RecordSequence.from_records([_invoke(i, A) for i in range(5)])
    preds = {MINT_TRIGGER.name: MINT_TRIGGER}
    a = fire_contract_hooks([hook], decided, 3, preds)
    assert a == fire_contract_hooks([hook], decided, 3, preds)
    ids = [ObjectId.parse(r.payload["object_id"]) for r in a]
    assert len(set(ids)) == 5 and all(o.bits == bits for o in ids)


def test_block_reward_once_per_decided_block():
    """100 empty blocks decided by a quorum; each earns one reward."""
    run = run_consensus(NetworkConfig(4, seed=6), PermissionedQuorum(), [
        make_record(0, [A], [], Payload.of(PayloadKind.CONTRACT_INVOKE, {"contract-name": "empty-block"}), A, i)
        for i in range(100)], 120)
    decided = decided_prefix([v for v in run.views if v.honest][0])
    assert len(decided) == 100
    trigger = decl("kind-is", name="block-decided", of=["ContractInvoke", "Transfer"])
    reward = ContractHook("block-reward", "block-decided", CreateObject(namespace="reward", template=(
        ("owner", "$proposer"), ("amount", 1))))
    out = fire_contract_hooks([reward], decided, 0, {trigger.name: trigger})
    assert len(out) == 100
    assert len({r.payload["object_id"] for r in out}) == 100


# -- isolation ----------------------------------------------------------------------

INTERNAL_RULES = ["balance-sufficiency", "no-double-spend", "no-duplicate-claim", "ownership-unique"]


@settings(max_examples=30)
@given(st.sampled_from(INTERNAL_RULES),
       st.dictionaries(st.tuples(st.integers(0, 11), st.sampled_from(["holder", "exists", "amount"])),
                       st.one_of(st.integers(0, 5), st.booleans()), max_size=12),
       st.integers(0, 2**16))
def test_internal_predicates_ignore_the_world(rule, facts, seed):
    """Internal evaluation has no world input at all; the world can change
    arbitrarily and the answer must not."""
    rng = random.Random(seed)
    seq = funded()
    people = [A, B, C]
    for i in range(15):
        src, dst = rng.sample(people, 2)
        seq = seq.append(transfer(len(seq), ObjectId("coin", rng.randrange(12)), src, dst, amount=1, nonce=50 + i))
    world = WorldModel()
    before = evaluate(decl(rule), seq)
    for (k, prop), v in facts.items():
        world.set(0, ObjectId("coin", k), prop, v)
    assert evaluate(decl(rule), seq) == before
    with pytest.raises(UnexpectedOracle):
        evaluate(decl(rule), seq, oracle=WorldFacts(world))
