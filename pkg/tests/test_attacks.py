import math
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from ledgerlab.consensus import PermissionedQuorum, PermissionlessChain
from ledgerlab.criteria import Predefined, check_internal_predicate_criterion, check_object_creation_criterion
from ledgerlab.errors import InapplicableAttack
from ledgerlab.ledger import ObjectId
from ledgerlab.suite import (
    ID_WIDTHS, SEQUENTIAL, AttackOutcome, lying_oracle_attack, parse_id_scheme, premature_creation_attack,
    sybil_vote_attack,
)


def within_binomial(successes, trials, p, sigmas=4):
    sd = math.sqrt(trials * p * (1 - p))
    return abs(successes - trials * p) <= sigmas * sd


# -- outcome and parsing -----------------------------------------------------------

def test_outcome_bounds():
    assert AttackOutcome.of("x", 4, 1).success_rate == 0.25
    assert AttackOutcome.of("x", 0, 0).success_rate == 0.0
    with pytest.raises(ValueError):
        AttackOutcome.of("x", 3, 4)


@pytest.mark.parametrize("text,bits", [("sequential", SEQUENTIAL), ("random128", 128), ("Random8", 8),
                                       ("random", 128), (16, 16)])
def test_parse_id_scheme(text, bits):
    assert parse_id_scheme(text) == bits


@pytest.mark.parametrize("text", ["random0", "random129", "uuid"])
def test_parse_id_scheme_rejects(text):
    with pytest.raises(ValueError):
        parse_id_scheme(text)


# -- premature creation -------------------------------------------------------------

def test_sequential_ids_always_lose_the_race(suite):
    out = premature_creation_attack(suite["diamond-notary"], "sequential", 1, 1000, seed=0)
    assert out.successes == 1000 and out.success_rate == 1.0


def test_creator_ahead_always_wins(suite):
    assert premature_creation_attack(suite["diamond-notary"], "sequential", -1, 200).successes == 0


def test_simultaneous_arrival_is_a_coin_flip(suite):
    out = premature_creation_attack(suite["diamond-notary"], "sequential", 0, 1000, seed=4)
    assert within_binomial(out.successes, 1000, 0.5)


def test_eight_bit_ids_match_guessing_odds(suite):
    """A uniform guess at an 8-bit id hits with probability 2**-8; with a
    latency advantage every hit wins."""
    out = premature_creation_attack(suite["diamond-notary"], "random8", 1, 20_000, seed=1)
    assert within_binomial(out.successes, 20_000, 2 ** -8)


def test_wide_random_ids(suite):
    assert premature_creation_attack(suite["diamond-notary"], "random128", 1, 20_000).successes == 0


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_rate_non_increasing_in_width(suite, seed):
    rates = [premature_creation_attack(suite["diamond-notary"], w, 1, 600, seed).success_rate for w in ID_WIDTHS]
    assert all(a >= b for a, b in zip(rates, rates[1:]))


def test_premature_creation_needs_party_creation(suite):
    with pytest.raises(InapplicableAttack):
        premature_creation_attack(suite["virtual-currency"], "sequential", trials=1)


def test_premature_creation_deterministic(suite):
    a = premature_creation_attack(suite["diamond-notary"], "random8", 0, 3000, seed=9)
    assert a == premature_creation_attack(suite["diamond-notary"], "random8", 0, 3000, seed=9)


def test_premature_success_only_without_creation_criterion(suite):
    for name, s in suite.items():
        try:
            out = premature_creation_attack(s, "sequential", 1, 20)
        except InapplicableAttack:
            continue
        if out.successes:
            assert not check_object_creation_criterion(s.spec).met, name


# -- sybil voting ---------------------------------------------------------------------

@pytest.mark.parametrize("bogus,rate", [(11, 1.0), (5, 0.0), (10, 0.0)])
def test_sybil_majority_arithmetic(suite, bogus, rate):
    out = sybil_vote_attack(suite["diamond-notary"], 10, bogus, 50, engine=PermissionlessChain())
    assert out.success_rate == rate


def test_sybil_blocked_by_fixed_membership(suite):
    with pytest.raises(InapplicableAttack):
        sybil_vote_attack(suite["diamond-notary"], engine=PermissionedQuorum())


def test_sybil_needs_a_creation_vote(suite):
    s = suite["virtual-currency"]
    fixed = replace(s, spec=replace(s.spec, creation_mode=Predefined()))
    with pytest.raises(InapplicableAttack):
        sybil_vote_attack(fixed)


# -- lying oracle ------------------------------------------------------------------------

def test_doubled_meter_reading_diverges_payment(suite):
    meter = ObjectId("meter", 3)
    s = suite["energy-trading"]
    truth = s.world.fact(meter, "produced_kwh", 0)
    diverged = lying_oracle_attack(s, {("smart-meter", meter, "produced_kwh"): 2 * truth})
    assert diverged == ["payment-matches-production"]


@pytest.mark.parametrize("name", ["energy-trading", "location-tracking", "supply-chain", "diamond-notary"])
def test_empty_override_no_divergence(suite, name):
    assert lying_oracle_attack(suite[name], {}) == []


def test_forged_arrival_triggers_payment(suite):
    diverged = lying_oracle_attack(suite["location-tracking"], {("gps", "container3", "location"): "port-b"})
    assert "payment-only-on-arrival" in diverged


@pytest.mark.parametrize("name", ["virtual-currency", "inter-bank"])
def test_lying_oracle_needs_an_external_predicate(suite, name):
    with pytest.raises(InapplicableAttack):
        lying_oracle_attack(suite[name], {})


def test_override_forms_are_equivalent(suite):
    s = suite["energy-trading"]
    meter = ObjectId("meter", 3)
    a = lying_oracle_attack(s, {(meter, "produced_kwh"): 80})
    b = lying_oracle_attack(s, [("smart-meter", "meter3", "produced_kwh", 80)])
    assert a == b == ["payment-matches-production"]


def test_divergence_only_without_internal_criterion(suite):
    for name, s in suite.items():
        try:
            diverged = lying_oracle_attack(s, {}, rounds=120)
        except InapplicableAttack:
            assert check_internal_predicate_criterion(s.spec).met, name
            continue
        if diverged:
            assert not check_internal_predicate_criterion(s.spec).met, name
