"""Acceptance criteria, one test each. Every test prints a PASS/FAIL line
with its measurement and runtime before asserting."""

import random
import time

import pytest

from ledgerlab.consensus import NetworkConfig, PermissionedQuorum, PermissionlessChain, run_consensus
from ledgerlab.criteria import check_internal_predicate_criterion, check_object_creation_criterion
from ledgerlab.ledger import ObjectId
from ledgerlab.monitors import check_termination
from ledgerlab.suite import (
    ID_WIDTHS, lying_oracle_attack, premature_creation_attack, run_scenario, toggled, verdict_matrix,
)
from ledgerlab.validation import Noisy, Oracle, WorldModel, query_oracle

ENGINES = (PermissionlessChain, PermissionedQuorum)

# (object creation, internal predicate) per bundled use case
EXPECTED_MATRIX = {
    "virtual-currency": ("met", "met"),
    "diamond-notary": ("not met", "not met"),
    "inter-bank": ("not met", "met"),
    "insurance-specific": ("not met", "not met"),
    "insurance-generic": ("met", "not met"),
    "energy-trading": ("not met", "not met"),
    "supply-chain": ("configurable", "not met"),
    "location-tracking": ("configurable", "not met"),
}


@pytest.fixture
def verdict(capsys):
    def report(number, title, ok, detail, seconds, budget=None):
        within = budget is None or seconds < budget
        status = "PASS" if ok and within else "FAIL"
        limit = f" / {budget:g}s" if budget else ""
        with capsys.disabled():
            print(f"\n[{status}] criterion {number} {title}: {detail} ({seconds:.2f}s{limit})")
        assert ok, detail
        assert within, f"took {seconds:.2f}s, budget {budget}s"
    return report


def test_criterion_1_verdict_matrix(verdict):
    t0 = time.perf_counter()
    rows, errors = verdict_matrix()
    got = {r.name: r.cells()[1:3] for r in rows}
    elapsed = time.perf_counter() - t0
    wrong = {k: got.get(k) for k in EXPECTED_MATRIX if got.get(k) != EXPECTED_MATRIX[k]}
    ok = not errors and not wrong and set(got) == set(EXPECTED_MATRIX)
    verdict(1, "verdict matrix", ok, f"{len(rows)} rows, mismatches {wrong or 'none'}", elapsed, 1)


def test_criterion_2_consensus_safety(verdict):
    t0 = time.perf_counter()
    counts = {}
    for c in (6, 0):
        counts[c] = [run_consensus(NetworkConfig(20, 0.10, 0, seed), PermissionlessChain(), [], 10_000,
                                   confirmation_depth=c).report.agreement_violations for seed in range(30)]
    elapsed = time.perf_counter() - t0
    safe = sum(counts[6])
    broken = sum(1 for n in counts[0] if n)
    ok = safe == 0 and broken >= 1
    verdict(2, "consensus safety", ok, f"c=6 violations {safe}; c=0 seeds with violations {broken}/30",
            elapsed, 30)


def test_criterion_3_validity_and_termination(verdict, suite):
    t0 = time.perf_counter()
    invalid, stalls, runs = 0, 0, 0
    for s in suite.values():
        for variant in [s] + toggled(s):
            for engine in ENGINES:
                rep = run_scenario(variant, engine=engine()).consensus
                invalid += rep.validity_violations
                stalls += len(check_termination(rep.progress, rep.honest_activity))
                runs += 1
    elapsed = time.perf_counter() - t0
    verdict(3, "validity and termination", invalid == 0 and stalls == 0,
            f"{runs} runs, validity violations {invalid}, stalled windows {stalls}", elapsed, 10)


def test_criterion_4_attack_linkage(verdict, suite):
    t0 = time.perf_counter()
    notary = suite["diamond-notary"]
    seq = premature_creation_attack(notary, "sequential", 1, 1000, seed=0)
    wide = premature_creation_attack(notary, "random128", 1, 100_000, seed=0)
    rates = [premature_creation_attack(notary, w, 1, 20_000, seed=0).success_rate for w in ID_WIDTHS]
    elapsed = time.perf_counter() - t0
    monotone = all(a >= b for a, b in zip(rates, rates[1:]))
    ok = seq.success_rate == 1.0 and wide.successes == 0 and monotone
    detail = (f"sequential rate {seq.success_rate}, random128 successes {wide.successes}/100000, "
              f"rates by width {dict(zip(ID_WIDTHS, rates))}")
    verdict(4, "attack linkage", ok, detail, elapsed, 20)


def test_criterion_5_audit_biconditional(verdict, suite):
    t0 = time.perf_counter()
    problems = []
    for s in suite.values():
        for engine in ENGINES:
            eng = engine()
            audit = run_scenario(s, engine=eng).audit
            both = (check_object_creation_criterion(s.spec, eng).met
                    and check_internal_predicate_criterion(s.spec).met)
            if (not audit.trusted_entities) != both:
                problems.append(f"{s.name}/{eng.name}: trusted {len(audit.trusted_entities)}, both met {both}")
            for p in s.spec.bound_predicates():
                if p.internal == (p.name in audit.queried_predicates):
                    problems.append(f"{s.name}/{eng.name}: {p.name} internal={p.internal} "
                                    f"queried={p.name in audit.queried_predicates}")
    elapsed = time.perf_counter() - t0
    verdict(5, "audit biconditional", not problems, "; ".join(problems) or f"{2 * len(suite)} runs consistent",
            elapsed, 10)


def test_criterion_6_determinism(verdict, suite):
    t0 = time.perf_counter()
    differing, pairs = [], 0
    for s in suite.values():
        for variant in [s] + toggled(s):
            for engine in ENGINES:
                a = run_scenario(variant, engine=engine()).log.text()
                b = run_scenario(variant, engine=engine()).log.text()
                pairs += 1
                if a != b:
                    differing.append(f"{variant.name}/{engine.__name__}")
    elapsed = time.perf_counter() - t0
    verdict(6, "determinism", not differing, f"{pairs} pairs, differing {differing or 'none'}", elapsed)


def test_criterion_7_oracle_properties(verdict, suite):
    t0 = time.perf_counter()
    box = ObjectId("container", 7)
    world = WorldModel({(box, "sealed"): True})
    noisy = Oracle("seal", frozenset({"sealed"}), Noisy(0.25))
    rng = random.Random(0xD15EA5E)
    rate = sum(query_oracle(noisy, world, box, "sealed", rng) is not True for _ in range(10_000)) / 10_000
    energy = suite["energy-trading"]
    meter = ObjectId("meter", 3)
    doubled = 2 * energy.world.fact(meter, "produced_kwh", 0)
    diverged = lying_oracle_attack(energy, {("smart-meter", meter, "produced_kwh"): doubled})
    elapsed = time.perf_counter() - t0
    ok = abs(rate - 0.25) <= 0.02 and "payment-matches-production" in diverged
    verdict(7, "oracle properties", ok, f"noisy flip rate {rate:.4f}, doubled meter diverges {diverged}", elapsed)
