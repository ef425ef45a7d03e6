"""Proposal generation for scenario runs."""

from __future__ import annotations

import random
from typing import Dict, List, Optional

from ..consensus import Submission
from ..errors import SpecError
from ..eventlog import derive_seed
from ..ledger import ObjectId, PartyId, Payload, PayloadKind, Record, make_record
from ..validation import LedgerState, OracleFeed
from .loader import Generator, Scenario, WorkItem

PARTY_ATTRIBUTES = ("from", "to", "claimant", "owner")
GENERATOR_NONCE_BASE = 1 << 40


def _party_index(scenario: Scenario) -> Dict[int, PartyId]:
    return {p.party_id.id: p.party_id for p in scenario.spec.parties}


def _group(scenario: Scenario, ref: str) -> List[PartyId]:
    """Resolve ``@group*`` or ``@label`` against the scenario's parties."""
    if not ref.startswith("@"):
        raise SpecError(f"party reference must start with '@': {ref!r}")
    body = ref[1:]
    out = []
    for p in scenario.spec.parties:
        label = p.party_id.label
        if body.endswith("*"):
            stem = body[:-1]
            if label.startswith(stem) and label[len(stem):].isdigit():
                out.append(p.party_id)
        elif label == body:
            out.append(p.party_id)
    if not out:
        raise SpecError(f"no party matches {ref!r}")
    return out


def build_record(item: WorkItem, nonce: int, parties: Dict[int, PartyId],
                 feeds: Optional[Dict[str, OracleFeed]] = None) -> Record:
    attrs = {}
    for k, v in item.attributes:
        if isinstance(v, str) and v.startswith("$oracle:"):
            name, _, prop = v[len("$oracle:"):].partition("/")
            if not item.objects:
                raise SpecError(f"{v} needs an object to read")
            if feeds is None or name not in feeds:
                raise SpecError(f"workload reads unknown oracle {name!r}")
            v = feeds[name].query(item.objects[0], prop)
            if v is None:
                raise SpecError(f"oracle {name} has no value for {item.objects[0]}.{prop}")
        attrs[k] = v
    involved = [item.proposer]
    for key in PARTY_ATTRIBUTES:
        v = attrs.get(key)
        if isinstance(v, int) and not isinstance(v, bool) and v in parties:
            involved.append(parties[v])
    return make_record(0, involved, item.objects, Payload.of(item.kind, attrs), item.proposer, nonce)


class RandomTransfers:
    """Every ``every`` rounds from ``start``, moves one object held by a
    member of ``among`` to another member, ``count`` times in total. Only
    (object, holder) pairs that have never been spent are used, so the
    transfers are valid under double-spend rules."""

    def __init__(self, scenario: Scenario, gen: Generator, seed: int):
        self.count = int(gen.param("count", 10))
        self.every = max(1, int(gen.param("every", 5)))
        self.start = int(gen.param("start", 1))
        self.amount = int(gen.param("amount", 1))
        self.among = _group(scenario, gen.param("among", "@" + scenario.spec.parties[0].party_id.label))
        self.members = {p.id for p in self.among}
        self.parties = _party_index(scenario)
        self.seed = seed
        self.issued = 0
        self.used = set()

    def __call__(self, round_: int, state: LedgerState) -> List[Submission]:
        if self.issued >= self.count or round_ < self.start or (round_ - self.start) % self.every:
            return []
        choices = []
        for oid in sorted(state.holders):
            holder = state.holders[oid]
            if holder not in self.members or (oid, holder) in self.used:
                continue
            if (PayloadKind.TRANSFER, holder, oid) in state.spends:
                continue
            if state.balances.get(holder, 0) < self.amount:
                continue
            choices.append((oid, holder))
        if not choices:
            return []
        rng = random.Random(derive_seed(self.seed, "random-transfers", round_))
        oid, holder = rng.choice(choices)
        to = rng.choice([p for p in self.among if p.id != holder])
        self.used.add((oid, holder))
        item = WorkItem(round_, self.parties[holder], PayloadKind.TRANSFER, (oid,),
                        (("amount", self.amount), ("from", holder), ("to", to.id)))
        rec = build_record(item, GENERATOR_NONCE_BASE + self.issued, self.parties)
        self.issued += 1
        return [Submission(rec, round_)]


GENERATORS = {"random-transfers": RandomTransfers}


def make_generator(scenario: Scenario, gen: Generator, seed: int):
    try:
        return GENERATORS[gen.kind](scenario, gen, seed)
    except KeyError:
        raise SpecError(f"unknown workload generator {gen.kind!r}") from None
