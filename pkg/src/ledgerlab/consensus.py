"""Two consensus engines over a simulated synchronous-round network.

``PermissionlessChain`` is a longest-chain protocol with probabilistic block
production: every maintainer independently produces a block in a round with
probability ``block_probability_per_round / n``. Each block carries exactly one
record, so a chain is a RecordSequence. ``PermissionedQuorum`` rotates a
leader round-robin and decides a record as soon as ``ceil(q * n)`` votes for
it are seen.

Both engines write the same log format and feed the same monitors.
"""

from __future__ import annotations

import bisect
import hashlib
import logging
import math
import random
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, List, NamedTuple, Optional, Sequence, Union

from .adversaries import Censor, Equivocator, Withholder, make_adversary
from .errors import ConfigError
from .eventlog import EventLog, derive_seed
from .ledger import (
    SYSTEM, PartyId, Payload, PayloadKind, Record, RecordSequence, format_record, make_record,
)
from .monitors import (
    AgreementViolation, MaintainerView, ValidityViolation, check_validity, decided_prefix,
)

log = logging.getLogger(__name__)

DEFAULT_SEED = 0xD15EA5E
DEFAULT_CONFIRMATION_DEPTH = 6
MAINTAINER_BASE = 10_000
EMPTY_BLOCK_CONTRACT = "empty-block"

__all__ = [
    "NetworkConfig", "PermissionlessChain", "PermissionedQuorum", "Submission",
    "ConsensusMonitorReport", "ConsensusRun", "MaintainerView", "run_consensus",
    "decided_prefix", "is_empty_block", "DEFAULT_SEED",
]


@dataclass(frozen=True)
class NetworkConfig:
    num_maintainers: int = 7
    adversary_power: float = 0.0
    delay_rounds: int = 0
    seed: int = DEFAULT_SEED

    def validate(self):
        if self.num_maintainers < 1:
            raise ConfigError("the maintainer set is empty")
        if not 0.0 <= self.adversary_power <= 1.0:
            raise ConfigError(f"adversary_power {self.adversary_power} outside [0, 1]")
        if self.delay_rounds < 0:
            raise ConfigError("delay_rounds must be non-negative")
        if not 0 <= self.seed < 1 << 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.num_adversaries() >= self.num_maintainers:
            raise ConfigError("every run needs at least one honest maintainer")
        if self.adversary_power >= 0.5:
            warnings.warn(f"adversary_power {self.adversary_power} is not an honest-majority setting",
                          stacklevel=3)

    def num_adversaries(self) -> int:
        return int(math.floor(self.adversary_power * self.num_maintainers + 1e-9))


@dataclass(frozen=True)
class PermissionlessChain:
    block_probability_per_round: float = 0.5
    name = "permissionless"
    default_depth = DEFAULT_CONFIRMATION_DEPTH

    def __post_init__(self):
        if not 0.0 < self.block_probability_per_round <= 1.0:
            raise ConfigError("block_probability_per_round must be in (0, 1]")


@dataclass(frozen=True)
class PermissionedQuorum:
    quorum_fraction: Fraction = Fraction(2, 3)
    name = "permissioned"
    default_depth = 0  # a quorum decision is final

    def __post_init__(self):
        q = self.quorum_fraction
        if not isinstance(q, Fraction):
            q = Fraction(str(q)).limit_denominator(1000)
            object.__setattr__(self, "quorum_fraction", q)
        if not Fraction(1, 2) < q <= 1:
            raise ConfigError("quorum_fraction must be in (1/2, 1]")

    def threshold(self, n: int) -> int:
        return math.ceil(self.quorum_fraction * n)


ConsensusEngineKind = Union[PermissionlessChain, PermissionedQuorum]


@dataclass(frozen=True)
class Submission:
    record: Record
    round: int = 0


@dataclass(frozen=True)
class ConsensusMonitorReport:
    agreement_violations: int
    validity_violations: int
    rounds_without_progress: int
    agreement_details: tuple = ()
    validity_details: tuple = ()
    # progress[0] is before round 0, progress[r + 1] after round r
    progress: tuple = ()
    honest_activity: tuple = ()


class ConsensusRun(NamedTuple):
    views: List[MaintainerView]
    report: ConsensusMonitorReport
    log: EventLog


Validator = Callable[[RecordSequence, Record], bool]
Feeder = Callable[[int, RecordSequence], Iterable[Union[Submission, Record]]]


_EMPTY_BLOCK = Payload.of(PayloadKind.CONTRACT_INVOKE, {"contract-name": EMPTY_BLOCK_CONTRACT})


def is_empty_block(r: Record) -> bool:
    return r.kind is PayloadKind.CONTRACT_INVOKE and r.payload["contract-name"] == EMPTY_BLOCK_CONTRACT


def _maintainers(cfg: NetworkConfig):
    k = cfg.num_adversaries()
    n = cfg.num_maintainers
    return [(PartyId(MAINTAINER_BASE + i, f"m{i}"), i < n - k) for i in range(n)]


# -- shared bookkeeping ------------------------------------------------------

class _Pool:
    """Released proposals in release order."""

    def __init__(self):
        self.records: List[Record] = []
        self.position = {}

    def add(self, record: Record) -> bool:
        if record.key in self.position:
            return False
        self.position[record.key] = len(self.records)
        self.records.append(record)
        return True


class _Monitor:
    """Tracks the first decided value per index across all honest maintainers."""

    def __init__(self, log_: EventLog):
        self.log = log_
        self.first = {}  # index -> (record key, maintainer)
        self.violations: List[tuple] = []

    def decided(self, round_, who: PartyId, index: int, record: Record):
        seen = self.first.get(index)
        if seen is None:
            self.first[index] = (record.key, who)
        elif seen[0] != record.key:
            self.violation(round_, who, seen[1], index)

    def violation(self, round_, who: PartyId, other: PartyId, index: int):
        self.violations.append((round_, who, other, index))
        self.log.emit(round_, who.id, "violation", f"index={index} other={other.id}")


class _Run:
    def __init__(self, cfg, engine, proposals, rounds, depth, script, validator, feeder, initial, log_):
        self.cfg = cfg
        self.engine = engine
        self.rounds = rounds
        self.depth = depth
        self.script = script
        self.validator = validator
        self.feeder = feeder
        self.initial = initial
        self.log = log_
        self.rng = random.Random(derive_seed(cfg.seed, "consensus", engine.name))
        self.pool = _Pool()
        self.schedule = {}
        self.proposal_order = 0
        for item in proposals:
            self._schedule(item, 0)
        self.monitor = _Monitor(log_)
        self.progress = []
        self.activity = []
        self.proposed: List[Record] = list(initial)

    def _schedule(self, item, now):
        sub = item if isinstance(item, Submission) else Submission(item, now)
        self.schedule.setdefault(max(sub.round, now), []).append(sub.record)

    def release(self, round_, decided_view: Callable[[], RecordSequence]):
        if self.feeder is not None:
            for item in self.feeder(round_, decided_view()):
                self._schedule(item, round_)
        for record in self.schedule.pop(round_, ()):
            if self.pool.add(record):
                self.proposed.append(record)
                self.log.emit(round_, record.proposer.id, "submit", format_record(record))

    def valid(self, seq_fn, record: Record) -> bool:
        if self.validator is None:
            return True
        return bool(self.validator(seq_fn(), record))


# -- permissionless chain ----------------------------------------------------

class _Block:
    __slots__ = ("digest", "parent", "height", "record", "producer", "round")

    def __init__(self, digest, parent, height, record, producer, round_):
        self.digest = digest
        self.parent = parent
        self.height = height
        self.record = record
        self.producer = producer
        self.round = round_


class _ChainNode:
    def __init__(self, slot, pid, honest, tip):
        self.slot = slot
        self.pid = pid
        self.honest = honest
        self.tip = tip
        self.included = set()
        self.cursor = 0  # pool positions below this are either included or in ``pending``
        self.pending = []  # sorted pool positions seen but not included
        self.decided_tip = tip
        self.observed = None
        self.fillers = 0


def _ancestor(block, height):
    while block.height > height:
        block = block.parent
    return block


def _fork_point(a, b):
    while a.height > b.height:
        a = a.parent
    while b.height > a.height:
        b = b.parent
    while a is not b:
        a, b = a.parent, b.parent
    return a


class _ChainRun(_Run):
    def setup(self):
        self.root = _Block("0" * 16, None, 0, None, SYSTEM, -1)
        tip = self.root
        for r in self.initial:
            tip = self._new_block(tip, r, SYSTEM, -1)
        self.genesis_tip = tip
        self.nodes = [_ChainNode(i, pid, honest, tip) for i, (pid, honest) in enumerate(_maintainers(self.cfg))]
        start = _ancestor(tip, max(0, tip.height - self.depth))
        for node in self.nodes:
            node.included = {b.record.key for b in self._path(self.root, tip)}
            node.decided_tip = start
        self.honest = [n for n in self.nodes if n.honest]
        self.private = tip if isinstance(self.script, Withholder) else None
        self.q = self.engine.block_probability_per_round / len(self.nodes)
        # Each maintainer's production times form a Bernoulli(q) process per
        # round; sampling the gaps geometrically costs one draw per block.
        self.log_miss = math.log1p(-self.q) if self.q < 1.0 else None
        self.mining = {}
        for node in self.nodes:
            self._schedule_mining(node.slot, 0)
        self.inbox = {}
        self._seq_cache = {}
        # height -> (first block an honest maintainer decided there, who)
        self.first_decided = {}

    def _schedule_mining(self, slot, start):
        gap = 0
        if self.log_miss is not None:
            gap = int(math.log(1.0 - self.rng.random()) / self.log_miss)
        due = start + gap
        bucket = self.mining.setdefault(due, [])
        bucket.append(slot)
        bucket.sort()

    def _new_block(self, parent, record, producer, round_, variant=""):
        record = record.at(parent.height)
        h = hashlib.blake2b(digest_size=8)
        h.update(f"{self.cfg.seed}|{parent.digest}|{producer.id}|{round_}|{record.key}|{variant}".encode())
        return _Block(h.hexdigest(), parent, parent.height + 1, record, producer, round_)

    @staticmethod
    def _path(ancestor, tip):
        out = []
        while tip is not ancestor:
            out.append(tip)
            tip = tip.parent
        out.reverse()
        return out

    def chain_of(self, tip) -> RecordSequence:
        cache = self._seq_cache
        seq = cache.get(tip.digest)
        if seq is not None:
            return seq
        blocks = []
        base = tip
        while base is not self.root:
            hit = cache.get(base.digest)
            if hit is not None:
                break
            blocks.append(base)
            base = base.parent
        prefix = hit.records if base is not self.root else ()
        seq = RecordSequence(prefix + tuple(b.record for b in reversed(blocks)))
        if len(cache) > 512:
            cache.clear()
        cache[tip.digest] = seq
        return seq

    def _switch(self, node, new_tip, round_):
        old = node.tip
        if new_tip.parent is old:  # plain extension, the common case
            node.included.add(new_tip.record.key)
            node.tip = new_tip
            self.log.emit(round_, node.pid.id, "adopt", f"height={new_tip.height} digest={new_tip.digest}")
            return
        fork = _fork_point(old, new_tip)
        removed = self._path(fork, old)
        for b in removed:
            node.included.discard(b.record.key)
            pos = self.pool.position.get(b.record.key)
            if pos is not None and pos < node.cursor:
                bisect.insort(node.pending, pos)
        for b in self._path(fork, new_tip):
            node.included.add(b.record.key)
        node.tip = new_tip
        detail = f"height={new_tip.height} digest={new_tip.digest}"
        if removed:
            detail += f" reorg={len(removed)}"
        self.log.emit(round_, node.pid.id, "adopt", detail)

    def _pick(self, node, round_, skip=()):
        pool = self.pool.records
        included = node.included
        for i in range(node.cursor, len(pool)):
            if pool[i].key not in included:
                node.pending.append(i)
        node.cursor = len(pool)
        node.pending = [i for i in node.pending if pool[i].key not in included]
        censor = self.script if (not node.honest and isinstance(self.script, Censor)) else None
        for i in node.pending:
            rec = pool[i]
            if rec.key in skip:
                continue
            if censor is not None and censor.drops(rec):
                continue
            if self.valid(lambda: self.chain_of(node.tip), rec.at(node.tip.height)):
                return rec
        return None

    def _filler(self, node, round_):
        rec = Record(0, (node.pid,), (), _EMPTY_BLOCK, node.pid, node.fillers)
        node.fillers += 1
        self.proposed.append(rec)
        self.log.emit(round_, node.pid.id, "submit", format_record(rec))
        return rec

    def _produce(self, node, parent, round_, record=None, variant=""):
        if record is None:
            record = self._filler(node, round_)
        blk = self._new_block(parent, record, node.pid, round_, variant)
        self.log.emit(round_, node.pid.id, "block",
                      f"height={blk.height} digest={blk.digest} parent={parent.digest} "
                      f"key={record.key[0]}:{record.key[1]}")
        return blk

    def _deliver(self, round_, block, targets):
        due = round_ + self.cfg.delay_rounds
        self.inbox.setdefault(due, []).append((block, frozenset(targets)))

    def _best_public(self):
        best = None
        for n in self.honest:
            t = n.tip
            if best is None or t.height > best.height or (t.height == best.height and t.digest < best.digest):
                best = t
        return best

    def _process_inbox(self, round_):
        arrivals = self.inbox.pop(round_, None)
        if not arrivals:
            return
        skip_adversary = isinstance(self.script, Withholder)
        for node in self.nodes:
            if skip_adversary and not node.honest:
                continue
            best = None
            for blk, targets in arrivals:
                if node.slot not in targets:
                    continue
                if best is None or blk.height > best.height or (
                        blk.height == best.height and blk.digest < best.digest):
                    best = blk
            if best is not None and best.height > node.tip.height:
                self._switch(node, best, round_)

    def _withholder_step(self, round_):
        pub = self._best_public()
        priv = self.private
        fork = _fork_point(priv, pub)
        if fork is priv:
            self.private = pub
            return
        public_branch = pub.height - fork.height
        if priv.height > pub.height and public_branch >= self.depth + 1 + self.script.giveup * 0 + self.script.margin:
            self.log.emit(round_, "adversary", "release",
                          f"tip={priv.digest} length={priv.height - fork.height} reverts={public_branch}")
            self._deliver(round_ - self.cfg.delay_rounds, priv, [n.slot for n in self.honest])
            self._process_inbox(round_)
        elif pub.height - priv.height >= self.script.giveup:
            self.private = pub

    def step(self, round_):
        self.release(round_, lambda: decided_prefix(
            MaintainerView(self.honest[0].pid, self.chain_of(self.honest[0].tip), self.depth)))
        everyone = range(len(self.nodes))
        for slot in self.mining.pop(round_, ()):
            node = self.nodes[slot]
            self._schedule_mining(slot, round_ + 1)
            if node.honest or isinstance(self.script, Censor):
                rec = self._pick(node, round_)
                blk = self._produce(node, node.tip, round_, rec)
                self._switch(node, blk, round_)
                self._deliver(round_, blk, [t for t in everyone if t != node.slot])
                if node.honest:
                    self.activity.append(round_)
            elif isinstance(self.script, Withholder):
                self.private = self._produce(node, self.private, round_)
            else:  # equivocator: two siblings, one per half of the network
                rec = self._pick(node, round_)
                a = self._produce(node, node.tip, round_, rec, "a")
                b = self._produce(node, node.tip, round_, None, "b")
                others = [t for t in everyone if t != node.slot]
                half = len(others) // 2
                self._switch(node, a, round_)
                self._deliver(round_, a, others[:half])
                self._deliver(round_, b, others[half:])
        self._process_inbox(round_)
        if self.private is not None:
            self._withholder_step(round_)
        self._observe(round_)

    def _observe(self, round_):
        lowest = None
        for node in self.honest:
            if node.observed is not node.tip:
                node.observed = node.tip
                d = _ancestor(node.tip, max(0, node.tip.height - self.depth))
                if d is not node.decided_tip:
                    if d.parent is node.decided_tip:
                        fresh = (d,)
                    else:
                        fresh = self._path(_fork_point(d, node.decided_tip), d)
                    first = self.first_decided
                    for b in fresh:
                        seen = first.get(b.height)
                        if seen is None:
                            first[b.height] = (b, node.pid)
                        elif seen[0] is not b and seen[0].record.key != b.record.key:
                            self.monitor.violation(round_, node.pid, seen[1], b.height - 1)
                    node.decided_tip = d
            h = node.decided_tip.height
            if lowest is None or h < lowest:
                lowest = h
        self.progress.append(lowest)

    def views(self):
        return [MaintainerView(n.pid, self.chain_of(n.tip), self.depth, n.honest) for n in self.nodes]

    def initial_progress(self):
        return max(0, self.genesis_tip.height - self.depth)


# -- permissioned quorum -----------------------------------------------------

class _QuorumNode:
    def __init__(self, pid, honest, chain):
        self.pid = pid
        self.honest = honest
        self.chain = chain
        self.included = {r.key for r in chain}
        self.cursor = 0
        self.decided_len = 0


class _QuorumRun(_Run):
    def setup(self):
        self.nodes = [_QuorumNode(pid, honest, RecordSequence(tuple(self.initial)))
                      for pid, honest in _maintainers(self.cfg)]
        self.honest = [n for n in self.nodes if n.honest]
        self.threshold = self.engine.threshold(len(self.nodes))
        self.in_flight = {}  # key -> decide round
        self.pending_decisions = {}  # round -> [(node, record)]
        for node in self.nodes:
            node.decided_len = max(0, len(node.chain) - self.depth)

    def _candidates(self, node, limit):
        pool = self.pool.records
        while node.cursor < len(pool) and pool[node.cursor].key in node.included:
            node.cursor += 1
        censor = self.script if (not node.honest and isinstance(self.script, Censor)) else None
        out = []
        for i in range(node.cursor, len(pool)):
            rec = pool[i]
            if rec.key in node.included or rec.key in self.in_flight:
                continue
            if censor is not None and censor.drops(rec):
                continue
            if self.valid(lambda: node.chain, rec.at(len(node.chain))):
                out.append(rec)
                if len(out) == limit:
                    break
        return out

    def _votes_for(self, node, rec) -> bool:
        if not node.honest:
            return not isinstance(self.script, Withholder)
        return rec.key not in node.included and self.valid(lambda: node.chain, rec.at(len(node.chain)))

    def step(self, round_):
        self.release(round_, lambda: decided_prefix(
            MaintainerView(self.honest[0].pid, self.honest[0].chain, self.depth)))
        leader = self.nodes[round_ % len(self.nodes)]
        if leader.honest or isinstance(self.script, Censor):
            props = self._candidates(leader, 1)
            if props:
                self._run_vote(round_, leader, {id(n): props[0] for n in self.nodes})
                if leader.honest:
                    self.activity.append(round_)
        elif isinstance(self.script, Equivocator):
            props = self._candidates(leader, 2)
            if props:
                a = props[0]
                b = props[1] if len(props) > 1 else props[0]
                half = len(self.nodes) // 2
                received = {id(n): (a if i < half else b) for i, n in enumerate(self.nodes)}
                self._run_vote(round_, leader, received)
        # a silent (withholding) leader proposes nothing
        self._apply_decisions(round_)
        self._observe(round_)

    def _run_vote(self, round_, leader, received):
        values = {}
        for rec in received.values():
            values.setdefault(rec.key, rec)
        for rec in values.values():
            self.log.emit(round_, leader.pid.id, "propose", f"key={rec.key[0]}:{rec.key[1]}")
        tally = {k: 0 for k in values}
        for node in self.nodes:
            mine = received[id(node)]
            for key, rec in values.items():
                if not node.honest:
                    ok = self._votes_for(node, rec)
                else:
                    ok = key == mine.key and self._votes_for(node, rec)
                if ok:
                    tally[key] += 1
                    self.log.emit(round_, node.pid.id, "vote", f"key={key[0]}:{key[1]}")
        winners = [k for k, v in tally.items() if v >= self.threshold]
        if not winners:
            return
        due = round_ + self.cfg.delay_rounds
        for node in self.nodes:
            mine = received[id(node)].key
            pick = mine if mine in winners else winners[0]
            self.pending_decisions.setdefault(due, []).append((node, values[pick]))
        for k in winners:
            self.in_flight[k] = due

    def _apply_decisions(self, round_):
        for node, rec in self.pending_decisions.pop(round_, ()):
            self.in_flight.pop(rec.key, None)
            if rec.key in node.included:
                continue
            placed = rec.at(len(node.chain))
            node.chain = node.chain.append(placed)
            node.included.add(rec.key)
            self.log.emit(round_, node.pid.id, "decide", f"index={placed.index} key={rec.key[0]}:{rec.key[1]}")

    def _observe(self, round_):
        lowest = None
        for node in self.honest:
            target = max(0, len(node.chain) - self.depth)
            for i in range(node.decided_len, target):
                self.monitor.decided(round_, node.pid, i, node.chain[i])
            node.decided_len = max(node.decided_len, target)
            lowest = target if lowest is None else min(lowest, target)
        self.progress.append(lowest)

    def views(self):
        return [MaintainerView(n.pid, n.chain, self.depth, n.honest) for n in self.nodes]

    def initial_progress(self):
        return max(0, len(self.initial) - self.depth)


# -- entry point -------------------------------------------------------------

def run_consensus(cfg: NetworkConfig, engine: ConsensusEngineKind,
                  proposals: Sequence[Union[Record, Submission]], rounds: int, *,
                  confirmation_depth: Optional[int] = None,
                  adversary=None,
                  validator: Optional[Validator] = None,
                  feeder: Optional[Feeder] = None,
                  initial: Optional[RecordSequence] = None,
                  log: Optional[EventLog] = None) -> ConsensusRun:
    """Run ``rounds`` synchronous rounds and return views, monitor report and log.

    ``proposals`` are released at round 0 unless wrapped in a Submission.
    ``validator(chain, record)`` is consulted before a maintainer includes
    or votes for a record. ``feeder(round, decided)`` may release further
    proposals at the start of each round; ``decided`` is the first honest
    maintainer's decided prefix. ``initial`` is history every maintainer
    starts from (genesis records).
    """
    cfg.validate()
    if rounds < 0:
        raise ConfigError("rounds must be non-negative")
    depth = engine.default_depth if confirmation_depth is None else confirmation_depth
    if depth < 0:
        raise ConfigError("confirmation depth must be non-negative")
    script = make_adversary(adversary) if cfg.num_adversaries() else None
    initial = initial or RecordSequence()
    out = log if log is not None else EventLog()
    out.header(seed=cfg.seed, engine=engine.name, c=depth)
    for pid, honest in _maintainers(cfg):
        out.emit(-1, pid.id, "maintainer", "honest" if honest else f"adversarial script={script.name}")
    for r in initial:
        out.emit(-1, r.proposer.id, "genesis", format_record(r))

    kind = _ChainRun if isinstance(engine, PermissionlessChain) else _QuorumRun
    run = kind(cfg, engine, proposals, rounds, depth, script, validator, feeder, initial, out)
    run.setup()
    run.progress.append(run.initial_progress())
    for r in range(rounds):
        run.step(r)

    views = run.views()
    proposed = {r.content() for r in run.proposed}
    validity, checked = [], set()
    for v in views:
        if v.honest and id(v.chain) not in checked:
            checked.add(id(v.chain))
            validity.extend(check_validity(decided_prefix(v), proposed))
    report = ConsensusMonitorReport(
        agreement_violations=len(run.monitor.violations),
        validity_violations=len(validity),
        rounds_without_progress=_longest_stall(run.progress),
        agreement_details=tuple(run.monitor.violations),
        validity_details=tuple(validity),
        progress=tuple(run.progress),
        honest_activity=tuple(run.activity),
    )
    return ConsensusRun(views, report, out)


def _longest_stall(progress: Sequence[int]) -> int:
    best = cur = 0
    for prev, now in zip(progress, progress[1:]):
        cur = cur + 1 if now <= prev else 0
        best = max(best, cur)
    return best
