"""Runtime checks for agreement, validity and termination of a consensus run."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, List, NamedTuple, Sequence

from .eventlog import EventLog, parse_event
from .ledger import PartyId, Record, RecordSequence, parse_record

DEFAULT_WINDOW = 50


@dataclass(frozen=True)
class MaintainerView:
    maintainer: PartyId
    chain: RecordSequence
    confirmation_depth: int = 6
    honest: bool = True


class AgreementViolation(NamedTuple):
    first: PartyId
    second: PartyId
    index: int


class ValidityViolation(NamedTuple):
    index: int
    key: tuple


def decided_prefix(view: MaintainerView) -> RecordSequence:
    keep = max(0, len(view.chain) - view.confirmation_depth)
    return view.chain[:keep]


def check_agreement(views: Sequence[MaintainerView]) -> List[AgreementViolation]:
    """Pairwise prefix consistency of the honest views' decided prefixes.

    The same maintainer may appear several times (snapshots from different
    rounds); agreement has to hold across time as well.
    """
    honest = [(v.maintainer, decided_prefix(v)) for v in views if v.honest]
    out = []
    for (a, sa), (b, sb) in combinations(honest, 2):
        for i in range(min(len(sa), len(sb))):
            if sa[i] != sb[i]:
                out.append(AgreementViolation(a, b, i))
    return out


def check_validity(decided: RecordSequence, proposal_log: Iterable[Record]) -> List[ValidityViolation]:
    """Decided records that match no proposal. ``proposal_log`` may also be a
    prebuilt set of ``Record.content()`` tuples."""
    if isinstance(proposal_log, (set, frozenset)):
        proposed = proposal_log
    else:
        proposed = {r.content() for r in proposal_log}
    return [ValidityViolation(r.index, r.key) for r in decided if r.content() not in proposed]


def proposals_from_log(log: EventLog) -> List[Record]:
    """Every record that entered a run as a proposal (or as genesis history)."""
    out = []
    for line in log.lines:
        ev = parse_event(line)
        if ev.event in ("submit", "genesis"):
            out.append(parse_record(ev.detail))
    return out


def check_termination(progress: Sequence[int], activity: Iterable[int],
                      window: int = DEFAULT_WINDOW) -> List[int]:
    """Start rounds of windows that saw honest activity but no decided growth.

    ``progress[0]`` is the shortest honest decided prefix before the first
    round and ``progress[r + 1]`` the same after round ``r``. ``activity``
    lists the rounds in which an honest maintainer produced a block or led a
    quorum proposal.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    rounds = len(progress) - 1
    active = [0] * (rounds + 1)
    for r in activity:
        if 0 <= r < rounds:
            active[r + 1] = 1
    for i in range(1, rounds + 1):
        active[i] += active[i - 1]
    bad = []
    for start in range(0, rounds - window + 1):
        end = start + window
        if active[end] == active[start]:
            continue
        if progress[end] <= progress[start]:
            bad.append(start)
    return bad
