"""Line-oriented event log shared by the engines and the scenario runner.

Header lines are ``key=value`` pairs separated by spaces; event lines are
``round|actor|event|detail``. ``detail`` may itself contain ``|`` (record
lines do), so parsing splits on the first three separators only.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, List


@dataclass(frozen=True)
class Event:
    round: int
    actor: str
    event: str
    detail: str

    def fields(self) -> dict:
        """Parse a ``k=v k=v`` detail into a dict (values stay strings)."""
        out = {}
        for token in self.detail.split(" "):
            k, sep, v = token.partition("=")
            if sep:
                out[k] = v
        return out


class EventLog:
    def __init__(self, headers: Iterable[str] = ()):
        self.headers: List[str] = list(headers)
        self.lines: List[str] = []

    def header(self, **fields):
        self.headers.append(" ".join(f"{k}={v}" for k, v in fields.items()))

    def emit(self, round_: int, actor, event: str, detail: str = ""):
        self.lines.append(f"{round_}|{actor}|{event}|{detail}")

    def text(self) -> str:
        return "".join(line + "\n" for line in self.headers + self.lines)

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()

    def events(self) -> List[Event]:
        return [parse_event(line) for line in self.lines]

    def __len__(self):
        return len(self.lines)


def parse_event(line: str) -> Event:
    round_, actor, event, detail = line.rstrip("\n").split("|", 3)
    return Event(int(round_), actor, event, detail)


def parse_header(line: str) -> dict:
    out = {}
    for token in line.split():
        k, _, v = token.partition("=")
        out[k] = v
    return out


def split_log(text: str):
    """Return (headers, events) from a serialized log."""
    headers, events = [], []
    for line in text.splitlines():
        if not line:
            continue
        if "|" in line:
            events.append(parse_event(line))
        else:
            headers.append(parse_header(line))
    return headers, events


def derive_seed(*parts) -> int:
    """Stable 64-bit sub-seed. Python's hash() is salted per process, so it
    cannot be used for anything that ends up in a log."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(str(p).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big")
