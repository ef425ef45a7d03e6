"""Value types for parties, objects and records, plus the append-only sequence.

Everything here is an immutable value. Records keep their parties and objects
as sorted tuples so that iteration order (and therefore every log line derived
from it) does not depend on hash seeds.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Mapping, Optional, Union

from .errors import IndexGap, MalformedPayload

Scalar = Union[int, bool, str]

MAX_OBJECT_BITS = 256
MAX_STRING_LEN = 64
_FORBIDDEN_CHARS = set("|,=\n\r")
_INT_RE = re.compile(r"^-?\d+$")


class Role(enum.Enum):
    PARTICIPANT = "participant"
    MAINTAINER = "maintainer"


@dataclass(frozen=True, order=True)
class PartyId:
    id: int
    label: str = field(default="", compare=False)

    def __str__(self):
        return self.label or f"p{self.id}"


# Creator of genesis objects. Never proposes records after genesis.
SYSTEM = PartyId(0, "system")


@dataclass(frozen=True)
class Party:
    party_id: PartyId
    roles: frozenset = frozenset({Role.PARTICIPANT})
    adversary: Optional[str] = None  # script name; None means honest

    @property
    def honest(self) -> bool:
        return self.adversary is None

    @property
    def is_maintainer(self) -> bool:
        return Role.MAINTAINER in self.roles


@dataclass(frozen=True, order=True)
class ObjectId:
    """Object identifier. ``bits == 0`` is the Sequential scheme, otherwise
    the value was drawn as ``bits`` random bits."""

    namespace: str
    value: int
    bits: int = 0

    def __post_init__(self):
        if self.bits < 0 or self.bits > MAX_OBJECT_BITS:
            raise ValueError(f"object id width {self.bits} outside 0..{MAX_OBJECT_BITS}")
        if self.value < 0:
            raise ValueError("object id value must be non-negative")
        limit = self.bits if self.bits else MAX_OBJECT_BITS
        if self.value >= 1 << limit:
            raise ValueError(f"object id value does not fit in {limit} bits")

    @property
    def sequential(self) -> bool:
        return self.bits == 0

    def __str__(self):
        if self.sequential:
            return f"{self.namespace}{self.value}"
        return f"{self.namespace}@{self.bits}:{self.value:x}"

    @classmethod
    def parse(cls, text: str) -> "ObjectId":
        m = re.fullmatch(r"(.*?)@(\d+):([0-9a-f]+)", text)
        if m:
            return cls(m.group(1), int(m.group(3), 16), int(m.group(2)))
        m = re.fullmatch(r"(.*?)(\d+)", text)
        if not m:
            raise ValueError(f"not an object id: {text!r}")
        return cls(m.group(1), int(m.group(2)))


@dataclass(frozen=True)
class ObjectDescriptor:
    object_id: ObjectId
    created_at_index: Optional[int]  # None: defined at genesis
    creator: PartyId
    attributes: tuple = ()

    @property
    def genesis(self) -> bool:
        return self.created_at_index is None


class PayloadKind(enum.Enum):
    TRANSFER = "Transfer"
    CREATE = "Create"
    CLAIM = "Claim"
    ASSERT = "Assert"
    CONTRACT_INVOKE = "ContractInvoke"


REQUIRED_ATTRIBUTES = {
    PayloadKind.TRANSFER: ("amount", "from", "to"),
    PayloadKind.CREATE: ("object_id",),
    PayloadKind.CLAIM: ("object_id", "claimant"),
    PayloadKind.ASSERT: ("property-name", "asserted-value"),
    PayloadKind.CONTRACT_INVOKE: ("contract-name",),
}


def check_scalar(value) -> Scalar:
    if isinstance(value, bool) or isinstance(value, int):
        return value
    if isinstance(value, str):
        if not value or len(value) > MAX_STRING_LEN:
            raise MalformedPayload(f"string attribute must be 1..{MAX_STRING_LEN} chars: {value!r}")
        if _FORBIDDEN_CHARS & set(value):
            raise MalformedPayload(f"string attribute contains a separator: {value!r}")
        if _INT_RE.match(value) or value in ("true", "false"):
            raise MalformedPayload(f"string attribute would read back as another type: {value!r}")
        return value
    raise MalformedPayload(f"attribute values are int, bool or short str, got {type(value).__name__}")


def format_scalar(value: Scalar) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def parse_scalar(text: str) -> Scalar:
    if text == "true":
        return True
    if text == "false":
        return False
    if _INT_RE.match(text):
        return int(text)
    return text


@dataclass(frozen=True)
class Payload:
    kind: PayloadKind
    items: tuple = ()  # sorted (name, value) pairs

    @classmethod
    def of(cls, kind, attributes: Optional[Mapping[str, Scalar]] = None, **extra) -> "Payload":
        kind = PayloadKind(kind) if not isinstance(kind, PayloadKind) else kind
        attrs = dict(attributes or {})
        attrs.update(extra)
        for name, value in attrs.items():
            if not isinstance(name, str) or not name or _FORBIDDEN_CHARS & set(name):
                raise MalformedPayload(f"bad attribute name {name!r}")
            check_scalar(value)
        missing = [a for a in REQUIRED_ATTRIBUTES[kind] if a not in attrs]
        if missing:
            raise MalformedPayload(f"{kind.value} payload missing {', '.join(missing)}")
        return cls(kind, tuple(sorted(attrs.items())))

    @property
    def attributes(self) -> dict:
        return dict(self.items)

    def get(self, name, default=None):
        for key, value in self.items:
            if key == name:
                return value
        return default

    def __getitem__(self, name):
        for key, value in self.items:
            if key == name:
                return value
        raise KeyError(name)

    def __contains__(self, name):
        return any(key == name for key, _ in self.items)


@dataclass(frozen=True)
class Record:
    index: int
    parties: tuple  # sorted PartyId
    objects: tuple  # sorted ObjectId
    payload: Payload
    proposer: PartyId
    nonce: int

    @property
    def kind(self) -> PayloadKind:
        return self.payload.kind

    @property
    def key(self) -> tuple:
        """Logical signature: who proposed it and under which nonce."""
        return (self.proposer.id, self.nonce)

    def content(self) -> tuple:
        """Everything but the index; equal for a proposal and its decided copy."""
        return (self.parties, self.objects, self.payload, self.proposer, self.nonce)

    def at(self, index: int) -> "Record":
        return self if index == self.index else replace(self, index=index)


def make_record(index: int, parties: Iterable[PartyId], objects: Iterable[ObjectId],
                payload: Payload, proposer: PartyId, nonce: int) -> Record:
    if not isinstance(payload, Payload):
        raise MalformedPayload("payload must be a Payload")
    # Payload.of already validates; re-check in case the dataclass was built directly
    missing = [a for a in REQUIRED_ATTRIBUTES[payload.kind] if a not in payload]
    if missing:
        raise MalformedPayload(f"{payload.kind.value} payload missing {', '.join(missing)}")
    if index < 0:
        raise ValueError("record index must be non-negative")
    if nonce < 0:
        raise ValueError("nonce must be non-negative")
    return Record(index, tuple(sorted(set(parties))), tuple(sorted(set(objects))),
                  payload, proposer, nonce)


@dataclass(frozen=True)
class RecordSequence:
    records: tuple = ()

    def __len__(self):
        return len(self.records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return RecordSequence(self.records[item])
        return self.records[item]

    def append(self, record: Record) -> "RecordSequence":
        return append(self, record)

    def is_prefix_of(self, other: "RecordSequence") -> bool:
        n = len(self.records)
        return n <= len(other.records) and other.records[:n] == self.records

    @classmethod
    def from_records(cls, records: Iterable[Record]) -> "RecordSequence":
        seq = cls()
        for r in records:
            seq = append(seq, r)
        return seq


EMPTY = RecordSequence()


def append(seq: RecordSequence, r: Record) -> RecordSequence:
    if r.index != len(seq.records):
        raise IndexGap(f"record index {r.index} != sequence length {len(seq.records)}")
    return RecordSequence(seq.records + (r,))


def spender(r: Record) -> Optional[int]:
    """Party id that gives something up in ``r`` (transfer sender or claimant)."""
    if r.kind is PayloadKind.TRANSFER:
        return r.payload["from"]
    if r.kind is PayloadKind.CLAIM:
        return r.payload["claimant"]
    return None


def is_duplicate_transaction(seq: RecordSequence, r: Record) -> bool:
    who = spender(r)
    if who is None:
        return False
    objs = set(r.objects)
    for earlier in seq:
        if earlier.kind is r.kind and spender(earlier) == who and objs.intersection(earlier.objects):
            if earlier.key != r.key:
                return True
    return False


def object_registry(seq: RecordSequence) -> dict:
    """ObjectId -> ObjectDescriptor for every Create in ``seq`` (first one wins)."""
    out = {}
    for r in seq:
        if r.kind is not PayloadKind.CREATE:
            continue
        oid = ObjectId.parse(r.payload["object_id"])
        if oid in out:
            continue
        genesis = r.proposer == SYSTEM
        attrs = tuple((k, v) for k, v in r.payload.items if k != "object_id")
        out[oid] = ObjectDescriptor(oid, None if genesis else r.index, r.proposer, attrs)
    return out


# -- event-log lines ---------------------------------------------------------

def format_record(r: Record) -> str:
    attrs = ",".join(f"{k}={format_scalar(v)}" for k, v in r.payload.items)
    parties = ",".join(str(p.id) for p in r.parties)
    objects = ",".join(str(o) for o in r.objects)
    return f"{r.index}|{r.proposer.id}|{r.kind.value}|{parties}|{objects}|{attrs}|{r.nonce}"


def parse_record(line: str, labels: Optional[Mapping[int, str]] = None) -> Record:
    labels = labels or {}
    parts = line.rstrip("\n").split("|")
    if len(parts) != 7:
        raise ValueError(f"record line needs 7 fields, got {len(parts)}: {line!r}")
    index, proposer, kind, parties, objects, attrs, nonce = parts

    def pid(text):
        n = int(text)
        return PartyId(n, labels.get(n, ""))

    attributes = {}
    if attrs:
        for pair in attrs.split(","):
            k, _, v = pair.partition("=")
            attributes[k] = parse_scalar(v)
    return make_record(
        int(index),
        [pid(p) for p in parties.split(",") if p],
        [ObjectId.parse(o) for o in objects.split(",") if o],
        Payload.of(kind, attributes),
        pid(proposer),
        int(nonce),
    )
