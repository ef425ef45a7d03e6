import pytest

from ledgerlab.ledger import ObjectId, PartyId, Payload, PayloadKind, make_record
from ledgerlab.suite import load_suite

A = PartyId(1, "alice")
B = PartyId(2, "bob")
C = PartyId(3, "carol")


def transfer(index, obj, src, dst, amount=1, nonce=None):
    return make_record(index, [src, dst], [obj], Payload.of(PayloadKind.TRANSFER, {
        "amount": amount, "from": src.id, "to": dst.id}), src, index if nonce is None else nonce)


def create(index, obj, owner, proposer=None, nonce=None, **attrs):
    proposer = proposer or owner
    attrs.update(object_id=str(obj), owner=owner.id)
    return make_record(index, [proposer], [obj], Payload.of(PayloadKind.CREATE, attrs), proposer,
                       index if nonce is None else nonce)


@pytest.fixture
def parties():
    return A, B, C


@pytest.fixture
def coin0():
    return ObjectId("coin", 0)


@pytest.fixture(scope="session")
def suite():
    scenarios, errors = load_suite()
    assert not errors
    return {s.name: s for s in scenarios}
