"""Built-in adversary scripts for the consensus engines.

A script is plain configuration; each engine interprets it:

* ``withholder``: the adversarial maintainers mine (or stay silent, as quorum
  leaders) on a private fork and release it once it reverts records the
  honest maintainers already consider decided.
* ``equivocator``: sends conflicting blocks/proposals to different halves of
  the network and votes for everything.
* ``censor``: follows the protocol but never includes the targeted proposals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .errors import ConfigError


@dataclass(frozen=True)
class Withholder:
    name = "withholder"
    # Abandon the private fork once it trails the public tip by this many blocks.
    giveup: int = 8
    # Extra public depth beyond c required before releasing (0: release as soon
    # as the fork would revert at least one decided record).
    margin: int = 0


@dataclass(frozen=True)
class Equivocator:
    name = "equivocator"


@dataclass(frozen=True)
class Censor:
    name = "censor"
    # Proposer ids whose records are dropped. Empty means every participant
    # proposal is dropped (the adversary only ever produces empty blocks).
    targets: frozenset = frozenset()

    def drops(self, record) -> bool:
        return not self.targets or record.proposer.id in self.targets


AdversaryScript = Union[Withholder, Equivocator, Censor]

BUILTIN = {
    "withholder": Withholder,
    "equivocator": Equivocator,
    "censor": Censor,
}

# Behaviour of adversarial maintainers when no script is named.
DEFAULT_SCRIPT = "censor"


def make_adversary(spec: Optional[Union[str, AdversaryScript]]) -> AdversaryScript:
    if spec is None:
        spec = DEFAULT_SCRIPT
    if isinstance(spec, str):
        try:
            return BUILTIN[spec]()
        except KeyError:
            raise ConfigError(f"unknown adversary script {spec!r}; known: {', '.join(sorted(BUILTIN))}") from None
    if isinstance(spec, (Withholder, Equivocator, Censor)):
        return spec
    raise ConfigError(f"not an adversary script: {spec!r}")
