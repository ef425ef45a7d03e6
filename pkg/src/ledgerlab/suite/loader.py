"""Scenario files: YAML documents turned into a ``Scenario``.

Party references are written ``"@label"``; ``"@group*"`` expands to every
member of a party group. Object references are object-id strings such as
``coin3``. Every structural error is reported with file and line number.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import yaml

from ..criteria import ConsensusBased, PartyCreated, Predefined, UseCaseSpec
from ..errors import LedgerLabError, ScenarioParseError
from ..ledger import ObjectDescriptor, ObjectId, Party, PartyId, PayloadKind, Role, SYSTEM, check_scalar
from ..validation import (
    AppendRecord, ContractHook, CreateObject, External, Internal, Lies, Noisy, Oracle,
    PredicateDecl, Truthful, WorldModel,
)

PARTY_BASE = 1
DEFAULT_DIR = Path(__file__).resolve().parent.parent / "scenarios"
SCENARIO_DIR_ENV = "LEDGERLAB_SCENARIO_DIR"
SECTIONS = {
    "name", "description", "network", "parties", "creation", "genesis", "predicates",
    "validate", "goals", "world", "oracles", "contracts", "workload", "adversaries",
    "expected", "ledger_binding", "notes", "variants", "toggles",
}


# -- YAML with line numbers --------------------------------------------------

class _Map(dict):
    line = None


class _List(list):
    line = None


class _Loader(yaml.SafeLoader):
    pass


def _construct_map(loader, node):
    loader.flatten_mapping(node)
    out = _Map(loader.construct_pairs(node, deep=True))
    out.line = node.start_mark.line + 1
    return out


def _construct_seq(loader, node):
    out = _List(loader.construct_sequence(node, deep=True))
    out.line = node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_seq)


def _line(node, fallback=None):
    return getattr(node, "line", None) or fallback


# -- scenario types ----------------------------------------------------------

@dataclass(frozen=True)
class WorkItem:
    round: int
    proposer: PartyId
    kind: PayloadKind
    objects: tuple
    attributes: tuple  # (name, value) pairs; values may be "$oracle:<name>/<property>"
    world: tuple = ()  # (object, property, value) set when the item is submitted


@dataclass(frozen=True)
class Generator:
    kind: str
    params: tuple = ()

    def param(self, key, default=None):
        return dict(self.params).get(key, default)


@dataclass(frozen=True)
class AdversaryEntry:
    name: str
    party: Optional[PartyId]
    records: tuple = ()  # WorkItem
    oracle_overrides: tuple = ()  # (oracle, ObjectId, property, value)
    world: tuple = ()  # (round, ObjectId, property, value)
    script: Optional[str] = None  # consensus-level script for adversarial maintainers


@dataclass
class Scenario:
    spec: UseCaseSpec
    world: WorldModel
    adversaries: tuple
    expected: Tuple[Union[bool, str], bool]
    workload: tuple  # WorkItem
    generators: tuple = ()
    contracts: tuple = ()
    network: dict = field(default_factory=dict)
    notes: tuple = ()
    description: str = ""
    path: Optional[str] = None
    raw: Optional[dict] = None
    toggles: tuple = ()

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def configurable(self) -> bool:
        return self.expected[0] == "configurable"

    def without_adversaries(self) -> "Scenario":
        return replace(self, adversaries=())


# -- parsing helpers ---------------------------------------------------------

class _Ctx:
    def __init__(self, path):
        self.path = path
        self.labels: Dict[str, PartyId] = {}
        self.groups: Dict[str, List[PartyId]] = {}

    def fail(self, message, node=None, line=None):
        raise ScenarioParseError(message, self.path, _line(node, line))

    def require(self, mapping, key, node=None):
        if not isinstance(mapping, dict) or key not in mapping:
            self.fail(f"missing required key {key!r}", node if node is not None else mapping)
        return mapping[key]

    def party(self, ref, node=None) -> PartyId:
        if isinstance(ref, PartyId):
            return ref
        if not isinstance(ref, str) or not ref.startswith("@"):
            self.fail(f"party reference must look like '@label', got {ref!r}", node)
        label = ref[1:]
        if label == "system":
            return SYSTEM
        if label not in self.labels:
            self.fail(f"unknown party {ref!r}", node)
        return self.labels[label]

    def parties(self, refs, node=None) -> List[PartyId]:
        out = []
        for ref in refs:
            if isinstance(ref, str) and ref.endswith("*"):
                group = ref[1:-1]
                if group not in self.groups:
                    self.fail(f"unknown party group {ref!r}", node)
                out.extend(self.groups[group])
            else:
                out.append(self.party(ref, node))
        return out

    def obj(self, text, node=None) -> ObjectId:
        try:
            return ObjectId.parse(str(text))
        except ValueError as e:
            self.fail(str(e), node)

    def scalar(self, value, node=None):
        if isinstance(value, str) and value.startswith("@"):
            return self.party(value, node).id
        try:
            return check_scalar(value)
        except LedgerLabError as e:
            self.fail(str(e), node)


def _parse_parties(ctx: _Ctx, items, adversarial: Dict[str, str]):
    parties = []
    next_id = PARTY_BASE
    if not isinstance(items, list) or not items:
        ctx.fail("'parties' must be a non-empty list", items)
    entries = []
    for item in items:
        if not isinstance(item, dict):
            ctx.fail("party entries are mappings", items)
        roles = frozenset(Role(r) for r in item.get("roles", ["participant"]))
        if "group" in item:
            group = item["group"]
            count = int(item.get("count", 1))
            labels = [f"{group}{i}" for i in range(count)]
            ctx.groups[group] = []
        else:
            group = None
            labels = [ctx.require(item, "name")]
        for label in labels:
            if label in ctx.labels:
                ctx.fail(f"duplicate party label {label!r}", item)
            pid = PartyId(next_id, label)
            next_id += 1
            ctx.labels[label] = pid
            if group is not None:
                ctx.groups[group].append(pid)
            entries.append((pid, roles))
    for pid, roles in entries:
        parties.append(Party(pid, roles, adversarial.get(pid.label)))
    return tuple(parties)


def _parse_dependency(ctx, dep, node):
    if dep in (None, "internal"):
        return Internal()
    if isinstance(dep, dict) and "external" in dep:
        return External(str(dep["external"]))
    if isinstance(dep, str) and dep.startswith("external:"):
        return External(dep.split(":", 1)[1])
    ctx.fail(f"dependency must be 'internal' or {{external: <oracle>}}, got {dep!r}", node)


def _parse_predicates(ctx, items):
    out = []
    for item in items or []:
        params = {}
        for k, v in (item.get("params") or {}).items():
            if isinstance(v, list):
                params[k] = [ctx.scalar(x, item) for x in v]
            else:
                params[k] = ctx.scalar(v, item)
        try:
            out.append(PredicateDecl.make(
                ctx.require(item, "name"), item.get("scope", "record"),
                _parse_dependency(ctx, item.get("dependency"), item),
                ctx.require(item, "rule"), params))
        except (ValueError, LedgerLabError) as e:
            if isinstance(e, ScenarioParseError):
                raise
            ctx.fail(str(e), item)
    return tuple(out)


def _parse_creation(ctx, node):
    if not isinstance(node, dict):
        ctx.fail("'creation' must be a mapping with a 'mode'", node)
    mode = ctx.require(node, "mode")
    if mode == "predefined":
        return Predefined()
    if mode == "consensus-based":
        return ConsensusBased(ctx.require(node, "predicate"))
    if mode == "party-created":
        creators = node.get("creators", "anyone")
        quorum = bool(node.get("quorum_vote", False))
        if creators == "anyone":
            return PartyCreated(None, quorum)
        return PartyCreated(frozenset(ctx.parties(creators, node)), quorum)
    ctx.fail(f"unknown creation mode {mode!r}", node)


def _attrs(ctx, mapping, node):
    out = {}
    for k, v in (mapping or {}).items():
        if isinstance(v, str) and v.startswith("$"):
            out[k] = v
        else:
            out[k] = ctx.scalar(v, node)
    return out


def _work_item(ctx, item, default_proposer=None):
    kind = PayloadKind(ctx.require(item, "kind"))
    proposer = ctx.party(item["proposer"], item) if "proposer" in item else default_proposer
    if proposer is None:
        ctx.fail("work item needs a proposer", item)
    attrs = _attrs(ctx, item.get("attributes"), item)
    objects = [ctx.obj(o, item) for o in item.get("objects", [])]
    if kind is PayloadKind.CREATE and "object_id" in attrs:
        oid = ctx.obj(attrs["object_id"], item)
        if oid not in objects:
            objects.append(oid)
    if kind is PayloadKind.CLAIM and "object_id" not in attrs and objects:
        attrs["object_id"] = str(objects[0])
    world = tuple((ctx.obj(w["object"], w), w["property"], ctx.scalar(w["value"], w))
                  for w in item.get("world", []))
    return WorkItem(int(item.get("round", 0)), proposer, kind, tuple(objects),
                    tuple(sorted(attrs.items())), world)


def _parse_world(ctx, node):
    world = WorldModel()
    if not node:
        return world
    for f in node.get("facts", []) or []:
        world.facts[(ctx.obj(ctx.require(f, "object"), f), ctx.require(f, "property"))] = \
            ctx.scalar(ctx.require(f, "value"), f)
    for t in node.get("timeline", []) or []:
        world.set(int(ctx.require(t, "round")), ctx.obj(ctx.require(t, "object"), t),
                  ctx.require(t, "property"), ctx.scalar(ctx.require(t, "value"), t))
    return world


def _parse_corruption(ctx, node, item):
    if node in (None, "truthful"):
        return Truthful()
    if isinstance(node, dict) and "noisy" in node:
        return Noisy(float(node["noisy"]))
    if isinstance(node, dict) and "lies" in node:
        return Lies.of({(ctx.obj(o["object"], o), o["property"]): ctx.scalar(o["value"], o)
                        for o in node["lies"]})
    ctx.fail(f"unknown oracle corruption {node!r}", item)


def _parse_oracles(ctx, items):
    out = []
    for item in items or []:
        operator = ctx.party(item["operator"], item) if item.get("operator") else None
        out.append(Oracle(ctx.require(item, "name"), frozenset(ctx.require(item, "reads")),
                          _parse_corruption(ctx, item.get("corruption"), item), operator))
    return tuple(out)


def _parse_genesis(ctx, items):
    out = []
    for item in items or []:
        oid = ctx.obj(ctx.require(item, "object"), item)
        attrs = tuple(sorted((k, ctx.scalar(v, item)) for k, v in item.items() if k != "object"))
        out.append(ObjectDescriptor(oid, None, SYSTEM, attrs))
    return tuple(out)


def _parse_contracts(ctx, items):
    out = []
    for item in items or []:
        name = ctx.require(item, "name")
        trigger = ctx.require(item, "trigger")
        if "create" in item:
            c = item["create"] or {}
            scheme = c.get("scheme", "sequential")
            bits = 0 if scheme == "sequential" else int(str(scheme).replace("random", "").strip(":") or 128)
            tpl = tuple(sorted(_attrs(ctx, c.get("attributes"), item).items()))
            action = CreateObject(bits, c.get("namespace", name), c.get("id_from"), tpl)
        elif "append" in item:
            a = item["append"]
            tpl = tuple(sorted(_attrs(ctx, a.get("attributes"), item).items()))
            action = AppendRecord(PayloadKind(ctx.require(a, "kind")), tpl)
        else:
            ctx.fail(f"contract {name!r} needs a 'create' or 'append' action", item)
        out.append(ContractHook(name, trigger, action))
    return tuple(out)


def _parse_workload(ctx, node):
    if not node:
        return (), ()
    items = tuple(_work_item(ctx, r) for r in node.get("records", []) or [])
    gens = []
    for g in node.get("generate", []) or []:
        params = tuple(sorted((k, v) for k, v in g.items() if k != "kind"))
        gens.append(Generator(ctx.require(g, "kind"), params))
    return items, tuple(gens)


def _parse_adversaries(ctx, items):
    out = []
    for item in items or []:
        party = ctx.party(item["party"], item) if item.get("party") else None
        records = tuple(_work_item(ctx, r, party) for r in item.get("records", []) or [])
        overrides = tuple((ctx.require(o, "oracle"), ctx.obj(ctx.require(o, "object"), o),
                           ctx.require(o, "property"), ctx.scalar(ctx.require(o, "value"), o))
                          for o in item.get("oracle_overrides", []) or [])
        world = tuple((int(w.get("round", 0)), ctx.obj(w["object"], w), w["property"], ctx.scalar(w["value"], w))
                      for w in item.get("world", []) or [])
        out.append(AdversaryEntry(ctx.require(item, "name"), party, records, overrides, world,
                                  item.get("script")))
    return tuple(out)


def _verdict_flag(ctx, value, node):
    if value in (True, "met"):
        return True
    if value in (False, "not-met", "not met"):
        return False
    if value == "configurable":
        return "configurable"
    ctx.fail(f"expected verdict must be met, not-met or configurable, got {value!r}", node)


def build_scenario(doc: dict, path=None) -> Scenario:
    ctx = _Ctx(path)
    if not isinstance(doc, dict):
        ctx.fail("a scenario file is a mapping of sections", doc, 1)
    unknown = set(doc) - SECTIONS
    if unknown:
        ctx.fail(f"unknown section(s): {', '.join(sorted(unknown))}", doc)
    name = ctx.require(doc, "name")
    adversarial = {}
    for a in doc.get("adversaries", []) or []:
        if isinstance(a, dict) and isinstance(a.get("party"), str) and a["party"].startswith("@"):
            adversarial[a["party"][1:]] = a.get("name", "adversary")
    parties = _parse_parties(ctx, ctx.require(doc, "parties"), adversarial)
    predicates = _parse_predicates(ctx, doc.get("predicates"))
    oracles = _parse_oracles(ctx, doc.get("oracles"))
    expected = doc.get("expected") or {}
    try:
        spec = UseCaseSpec(
            name=name,
            parties=parties,
            creation_mode=_parse_creation(ctx, doc.get("creation", {"mode": "predefined"})),
            predicates=predicates,
            goal_predicates=tuple(doc.get("goals", []) or []),
            validate=tuple(doc.get("validate", []) or []),
            ledger_binding_properties=frozenset(doc.get("ledger_binding", []) or []),
            genesis=_parse_genesis(ctx, doc.get("genesis")),
            oracles=oracles,
        )
        spec.bound_predicates()  # surfaces unknown ledger-binding names now
    except ScenarioParseError:
        raise
    except LedgerLabError as e:
        ctx.fail(str(e), doc)
    workload, generators = _parse_workload(ctx, doc.get("workload"))
    return Scenario(
        spec=spec,
        world=_parse_world(ctx, doc.get("world")),
        adversaries=_parse_adversaries(ctx, doc.get("adversaries")),
        expected=(_verdict_flag(ctx, expected.get("object_creation"), expected),
                  _verdict_flag(ctx, expected.get("internal_predicate"), expected)),
        workload=workload,
        generators=generators,
        contracts=_parse_contracts(ctx, doc.get("contracts")),
        network=dict(doc.get("network") or {}),
        notes=tuple(doc.get("notes", []) or []),
        description=str(doc.get("description", "")),
        path=str(path) if path else None,
        raw=doc,
        toggles=tuple(sorted((doc.get("toggles") or {}).keys())),
    )


def read_document(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ScenarioParseError(f"cannot read scenario: {e.strerror}", str(path)) from None
    try:
        return yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ScenarioParseError(f"invalid YAML: {getattr(e, 'problem', e)}", str(path),
                                 mark.line + 1 if mark else None) from None


def _overlay(doc: dict, override: dict) -> dict:
    out = _Map(doc)
    out.line = getattr(doc, "line", None)
    for k, v in override.items():
        out[k] = v
    out.pop("variants", None)
    return out


def variant_documents(doc: dict) -> List[Tuple[str, dict]]:
    """One document per variant (or the document itself when it has none)."""
    variants = doc.get("variants") if isinstance(doc, dict) else None
    if not variants:
        return [(doc.get("name") if isinstance(doc, dict) else None, doc)]
    out = []
    for vname in sorted(variants):
        sub = _overlay(doc, variants[vname] or {})
        sub["name"] = f"{doc['name']}-{vname}"
        out.append((sub["name"], sub))
    return out


def apply_toggle(doc: dict, toggle: str, path=None) -> dict:
    toggles = doc.get("toggles") or {}
    if toggle not in toggles:
        raise ScenarioParseError(f"unknown toggle {toggle!r}; available: {', '.join(sorted(toggles)) or 'none'}",
                                 path)
    out = _overlay(doc, toggles[toggle] or {})
    out.pop("toggles", None)
    return out


def resolve_path(ref, directory=None) -> Path:
    """Accept a file path, or a scenario name looked up in the scenario directory."""
    p = Path(ref)
    if p.is_file():
        return p
    base = Path(directory) if directory else scenario_dir()
    for cand in (p, base / p, base / f"{p.name}.yaml", Path(f"{ref}.yaml")):
        if cand.is_file():
            return cand
    return p


def scenario_dir() -> Path:
    env = os.environ.get(SCENARIO_DIR_ENV)
    return Path(env) if env else DEFAULT_DIR


def load_scenarios(path, toggle: Optional[str] = None) -> List[Scenario]:
    """Every variant defined in one file."""
    path = Path(path)
    doc = read_document(path)
    if toggle:
        doc = apply_toggle(doc, toggle, str(path))
    return [build_scenario(d, path) for _, d in variant_documents(doc)]


def load_scenario(ref, variant: Optional[str] = None, toggle: Optional[str] = None,
                  directory=None) -> Scenario:
    """Load one scenario by path or name. ``insurance-generic`` style names
    select a variant of the ``insurance`` file."""
    path = resolve_path(ref, directory)
    if not path.is_file() and variant is None:
        stem = Path(str(ref)).name
        base, _, var = stem.rpartition("-")
        if base:
            alt = resolve_path(base, directory)
            if alt.is_file():
                path, variant = alt, var
    found = load_scenarios(path, toggle)
    if variant is None:
        if len(found) > 1:
            names = ", ".join(s.name for s in found)
            raise ScenarioParseError(f"file defines several variants, pick one of: {names}", str(path))
        return found[0]
    for s in found:
        if s.name.endswith(f"-{variant}"):
            return s
    raise ScenarioParseError(f"no variant {variant!r}", str(path))


def load_suite(directory=None) -> Tuple[List[Scenario], List[ScenarioParseError]]:
    """All scenarios in ``directory`` sorted by name, plus per-file errors."""
    base = Path(directory) if directory else scenario_dir()
    scenarios, errors = [], []
    for path in sorted(base.glob("*.yaml")):
        try:
            scenarios.extend(load_scenarios(path))
        except ScenarioParseError as e:
            errors.append(e)
    scenarios.sort(key=lambda s: s.name)
    return scenarios, errors
