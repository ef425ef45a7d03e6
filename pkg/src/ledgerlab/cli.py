"""Command-line entry point: analyze, simulate, attack, matrix."""

from __future__ import annotations

import argparse
import json
import random
import sys
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import List, Optional

from .adversaries import BUILTIN, DEFAULT_SCRIPT
from .consensus import DEFAULT_SEED, NetworkConfig, PermissionedQuorum, PermissionlessChain
from .criteria import check_internal_predicate_criterion, check_object_creation_criterion, explain_verdict
from .errors import InapplicableAttack, LedgerLabError, ScenarioParseError
from .ledger import parse_scalar

EXIT_OK, EXIT_ERROR, EXIT_VIOLATED = 0, 1, 2
ENGINES = ("permissionless", "permissioned")


def parse_seed(text: str) -> int:
    if text == "random":
        return random.SystemRandom().getrandbits(32)
    value = int(text, 0)
    if value < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return value


@dataclass
class RunConfig:
    scenario: str = ""
    engine: str = "permissionless"
    block_probability: float = 0.5
    quorum_fraction: str = "2/3"
    maintainers: Optional[int] = None
    adversary_power: float = 0.0
    delay_rounds: int = 0
    adversary: str = DEFAULT_SCRIPT
    rounds: Optional[int] = None
    c: Optional[int] = None
    seed: int = DEFAULT_SEED
    toggle: Optional[str] = None
    out: str = "ledgerlab-out"
    format: str = "summary"

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        fields = {k: getattr(args, k) for k in cls.__dataclass_fields__ if hasattr(args, k)}
        return cls(**fields)

    def make_engine(self):
        if self.engine == "permissioned":
            return PermissionedQuorum(quorum_fraction=Fraction(self.quorum_fraction))
        return PermissionlessChain(block_probability_per_round=self.block_probability)


def _load(cfg_or_ref, toggle=None):
    from .suite import load_scenario
    return load_scenario(cfg_or_ref, toggle=toggle)


def _emit(doc: dict, fmt: str, table: List[str]):
    if fmt == "structured":
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print("\n".join(table))


# -- analyze -----------------------------------------------------------------

def cmd_analyze(args) -> int:
    from .suite import load_scenarios
    from .suite.loader import resolve_path
    ref = args.scenario
    path = resolve_path(ref)
    if not path.is_file():
        try:
            scenarios = [_load(ref, args.toggle)]
        except (ScenarioParseError, FileNotFoundError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_ERROR
    else:
        scenarios = load_scenarios(path, args.toggle)
    engine = RunConfig.from_args(args).make_engine()
    docs, lines, violated = [], [], False
    for s in scenarios:
        oc = check_object_creation_criterion(s.spec, engine)
        ip = check_internal_predicate_criterion(s.spec)
        violated |= not (oc.met and ip.met)
        docs.append({"scenario": s.name,
                     "object_creation": {"met": oc.met, "reasons": [list(r) for r in oc.reasons]},
                     "internal_predicate": {"met": ip.met, "reasons": [list(r) for r in ip.reasons]}})
        lines.append(f"scenario {s.name}")
        lines.append(explain_verdict(oc).rstrip("\n"))
        lines.append(explain_verdict(ip).rstrip("\n"))
        for note in s.notes:
            lines.append(f"  note: {note}")
    _emit(docs[0] if len(docs) == 1 else {"scenarios": docs}, args.format, lines)
    return EXIT_VIOLATED if violated else EXIT_OK


# -- simulate ----------------------------------------------------------------

def simulate(cfg: RunConfig):
    """Run a scenario from ``cfg``; returns (run, report document)."""
    from .adversaries import make_adversary
    from .suite import default_config, run_scenario
    scenario = _load(cfg.scenario, cfg.toggle)
    net = default_config(scenario, cfg.seed)
    net = NetworkConfig(cfg.maintainers if cfg.maintainers is not None else net.num_maintainers,
                        cfg.adversary_power, cfg.delay_rounds, cfg.seed)
    run = run_scenario(scenario, net, cfg.make_engine(), cfg.rounds, confirmation_depth=cfg.c,
                       adversary=make_adversary(cfg.adversary))
    rep = run.consensus
    doc = {
        "config": asdict(cfg),
        "consensus": {"agreement_violations": rep.agreement_violations,
                      "validity_violations": rep.validity_violations,
                      "rounds_without_progress": rep.rounds_without_progress,
                      "decided_records": len(run.decided_after_genesis)},
        "audit": run.audit.document(),
        "goals": {k: {"ledger": v.ledger, "world": v.world, "diverges": v.diverges}
                  for k, v in run.goals.items()},
        "notes": list(scenario.notes),
        "log_digest": run.log.digest(),
    }
    return run, doc


def cmd_simulate(args) -> int:
    cfg = RunConfig.from_args(args)
    run, doc = simulate(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "events.log").write_text(run.log.text())
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    c = doc["consensus"]
    table = [f"scenario {cfg.scenario}  engine {cfg.engine}  seed {cfg.seed:#x}",
             f"  agreement violations {c['agreement_violations']:>6}",
             f"  validity violations  {c['validity_violations']:>6}",
             f"  longest stall        {c['rounds_without_progress']:>6}",
             f"  decided records      {c['decided_records']:>6}"]
    for name, g in doc["goals"].items():
        flag = "  DIVERGES" if g["diverges"] else ""
        table.append(f"  goal {name:<32} ledger={str(g['ledger']).lower():<5} "
                     f"world={str(g['world']).lower():<5}{flag}")
    table.append(f"  trusted entities     {len(doc['audit']['trusted_entities']):>6}")
    for t in doc["audit"]["trusted_entities"]:
        table.append(f"    {t['entity']:<28} {t['reason']}")
    table.append(f"  written to {out}")
    _emit(doc, cfg.format, table)
    return EXIT_OK


# -- attack ------------------------------------------------------------------

def _parse_override(text: str):
    """``[oracle:]object.property=value``"""
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"override needs '=': {text!r}")
    oracle, _, target = key.rpartition(":")
    oid, dot, prop = target.rpartition(".")
    if not dot:
        raise argparse.ArgumentTypeError(f"override needs object.property: {text!r}")
    return (oracle or None, oid, prop, parse_scalar(value))


def cmd_attack(args) -> int:
    from .suite import lying_oracle_attack, premature_creation_attack, sybil_vote_attack
    cfg = RunConfig.from_args(args)
    scenario = _load(cfg.scenario, cfg.toggle)
    engine = cfg.make_engine()
    try:
        if args.attack == "premature-creation":
            outcome = premature_creation_attack(scenario, args.id_scheme, args.advantage, args.trials, cfg.seed)
            doc = outcome.document()
        elif args.attack == "sybil-vote":
            outcome = sybil_vote_attack(scenario, args.honest, args.bogus, args.trials, cfg.seed, engine)
            doc = outcome.document()
        else:
            diverged = lying_oracle_attack(scenario, args.override, cfg.rounds, cfg.seed, engine)
            doc = {"attack": "lying-oracle", "seed": cfg.seed, "divergent_goals": diverged}
    except InapplicableAttack as exc:
        print(f"inapplicable: {exc}", file=sys.stderr)
        return EXIT_VIOLATED
    doc["scenario"] = scenario.name
    if "success_rate" in doc:
        table = [f"{doc['attack']} on {scenario.name}: {doc['successes']}/{doc['trials']} "
                 f"succeeded (rate {doc['success_rate']:.4f}, seed {cfg.seed:#x})"]
    else:
        table = [f"lying-oracle on {scenario.name}: divergent goals: "
                 f"{', '.join(doc['divergent_goals']) or 'none'}"]
    _emit(doc, cfg.format, table)
    return EXIT_OK


# -- matrix ------------------------------------------------------------------

def cmd_matrix(args) -> int:
    from .suite import verdict_matrix
    directory = args.directory or args.scenario_dir
    if directory is not None and not Path(directory).is_dir():
        print(f"error: not a directory: {directory}", file=sys.stderr)
        return EXIT_ERROR
    rows, errors = verdict_matrix(directory, RunConfig.from_args(args).make_engine())
    if args.format == "structured":
        doc = {"rows": [asdict(r) for r in rows], "errors": [str(e) for e in errors]}
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        header = ("scenario", "object creation", "internal predicate", "trusted")
        print(f"{header[0]:<22} {header[1]:<16} {header[2]:<19} {header[3]:>7}")
        for r in rows:
            name, oc, ip, n = r.cells()
            print(f"{name:<22} {oc:<16} {ip:<19} {n:>7}")
        for e in errors:
            print(f"error: {e}")
    return EXIT_ERROR if errors else EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ledgerlab", description="Ledger trust-criteria analyzer and simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_required=True):
        sp.add_argument("--scenario", required=scenario_required, help="scenario file or bundled name")
        sp.add_argument("--toggle", help="apply a named toggle from the scenario file")
        sp.add_argument("--engine", choices=ENGINES, default="permissionless")
        sp.add_argument("--block-probability", type=float, default=0.5, dest="block_probability")
        sp.add_argument("--quorum-fraction", default="2/3", dest="quorum_fraction")
        sp.add_argument("--format", choices=("structured", "summary"), default="summary")

    def network(sp):
        sp.add_argument("--maintainers", type=int)
        sp.add_argument("--adversary-power", type=float, default=0.0, dest="adversary_power")
        sp.add_argument("--delay-rounds", type=int, default=0, dest="delay_rounds")
        sp.add_argument("--adversary", choices=sorted(BUILTIN), default=DEFAULT_SCRIPT)
        sp.add_argument("--c", type=int, help="confirmation depth")
        sp.add_argument("--rounds", type=int)
        sp.add_argument("--seed", type=parse_seed, default=DEFAULT_SEED, help="integer or 'random'")

    a = sub.add_parser("analyze", help="check both criteria for a scenario")
    common(a, scenario_required=False)
    a.add_argument("target", nargs="?", help="scenario file or name (same as --scenario)")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run a scenario and write events.log and report.json")
    common(s)
    network(s)
    s.add_argument("--out", default="ledgerlab-out")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("attack", help="run an attack against a scenario")
    t.add_argument("attack", choices=("premature-creation", "sybil-vote", "lying-oracle"))
    common(t)
    network(t)
    t.add_argument("--trials", type=int, default=1000)
    t.add_argument("--id-scheme", default="sequential", dest="id_scheme", help="sequential or random<bits>")
    t.add_argument("--advantage", type=int, default=1, help="adversary latency advantage in rounds")
    t.add_argument("--honest", type=int, default=10)
    t.add_argument("--bogus", type=int, default=11)
    t.add_argument("--override", action="append", default=[], type=_parse_override,
                   help="[oracle:]object.property=value")
    t.set_defaults(func=cmd_attack)

    m = sub.add_parser("matrix", help="verdict matrix over a scenario directory")
    m.add_argument("directory", nargs="?")
    m.add_argument("--scenario-dir", dest="scenario_dir")
    m.add_argument("--engine", choices=ENGINES, default="permissionless")
    m.add_argument("--format", choices=("structured", "summary"), default="summary")
    m.set_defaults(func=cmd_matrix)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "analyze":
        args.scenario = args.target or args.scenario
        if not args.scenario:
            print("error: analyze needs a scenario", file=sys.stderr)
            return EXIT_ERROR
    try:
        return args.func(args)
    except ScenarioParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (LedgerLabError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
