"""Bundled use cases, their runs, the attacks and the verdict matrix."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

from ..criteria import (
    check_internal_predicate_criterion, check_object_creation_criterion, static_trusted_entities,
)
from ..errors import ScenarioParseError
from .attacks import (
    ATTACKS, ID_WIDTHS, SEQUENTIAL, AttackOutcome, lying_oracle_attack, parse_id_scheme,
    premature_creation_attack, sybil_vote_attack,
)
from .loader import Scenario, load_scenario, load_scenarios, load_suite, scenario_dir
from .runner import GoalOutcome, ScenarioRun, default_config, default_rounds, run_scenario


@dataclass(frozen=True)
class MatrixRow:
    name: str
    object_creation: bool
    internal_predicate: bool
    trusted_entities: int
    configurable: bool = False  # a toggle of the scenario flips the creation verdict

    def cells(self) -> Tuple[str, str, str, str]:
        def word(met):
            return "met" if met else "not met"
        oc = "configurable" if self.configurable else word(self.object_creation)
        return self.name, oc, word(self.internal_predicate), str(self.trusted_entities)


def toggled(scenario: Scenario) -> List[Scenario]:
    """The scenario reloaded under each of its toggles."""
    if not scenario.toggles or scenario.path is None:
        return []
    return [load_scenarios(scenario.path, t)[0] for t in scenario.toggles]


def matrix_row(scenario: Scenario, engine=None) -> MatrixRow:
    spec = scenario.spec
    oc = check_object_creation_criterion(spec, engine).met
    flips = any(check_object_creation_criterion(t.spec, engine).met != oc for t in toggled(scenario))
    return MatrixRow(scenario.name, oc, check_internal_predicate_criterion(spec).met,
                     len(static_trusted_entities(spec, engine)), flips)


def verdict_matrix(directory=None, engine=None) -> Tuple[List[MatrixRow], List[ScenarioParseError]]:
    scenarios, errors = load_suite(directory)
    return [matrix_row(s, engine) for s in scenarios], errors


__all__ = [
    "ATTACKS", "ID_WIDTHS", "SEQUENTIAL", "AttackOutcome", "GoalOutcome", "MatrixRow", "Scenario",
    "ScenarioRun", "default_config", "default_rounds", "load_scenario", "load_scenarios", "load_suite",
    "lying_oracle_attack", "matrix_row", "parse_id_scheme", "premature_creation_attack", "run_scenario",
    "scenario_dir", "sybil_vote_attack", "toggled", "verdict_matrix",
]
