"""
Scenario Manager - Dispatches scenarios to their runners and fans seeds out over workers
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Dict, List, Optional

from ..experiments.report import Report, provenance
from ..experiments.scenarios import RUNNERS, Scenario
from .errors import (
    BallViolationError, CFLViolationError, LadderError, ScenarioError, SupportViolationError, XiRangeError,
)

logger = logging.getLogger(__name__)

# Guards whose failure means "this instance is outside the checked regime"
PRECONDITION_ERRORS = (
    BallViolationError, CFLViolationError, LadderError, SupportViolationError, XiRangeError,
)


class ScenarioRunner:
    """Runs one scenario kind for single seeds"""

    def __init__(self, kind: str, run: Callable[[Scenario, Optional[int]], Report]):
        self.kind = kind
        self._run = run

    def enter(self, scenario: Scenario):
        logger.info("Running scenario '%s' (%s) for seeds %s", scenario.id, self.kind, list(scenario.seeds))

    def exit(self, scenario: Scenario, reports: List[Report]):
        failed = [r.seed for r in reports if not r.passed]
        if failed:
            logger.warning("Scenario '%s' failed for seeds %s", scenario.id, failed)
        else:
            logger.info("Scenario '%s' passed for all %d seed(s)", scenario.id, len(reports))

    def execute(self, scenario: Scenario, seed: int) -> Report:
        """Run one seed; a violated precondition becomes a failed check"""
        try:
            return self._run(scenario, seed)
        except PRECONDITION_ERRORS as e:
            report = Report(scenario.id, scenario.kind, seed,
                            provenance=provenance(scenario.config_hash, seed))
            report.check('precondition', 1.0, 0.0, passed=False, note=f"{type(e).__name__}: {e}")
            return report


def _execute_seed(scenario: Scenario, seed: int) -> Report:
    return ScenarioManager().runner(scenario.kind).execute(scenario, seed)


class ScenarioManager:
    """Registry of scenario runners"""

    def __init__(self):
        self.runners: Dict[str, ScenarioRunner] = {}
        self._initialize_runners()

    def _initialize_runners(self):
        for kind, run in RUNNERS.items():
            self.runners[kind] = ScenarioRunner(kind, run)

    def runner(self, kind: str) -> ScenarioRunner:
        if kind not in self.runners:
            raise ScenarioError(f"Scenario kind '{kind}' has no runner")
        return self.runners[kind]

    def run(self, scenario: Scenario) -> List[Report]:
        """Reports for every seed of the scenario, in seed order"""
        runner = self.runner(scenario.kind)
        runner.enter(scenario)
        workers = scenario.parameters.scenario.workers
        seeds = list(scenario.seeds)
        if workers > 1 and len(seeds) > 1:
            with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
                reports = list(pool.map(_execute_seed, [scenario] * len(seeds), seeds))
        else:
            reports = [runner.execute(scenario, seed) for seed in seeds]
        runner.exit(scenario, reports)
        return reports
