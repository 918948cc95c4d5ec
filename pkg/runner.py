"""
Scenario Runner
Loads a scenario, dispatches its experiment and writes the run artifacts
"""

import os
import time
import warnings
from dataclasses import dataclass
from typing import Dict, Optional

from dotenv import load_dotenv

from engine.errors import ConfigError, ScenarioError
from engine.settings import set_threads
from experiments import create_experiment, load_scenario
from experiments.all_experiments import INCONCLUSIVE, PASS
from storage import RunLedger, log_run_history

# Load environment variables
load_dotenv()

EXIT_PASS = 0
EXIT_ERROR = 1
EXIT_NEGATIVE = 2
VERDICT_EXIT_CODES = {PASS: EXIT_PASS, INCONCLUSIVE: EXIT_ERROR}


@dataclass
class RunOutcome:
    scenario: str
    verdict: str
    exit_code: int
    run_dir: str
    summary: Dict


class ScenarioRunner:
    """
    One scenario per call to run(): load, create the experiment, execute it
    with warnings captured, then write summary, tables, fields and ledger
    """

    def __init__(self, output_dir: Optional[str] = None, threads: Optional[int] = None,
                 emit_fields: bool = False, seed: Optional[int] = None):
        self.output_dir = output_dir or os.getenv("OULAB_OUTPUT_DIR", "outputs")
        self.threads = threads or int(os.getenv("OULAB_THREADS", "1"))
        self.emit_fields = emit_fields
        self.seed = seed
        set_threads(self.threads)

    def run(self, scenario_file: str) -> RunOutcome:
        """
        Execute one scenario file

        Args:
            scenario_file: Path to the scenario YAML

        Returns:
            RunOutcome with exit code 0 (pass), 2 (negative verdict) or 1
            (inconclusive, the solver saturated before deciding)

        Raises:
            ConfigError: the scenario failed validation
            ScenarioError: a downstream error, wrapped with scenario and stage
        """
        started = time.perf_counter()
        print("\n" + "="*60)
        print("RUNNING SCENARIO")
        print("="*60 + "\n")

        print("[1/4] Loading scenario...")
        scenario = load_scenario(scenario_file, seed=self.seed)
        print(f"Scenario: {scenario.name} ({scenario.example})")
        print(f"Experiment: {scenario.experiment}")
        print(f"Seed: {scenario.seed}  Threads: {self.threads}")
        print(f"Config hash: {scenario.config_hash[:16]}")
        print("\n" + "-"*60 + "\n")

        ledger = RunLedger(self.output_dir, scenario.name)
        stage = "setup"
        caught = []
        try:
            print("[2/4] Creating experiment...")
            experiment = create_experiment(scenario)
            print(f"      {experiment.description}")

            print("[3/4] Running experiment...")
            stage = "run"
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                result = experiment.run()

            print("[4/4] Writing artifacts...")
            stage = "artifacts"
            exit_code = VERDICT_EXIT_CODES.get(result.verdict, EXIT_NEGATIVE)
            ledger.write_summary(scenario.to_dict(), result.experiment, result.verdict,
                                 exit_code, result.summary)
            ledger.write_tables(result.tables)
            if self.emit_fields and result.fields:
                ledger.write_fields(result.fields)
        except ConfigError as error:
            self._record_failure(ledger, scenario, started, caught, error)
            raise
        except Exception as error:
            self._record_failure(ledger, scenario, started, caught, error)
            raise ScenarioError(scenario.name, stage, error) from error

        wall_time = time.perf_counter() - started
        messages = [f"{w.category.__name__}: {w.message}" for w in caught]
        for message in messages:
            print(f"[WARNING] {message}")
        ledger.write_ledger(scenario.name, scenario.config_hash, scenario.seed, wall_time,
                            messages, exit_code)
        log_run_history(self.output_dir, {
            'scenario': scenario.name, 'experiment': scenario.experiment,
            'verdict': result.verdict, 'exit_code': exit_code,
            'config_hash': scenario.config_hash, 'seed': scenario.seed,
            'wall_time_s': f"{wall_time:.3f}"})

        print("\n" + "="*60)
        print(f"[OK] Verdict: {result.verdict} (exit {exit_code}) in {wall_time:.1f}s")
        print(f"[OK] Artifacts: {ledger.run_dir}")
        print("="*60 + "\n")
        return RunOutcome(scenario=scenario.name, verdict=result.verdict, exit_code=exit_code,
                          run_dir=str(ledger.run_dir), summary=result.summary)

    def _record_failure(self, ledger, scenario, started, caught, error):
        messages = [f"{w.category.__name__}: {w.message}" for w in caught]
        wall_time = time.perf_counter() - started
        ledger.write_ledger(scenario.name, scenario.config_hash, scenario.seed, wall_time,
                            messages, EXIT_ERROR, error=f"{type(error).__name__}: {error}")
        log_run_history(self.output_dir, {
            'scenario': scenario.name, 'experiment': scenario.experiment,
            'verdict': 'error', 'exit_code': EXIT_ERROR,
            'config_hash': scenario.config_hash, 'seed': scenario.seed,
            'wall_time_s': f"{wall_time:.3f}"})
