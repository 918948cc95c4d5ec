"""
Experiments package for the OU control lab
"""

from .scenario_loader import Scenario, list_scenarios, load_scenario
from .all_experiments import (
    EXPERIMENT_FACTORIES,
    Experiment,
    ExperimentResult,
    create_bernstein_experiment,
    create_certify_experiment,
    create_cylinders_experiment,
    create_experiment,
    create_fdb_experiment,
    create_kalman_experiment,
    create_necessity_experiment,
    create_synthesize_experiment,
    create_threshold_experiment,
    create_thickness_experiment,
)

__all__ = [
    'Scenario',
    'list_scenarios',
    'load_scenario',
    'EXPERIMENT_FACTORIES',
    'Experiment',
    'ExperimentResult',
    'create_experiment',
    'create_kalman_experiment',
    'create_thickness_experiment',
    'create_threshold_experiment',
    'create_synthesize_experiment',
    'create_certify_experiment',
    'create_necessity_experiment',
    'create_bernstein_experiment',
    'create_cylinders_experiment',
    'create_fdb_experiment'
]
