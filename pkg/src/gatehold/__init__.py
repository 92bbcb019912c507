"""Gate-holding departure control and robust gate assignment."""

__version__ = "0.1.0"

from .assignment import (Assignment, ProblemInstance, brute_force, greedy_initial, insert_move,
                         interval_exchange_move, objective, tabu_search)
from .calibration import (REFERENCE_PARAMS, TakeoffParams, TaxiFit, ThroughputCurve, build_NT,
                          correlation_scan, detect_saturation, fit_takeoff_params, fit_taxi_lognormal)
from .overlap import DelayDistributions, DisturbanceModel, expected_overlap, fit_exponential
from .schedule import Flight, Gate, GeneratorConfig, Schedule, gen_synthetic, load_schedule, pair_flights
from .simulation import SimConfig, run_once, run_replicated, sweep_n_star
from .takeoff import RunwayProcess

__all__ = [
    "Assignment", "ProblemInstance", "brute_force", "greedy_initial", "insert_move", "interval_exchange_move",
    "objective", "tabu_search", "REFERENCE_PARAMS", "TakeoffParams", "TaxiFit", "ThroughputCurve", "build_NT",
    "correlation_scan", "detect_saturation", "fit_takeoff_params", "fit_taxi_lognormal", "DelayDistributions",
    "DisturbanceModel", "expected_overlap", "fit_exponential", "Flight", "Gate", "GeneratorConfig", "Schedule",
    "gen_synthetic", "load_schedule", "pair_flights", "SimConfig", "run_once", "run_replicated", "sweep_n_star",
    "RunwayProcess",
]
