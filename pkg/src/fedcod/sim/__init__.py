"""Deterministic discrete-event simulation of protocol rounds."""
from .metrics import ClientTiming, RoundMetrics
from .network import BandwidthProcess, FluidNetwork, LinkModel, ScheduleProcess, \
    sample_bandwidth, transfer
from .runner import ExperimentResult, Simulation, run_experiment, run_round

__all__ = ["BandwidthProcess", "ClientTiming", "ExperimentResult", "FluidNetwork", "LinkModel",
           "RoundMetrics", "ScheduleProcess", "Simulation", "run_experiment", "run_round",
           "sample_bandwidth", "transfer"]
