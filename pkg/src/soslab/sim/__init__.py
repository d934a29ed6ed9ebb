"""Glauber dynamics: event-driven chains, grand coupling, censoring, relaxation estimates."""

from .chain import (AutocorrResult, CensorSchedule, ChainState, CouplingResult, Epoch, GrandCoupling,
                    InsufficientSamplesError, OBSERVABLES, autocorrelation_gap, batch_means,
                    censored_run, coupling_time, escape_time, grand_events, grand_run, initial_field,
                    make_chain, run, sample_path, staircase_schedule)

__all__ = [
    "AutocorrResult", "CensorSchedule", "ChainState", "CouplingResult", "Epoch", "GrandCoupling",
    "InsufficientSamplesError", "OBSERVABLES", "autocorrelation_gap", "batch_means", "censored_run",
    "coupling_time", "escape_time", "grand_events", "grand_run", "initial_field", "make_chain", "run",
    "sample_path", "staircase_schedule",
]
