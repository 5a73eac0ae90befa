"""Simulation toolkit for cat-transmon quantum error correction.

Modules: hilbert (truncated spaces and states), dynamics (Lindblad solver and
dephasing), pulses (selective pulse shaping), gates (gate simulation and Pauli
channels), stabilization (pulsed two-photon stabilization), code (patches and
syndrome circuits), decode (sampling, error models, matching), analysis (fits,
thresholds, overheads), experiments, plotting and cli.
"""
__version__ = "0.1.0"
