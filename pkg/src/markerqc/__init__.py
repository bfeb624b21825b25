"""Marker-qubit transport and Feshbach-mediated gates in optical lattices.

Submodules:
    units: species data and SI conversions.
    lattice: the tunable double-well lattice potential and pulse schedules.
    bands: Bloch bands, Wannier functions and cell levels.
    tdse: grid wavefunctions and Crank-Nicolson propagation.
    transport: adiabatic marker transport between neighbouring sites.
    control: Krotov-type optimal control of lattice and level models.
    feshbach: trapped-pair resonance models, couplings and ramps.
    gates: single- and two-qubit gates through the molecular level.
    cli: command-line front end.
"""

__version__ = "0.1.0"
