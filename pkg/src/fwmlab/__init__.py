"""Gas-filled hollow-core fiber photon-pair source: simulation and analysis."""

__version__ = "0.1.0"
