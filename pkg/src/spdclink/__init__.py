"""spdclink: desk-scale simulator and estimation toolkit for a telecom
quantum photonic interface built around a cavity-enhanced entangled-pair
source with polarization-preserving frequency conversion."""

__version__ = "0.1.0"
