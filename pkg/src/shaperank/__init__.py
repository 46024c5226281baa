"""Non-rigid 3D shape retrieval: descriptors, benchmark generation and evaluation."""

__version__ = "0.1.0"
