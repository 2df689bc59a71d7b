"""IRS-aided computation offloading: feasibility check and earning maximization."""
__version__ = "0.1.0"
