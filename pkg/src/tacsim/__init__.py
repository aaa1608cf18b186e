"""IPC-based tactile sensor simulation with baselines and sim-to-real alignment tools."""

__version__ = "0.1.0"
