"""pumpsurge: steady-state hydraulics + RL pump-speed control experiments."""

__version__ = "0.1.0"
