"""Meta-reinforcement learning with successor-feature contexts."""

__version__ = "0.1.0"
