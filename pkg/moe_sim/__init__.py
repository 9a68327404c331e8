"""moe-sim - Simulated soft-finger hair manipulation with learned force feedback."""

__version__ = "0.1.0"
