"""Deterministic discrete-event simulator of an artificial immune system
protecting a computer network."""

__version__ = "0.1.0"
