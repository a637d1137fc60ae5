"""Trainable utterance-level pooling (NetVLAD, GhostVLAD, statistics, average) for language ID."""

__version__ = "0.1.0"
