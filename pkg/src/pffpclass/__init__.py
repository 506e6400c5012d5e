"""Probabilistic sediment-behavior classification from free-fall penetrometer records."""

__version__ = "0.1.0"

CLASS_LABELS = (1, 2, 3, 4)
N_CLASSES = 4
N_BINS = 211
