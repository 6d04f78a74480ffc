"""Arcsin-activation networks with bit-packed binary inference.

Train a floating-point network whose layers normalize their inputs and apply a
scaled arcsin, then convert it (no retraining) into a model that runs on packed
sign bits with XOR/popcount arithmetic. Ships a verification harness for the
concentration, isometry, robustness, and cost behavior of the conversion.
"""

__version__ = "0.1.0"
