"""Equation generation for math word problems.

A desk-scale sequence-to-sequence system: a Transformer with one shared
encoder and two decoders (left-to-right and right-to-left) generates
equation templates over number-token symbols; an exact rational solver
scores the generated equations against key answers, both for evaluation
and as the reward signal for REINFORCE fine-tuning.
"""

__version__ = "0.1.0"
