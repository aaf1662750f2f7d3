"""Threat modeling pipeline for banking-style system designs.

Turns data-flow-diagram descriptions into structured STRIDE findings with
NIST 800-53 mitigation codes, optimizes the instructions that drive a
chat model to do the same, scores outputs against ground truth, and
exports fine-tuning datasets. Everything runs offline against a
deterministic mock backend.
"""

__version__ = "0.1.0"
