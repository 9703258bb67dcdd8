"""Compress chain-of-thought reasoning into a single latent token.

The pipeline renders reasoning traces to deterministic images, extracts
hidden-state targets through a frozen encoder stack, trains a micro
transformer through a three-stage curriculum, and evaluates accuracy,
output-token efficiency, and compression.
"""

__version__ = "0.1.0"
