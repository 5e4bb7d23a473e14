"""Similarity-conditioned diffusion for synthetic recognition datasets.

Train a denoiser that generates images at a requested cosine similarity to
an inquiry identity, assemble labeled synthetic datasets from it, train a
recognition model on those, and measure 1:1 verification accuracy.
"""

__version__ = "0.1.0"
