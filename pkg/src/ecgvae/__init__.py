"""Multi-label ECG classification with a small from-scratch CNN-VAE.

The pipeline covers ingestion, targeted class balancing, lead-wise
normalization, weighted training, and a full multi-label evaluation suite,
all deterministic under fixed seeds.
"""

__version__ = "0.1.0"
