"""busum: bottom-up summarization at desk scale.

A word-level content selector produces per-token selection probabilities
that constrain the copy attention of a pointer-generator summarizer, decoded
with length/coverage/trigram-penalized beam search, plus ROUGE evaluation
and copy-behavior analyses.
"""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
