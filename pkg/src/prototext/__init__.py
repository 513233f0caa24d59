"""Retrieval-augmented few-shot table-to-text generation.

A lexical index proposes candidate sentences for a table, a trainable
selector reranks them into prototypes, and a small conditional generator
learns to describe tables with the prototypes as guidance.
"""

__version__ = "0.1.0"
