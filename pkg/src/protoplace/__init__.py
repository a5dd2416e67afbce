"""Placeholder-based prototype learning for zero-shot recognition.

Embedding-level pipeline: synthesize or load a split dataset, refine visual
features against class attributes, hallucinate placeholder classes by graph
propagation and Beta interpolation, train a semantic-to-visual prototype
mapping episodically, and evaluate ZSL / GZSL accuracy with calibrated
stacking.
"""

__version__ = "0.1.0"
