"""Desk-scale continual learning on multi-label soft-target tasks.

A sequence of small classification tasks is learned one after another by
an MLP whose answer head grows with each task's new classes.  Strategies
(EWC, LwF, experience replay, gradient projection, pseudo-replay) fight
forgetting; metrics (accuracy matrix, BWT, semantic BWT) and analysis
tools (skew divergence, embedding distances, CKA timelines, rank
correlations) measure it and relate it to task dissimilarity.
"""

__version__ = "0.1.0"


def backend():
    """Name of the active kernel backend ('compiled' or 'numpy')."""
    from clvqa import kernels

    return kernels.BACKEND_NAME
