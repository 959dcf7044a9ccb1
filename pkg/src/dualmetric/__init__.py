"""Semi-supervised metric learning with proxy- and prototype-level alignment.

Proposal feature vectors are projected into a metric space where labeled
embeddings are pulled toward learnable class proxies, pseudo-labeled
embeddings are aligned with the same proxies, and confidence-weighted
class prototypes are aligned against a memory bank of past labeled
prototypes.  All gradients are derived by hand.
"""

__version__ = "0.1.0"
