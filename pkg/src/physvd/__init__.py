"""Sensitivity-aware low-rank compression of sequential networks.

Layers are compressed one at a time with a Fisher-weighted, activation-aware
truncated SVD that accounts for errors already introduced upstream, and
ranks are allocated globally by a greedy benefit/cost rule.
"""

__version__ = "0.1.0"
