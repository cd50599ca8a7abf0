"""Homography estimation: geometry, synthetic pairs, a small GAP-headed CNN,
a classical feature baseline and focus-map analysis."""

__version__ = "0.1.0"
