"""Desk-scale lane-topology toolkit.

Synthetic intersection scenes, a geometry-biased point-lane decoder built on
a small reverse-mode autodiff core, endpoint refinement, and evaluation
metrics in the OpenLane-V2 style.
"""

from __future__ import annotations

__version__ = "0.1.0"
