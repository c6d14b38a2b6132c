"""Autonomous landing pipelines with built-in synthetic ground truth.

Two pipelines share this package:

1. Fiducial landing: detect a circular coded marker, recover its pose
   (including both ambiguous orientation hypotheses), convert to
   marker-centric position targets, and close the loop with a gimbal
   tracking law and a five-phase landing state machine.
2. Terrain landing: estimate sensor attitude from IMU data, rectify depth
   images into gravity-aligned height maps, mask hazardous slopes, and
   extract flat landing sites by robust plane fitting.

Both pipelines come with deterministic synthetic renderers that provide
ground truth for evaluation.
"""

__version__ = "0.1.0"
