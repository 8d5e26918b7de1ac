"""Desk-scale interventional data generation: a learner policy is rolled out
to genuine mistake states, recorded recovery segments are retargeted to the
new scene, and only goal-satisfying episodes are kept."""

__version__ = "0.1.0"
