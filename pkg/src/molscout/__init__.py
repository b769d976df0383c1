"""Closed-loop active-learning engine for prioritizing candidate molecules.

Hybrid hard+soft featurization, a Gaussian-process surrogate, expected-improvement
acquisition with expert feasibility review, round-based feedback, and the full
statistical evaluation suite, driven by a CLI and an HTTP review service.
"""

__version__ = "0.1.0"
