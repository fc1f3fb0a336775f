"""
latentflow: flow-matching generation, inversion and editing of latent
sequences, with a seeded experiment harness.
"""

__version__ = "0.1.0"
