"""Bootstrapped source separation: stereo spatial clustering produces
confidence-weighted pseudo-labels that train a single-channel embedding
network, with an ensemble mediating between the two at test time.
"""

__version__ = "0.1.0"
