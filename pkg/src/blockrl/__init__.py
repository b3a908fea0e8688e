"""Blockwise sequential latent-variable model learning with off-policy RL.

A numpy/scipy implementation of a self-attention-based block model for
partially observable control, trained by self-normalized importance
sampling, feeding learned block summaries into a soft actor-critic agent.
"""

__version__ = "0.1.0"
