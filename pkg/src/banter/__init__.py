"""Multimodal conversational sarcasm and humor classification.

Trainable text+audio dialog classifier built on a small reverse-mode
autodiff kernel: hierarchical attention for utterance encoding, contextual
attention over the dialog window, gated cross-modal filtering, and
sigmoid/BCE task heads.
"""

__version__ = "0.1.0"
