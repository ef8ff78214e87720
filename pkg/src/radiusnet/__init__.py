"""Synthetic radius estimation with small convolutional networks.

Modules: ``synthgen`` (data), ``nncore`` (network), ``trainer``, ``designer``
(hand-built nets), ``analyzer`` (evaluation and interpretation), ``cli``.
"""

__version__ = "0.1.0"
