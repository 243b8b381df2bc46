"""Handwritten digit string recognition from scratch in numpy.

Subpackages: ``corpus`` (synthetic strings), ``nn`` (layers and SGD),
``losses``, ``detector`` (grid detector), ``sequencer`` (CRNN),
``selector`` (component-wise dynamic selection), ``evalbench`` and ``cli``.
"""

__version__ = "0.1.0"
