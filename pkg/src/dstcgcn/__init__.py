"""Dynamic spatial-temporal cross graph convolution network, desk-scale."""

__version__ = "0.1.0"

from .tensor import Tensor, Tape, backward, finite_diff_check  # noqa: F401
