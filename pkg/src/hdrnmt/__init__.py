"""Desk-scale NMT toolkit with a sense-disambiguating dual-encoder decoder."""

__version__ = "0.1.0"

from .tensor import Tensor, no_grad  # noqa: F401
from .model import ModelConfig, Seq2SeqModel  # noqa: F401
