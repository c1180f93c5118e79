"""Dynamic instance normalization for fast arbitrary style transfer.

A numpy reverse-mode autodiff core, the IN/CIN/AdaIN/DIN layer family, a
compact encoder/decoder stylization network, a small trainer, and a static
FLOP analyzer.
"""

from .autodiff import ShapeError, Tape, Tensor, TapeError, backward, grad_check, no_tape
from .checkpoint import CheckpointError
from .flops import compare_architectures, count_flops
from .normalization import DinParams, adain, cin, din, instance_norm
from .stylenet import (
    ArchitectureMismatch,
    LossNetwork,
    StyleCode,
    StyleNet,
    StyleNetConfig,
    apply_style,
    build_default_network,
    forward_stylize,
    precompute_style,
)

__version__ = "0.1.0"
