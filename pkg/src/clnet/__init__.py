"""Lightweight CSI-feedback autoencoders on a small numpy autodiff core.

Submodules:

* :mod:`clnet.autodiff`   tensors, tape, differentiable ops
* :mod:`clnet.channel`    synthetic multipath channels and the angular-delay transform
* :mod:`clnet.datasets`   generated datasets and their file format
* :mod:`clnet.blocks`     network building blocks
* :mod:`clnet.models`     assembled encoders/decoders, checkpoints
* :mod:`clnet.pipeline`   encode/decode, NMSE evaluation, codeword files
* :mod:`clnet.training`   Adam, learning-rate schedule, training loop
* :mod:`clnet.complexity` FLOP and parameter accounting
* :mod:`clnet.cli`        command-line entry point
"""

from .channel import MultipathSpec, default_spec, generate_channel, to_angular_delay
from .datasets import CSIDataset, generate_dataset, read_dataset, write_dataset
from .fileio import ChecksumError, FormatError, MalformedHeaderError, TruncatedPayloadError
from .models import Autoencoder, build_model, load_checkpoint, parse_eta, save_checkpoint
from .pipeline import evaluate, nmse
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "MultipathSpec",
    "default_spec",
    "generate_channel",
    "to_angular_delay",
    "CSIDataset",
    "generate_dataset",
    "read_dataset",
    "write_dataset",
    "FormatError",
    "MalformedHeaderError",
    "TruncatedPayloadError",
    "ChecksumError",
    "Autoencoder",
    "build_model",
    "load_checkpoint",
    "save_checkpoint",
    "parse_eta",
    "evaluate",
    "nmse",
    "TrainConfig",
    "train",
]
