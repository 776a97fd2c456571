"""Joint event/image transmission over noisy channels.

Library layout: ``events`` (binary codec + voxel aggregation), ``scene``
(synthetic scenes and the analytic deblurring reference), ``autodiff``
(tape-based gradients and Adam), ``entropy`` (likelihood models),
``transforms`` (learned encoders/decoders), ``channel`` (AWGN),
``allocation`` (variable-length symbol mapping and framing), ``pipeline``
(losses, training, evaluation), ``dataset`` (packaging), ``metrics``
(quality measures), and ``estimator`` (sklearn-style front end).
"""

from .channel import ChannelConfig
from .config import RunConfig
from .errors import JeitError
from .estimator import EventImageTransmitter
from .pipeline import (
    LossWeights,
    Sample,
    TransmissionModel,
    forward_eval,
    forward_train,
    train,
)
from .transforms import TransformConfig

__all__ = [
    "ChannelConfig",
    "EventImageTransmitter",
    "JeitError",
    "LossWeights",
    "RunConfig",
    "Sample",
    "TransformConfig",
    "TransmissionModel",
    "forward_eval",
    "forward_train",
    "train",
]

__version__ = "0.1.0"
