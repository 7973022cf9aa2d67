"""blendpipe: real-time landmark-to-blendshape regression pipeline.

Converts streams of 3D facial landmark frames into 52-channel blendshape
coefficient streams through five stages: affine normalization, landmark
selection, feature transforms, per-channel regression with output
correction, and temporal smoothing. Ships with a training path, a
synthetic data generator, an evaluation harness and a CLI.
"""

from .core import (
    BLENDSHAPE_COUNT,
    BLENDSHAPE_NAMES,
    BlendshapeFrame,
    BlendshapeStream,
    LandmarkFrame,
    LandmarkStream,
)
from .pipeline import (
    PipelineModel,
    StreamSession,
    TrainConfig,
    load_model,
    predict_frame,
    predict_stream,
    save_model,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BLENDSHAPE_COUNT",
    "BLENDSHAPE_NAMES",
    "BlendshapeFrame",
    "BlendshapeStream",
    "LandmarkFrame",
    "LandmarkStream",
    "PipelineModel",
    "StreamSession",
    "TrainConfig",
    "load_model",
    "predict_frame",
    "predict_stream",
    "save_model",
    "train",
    "__version__",
]
