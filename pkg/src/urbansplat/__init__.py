"""Point-based renderer and trainer for dynamic urban scenes.

A scene is a background point set, per-object point sets carried by rigid
tracklet poses, and a sky cubemap. Rendering projects anisotropic Gaussians
into screen space and alpha-composites them front to back; every model
parameter has an analytic gradient so scenes are fit directly to posed
images, lidar depth, and label maps.
"""

from .geometry import Camera
from .scene import (
    GaussianSet,
    ObjectNode,
    PoseTrack,
    SceneGraph,
    SkyCubemap,
    empty_gaussian_set,
    load_checkpoint,
    save_checkpoint,
)
from .rasterizer import (
    RenderConfig,
    RenderOutputs,
    render,
    render_backward,
    render_decomposed,
    render_reference,
)
from .dataset import Dataset, load_dataset
from .initialize import init_scene
from .training import TrainConfig, evaluate, train
from .editing import EditScript, apply_edit

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "Dataset",
    "EditScript",
    "GaussianSet",
    "ObjectNode",
    "PoseTrack",
    "RenderConfig",
    "RenderOutputs",
    "SceneGraph",
    "SkyCubemap",
    "TrainConfig",
    "apply_edit",
    "empty_gaussian_set",
    "evaluate",
    "init_scene",
    "load_checkpoint",
    "load_dataset",
    "render",
    "render_backward",
    "render_decomposed",
    "render_reference",
    "save_checkpoint",
    "train",
]
