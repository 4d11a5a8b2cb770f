from .backward import ModelGrads, SceneGrads, render_backward
from .forward import (
    RenderConfig,
    RenderOutputs,
    assemble_world_set,
    render,
    render_decomposed,
    set_threads,
)
from .reference import render_reference

__all__ = [
    "ModelGrads",
    "SceneGrads",
    "RenderConfig",
    "RenderOutputs",
    "assemble_world_set",
    "render",
    "render_backward",
    "render_decomposed",
    "render_reference",
    "set_threads",
]
