"""Training-free open-vocabulary grouping and querying over splat scenes.

The pipeline lifts multi-view 2D instance masks onto a pre-trained Gaussian
splat scene, refines group boundaries by multi-view label entropy and
opacity, distills per-object candidate names into text embeddings, and
answers free-form text queries by cosine matching.
"""

__version__ = "0.1.0"

from .scene import Camera, GaussianScene, load_cameras, load_ply, save_ply
from .render import project, rasterize, rasterize_reference, render_selection
from .masks import MaskSet, TrackRegistry, ingest_masks, iou
from .grouping import GroupAccumulator, ObjectGroup, accumulate_weights, hard_assign
from .neutral import label_by_projection, label_entropy, refine
from .distill import InstanceRegistry, MockEmbeddingClient, MockVlmClient, distill
from .query import QueryResult, cosine, segment, select
from .evaluate import eval_segmentation_3d, eval_selection_2d

__all__ = [
    "Camera",
    "GaussianScene",
    "GroupAccumulator",
    "InstanceRegistry",
    "MaskSet",
    "MockEmbeddingClient",
    "MockVlmClient",
    "ObjectGroup",
    "QueryResult",
    "TrackRegistry",
    "accumulate_weights",
    "cosine",
    "distill",
    "eval_segmentation_3d",
    "eval_selection_2d",
    "hard_assign",
    "ingest_masks",
    "iou",
    "label_by_projection",
    "label_entropy",
    "load_cameras",
    "load_ply",
    "project",
    "rasterize",
    "rasterize_reference",
    "refine",
    "render_selection",
    "save_ply",
    "segment",
    "select",
]
