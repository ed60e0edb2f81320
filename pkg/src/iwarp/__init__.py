"""Category-level shape warping and interaction transfer for point clouds.

Learn a low-dimensional warp space over a category from a handful of
meshes, infer shape and pose of new instances from partial clouds, and
carry grasps and relational placements over to them.
"""

from .cpd import CoherentPointDrift, CpdConfig, cpd_register
from .geometry import RigidTransform, farthest_point_sampling, gram_schmidt, horn_align, one_sided_chamfer
from .inference import InferenceConfig, ShapePoseEstimator, infer_shape_pose
from .interaction import (
    GraspSpec,
    PlacementSpec,
    extract_grasp_contacts,
    extract_placement_points,
    transfer_grasp,
    transfer_placement,
)
from .mesh import TriMesh
from .warp import ShapeParams, WarpModel, WarpSpace, learn_warp_space

__version__ = "0.1.0"

__all__ = [
    "CoherentPointDrift",
    "CpdConfig",
    "cpd_register",
    "RigidTransform",
    "farthest_point_sampling",
    "gram_schmidt",
    "horn_align",
    "one_sided_chamfer",
    "InferenceConfig",
    "ShapePoseEstimator",
    "infer_shape_pose",
    "GraspSpec",
    "PlacementSpec",
    "extract_grasp_contacts",
    "extract_placement_points",
    "transfer_grasp",
    "transfer_placement",
    "TriMesh",
    "ShapeParams",
    "WarpModel",
    "WarpSpace",
    "learn_warp_space",
]
