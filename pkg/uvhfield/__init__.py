# -------------------------------------------------------------------
# uvhfield: Pose-controllable radiance fields in texture space.
#
# Author: Lain Musgrove (lainproliant)
# Date: Monday March 3, 2025
#
# Released under a 3-clause BSD license, see LICENSE for more info.
# -------------------------------------------------------------------

__all__ = [
    "UvhError",
    "ConfigurationError",
    "TemplateError",
    "DegenerateGeometryError",
    "ProjectionError",
    "ContractViolation",
    "NonFiniteGradientError",
    "NonFiniteLossError",
    "UndefinedMetricError",
    "ManifestError",
    "CheckpointMismatchError",
    "InternalError",
    "SkinnedTemplate",
    "Pose",
    "Shape",
    "PosedMesh",
    "forward_kinematics",
    "skin_vertices",
    "compute_normals",
    "load_template",
    "save_template",
    "build_humanoid",
    "SurfacePoint",
    "UvhCoord",
    "nearest_point_oracle",
    "dispersed_project",
    "to_uvh",
    "shell_test",
    "local_view_dir",
    "FreqEncoding",
    "HashConfig",
    "HashGrid",
    "freq_encode",
    "hash_encode",
    "pose_encode",
    "Ablation",
    "FieldConfig",
    "FieldParams",
    "query_field",
    "Camera",
    "RenderConfig",
    "generate_rays",
    "march_ray",
    "composite",
    "render_image",
    "masked_psnr",
    "SceneSpec",
    "DatasetManifest",
    "generate_dataset",
    "load_manifest",
    "TrainConfig",
    "create_state",
    "train_step",
    "train",
    "evaluate",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "RunConfig",
    "EventBus",
    "Events",
]

from .body_model import (
    Pose,
    PosedMesh,
    Shape,
    SkinnedTemplate,
    compute_normals,
    forward_kinematics,
    load_template,
    save_template,
    skin_vertices,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .datagen import DatasetManifest, SceneSpec, generate_dataset, load_manifest
from .encodings import FreqEncoding, HashConfig, HashGrid, freq_encode, hash_encode, pose_encode
from .errors import (
    CheckpointMismatchError,
    ConfigurationError,
    ContractViolation,
    DegenerateGeometryError,
    InternalError,
    ManifestError,
    NonFiniteGradientError,
    NonFiniteLossError,
    ProjectionError,
    TemplateError,
    UndefinedMetricError,
    UvhError,
)
from .events import EventBus, Events
from .field import Ablation, FieldConfig, FieldParams, query_field
from .humanoid import build_humanoid
from .render import (
    Camera,
    RenderConfig,
    composite,
    generate_rays,
    march_ray,
    masked_psnr,
    render_image,
)
from .surface_map import (
    SurfacePoint,
    UvhCoord,
    dispersed_project,
    local_view_dir,
    nearest_point_oracle,
    shell_test,
    to_uvh,
)
from .trainer import TrainConfig, create_state, evaluate, train, train_step
