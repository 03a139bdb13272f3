"""artikit: articulated-object data model, part-aware flow generation,
articulation regression, evaluation metrics, and URDF interop."""

from . import artcore, artihead, flowgen, interop, kinematics, metrics, netcore, sparsegrid
from .artcore import (
    ArticulatedObject,
    JointSpec,
    JointType,
    Part,
    PartGeometry,
    ROOT,
    ValidationReport,
    build_depth1,
    collapse_fixed_joints,
    simplify,
    validate_object,
)
from .artihead import (
    ArticulationHead,
    FeatureCache,
    HeadConfig,
    aggregate_multistep,
    articulation_loss,
    decode_joint,
    encode_joint,
    pool_mean_max,
    regress_joint,
)
from .kinematics import JointState, RigidTransform, joint_transform, pose_object, project_origin_to_aabb, sample_states
from .metrics import MetricsReport, aor, center_distance, chamfer_distance, evaluate, giou_distance, match_parts
from .sparsegrid import PartVoxelSet, SparseOccupancy, TokenSequence, flatten_tokenize, positional_encoding, voxelize_points

__version__ = "0.1.0"
