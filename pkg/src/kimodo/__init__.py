"""Kimodo: controllable kinematic motion diffusion at desk scale."""

__version__ = "0.1.0"

from .skeleton import Skeleton, canonical_skeleton, forward_kinematics  # noqa: F401
from .motion_repr import (  # noqa: F401
    CodecConfig,
    FeatureLayout,
    MotionFeatures,
    NormalizationStats,
    RawMotion,
    decode,
    encode,
)
