"""Dense burst alignment by joint estimation of camera poses and a plane map."""

from .liegroup import RigidMotion, Twist, exp_se3, log_se3
from .scene import Intrinsics, PlaneMap, homography_flow, plane_to_depth, plane_to_normals
from .pipeline import AlignmentConfig, AlignmentResult, align, direct_flows
from .reverseflow import ReverseFlow, reverse_flow, reverse_flow_from_disparity, warp_backward
from .fusion import SRConfig, fuse_average, make_overlay, super_resolve
from .metrics import depth_metrics, flow_metrics, pose_metrics, pose_scale

__all__ = [
    "RigidMotion", "Twist", "exp_se3", "log_se3",
    "Intrinsics", "PlaneMap", "homography_flow", "plane_to_depth", "plane_to_normals",
    "AlignmentConfig", "AlignmentResult", "align", "direct_flows",
    "ReverseFlow", "reverse_flow", "reverse_flow_from_disparity", "warp_backward",
    "SRConfig", "fuse_average", "make_overlay", "super_resolve",
    "depth_metrics", "flow_metrics", "pose_metrics", "pose_scale",
]
