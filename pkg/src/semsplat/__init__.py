"""Semantic Gaussian splatting: differentiable rendering of semantic
anisotropic Gaussians, training losses, camera recovery from point maps,
cross-modal token fusion, and the matching evaluation protocol."""

from .attention import (
    AttentionBlockParams,
    GradcheckReport,
    TokenMatrix,
    attention_gradcheck,
    cross_modal_fuse,
    fuse_backward,
    scaled_dot_attention,
)
from .camera import Camera, Intrinsics
from .camera_recovery import (
    FocalEstimate,
    RansacParams,
    RelativePose,
    align_depth_median,
    average_focal,
    estimate_focal_weiszfeld,
    estimate_relative_pose,
    lower_median,
)
from .cli import cli_main, main
from .diagnostics import SelfcheckResult, rasterizer_gradcheck, run_selftest
from .errors import DataError, InvariantError, NumericalError, SemsplatError
from .field import (
    PointPrimitive,
    SemanticGaussian,
    SemanticGaussianField,
    color_from_sh,
    covariance_from_scale_rotation,
    normalize_quaternion,
    rotation_matrix_from_quaternion,
)
from .losses import (
    DepthRegressionResult,
    LossBreakdown,
    LossWeights,
    PointmapSupervision,
    RenderTargets,
    combine_loss_components,
    confidence_loss,
    confidence_loss_grad,
    depth_regression_loss,
    depth_regression_grad,
    dssim,
    dssim_grad,
    photometric_l1,
    photometric_l1_grad,
    semantic_cosine_loss,
    semantic_cosine_grad,
    ssim,
    total_loss,
)
from .metrics import (
    DEFAULT_CLASS_NAMES,
    IGNORE_LABEL,
    LabelMap,
    TextEmbeddingSet,
    depth_rel_tau,
    miou_pixel_acc,
    open_vocab_segment,
    pca_visualize,
    psnr,
)
from .pointmap import PointMap
from .rasterizer import (
    FieldGradients,
    Projected2DGaussian,
    RenderGradients,
    RenderOutput,
    project_gaussians,
    render_backward,
    render_forward,
)
from .tensorio import load_field, load_png, load_tensor, save_field, save_png, save_tensor

__version__ = "0.1.0"

__all__ = [
    "AttentionBlockParams",
    "Camera",
    "DEFAULT_CLASS_NAMES",
    "DataError",
    "DepthRegressionResult",
    "FieldGradients",
    "FocalEstimate",
    "GradcheckReport",
    "IGNORE_LABEL",
    "Intrinsics",
    "InvariantError",
    "LabelMap",
    "LossBreakdown",
    "LossWeights",
    "NumericalError",
    "PointMap",
    "PointPrimitive",
    "PointmapSupervision",
    "Projected2DGaussian",
    "RansacParams",
    "RelativePose",
    "RenderGradients",
    "RenderOutput",
    "RenderTargets",
    "SelfcheckResult",
    "SemanticGaussian",
    "SemanticGaussianField",
    "SemsplatError",
    "TextEmbeddingSet",
    "TokenMatrix",
    "align_depth_median",
    "attention_gradcheck",
    "average_focal",
    "cli_main",
    "color_from_sh",
    "combine_loss_components",
    "confidence_loss",
    "confidence_loss_grad",
    "covariance_from_scale_rotation",
    "cross_modal_fuse",
    "depth_regression_grad",
    "depth_regression_loss",
    "depth_rel_tau",
    "dssim",
    "dssim_grad",
    "estimate_focal_weiszfeld",
    "estimate_relative_pose",
    "fuse_backward",
    "load_field",
    "load_png",
    "load_tensor",
    "lower_median",
    "main",
    "miou_pixel_acc",
    "normalize_quaternion",
    "open_vocab_segment",
    "pca_visualize",
    "photometric_l1",
    "photometric_l1_grad",
    "project_gaussians",
    "psnr",
    "rasterizer_gradcheck",
    "render_backward",
    "render_forward",
    "rotation_matrix_from_quaternion",
    "run_selftest",
    "save_field",
    "save_png",
    "save_tensor",
    "scaled_dot_attention",
    "semantic_cosine_grad",
    "semantic_cosine_loss",
    "ssim",
    "total_loss",
]
