"""Rib suppression for chest radiographs in contour-normal coordinates.

The package unwraps each rib into an (s, t) frame (arc length along the
rib contour, depth along the inward normal), removes everything that is
not constant along the contour from the depth gradient, rebuilds the bone
shadow, and subtracts it.  A synthetic phantom generator, the image
quality metrics used to judge results, a seeded random grid-search tuner,
and a CLI round out the toolkit.
"""

from .estimator import RibSuppressor, TunedRibSuppressor
from .imagery import (
    ContourError,
    Image,
    MaskError,
    RibMask,
    RibMaskSet,
    load_image,
    load_mask_set,
    save_image,
    save_mask_set,
    trace_contour,
)
from .metrics import (
    MetricsReport,
    combined_loss,
    evaluate_pair,
    l1,
    ms_ssim,
    psnr,
    psnr_db,
    rmse,
)
from .phantom import (
    PhantomCase,
    PhantomGeometryError,
    PhantomSpec,
    distance_to_contour,
    generate_phantom,
)
from .st_space import (
    Contour,
    STDomainError,
    STField,
    backproject,
    compute_depth,
    forward_st,
    inverse_st,
    read_field_dump,
    sample_field,
    write_field_dump,
)
from .suppression import (
    DEFAULT_PARAMS,
    BonePatch,
    SuppressionError,
    SuppressionParams,
    SuppressionResult,
    blend_border,
    centerline_smooth,
    clamp_nonneg,
    derivative_s,
    reintegrate,
    smooth_t,
    suppress_all,
    suppress_rib,
)
from .tuner import (
    DEFAULT_SEED,
    DEFAULT_SPACE,
    ParamSpace,
    TuneTrace,
    TunerError,
    random_grid_search,
    supervised_objective,
    unsupervised_objective,
)

__version__ = "0.1.0"

__all__ = [
    "BonePatch",
    "Contour",
    "ContourError",
    "DEFAULT_PARAMS",
    "DEFAULT_SEED",
    "DEFAULT_SPACE",
    "Image",
    "MaskError",
    "MetricsReport",
    "ParamSpace",
    "PhantomCase",
    "PhantomGeometryError",
    "PhantomSpec",
    "RibMask",
    "RibMaskSet",
    "RibSuppressor",
    "STDomainError",
    "STField",
    "SuppressionError",
    "SuppressionParams",
    "SuppressionResult",
    "TuneTrace",
    "TunedRibSuppressor",
    "TunerError",
    "backproject",
    "blend_border",
    "centerline_smooth",
    "clamp_nonneg",
    "combined_loss",
    "compute_depth",
    "derivative_s",
    "distance_to_contour",
    "evaluate_pair",
    "forward_st",
    "generate_phantom",
    "inverse_st",
    "l1",
    "load_image",
    "load_mask_set",
    "ms_ssim",
    "psnr",
    "psnr_db",
    "random_grid_search",
    "read_field_dump",
    "reintegrate",
    "rmse",
    "sample_field",
    "save_image",
    "save_mask_set",
    "smooth_t",
    "supervised_objective",
    "suppress_all",
    "suppress_rib",
    "trace_contour",
    "unsupervised_objective",
    "write_field_dump",
    "__version__",
]
