"""Joint mixed-effects modeling of warp and spatially correlated intensity
variation in stacks of 2D grayscale images."""

from .errors import (
    ConfigError,
    DegenerateFitError,
    EstimationError,
    ImageFormatError,
    InvalidDimensionError,
    InvalidPointError,
    NotPositiveDefiniteError,
    WarpmixError,
)
from .grid import (
    GradientField,
    Image,
    Lattice,
    image_from_values,
    image_gradient,
    interp_bilinear,
    make_lattice,
)
from .imgio import read_field_f32, read_image, write_field_f32, write_image
from .warp import (
    AnchorGrid,
    DisplacementGrid,
    eval_warp,
    fold_count,
    inverse_warp,
    load_displacements_csv,
    resample,
    save_displacements_csv,
    warp_basis,
)
from .gmrf import (
    IntensityModel,
    WarpPrior,
    assemble_precision,
    bs_cov,
    logdet_intensity,
    sample_gmrf,
    sample_warp,
    warp_cov_matrix,
)
from .likelihood import (
    VarianceParams,
    apply_Ainv,
    assemble_Z,
    intensity_factor,
    logdet_V,
    nll,
    profile_sigma2,
    profiled_nll,
    quad_form_Vinv,
)
from .inference import (
    FitConfig,
    ModelFit,
    estimate_variances,
    fit,
    predict_intensity,
    predict_warp,
    reconstruct,
    update_template,
)
from .simbench import (
    BenchResult,
    SimSpec,
    benchmark,
    fit_pointwise,
    fit_procrustes,
    simulate_dataset,
    template_mse,
    warp_mse,
)

__version__ = "0.1.0"
