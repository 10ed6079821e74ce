"""Dynamic fan-beam CT: phantom simulation, measurement and reconstruction.

The pipeline runs phantom -> projector -> sinogram -> recon; geometry and
schedule objects thread through all stages, transforms supplies the sparsity
machinery for the iterative solvers, and container persists every array in
the DTOMO1 header + raw payload pair. The command line in dyntomo.cli drives
the same functions.
"""

from .container import (
    ImageStackPayload,
    load_image_stack,
    load_intensity_stack,
    load_sinogram,
    save_image_stack,
    save_intensity_stack,
    save_sinogram,
)
from .errors import (
    AngleLookupError,
    ConfigError,
    DataError,
    DynTomoError,
    PartitionError,
    ScheduleIndexError,
    ShapeError,
    SolverDiverged,
)
from .geometry import (
    Continuous,
    Custom,
    FanBeamGeometry,
    SamplingSchedule,
    Sequential,
    cont360,
    effective_pixel_size,
    seq8x45,
    stempo_geometry,
)
from .phantom import (
    Annulus,
    ConstantStep,
    Disk,
    GroundTruth,
    Jump,
    Periodic,
    PhantomScene,
    Polygon,
    Rectangle,
    Static,
    generate_ground_truth,
    rasterize_frame,
    stempo_scene,
    threshold_clean,
)
from .projector import (
    BlockDiagonalOperator,
    FanBeamProjector,
    LinearOperator,
    make_temporal_operator,
    operator_norm_estimate,
)
from .recon import (
    FramePartition,
    ReconVolume,
    SolverReport,
    block_mask,
    crop_pad_resample,
    dilate_mask,
    fbp,
    fbp_volume,
    lps,
    metrics,
    pdfp_wavelet,
    tune_alpha_sparsity,
)
from .sinogram import (
    IntensityStack,
    Sinogram,
    bin_intensities,
    default_flat_region,
    partition_frames,
    simulate_measurement,
    subsample,
    to_sinogram,
)
from .transforms import (
    CoefficientBlock,
    WaveletSpec,
    dwt_forward,
    dwt_inverse,
    soft_threshold,
    svt,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
