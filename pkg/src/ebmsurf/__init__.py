"""Surface reconstruction from unoriented point clouds.

A coordinate network f: R^3 -> R is fitted so that exp(-beta |f|) matches the
distribution of the observed points (maximum likelihood with Langevin-dynamics
negatives plus a unit-gradient-norm penalty); its zero level set, extracted by
marching cubes, is the reconstructed surface. Matching beta to the noise scale
(beta ~ sqrt(2)/sigma) makes the fit noise-aware.
"""

from .geometry import (
    GeometryError,
    NormalizationTransform,
    PointCloud,
    TriangleMesh,
    denormalize,
    estimate_normals,
    normalize,
    sample_surface,
)
from .kdtree import SpatialIndex, nearest
from .meshio import load_mesh, load_point_cloud, save_mesh, save_point_cloud
from .network import (
    CoordinateNetwork,
    NetworkConfig,
    NetworkGradients,
    geometric_init,
    load_checkpoint,
    pe_band_weights,
    positional_encode,
    save_checkpoint,
)
from .ebm import (
    GibbsModel,
    LangevinConfig,
    ReplayBuffer,
    SamplerDivergedError,
    langevin_step,
    run_chain,
    sample_negatives,
    step_schedule,
)
from .trainer import (
    TrainConfig,
    TrainState,
    TrainingDivergedError,
    beta_schedule,
    loss_ebm,
    loss_eikonal,
    total_loss,
    train,
)
from .mesher import EmptyLevelSetError, GridSpec, extract, field_to_mesh
from .scanner import ScanConfig, ScanError, scan
from .metrics import MetricsReport, chamfer_distance, evaluate, f_score, normal_consistency

__version__ = "0.1.0"

__all__ = [
    "GeometryError", "NormalizationTransform", "PointCloud", "TriangleMesh",
    "denormalize", "estimate_normals", "normalize", "sample_surface",
    "SpatialIndex", "nearest",
    "load_mesh", "load_point_cloud", "save_mesh", "save_point_cloud",
    "CoordinateNetwork", "NetworkConfig", "NetworkGradients", "geometric_init",
    "load_checkpoint", "pe_band_weights", "positional_encode", "save_checkpoint",
    "GibbsModel", "LangevinConfig", "ReplayBuffer", "SamplerDivergedError",
    "langevin_step", "run_chain", "sample_negatives", "step_schedule",
    "TrainConfig", "TrainState", "TrainingDivergedError", "beta_schedule",
    "loss_ebm", "loss_eikonal", "total_loss", "train",
    "EmptyLevelSetError", "GridSpec", "extract", "field_to_mesh",
    "ScanConfig", "ScanError", "scan",
    "MetricsReport", "chamfer_distance", "evaluate", "f_score", "normal_consistency",
]
