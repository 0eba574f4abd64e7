"""Rotation-aware backbone features and kinetic analysis for MD trajectories.

The package turns protein backbone trajectories (N, CA, C atoms per residue)
into per-residue local-coordinate-system rotations and derived feature
matrices, and provides the downstream kinetic, similarity, clustering,
correlation and association analyses that operate on them.

Thread count for BLAS-backed operations can be pinned with the
ORIENTMD_THREADS environment variable; it must be set before the first
numpy import in the process, which is why it is handled here.
"""

import os as _os

_threads = _os.environ.get("ORIENTMD_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .errors import (  # noqa: E402
    OrientmdError,
    FormatError,
    TopologyError,
    DegenerateGeometryError,
    DegenerateModelError,
)
from .so3 import MeanSettings, hat, vee, exp_map, log_map, geodesic_distance, intrinsic_mean  # noqa: E402
from .trajio import (  # noqa: E402
    BackboneTrajectory,
    ReferenceStructure,
    Superposition,
    load_trajectory,
    save_trajectory,
    parse_reference,
    kabsch,
    align_trajectory,
)
from .features import (  # noqa: E402
    FeatureKind,
    FeatureMatrix,
    LcsStack,
    build_lcs,
    orientation_features,
    axis_angle_split,
    ca_features,
    torsion_features,
    pointcloud_features,
    read_features,
    write_features,
)
from .kinetics import (  # noqa: E402
    PcaModel,
    TicaModel,
    LagSearchResult,
    pca_fit,
    tica_fit,
    implied_timescale,
    find_plateau,
    lag_search,
    vamp2_score,
    amuse,
)
from .similarity import (  # noqa: E402
    PairwiseKind,
    PairwiseMatrix,
    Rank1Decomposition,
    pairwise_rmsd,
    lddt,
    lddt_matrix,
    gram,
    rank1,
    spearman_lower_triangle,
)
from .clustering import (  # noqa: E402
    ClusterLabels,
    ward_linkage,
    ward_cluster,
    gmm_expand,
    silhouette_precomputed,
    ami,
    ari,
    curate,
)
from .correlation import (  # noqa: E402
    CorrelationKind,
    CorrelationMap,
    dccm,
    dcom,
    dcom_diff,
)
from .association import (  # noqa: E402
    AssociationSeries,
    InterfaceDefinition,
    MetricKind,
    TwoStepPca,
    detect_interface,
    irmsd,
    irmsd_series,
    cog_distance,
    cog_series,
    kde_threshold,
    two_step_pca,
    knn_mi,
)
from .bench import (  # noqa: E402
    ProfileGrid,
    ProfileReport,
    desk_grid,
    full_grid,
    gen_random_rotations,
    gen_random_pointclouds,
    profile,
)

__version__ = "0.1.0"

__all__ = [
    "OrientmdError", "FormatError", "TopologyError", "DegenerateGeometryError",
    "DegenerateModelError",
    "MeanSettings", "hat", "vee", "exp_map", "log_map", "geodesic_distance",
    "intrinsic_mean",
    "BackboneTrajectory", "ReferenceStructure", "Superposition",
    "load_trajectory", "save_trajectory", "parse_reference", "kabsch",
    "align_trajectory",
    "FeatureKind", "FeatureMatrix", "LcsStack", "build_lcs",
    "orientation_features", "axis_angle_split", "ca_features",
    "torsion_features", "pointcloud_features", "read_features",
    "write_features",
    "PcaModel", "TicaModel", "LagSearchResult", "pca_fit", "tica_fit",
    "implied_timescale", "find_plateau", "lag_search", "vamp2_score", "amuse",
    "PairwiseKind", "PairwiseMatrix", "Rank1Decomposition", "pairwise_rmsd",
    "lddt", "lddt_matrix", "gram", "rank1", "spearman_lower_triangle",
    "ClusterLabels", "ward_linkage", "ward_cluster", "gmm_expand",
    "silhouette_precomputed", "ami", "ari", "curate",
    "CorrelationKind", "CorrelationMap", "dccm", "dcom", "dcom_diff",
    "AssociationSeries", "InterfaceDefinition", "MetricKind", "TwoStepPca",
    "detect_interface", "irmsd", "irmsd_series", "cog_distance", "cog_series",
    "kde_threshold", "two_step_pca", "knn_mi",
    "ProfileGrid", "ProfileReport", "desk_grid", "full_grid",
    "gen_random_rotations", "gen_random_pointclouds", "profile",
]
