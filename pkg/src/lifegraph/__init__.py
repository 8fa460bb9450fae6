"""Life-pattern clustering from raw GPS trajectories.

Pipeline: stay-point extraction -> per-user DBSCAN -> significant-place
categories -> hourly day paths on a population support graph -> per-user
edge-probability vectors -> nonnegative factorization into a low-rank
pattern space -> k-means grouping and group/region/time analyses.
"""

from .analysis import (
    GridCell,
    GridStats,
    GroupProfile,
    TransitionMatrix,
    group_profiles,
    group_share_correlations,
    home_work_grid,
    regional_stats,
    weekday_weekend_transitions,
)
from .clustering import (
    ClusterResult,
    ComparisonReport,
    KmeansConfig,
    adjusted_rand_index,
    compare_direct_vs_metagraph,
    elbow_curve,
    kmeans,
    suggest_k,
)
from .corpus import GpsRecord, ParseError, ParseReport, UserTrack, parse_gps_csv, write_gps_csv
from .errors import ConfigError, InvariantError, MissingArtifactError
from .factorization import (
    Factorization,
    NmfConfig,
    StrongEdge,
    align_basis,
    embed,
    matched_cosines,
    nmf,
    strong_pattern,
)
from .graph import (
    DayPath,
    LabeledDwell,
    SupportGraph,
    TotalMatrix,
    assemble_total_matrix,
    average_vector,
    build_support_graph,
    day_to_ta_vector,
    is_weekend,
    label_day,
    label_user_days,
)
from .places import (
    CandidateStats,
    PlaceParams,
    SignificantPlace,
    candidate_stats,
    classify_places,
    group_stays_by_cluster,
)
from .spatial import NOISE, DbscanParams, cluster_user_stays, dbscan
from .staypoint import StayParams, StayPoint, extract_stay_points, filter_noise, haversine_m
from .synth import (
    ARCHETYPES,
    GroundTruth,
    SyntheticSpec,
    TruePlace,
    UserTruth,
    equal_mix,
    generate_synthetic,
    iter_synthetic,
)

__version__ = "0.1.0"
