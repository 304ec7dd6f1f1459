"""Filter graph distances: Wasserstein distances between filtered graph signals and graph alignment."""

__version__ = "0.1.0"

from .errors import NumericError, ValidationError
from .graph import Graph, Laplacian, PermutationMatrix, laplacian, random_permutation
from .filters import FilterSpec, FilteredGraph, STANDARD_FILTERS, materialize, parse_filter
from .distance import (
    brute_force_align,
    distance_report,
    exact_distance,
    surrogate_cost,
    surrogate_gradient,
)
from .transport import Coupling, SinkhornConfig, kl_project, project_and_grad, sinkhorn
from .solvers import (
    MgdConfig,
    SolverResult,
    SolverSpec,
    StochasticConfig,
    default_hyperparams,
    mgd_solve,
    preset,
    round_to_hard,
    stochastic_mgd_solve,
)
from .generators import SbmSpec, erdos_renyi, fuse_nodes, sbm
from .evaluation import (
    DistanceMatrix,
    aligned_frobenius,
    community_nmi,
    distance_matrix,
    nmi,
    one_nn_classify,
    spectral_clustering,
)
from .datasets import GraphCollection, load_edge_list, load_tudataset, sample_collection, write_results
