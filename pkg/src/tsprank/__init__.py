"""Learning to rank by solving an open-path travelling salesman problem over pairwise scores."""
from .core import (INVALID, BilinearModel, EdgeSelection, Entity, RankingGroup, RankOrder, build_adjacency,
                   edges_to_tour, encode, score_pair, tour_score, tour_to_edges, tour_to_ranks)
from .errors import (CapacityError, CorruptModelError, DimensionError, FormulationError, IngestionError,
                     InvalidSelectionError, SolverTimeout, TSPRankError, UndefinedMetricError)
from .learning import TrainConfig, global_loss, local_loss, predict, train
from .solvers import SolverBackend, loss_augment, solve

__version__ = "0.1.0"
