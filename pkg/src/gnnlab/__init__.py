"""Graph-learning laboratory: mean-field inference on pairwise MRFs, a
unified message-passing layer zoo, and a node-classification benchmark
harness."""

from .data import GraphDataset, build_normalized_adjacency, drop_edges, load_dataset, save_dataset
from .estimator import GraphNodeClassifier
from .models import GraphContext, ModelConfig, build_model
from .mrf import MeanFieldState, PairwiseMRF, exact_marginals, free_energy, run_mean_field
from .tensor import Adam, SparseMatrix, Tensor
from .train import Metrics, TrainConfig, evaluate, repeat_runs, train_model

__version__ = "0.1.0"
