"""Federated graph learning with one-shot encrypted neighbor aggregation.

The package simulates training a graph convolutional network across
clients that each hold a subgraph: a single pre-training round moves
aggregated neighbor features between clients through a pluggable secure
channel, after which plain federated averaging trains the model.  A
closed-form analysis layer predicts the induced gradient gaps and
communication costs under a stochastic block model.
"""

from .analysis import (b4_norm, bound_table, caption_constants,
                       convergence_bound, expected_closure_size,
                       expected_comm_elements, expected_gap_bound,
                       gradient_gap, label_noise_sigma,
                       measured_comm_elements, neighbor_growth)
from .channels import (FixedPointCodec, MaskedChannel, PlainChannel,
                       SizeModel, SizeModelChannel, estimate_ciphertext_bytes,
                       make_channel, pack_bools, unpack_bools)
from .datasets import (ingest_content_cites, load_dataset, make_split,
                       save_dataset)
from .errors import (ConfigError, DatasetError, DivergenceError,
                     IntegrityError, ProtocolError)
from .estimator import FederatedGCNClassifier, check_adjacency
from .federation import (ClientView, HopMessage, ModelConfig, PretrainStats,
                         RoundRecord, TrainConfig, TrainResult,
                         build_client_view, centralized_train,
                         convergence_time, evaluate, pretrain_aggregate,
                         pretrain_collect, pretrain_distribute, run_training,
                         setup_federation)
from .gcn import (ForwardCache, accuracy, gcn_backward, gcn_forward,
                  init_weights, load_weights, save_weights, sgd_step,
                  xent_loss)
from .graphs import Graph, SbmParams, sbm_generate
from .harness import ExperimentConfig, run_experiment, run_seed_group
from .partition import Partition, partition_nodes

__version__ = "0.1.0"

__all__ = [
    "Graph", "SbmParams", "sbm_generate", "Partition", "partition_nodes",
    "ModelConfig", "TrainConfig", "TrainResult", "RoundRecord",
    "HopMessage", "ClientView", "PretrainStats",
    "pretrain_collect", "pretrain_aggregate", "pretrain_distribute",
    "build_client_view", "setup_federation", "run_training",
    "centralized_train", "convergence_time", "evaluate",
    "gcn_forward", "gcn_backward", "xent_loss", "sgd_step", "init_weights",
    "accuracy", "ForwardCache", "save_weights", "load_weights",
    "PlainChannel", "MaskedChannel", "SizeModelChannel", "FixedPointCodec",
    "SizeModel", "make_channel", "pack_bools", "unpack_bools",
    "estimate_ciphertext_bytes",
    "gradient_gap", "expected_gap_bound", "convergence_bound", "b4_norm",
    "caption_constants", "neighbor_growth", "expected_comm_elements",
    "measured_comm_elements", "expected_closure_size", "bound_table",
    "label_noise_sigma",
    "load_dataset", "save_dataset", "make_split", "ingest_content_cites",
    "ExperimentConfig", "run_experiment", "run_seed_group",
    "FederatedGCNClassifier", "check_adjacency",
    "ConfigError", "DatasetError", "IntegrityError", "ProtocolError",
    "DivergenceError",
]
