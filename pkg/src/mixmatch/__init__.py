"""Mix-and-match triplet tuning of patch embedders at desk scale."""
from .data import (IGNORE_LABEL, DatasetError, LabeledImage, Patch, Rect, RunConfig,
                   load_dataset, make_synthetic, write_dataset)
from .embedder import Embedder, NumericError, sgd_step
from .estimator import MixMatchEmbedder
from .evaluation import (EvalReport, ExperimentResult, compare_strategies, evaluate,
                         sweep_graph_size)
from .graph import (PatchGraph, TripletError, build_graph, check_classwise_connected,
                    extract_triplets, random_triplets)
from .metric import (DegenerateEmbeddingError, LossReport, finite_diff_grad, normalize,
                     perceptual_distance, triplet_loss, triplet_loss_grad)
from .sampling import EmptyBatchError, SampleBatch, central_label, rect_iou, sample_patches
from .tuning import TrainState, tune

__version__ = "0.1.0"
