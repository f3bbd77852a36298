"""dropguard: graph backdoor defense via randomized edge dropping.

Injects backdoor triggers into node-classification graphs, trains GCN
classifiers from scratch, detects poisoned nodes by their prediction
variance under random edge dropping, and retrains a robust classifier by
unlearning the inferred target class on the detected candidates.
"""

from .config import ConfigError, ExperimentConfig
from .detect import (DetectionResult, DetectorError, VarianceScores,
                     identify, per_edge_variance, score_per_edge,
                     score_variance, timing_comparison, truncate_candidates)
from .evaluate import (EvalError, Metrics, check_theorem_1, check_theorem_2,
                       check_theorem_3, detection_metrics, evaluate,
                       prune_defense)
from .fileio import (FileFormatError, load_model, read_graph,
                     read_poisoned_graph, save_model, write_graph,
                     write_groundtruth)
from .graph import (DropSpec, Graph, GraphError, NormalizedAdjacency,
                    PerturbedGraph, WITH_SELF_LOOPS, WITHOUT_SELF_LOOPS,
                    build_graph, drop_single_edge, edge_keep_mask,
                    induced_subgraph, l_hop_subgraph, random_edge_drop,
                    sym_normalize)
from .nn import (CROSS_ENTROPY, EPS_SMOOTH, ROBUST, GcnModel, NnError,
                 PredictionOutput, TrainConfig, TrainingDivergedError,
                 backward, cross_entropy, forward, init_model,
                 spectral_norm, train)
from .robust import (PipelineResult, RobustLossArgs, RobustTrainError,
                     robust_loss, run_pipeline)
from .seeds import stage_seed
from .synth import (PoisonedGraph, SyntheticConfig, SynthesisError,
                    TriggerSpec, gen_synthetic_graph, inject_backdoor,
                    poison_unseen, split_graph)

__version__ = "0.1.0"
