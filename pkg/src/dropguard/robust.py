"""Target-class unlearning loss and the end-to-end defense pipeline:
train a no-self-loop detector model on the (possibly poisoned) graph,
score prediction variance under random edge dropping, pick candidates
and the inferred target class, then train the final classifier while
pushing the candidates' target-class confidence down.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detect import (DetectionResult, VarianceScores, identify,
                     score_per_edge, score_variance, truncate_candidates)
from .graph import DropSpec, Graph, WITH_SELF_LOOPS, WITHOUT_SELF_LOOPS, sym_normalize
from .nn import (CROSS_ENTROPY, ROBUST, GcnModel, PredictionOutput,
                 TrainConfig, forward, init_model, train)
from .seeds import stage_seed

DETECTOR_RANDOMIZED = "randomized"
DETECTOR_PER_EDGE = "per_edge"


class RobustTrainError(ValueError):
    pass


@dataclass(frozen=True)
class RobustLossArgs:
    """Candidate poisoned nodes, the inferred target class, and the
    remaining labeled nodes trained with their own labels.

    normalize=False gives the written objective (plain per-node sums);
    normalize=True averages within each term so unlearning pressure does
    not depend on how many candidates were found. The pipeline trains
    with the normalized form: with plain sums, every poisoned node that
    escapes detection re-teaches the trigger with the same weight that a
    detected node unlearns it, and a partially detected attack survives.
    """

    candidates: np.ndarray
    target_class: int
    clean_labeled: np.ndarray
    normalize: bool = False

    def __post_init__(self):
        inter = np.intersect1d(self.candidates, self.clean_labeled)
        if inter.size:
            raise RobustTrainError(
                f"candidates and clean_labeled overlap: {inter[:5].tolist()}")


def robust_loss(output: PredictionOutput, args: RobustLossArgs,
                labels: np.ndarray, normalize: bool | None = None) -> float:
    """Unlearning objective: log p(target_class) over candidates plus
    cross-entropy over clean labeled nodes (sums by default, per-term
    means when normalized).

    Both terms use the smoothed probabilities, so the log term is bounded
    below by log(EPS_SMOOTH).
    """
    if normalize is None:
        normalize = args.normalize
    n = output.probabilities.shape[0]
    value = 0.0
    if args.candidates.size:
        if args.candidates.max() >= n or args.candidates.min() < 0:
            raise RobustTrainError("candidate node lacks a probability row")
        term = np.log(output.probabilities[args.candidates, args.target_class])
        value += float(term.mean() if normalize else term.sum())
    if args.clean_labeled.size:
        y = np.asarray(labels)[args.clean_labeled]
        if (y < 0).any():
            raise RobustTrainError("unlabeled node in clean_labeled")
        term = -np.log(output.probabilities[args.clean_labeled, y])
        value += float(term.mean() if normalize else term.sum())
    return value


@dataclass
class PipelineResult:
    backdoored_model: GcnModel
    scores: VarianceScores
    detection: DetectionResult
    robust_model: GcnModel
    robust_args: RobustLossArgs
    initial_target_confidence: float
    final_target_confidence: float
    manifest: dict


def _target_confidence(model: GcnModel, graph: Graph,
                       nodes: np.ndarray, target_class: int) -> float:
    if nodes.size == 0:
        return 0.0
    out = forward(model, sym_normalize(graph, model.norm_mode), graph.features)
    return float(out.probabilities[nodes, target_class].mean())


def run_pipeline(backdoored_graph: Graph, drop_spec: DropSpec,
                 train_config: TrainConfig,
                 final_norm_mode: str = WITH_SELF_LOOPS,
                 detector: str = DETECTOR_RANDOMIZED,
                 truncate_fraction: float = 1.0,
                 normalize_loss: bool = True,
                 threads: int = 1) -> PipelineResult:
    """Full defense run on a training graph of unknown cleanliness.

    Stages: (1) fit the detector model without self-loops on all labeled
    nodes, (2) score prediction variance (randomized edge dropping, or the
    per-edge baseline), (3) derive target class, threshold and candidates,
    (4) fit the final classifier under the unlearning loss. Stage seeds
    are derived from train_config.seed; everything is deterministic.
    """
    labeled = backdoored_graph.labeled_nodes()
    if labeled.size == 0:
        raise RobustTrainError("graph has no labeled nodes")
    if detector not in (DETECTOR_RANDOMIZED, DETECTOR_PER_EDGE):
        raise RobustTrainError(f"unknown detector {detector!r}")

    seed_b = stage_seed(train_config.seed, "detector_model")
    seed_f = stage_seed(train_config.seed, "robust_model")
    config_b = TrainConfig(**{**train_config.__dict__, "seed": seed_b})
    config_f = TrainConfig(**{**train_config.__dict__, "seed": seed_f})

    model_b = train(backdoored_graph, labeled, config_b, WITHOUT_SELF_LOOPS,
                    CROSS_ENTROPY)
    if detector == DETECTOR_RANDOMIZED:
        scores = score_variance(model_b, backdoored_graph, drop_spec,
                                threads=threads)
    else:
        scores = score_per_edge(model_b, backdoored_graph)
    detection = identify(scores, backdoored_graph.labels)
    if truncate_fraction < 1.0:
        detection = truncate_candidates(detection, scores, truncate_fraction)

    clean = np.setdiff1d(labeled, detection.candidates)
    args = RobustLossArgs(candidates=detection.candidates,
                          target_class=detection.target_class,
                          clean_labeled=clean, normalize=normalize_loss)
    start = init_model(backdoored_graph.feature_dim,
                       backdoored_graph.num_classes, config_f, final_norm_mode)
    initial_conf = _target_confidence(start, backdoored_graph,
                                      args.candidates, args.target_class)
    model_f = train(backdoored_graph, labeled, config_f, final_norm_mode,
                    ROBUST, robust_args=args)
    final_conf = _target_confidence(model_f, backdoored_graph,
                                    args.candidates, args.target_class)

    manifest = {
        "stage_seeds": {"detector_model": seed_b, "robust_model": seed_f},
        "drop_spec": {"drop_prob": drop_spec.drop_prob,
                      "iterations": drop_spec.iterations,
                      "seed": drop_spec.seed},
        "train_config": dict(train_config.__dict__),
        "detector": detector,
        "truncate_fraction": truncate_fraction,
        "normalize_loss": normalize_loss,
        "final_norm_mode": final_norm_mode,
        "checkpoints": {"backdoored": model_b.fingerprint(),
                        "robust": model_f.fingerprint()},
        "detection": {
            "target_class": detection.target_class,
            "threshold": detection.threshold,
            "num_candidates": int(detection.candidates.size),
            "fallback": detection.fallback,
        },
        "unlearning": {"initial_target_confidence": initial_conf,
                       "final_target_confidence": final_conf},
    }
    return PipelineResult(backdoored_model=model_b, scores=scores,
                          detection=detection, robust_model=model_f,
                          robust_args=args,
                          initial_target_confidence=initial_conf,
                          final_target_confidence=final_conf,
                          manifest=manifest)
