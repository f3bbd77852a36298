"""Command-line entry points.

Subcommands:
    attack     generate/load a graph, split it, inject triggers, write files
    defend     run the configured defense on the attacked training graph
    evaluate   score the defended model on the unseen graph
    theorems   run the three Monte-Carlo property checks
    sweep      grid over drop rounds and drop probability, CSV output

Outputs land in the config's output_dir, optionally rooted at the
DROPGUARD_OUTPUT_ROOT environment variable. Exit codes: 0 success,
1 invalid config, 2 failed property/acceptance check, 3 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .detect import identify, score_variance
from .evaluate import (check_theorem_1, check_theorem_2,
                       check_theorem_3, detection_metrics, evaluate,
                       prune_defense)
from .fileio import (detection_report, load_model, read_graph,
                     read_poisoned_graph, save_model, write_graph,
                     write_groundtruth, write_json, write_metrics_csv,
                     write_scores_tsv, write_sweep_csv)
from .graph import DropSpec, WITH_SELF_LOOPS, WITHOUT_SELF_LOOPS
from .nn import CROSS_ENTROPY, ROBUST, TrainConfig, train
from .robust import RobustLossArgs, run_pipeline
from .seeds import stage_seed
from .synth import (gen_synthetic_graph, inject_backdoor,
                    poison_unseen, split_graph)

ENV_OUTPUT_ROOT = "DROPGUARD_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CHECK_FAILED = 2
EXIT_IO = 3


class CheckFailure(RuntimeError):
    """A property or acceptance check did not pass."""


def _resolve_output_dir(cfg: ExperimentConfig) -> Path:
    out = Path(str(cfg["output_dir"]))
    root = os.environ.get(ENV_OUTPUT_ROOT)
    if root and not out.is_absolute():
        out = Path(root) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(args) -> ExperimentConfig:
    cfg = (ExperimentConfig.from_file(args.config) if args.config
           else ExperimentConfig())
    if args.output_dir:
        cfg.values["output_dir"] = args.output_dir
    if args.threads:
        cfg.values["threads"] = args.threads
    return cfg


def _source_graph(cfg: ExperimentConfig):
    if cfg["dataset.kind"] == "file":
        return read_graph(str(cfg["dataset.path"]))
    return gen_synthetic_graph(cfg.synthetic_config())


def cmd_attack(cfg: ExperimentConfig) -> int:
    out = _resolve_output_dir(cfg)
    full = _source_graph(cfg)
    train_g, train_ids, unseen_g, unseen_ids = split_graph(full)
    if np.intersect1d(train_ids, unseen_ids).size:
        raise CheckFailure("training and unseen node sets overlap")
    spec_train = cfg.trigger_spec(training=True)
    spec_test = cfg.trigger_spec(training=False)
    target = int(cfg["attack.target_class"])
    if spec_train.kind == "class_mimic":
        # the attacker estimates the mimic template once, on training data
        from dataclasses import replace
        from .synth import mimic_template_for
        template = mimic_template_for(train_g, target)
        spec_train = replace(spec_train, mimic_template=template)
        spec_test = replace(spec_test, mimic_template=template)
    train_pg = inject_backdoor(train_g, spec_train, int(cfg["attack.budget"]),
                               target, stage_seed(cfg.seed, "attack"))
    unseen_pg = poison_unseen(unseen_g, spec_test,
                              float(cfg["attack.unseen_fraction"]),
                              target, stage_seed(cfg.seed, "unseen"))
    write_graph(train_pg.graph, out / "train.graph")
    write_groundtruth(train_pg, out / "train.groundtruth")
    write_graph(unseen_pg.graph, out / "unseen.graph")
    write_groundtruth(unseen_pg, out / "unseen.groundtruth")
    print(f"attack: wrote train ({train_pg.graph.num_nodes} nodes, "
          f"{train_pg.poisoned_nodes.size} poisoned) and unseen "
          f"({unseen_pg.graph.num_nodes} nodes, "
          f"{unseen_pg.poisoned_nodes.size} poisoned) to {out}")
    return EXIT_OK


def cmd_defend(cfg: ExperimentConfig) -> int:
    out = _resolve_output_dir(cfg)
    train_pg = read_poisoned_graph(out / "train.graph", out / "train.groundtruth")
    graph = train_pg.graph
    mode = str(cfg["defense.mode"])
    tc = cfg.train_config()
    manifest: dict = {"defense": mode, "seed": cfg.seed,
                      "config": cfg.as_dict()}

    if mode == "unlearn":
        result = run_pipeline(graph, cfg.drop_spec(), tc,
                              detector=str(cfg["defense.detector"]),
                              truncate_fraction=float(cfg["defense.truncate_fraction"]),
                              threads=int(cfg["threads"]))
        save_model(result.backdoored_model, out / "model_b.npz", seed=tc.seed)
        save_model(result.robust_model, out / "model_f.npz", seed=tc.seed)
        write_json(detection_report(result.detection, result.scores),
                   out / "detection.json")
        write_scores_tsv(result.scores, graph.labels, train_pg.poisoned_nodes,
                         out / "detection.tsv")
        manifest.update(result.manifest)
        det = detection_metrics(result.detection, train_pg)
        manifest["detection"].update({"recall": det["recall"],
                                      "precision": det["precision"]})
    elif mode == "prune":
        pruned = prune_defense(graph, float(cfg["defense.prune_threshold"]))
        cfg_b = TrainConfig(**{**tc.__dict__,
                               "seed": stage_seed(tc.seed, "baseline_model")})
        model = train(pruned, pruned.labeled_nodes(), cfg_b, WITH_SELF_LOOPS,
                      CROSS_ENTROPY)
        save_model(model, out / "model_f.npz", seed=cfg_b.seed)
        kept = {(int(u), int(v)) for u, v in pruned.edges}
        trig_total = train_pg.trigger_edges.shape[0]
        trig_removed = sum(1 for u, v in train_pg.trigger_edges
                           if (int(u), int(v)) not in kept)
        manifest["prune"] = {
            "threshold": float(cfg["defense.prune_threshold"]),
            "edges_before": graph.num_edges,
            "edges_after": pruned.num_edges,
            "trigger_edges_removed_fraction":
                (trig_removed / trig_total) if trig_total else None,
        }
        manifest["checkpoints"] = {"robust": model.fingerprint()}
    else:  # none: plainly trained model, i.e. the backdoored classifier
        cfg_b = TrainConfig(**{**tc.__dict__,
                               "seed": stage_seed(tc.seed, "baseline_model")})
        model = train(graph, graph.labeled_nodes(), cfg_b, WITH_SELF_LOOPS,
                      CROSS_ENTROPY)
        save_model(model, out / "model_f.npz", seed=cfg_b.seed)
        manifest["checkpoints"] = {"backdoored": model.fingerprint()}
    write_json(manifest, out / "manifest.json")
    print(f"defend[{mode}]: artifacts written to {out}")
    return EXIT_OK


def cmd_evaluate(cfg: ExperimentConfig) -> int:
    out = _resolve_output_dir(cfg)
    unseen_pg = read_poisoned_graph(out / "unseen.graph", out / "unseen.groundtruth")
    model, _ = load_model(out / "model_f.npz")
    metrics = evaluate(model, unseen_pg, unseen_pg.target_class)
    detection_path = out / "detection.json"
    if detection_path.exists():
        from .fileio import read_json
        report = read_json(detection_path)
        train_pg = read_poisoned_graph(out / "train.graph",
                                       out / "train.groundtruth")
        cands = set(report["candidates"])
        truth = set(int(v) for v in train_pg.poisoned_nodes)
        hit = len(cands & truth)
        metrics.recall = (hit / len(truth)) if truth else 1.0
        metrics.precision = (hit / len(cands)) if cands else (1.0 if not truth else 0.0)
    write_json(metrics.as_dict(), out / "metrics.json")
    write_metrics_csv(metrics.as_dict(), out / "metrics.csv")
    print(f"evaluate: asr={metrics.asr:.4f} clean_acc={metrics.clean_acc:.4f}"
          + (f" recall={metrics.recall:.4f} precision={metrics.precision:.4f}"
             if metrics.recall is not None else ""))
    return EXIT_OK


def _theorem_model(cfg: ExperimentConfig):
    graph = gen_synthetic_graph(cfg.theorem_graph_config())
    tc = cfg.train_config()
    short = TrainConfig(**{**tc.__dict__, "max_epochs": 60, "patience": 20,
                           "seed": stage_seed(cfg.seed, "theorems")})
    model = train(graph, graph.labeled_nodes(), short, WITHOUT_SELF_LOOPS,
                  CROSS_ENTROPY)
    return graph, model


def cmd_theorems(cfg: ExperimentConfig) -> int:
    out = _resolve_output_dir(cfg)
    graph, model = _theorem_model(cfg)
    prob = float(cfg["drop.prob"])
    seed = stage_seed(cfg.seed, "theorems")
    r1 = check_theorem_1(graph, model, prob,
                         replications=int(cfg["theorems.replications"]),
                         seed=seed)
    r2 = check_theorem_2(graph, model, prob,
                         replications=int(cfg["theorems.t2_replications"]),
                         seed=seed + 1)
    r3 = check_theorem_3(int(cfg["drop.iterations"]), prob,
                         replications=int(cfg["theorems.t3_replications"]),
                         seed=seed + 2)
    report = {"expectation_preservation": r1, "concentration_bound": r2,
              "drop_count_mean": r3}
    write_json(report, out / "theorems.json")
    names = {"expectation_preservation": r1, "concentration_bound": r2,
             "drop_count_mean": r3}
    all_ok = True
    for name, rep in names.items():
        status = "PASS" if rep["passed"] else "FAIL"
        all_ok &= rep["passed"]
        print(f"{name}: {status}")
    if not all_ok:
        raise CheckFailure("one or more property checks failed; see "
                           f"{out / 'theorems.json'}")
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig) -> int:
    out = _resolve_output_dir(cfg)
    train_pg = read_poisoned_graph(out / "train.graph", out / "train.groundtruth")
    unseen_pg = read_poisoned_graph(out / "unseen.graph", out / "unseen.groundtruth")
    graph = train_pg.graph
    tc = cfg.train_config()
    cfg_b = TrainConfig(**{**tc.__dict__,
                           "seed": stage_seed(tc.seed, "detector_model")})
    model_b = train(graph, graph.labeled_nodes(), cfg_b, WITHOUT_SELF_LOOPS,
                    CROSS_ENTROPY)
    cfg_f = TrainConfig(**{**tc.__dict__,
                           "seed": stage_seed(tc.seed, "robust_model")})
    labeled = graph.labeled_nodes()
    rows = []
    for iterations in cfg["sweep.iterations"]:
        for prob in cfg["sweep.probs"]:
            spec = DropSpec(drop_prob=float(prob), iterations=int(iterations),
                            seed=stage_seed(cfg.seed, "drop"))
            scores = score_variance(model_b, graph, spec,
                                    threads=int(cfg["threads"]))
            detection = identify(scores, graph.labels)
            args = RobustLossArgs(
                candidates=detection.candidates,
                target_class=detection.target_class,
                clean_labeled=np.setdiff1d(labeled, detection.candidates),
                normalize=True)
            model_f = train(graph, labeled, cfg_f, WITH_SELF_LOOPS, ROBUST,
                            robust_args=args)
            metrics = evaluate(model_f, unseen_pg, unseen_pg.target_class)
            det = detection_metrics(detection, train_pg)
            rows.append({"iterations": int(iterations),
                         "drop_prob": float(prob),
                         "asr": metrics.asr, "clean_acc": metrics.clean_acc,
                         "recall": det["recall"],
                         "precision": det["precision"]})
            print(f"sweep K={iterations} prob={prob}: asr={metrics.asr:.4f} "
                  f"acc={metrics.clean_acc:.4f} recall={det['recall']:.4f} "
                  f"precision={det['precision']:.4f}")
    write_sweep_csv(rows, out / "sweep.csv")
    return EXIT_OK


_COMMANDS = {"attack": cmd_attack, "defend": cmd_defend,
             "evaluate": cmd_evaluate, "theorems": cmd_theorems,
             "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dropguard",
        description="Graph backdoor defense experiments: trigger injection, "
                    "edge-drop variance detection, robust retraining.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", default=None,
                       help="experiment config file (key = value lines)")
        p.add_argument("-o", "--output-dir", default=None,
                       help="override output_dir from the config")
        p.add_argument("--threads", type=int, default=None,
                       help="parallel workers for the drop rounds "
                            "(reduction order is fixed, so results match "
                            "the single-threaded run)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    except (OSError, FileNotFoundError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
