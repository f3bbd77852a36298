"""Serialization: the whitespace text graph format, ground-truth files,
model checkpoints, and JSON/TSV/CSV reports.

Graph text format (UTF-8, deterministic ordering on write):
    nodes N features M classes C
    E u v                    one line per canonical undirected edge
    X i f_1 ... f_M          one line per node, shortest round-trip floats
    Y i label                one line per labeled node
    MASK name i j k ...      one line per mask

Ground-truth files carry the backdoor bookkeeping for a poisoned graph:
    GROUNDTRUTH
    TARGET_CLASS t
    POISONED i j ...
    TRIGGER_NODES i j ...
    TRIGGER_EDGE u v         one line per attachment edge
    SPEC key value           trigger provenance
    SEED s
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .detect import DetectionResult, VarianceScores
from .graph import Graph, build_graph
from .nn import GcnModel, NnError
from .synth import PoisonedGraph, TriggerSpec

CHECKPOINT_VERSION = 1


class FileFormatError(ValueError):
    pass


def _fmt_float(x: float) -> str:
    return repr(float(x))


def write_graph(graph: Graph, path: str | Path) -> None:
    path = Path(path)
    lines = [f"nodes {graph.num_nodes} features {graph.feature_dim} "
             f"classes {graph.num_classes}"]
    for u, v in graph.edges:
        lines.append(f"E {u} {v}")
    for i in range(graph.num_nodes):
        row = " ".join(_fmt_float(x) for x in graph.features[i])
        lines.append(f"X {i} {row}" if row else f"X {i}")
    for i in np.nonzero(graph.labels >= 0)[0]:
        lines.append(f"Y {i} {graph.labels[i]}")
    for name in sorted(graph.masks):
        ids = " ".join(str(i) for i in graph.masks[name])
        lines.append(f"MASK {name} {ids}".rstrip())
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_graph(path: str | Path) -> Graph:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FileFormatError(f"{path}: empty graph file")
    head = lines[0].split()
    if (len(head) != 6 or head[0] != "nodes" or head[2] != "features"
            or head[4] != "classes"):
        raise FileFormatError(f"{path}: bad header {lines[0]!r}")
    n, m, c = int(head[1]), int(head[3]), int(head[5])
    features = np.zeros((n, m))
    labels = np.full(n, -1, dtype=np.int64)
    seen_x = np.zeros(n, dtype=bool)
    edges: list[tuple[int, int]] = []
    masks: dict[str, np.ndarray] = {}
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "E":
            edges.append((int(parts[1]), int(parts[2])))
        elif tag == "X":
            i = int(parts[1])
            vals = [float(v) for v in parts[2:]]
            if len(vals) != m:
                raise FileFormatError(f"{path}:{ln}: X row has {len(vals)} "
                                      f"values, expected {m}")
            features[i] = vals
            seen_x[i] = True
        elif tag == "Y":
            labels[int(parts[1])] = int(parts[2])
        elif tag == "MASK":
            masks[parts[1]] = np.array([int(v) for v in parts[2:]],
                                       dtype=np.int64)
        else:
            raise FileFormatError(f"{path}:{ln}: unknown record {tag!r}")
    if not seen_x.all():
        missing = int(np.nonzero(~seen_x)[0][0])
        raise FileFormatError(f"{path}: missing X row for node {missing}")
    return build_graph(edges, features, labels, masks, num_classes=c)


def write_groundtruth(pg: PoisonedGraph, path: str | Path) -> None:
    path = Path(path)
    lines = ["GROUNDTRUTH", f"TARGET_CLASS {pg.target_class}"]
    lines.append(("POISONED " + " ".join(str(i) for i in pg.poisoned_nodes)).rstrip())
    lines.append(("TRIGGER_NODES "
                  + " ".join(str(i) for i in pg.trigger_node_ids)).rstrip())
    for u, v in pg.trigger_edges:
        lines.append(f"TRIGGER_EDGE {u} {v}")
    if pg.spec is not None:
        lines.append(f"SPEC kind {pg.spec.kind}")
        lines.append(f"SPEC trigger_size {pg.spec.trigger_size}")
        lines.append(f"SPEC attach_edges {pg.spec.attach_edges}")
        lines.append(f"SPEC internal_topology {pg.spec.internal_topology}")
        lines.append(f"SPEC mimic_noise_scale {_fmt_float(pg.spec.mimic_noise_scale)}")
    lines.append(f"SEED {pg.seed}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_poisoned_graph(graph_path: str | Path,
                        groundtruth_path: str | Path) -> PoisonedGraph:
    graph = read_graph(graph_path)
    path = Path(groundtruth_path)
    lines = [l for l in path.read_text(encoding="utf-8").splitlines() if l.strip()]
    if not lines or lines[0] != "GROUNDTRUTH":
        raise FileFormatError(f"{path}: missing GROUNDTRUTH header")
    target = None
    poisoned = np.zeros(0, dtype=np.int64)
    trig_nodes = np.zeros(0, dtype=np.int64)
    trig_edges: list[tuple[int, int]] = []
    spec_kv: dict[str, str] = {}
    seed = 0
    for line in lines[1:]:
        parts = line.split()
        tag = parts[0]
        if tag == "TARGET_CLASS":
            target = int(parts[1])
        elif tag == "POISONED":
            poisoned = np.array([int(v) for v in parts[1:]], dtype=np.int64)
        elif tag == "TRIGGER_NODES":
            trig_nodes = np.array([int(v) for v in parts[1:]], dtype=np.int64)
        elif tag == "TRIGGER_EDGE":
            trig_edges.append((int(parts[1]), int(parts[2])))
        elif tag == "SPEC":
            spec_kv[parts[1]] = parts[2]
        elif tag == "SEED":
            seed = int(parts[1])
        else:
            raise FileFormatError(f"{path}: unknown record {tag!r}")
    if target is None:
        raise FileFormatError(f"{path}: missing TARGET_CLASS")
    spec = None
    if spec_kv:
        spec = TriggerSpec(kind=spec_kv["kind"],
                           trigger_size=int(spec_kv["trigger_size"]),
                           attach_edges=int(spec_kv["attach_edges"]),
                           internal_topology=spec_kv["internal_topology"],
                           mimic_noise_scale=float(spec_kv["mimic_noise_scale"]))
    edges = (np.array(trig_edges, dtype=np.int64) if trig_edges
             else np.zeros((0, 2), dtype=np.int64))
    return PoisonedGraph(graph=graph, poisoned_nodes=np.sort(poisoned),
                         trigger_edges=edges,
                         trigger_node_ids=np.sort(trig_nodes),
                         target_class=target, spec=spec, seed=seed)


def save_model(model: GcnModel, path: str | Path, seed: int = 0) -> None:
    """Versioned checkpoint: shapes, row-major float64 weights, the
    normalization mode and the training seed. Round-trips bitwise."""
    arrays = {f"layer_{i}": np.ascontiguousarray(w)
              for i, w in enumerate(model.layers)}
    np.savez(Path(path), version=np.int64(CHECKPOINT_VERSION),
             num_layers=np.int64(model.num_layers),
             norm_mode=np.str_(model.norm_mode), seed=np.int64(seed),
             **arrays)


def load_model(path: str | Path) -> tuple[GcnModel, int]:
    with np.load(Path(path)) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise NnError(f"unsupported checkpoint version {version}")
        num_layers = int(data["num_layers"])
        layers = [data[f"layer_{i}"].astype(np.float64, copy=True)
                  for i in range(num_layers)]
        model = GcnModel(layers, str(data["norm_mode"]))
        return model, int(data["seed"])


def write_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def read_json(path: str | Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def detection_report(result: DetectionResult, scores: VarianceScores,
                     histogram_bins: int = 20) -> dict:
    labeled_scores = scores.scores[result.sorted_order]
    counts, edges = np.histogram(labeled_scores, bins=histogram_bins)
    report = {
        "target_class": int(result.target_class),
        "threshold": result.threshold,
        "fallback": result.fallback,
        "candidates": [int(v) for v in result.candidates],
        "scores_histogram": {"bin_edges": [float(e) for e in edges],
                             "counts": [int(c) for c in counts]},
        "model_ref": scores.model_ref,
    }
    if scores.drop_spec is not None:
        report["drop_spec"] = {"drop_prob": scores.drop_spec.drop_prob,
                               "iterations": scores.drop_spec.iterations,
                               "seed": scores.drop_spec.seed}
    else:
        report["drop_spec"] = None
    return report


def write_scores_tsv(scores: VarianceScores, labels: np.ndarray,
                     ground_truth_nodes: np.ndarray, path: str | Path) -> None:
    """Per-labeled-node scoring table for external plotting."""
    truth = set(int(v) for v in ground_truth_nodes)
    labeled = np.nonzero(np.asarray(labels) >= 0)[0]
    lines = ["node_id\tscore\tlabel\tis_ground_truth_poisoned"]
    for i in labeled:
        lines.append(f"{i}\t{_fmt_float(scores.scores[i])}\t{labels[i]}\t"
                     f"{1 if int(i) in truth else 0}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_metrics_csv(metrics_dict: dict, path: str | Path) -> None:
    fields = ["asr", "clean_acc", "recall", "precision"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerow({k: metrics_dict.get(k) for k in fields})


def write_sweep_csv(rows: list[dict], path: str | Path) -> None:
    fields = ["iterations", "drop_prob", "asr", "clean_acc", "recall",
              "precision"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k) for k in fields})
