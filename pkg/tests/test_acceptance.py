"""Acceptance suite: every headline requirement at its stated tolerance.

Each criterion prints one PASS/FAIL line (run with -s to see them all).
Everything runs on the default experiment configuration with its frozen
seed; runtime budgets are asserted alongside the quality targets.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from dropguard import (CROSS_ENTROPY, DropSpec, GcnModel, TrainConfig,
                       WITH_SELF_LOOPS, WITHOUT_SELF_LOOPS, backward,
                       build_graph, check_theorem_1, check_theorem_2,
                       check_theorem_3, cross_entropy, detection_metrics,
                       evaluate, forward, gen_synthetic_graph, inject_backdoor,
                       poison_unseen, robust_loss, run_pipeline, split_graph,
                       stage_seed, sym_normalize, timing_comparison, train)
from dropguard.config import ExperimentConfig
from dropguard.robust import RobustLossArgs
from dropguard.synth import SyntheticConfig, mimic_template_for


def report(criterion, passed, detail):
    line = f"[criterion {criterion}] {'PASS' if passed else 'FAIL'}: {detail}"
    print(line)
    assert passed, line


@pytest.fixture(scope="module")
def cfg():
    return ExperimentConfig()


@pytest.fixture(scope="module")
def attacked(cfg):
    """Default-config attack artifacts plus baseline models and timings."""
    t0 = time.perf_counter()
    full = gen_synthetic_graph(cfg.synthetic_config())
    train_g, train_ids, unseen_g, unseen_ids = split_graph(full)
    assert np.intersect1d(train_ids, unseen_ids).size == 0
    template = mimic_template_for(train_g, int(cfg["attack.target_class"]))
    spec_train = replace(cfg.trigger_spec(training=True),
                         mimic_template=template)
    spec_test = replace(cfg.trigger_spec(training=False),
                        mimic_template=template)
    target = int(cfg["attack.target_class"])
    train_pg = inject_backdoor(train_g, spec_train, int(cfg["attack.budget"]),
                               target, stage_seed(cfg.seed, "attack"))
    unseen_pg = poison_unseen(unseen_g, spec_test,
                              float(cfg["attack.unseen_fraction"]),
                              target, stage_seed(cfg.seed, "unseen"))
    tc = cfg.train_config()
    baseline_tc = TrainConfig(**{**tc.__dict__,
                                 "seed": stage_seed(cfg.seed, "baseline_model")})
    clean_model = train(train_g, train_g.labeled_nodes(), baseline_tc,
                        WITH_SELF_LOOPS, CROSS_ENTROPY)
    clean_metrics = evaluate(clean_model, unseen_pg, target)
    bd_model = train(train_pg.graph, train_pg.graph.labeled_nodes(),
                     baseline_tc, WITH_SELF_LOOPS, CROSS_ENTROPY)
    bd_metrics = evaluate(bd_model, unseen_pg, target)
    elapsed = time.perf_counter() - t0
    return dict(train_g=train_g, unseen_pg=unseen_pg, train_pg=train_pg,
                spec_train=spec_train, spec_test=spec_test, target=target,
                tc=tc, clean_model=clean_model, clean=clean_metrics,
                backdoored=bd_metrics, elapsed=elapsed)


@pytest.fixture(scope="module")
def defended(cfg, attacked):
    t0 = time.perf_counter()
    res = run_pipeline(attacked["train_pg"].graph, cfg.drop_spec(),
                       attacked["tc"])
    metrics = evaluate(res.robust_model, attacked["unseen_pg"],
                       attacked["target"])
    det = detection_metrics(res.detection, attacked["train_pg"])
    return dict(result=res, metrics=metrics, detection=det,
                elapsed=time.perf_counter() - t0)


def test_criterion_1_attack_efficacy(attacked):
    asr = attacked["backdoored"].asr
    gap = attacked["clean"].clean_acc - attacked["backdoored"].clean_acc
    ok = asr >= 0.90 and abs(gap) <= 0.02 and attacked["elapsed"] < 120
    report(1, ok, f"backdoored ASR={asr:.4f} (>=0.90), clean-acc gap="
                  f"{gap * 100:.2f}pts (<=2), runtime={attacked['elapsed']:.0f}s"
                  f" (<120s)")


def test_criterion_2_defense_efficacy(attacked, defended):
    asr = defended["metrics"].asr
    gap = attacked["clean"].clean_acc - defended["metrics"].clean_acc
    runtime = attacked["elapsed"] + defended["elapsed"]
    ok = asr <= 0.05 and abs(gap) <= 0.02 and runtime < 300
    report(2, ok, f"defended ASR={asr:.4f} (<=0.05), clean-acc gap="
                  f"{gap * 100:.2f}pts (<=2), runtime={runtime:.0f}s (<300s)")


def test_criterion_3_detection_quality(defended):
    rec = defended["detection"]["recall"]
    prec = defended["detection"]["precision"]
    ok = rec >= 0.80 and prec >= 0.85
    report(3, ok, f"recall={rec:.3f} (>=0.80), precision={prec:.3f} (>=0.85)")


def test_criterion_4_two_edge_ablation(cfg, attacked):
    t0 = time.perf_counter()
    spec2_train = replace(attacked["spec_train"], attach_edges=2)
    spec2_test = replace(attacked["spec_test"], attach_edges=2)
    train_pg = inject_backdoor(attacked["train_g"], spec2_train,
                               int(cfg["attack.budget"]), attacked["target"],
                               stage_seed(cfg.seed, "attack"))
    # two-edge unseen graph from the same clean split
    full = gen_synthetic_graph(cfg.synthetic_config())
    _, _, unseen_clean, _ = split_graph(full)
    unseen_pg = poison_unseen(unseen_clean, spec2_test,
                              float(cfg["attack.unseen_fraction"]),
                              attacked["target"], stage_seed(cfg.seed, "unseen"))
    res_edge = run_pipeline(train_pg.graph, cfg.drop_spec(), attacked["tc"],
                            detector="per_edge")
    asr_edge = evaluate(res_edge.robust_model, unseen_pg, attacked["target"]).asr
    res_rand = run_pipeline(train_pg.graph, cfg.drop_spec(), attacked["tc"],
                            detector="randomized")
    asr_rand = evaluate(res_rand.robust_model, unseen_pg, attacked["target"]).asr
    elapsed = time.perf_counter() - t0
    ok = asr_edge >= 0.50 and asr_rand <= 0.10 and elapsed < 600
    report(4, ok, f"per-edge ASR={asr_edge:.4f} (>=0.50), randomized ASR="
                  f"{asr_rand:.4f} (<=0.10), runtime={elapsed:.0f}s (<600s)")


def test_criterion_5_clean_graph_no_harm(cfg, attacked):
    t0 = time.perf_counter()
    res = run_pipeline(attacked["train_g"], cfg.drop_spec(), attacked["tc"])
    frac = res.detection.candidates.size / attacked["train_g"].labeled_nodes().size
    metrics = evaluate(res.robust_model, attacked["unseen_pg"],
                       attacked["target"])
    gap = attacked["clean"].clean_acc - metrics.clean_acc
    elapsed = time.perf_counter() - t0
    ok = frac <= 0.02 and abs(gap) <= 0.015 + 1e-12 and elapsed < 120
    report(5, ok, f"|candidates|/|labeled|={frac:.4f} (<=0.02), acc gap="
                  f"{gap * 100:.2f}pts (<=1.5), runtime={elapsed:.0f}s (<120s)")


def test_criterion_6_theorem_suite(cfg):
    t0 = time.perf_counter()
    graph = gen_synthetic_graph(cfg.theorem_graph_config())
    tc = cfg.train_config()
    short = TrainConfig(**{**tc.__dict__, "max_epochs": 60, "patience": 60,
                           "seed": stage_seed(cfg.seed, "theorems")})
    model = train(graph, graph.labeled_nodes(), short, WITHOUT_SELF_LOOPS,
                  CROSS_ENTROPY)
    prob = float(cfg["drop.prob"])
    seed = stage_seed(cfg.seed, "theorems")
    r1 = check_theorem_1(graph, model, prob, replications=5000, seed=seed)
    r2 = check_theorem_2(graph, model, prob, replications=2000, seed=seed + 1)
    r3 = check_theorem_3(int(cfg["drop.iterations"]), prob,
                         replications=10_000, seed=seed + 2)
    elapsed = time.perf_counter() - t0
    ok = (r1["passed"] and r2["passed"] and r2["degree_trend_ok"]
          and r3["passed"] and elapsed < 300)
    report(6, ok,
           f"expectation frac_ok={r1['fraction_nodes_ok']:.4f}, "
           f"concentration violations={r2['violations']}, "
           f"drop-count mean={r3['mean']:.3f} vs {r3['expected']}, "
           f"runtime={elapsed:.0f}s (<300s)")


def test_criterion_7_gradient_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n, m, h, c = 6, 4, 3, 3
        edges = sorted({(int(min(u, v)), int(max(u, v)))
                        for u, v in rng.integers(0, n, size=(12, 2)) if u != v})
        g = build_graph(edges, rng.normal(size=(n, m)),
                        rng.integers(0, c, size=n))
        model = GcnModel([rng.normal(size=(m, h)) * 0.5,
                          rng.normal(size=(h, c)) * 0.5], WITHOUT_SELF_LOOPS)
        norm = sym_normalize(g, WITHOUT_SELF_LOOPS)
        mask = g.labeled_nodes()
        args = RobustLossArgs(candidates=np.array([0, 2]), target_class=1,
                              clean_labeled=np.array([1, 3, 4]),
                              normalize=bool(seed % 2))

        def ce_loss(layers):
            m2 = GcnModel([w.copy() for w in layers], WITHOUT_SELF_LOOPS)
            return cross_entropy(forward(m2, norm, g.features), g.labels, mask)

        def rb_loss(layers):
            m2 = GcnModel([w.copy() for w in layers], WITHOUT_SELF_LOOPS)
            return robust_loss(forward(m2, norm, g.features), args, g.labels)

        for loss_fn, kind, extra in ((ce_loss, CROSS_ENTROPY, None),
                                     (rb_loss, "robust", args)):
            _, analytic = backward(model, norm, g.features, g.labels, mask,
                                   kind, robust_args=extra)
            for li, w in enumerate(model.layers):
                num = np.zeros_like(w)
                step = 1e-5
                for i in range(w.shape[0]):
                    for j in range(w.shape[1]):
                        plus = [x.copy() for x in model.layers]
                        minus = [x.copy() for x in model.layers]
                        plus[li][i, j] += step
                        minus[li][i, j] -= step
                        num[i, j] = (loss_fn(plus) - loss_fn(minus)) / (2 * step)
                denom = np.maximum(np.maximum(np.abs(num),
                                              np.abs(analytic[li])), 1e-8)
                worst = max(worst, float((np.abs(analytic[li] - num) / denom).max()))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-5 and elapsed < 60
    report(7, ok, f"max relative error={worst:.2e} (<1e-5) over 20 instances "
                  f"and both losses, runtime={elapsed:.0f}s (<60s)")


def test_criterion_8_timing(cfg):
    graph = gen_synthetic_graph(SyntheticConfig(
        num_nodes=2000, num_classes=7, feature_dim=64,
        class_mean_separation=6.0, base_mean_norm=0.0, feature_bound=8.0,
        topology="regular", regular_degree=10, labeled_fraction=1.0, seed=5))
    tc = cfg.train_config()
    short = TrainConfig(**{**tc.__dict__, "max_epochs": 30, "patience": 30,
                           "seed": 5})
    model = train(graph, graph.labeled_nodes(), short, WITHOUT_SELF_LOOPS,
                  CROSS_ENTROPY)
    times = timing_comparison(graph, model, DropSpec(0.5, 10, seed=99))
    ratio = times["per_edge_ms"] / times["randomized_ms"]
    ok = ratio >= 10.0
    report(8, ok, f"randomized={times['randomized_ms']:.1f}ms, per-edge="
                  f"{times['per_edge_ms']:.1f}ms, speedup={ratio:.1f}x (>=10x)")


def test_property_clean_model_vulnerability(attacked):
    # a model trained with no triggers in sight still sends mimic-trigger
    # nodes to the target class well above chance
    n_attacked = (attacked["unseen_pg"].graph.labels[
        attacked["unseen_pg"].poisoned_nodes] != attacked["target"]).sum()
    chance = 1.0 / 7
    se = np.sqrt(chance * (1 - chance) / n_attacked)
    asr = attacked["clean"].asr
    ok = asr > chance + 3 * se
    report("P1", ok, f"clean-model ASR={asr:.3f} vs chance+3se="
                     f"{chance + 3 * se:.3f}")


def test_property_score_separation(attacked, defended):
    scores = defended["result"].scores.scores
    vb = attacked["train_pg"].poisoned_nodes
    clean = np.setdiff1d(attacked["train_pg"].graph.labeled_nodes(), vb)
    ratio = scores[vb].mean() / scores[clean].mean()
    ok = ratio >= 6.0
    report("P2", ok, f"mean variance score poisoned/clean={ratio:.1f}x (>=6x; "
                     "order-of-magnitude separation)")


def test_property_per_edge_separation(attacked, defended):
    # single-attach setting: the trigger edge's removal dominates any
    # clean node's largest single-edge effect
    from dropguard import per_edge_variance
    g = attacked["train_pg"].graph
    model_b = defended["result"].backdoored_model
    rng = np.random.default_rng(0)
    trig_kls = []
    for node in attacked["train_pg"].poisoned_nodes[:15]:
        kls = dict(per_edge_variance(model_b, g, int(node)))
        trig_edges = [tuple(e) for e in attacked["train_pg"].trigger_edges.tolist()
                      if int(node) in e]
        trig_kls.append(max(kls[e] for e in trig_edges))
    clean = np.setdiff1d(g.labeled_nodes(), attacked["train_pg"].poisoned_nodes)
    clean = clean[g.degrees[clean] > 0]
    sample = rng.choice(clean, size=30, replace=False)
    clean_kls = [max(kl for _, kl in per_edge_variance(model_b, g, int(n)))
                 for n in sample]
    ratio = np.median(trig_kls) / max(np.median(clean_kls), 1e-12)
    ok = ratio >= 5.0
    report("P3", ok, f"median trigger-edge KL / median clean max-edge KL="
                     f"{ratio:.1f}x (>=5x)")


def test_criterion_9_partial_detection(cfg, attacked):
    # Known-failing reproduction gap: with the simplified homogeneous
    # mimic attack and an over-parameterized 2-layer GCN, the labeled
    # poisoned nodes that truncation leaves in the clean term re-teach
    # the trigger faster than 17% of the candidates can unlearn it. See
    # the decisions ledger for the full analysis of what was tried.
    res = run_pipeline(attacked["train_pg"].graph, cfg.drop_spec(),
                       attacked["tc"], truncate_fraction=0.17)
    metrics = evaluate(res.robust_model, attacked["unseen_pg"],
                       attacked["target"])
    ok = metrics.asr <= 0.10
    report(9, ok, f"truncated to {res.detection.candidates.size} candidates, "
                  f"ASR={metrics.asr:.4f} (<=0.10)")
