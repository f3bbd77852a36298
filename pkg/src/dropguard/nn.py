"""From-scratch multi-layer GCN: forward pass, analytic gradients, Adam
training with early stopping, and spectral norm via power iteration.

Everything runs in float64. The layer rule is
H^(l+1) = relu(A_norm @ H^(l) @ W^(l)) with the final layer linear;
probabilities are the row softmax of the logits with a small additive
smoothing so that every entry is at least EPS_SMOOTH and rows still sum
to one exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .graph import Graph, NormalizedAdjacency, NORM_MODES, sym_normalize

EPS_SMOOTH = 1e-12

CROSS_ENTROPY = "cross_entropy"
ROBUST = "robust"
LOSS_KINDS = (CROSS_ENTROPY, ROBUST)


class NnError(ValueError):
    """Invalid model, input shapes, or loss arguments."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch


@dataclass
class GcnModel:
    """Weights of an L-layer GCN plus the normalization mode it expects."""

    layers: list[np.ndarray]
    norm_mode: str

    def __post_init__(self):
        if self.norm_mode not in NORM_MODES:
            raise NnError(f"unknown norm_mode {self.norm_mode!r}")
        if not self.layers:
            raise NnError("model needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.shape[1] != b.shape[0]:
                raise NnError(f"layer shapes do not compose: {a.shape} -> {b.shape}")
        for w in self.layers:
            if not np.isfinite(w).all():
                raise NnError("non-finite weight")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return int(self.layers[0].shape[0])

    @property
    def output_dim(self) -> int:
        return int(self.layers[-1].shape[1])

    def copy(self) -> "GcnModel":
        return GcnModel([w.copy() for w in self.layers], self.norm_mode)

    def fingerprint(self) -> str:
        """Stable checkpoint id: hash of mode, shapes and weight bytes."""
        h = hashlib.sha1()
        h.update(self.norm_mode.encode())
        for w in self.layers:
            h.update(str(w.shape).encode())
            h.update(np.ascontiguousarray(w).tobytes())
        return h.hexdigest()[:12]


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 500
    patience: int = 50
    hidden_dim: int = 64
    seed: int = 0
    convergence_tol: float = 1e-9

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise NnError("learning_rate and weight_decay must be >= 0")
        if self.max_epochs < 1 or self.patience < 1 or self.hidden_dim < 1:
            raise NnError("max_epochs, patience and hidden_dim must be >= 1")


@dataclass(frozen=True)
class PredictionOutput:
    logits: np.ndarray          # (N, C)
    probabilities: np.ndarray   # (N, C) smoothed softmax rows

    @property
    def predictions(self) -> np.ndarray:
        return np.argmax(self.logits, axis=1)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def smooth_probabilities(p: np.ndarray) -> np.ndarray:
    """Shrink rows toward the eps floor: rows still sum to 1 exactly and
    every entry is >= EPS_SMOOTH."""
    c = p.shape[1]
    return p * (1.0 - c * EPS_SMOOTH) + EPS_SMOOTH


def _forward_states(model: GcnModel, norm: NormalizedAdjacency,
                    features: np.ndarray) -> list[np.ndarray]:
    """Pre-activation state per layer; states[-1] are the logits."""
    if norm.mode != model.norm_mode:
        raise NnError(f"normalization mode {norm.mode!r} does not match "
                      f"model mode {model.norm_mode!r}")
    if features.shape[1] != model.input_dim:
        raise NnError(f"feature dim {features.shape[1]} != model input "
                      f"dim {model.input_dim}")
    if features.shape[0] != norm.num_nodes:
        raise NnError("feature row count does not match adjacency")
    a = norm.matrix
    h = features
    states = []
    for l, w in enumerate(model.layers):
        z = a @ (h @ w)
        states.append(z)
        h = np.maximum(z, 0.0) if l < model.num_layers - 1 else z
    return states


def forward(model: GcnModel, norm: NormalizedAdjacency,
            features: np.ndarray) -> PredictionOutput:
    """Full forward pass: logits and smoothed probabilities."""
    logits = _forward_states(model, norm, features)[-1]
    if not np.isfinite(logits).all():
        raise NnError("non-finite logits in forward pass")
    return PredictionOutput(logits=logits,
                            probabilities=smooth_probabilities(_softmax(logits)))


def cross_entropy(output: PredictionOutput, labels: np.ndarray,
                  mask: np.ndarray) -> float:
    """Mean negative log-probability of the true class over the mask."""
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise NnError("cross_entropy mask is empty")
    y = np.asarray(labels)[mask]
    if (y < 0).any():
        raise NnError("unlabeled node in cross_entropy mask")
    p = output.probabilities[mask, y]
    return float(-np.log(p).mean())


def _smoothing_gain(p_raw_at_y: np.ndarray, num_classes: int) -> np.ndarray:
    """d/dlogit correction factor for the smoothed log-probability."""
    a = 1.0 - num_classes * EPS_SMOOTH
    return a * p_raw_at_y / (a * p_raw_at_y + EPS_SMOOTH)


def _loss_and_dz(logits: np.ndarray, labels: np.ndarray, loss_kind: str,
                 mask: np.ndarray | None = None,
                 candidates: np.ndarray | None = None,
                 target_class: int | None = None,
                 clean: np.ndarray | None = None,
                 robust_normalize: bool = False) -> tuple[float, np.ndarray]:
    """Loss value and its exact gradient w.r.t. the logits.

    cross_entropy: mean smoothed CE over `mask`.
    robust: log p(target_class) accumulated over `candidates` plus smoothed
    CE accumulated over `clean`; plain per-node sums by default, per-term
    means with robust_normalize=True.
    """
    n, c = logits.shape
    p = _softmax(logits)
    p_s = smooth_probabilities(p)
    dz = np.zeros_like(logits)
    if loss_kind == CROSS_ENTROPY:
        mask = np.asarray(mask, dtype=np.int64)
        if mask.size == 0:
            raise NnError("empty mask for cross_entropy loss")
        y = np.asarray(labels)[mask]
        if (y < 0).any():
            raise NnError("unlabeled node in cross_entropy mask")
        loss = float(-np.log(p_s[mask, y]).mean())
        g = _smoothing_gain(p[mask, y], c) / mask.size
        dz[mask] = g[:, None] * p[mask]
        dz[mask, y] -= g
        return loss, dz
    if loss_kind == ROBUST:
        if target_class is None or candidates is None or clean is None:
            raise NnError("robust loss requires candidates, target_class and clean")
        candidates = np.asarray(candidates, dtype=np.int64)
        clean = np.asarray(clean, dtype=np.int64)
        loss = 0.0
        if candidates.size:
            if candidates.max() >= n:
                raise NnError("candidate node lacks a probability row")
            scale = 1.0 / candidates.size if robust_normalize else 1.0
            loss += float(np.log(p_s[candidates, target_class]).sum()) * scale
            g = _smoothing_gain(p[candidates, target_class], c) * scale
            dz[candidates] -= g[:, None] * p[candidates]
            dz[candidates, target_class] += g
        if clean.size:
            y = np.asarray(labels)[clean]
            if (y < 0).any():
                raise NnError("unlabeled node in robust clean set")
            scale = 1.0 / clean.size if robust_normalize else 1.0
            loss += float(-np.log(p_s[clean, y]).sum()) * scale
            g = _smoothing_gain(p[clean, y], c) * scale
            dz[clean] += g[:, None] * p[clean]
            dz[clean, y] -= g
        return loss, dz
    raise NnError(f"unknown loss kind {loss_kind!r}")


def _backprop(model: GcnModel, norm: NormalizedAdjacency, features: np.ndarray,
              states: list[np.ndarray], dz_out: np.ndarray,
              ) -> list[np.ndarray]:
    """Gradients of a scalar loss w.r.t. every weight matrix, given the
    gradient at the output logits."""
    a = norm.matrix
    acts = [features]
    for l, z in enumerate(states[:-1]):
        acts.append(np.maximum(z, 0.0))
    grads: list[np.ndarray] = [None] * model.num_layers  # type: ignore
    dz = dz_out
    for l in range(model.num_layers - 1, -1, -1):
        at_dz = a @ dz  # A is symmetric, so A^T @ dz == A @ dz
        grads[l] = acts[l].T @ at_dz
        if l > 0:
            dh = at_dz @ model.layers[l].T
            dz = dh * (states[l - 1] > 0.0)
    return grads


def backward(model: GcnModel, norm: NormalizedAdjacency, features: np.ndarray,
             labels: np.ndarray, mask: np.ndarray | None, loss_kind: str,
             robust_args=None) -> tuple[float, list[np.ndarray]]:
    """Loss and exact analytic gradients w.r.t. every layer.

    For loss_kind="robust", robust_args must expose candidates,
    target_class and clean_labeled (see robust.RobustLossArgs).
    """
    states = _forward_states(model, norm, features)
    if loss_kind == ROBUST:
        loss, dz = _loss_and_dz(states[-1], labels, ROBUST,
                                candidates=robust_args.candidates,
                                target_class=robust_args.target_class,
                                clean=robust_args.clean_labeled,
                                robust_normalize=getattr(robust_args,
                                                         "normalize", False))
    else:
        loss, dz = _loss_and_dz(states[-1], labels, loss_kind, mask=mask)
    return loss, _backprop(model, norm, features, states, dz)


def glorot_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_model(feature_dim: int, num_classes: int, config: TrainConfig,
               norm_mode: str) -> GcnModel:
    """Seeded initial 2-layer model; train() starts from exactly these
    weights for the same config."""
    rng = np.random.default_rng(config.seed)
    weights = [glorot_init(rng, feature_dim, config.hidden_dim),
               glorot_init(rng, config.hidden_dim, num_classes)]
    return GcnModel(weights, norm_mode)


VAL_FRACTION = 0.1
_MIN_NODES_FOR_VAL = 20


def _restricted_robust(robust_args, nodes: np.ndarray):
    node_set = set(nodes.tolist())
    cand = np.array([v for v in robust_args.candidates if v in node_set],
                    dtype=np.int64)
    clean = np.array([v for v in robust_args.clean_labeled if v in node_set],
                     dtype=np.int64)
    return cand, clean


def train(graph: Graph, labeled_nodes: np.ndarray, config: TrainConfig,
          norm_mode: str, loss_kind: str = CROSS_ENTROPY,
          robust_args=None) -> GcnModel:
    """Train a 2-layer GCN with Adam.

    With patience < max_epochs, a seeded 10% slice of the labeled nodes
    is held out for validation (skipped for tiny label sets), training
    stops after `patience` epochs without validation improvement, and the
    best-validation weights are returned. With patience >= max_epochs,
    training runs on all labeled nodes to max_epochs and the final
    weights are returned. Deterministic under config.seed.
    """
    labeled_nodes = np.asarray(labeled_nodes, dtype=np.int64)
    if labeled_nodes.size == 0:
        raise NnError("train requires a nonempty labeled set")
    if graph.num_classes < 1:
        raise NnError("graph has no classes")
    rng = np.random.default_rng(config.seed)
    model = GcnModel([glorot_init(rng, graph.feature_dim, config.hidden_dim),
                      glorot_init(rng, config.hidden_dim, graph.num_classes)],
                     norm_mode)
    norm = sym_normalize(graph, norm_mode)

    early_stopping = config.patience < config.max_epochs
    perm = rng.permutation(labeled_nodes)
    n_val = int(round(VAL_FRACTION * perm.size)) \
        if early_stopping and perm.size >= _MIN_NODES_FOR_VAL else 0
    val_nodes = np.sort(perm[:n_val])
    fit_nodes = np.sort(perm[n_val:])

    if loss_kind == ROBUST:
        if robust_args is None:
            raise NnError("loss_kind='robust' requires robust_args")
        fit_cand, fit_clean = _restricted_robust(robust_args, fit_nodes)
        val_cand, val_clean = _restricted_robust(robust_args, val_nodes)

    normalize = getattr(robust_args, "normalize", False)

    def loss_and_grads(nodes_cand, nodes_clean_or_mask):
        states = _forward_states(model, norm, graph.features)
        if loss_kind == ROBUST:
            loss, dz = _loss_and_dz(states[-1], graph.labels, ROBUST,
                                    candidates=nodes_cand,
                                    target_class=robust_args.target_class,
                                    clean=nodes_clean_or_mask,
                                    robust_normalize=normalize)
        else:
            loss, dz = _loss_and_dz(states[-1], graph.labels, CROSS_ENTROPY,
                                    mask=nodes_clean_or_mask)
        return loss, _backprop(model, norm, graph.features, states, dz)

    def loss_value(nodes_cand, nodes_clean_or_mask):
        states = _forward_states(model, norm, graph.features)
        if loss_kind == ROBUST:
            loss, _ = _loss_and_dz(states[-1], graph.labels, ROBUST,
                                   candidates=nodes_cand,
                                   target_class=robust_args.target_class,
                                   clean=nodes_clean_or_mask,
                                   robust_normalize=normalize)
        else:
            loss, _ = _loss_and_dz(states[-1], graph.labels, CROSS_ENTROPY,
                                   mask=nodes_clean_or_mask)
        return loss

    if loss_kind == ROBUST:
        fit_args = (fit_cand, fit_clean)
        val_args = (val_cand, val_clean) if (val_cand.size or val_clean.size) \
            else (fit_cand, fit_clean)
    else:
        fit_args = (None, fit_nodes)
        val_args = (None, val_nodes) if val_nodes.size else (None, fit_nodes)

    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    mom = [np.zeros_like(w) for w in model.layers]
    vel = [np.zeros_like(w) for w in model.layers]
    best_val = np.inf
    best_weights = [w.copy() for w in model.layers]
    wait = 0
    for epoch in range(1, config.max_epochs + 1):
        loss, grads = loss_and_grads(*fit_args)
        if not np.isfinite(loss):
            raise TrainingDivergedError(epoch, loss)
        for l, w in enumerate(model.layers):
            g = grads[l] + config.weight_decay * w
            mom[l] = beta1 * mom[l] + (1 - beta1) * g
            vel[l] = beta2 * vel[l] + (1 - beta2) * g * g
            mhat = mom[l] / (1 - beta1 ** epoch)
            vhat = vel[l] / (1 - beta2 ** epoch)
            w -= config.learning_rate * mhat / (np.sqrt(vhat) + adam_eps)
        if not early_stopping:
            continue
        val_loss = loss_value(*val_args)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(epoch, val_loss)
        if val_loss < best_val - config.convergence_tol:
            best_val = val_loss
            best_weights = [w.copy() for w in model.layers]
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                break
    if early_stopping:
        model.layers = best_weights
    return model


def spectral_norm(w: np.ndarray, tol: float = 1e-12,
                  max_iter: int = 10_000) -> float:
    """Largest singular value via power iteration on W^T W with a
    deterministic start vector."""
    w = np.asarray(w, dtype=np.float64)
    if not np.isfinite(w).all():
        raise NnError("spectral_norm requires a finite matrix")
    if w.size == 0 or not w.any():
        return 0.0
    n = w.shape[1]
    # deterministic start with uneven components; fall back to the heaviest
    # column if it happens to sit in the null space
    v = np.linspace(1.0, 2.0, n)
    v /= np.linalg.norm(v)
    if np.linalg.norm(w @ v) == 0.0:
        j = int(np.argmax((w * w).sum(axis=0)))
        v = np.zeros(n)
        v[j] = 1.0
    sigma = 0.0
    for _ in range(max_iter):
        x = w.T @ (w @ v)
        v = x / np.linalg.norm(x)
        new_sigma = np.linalg.norm(w @ v)
        if abs(new_sigma - sigma) <= tol * max(new_sigma, 1.0):
            return float(new_sigma)
        sigma = new_sigma
    return float(sigma)
