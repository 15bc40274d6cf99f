"""Loss terms for incremental training and their composition.

Every term returns (scalar loss, Gradients) with the gradient computed
analytically through the feature model, so each one can be validated
against central finite differences.  Losses are literal sums (over batch
samples, graph nodes, or exemplars), not means.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, StateError
from .feature_model import (Gradients, ModelParams, backward_batch, forward,
                            forward_batch, softmax_cross_entropy_batch)
from .neural_gas import NGGraph

METHODS = ("ft", "distill", "exemplar_anchor", "topic_al", "topic_al_mml",
           "topic_al_mml_dl")

# Which methods touch which machinery.
GRAPH_METHODS = ("topic_al", "topic_al_mml", "topic_al_mml_dl")
DISTILL_METHODS = ("distill", "topic_al_mml_dl")


@dataclass
class HyperParams:
    """Training knobs; defaults follow the reference configuration.

    xi = None means the margin is recomputed at each session start as the
    maximum pairwise centroid distance.
    """

    eta: float = 0.02
    alpha: float = 1.0
    t_life: int = 200
    lambda1: float = 0.5
    lambda2: float = 0.005
    xi: float | None = None
    gamma: float = 1.0
    t_distill: float = 2.0
    base_lr: float = 0.1
    inc_lr: float = 0.1
    base_epochs: int = 50
    inc_epochs: int = 100
    node_budget: int = 40
    growth_k: int = 1
    eps_var: float = 1e-6
    exemplars_per_class: int = 2
    ng_passes: int = 3

    def validate(self) -> None:
        positive = {"eta": self.eta, "alpha": self.alpha, "t_life": self.t_life,
                    "t_distill": self.t_distill, "base_lr": self.base_lr,
                    "inc_lr": self.inc_lr, "base_epochs": self.base_epochs,
                    "inc_epochs": self.inc_epochs, "node_budget": self.node_budget,
                    "growth_k": self.growth_k, "eps_var": self.eps_var,
                    "exemplars_per_class": self.exemplars_per_class,
                    "ng_passes": self.ng_passes}
        for name, value in positive.items():
            if value <= 0:
                raise InputError(f"{name} must be positive, got {value}")
        for name, value in (("lambda1", self.lambda1), ("lambda2", self.lambda2),
                            ("gamma", self.gamma)):
            if value < 0:
                raise InputError(f"{name} must be non-negative, got {value}")
        if self.eta > 1.0:
            raise InputError(f"eta must be at most 1, got {self.eta}")
        if self.xi is not None and self.xi <= 0:
            raise InputError(f"xi must be positive when given, got {self.xi}")


@dataclass
class ExemplarSet:
    """Stored old-class raw inputs with labels and (optionally) anchor features."""

    inputs: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    features: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.inputs)

    def add(self, x: np.ndarray, label: int, feature: np.ndarray | None = None) -> None:
        self.inputs.append(np.asarray(x, dtype=float).copy())
        self.labels.append(int(label))
        self.features.append(None if feature is None else
                             np.asarray(feature, dtype=float).copy())

    def input_array(self) -> np.ndarray:
        return np.stack(self.inputs)

    def label_array(self) -> np.ndarray:
        return np.array(self.labels, dtype=int)

    def refresh_features(self, feature_fn) -> None:
        """Re-encode all stored inputs as the current anchor targets."""
        self.features = [np.asarray(feature_fn(x), dtype=float).copy()
                         for x in self.inputs]


def anchor_loss(graph: NGGraph, old_nodes, params: ModelParams):
    """Variance-weighted quadratic penalty pinning old nodes to their centroids.

    For each old node, the stored pseudo input is re-encoded by the current
    extractor and the deviation from the stored centroid is weighted by the
    inverse variance diagonal.  Gradients flow into the extractor only.
    """
    old_nodes = np.asarray(old_nodes, dtype=int)
    if old_nodes.size == 0:
        raise InputError("anchor loss needs at least one old node")
    z = np.stack([graph.pseudo_inputs[j] for j in old_nodes])
    m = graph.centroids[old_nodes]
    inv_var = 1.0 / graph.variances[old_nodes]
    if not np.all(np.isfinite(inv_var)):
        raise StateError("non-finite inverse variance; the floor invariant is broken")
    feat, logits, cache = forward_batch(z, params)
    diff = feat - m
    loss = float(np.sum(diff * diff * inv_var))
    grad_feat = 2.0 * diff * inv_var
    grads = backward_batch(cache, np.zeros_like(logits), grad_feat, params)
    return loss, grads


def _exemplar_anchor_loss(exemplars: ExemplarSet, params: ModelParams):
    """Identity-weighted anchor penalty over stored exemplar features."""
    if len(exemplars) == 0:
        raise StateError("exemplar anchor method needs a non-empty exemplar set")
    if any(f is None for f in exemplars.features):
        raise StateError("exemplar set has no anchor features; refresh them first")
    z = exemplars.input_array()
    m = np.stack(exemplars.features)
    feat, logits, cache = forward_batch(z, params)
    diff = feat - m
    loss = float(np.sum(diff * diff))
    grads = backward_batch(cache, np.zeros_like(logits), 2.0 * diff, params)
    return loss, grads


def xi_heuristic(graph: NGGraph) -> float:
    """Margin set to the maximum pairwise centroid distance."""
    if len(graph) < 2:
        raise StateError("margin heuristic needs at least two nodes")
    c = graph.centroids
    pair = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=2)
    return float(pair.max())


def min_max_loss(batch_x: np.ndarray, batch_y: np.ndarray, graph: NGGraph,
                 params: ModelParams, xi: float, include_min: bool = True,
                 include_max: bool = True):
    """Pull features to their class node, push cross-label neighbors apart.

    Per sample (x, y): let j be the nearest node labeled y under the stored
    centroids.  The min part adds d(f(x), m_j) with m_j constant.  The max
    part adds max(0, xi - d(m_i, m_j)) over neighbors i of j with a
    different label; m_i is always a constant, while m_j of a node inserted
    this session is re-expressed as f(z_j) so the push has a gradient path
    into the extractor.  include_min/include_max isolate the two parts for
    ablations and gradient checks.
    """
    if graph is None:
        raise StateError("min-max loss needs a graph")
    batch_x = np.asarray(batch_x, dtype=float)
    batch_y = np.asarray(batch_y, dtype=int)
    feat, logits, cache = forward_batch(batch_x, params)
    grad_feat = np.zeros_like(feat)
    loss = 0.0
    # Newly inserted matched nodes get a differentiable centroid f(z_j).
    new_fwd: dict[int, tuple] = {}
    new_grad: dict[int, np.ndarray] = {}
    for b in range(batch_x.shape[0]):
        y = int(batch_y[b])
        candidates = np.flatnonzero(graph.labels == y)
        if candidates.size == 0:
            raise StateError(f"no node carries batch label {y}")
        dists = np.linalg.norm(graph.centroids[candidates] - feat[b], axis=1)
        j = int(candidates[np.argmin(dists)])
        if include_min:
            d = float(np.linalg.norm(feat[b] - graph.centroids[j]))
            loss += d
            if d > 0.0:
                grad_feat[b] += (feat[b] - graph.centroids[j]) / d
        if include_max:
            is_new = int(graph.origins[j]) == graph.session
            if is_new and j not in new_fwd:
                zj = graph.pseudo_inputs[j]
                if zj is None:
                    raise StateError(f"new node {j} has no pseudo input")
                fj, oj, cj = forward(zj, params)
                new_fwd[j] = (fj, oj, cj)
                new_grad[j] = np.zeros_like(fj)
            mj = new_fwd[j][0] if is_new else graph.centroids[j]
            for i in graph.neighbors(j):
                if int(graph.labels[i]) == y:
                    continue
                gap = mj - graph.centroids[i]
                d_ij = float(np.linalg.norm(gap))
                if d_ij < xi:
                    loss += xi - d_ij
                    if is_new and d_ij > 0.0:
                        new_grad[j] -= gap / d_ij
    grads = backward_batch(cache, np.zeros_like(logits), grad_feat, params)
    for j, g in new_grad.items():
        fj, oj, cj = new_fwd[j]
        grads.add_scaled(backward_batch(cj, np.zeros_like(oj)[None, :],
                                        g[None, :], params))
    return float(loss), grads


def distillation_loss(batch_x: np.ndarray, old_params: ModelParams,
                      params: ModelParams, t_distill: float, n_old: int):
    """Match temperature-softened old-class outputs to a frozen snapshot.

    Both logit vectors are restricted to the first n_old classes; the
    snapshot is a constant, so gradients flow into the current parameters.
    """
    if n_old < 1:
        raise InputError("distillation needs at least one old class")
    if n_old > params.class_count or n_old > old_params.class_count:
        raise InputError(f"n_old={n_old} exceeds a classifier width")
    batch_x = np.asarray(batch_x, dtype=float)
    feat, logits, cache = forward_batch(batch_x, params)
    _, logits_hat, _ = forward_batch(batch_x, old_params)
    tau_hat = _temp_softmax(logits_hat[:, :n_old], t_distill)
    z = logits[:, :n_old] / t_distill
    z -= z.max(axis=1, keepdims=True)
    log_tau = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-np.sum(tau_hat * log_tau))
    grad_logits = np.zeros_like(logits)
    grad_logits[:, :n_old] = (np.exp(log_tau) - tau_hat) / t_distill
    grads = backward_batch(cache, grad_logits, np.zeros_like(feat), params)
    return loss, grads


def _temp_softmax(logits: np.ndarray, temperature: float) -> np.ndarray:
    z = logits / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def total_loss(batch, graph: NGGraph | None, params: ModelParams,
               exemplars: ExemplarSet | None, hp: HyperParams, method: str, *,
               old_params: ModelParams | None = None, n_old: int | None = None,
               xi: float | None = None):
    """Compose the loss terms selected by the method tag.

    batch is (inputs, labels).  Strategy tags:
      ft               cross-entropy only
      distill          CE + gamma * distillation over batch + exemplars
      exemplar_anchor  CE + lambda1 * identity-weighted exemplar anchors
      topic_al         CE + lambda1 * anchor loss over old nodes
      topic_al_mml     ... + lambda2 * min-max loss (margin xi)
      topic_al_mml_dl  ... + gamma * distillation over batch + exemplars

    Cross-entropy always covers the batch alone; stored exemplars enter
    only through the distillation term, which matches old-class logits
    instead of rehearsing hard labels.
    """
    if method not in METHODS:
        raise InputError(f"unknown method {method!r}; expected one of {METHODS}")
    if method in GRAPH_METHODS and graph is None:
        raise StateError(f"method {method!r} requires a neural-gas graph")
    batch_x = np.asarray(batch[0], dtype=float)
    batch_y = np.asarray(batch[1], dtype=int)

    feat, logits, cache = forward_batch(batch_x, params)
    loss, grad_logits = softmax_cross_entropy_batch(logits, batch_y)
    grads = backward_batch(cache, grad_logits, np.zeros_like(feat), params)

    if method in ("topic_al", "topic_al_mml", "topic_al_mml_dl"):
        old_nodes = np.flatnonzero(graph.origins < graph.session)
        al, al_grads = anchor_loss(graph, old_nodes, params)
        loss += hp.lambda1 * al
        grads.add_scaled(al_grads, hp.lambda1)
    elif method == "exemplar_anchor":
        if exemplars is None:
            raise StateError("exemplar_anchor requires a stored exemplar set")
        al, al_grads = _exemplar_anchor_loss(exemplars, params)
        loss += hp.lambda1 * al
        grads.add_scaled(al_grads, hp.lambda1)

    if method in ("topic_al_mml", "topic_al_mml_dl"):
        margin = xi if xi is not None else hp.xi
        if margin is None:
            raise InputError("min-max methods need the margin xi")
        mml, mml_grads = min_max_loss(batch_x, batch_y, graph, params, margin)
        loss += hp.lambda2 * mml
        grads.add_scaled(mml_grads, hp.lambda2)

    if method in DISTILL_METHODS:
        if old_params is None or n_old is None:
            raise StateError("distillation methods need the frozen snapshot and n_old")
        dl_x = batch_x
        if exemplars is not None and len(exemplars) > 0:
            dl_x = np.vstack([batch_x, exemplars.input_array()])
        dl, dl_grads = distillation_loss(dl_x, old_params, params,
                                         hp.t_distill, n_old)
        loss += hp.gamma * dl
        grads.add_scaled(dl_grads, hp.gamma)

    return float(loss), grads
