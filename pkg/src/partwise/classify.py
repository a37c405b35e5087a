"""The trainable classifiers: multinomial softmax regression over part
scores, RBF-kernel SVMs trained with sequential minimal optimization, and a
declarative rule tree evaluated over handcrafted features."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .core import PartClass, PartwiseError, SchemaError, VehicleCategory
from .spatial import ModelMismatchError, PartScoreVector

if TYPE_CHECKING:
    from .treefeat import TreeFeatures

N_CATEGORIES = len(VehicleCategory)


# ---------------------------------------------------------------------------
# Softmax regression


@dataclass(frozen=True)
class SoftmaxModel:
    W: np.ndarray  # (19, n_features)
    b: np.ndarray  # (19,)
    catalog_hash: str


@dataclass(frozen=True)
class TrainConfig:
    """Softmax training recipe; the optimizer is Adam with minibatches."""

    lr: float = 0.001
    batch_size: int = 32
    l2: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # validation accuracy can plateau for ~50 epochs before small-margin
    # category pairs separate, so the patience window must outlast that
    patience: int = 60
    val_fraction: float = 0.2
    max_epochs: int = 500
    seed: int = 0


@dataclass
class TrainLog:
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_epoch: int = -1


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _as_xy(batch) -> tuple[np.ndarray, np.ndarray]:
    X = np.array(
        [p.scores if isinstance(p, PartScoreVector) else p for p, _ in batch], dtype=float
    )
    y = np.array([int(label) for _, label in batch])
    return X, y


def loss_and_gradient(
    model: SoftmaxModel, batch, l2: float
) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Mean cross-entropy plus (l2/2)*||W||^2 and its exact gradients.

    The bias is excluded from the regularizer. ``batch`` is a sequence of
    (part-score vector, category) pairs.
    """
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    X, y = _as_xy(batch)
    n = X.shape[0]
    logits = X @ model.W.T + model.b
    probs = _softmax(logits)
    nll = -np.log(probs[np.arange(n), y])
    loss = float(nll.mean() + 0.5 * l2 * (model.W**2).sum())

    delta = probs
    delta[np.arange(n), y] -= 1.0
    grad_W = delta.T @ X / n + l2 * model.W
    grad_b = delta.mean(axis=0)
    return loss, (grad_W, grad_b)


def _accuracy(model: SoftmaxModel, X: np.ndarray, y: np.ndarray) -> float:
    logits = X @ model.W.T + model.b
    return float((logits.argmax(axis=1) == y).mean())


def _stratified_holdout(y: np.ndarray, fraction: float, rng: np.random.Generator):
    train_idx, val_idx = [], []
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        n_val = int(round(fraction * len(idx)))
        if len(idx) >= 2:
            n_val = min(max(n_val, 1), len(idx) - 1)
        else:
            n_val = 0
        val_idx.extend(idx[:n_val])
        train_idx.extend(idx[n_val:])
    return np.sort(np.array(train_idx, dtype=int)), np.sort(np.array(val_idx, dtype=int))


def train_softmax(samples, cfg: TrainConfig, n_features: int | None = None,
                  catalog_hash: str = "") -> tuple[SoftmaxModel, TrainLog]:
    """Train by minibatch Adam with a stratified validation holdout and
    early stopping on validation accuracy; returns the best-validation
    snapshot. Deterministic for a given config seed."""
    X_all, y_all = _as_xy(samples)
    if len(np.unique(y_all)) < 2:
        raise ValueError("training needs at least two distinct classes")
    if n_features is None:
        n_features = X_all.shape[1]
    if samples and isinstance(samples[0][0], PartScoreVector) and not catalog_hash:
        catalog_hash = samples[0][0].catalog_hash

    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx = _stratified_holdout(y_all, cfg.val_fraction, rng)
    if len(val_idx) == 0:  # tiny datasets: validate on the training data
        val_idx = train_idx
    X_tr, y_tr = X_all[train_idx], y_all[train_idx]
    X_val, y_val = X_all[val_idx], y_all[val_idx]

    W = np.zeros((N_CATEGORIES, n_features))
    b = np.zeros(N_CATEGORIES)
    mW = np.zeros_like(W)
    vW = np.zeros_like(W)
    mb = np.zeros_like(b)
    vb = np.zeros_like(b)
    step = 0

    log = TrainLog()
    best = (W.copy(), b.copy())
    best_acc = -1.0
    since_best = 0

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(X_tr))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            model = SoftmaxModel(W=W, b=b, catalog_hash=catalog_hash)
            loss, (gW, gb) = loss_and_gradient(
                model, list(zip(X_tr[idx], y_tr[idx])), cfg.l2
            )
            epoch_losses.append(loss)
            step += 1
            for param, grad, m, v in ((W, gW, mW, vW), (b, gb, mb, vb)):
                m *= cfg.adam_beta1
                m += (1 - cfg.adam_beta1) * grad
                v *= cfg.adam_beta2
                v += (1 - cfg.adam_beta2) * grad * grad
                m_hat = m / (1 - cfg.adam_beta1**step)
                v_hat = v / (1 - cfg.adam_beta2**step)
                param -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)

        log.train_loss.append(float(np.mean(epoch_losses)))
        val_acc = _accuracy(SoftmaxModel(W, b, catalog_hash), X_val, y_val)
        log.val_accuracy.append(val_acc)
        if val_acc > best_acc:
            best_acc = val_acc
            best = (W.copy(), b.copy())
            log.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                log.stopped_epoch = epoch
                break
    else:
        log.stopped_epoch = cfg.max_epochs - 1

    return SoftmaxModel(W=best[0], b=best[1], catalog_hash=catalog_hash), log


def predict_softmax(model: SoftmaxModel, scores: PartScoreVector) -> tuple[VehicleCategory, np.ndarray]:
    """Class probabilities and the argmax category (lowest index on ties)."""
    if model.catalog_hash and scores.catalog_hash != model.catalog_hash:
        raise ModelMismatchError("part scores come from a different catalog than the model")
    probs = _softmax(model.W @ scores.scores + model.b)
    return VehicleCategory(int(probs.argmax())), probs


def softmax_model_to_obj(model: SoftmaxModel) -> dict:
    return {
        "catalog_hash": model.catalog_hash,
        "W": model.W.tolist(),
        "b": model.b.tolist(),
    }


def softmax_model_from_obj(obj) -> SoftmaxModel:
    return SoftmaxModel(
        W=np.array(obj["W"], dtype=float),
        b=np.array(obj["b"], dtype=float),
        catalog_hash=obj["catalog_hash"],
    )


# ---------------------------------------------------------------------------
# RBF-SVM via sequential minimal optimization


@dataclass(frozen=True)
class SvmModel:
    support_vectors: np.ndarray  # (m, 3)
    alphas: np.ndarray  # signed dual coefficients y_i * alpha_i
    bias: float
    gamma: float
    C: float
    # (points, labels, duals) of the possibly-oversampled training set;
    # diagnostic only, not serialized
    training_state: tuple[np.ndarray, np.ndarray, np.ndarray] | None = field(
        default=None, compare=False
    )


def _rbf_gram(X: np.ndarray, gamma: float) -> np.ndarray:
    sq = (X**2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    return np.exp(-gamma * np.maximum(d2, 0.0))


def _oversample(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Replicate the minority class (cycling in order) to balance labels."""
    pos = np.flatnonzero(y > 0)
    neg = np.flatnonzero(y < 0)
    if len(pos) == len(neg):
        return X, y
    minority, majority = (pos, neg) if len(pos) < len(neg) else (neg, pos)
    extra = np.resize(minority, len(majority) - len(minority))
    keep = np.concatenate([np.arange(len(y)), extra])
    return X[keep], y[keep]


def train_svm(
    points,
    labels,
    C: float,
    gamma: float,
    oversample_minority: bool = False,
    seed: int = 0,
    tol: float = 5e-4,
    max_passes: int = 200,
) -> SvmModel:
    """Soft-margin RBF-SVM trained with SMO.

    Stops when a full sweep finds no KKT violation above ``tol``; the
    resulting residuals stay within 1e-3 at the default tolerance.
    Deterministic for a given seed.
    """
    X = np.ascontiguousarray(points, dtype=float).reshape(len(points), -1)
    y = np.asarray(labels, dtype=float)
    if set(np.unique(y)) - {1.0, -1.0}:
        raise ValueError("labels must be +1/-1")
    if len(np.unique(y)) < 2:
        raise ValueError("SVM training needs both classes present")
    if oversample_minority:
        X, y = _oversample(X, y)

    n = len(y)
    K = _rbf_gram(X, gamma)
    alpha = np.zeros(n)
    bias = 0.0
    rng = np.random.default_rng(seed)

    def decision(i: int) -> float:
        return float((alpha * y) @ K[:, i] + bias)

    def take_step(i: int, j: int) -> bool:
        nonlocal bias
        if i == j:
            return False
        Ei = decision(i) - y[i]
        Ej = decision(j) - y[j]
        if y[i] != y[j]:
            lo, hi = max(0.0, alpha[j] - alpha[i]), min(C, C + alpha[j] - alpha[i])
        else:
            lo, hi = max(0.0, alpha[i] + alpha[j] - C), min(C, alpha[i] + alpha[j])
        if hi - lo < 1e-12:
            return False
        eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
        if eta >= 0:
            return False
        aj_new = np.clip(alpha[j] - y[j] * (Ei - Ej) / eta, lo, hi)
        if abs(aj_new - alpha[j]) < 1e-12:
            return False
        ai_new = alpha[i] + y[i] * y[j] * (alpha[j] - aj_new)
        b1 = bias - Ei - y[i] * (ai_new - alpha[i]) * K[i, i] - y[j] * (aj_new - alpha[j]) * K[i, j]
        b2 = bias - Ej - y[i] * (ai_new - alpha[i]) * K[i, j] - y[j] * (aj_new - alpha[j]) * K[j, j]
        alpha[i], alpha[j] = ai_new, aj_new
        if 0 < ai_new < C:
            bias = b1
        elif 0 < aj_new < C:
            bias = b2
        else:
            bias = 0.5 * (b1 + b2)
        return True

    def violates(i: int) -> bool:
        margin = y[i] * decision(i)
        if alpha[i] < 1e-12:
            return margin < 1.0 - tol
        if alpha[i] > C - 1e-12:
            return margin > 1.0 + tol
        return abs(margin - 1.0) > tol

    for _ in range(max_passes):
        changed = 0
        for i in range(n):
            if not violates(i):
                continue
            errors = (alpha * y) @ K + bias - y  # E_j for all j
            j = int(np.argmax(np.abs(errors - errors[i])))
            if take_step(i, j):
                changed += 1
                continue
            for j in rng.permutation(n):
                if take_step(i, int(j)):
                    changed += 1
                    break
        if changed == 0:
            break

    sv = alpha > 1e-12
    if not sv.any():  # all points satisfied KKT at alpha=0; keep one anchor
        sv = np.zeros(n, dtype=bool)
        sv[0] = True
    return SvmModel(
        support_vectors=X[sv].copy(),
        alphas=(alpha * y)[sv].copy(),
        bias=float(bias),
        gamma=gamma,
        C=C,
        training_state=(X, y, alpha),
    )


def predict_svm(model: SvmModel, x) -> tuple[int, float]:
    """Label (+1/-1, zero decision counts as +1) and the decision value."""
    x = np.asarray(x, dtype=float)
    d2 = ((model.support_vectors - x[None, :]) ** 2).sum(axis=1)
    value = float(model.alphas @ np.exp(-model.gamma * d2) + model.bias)
    return (1 if value >= 0 else -1), value


def kkt_residuals(model: SvmModel) -> np.ndarray:
    """Per-point KKT residuals of a freshly trained SVM over its (possibly
    oversampled) training set."""
    if model.training_state is None:
        raise ValueError("model carries no training diagnostics")
    X, y, alpha = model.training_state
    margins = np.array([y[i] * predict_svm(model, X[i])[1] for i in range(len(y))])
    res = np.zeros(len(y))
    for i in range(len(y)):
        if alpha[i] < 1e-9:
            res[i] = max(0.0, 1.0 - margins[i])
        elif alpha[i] > model.C - 1e-9:
            res[i] = max(0.0, margins[i] - 1.0)
        else:
            res[i] = abs(margins[i] - 1.0)
    return res


def constant_svm(label: int) -> SvmModel:
    """Degenerate model always predicting ``label``; used when a training
    fold contains a single class."""
    return SvmModel(
        support_vectors=np.zeros((1, 3)),
        alphas=np.zeros(1),
        bias=float(label),
        gamma=1.0,
        C=1.0,
    )


def svm_model_to_obj(model: SvmModel) -> dict:
    return {
        "support_vectors": model.support_vectors.tolist(),
        "alphas": model.alphas.tolist(),
        "bias": model.bias,
        "gamma": model.gamma,
        "C": model.C,
    }


def svm_model_from_obj(obj) -> SvmModel:
    return SvmModel(
        support_vectors=np.array(obj["support_vectors"], dtype=float),
        alphas=np.array(obj["alphas"], dtype=float),
        bias=float(obj["bias"]),
        gamma=float(obj["gamma"]),
        C=float(obj["C"]),
    )


# ---------------------------------------------------------------------------
# Declarative rule tree


class TreeSpecError(PartwiseError):
    """The tree specification file is malformed."""


_NUMERIC_FEATURES = {"n_on_road", "n_off_road", "wheelbase", "front_elevation"}
_BOOLEAN_FEATURES = {"is_artic", "is_tractor"}
_OPS = {"present", "absent", "eq", "gt", "lt"}


@dataclass(frozen=True)
class TreeNode:
    id: str
    feat: str
    op: str
    value: float | None
    then_id: str
    else_id: str


@dataclass(frozen=True)
class TreeLeaf:
    id: str
    category: VehicleCategory


class TreeSpec:
    """A validated binary decision tree over TreeFeatures.

    Nodes test one feature with a predicate DSL (present/absent for parts
    and the two SVM booleans, eq/gt/lt for the numeric features); leaves
    name categories. Structural problems (unknown ids, cycles, unreachable
    leaves, categories missing from every leaf) are rejected at load time.
    """

    def __init__(self, root: str, nodes: dict[str, TreeNode], leaves: dict[str, TreeLeaf]):
        self.root = root
        self.nodes = nodes
        self.leaves = leaves
        self.depth = self._validate()

    def _validate(self) -> int:
        if self.root not in self.nodes and self.root not in self.leaves:
            raise TreeSpecError(f"root {self.root!r} is not a node or leaf")
        overlap = set(self.nodes) & set(self.leaves)
        if overlap:
            raise TreeSpecError(f"ids used as both node and leaf: {sorted(overlap)}")
        for node in self.nodes.values():
            for ref in (node.then_id, node.else_id):
                if ref not in self.nodes and ref not in self.leaves:
                    raise TreeSpecError(f"node {node.id!r} points to missing id {ref!r}")
            if node.op not in _OPS:
                raise TreeSpecError(f"node {node.id!r}: unknown op {node.op!r}")
            is_bool = node.feat in _BOOLEAN_FEATURES or _part_for(node.feat) is not None
            if node.op in ("present", "absent"):
                if not is_bool:
                    raise TreeSpecError(f"node {node.id!r}: {node.op} needs a boolean feature")
            else:
                if node.feat not in _NUMERIC_FEATURES:
                    raise TreeSpecError(f"node {node.id!r}: {node.op} needs a numeric feature")
                if node.value is None:
                    raise TreeSpecError(f"node {node.id!r}: op {node.op!r} needs a value")

        # reachability + acyclicity via DFS from the root
        depth = 0
        seen: set[str] = set()
        stack = [(self.root, 0, frozenset())]
        while stack:
            nid, d, path = stack.pop()
            if nid in path:
                raise TreeSpecError(f"cycle through {nid!r}")
            depth = max(depth, d)
            if nid in seen:
                continue
            seen.add(nid)
            node = self.nodes.get(nid)
            if node is not None:
                stack.append((node.then_id, d + 1, path | {nid}))
                stack.append((node.else_id, d + 1, path | {nid}))
        unreachable = (set(self.nodes) | set(self.leaves)) - seen
        if unreachable:
            raise TreeSpecError(f"unreachable ids: {sorted(unreachable)}")
        covered = {leaf.category for leaf in self.leaves.values()}
        missing = [c.label for c in VehicleCategory if c not in covered]
        if missing:
            raise TreeSpecError(f"categories missing from every leaf: {missing}")
        return depth

    def to_obj(self) -> dict:
        return {
            "root": self.root,
            "nodes": [
                {
                    "id": n.id,
                    "feat": n.feat,
                    "op": n.op,
                    "value": n.value,
                    "then": n.then_id,
                    "else": n.else_id,
                }
                for n in self.nodes.values()
            ],
            "leaves": [
                {"id": l.id, "category": l.category.label} for l in self.leaves.values()
            ],
        }

    @classmethod
    def from_obj(cls, obj) -> "TreeSpec":
        try:
            nodes = {
                n["id"]: TreeNode(
                    id=n["id"],
                    feat=n["feat"],
                    op=n["op"],
                    value=n.get("value"),
                    then_id=n["then"],
                    else_id=n["else"],
                )
                for n in obj["nodes"]
            }
            leaves = {
                l["id"]: TreeLeaf(id=l["id"], category=VehicleCategory.from_label(l["category"]))
                for l in obj["leaves"]
            }
            root = obj["root"]
        except (KeyError, TypeError) as exc:
            raise TreeSpecError(f"malformed tree spec: {exc}") from exc
        return cls(root=root, nodes=nodes, leaves=leaves)


def _part_for(feat: str) -> PartClass | None:
    try:
        return PartClass.from_label(feat)
    except SchemaError:
        return None


def _feature_value(features: "TreeFeatures", feat: str):
    part = _part_for(feat)
    if part is not None:
        return features.part_presence[part]
    if feat in _BOOLEAN_FEATURES or feat in _NUMERIC_FEATURES:
        return getattr(features, feat)
    raise TreeSpecError(f"unknown feature {feat!r}")


def _evaluate(node: TreeNode, features: "TreeFeatures") -> bool:
    value = _feature_value(features, node.feat)
    if node.op == "present":
        return bool(value)
    if node.op == "absent":
        return not value
    if node.op == "eq":
        return value == node.value
    if node.op == "gt":
        return value > node.value
    return value < node.value  # "lt"


def classify_tree(
    features: "TreeFeatures", spec: TreeSpec
) -> tuple[VehicleCategory, list[tuple[str, bool]]]:
    """Walk the tree root-to-leaf; returns the leaf category and the ordered
    (node id, predicate outcome) trace."""
    trace: list[tuple[str, bool]] = []
    current = spec.root
    while current in spec.nodes:
        node = spec.nodes[current]
        outcome = _evaluate(node, features)
        trace.append((node.id, outcome))
        current = node.then_id if outcome else node.else_id
    return spec.leaves[current].category, trace


def load_tree_spec(path) -> TreeSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return TreeSpec.from_obj(json.load(fh))


def default_tree_spec() -> TreeSpec:
    from importlib.resources import files

    obj = json.loads(files("partwise.data").joinpath("tree_spec.json").read_text())
    return TreeSpec.from_obj(obj)
