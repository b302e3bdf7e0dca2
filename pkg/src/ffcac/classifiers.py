"""Classifiers.

Two objects answer "which class":

* RidgeState — the deployed classifier. Weights come from the closed form
  W = (G + lam*I)^(-1) C with G and C accumulated across sessions, so each
  incremental session is an analytic update (no retraining) and matches a
  batch refit on the union of all sessions.
* Prototypes — per-class mean embeddings scored by cosine (ablation
  baseline).

A third object, CosineHead, exists only to finetune the extractor in the
base session: scaled cosine-softmax cross entropy, differentiable through
the autodiff graph, discarded once the extractor is frozen.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import autodiff as ad
from . import weights_io
from .autodiff import Tensor
from .errors import (
    NumericError,
    ProtocolViolationError,
    SolverError,
    StratificationError,
    UsageError,
)

RESIDUAL_RTOL = 1e-8  # solve residual bound: ||(G+lam I)W - C||_inf <= rtol*(1+||C||_inf)


# ---------------------------------------------------------------------------
# cosine-softmax training head


@dataclass
class CosineHead:
    weight: Tensor  # (num_classes, D)
    eta: float  # logit scale

    def __post_init__(self):
        if self.eta <= 0:
            raise UsageError(f"cosine head scale must be > 0, got {self.eta}")


def init_cosine_head(num_classes: int, dim: int, eta: float, seed: int) -> CosineHead:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0xA0))))
    w = rng.normal(0.0, 1.0 / np.sqrt(dim), (num_classes, dim))
    return CosineHead(weight=Tensor(w, requires_grad=True), eta=float(eta))


def _row_normalize(t: Tensor) -> Tensor:
    sq = ad.sum_(t * t, axis=1, keepdims=True)
    norms = np.sqrt(sq.values)
    if np.any(norms <= 0.0):
        raise NumericError("zero-norm row: cosine similarity undefined")
    return t / ad.power(sq, 0.5)


def cosine_loss(e_batch: Tensor, labels, head: CosineHead) -> Tensor:
    """Mean over the batch of -log softmax(eta * cos(e, W_y)) at the true
    class. Differentiable w.r.t. both the embeddings and the head."""
    labels = np.asarray(labels, dtype=np.int64)
    n, num_classes = e_batch.shape[0], head.weight.shape[0]
    if labels.shape != (n,):
        raise UsageError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise UsageError("label index outside head range")
    cos = ad.matmul(_row_normalize(e_batch), ad.transpose(_row_normalize(head.weight)))
    probs = ad.softmax(ad.scale(cos, head.eta), axis=1)
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), labels] = 1.0
    picked = ad.sum_(Tensor(onehot) * ad.log(probs))
    return ad.scale(picked, -1.0 / n)


# ---------------------------------------------------------------------------
# label registry


class LabelRegistry:
    """Append-only label -> column-index map; indices never change."""

    def __init__(self, labels=()):
        self._labels: list = []
        self._index: dict = {}
        if labels:
            self.add(labels)

    def add(self, labels) -> None:
        labels = list(labels)
        dup = [l for l in labels if l in self._index]
        if dup:
            raise ProtocolViolationError(f"labels already registered: {dup}")
        if len(set(labels)) != len(labels):
            raise ProtocolViolationError(f"duplicate labels within one session: {labels}")
        for l in labels:
            self._index[l] = len(self._labels)
            self._labels.append(l)

    def index_of(self, label) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ProtocolViolationError(f"label {label!r} not registered") from None

    def __contains__(self, label) -> bool:
        return label in self._index

    def __len__(self) -> int:
        return len(self._labels)

    @property
    def labels(self) -> tuple:
        return tuple(self._labels)

    def copy(self) -> "LabelRegistry":
        return LabelRegistry(self._labels)


# ---------------------------------------------------------------------------
# ridge regression classifier


@dataclass
class RidgeState:
    """The entire incremental-learning memory: gram = sum E^T E,
    cross = sum E^T Y (one column per registered class), and lam."""

    gram: np.ndarray  # (D, D)
    cross: np.ndarray  # (D, N_total)
    lam: float
    registry: LabelRegistry
    _weights: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.gram.shape[0]


def _one_hot(labels, index_of, num_cols: int) -> np.ndarray:
    y = np.zeros((len(labels), num_cols))
    for i, label in enumerate(labels):
        y[i, index_of(label)] = 1.0
    return y


def fit_base(E: np.ndarray, Y: np.ndarray, lam: float, labels=None) -> RidgeState:
    """Closed-form fit on the base session: gram = E^T E, cross = E^T Y.

    Y is one-hot, one column per base class; ``labels`` names the columns
    (defaults to 0..N-1).
    """
    E = np.asarray(E, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if E.ndim != 2 or Y.ndim != 2 or E.shape[0] != Y.shape[0]:
        raise UsageError(f"embeddings {E.shape} and targets {Y.shape} disagree")
    if E.shape[0] < 1:
        raise UsageError("need at least one training sample")
    if lam < 0:
        raise UsageError(f"ridge lam must be >= 0, got {lam}")
    if labels is None:
        labels = list(range(Y.shape[1]))
    if len(labels) != Y.shape[1]:
        raise UsageError(f"{len(labels)} labels for {Y.shape[1]} target columns")
    state = RidgeState(
        gram=E.T @ E,
        cross=E.T @ Y,
        lam=float(lam),
        registry=LabelRegistry(labels),
    )
    solve_weights(state)  # fail fast on singular systems
    return state


def update_incremental(state: RidgeState, E_m: np.ndarray, Y_m: np.ndarray, new_labels) -> RidgeState:
    """Analytic session update: register the new classes, zero-pad cross,
    then accumulate E_m^T E_m and E_m^T Y_m. Returns a new state; the
    cached weights are invalidated."""
    E_m = np.asarray(E_m, dtype=np.float64).reshape(-1, state.dim)
    new_labels = list(new_labels)
    registry = state.registry.copy()
    registry.add(new_labels)
    Y_m = np.asarray(Y_m, dtype=np.float64).reshape(E_m.shape[0], len(new_labels))
    cross = np.zeros((state.dim, len(registry)))
    cross[:, : state.cross.shape[1]] = state.cross
    offset = state.cross.shape[1]
    cross[:, offset : offset + len(new_labels)] += E_m.T @ Y_m
    return RidgeState(
        gram=state.gram + E_m.T @ E_m,
        cross=cross,
        lam=state.lam,
        registry=registry,
    )


def solve_weights(state: RidgeState) -> np.ndarray:
    """Solve (gram + lam*I) W = cross by Cholesky; cache W on the state.

    If the factorization fails, retries once with a diagonal jitter of
    1e-10 * trace(gram)/D, then raises. The returned W always satisfies
    the residual bound ||(G+lam I)W - C||_inf <= 1e-8 * (1 + ||C||_inf).
    """
    if state._weights is not None:
        return state._weights
    d = state.dim
    system = state.gram + state.lam * np.eye(d)
    try:
        factor = scipy.linalg.cho_factor(system, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        # with lam > 0 the system is PD in exact arithmetic, so a failure
        # is numerical: retry once with a tiny diagonal jitter
        if state.lam <= 0.0:
            raise SolverError(
                "gram matrix is singular at lam = 0; use lam > 0 "
                "(required whenever E^T E is singular)"
            ) from None
        jitter = 1e-10 * np.trace(state.gram) / d
        try:
            factor = scipy.linalg.cho_factor(
                system + jitter * np.eye(d), lower=True, check_finite=False
            )
        except np.linalg.LinAlgError:
            raise SolverError(
                "gram + lam*I is not positive definite even after jitter; increase lam"
            ) from None
    w = scipy.linalg.cho_solve(factor, state.cross, check_finite=False)
    residual = np.max(np.abs(system @ w - state.cross))
    bound = RESIDUAL_RTOL * (1.0 + np.max(np.abs(state.cross), initial=0.0))
    if residual > bound:
        raise SolverError(
            f"normal-equation residual {residual:.3e} exceeds bound {bound:.3e}; "
            "system too ill-conditioned, increase lam"
        )
    state._weights = w
    return w


def cosine_scores(W: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Cosine between a query embedding and every weight column; zero-norm
    columns score 0."""
    e = np.asarray(e, dtype=np.float64).ravel()
    e_norm = np.linalg.norm(e)
    if e_norm <= 0.0:
        raise NumericError("zero embedding: cosine scores undefined")
    col_norms = np.linalg.norm(W, axis=0)
    safe = np.where(col_norms > 0.0, col_norms, 1.0)
    scores = (W.T @ e) / (safe * e_norm)
    return np.where(col_norms > 0.0, scores, 0.0)


def predict(W: np.ndarray, registry: LabelRegistry, e: np.ndarray):
    """Argmax cosine class (ties -> lowest registry index) plus the full
    score vector."""
    scores = cosine_scores(W, e)
    return registry.labels[int(np.argmax(scores))], scores


def _stratified_folds(labels: np.ndarray, k_folds: int, rng: np.random.Generator) -> np.ndarray:
    """Assign each sample a fold id, dealing each class round-robin."""
    fold_of = np.empty(len(labels), dtype=np.int64)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < k_folds:
            raise StratificationError(
                f"class {cls} has {len(idx)} samples, fewer than {k_folds} folds"
            )
        rng.shuffle(idx)
        fold_of[idx] = np.arange(len(idx)) % k_folds
    return fold_of


def select_lambda_cv(E: np.ndarray, Y: np.ndarray, grid, k_folds: int, seed: int) -> float:
    """Pick lam from the grid by stratified k-fold held-out accuracy.

    Ties break toward the smaller lam; deterministic for a fixed seed.
    """
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise UsageError("empty lam grid")
    E = np.asarray(E, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    labels = np.argmax(Y, axis=1)
    if not 2 <= k_folds <= len(labels):
        raise UsageError(f"need 2 <= k_folds <= n, got k_folds={k_folds}, n={len(labels)}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0xCF))))
    fold_of = _stratified_folds(labels, k_folds, rng)

    best_lam, best_acc = grid[0], -1.0
    for lam in grid:
        correct = total = 0
        for fold in range(k_folds):
            train = fold_of != fold
            state = fit_base(E[train], Y[train], lam)
            w = solve_weights(state)
            for row, true_cls in zip(E[~train], labels[~train]):
                pred, _ = predict(w, state.registry, row)
                correct += int(pred == true_cls)
                total += 1
        acc = correct / total
        if acc > best_acc:
            best_lam, best_acc = lam, acc
    return best_lam


# ---------------------------------------------------------------------------
# prototype baseline


@dataclass
class Prototypes:
    means: np.ndarray  # (N_total, D)
    registry: LabelRegistry


def prototype_fit(E: np.ndarray, Y: np.ndarray, labels=None) -> Prototypes:
    """Per-class mean embeddings."""
    E = np.asarray(E, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if labels is None:
        labels = list(range(Y.shape[1]))
    counts = Y.sum(axis=0)
    empty = [labels[i] for i in np.flatnonzero(counts == 0)]
    if empty:
        raise UsageError(f"classes with no samples: {empty}")
    means = (Y.T @ E) / counts[:, None]
    return Prototypes(means=means, registry=LabelRegistry(labels))


def prototype_update(protos: Prototypes, E_m: np.ndarray, Y_m: np.ndarray, new_labels) -> Prototypes:
    """Append mean prototypes for the new classes; old rows untouched."""
    added = prototype_fit(E_m, Y_m, list(new_labels))
    registry = protos.registry.copy()
    registry.add(list(new_labels))
    return Prototypes(means=np.vstack([protos.means, added.means]), registry=registry)


def prototype_predict(protos: Prototypes, e: np.ndarray):
    scores = cosine_scores(protos.means.T, e)
    return protos.registry.labels[int(np.argmax(scores))], scores


# ---------------------------------------------------------------------------
# serialization


def serialize_state(state: RidgeState) -> bytes:
    """Ridge state in the weight-container format (f64: the accumulated
    matrices are the learning memory and must survive round trips at the
    tolerances of the incremental/batch equivalence)."""
    tensors = [
        ("gram", state.gram),
        ("cross", state.cross),
        ("lambda", np.array([state.lam])),
    ]
    return weights_io.serialize_container(tensors, labels=state.registry.labels, dtype="f64")


def save_state(path, state: RidgeState) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_state(state))


def load_state(path) -> RidgeState:
    tensors, labels = weights_io.load_container(path)
    for required in ("gram", "cross", "lambda"):
        if required not in tensors:
            raise UsageError(f"classifier container missing tensor {required!r}")
    return RidgeState(
        gram=tensors["gram"],
        cross=tensors["cross"],
        lam=float(tensors["lambda"][0]),
        registry=LabelRegistry(labels),
    )


def state_checksum(state: RidgeState) -> str:
    return hashlib.sha256(serialize_state(state)).hexdigest()
