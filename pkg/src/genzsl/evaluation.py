"""Zero-shot and generalized zero-shot evaluation.

Recognition reduces to a conventional problem once the generator can
synthesize features for any descriptor: build a pool of generated features
per class and score a test point by its (negative) distance to the nearest
pool member. On top of that scorer:

  * Top-1 restricts the label space to unseen classes;
  * the seen-unseen curve sweeps a bias added to every unseen-class score,
    tracing (seen accuracy, unseen accuracy) pairs whose area summarizes
    generalized performance;
  * retrieval ranks all test images by distance to a class's generated
    center (the mean of 60 generations by default) and measures precision
    at a per-class depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import model as mo
from .errors import ValidationError

DEFAULT_FRACTIONS = (0.25, 0.5, 1.0)
DEFAULT_BIAS_POINTS = 201


@dataclass
class EvalReport:
    top1_unseen: float
    su_curve: list[tuple[float, float]]  # (seen_acc, unseen_acc), sorted by bias
    su_auc: float
    harmonic_mean: float
    retrieval_map: dict[float, float] = field(default_factory=dict)


@dataclass
class GeneratedPoolClassifier:
    """Nearest-generated-neighbor scorer over a fixed pool per class."""

    class_ids: np.ndarray      # (C,) global label of each column
    pools: np.ndarray          # (C, n_generate, visual_dim)
    metric: str = "euclidean"

    def scores(self, x: np.ndarray) -> np.ndarray:
        """Score matrix (len(x), C); larger is closer."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        c, n, d = self.pools.shape
        flat = self.pools.reshape(c * n, d)
        if self.metric == "euclidean":
            d2 = (x * x).sum(axis=1)[:, None] + (flat * flat).sum(axis=1)[None, :] \
                - 2.0 * x @ flat.T
            d2 = np.maximum(d2, 0.0).reshape(len(x), c, n)
            return -np.sqrt(d2.min(axis=2))
        if self.metric == "cosine":
            xn = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)
            fn = flat / np.maximum(np.linalg.norm(flat, axis=1, keepdims=True), 1e-12)
            sim = (xn @ fn.T).reshape(len(x), c, n)
            return sim.max(axis=2)
        raise ValidationError(f"unknown metric {self.metric!r}")

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.class_ids[np.argmax(self.scores(x), axis=1)]


def build_classifier(gen: mo.GeneratorParams, semantics, n_generate: int,
                     rng: np.random.Generator, class_ids=None,
                     metric: str = "euclidean") -> GeneratedPoolClassifier:
    """Generate `n_generate` features per descriptor row and wrap them as a
    nearest-neighbor scorer. Reproducible for a fixed random stream."""
    semantics = np.atleast_2d(np.asarray(semantics, dtype=np.float64))
    if n_generate < 1:
        raise ValidationError("n_generate must be at least 1")
    c = semantics.shape[0]
    ids = np.arange(c) if class_ids is None else np.asarray(class_ids)
    t = np.repeat(semantics, n_generate, axis=0)
    z = rng.standard_normal((c * n_generate, gen.arch.noise_dim))
    pools = mo.generate(gen, t, z).reshape(c, n_generate, gen.arch.visual_dim)
    return GeneratedPoolClassifier(ids, pools, metric)


def top1(classifier: GeneratedPoolClassifier, features, labels) -> float:
    """Fraction of test points whose top-scoring class is the true one."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValidationError("empty test set")
    return float(np.mean(classifier.predict(features) == labels))


def harmonic_mean(seen_acc: float, unseen_acc: float) -> float:
    if not (0.0 <= seen_acc <= 1.0 and 0.0 <= unseen_acc <= 1.0):
        raise ValidationError("accuracies must lie in [0, 1]")
    if seen_acc + unseen_acc == 0.0:
        return 0.0
    return 2.0 * seen_acc * unseen_acc / (seen_acc + unseen_acc)


def su_curve_auc(classifier: GeneratedPoolClassifier, features, labels,
                 unseen_ids, bias_grid=None):
    """Seen-unseen curve and its area.

    For each bias b the unseen-class scores are shifted by b before the
    argmax; accuracies are measured separately over the seen-labeled and
    unseen-labeled test points. The default grid spans three score standard
    deviations each way (201 points) plus two extreme proxies that force
    all-seen and all-unseen predictions, pinning the curve's endpoints at
    zero unseen and zero seen accuracy respectively. The area integrates
    the curve over seen accuracy by the trapezoidal rule after extending it
    to the axes.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels)
    unseen_ids = np.asarray(unseen_ids)
    unseen_cols = np.isin(classifier.class_ids, unseen_ids)
    test_unseen = np.isin(labels, unseen_ids)
    if not test_unseen.any() or test_unseen.all():
        raise ValidationError("the mixed test set needs both seen and unseen examples")

    scores = classifier.scores(features)
    if bias_grid is None:
        sigma = float(scores.std())
        span = 3.0 * sigma if sigma > 0 else 1.0
        bias_grid = np.linspace(-span, span, DEFAULT_BIAS_POINTS)
    bias_grid = np.asarray(bias_grid, dtype=np.float64)
    if bias_grid.size == 0:
        raise ValidationError("bias grid is empty")
    extreme = float(scores.max() - scores.min()) + 1.0
    grid = np.sort(np.concatenate([bias_grid, [-extreme, extreme]]))

    curve = []
    for b in grid:
        shifted = scores + b * unseen_cols[None, :]
        pred = classifier.class_ids[np.argmax(shifted, axis=1)]
        hits = pred == labels
        a_s = float(hits[~test_unseen].mean())
        a_u = float(hits[test_unseen].mean())
        curve.append((a_s, a_u))

    pts = list(curve)
    pts.append((0.0, curve[-1][1]))   # beyond the largest bias no seen wins
    pts.append((curve[0][0], 0.0))    # beyond the smallest no unseen wins
    arr = np.array(pts)
    # ascending seen accuracy; ties resolved along the sweep direction
    # (higher unseen accuracy first) so corner points are not cut off
    order = np.lexsort((-arr[:, 1], arr[:, 0]))
    arr = arr[order]
    auc = float(np.trapezoid(arr[:, 1], arr[:, 0]))
    return curve, auc


def retrieval_map(gen: mo.GeneratorParams, unseen_semantics, test_features,
                  test_labels, unseen_ids, fractions=DEFAULT_FRACTIONS,
                  n_generate: int = 60, rng: np.random.Generator | None = None,
                  method: str = "precision") -> dict[float, float]:
    """Mean retrieval score per fraction over the unseen classes.

    Each class queries with its visual center (the mean of `n_generate`
    generated features); all test images are ranked by ascending distance,
    ties broken by stable image index, and the top ceil(fraction * class
    size) is scored. `method` picks precision at that depth (default) or
    average precision truncated there.
    """
    if rng is None:
        raise ValidationError("retrieval needs an explicit random stream")
    if method not in ("precision", "average_precision"):
        raise ValidationError(f"unknown retrieval method {method!r}")
    unseen_semantics = np.atleast_2d(np.asarray(unseen_semantics, dtype=np.float64))
    test_features = np.atleast_2d(np.asarray(test_features, dtype=np.float64))
    test_labels = np.asarray(test_labels)
    unseen_ids = np.asarray(unseen_ids)
    if unseen_semantics.shape[0] != unseen_ids.size:
        raise ValidationError("one descriptor per unseen class id is required")

    t = np.repeat(unseen_semantics, n_generate, axis=0)
    z = rng.standard_normal((len(unseen_semantics) * n_generate, gen.arch.noise_dim))
    pools = mo.generate(gen, t, z).reshape(len(unseen_semantics), n_generate, -1)
    centers = pools.mean(axis=1)

    out = {}
    for frac in fractions:
        if not 0.0 < frac <= 1.0:
            raise ValidationError("fractions must lie in (0, 1]")
        per_class = []
        for c, center in zip(unseen_ids, centers):
            n_c = int((test_labels == c).sum())
            if n_c == 0:
                raise ValidationError(f"unseen class {c} has no test images")
            dist = np.linalg.norm(test_features - center[None, :], axis=1)
            order = np.argsort(dist, kind="stable")
            k = math.ceil(frac * n_c)
            rel = (test_labels[order[:k]] == c).astype(np.float64)
            if method == "precision":
                per_class.append(rel.mean())
            else:
                hits = np.cumsum(rel)
                ranks = np.arange(1, k + 1)
                denom = min(n_c, k)
                per_class.append(float((rel * hits / ranks).sum() / denom))
        out[float(frac)] = float(np.mean(per_class))
    return out


def evaluate_model(gen: mo.GeneratorParams, dataset, n_generate: int,
                   rng: np.random.Generator, fractions=DEFAULT_FRACTIONS,
                   metric: str = "euclidean", with_retrieval: bool = True,
                   retrieval_method: str = "precision") -> EvalReport:
    """The full battery on a dataset's test split.

    The reported harmonic mean is the best achievable along the curve,
    summarizing the trade-off like the area does.
    """
    unseen_ids = dataset.k_seen + np.arange(dataset.k_unseen)
    zsl = build_classifier(gen, dataset.unseen_semantics, n_generate, rng,
                           class_ids=unseen_ids, metric=metric)
    acc = top1(zsl, dataset.unseen_test_features, dataset.unseen_test_labels)

    all_sem = np.vstack([dataset.seen_semantics, dataset.unseen_semantics])
    gzsl = build_classifier(gen, all_sem, n_generate, rng,
                            class_ids=np.arange(dataset.k_seen + dataset.k_unseen),
                            metric=metric)
    mixed_x = np.vstack([dataset.seen_test_features, dataset.unseen_test_features])
    mixed_y = np.concatenate([dataset.seen_test_labels, dataset.unseen_test_labels])
    curve, auc = su_curve_auc(gzsl, mixed_x, mixed_y, unseen_ids)
    best_h = max(harmonic_mean(a_s, a_u) for a_s, a_u in curve)

    retrieval = {}
    if with_retrieval:
        # retrieval queries the unseen classes against the unseen test pool
        retrieval = retrieval_map(gen, dataset.unseen_semantics,
                                  dataset.unseen_test_features,
                                  dataset.unseen_test_labels,
                                  unseen_ids, fractions, n_generate, rng,
                                  retrieval_method)
    return EvalReport(acc, curve, auc, best_h, retrieval)
