"""Alternating adversarial training, cross-validation, and ablation runs.

One outer step draws a fresh hallucinated minibatch, runs `n_d` Adam updates
of the discriminator, then one Adam update of the generator and, when the
entropy loss has learnable parameters, one Adam update of those from the
same generator-loss gradients. All randomness is drawn from purpose-keyed
Philox streams, so a (dataset, config) pair reproduces its run bit for bit.

Cross-validation splits the seen classes 80/20, treats the held-out classes
as pseudo-unseen, trains once per creativity-weight candidate, and retrains
on all seen classes with the winning (weight, step) pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import diffmath as dm
from . import divergences as dv
from . import evaluation as ev
from . import events
from . import hallucination as hl
from . import losses as ls
from . import model as mo
from .dataio import ZslDataset, philox
from .errors import NumericOverflowError, ValidationError

# stream purpose tags
TAG_INIT, TAG_HALLU, TAG_BATCH, TAG_NOISE = 1, 2, 3, 4
TAG_INTERP, TAG_UCAT, TAG_EVAL, TAG_SPLIT = 5, 6, 7, 8

DEFAULT_LAMBDA_GRID = (0.0001, 0.001, 0.01, 0.1, 1.0)


@dataclass(frozen=True)
class ArchConfig:
    """Architecture knobs that do not depend on the dataset; the semantic and
    visual widths are read off the dataset at train time."""

    preset: str = "base"
    hidden_dim: int = 64
    noise_dim: int = 16
    reduced_dim: int | None = None
    leak: float = 0.2

    def resolve(self, dataset: ZslDataset) -> mo.ArchSpec:
        return mo.ArchSpec(
            semantic_dim=dataset.semantic_dim,
            visual_dim=dataset.visual_dim,
            preset=self.preset,
            noise_dim=self.noise_dim,
            hidden_dim=self.hidden_dim,
            reduced_dim=self.reduced_dim,
            leak=self.leak,
        )


@dataclass(frozen=True)
class TrainConfig:
    n_steps: int = 3000
    batch_size: int = 64
    n_d: int = 5
    lr: float = 0.001
    beta1: float = 0.5
    beta2: float = 0.9
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    eval_every: int = 100
    seed: int = 0
    n_generate_eval: int = 60
    class_balanced: bool = False
    loss: ls.LossConfig = field(default_factory=ls.LossConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    policy: hl.HallucinationPolicy = field(
        default_factory=lambda: hl.PRESETS["interpolate"])

    def __post_init__(self):
        if self.n_steps < 0 or self.batch_size < 1 or self.n_d < 1:
            raise ValidationError("n_steps >= 0, batch_size >= 1, n_d >= 1 required")
        if self.lr <= 0:
            raise ValidationError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("beta1 and beta2 must lie in [0, 1)")
        if self.eval_every < 1:
            raise ValidationError("eval_every must be positive")
        if self.n_steps and self.n_steps % self.eval_every:
            raise ValidationError("eval_every must divide n_steps")
        if self.n_generate_eval < 1:
            raise ValidationError("n_generate_eval must be positive")


@dataclass
class HistoryRecord:
    step: int
    loss_g: float
    loss_d: float
    wasserstein: float
    val_top1: float
    val_auc: float
    gamma: float
    beta: float


@dataclass
class TrainHistory:
    records: list[HistoryRecord] = field(default_factory=list)
    n_disc_updates: int = 0
    n_gen_updates: int = 0
    n_entropy_updates: int = 0
    degenerate_events: dict[str, int] = field(default_factory=dict)

    CSV_HEADER = ("step", "loss_g", "loss_d", "wasserstein",
                  "val_top1", "val_auc", "gamma", "beta")

    def rows(self):
        return [
            (r.step, r.loss_g, r.loss_d, r.wasserstein,
             r.val_top1, r.val_auc, r.gamma, r.beta)
            for r in self.records
        ]


# ---------------------------------------------------------------------------
# config (de)serialization


def config_to_dict(cfg: TrainConfig) -> dict:
    d = {
        "n_steps": cfg.n_steps, "batch_size": cfg.batch_size, "n_d": cfg.n_d,
        "lr": cfg.lr, "beta1": cfg.beta1, "beta2": cfg.beta2,
        "lambda_grid": list(cfg.lambda_grid), "eval_every": cfg.eval_every,
        "seed": cfg.seed, "n_generate_eval": cfg.n_generate_eval,
        "class_balanced": cfg.class_balanced,
        "loss": {
            "lambda_creativity": cfg.loss.lambda_creativity,
            "realism_term": cfg.loss.realism_term,
            "entropy_term": cfg.loss.entropy_term,
            "new_class_ablation": cfg.loss.new_class_ablation,
            "creativity_on_discriminator": cfg.loss.creativity_on_discriminator,
            "segc_active": cfg.loss.segc_active,
            "segc_normalized": cfg.loss.segc_normalized,
            "eta": cfg.loss.eta,
            "rf_hallucinated": cfg.loss.rf_hallucinated,
            "u_categorization": cfg.loss.u_categorization,
            "k_unseen_cap": cfg.loss.k_unseen_cap,
            "divergence": {
                "family": cfg.loss.divergence.family,
                "gamma": cfg.loss.divergence.gamma,
                "beta": cfg.loss.divergence.beta,
                "learn_gamma": cfg.loss.divergence.learn_gamma,
                "learn_beta": cfg.loss.divergence.learn_beta,
                "orientation": cfg.loss.divergence.orientation,
            },
        },
        "arch": {
            "preset": cfg.arch.preset, "hidden_dim": cfg.arch.hidden_dim,
            "noise_dim": cfg.arch.noise_dim, "reduced_dim": cfg.arch.reduced_dim,
            "leak": cfg.arch.leak,
        },
        "policy": {"mode": cfg.policy.mode,
                   "intervals": [list(iv) for iv in cfg.policy.intervals]},
    }
    return d


def _check_keys(d: dict, allowed, where: str) -> None:
    unknown = set(d) - set(allowed)
    if unknown:
        raise ValidationError(f"unknown {where} keys: {sorted(unknown)}")


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    _check_keys(d, {f.name for f in fields(TrainConfig)}, "config")
    if "loss" in d:
        loss_d = dict(d["loss"])
        _check_keys(loss_d, {f.name for f in fields(ls.LossConfig)}, "loss")
        if "divergence" in loss_d:
            div_d = dict(loss_d["divergence"])
            _check_keys(div_d, {f.name for f in fields(dv.DivergenceSpec)}, "divergence")
            loss_d["divergence"] = dv.DivergenceSpec(**div_d)
        d["loss"] = ls.LossConfig(**loss_d)
    if "arch" in d:
        arch_d = dict(d["arch"])
        _check_keys(arch_d, {f.name for f in fields(ArchConfig)}, "arch")
        d["arch"] = ArchConfig(**arch_d)
    if "policy" in d:
        p = d["policy"]
        if isinstance(p, dict):
            mode = p.get("mode", "uniform")
            intervals = tuple(tuple(iv) for iv in p.get("intervals", ()))
            d["policy"] = hl.HallucinationPolicy(intervals, mode) if mode == "uniform" \
                else hl.HallucinationPolicy(mode=mode)
        else:
            d["policy"] = hl.policy_from_config(p)
    if "lambda_grid" in d:
        d["lambda_grid"] = tuple(float(v) for v in d["lambda_grid"])
    return TrainConfig(**d)


# ---------------------------------------------------------------------------
# minibatch sampling


def _sample_indices(dataset: ZslDataset, size: int, rng, class_balanced: bool,
                    per_class: list[np.ndarray]) -> np.ndarray:
    if not class_balanced:
        return rng.integers(0, len(dataset.seen_features), size=size)
    classes = rng.integers(0, dataset.k_seen, size=size)
    offsets = rng.uniform(size=size)
    return np.array([
        per_class[c][int(o * len(per_class[c]))] for c, o in zip(classes, offsets)
    ])


# ---------------------------------------------------------------------------
# the training loop


def train(dataset: ZslDataset, cfg: TrainConfig):
    """Run the alternating optimization; returns (ModelParams, TrainHistory).

    Identical (dataset, cfg) pairs produce bit-identical parameters and
    history. History metrics are computed on the dataset's test split every
    `eval_every` steps using a stream keyed by the step, leaving the
    training streams untouched.
    """
    dataset.validate()
    if dataset.k_seen < 2:
        raise ValidationError("training needs at least 2 seen classes")
    arch = cfg.arch.resolve(dataset)
    spec = cfg.loss.divergence

    gen, disc = mo.init_params(arch, dataset.k_seen, cfg.loss.segc_active,
                               philox(cfg.seed, TAG_INIT),
                               extra_class=cfg.loss.new_class_ablation)
    div_store = dm.ParamStore(
        {k: np.asarray(v) for k, v in spec.unconstrained_init().items()})

    state_d = dm.AdamState(disc.store)
    state_g = dm.AdamState(gen.store)
    state_e = dm.AdamState(div_store) if len(div_store) else None

    rng_hallu = philox(cfg.seed, TAG_HALLU)
    rng_batch = philox(cfg.seed, TAG_BATCH)
    rng_noise = philox(cfg.seed, TAG_NOISE)
    rng_interp = philox(cfg.seed, TAG_INTERP)
    rng_ucat = philox(cfg.seed, TAG_UCAT)

    per_class = [np.flatnonzero(dataset.seen_labels == k) for k in range(dataset.k_seen)]
    real_means = dataset.class_means()
    n_pivot = max(1, cfg.batch_size // dataset.k_seen)
    m = cfg.batch_size

    history = TrainHistory(degenerate_events=dict(events.counts()))
    adam_kw = dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)

    loss_d_val = loss_g_val = w_est = 0.0
    for step in range(1, cfg.n_steps + 1):
        t_h = hl.sample_hallucinated_text(dataset.seen_semantics, cfg.policy, m, rng_hallu)
        z_h = rng_noise.standard_normal((m, arch.noise_dim))
        hallu = ls.HalluBatch(t_h, z_h)
        div_values = ls.current_divergence_params(spec, div_store)
        # the generator is frozen across the discriminator phase
        reduced_seen = mo.reduce_semantics(gen, dataset.seen_semantics) \
            if disc.segc else None

        for _ in range(cfg.n_d):
            idx = _sample_indices(dataset, m, rng_batch, cfg.class_balanced, per_class)
            x = dataset.seen_features[idx]
            y = dataset.seen_labels[idx]
            seen = ls.SeenBatch(dataset.seen_semantics[y], y,
                                rng_noise.standard_normal((m, arch.noise_dim)))
            x_fake = mo.generate(gen, seen.t, seen.z)
            x_tilde = ls.lipschitz_interpolate(x, x_fake, rng_interp)

            def build_d(leaves):
                terms = ls.discriminator_loss_node(
                    leaves, disc, gen, x, y, seen, hallu, x_tilde, cfg.loss,
                    reduced_seen, div_values)
                total = dm.constant(0.0)
                for t in terms.values():
                    total = dm.add(total, t)
                build_d.terms = {k: float(v.value) for k, v in terms.items()}
                return total

            try:
                grads = dm.grad_scalar(build_d, disc.store)
            except NumericOverflowError as exc:
                raise NumericOverflowError(f"step {step}, discriminator: {exc}") from exc
            disc.store, state_d = dm.adam_step(disc.store, grads, state_d, **adam_kw)
            terms_d = build_d.terms
            loss_d_val = sum(terms_d.values())
            w_est = -terms_d["critic_real"] - terms_d["critic_fake"]

        idx = _sample_indices(dataset, m, rng_batch, cfg.class_balanced, per_class)
        y = dataset.seen_labels[idx]
        seen = ls.SeenBatch(dataset.seen_semantics[y], y,
                            rng_noise.standard_normal((m, arch.noise_dim)))
        pivot = ls.PivotInputs(
            dataset.seen_semantics, real_means,
            rng_noise.standard_normal((dataset.k_seen, n_pivot, arch.noise_dim)))
        ucat = None
        reduced_ucat = None
        if cfg.loss.u_categorization:
            t_u = hl.sample_hallucinated_text(dataset.seen_semantics, cfg.policy,
                                              cfg.loss.k_unseen_cap, rng_ucat)
            ucat = ls.UCatBatch(t_u, rng_ucat.standard_normal(
                (cfg.loss.k_unseen_cap, arch.noise_dim)))
            reduced_ucat = mo.reduce_semantics(gen, t_u)
        reduced_seen = mo.reduce_semantics(gen, dataset.seen_semantics) \
            if disc.segc else None

        merged = dm.ParamStore(
            [("gen." + k, v) for k, v in gen.store.items()]
            + [("div." + k, v) for k, v in div_store.items()])

        def build_g(leaves):
            gen_map = {k[4:]: v for k, v in leaves.items() if k.startswith("gen.")}
            div_map = {k[4:]: v for k, v in leaves.items() if k.startswith("div.")}
            terms = ls.generator_loss_node(gen_map, div_map, disc, seen, hallu,
                                           pivot, cfg.loss, ucat, reduced_seen,
                                           reduced_ucat)
            total = dm.constant(0.0)
            for t in terms.values():
                total = dm.add(total, t)
            build_g.total = float(total.value)
            return total

        try:
            grads = dm.grad_scalar(build_g, merged)
        except NumericOverflowError as exc:
            raise NumericOverflowError(f"step {step}, generator: {exc}") from exc
        gen_grads = {k[4:]: v for k, v in grads.items() if k.startswith("gen.")}
        gen.store, state_g = dm.adam_step(gen.store, gen_grads, state_g, **adam_kw)
        if state_e is not None:
            div_grads = {k[4:]: v for k, v in grads.items() if k.startswith("div.")}
            div_store, state_e = dm.adam_step(div_store, div_grads, state_e, **adam_kw)
        loss_g_val = build_g.total

        if step % cfg.eval_every == 0:
            report = ev.evaluate_model(gen, dataset, cfg.n_generate_eval,
                                       philox(cfg.seed, TAG_EVAL, step),
                                       with_retrieval=False)
            gamma, beta = ls.current_divergence_params(spec, div_store)
            history.records.append(HistoryRecord(
                step, loss_g_val, loss_d_val, w_est,
                report.top1_unseen, report.su_auc, gamma, beta))

    history.n_disc_updates = state_d.step
    history.n_gen_updates = state_g.step
    history.n_entropy_updates = state_e.step if state_e is not None else 0
    start = history.degenerate_events
    history.degenerate_events = {
        k: v - start.get(k, 0) for k, v in events.counts().items()
        if v - start.get(k, 0) > 0
    }
    params = mo.ModelParams(gen, disc, div_store)
    return params, history


# ---------------------------------------------------------------------------
# cross-validation over the creativity weight


@dataclass
class CrossValResult:
    best_lambda: float
    best_step: int
    best_metric: float
    curves: dict[float, list[tuple[int, float, float]]]  # lambda -> (step, auc, top1)
    final_params: mo.ModelParams
    final_history: TrainHistory


def split_for_validation(dataset: ZslDataset, seed: int):
    """Hold out ~20% of the seen classes as pseudo-unseen; their training
    examples become the validation test set."""
    k = dataset.k_seen
    if k < 5:
        raise ValidationError("cross-validation needs at least 5 seen classes")
    n_val = max(1, round(0.2 * k))
    order = philox(seed, TAG_SPLIT).permutation(k)
    val_classes = np.sort(order[:n_val])
    train_classes = np.sort(order[n_val:])

    remap = -np.ones(k, dtype=int)
    remap[train_classes] = np.arange(len(train_classes))
    train_mask = np.isin(dataset.seen_labels, train_classes)
    seen_test_mask = np.isin(dataset.seen_test_labels, train_classes)

    val_parts = [dataset.seen_features[dataset.seen_labels == c] for c in val_classes]
    val_features = np.vstack(val_parts)
    val_labels = np.concatenate([
        np.full(len(part), len(train_classes) + i) for i, part in enumerate(val_parts)
    ])

    return ZslDataset(
        seen_features=dataset.seen_features[train_mask],
        seen_labels=remap[dataset.seen_labels[train_mask]],
        seen_semantics=dataset.seen_semantics[train_classes],
        unseen_semantics=dataset.seen_semantics[val_classes],
        unseen_test_features=val_features,
        unseen_test_labels=val_labels,
        seen_test_features=dataset.seen_test_features[seen_test_mask],
        seen_test_labels=remap[dataset.seen_test_labels[seen_test_mask]],
        split_mode="custom",
    ).validate()


def cross_validate(dataset: ZslDataset, cfg: TrainConfig) -> CrossValResult:
    """Pick the creativity weight (and checkpoint step) with the highest
    validation seen-unseen area, then retrain on all seen classes."""
    if not cfg.lambda_grid:
        raise ValidationError("lambda_grid must be non-empty")
    pseudo = split_for_validation(dataset, cfg.seed)

    curves: dict[float, list[tuple[int, float, float]]] = {}
    best = None  # (metric, grid position, step)
    for pos, lam in enumerate(cfg.lambda_grid):
        run_cfg = replace(cfg, loss=replace(cfg.loss, lambda_creativity=lam))
        _, hist = train(pseudo, run_cfg)
        curve = [(r.step, r.val_auc, r.val_top1) for r in hist.records]
        curves.setdefault(lam, curve)
        for step, auc, _ in curve:
            key = (auc, -pos, -step)
            if best is None or key > (best[0], -best[1], -best[2]):
                best = (auc, pos, step)
    if best is None:
        raise ValidationError("no evaluation points recorded; increase n_steps")

    best_lambda = cfg.lambda_grid[best[1]]
    best_step = best[2]
    final_cfg = replace(cfg, n_steps=best_step,
                        loss=replace(cfg.loss, lambda_creativity=best_lambda))
    params, history = train(dataset, final_cfg)
    return CrossValResult(best_lambda, best_step, best[0], curves, params, history)


# ---------------------------------------------------------------------------
# ablation suites


def _with_loss(**over):
    def apply(cfg: TrainConfig) -> TrainConfig:
        return replace(cfg, loss=replace(cfg.loss, **over))
    return apply


def _with_divergence(family, gamma=2.0, beta=2.0, learn_gamma=False, learn_beta=False):
    spec = dv.DivergenceSpec(family, gamma, beta, learn_gamma, learn_beta)
    return _with_loss(divergence=spec)


def _with_policy(name):
    def apply(cfg: TrainConfig) -> TrainConfig:
        return replace(cfg, policy=hl.PRESETS[name])
    return apply


def _compose(*fns):
    def apply(cfg: TrainConfig) -> TrainConfig:
        for fn in fns:
            cfg = fn(cfg)
        return cfg
    return apply


ABLATION_SUITES: dict[str, list[tuple[str, object]]] = {
    # the creative-loss study: entropy families, removed terms, and the
    # new-class alternative, ending at the no-creativity baseline
    "creative-loss": [
        ("sm-entropy-full", _with_divergence("sharma_mittal", 2.0, 2.0, True, True)),
        ("new-class-instead-of-entropy",
         _with_loss(entropy_term=False, new_class_ablation=True)),
        ("no-realism-term", _with_loss(realism_term=False)),
        ("no-entropy-term", _with_loss(entropy_term=False)),
        ("bhattacharyya-entropy", _with_divergence("bhattacharyya", 0.5, 1.0)),
        ("renyi-entropy", _with_divergence("renyi", 2.0, learn_gamma=True)),
        ("kl-entropy", _with_divergence("kl", 1.0, 1.0)),
        ("tsallis-entropy", _with_divergence("tsallis", 2.0, learn_gamma=True)),
        ("baseline-no-creative-terms",
         _with_loss(realism_term=False, entropy_term=False)),
    ],
    "hallucination-policies": [
        ("interpolate", _with_policy("interpolate")),
        ("negative-extrapolate", _with_policy("neg_extrapolate")),
        ("positive-extrapolate", _with_policy("pos_extrapolate")),
        ("negative-and-positive-extrapolate", _with_policy("neg_pos")),
        ("interpolate-and-extrapolate", _with_policy("all")),
    ],
    "semantic-categorizer": [
        ("classic-head", _with_loss(segc_active=False)),
        ("semantic-guided-head", _with_loss(segc_active=True)),
    ],
    "segc-and-hallucinated-rf": [
        ("base", _with_loss()),
        ("hallucinated-rf-loss", _with_loss(rf_hallucinated=True)),
        ("semantic-guided-head", _with_loss(segc_active=True)),
        ("semantic-guided-head-plus-rf",
         _with_loss(segc_active=True, rf_hallucinated=True)),
    ],
    "hallucinated-class-count": [
        ("ku100-without-categorization",
         _with_loss(segc_active=True, u_categorization=False)),
        ("ku100-with-categorization",
         _with_loss(segc_active=True, u_categorization=True, k_unseen_cap=100)),
    ],
}


@dataclass
class AblationRow:
    label: str
    top1_mean: float
    top1_std: float
    auc_mean: float
    auc_std: float
    hm_mean: float
    hm_std: float


def ablate(dataset: ZslDataset, cfg: TrainConfig, suite, seeds=None) -> list[AblationRow]:
    """One row per flag bundle: train, evaluate, and aggregate over seeds.

    `suite` is a suite name from ABLATION_SUITES or an explicit list of
    (label, config-transform) pairs. All bundles share the same seeds.
    """
    if isinstance(suite, str):
        try:
            bundles = ABLATION_SUITES[suite]
        except KeyError:
            raise ValidationError(
                f"unknown suite {suite!r}; known: {sorted(ABLATION_SUITES)}") from None
    else:
        bundles = list(suite)
    seeds = [cfg.seed] if seeds is None else list(seeds)

    rows = []
    for label, transform in bundles:
        metrics = []
        for seed in seeds:
            run_cfg = transform(replace(cfg, seed=seed))
            params, _ = train(dataset, run_cfg)
            report = ev.evaluate_model(params.generator, dataset, cfg.n_generate_eval,
                                       philox(seed, TAG_EVAL, cfg.n_steps + 1),
                                       with_retrieval=False)
            metrics.append((report.top1_unseen, report.su_auc, report.harmonic_mean))
        arr = np.array(metrics)
        rows.append(AblationRow(
            label,
            float(arr[:, 0].mean()), float(arr[:, 0].std()),
            float(arr[:, 1].mean()), float(arr[:, 1].std()),
            float(arr[:, 2].mean()), float(arr[:, 2].std()),
        ))
    return rows
