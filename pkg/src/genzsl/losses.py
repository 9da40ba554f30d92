"""Every training objective, as tape expressions plus plain-value wrappers.

Generator side:
    L_G = creativity
          - mean[ critic(G(t_s, z)) ]
          + mean[ cross-entropy of the active head on G(t_s, z) ]
          + visual pivot
          [ + hallucinated-class categorization ]

    creativity = - mean[ critic(G(t_h, z)) ]                  (realism term)
                 + lambda * mean[ minmax(entropy rows) ]      (entropy term)

where the entropy rows measure the divergence of the seen-class softmax from
uniform, min-max normalized within the minibatch. The new-class ablation
swaps the entropy term for cross-entropy toward an extra class logit.

Discriminator side:
    L_D = mean[ critic(G(t_s, z)) ] - mean[ critic(x) ]
          + mean[ (||grad critic at interpolates|| - 1)^2 ]
          + 1/2 mean[ CE(x) ] + 1/2 mean[ CE(G(t_s, z)) ]
          [ + mean critic(G(t_h, z)) ]          (hallucinated real/fake)
          [ + lambda * entropy term on t_h ]    (negative-result flag)

Classification terms use either the classic softmax head or the softmax over
semantic-guided scores; the critic terms are identical either way. Builders
accept parameter maps whose values are tape Nodes (live) or plain arrays
(frozen), so the same code serves generator steps, discriminator steps, and
gradient checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import diffmath as dm
from . import divergences as dv
from . import model as mo
from .errors import DimensionError, ValidationError


@dataclass(frozen=True)
class LossConfig:
    lambda_creativity: float = 1.0
    realism_term: bool = True
    entropy_term: bool = True
    new_class_ablation: bool = False
    creativity_on_discriminator: bool = False
    segc_active: bool = False
    segc_normalized: bool = False
    eta: float = 1.0
    rf_hallucinated: bool = False
    u_categorization: bool = False
    k_unseen_cap: int = 100
    # the flagship setting: the two-parameter family with both knobs learned
    divergence: dv.DivergenceSpec = field(default_factory=lambda: dv.DivergenceSpec(
        "sharma_mittal", 2.0, 2.0, learn_gamma=True, learn_beta=True))

    def __post_init__(self):
        if not np.isfinite(self.lambda_creativity) or self.lambda_creativity < 0:
            raise ValidationError("lambda_creativity must be finite and >= 0")
        if self.new_class_ablation and self.entropy_term:
            raise ValidationError("the new-class ablation replaces the entropy term")
        if self.new_class_ablation and self.segc_active:
            raise ValidationError("the new-class ablation needs the classic head")
        if self.u_categorization and not self.segc_active:
            raise ValidationError("hallucinated-class categorization reuses the "
                                  "semantic-guided head; enable segc_active")
        if self.k_unseen_cap < 2:
            raise ValidationError("k_unseen_cap must be at least 2")
        if self.segc_normalized and self.eta <= 0:
            raise ValidationError("eta must be positive")


class SeenBatch(NamedTuple):
    t: np.ndarray  # (B, semantic_dim)
    y: np.ndarray  # (B,) integer labels into the seen classes
    z: np.ndarray  # (B, noise_dim)


class HalluBatch(NamedTuple):
    t: np.ndarray
    z: np.ndarray


class PivotInputs(NamedTuple):
    semantics: np.ndarray   # (K_s, semantic_dim), one descriptor per class
    real_means: np.ndarray  # (K_s, visual_dim)
    z: np.ndarray           # (K_s, n_z, noise_dim)


class UCatBatch(NamedTuple):
    t: np.ndarray  # (K_u, semantic_dim) distinct hallucinated descriptors
    z: np.ndarray  # (K_u, noise_dim)


# ---------------------------------------------------------------------------
# small pieces


def minmax_normalize(values) -> np.ndarray:
    """Rescale a batch to [0, 1]; a (near-)constant batch maps to zeros."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValidationError("empty batch")
    span = v.max() - v.min()
    if span < 1e-12:
        return np.zeros_like(v)
    return (v - v.min()) / span


def lipschitz_interpolate(x_real, x_fake, rng: np.random.Generator) -> np.ndarray:
    """Per-row uniform blend between a real feature and a fake one."""
    x_real = dm.as_tensor(x_real)
    x_fake = dm.as_tensor(x_fake)
    if x_real.shape != x_fake.shape:
        raise DimensionError(f"cannot interpolate {x_real.shape} with {x_fake.shape}")
    u = rng.uniform(size=(x_real.shape[0], 1))
    return u * x_real + (1.0 - u) * x_fake


def _onehot(y, n, k_valid) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.size == 0:
        raise ValidationError("labels must form a non-empty vector")
    if np.any((y < 0) | (y >= k_valid)):
        raise ValidationError(f"labels out of range [0, {k_valid})")
    return np.eye(n)[y]


def divergence_param_nodes(spec: dv.DivergenceSpec, div_map) -> tuple[dm.Node, dm.Node]:
    """(gamma, beta) as tape nodes, mapping unconstrained parameters through
    1 + sign * softplus(u) where learnable and pinning limits otherwise."""
    s_gamma, s_beta = spec.reparam_signs()
    if spec.learn_gamma:
        gamma = dm.add(1.0, dm.mul(s_gamma, dm.softplus(div_map["u_gamma"])))
    else:
        gamma = dm.constant(spec.effective_params()[0])
    if spec.family == "tsallis":
        beta = gamma
    elif spec.learn_beta:
        beta = dm.add(1.0, dm.mul(s_beta, dm.softplus(div_map["u_beta"])))
    else:
        beta = dm.constant(spec.effective_params()[1])
    return gamma, beta


def current_divergence_params(spec: dv.DivergenceSpec, div_store) -> tuple[float, float]:
    """The (gamma, beta) currently in effect, given the unconstrained store."""
    gamma, beta = divergence_param_nodes(spec, {k: np.asarray(v) for k, v in div_store.items()})
    return float(gamma.value), float(beta.value)


def divergence_rows_node(probs: dm.Node, gamma: dm.Node, beta: dm.Node, spec: dv.DivergenceSpec) -> dm.Node:
    """Per-row divergence of softmax rows from uniform as one fused tape
    node; the reverse map reuses the analytic gradients of the divergence
    module for the rows and both parameters."""
    vals, dP, dg, db = dv.divergence_to_uniform_batch(
        probs.value, float(gamma.value), float(beta.value), spec.family, spec.orientation
    )

    def vjp(g):
        return (
            g[:, None] * dP,
            np.asarray((g * dg).sum()),
            np.asarray((g * db).sum()),
        )

    return dm.Node(vals, (probs, gamma, beta), vjp)


def _seen_probs_node(disc_map, arch, x_node, segc, cfg, reduced_seen):
    """Softmax over the active classification head for a feature batch."""
    feat = mo.trunk_features(disc_map, arch, x_node)
    if segc:
        if reduced_seen is None:
            raise ValidationError("semantic-guided scoring needs the reduced class table")
        scores = mo.segc_score_node(disc_map["segc.W"], feat, reduced_seen,
                                    cfg.segc_normalized, cfg.eta)
        return dm.softmax_rows(scores), feat
    return dm.softmax_rows(mo.class_logits(disc_map, feat)), feat


def _head_ce_rows(disc_map, arch, feat, onehot, segc, cfg, reduced_seen) -> dm.Node:
    if segc:
        if reduced_seen is None:
            raise ValidationError("semantic-guided scoring needs the reduced class table")
        scores = mo.segc_score_node(disc_map["segc.W"], feat, reduced_seen,
                                    cfg.segc_normalized, cfg.eta)
        return dm.cross_entropy_rows(scores, dm.constant(onehot))
    return dm.cross_entropy_rows(mo.class_logits(disc_map, feat), dm.constant(onehot))


# ---------------------------------------------------------------------------
# creativity loss


def creativity_terms(x_h: dm.Node, disc_map, div_map, arch, disc_meta,
                     cfg: LossConfig, reduced_seen=None) -> dict[str, dm.Node]:
    """The two creativity terms for a batch of hallucinated generations.

    `disc_meta` is the DiscriminatorParams carrying head shape flags; either
    parameter map may hold live nodes or frozen arrays.
    """
    if x_h.value.shape[0] == 0:
        raise ValidationError("empty batch")
    terms: dict[str, dm.Node] = {}
    if cfg.realism_term:
        r = dm.affine_stack(x_h, mo.critic_layers(disc_map, arch), arch.leak)
        terms["creativity_realism"] = dm.neg(dm.vmean(r))
    if cfg.new_class_ablation:
        if not disc_meta.extra_class:
            raise ValidationError("the new-class ablation needs a discriminator "
                                  "built with the extra class logit")
        feat = mo.trunk_features(disc_map, arch, x_h)
        target = np.zeros((x_h.value.shape[0], disc_meta.n_logits))
        target[:, disc_meta.k_seen] = 1.0
        ce = dm.cross_entropy_rows(mo.class_logits(disc_map, feat), dm.constant(target))
        terms["creativity_entropy"] = dm.mul(cfg.lambda_creativity, dm.vmean(ce))
    elif cfg.entropy_term and cfg.lambda_creativity != 0.0:
        # a zero weight contributes exact zeros; skip building the subgraph
        gamma, beta = divergence_param_nodes(cfg.divergence, div_map)
        probs, _ = _seen_probs_node(disc_map, arch, x_h, disc_meta.segc, cfg, reduced_seen)
        rows = divergence_rows_node(probs, gamma, beta, cfg.divergence)
        terms["creativity_entropy"] = dm.mul(
            cfg.lambda_creativity, dm.vmean(dm.minmax_normalize_node(rows))
        )
    return terms


def creativity_loss(disc: mo.DiscriminatorParams, gen: mo.GeneratorParams,
                    t_h_batch, z_batch, cfg: LossConfig, seen_semantics=None) -> float:
    """Plain value of the creativity loss on a hallucinated batch.

    With the semantic-guided head active, the per-class descriptor table
    must be supplied so the seen-class softmax can be scored.
    """
    t_h, z = mo._check_widths(t_h_batch, z_batch, gen.arch)
    x_h = dm.constant(mo.generate(gen, t_h, z))
    reduced_seen = _reduced_table(gen, disc, cfg, seen_semantics)
    terms = creativity_terms(x_h, disc.store, _div_init_map(cfg),
                             gen.arch, disc, cfg, reduced_seen)
    return float(sum(t.value for t in terms.values())) if terms else 0.0


def _div_init_map(cfg: LossConfig) -> dict[str, np.ndarray]:
    return {k: np.asarray(v) for k, v in cfg.divergence.unconstrained_init().items()}


def _reduced_for(gen, table) -> np.ndarray:
    return mo.reduce_semantics(gen, table)


def _reduced_table(gen, disc, cfg, seen_semantics):
    """Reduced per-class descriptors when the semantic-guided head needs
    them, None otherwise."""
    if not disc.segc:
        return None
    if seen_semantics is None:
        raise ValidationError("the semantic-guided head needs the seen-class "
                              "descriptor table (seen_semantics)")
    return _reduced_for(gen, seen_semantics)


# ---------------------------------------------------------------------------
# visual pivot


def visual_pivot_node(gen_map, arch, pivot: PivotInputs) -> dm.Node:
    semantics = dm.as_tensor(pivot.semantics)
    means = dm.as_tensor(pivot.real_means)
    z = dm.as_tensor(pivot.z)
    if semantics.shape[0] != means.shape[0] or z.shape[0] != means.shape[0]:
        raise ValidationError(
            f"pivot needs one descriptor, mean, and noise block per class; "
            f"got {semantics.shape[0]}, {means.shape[0]}, {z.shape[0]}"
        )
    k, n_z, _ = z.shape
    t_rep = np.repeat(semantics, n_z, axis=0)
    out = mo.generator_output(gen_map, arch, dm.constant(t_rep), dm.constant(z.reshape(k * n_z, -1)))
    gen_means = dm.vmean(dm.reshape(out, (k, n_z, arch.visual_dim)), axis=1)
    err = dm.sub(gen_means, dm.constant(means))
    return dm.vmean(dm.vsum(dm.square(err), axis=1))


def visual_pivot(gen: mo.GeneratorParams, seen_semantics, real_class_means, z_batch_per_class) -> float:
    """Average squared distance between per-class generated means and the
    real per-class means."""
    pivot = PivotInputs(dm.as_tensor(seen_semantics), dm.as_tensor(real_class_means),
                        dm.as_tensor(z_batch_per_class))
    return float(visual_pivot_node(gen.store, gen.arch, pivot).value)


# ---------------------------------------------------------------------------
# generator loss


def generator_loss_node(gen_map, div_map, disc: mo.DiscriminatorParams,
                        seen: SeenBatch, hallu: HalluBatch, pivot: PivotInputs,
                        cfg: LossConfig, ucat: UCatBatch | None = None,
                        reduced_seen=None, reduced_ucat=None) -> dict[str, dm.Node]:
    """All generator-side terms; the discriminator map is expected frozen.

    Returns the term dictionary; the full loss is the sum of its values.
    """
    arch = disc.arch
    if len(seen.t) == 0 or len(hallu.t) == 0:
        raise ValidationError("empty batch")
    disc_map = disc.store

    x_h = mo.generator_output(gen_map, arch, dm.constant(hallu.t), dm.constant(hallu.z))
    terms = creativity_terms(x_h, disc_map, div_map, arch, disc, cfg, reduced_seen)

    x_s = mo.generator_output(gen_map, arch, dm.constant(seen.t), dm.constant(seen.z))
    r_s = dm.affine_stack(x_s, mo.critic_layers(disc_map, arch), arch.leak)
    terms["critic_seen"] = dm.neg(dm.vmean(r_s))

    onehot = _onehot(seen.y, disc.n_logits, disc.k_seen)
    feat_s = mo.trunk_features(disc_map, arch, x_s)
    ce = _head_ce_rows(disc_map, arch, feat_s, onehot, disc.segc, cfg, reduced_seen)
    terms["classification"] = dm.vmean(ce)

    terms["visual_pivot"] = visual_pivot_node(gen_map, arch, pivot)

    if cfg.u_categorization:
        if ucat is None:
            raise ValidationError("u_categorization needs a hallucinated-class batch")
        terms["u_categorization"] = hallucinated_categorization_node(
            gen_map, disc, ucat, cfg, reduced_ucat
        )
    return terms


def generator_loss_terms(gen: mo.GeneratorParams, disc: mo.DiscriminatorParams,
                         seen: SeenBatch, hallu: HalluBatch, pivot: PivotInputs,
                         cfg: LossConfig, ucat: UCatBatch | None = None) -> dict[str, float]:
    reduced_seen = _reduced_for(gen, pivot.semantics) if disc.segc else None
    reduced_ucat = _reduced_for(gen, ucat.t) if (ucat is not None and cfg.u_categorization) else None
    div_map = _div_init_map(cfg)
    terms = generator_loss_node(gen.store, div_map, disc, seen, hallu, pivot, cfg,
                                ucat, reduced_seen, reduced_ucat)
    out = {k: float(v.value) for k, v in terms.items()}
    out["total"] = float(sum(out.values()))
    return out


def generator_loss(gen, disc, seen: SeenBatch, hallu: HalluBatch, pivot: PivotInputs,
                   cfg: LossConfig, ucat: UCatBatch | None = None) -> float:
    return generator_loss_terms(gen, disc, seen, hallu, pivot, cfg, ucat)["total"]


# ---------------------------------------------------------------------------
# discriminator loss


def discriminator_loss_node(disc_map, disc: mo.DiscriminatorParams, gen: mo.GeneratorParams,
                            real_x, real_y, seen: SeenBatch, hallu: HalluBatch,
                            x_tilde, cfg: LossConfig, reduced_seen=None,
                            div_values: tuple[float, float] | None = None) -> dict[str, dm.Node]:
    """All discriminator-side terms; generator outputs enter frozen."""
    arch = disc.arch
    real_x = dm.as_tensor(real_x)
    if len(real_x) == 0 or len(seen.t) == 0:
        raise ValidationError("empty batch")
    x_fake = dm.constant(mo.generate(gen, seen.t, seen.z))
    layers = mo.critic_layers(disc_map, arch)

    terms: dict[str, dm.Node] = {}
    terms["critic_fake"] = dm.vmean(dm.affine_stack(x_fake, layers, arch.leak))
    terms["critic_real"] = dm.neg(dm.vmean(dm.affine_stack(dm.constant(real_x), layers, arch.leak)))
    terms["gradient_penalty"] = dm.lipschitz_penalty_node(dm.constant(x_tilde), layers, arch.leak)

    onehot_real = _onehot(real_y, disc.n_logits, disc.k_seen)
    onehot_fake = _onehot(seen.y, disc.n_logits, disc.k_seen)
    feat_real = mo.trunk_features(disc_map, arch, dm.constant(real_x))
    feat_fake = mo.trunk_features(disc_map, arch, x_fake)
    ce_real = _head_ce_rows(disc_map, arch, feat_real, onehot_real, disc.segc, cfg, reduced_seen)
    ce_fake = _head_ce_rows(disc_map, arch, feat_fake, onehot_fake, disc.segc, cfg, reduced_seen)
    terms["cls_real"] = dm.mul(0.5, dm.vmean(ce_real))
    terms["cls_fake"] = dm.mul(0.5, dm.vmean(ce_fake))

    if cfg.rf_hallucinated or cfg.creativity_on_discriminator:
        x_h = dm.constant(mo.generate(gen, hallu.t, hallu.z))
        if cfg.rf_hallucinated:
            # hallucinated generations are pushed down as fakes
            terms["critic_hallucinated"] = dm.vmean(dm.affine_stack(x_h, layers, arch.leak))
        if cfg.creativity_on_discriminator:
            # the entropy parameters only learn through the generator loss
            if div_values is None:
                div_values = current_divergence_params(cfg.divergence, _div_init_map(cfg))
            gamma, beta = dm.constant(div_values[0]), dm.constant(div_values[1])
            probs, _ = _seen_probs_node(disc_map, arch, x_h, disc.segc, cfg, reduced_seen)
            rows = divergence_rows_node(probs, gamma, beta, cfg.divergence)
            terms["entropy_on_disc"] = dm.mul(
                cfg.lambda_creativity, dm.vmean(dm.minmax_normalize_node(rows))
            )
    return terms


def discriminator_loss_terms(disc: mo.DiscriminatorParams, gen: mo.GeneratorParams,
                             real_x, real_y, seen: SeenBatch, hallu: HalluBatch,
                             cfg: LossConfig, rng: np.random.Generator,
                             x_tilde=None, seen_semantics=None) -> dict[str, float]:
    if x_tilde is None:
        x_fake = mo.generate(gen, seen.t, seen.z)
        x_tilde = lipschitz_interpolate(real_x, x_fake, rng)
    reduced_seen = _reduced_table(gen, disc, cfg, seen_semantics)
    terms = discriminator_loss_node(disc.store, disc, gen, real_x, real_y, seen,
                                    hallu, x_tilde, cfg, reduced_seen)
    out = {k: float(v.value) for k, v in terms.items()}
    out["total"] = float(sum(out.values()))
    return out


def discriminator_loss(disc, gen, real_x, real_y, seen: SeenBatch, hallu: HalluBatch,
                       cfg: LossConfig, rng: np.random.Generator, x_tilde=None,
                       seen_semantics=None) -> float:
    return discriminator_loss_terms(disc, gen, real_x, real_y, seen, hallu, cfg,
                                    rng, x_tilde, seen_semantics)["total"]


# ---------------------------------------------------------------------------
# semantic-guided categorization losses


def segc_categorizer_loss(disc: mo.DiscriminatorParams, features, labels,
                          reduced_semantics, cfg: LossConfig) -> float:
    """Cross-entropy of the semantic softmax over compatibility scores."""
    if not cfg.segc_active or not disc.segc:
        raise ValidationError("semantic-guided head is not active")
    features = dm.as_tensor(np.atleast_2d(features))
    reduced = dm.as_tensor(np.atleast_2d(reduced_semantics))
    onehot = _onehot(labels, reduced.shape[0], reduced.shape[0])
    scores = mo.segc_score_node(dm.constant(disc.store["segc.W"]), dm.constant(features),
                                reduced, cfg.segc_normalized, cfg.eta)
    return float(dm.vmean(dm.cross_entropy_rows(scores, dm.constant(onehot))).value)


def hallucinated_categorization_node(gen_map, disc: mo.DiscriminatorParams,
                                     ucat: UCatBatch, cfg: LossConfig,
                                     reduced_ucat) -> dm.Node:
    k_u = len(ucat.t)
    if k_u < 2:
        raise ValidationError("need at least 2 hallucinated classes")
    x_u = mo.generator_output(gen_map, disc.arch, dm.constant(ucat.t), dm.constant(ucat.z))
    feat = mo.trunk_features(disc.store, disc.arch, x_u)
    scores = mo.segc_score_node(disc.store["segc.W"], feat, reduced_ucat,
                                cfg.segc_normalized, cfg.eta)
    return dm.vmean(dm.cross_entropy_rows(scores, dm.constant(np.eye(k_u))))


def hallucinated_categorization_loss(disc: mo.DiscriminatorParams, gen: mo.GeneratorParams,
                                     hallucinated_descriptors, z, cfg: LossConfig) -> float:
    """Semantic softmax over one generation per hallucinated descriptor,
    scored against the descriptors themselves (the sample's own index is the
    target). Reuses the semantic-guided projection; no extra weights."""
    if not cfg.u_categorization:
        raise ValidationError("u_categorization is not enabled")
    t_u = dm.as_tensor(np.atleast_2d(hallucinated_descriptors))
    ucat = UCatBatch(t_u, dm.as_tensor(z))
    reduced = _reduced_for(gen, t_u)
    return float(hallucinated_categorization_node(gen.store, disc, ucat, cfg, reduced).value)
