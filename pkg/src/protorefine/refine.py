"""Iterative transductive prototype refinement.

Each iteration scores the query ensemble against the current prototypes,
turns ensemble disagreement into per-instance weights, and rebuilds each
prototype as the support sum plus the weighted query sum over the weight
mass. Query-side weights always come from the query (plus unlabeled) token
set; support instances pass through the same machinery separately when their
weight vectors are needed for the regularization loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment import apply_batch
from .autodiff import ParamSet, Tensor, concat, softmax
from .layers import Linear
from .metric import classify
from .uncertainty import average_scores, mutual_information


class AttentionWeightGenerator:
    """Set-to-set weight head: scalar uncertainties -> (0, 1) weights.

    Tokens are linearly embedded, mixed by one multi-head attention block
    with a residual connection, then squashed per token. No positional
    encoding, so the map is permutation-equivariant and length-agnostic.
    """

    def __init__(self, params: ParamSet, embed_dim: int = 128, heads: int = 4,
                 rng: np.random.Generator | None = None, prefix: str = "weightgen"):
        if embed_dim % heads != 0:
            raise ValueError(f"embed_dim {embed_dim} not divisible by heads {heads}")
        rng = rng or np.random.default_rng(0)
        self.embed_dim = int(embed_dim)
        self.heads = int(heads)
        self.head_dim = embed_dim // heads
        self.embed = Linear(params, f"{prefix}.embed", 1, embed_dim, rng)
        self.wq = Linear(params, f"{prefix}.wq", embed_dim, embed_dim, rng)
        self.wk = Linear(params, f"{prefix}.wk", embed_dim, embed_dim, rng)
        self.wv = Linear(params, f"{prefix}.wv", embed_dim, embed_dim, rng)
        self.wo = Linear(params, f"{prefix}.wo", embed_dim, embed_dim, rng)
        self.out = Linear(params, f"{prefix}.out", embed_dim, 1, rng,
                          w_scale=0.01 / np.sqrt(embed_dim), b_init=0.0)

    def __call__(self, mi: Tensor) -> Tensor:
        if mi.ndim != 1:
            raise ValueError(f"weight generator expects (q,), got {mi.shape}")
        n = mi.shape[0]
        x = self.embed(mi.reshape(n, 1))
        q, k, v = self.wq(x), self.wk(x), self.wv(x)
        scale = 1.0 / np.sqrt(self.head_dim)
        mixed = []
        for h in range(self.heads):
            sl = slice(h * self.head_dim, (h + 1) * self.head_dim)
            attn = softmax((q[:, sl] @ k[:, sl].T) * scale, axis=-1)
            mixed.append(attn @ v[:, sl])
        y = self.wo(concat(mixed, axis=1)) + x
        return self.out(y).sigmoid().reshape(n)


class MlpWeightGenerator:
    """Per-token head: 1 -> hidden -> hidden -> 1 with a sigmoid output."""

    def __init__(self, params: ParamSet, hidden: tuple = (128, 128),
                 rng: np.random.Generator | None = None, prefix: str = "weightgen"):
        if len(hidden) != 2:
            raise ValueError(f"mlp weight generator needs two hidden sizes, got {hidden}")
        rng = rng or np.random.default_rng(0)
        self.l1 = Linear(params, f"{prefix}.l1", 1, hidden[0], rng)
        self.l2 = Linear(params, f"{prefix}.l2", hidden[0], hidden[1], rng)
        self.l3 = Linear(params, f"{prefix}.l3", hidden[1], 1, rng,
                         w_scale=0.01 / np.sqrt(hidden[1]), b_init=0.0)

    def __call__(self, mi: Tensor) -> Tensor:
        if mi.ndim != 1:
            raise ValueError(f"weight generator expects (q,), got {mi.shape}")
        n = mi.shape[0]
        x = mi.reshape(n, 1)
        return self.l3(self.l2(self.l1(x).relu()).relu()).sigmoid().reshape(n)


# ----------------------------------------------------------------------
# prototype algebra


def initial_prototypes(support_features: Tensor) -> Tensor:
    """Mean over shots and ensemble members: (N, K, m, d) -> (N, d)."""
    if support_features.ndim != 4:
        raise ValueError(f"support features must be (N, K, m, d), got {support_features.shape}")
    k_shot = support_features.shape[1]
    return support_features.mean(axis=2).sum(axis=1) / float(k_shot)


def generate_weights(h: Tensor, avg_scores: Tensor) -> Tensor:
    """Per-class weights: w[i, j] = h[j] * avg_scores[j, i], shape (N, q)."""
    if h.ndim != 1 or avg_scores.ndim != 2 or h.shape[0] != avg_scores.shape[0]:
        raise ValueError(
            f"incompatible shapes h={h.shape} avg_scores={avg_scores.shape}")
    return (h.reshape(-1, 1) * avg_scores).T


def update_prototypes(support_features: Tensor, query_features: Tensor,
                      weights: Tensor) -> Tensor:
    """Weighted prototype rebuild.

    c_i = (sum_j mean_k sup[i,j,k] + sum_j w[i,j] * query[j]) / (K + sum_j w[i,j])

    With all-zero weights this reproduces initial_prototypes bit for bit.
    """
    if support_features.ndim != 4:
        raise ValueError(f"support features must be (N, K, m, d), got {support_features.shape}")
    n, k_shot = support_features.shape[0], support_features.shape[1]
    if weights.ndim != 2 or weights.shape[0] != n:
        raise ValueError(f"weights must be ({n}, q), got {weights.shape}")
    if query_features.ndim != 2 or query_features.shape[0] != weights.shape[1]:
        raise ValueError(
            f"query features {query_features.shape} incompatible with weights {weights.shape}")
    if np.any(weights.data < -1e-12) or np.any(weights.data > 1.0 + 1e-12):
        raise ValueError("weights must lie in [0, 1]")
    support_sum = support_features.mean(axis=2).sum(axis=1)      # (N, d)
    weighted_queries = weights @ query_features                   # (N, d)
    denom = weights.sum(axis=1, keepdims=True) + float(k_shot)    # (N, 1)
    return (support_sum + weighted_queries) / denom


# ----------------------------------------------------------------------
# episode refinement


@dataclass
class RefineResult:
    prototypes: Tensor                 # (N, d) after the last iteration
    scores: Tensor                     # (q_tot, m, N) final pass vs final prototypes
    a0_scores: Tensor                  # (q_tot, N) unaugmented-member slice
    support_weights: Tensor | None     # (N*K, N) weight vectors at iteration T
    prototype_history: list = field(default_factory=list)  # c^0 .. c^T arrays
    mi_history: list = field(default_factory=list)         # (q_tot,) per iteration
    weight_history: list = field(default_factory=list)     # (N, q_tot) per iteration
    n_query: int = 0                   # true queries; rows beyond are unlabeled
    n_unlabeled_used: int = 0

    def trajectory(self) -> dict:
        """JSON-ready dump of the refinement trajectory."""
        return {
            "prototypes": [p.tolist() for p in self.prototype_history],
            "mutual_information": [m.tolist() for m in self.mi_history],
            "weights": [w.tolist() for w in self.weight_history],
            "n_query": self.n_query,
            "n_unlabeled": self.n_unlabeled_used,
        }


def _iteration_seed(episode_seed: int, t: int) -> int:
    return int(np.random.SeedSequence((int(episode_seed), int(t))).generate_state(1)[0])


def refine_episode(model, episode, *, iterations: int | None = None,
                   pipeline=None, use_unlabeled: bool = False,
                   collect_support_weights: bool = False) -> RefineResult:
    """Run T refinement iterations on one episode.

    The support ensemble is augmented once and reused; query ensemble members
    beyond the identity get fresh augmentation draws each iteration. Scores at
    iteration t are taken against the previous prototypes; after the loop one
    final pass scores the ensemble against the last prototypes for prediction
    and the classification loss. T=0 skips the loop (inductive shortcut).

    Labels never enter this function's computation; only payloads and ids do.
    """
    ops = model.build_pipeline(pipeline) if pipeline is not None else model.pipeline
    t_max = model.config.iterations if iterations is None else int(iterations)
    if t_max < 0:
        raise ValueError(f"iterations must be >= 0, got {t_max}")
    mode = model.config.mode
    encoder = model.encoder

    n_way, k_shot = episode.n_way, episode.k_shot
    payload_shape = episode.support.shape[2:]
    d = encoder.out_dim
    m = len(ops)

    query_payloads = episode.query
    query_ids = episode.query_ids
    n_unlabeled_used = 0
    if use_unlabeled and episode.n_unlabeled > 0:
        query_payloads = np.concatenate([query_payloads, episode.unlabeled])
        query_ids = np.concatenate([query_ids, episode.unlabeled_ids])
        n_unlabeled_used = episode.n_unlabeled
    q_tot = query_payloads.shape[0]

    # support ensemble: one augmentation pass in the t=0 namespace
    sup_flat = episode.support.reshape(n_way * k_shot, *payload_shape)
    sup_ids = episode.support_ids.reshape(n_way * k_shot)
    seed0 = _iteration_seed(episode.seed, 0)
    sup_aug = np.stack([apply_batch(op, sup_flat, sup_ids, mode, seed0) for op in ops],
                       axis=1)
    sup_feats = encoder.encode(
        sup_aug.reshape(n_way * k_shot * m, *payload_shape)).reshape(n_way, k_shot, m, d)
    sup_feats_flat = sup_feats.reshape(n_way * k_shot, m, d)

    a0_feats = encoder.encode(query_payloads)  # (q_tot, d), reused every iteration

    def query_ensemble(t: int) -> Tensor:
        if m == 1:
            return a0_feats.reshape(q_tot, 1, d)
        seed_t = _iteration_seed(episode.seed, t)
        members = np.stack(
            [apply_batch(op, query_payloads, query_ids, mode, seed_t) for op in ops[1:]],
            axis=1)  # (q_tot, m-1, *payload_shape)
        member_feats = encoder.encode(
            members.reshape(q_tot * (m - 1), *payload_shape)).reshape(q_tot, m - 1, d)
        return concat([a0_feats.reshape(q_tot, 1, d), member_feats], axis=1)

    def support_weight_vectors(current_protos: Tensor) -> Tensor:
        s_scores = classify(sup_feats_flat, current_protos, model.temperature)
        s_avg = average_scores(s_scores, check=False)
        if model.weight_gen is None:
            return s_avg
        h_s = model.weight_gen(mutual_information(s_scores, check=False))
        return h_s.reshape(-1, 1) * s_avg

    protos = initial_prototypes(sup_feats)
    prototype_history = [protos.data.copy()]
    mi_history: list[np.ndarray] = []
    weight_history: list[np.ndarray] = []
    support_weights: Tensor | None = None

    for t in range(1, t_max + 1):
        scores = classify(query_ensemble(t), protos, model.temperature)
        avg = average_scores(scores, check=False)
        mi = mutual_information(scores, check=False)
        if model.weight_gen is not None:
            weights = generate_weights(model.weight_gen(mi), avg)
        else:
            weights = avg.T
        mi_history.append(mi.data.copy())
        weight_history.append(weights.data.copy())
        if collect_support_weights and t == t_max:
            support_weights = support_weight_vectors(protos)
        protos = update_prototypes(sup_feats, a0_feats, weights)
        prototype_history.append(protos.data.copy())

    final_scores = classify(query_ensemble(t_max + 1), protos, model.temperature)
    if collect_support_weights and t_max == 0:
        support_weights = support_weight_vectors(protos)

    return RefineResult(
        prototypes=protos,
        scores=final_scores,
        a0_scores=final_scores[:, 0, :],
        support_weights=support_weights,
        prototype_history=prototype_history,
        mi_history=mi_history,
        weight_history=weight_history,
        n_query=episode.n_query,
        n_unlabeled_used=n_unlabeled_used,
    )


def refine_with_unlabeled(model, episode, **kwargs) -> RefineResult:
    """Refinement with the episode's unlabeled pool joined to the query set.

    With an empty pool this is identical to refine_episode.
    """
    return refine_episode(model, episode, use_unlabeled=True, **kwargs)
