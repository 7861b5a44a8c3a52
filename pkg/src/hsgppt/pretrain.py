"""Contrastive pre-training of one encoder per spectral filter.

Each filter view g_k(L) X is passed through its own linear+PReLU encoder.
The per-filter embeddings are integrated with a column-wise softmax over
learnable mixing weights, mean-pooled into a graph summary, and a bilinear
discriminator is trained to tell true node embeddings from embeddings of
row-permuted features. Loss is the mean binary cross-entropy over all
(filter, node) pairs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .graph import Graph, corrupt_features, laplacian
from .nn import (
    Adam,
    BilinearDiscriminator,
    LinearLayer,
    NumericError,
    Param,
    bce_pair_loss,
    pack_arrays,
    softmax_over_filters,
    softmax_over_filters_vjp,
    unpack_arrays,
)
from .spectral import FilterBank, beta_filter_apply

CHECKPOINT_MAGIC = b"HSGPNET1"


def derive_seed(*parts) -> int:
    """Deterministic child seed from a tuple of integers."""
    return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1, dtype=np.uint64)[0] >> 1)


@dataclass(frozen=True)
class PretrainConfig:
    order: int = 2
    hidden_dim: int = 64
    lr: float = 1e-3
    epochs: int = 500
    patience: int = 50
    seed: int = 0
    filters: tuple | None = None  # bank override; None = all order+1 kernels

    def bank(self) -> FilterBank:
        if self.filters is not None:
            return FilterBank(tuple(tuple(f) for f in self.filters))
        return FilterBank.full(self.order)


class PretrainedModel:
    """Filter bank plus per-filter encoders, mixing weights, discriminator."""

    def __init__(self, bank: FilterBank, feature_dim: int, hidden_dim: int, seed: int = 0):
        rng = np.random.default_rng(derive_seed(seed, 0))
        self.bank = bank
        self.feature_dim = feature_dim
        self.hidden_dim = hidden_dim
        self.encoders = [
            LinearLayer(feature_dim, hidden_dim, rng, activation="prelu", prefix=f"enc{i}")
            for i in range(bank.size)
        ]
        # zero init makes the initial integration exactly uniform
        self.mix = Param(np.zeros((bank.size, hidden_dim)), "mix")
        self.discriminator = BilinearDiscriminator(hidden_dim, rng)

    def params(self):
        out = []
        for enc in self.encoders:
            out.extend(enc.params())
        out.append(self.mix)
        out.extend(self.discriminator.params())
        return out

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self.params())


@dataclass
class Encoded:
    per_filter: list  # (n, hidden) per bank entry
    integrated: np.ndarray  # (n, hidden)
    summary: np.ndarray  # (hidden,)


def filtered_views(L, bank: FilterBank, features: np.ndarray) -> list:
    """The bank's filtered feature matrices, computed once and reused."""
    return [beta_filter_apply(L, k, r, features) for k, r in bank.filters]


def encode(g: Graph, model: PretrainedModel, filtered=None) -> Encoded:
    """Forward pass on a graph (or on precomputed filtered views)."""
    if filtered is None:
        filtered = filtered_views(laplacian(g, "normalized"), model.bank, g.features)
    per_filter = [enc.apply(h, accumulate=False)[0] for enc, h in zip(model.encoders, filtered)]
    weights = softmax_over_filters(model.mix.value)
    integrated = np.zeros_like(per_filter[0])
    for a_k, z_k in zip(weights, per_filter):
        integrated += a_k[None, :] * z_k
    return Encoded(per_filter=per_filter, integrated=integrated, summary=integrated.mean(axis=0))


def _forward_scores(model, filtered_pos, filtered_neg, want_grads):
    """Shared forward (and optional backward) over both corruption branches."""
    n = filtered_pos[0].shape[0]
    n_filters = model.bank.size
    m_pairs = n_filters * n

    pos_out, neg_out = [], []
    for enc, hp, hn in zip(model.encoders, filtered_pos, filtered_neg):
        pos_out.append(enc.apply(hp, accumulate=want_grads))
        neg_out.append(enc.apply(hn, accumulate=want_grads))
    weights = softmax_over_filters(model.mix.value)
    integrated = np.zeros_like(pos_out[0][0])
    for a_k, (z_k, _) in zip(weights, pos_out):
        integrated += a_k[None, :] * z_k
    summary = integrated.mean(axis=0)

    score_vjps = []
    pos_scores, neg_scores = [], []
    for (zp, _), (zn, _) in zip(pos_out, neg_out):
        sp_, vjp_p = model.discriminator.apply(zp, summary, accumulate=want_grads)
        sn_, vjp_n = model.discriminator.apply(zn, summary, accumulate=want_grads)
        pos_scores.append(sp_)
        neg_scores.append(sn_)
        score_vjps.append((vjp_p, vjp_n))
    loss = bce_pair_loss(np.concatenate(pos_scores), np.concatenate(neg_scores))
    if not want_grads:
        return loss

    dsummary = np.zeros_like(summary)
    dz_pos = [None] * n_filters
    dz_neg = [None] * n_filters
    for i, ((vjp_p, vjp_n), sp_, sn_) in enumerate(zip(score_vjps, pos_scores, neg_scores)):
        # d/dpre of -log sigmoid and -log(1 - sigmoid), averaged over pairs
        dz, ds = vjp_p((sp_ - 1.0) / m_pairs)
        dz_pos[i] = dz
        dsummary += ds
        dz, ds = vjp_n(sn_ / m_pairs)
        dz_neg[i] = dz
        dsummary += ds

    dintegrated = np.broadcast_to(dsummary / n, integrated.shape)
    dweights = np.empty_like(weights)
    for i, (z_k, _) in enumerate(pos_out):
        dweights[i] = np.einsum("ij,ij->j", dintegrated, z_k)
        dz_pos[i] = dz_pos[i] + weights[i][None, :] * dintegrated
    model.mix.grad += softmax_over_filters_vjp(weights, dweights)
    for (z_p, vjp_p), (z_n, vjp_n), dp, dn in zip(pos_out, neg_out, dz_pos, dz_neg):
        vjp_p(dp)
        vjp_n(dn)
    return loss


def pretrain_loss(model: PretrainedModel, g: Graph, corrupted: np.ndarray) -> float:
    """Contrastive loss value for a given corruption (no gradients)."""
    L = laplacian(g, "normalized")
    pos = filtered_views(L, model.bank, g.features)
    neg = filtered_views(L, model.bank, corrupted)
    return _forward_scores(model, pos, neg, want_grads=False)


def contrastive_loss_fn(model: PretrainedModel, g: Graph, corrupted: np.ndarray):
    """Closure for gradient checking: one fixed corruption, grads populated."""
    L = laplacian(g, "normalized")
    pos = filtered_views(L, model.bank, g.features)
    neg = filtered_views(L, model.bank, corrupted)
    params = model.params()

    def loss_fn():
        for p in params:
            p.zero_grad()
        return _forward_scores(model, pos, neg, want_grads=True)

    return loss_fn


def pretrain(g: Graph, cfg: PretrainConfig):
    """Train a model on one graph; returns (model at best epoch, history).

    A fresh row permutation of the features is drawn every epoch. Early
    stopping tracks the best training loss with the configured patience.
    """
    bank = cfg.bank()
    model = PretrainedModel(bank, g.feature_dim, cfg.hidden_dim, seed=cfg.seed)
    L = laplacian(g, "normalized")
    pos = filtered_views(L, bank, g.features)  # constant across epochs
    opt = Adam(model.params(), lr=cfg.lr)
    history = []
    best_loss = np.inf
    best_epoch = -1
    best_state = None
    for epoch in range(cfg.epochs):
        corrupted = corrupt_features(g, seed=derive_seed(cfg.seed, 1, epoch))
        neg = filtered_views(L, bank, corrupted)
        for p in model.params():
            p.zero_grad()
        loss = _forward_scores(model, pos, neg, want_grads=True)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite pre-training loss at epoch {epoch}")
        history.append(float(loss))
        if loss < best_loss:
            best_loss = loss
            best_epoch = epoch
            best_state = [p.value.copy() for p in model.params()]
        opt.step()
        if epoch - best_epoch >= cfg.patience:
            break
    if best_state is not None:
        for p, v in zip(model.params(), best_state):
            p.value[...] = v
    return model, history


# ---------------------------------------------------------------------------
# persistence, hashing, freezing
# ---------------------------------------------------------------------------


def _named_values(model: PretrainedModel):
    return [(p.name, p.value) for p in model.params()]


def model_bytes(model: PretrainedModel) -> bytes:
    meta = [model.feature_dim, model.hidden_dim, model.bank.size]
    for k, r in model.bank.filters:
        meta.extend([k, r])
    return pack_arrays(CHECKPOINT_MAGIC, meta, _named_values(model))


def content_hash(model: PretrainedModel) -> str:
    return hashlib.sha256(model_bytes(model)).hexdigest()


def save_model(model: PretrainedModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_bytes(model))


def load_model(path) -> PretrainedModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    return model_from_bytes(blob)


def model_from_bytes(blob: bytes) -> PretrainedModel:
    meta, _, arrays = unpack_arrays(blob, CHECKPOINT_MAGIC)
    feature_dim, hidden_dim, n_filters = meta[0], meta[1], meta[2]
    pairs = tuple((meta[3 + 2 * i], meta[4 + 2 * i]) for i in range(n_filters))
    model = PretrainedModel(FilterBank(pairs), feature_dim, hidden_dim, seed=0)
    by_name = dict(arrays)
    for p in model.params():
        if p.name not in by_name:
            raise ValueError(f"checkpoint missing parameter {p.name}")
        arr = by_name[p.name]
        if arr.shape != p.value.shape:
            raise ValueError(f"shape mismatch for {p.name}")
        p.value[...] = arr
    return model


@dataclass
class FrozenModel:
    """Backbone with locked parameter arrays and a recorded content hash."""

    model: PretrainedModel
    content_hash: str = field(default="")

    def __post_init__(self):
        for p in self.model.params():
            p.value.setflags(write=False)
        if not self.content_hash:
            self.content_hash = content_hash(self.model)

    def rehash(self) -> str:
        return content_hash(self.model)

    def verify(self):
        now = self.rehash()
        if now != self.content_hash:
            raise NumericError(
                f"frozen backbone changed: {self.content_hash[:12]} -> {now[:12]}"
            )


def freeze(model: PretrainedModel) -> FrozenModel:
    """Detached, immutable copy of the model plus its content hash."""
    clone = model_from_bytes(model_bytes(model))
    return FrozenModel(model=clone)
