"""Prompt graphs grafted onto a frozen backbone for few-shot tuning.

Each filter view receives a small trainable prompt graph: N_p feature rows
that are (by default) re-standardized per column to the original graph's
feature statistics, wired to each other and to original nodes by sigmoid
dot-product thresholds, and inserted before filtering. Only prompt features
and a linear task head train; gradients reach the prompts through the
filtered features and the normalization, never through the binary edge
indicators (piecewise constant by construction). Edge sets are rebuilt from
the current prompts at the start of every epoch and held fixed within it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .graph import DatasetSplit, Graph, edge_homophily, laplacian_from_edges
from .nn import (
    Adam,
    LinearLayer,
    NumericError,
    Param,
    pack_arrays,
    sigmoid,
    softmax_cross_entropy,
    softmax_over_filters,
    unpack_arrays,
)
from .pretrain import FrozenModel, derive_seed
from .spectral import beta_filter_apply

STATE_MAGIC = b"HSGPPRM1"

SIGMA_FLOOR = 1e-8

TAU_CROSS_HOMOPHILIC = 0.55
TAU_CROSS_HETEROPHILIC = 0.40


def default_tau_cross(homophily: float) -> float:
    return TAU_CROSS_HOMOPHILIC if homophily >= 0.5 else TAU_CROSS_HETEROPHILIC


@dataclass(frozen=True)
class TuneConfig:
    n_prompt: int = 10
    tau_inner: float = 0.2
    tau_cross: float | None = None  # None: pick by the graph's edge homophily
    lr: float = 5e-3
    epochs: int = 2000
    eval_every: int = 10
    seed: int = 0
    shared_prompt: bool = False
    normalize: bool = True


@dataclass(frozen=True)
class VariantSpec:
    """Knobs one ablation flips relative to the full model."""

    name: str
    low_pass_bank: bool = False  # pre-train on the single low-pass kernel
    shared_prompt: bool = False
    n_prompt: int | None = None
    normalize: bool = True


ABLATION_VARIANTS = ("full", "low_pass_only", "single_prompt", "no_prompt", "no_prompt_norm")


def make_ablation(variant: str) -> VariantSpec:
    if variant == "full":
        return VariantSpec(name=variant)
    if variant == "low_pass_only":
        return VariantSpec(name=variant, low_pass_bank=True)
    if variant == "single_prompt":
        return VariantSpec(name=variant, shared_prompt=True)
    if variant == "no_prompt":
        return VariantSpec(name=variant, n_prompt=0)
    if variant == "no_prompt_norm":
        return VariantSpec(name=variant, normalize=False)
    raise ValueError(f"unknown ablation variant: {variant!r}")


@dataclass
class PromptGraph:
    features: Param  # (n_prompt, feature_dim)
    tau_inner: float
    tau_cross: float

    @property
    def n_prompt(self) -> int:
        return self.features.value.shape[0]


@dataclass
class PromptState:
    prompts: tuple  # one PromptGraph per filter, or a single shared one
    head: LinearLayer
    shared: bool
    normalize: bool

    def tunable_params(self):
        out = [p.features for p in self.prompts]
        out.extend(self.head.params())
        return out

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self.tunable_params())

    def prompt_for_filter(self, k: int) -> PromptGraph:
        return self.prompts[0] if self.shared else self.prompts[k]


def feature_stats(X: np.ndarray):
    """Per-column mean and population standard deviation."""
    return X.mean(axis=0), X.std(axis=0)


def normalize_prompt(P: np.ndarray, mu_o: np.ndarray, sigma_o: np.ndarray):
    """Re-standardize prompt columns to the original feature statistics.

    out = (P - mean(P)) / max(std(P), 1e-8) * sigma_o + mu_o, column-wise.
    Returns (out, vjp); the vjp differentiates through the prompt's own mean
    and std (the floor branch contributes zero gradient through std).
    """
    P = np.asarray(P, dtype=np.float64)
    n = P.shape[0]
    m = P.mean(axis=0)
    s = P.std(axis=0)
    s_t = np.maximum(s, SIGMA_FLOOR)
    a = sigma_o / s_t
    centered = P - m
    out = a * centered + mu_o

    def vjp(g):
        g = np.asarray(g, dtype=np.float64)
        core = a * (g - g.mean(axis=0))
        active = s > SIGMA_FLOOR
        coef = np.zeros_like(s)
        t = np.einsum("ij,ij->j", g, centered)
        coef[active] = sigma_o[active] / s_t[active] ** 2 * t[active] / (n * s[active])
        return core - coef * centered

    return out, vjp


def build_inner_edges(P: np.ndarray, tau: float) -> np.ndarray:
    """Prompt-local pairs (i, j), i < j, with sigmoid(p_i . p_j) > tau."""
    n = P.shape[0]
    if n < 2:
        return np.empty((0, 2), dtype=np.int64)
    iu, ju = np.triu_indices(n, k=1)
    keep = sigmoid(np.einsum("ij,ij->i", P[iu], P[ju])) > tau
    return np.stack([iu[keep], ju[keep]], axis=1).astype(np.int64)


def build_cross_edges(P: np.ndarray, X: np.ndarray, tau: float) -> np.ndarray:
    """(prompt index, node index) pairs with sigmoid(p_i . x_j) > tau."""
    if P.shape[0] == 0:
        return np.empty((0, 2), dtype=np.int64)
    scores = sigmoid(P @ X.T)
    pi, xj = np.nonzero(scores > tau)
    return np.stack([pi, xj], axis=1).astype(np.int64)


@dataclass
class PromptedGraph:
    """A base graph with prompt nodes appended at indices N .. N+N_p-1."""

    base: Graph
    prompt_features: np.ndarray  # values actually inserted (post-normalization)
    inner_edges: np.ndarray  # prompt-local (i, j), i < j
    cross_edges: np.ndarray  # (prompt index, original node index)

    @property
    def n_total(self) -> int:
        return self.base.n_nodes + self.prompt_features.shape[0]

    @property
    def features(self) -> np.ndarray:
        return np.vstack([self.base.features, self.prompt_features])

    def combined_edges(self) -> np.ndarray:
        n = self.base.n_nodes
        parts = [self.base.edges]
        if self.inner_edges.size:
            parts.append(self.inner_edges + n)
        if self.cross_edges.size:
            # original node index is always the smaller endpoint
            parts.append(
                np.stack([self.cross_edges[:, 1], self.cross_edges[:, 0] + n], axis=1)
            )
        return np.concatenate(parts, axis=0)

    def laplacian(self, kind: str = "normalized"):
        return laplacian_from_edges(self.combined_edges(), self.n_total, kind)


def insert_prompt(
    g: Graph, prompt_features: np.ndarray, tau_inner: float, tau_cross: float
) -> PromptedGraph:
    """Wire already-prepared prompt rows into the graph by both thresholds."""
    P = np.asarray(prompt_features, dtype=np.float64)
    if P.ndim != 2 or (P.size and P.shape[1] != g.feature_dim):
        raise ValueError("prompt features must be (n_prompt, feature_dim)")
    return PromptedGraph(
        base=g,
        prompt_features=P,
        inner_edges=build_inner_edges(P, tau_inner),
        cross_edges=build_cross_edges(P, g.features, tau_cross),
    )


class _Branch:
    """Per-filter inserted graph plus the pieces backward needs."""

    __slots__ = ("features", "lap", "norm_vjp", "param", "prompted")

    def __init__(self, features, lap, norm_vjp, param, prompted):
        self.features = features
        self.lap = lap
        self.norm_vjp = norm_vjp
        self.param = param
        self.prompted = prompted


def _build_branch(g: Graph, prompt: PromptGraph, normalize: bool, stats, fixed_lap=None) -> _Branch:
    P = prompt.features.value
    norm_vjp = None
    if P.shape[0] and normalize:
        mu_o, sigma_o = stats
        P_in, norm_vjp = normalize_prompt(P, mu_o, sigma_o)
    else:
        P_in = P
    if fixed_lap is not None:
        # edge structure held constant (gradient checking): only features move
        return _Branch(
            features=np.vstack([g.features, P_in]),
            lap=fixed_lap,
            norm_vjp=norm_vjp,
            param=prompt.features,
            prompted=None,
        )
    pg = insert_prompt(g, P_in, prompt.tau_inner, prompt.tau_cross)
    return _Branch(
        features=pg.features,
        lap=pg.laplacian("normalized"),
        norm_vjp=norm_vjp,
        param=prompt.features,
        prompted=pg,
    )


def _build_branches(g: Graph, state: PromptState, n_filters: int, fixed_laps=None):
    stats = feature_stats(g.features)
    if state.shared:
        lap = fixed_laps[0] if fixed_laps is not None else None
        b = _build_branch(g, state.prompts[0], state.normalize, stats, fixed_lap=lap)
        return [b] * n_filters
    return [
        _build_branch(
            g,
            state.prompts[k],
            state.normalize,
            stats,
            fixed_lap=fixed_laps[k] if fixed_laps is not None else None,
        )
        for k in range(n_filters)
    ]


def tuning_loss_fn(g: Graph, frozen: FrozenModel, state: PromptState, shots):
    """Closure for gradient checking: edge sets frozen at the current prompts.

    The returned callable zeroes grads, reruns normalization and the forward
    pass with the captured Laplacians, backpropagates, and returns the loss.
    """
    n_filters = frozen.model.bank.size
    laps = [b.lap for b in _build_branches(g, state, n_filters)]
    params = state.tunable_params()

    def loss_fn():
        for p in params:
            p.zero_grad()
        branches = _build_branches(g, state, n_filters, fixed_laps=laps)
        _, logits, backward = _forward(g, frozen, state, branches, train=True)
        loss, dlogits = softmax_cross_entropy(logits, g.labels, shots)
        backward(dlogits)
        return loss

    return loss_fn


def _forward(g: Graph, frozen: FrozenModel, state: PromptState, branches, train: bool):
    """Integrated embeddings and logits for original nodes.

    Returns (integrated, logits, backward) where backward(dlogits) sends
    gradients into the prompt features and the head.
    """
    model = frozen.model
    n = g.n_nodes
    weights = softmax_over_filters(model.mix.value)
    integrated = np.zeros((n, model.hidden_dim))
    tapes = []
    for k, ((kk, rr), enc) in enumerate(zip(model.bank.filters, model.encoders)):
        br = branches[k]
        filt = beta_filter_apply(br.lap, kk, rr, br.features)
        z_full, enc_vjp = enc.apply(filt, accumulate=False)
        integrated += weights[k][None, :] * z_full[:n]
        tapes.append((br, enc_vjp, (kk, rr)))
    logits, head_vjp = state.head.apply(integrated, accumulate=train)

    def backward(dlogits):
        dintegrated = head_vjp(dlogits)
        for k, (br, enc_vjp, (kk, rr)) in enumerate(tapes):
            if br.features.shape[0] == n:
                continue  # no prompt rows, nothing tunable in this branch
            dz_full = np.zeros((br.features.shape[0], model.hidden_dim))
            dz_full[:n] = weights[k][None, :] * dintegrated
            # pre-activation gradient stays hidden-dim wide through the
            # filter (its polynomial is symmetric, so it is its own
            # adjoint); W^T is folded in on the prompt rows only
            ds = enc_vjp(dz_full, project=False)
            dsg = beta_filter_apply(br.lap, kk, rr, ds)
            enc = model.encoders[k]
            dprompt = dsg[n:] @ enc.weight.value.T
            br.param.grad += br.norm_vjp(dprompt) if br.norm_vjp is not None else dprompt

    return integrated, logits, backward


def prompted_encode(g: Graph, frozen: FrozenModel, state: PromptState) -> np.ndarray:
    """Frozen-backbone embeddings of the original nodes under the prompts."""
    branches = _build_branches(g, state, frozen.model.bank.size)
    integrated, _, _ = _forward(g, frozen, state, branches, train=False)
    return integrated


def init_state(g: Graph, frozen: FrozenModel, cfg: TuneConfig, n_classes: int) -> PromptState:
    """Fresh prompts (rows drawn from the feature column statistics) + head."""
    rng = np.random.default_rng(derive_seed(cfg.seed, 2))
    mu_o, sigma_o = feature_stats(g.features)
    tau_cross = cfg.tau_cross
    if tau_cross is None:
        tau_cross = default_tau_cross(edge_homophily(g)) if g.labels is not None else TAU_CROSS_HETEROPHILIC
    n_graphs = 1 if (cfg.shared_prompt or cfg.n_prompt == 0) else frozen.model.bank.size
    # one draw replicated across per-filter graphs: at init the per-filter
    # family coincides with the shared configuration (same rows, same inserted
    # edges, identical rng state left for the head), and the branches then
    # specialise only through branch-specific gradients
    rows0 = rng.standard_normal((cfg.n_prompt, g.feature_dim)) * sigma_o + mu_o
    prompts = []
    for i in range(n_graphs):
        name = "prompt.features" if n_graphs == 1 else f"prompt{i}.features"
        prompts.append(
            PromptGraph(
                features=Param(rows0.copy(), name), tau_inner=cfg.tau_inner, tau_cross=tau_cross
            )
        )
    head = LinearLayer(
        frozen.model.hidden_dim, n_classes, rng, activation="identity", prefix="head"
    )
    shared = cfg.shared_prompt or cfg.n_prompt == 0
    return PromptState(prompts=tuple(prompts), head=head, shared=shared, normalize=cfg.normalize)


def tune(g: Graph, frozen: FrozenModel, split: DatasetSplit, cfg: TuneConfig):
    """Fit prompts and head on the K-shot set; select by validation F1.

    The backbone hash is verified before and after: any drift is a hard
    failure. Only shot and validation labels are ever read. Returns
    (best state, history rows (epoch, train loss, val F1 or nan)).
    """
    from .evaluate import macro_f1  # deferred: evaluate imports this module

    frozen.verify()
    if g.labels is None:
        raise ValueError("labels absent")
    n_classes = g.n_classes if g.n_classes is not None else int(g.labels.max()) + 1
    state = init_state(g, frozen, cfg, n_classes)
    params = state.tunable_params()
    opt = Adam(params, lr=cfg.lr)
    shots = np.concatenate(split.shot_indices)
    n_filters = frozen.model.bank.size
    history = []
    best_f1 = -1.0
    best_values = None
    for epoch in range(cfg.epochs):
        branches = _build_branches(g, state, n_filters)
        for p in params:
            p.zero_grad()
        _, logits, backward = _forward(g, frozen, state, branches, train=True)
        loss, dlogits = softmax_cross_entropy(logits, g.labels, shots)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite tuning loss at epoch {epoch}")
        backward(dlogits)
        opt.step()
        val_f1 = np.nan
        if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            fresh = _build_branches(g, state, n_filters)
            _, val_logits, _ = _forward(g, frozen, state, fresh, train=False)
            pred = np.argmax(val_logits, axis=1)
            val_f1 = macro_f1(pred, g.labels, n_classes, split.val_indices)
            if val_f1 > best_f1:
                best_f1 = val_f1
                best_values = [p.value.copy() for p in params]
        history.append((epoch, float(loss), float(val_f1)))
    frozen.verify()
    if best_values is not None:
        for p, v in zip(params, best_values):
            p.value[...] = v
    return state, history


def predict(g: Graph, frozen: FrozenModel, state: PromptState) -> np.ndarray:
    """Class probabilities (rows sum to one) for every node."""
    branches = _build_branches(g, state, frozen.model.bank.size)
    _, logits, _ = _forward(g, frozen, state, branches, train=False)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def state_bytes(state: PromptState) -> bytes:
    p0 = state.prompts[0]
    meta = [
        len(state.prompts),
        1 if state.shared else 0,
        1 if state.normalize else 0,
        state.head.weight.value.shape[0],
        state.head.weight.value.shape[1],
    ]
    floats = [p0.tau_inner, p0.tau_cross]
    arrays = [(p.features.name, p.features.value) for p in state.prompts]
    arrays.append((state.head.weight.name, state.head.weight.value))
    arrays.append((state.head.bias.name, state.head.bias.value))
    return pack_arrays(STATE_MAGIC, meta, arrays, floats)


def state_hash(state: PromptState) -> str:
    return hashlib.sha256(state_bytes(state)).hexdigest()


def save_state(state: PromptState, path) -> None:
    with open(path, "wb") as fh:
        fh.write(state_bytes(state))


def load_state(path) -> PromptState:
    with open(path, "rb") as fh:
        blob = fh.read()
    meta, floats, arrays = unpack_arrays(blob, STATE_MAGIC)
    n_graphs, shared, normalize, hidden, n_classes = meta
    tau_inner, tau_cross = floats
    by_name = dict(arrays)
    prompts = []
    for i in range(n_graphs):
        name = "prompt.features" if n_graphs == 1 else f"prompt{i}.features"
        prompts.append(
            PromptGraph(features=Param(by_name[name], name), tau_inner=tau_inner, tau_cross=tau_cross)
        )
    rng = np.random.default_rng(0)
    head = LinearLayer(hidden, n_classes, rng, activation="identity", prefix="head")
    head.weight.value[...] = by_name["head.weight"]
    head.bias.value[...] = by_name["head.bias"]
    return PromptState(
        prompts=tuple(prompts), head=head, shared=bool(shared), normalize=bool(normalize)
    )
