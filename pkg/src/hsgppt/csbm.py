"""Contextual stochastic block model with a tunable homophily level.

Two balanced classes y in {-1, +1}. Features are a rank-one class signal
plus isotropic noise:

    x_i = sqrt(mu / n) * y_i * u + w_i / sqrt(f),   u ~ N(0, I/f),  w_i ~ N(0, I)

Edges are sampled independently with intra-class probability (d + s sqrt(d))/n
and inter-class probability (d - s sqrt(d))/n where s = sqrt(d) (2h - 1), so
the expected edge homophily is exactly h and the expected degree is d.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .graph import Graph


@dataclass(frozen=True)
class CsbmParams:
    n: int = 3000
    f: int = 128
    d_avg: float = 50.0
    h: float = 0.5
    mu: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.n % 2:
            raise ValueError("n must be even and >= 2")
        if self.f < 1:
            raise ValueError("f must be >= 1")
        if self.d_avg <= 0:
            raise ValueError("d_avg must be positive")
        if not 0.0 <= self.h <= 1.0:
            raise ValueError("h must lie in [0, 1]")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        p_in, p_out = edge_probabilities(self)
        for name, p in (("intra", p_in), ("inter", p_out)):
            if not 0.0 <= p <= 1.0:
                raise ValueError(
                    f"{name}-class edge probability {p:.4f} outside [0, 1]; "
                    "reduce d_avg or move h toward 0.5"
                )


def edge_probabilities(params: CsbmParams):
    """(intra, inter) pair probabilities.

    The separation parameter s = sqrt(d) (2h - 1) gives p_in = (d + s
    sqrt(d))/n, which simplifies to 2hd/n; the simplified form is used so the
    endpoints h = 0 and h = 1 are exact (the s route leaves roundoff there).
    """
    p_in = 2.0 * params.h * params.d_avg / params.n
    p_out = 2.0 * (1.0 - params.h) * params.d_avg / params.n
    return float(p_in), float(p_out)


def _sample_block_edges(rng, p, rows, cols, row_offset, col_offset, triangular):
    """Bernoulli edges of one class block, returned as canonical pairs."""
    if triangular:
        iu, ju = np.triu_indices(rows, k=1)
        keep = rng.random(iu.size) < p
        return np.stack([iu[keep] + row_offset, ju[keep] + col_offset], axis=1)
    mask = rng.random((rows, cols)) < p
    iu, ju = np.nonzero(mask)
    return np.stack([iu + row_offset, ju + col_offset], axis=1)


def generate(params: CsbmParams) -> Graph:
    g, _ = generate_with_signal(params)
    return g


def generate_with_signal(params: CsbmParams):
    """Sample a graph and also return the hidden class direction u.

    Draw order is fixed (u, noise, block-0 edges, block-1 edges, cross
    edges) so a given seed always yields byte-identical output.
    """
    rng = np.random.default_rng(params.seed)
    n, f = params.n, params.f
    half = n // 2
    y = np.concatenate([-np.ones(half), np.ones(half)])
    u = rng.normal(0.0, 1.0 / np.sqrt(f), size=f)
    noise = rng.standard_normal((n, f)) / np.sqrt(f)
    X = np.sqrt(params.mu / n) * y[:, None] * u[None, :] + noise

    p_in, p_out = edge_probabilities(params)
    parts = [
        _sample_block_edges(rng, p_in, half, half, 0, 0, triangular=True),
        _sample_block_edges(rng, p_in, half, half, half, half, triangular=True),
        _sample_block_edges(rng, p_out, half, half, 0, half, triangular=False),
    ]
    edges = np.concatenate([p for p in parts if p.size], axis=0)
    if edges.size == 0:
        edges = np.empty((0, 2), dtype=np.int64)
    labels = (y > 0).astype(np.int64)
    g = Graph(
        name=f"csbm_n{n}_h{params.h:g}_seed{params.seed}",
        edges=edges,
        features=X,
        labels=labels,
        n_classes=2,
    )
    return g, u


def sweep(base: CsbmParams, h_values) -> list:
    """One graph per homophily level, seeds derived from (base seed, index)."""
    out = []
    for i, h in enumerate(h_values):
        out.append(generate(replace(base, h=float(h), seed=base.seed + i)))
    return out
