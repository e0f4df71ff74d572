"""Dual-stage hypergraph attention encoder.

Per head h: project node features X (N x d) to X_h = X @ W_h (N x d_h),
score each node, softmax the scores inside every hyperedge (intra stage,
normalized over the members of each incidence column), aggregate members
into hyperedge embeddings Z, score the edges, softmax over each node's
incident edges (inter stage, normalized along incidence rows), and pull the
edge embeddings back to the nodes. Head outputs are concatenated in head
order, projected to d_model with W_o/b_o, and max-pooled over nodes into
the graph embedding g. Both softmax stages subtract the per-group max
before exponentiation and divide scores by a temperature tau.

Setting uniform=True replaces both attention stages with plain averaging
(over members / over incident edges) while keeping the projections, so the
module stays differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class EncoderParams:
    """Learnable tensors plus the fixed head count K and temperature tau."""

    K: int
    d: int
    d_model: int
    tau: float
    W: list = field(default_factory=list)    # K of (d, d_h)
    a: list = field(default_factory=list)    # K of (d_h, 1)
    b: list = field(default_factory=list)    # K of (d_h, 1)
    Wo: Tensor = None                        # (K*d_h, d_model)
    bo: Tensor = None                        # (1, d_model)

    @property
    def d_h(self) -> int:
        return self.d // self.K

    def tensors(self) -> dict[str, Tensor]:
        """Named parameters, head order 1..K; keys match the checkpoint names."""
        out: dict[str, Tensor] = {}
        for h in range(self.K):
            out[f"enc.W.h{h + 1}"] = self.W[h]
            out[f"enc.a.h{h + 1}"] = self.a[h]
            out[f"enc.b.h{h + 1}"] = self.b[h]
        out["enc.Wo"] = self.Wo
        out["enc.bo"] = self.bo
        return out


def init_encoder(d: int, K: int, d_model: int, tau: float = 1.0,
                 rng: np.random.Generator | None = None) -> EncoderParams:
    if K < 1 or d < 1 or d_model < 1:
        raise ValueError(f"bad encoder dims d={d}, K={K}, d_model={d_model}")
    if d % K != 0:
        raise ValueError(f"d={d} not divisible by K={K}; pad the features first")
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    rng = rng or np.random.default_rng(0)
    d_h = d // K
    p = EncoderParams(K=K, d=d, d_model=d_model, tau=float(tau))
    for _ in range(K):
        p.W.append(Tensor(rng.normal(0.0, (1.0 / d) ** 0.5, (d, d_h)), requires_grad=True))
        p.a.append(Tensor(rng.normal(0.0, (1.0 / d_h) ** 0.5, (d_h, 1)), requires_grad=True))
        p.b.append(Tensor(rng.normal(0.0, (1.0 / d_h) ** 0.5, (d_h, 1)), requires_grad=True))
    p.Wo = Tensor(rng.normal(0.0, (1.0 / d) ** 0.5, (d, d_model)), requires_grad=True)
    p.bo = Tensor(np.zeros((1, d_model)), requires_grad=True)
    return p


def load_encoder(named: dict[str, np.ndarray], tau: float) -> EncoderParams:
    """Rebuild EncoderParams from checkpoint tensors named enc.*."""
    K = 0
    while f"enc.W.h{K + 1}" in named:
        K += 1
    if K == 0:
        raise ValueError("checkpoint holds no encoder heads")
    d, d_h = named["enc.W.h1"].shape
    d_model = named["enc.Wo"].shape[1]
    p = EncoderParams(K=K, d=d, d_model=d_model, tau=float(tau))
    for h in range(K):
        p.W.append(Tensor(named[f"enc.W.h{h + 1}"], requires_grad=True))
        p.a.append(Tensor(named[f"enc.a.h{h + 1}"].reshape(d_h, 1), requires_grad=True))
        p.b.append(Tensor(named[f"enc.b.h{h + 1}"].reshape(d_h, 1), requires_grad=True))
    p.Wo = Tensor(named["enc.Wo"], requires_grad=True)
    p.bo = Tensor(named["enc.bo"].reshape(1, d_model), requires_grad=True)
    return p


def _check_incidence(H: np.ndarray) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2:
        raise ValueError(f"incidence must be 2-d, got shape {H.shape}")
    if np.any(H.sum(axis=0) < 1):
        raise ValueError("empty hyperedge: cannot normalize over its members")
    if np.any(H.sum(axis=1) < 1):
        raise ValueError("isolated node: no incident hyperedge to attend over")
    return H


def intra_attention(X_h: Tensor, H: np.ndarray, a_h: Tensor, tau: float) -> Tensor:
    """Stage A: alpha[i,e], softmax of node scores within each edge column."""
    H = _check_incidence(H)
    N, E = H.shape
    s = ad.matmul(X_h, a_h)                       # (N, 1) node scores
    S = ad.matmul(s, Tensor(np.ones((1, E))))     # broadcast scores across columns
    S = ad.scale(S, 1.0 / tau)
    return ad.masked_softmax(S, H > 0, axis=0)


def hyperedge_embed(alpha: Tensor, X_h: Tensor) -> Tensor:
    """z_e = sum_i alpha[i,e] * x_i, one row per hyperedge."""
    return ad.matmul(ad.transpose(alpha), X_h)


def inter_attention(Z: Tensor, H: np.ndarray, b_h: Tensor, tau: float) -> Tensor:
    """Stage B: beta[i,e], softmax of edge scores over each node's edges."""
    H = _check_incidence(H)
    N, E = H.shape
    t = ad.matmul(Z, b_h)                         # (E, 1) edge scores
    T = ad.matmul(Tensor(np.ones((N, 1))), ad.transpose(t))
    T = ad.scale(T, 1.0 / tau)
    return ad.masked_softmax(T, H > 0, axis=1)


def _uniform_weights(H: np.ndarray, axis: int) -> np.ndarray:
    s = H.sum(axis=axis, keepdims=True)
    return np.divide(H, s, out=np.zeros_like(H), where=s > 0)


def encode(X, H: np.ndarray, params: EncoderParams,
           uniform: bool = False) -> tuple[Tensor, Tensor]:
    """Run the full encoder.

    Args:
        X: (N, d) node features, Tensor or array.
        H: (N, E) binary incidence; no empty edges, no isolated nodes.
        params: encoder parameters.
        uniform: replace both attention stages with uniform averaging.

    Returns:
        (Y_hat, g): per-node embeddings (N, d_model) and the graph
        embedding g (1, d_model), the coordinatewise max over nodes.
    """
    if not isinstance(X, Tensor):
        X = Tensor(X)
    H = _check_incidence(H)
    if X.data.ndim != 2 or X.data.shape[0] != H.shape[0]:
        raise ValueError(f"X shape {X.shape} does not match H shape {H.shape}")
    if X.data.shape[1] != params.d:
        raise ValueError(f"X width {X.data.shape[1]} != params.d {params.d}")

    heads = []
    for h in range(params.K):
        X_h = ad.matmul(X, params.W[h])
        if uniform:
            alpha = Tensor(_uniform_weights(H, axis=0))
            Z = hyperedge_embed(alpha, X_h)
            beta = Tensor(_uniform_weights(H, axis=1))
        else:
            alpha = intra_attention(X_h, H, params.a[h], params.tau)
            Z = hyperedge_embed(alpha, X_h)
            beta = inter_attention(Z, H, params.b[h], params.tau)
        heads.append(ad.matmul(beta, Z))          # (N, d_h) updated nodes
    cat = heads[0] if len(heads) == 1 else ad.concat(heads, axis=1)
    Y = ad.add(ad.matmul(cat, params.Wo), params.bo)
    g = ad.reduce_max(Y, axis=0, keepdims=True)
    return Y, g
