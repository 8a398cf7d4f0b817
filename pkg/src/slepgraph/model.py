"""SlepNet forward/backward with explicit gradient bookkeeping, plus the
first-order GCN baseline sharing the same pooling and classifier head."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .graph import COMBINATORIAL, EigenSystem, Graph, laplacian_eigensystem
from .layers import (
    RELU,
    eig_sym_with_grad,
    gcn_propagation,
    layer_backward_nodemajor,
    layer_forward_nodemajor,
    time_embedding,
)
from .mask import SIGMOID, ClusterAssignment, cluster_attention, cluster_attention_grad, spectral_cluster
from .slepian import EMBEDDED, ENERGY

SLEPNET = "slepnet"
GCN = "gcn"
SPACELIMITED = "spacelimited"
BANDLIMITED = "bandlimited"

# collapse guard for an all-but-empty soft selector
PENALTY_THRESHOLD = 1e-3
PENALTY_WEIGHT = 1e-3


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class ModelConfig:
    n_layers: int = 3
    hidden_dim: int = 64
    K: int = 20
    variant: str = ENERGY
    kappa: int = 3
    pe_dim: int = 16
    head_hidden: int = 64
    n_classes: int = 2
    in_features: int = 10
    arch: str = SLEPNET
    basis: str = SPACELIMITED
    attention: str = SIGMOID
    laplacian: str = COMBINATORIAL
    perturb_scale: float = 1e-6
    mask_l1: float = 3e-3
    seed: int = 0

    def validate(self, n_nodes: Optional[int] = None) -> None:
        for name in ("n_layers", "hidden_dim", "K", "kappa", "head_hidden", "n_classes", "in_features"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"model.{name} must be positive")
        if self.pe_dim < 0 or self.pe_dim % 2:
            raise ValueError("model.pe_dim must be a non-negative even integer")
        if self.n_classes < 2:
            raise ValueError("model.n_classes must be >= 2")
        if self.variant not in (ENERGY, EMBEDDED):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.arch not in (SLEPNET, GCN):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.basis not in (SPACELIMITED, BANDLIMITED):
            raise ValueError(f"unknown basis {self.basis!r}")
        if n_nodes is not None:
            if self.K > n_nodes:
                raise ValueError(f"K={self.K} exceeds graph size {n_nodes}")
            if self.kappa > n_nodes:
                raise ValueError(f"kappa={self.kappa} exceeds graph size {n_nodes}")


@dataclass
class GraphContext:
    """Per-graph quantities shared by every snapshot: eigenpairs, clusters, GCN propagation."""

    graph: Graph
    eig: EigenSystem
    clusters: ClusterAssignment
    propagation: np.ndarray
    _basis_cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, graph: Graph, config: ModelConfig, clusters: Optional[ClusterAssignment] = None):
        eig = laplacian_eigensystem(graph, config.laplacian)
        if clusters is None:
            clusters = spectral_cluster(graph, config.kappa, seed=config.seed)
        return cls(graph, eig, clusters, gcn_propagation(graph))

    def clear_cache(self) -> None:
        self._basis_cache.clear()


@dataclass
class ModelState:
    config: ModelConfig
    params: dict
    grads: dict
    epoch: int = 0

    def zero_grad(self) -> None:
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def copy(self) -> "ModelState":
        return ModelState(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.grads.items()},
            self.epoch,
        )

    def layer_dims(self) -> list:
        c = self.config
        dims = [c.in_features + c.pe_dim] + [c.hidden_dim] * c.n_layers
        return list(zip(dims[:-1], dims[1:]))


def init_state(config: ModelConfig) -> ModelState:
    """Seeded parameter initialisation.

    Slepian filters start flat across frequencies (each one a scaled projection)
    with 1% multiplicative jitter; channel scales and head weights are uniform in
    +-1/sqrt(fan_in). Mask logits start at zero.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    params = {}
    dims = [config.in_features + config.pe_dim] + [config.hidden_dim] * config.n_layers
    if config.arch == SLEPNET:
        params["mask_w"] = np.zeros(config.kappa)
    for l, (p, q) in enumerate(zip(dims[:-1], dims[1:])):
        bound = 1.0 / np.sqrt(p)
        scale = rng.uniform(-bound, bound, size=(p, q))
        if config.arch == SLEPNET:
            jitter = 1.0 + 0.01 * rng.standard_normal((p, q, config.K))
            params[f"theta_{l}"] = scale[:, :, None] * jitter
        else:
            params[f"W_{l}"] = scale
    fan = dims[-1]
    params["head_W1"] = rng.uniform(-1 / np.sqrt(fan), 1 / np.sqrt(fan), size=(fan, config.head_hidden))
    params["head_b1"] = np.zeros(config.head_hidden)
    fan = config.head_hidden
    params["head_W2"] = rng.uniform(-1 / np.sqrt(fan), 1 / np.sqrt(fan), size=(fan, config.n_classes))
    params["head_b2"] = np.zeros(config.n_classes)
    state = ModelState(config, params, {})
    state.zero_grad()
    return state


def node_weights(state: ModelState, ctx: GraphContext) -> np.ndarray:
    """Soft node selector ``m`` produced by the cluster attention."""
    a = cluster_attention(state.params["mask_w"], state.config.attention)
    return a[ctx.clusters.labels]


def basis_forward(state: ModelState, ctx: GraphContext):
    """Slepian basis for the current mask. Returns ``(Z, cache)``."""
    c = state.config
    w = state.params["mask_w"]
    key = (w.tobytes(), c.K, c.variant, c.basis, c.perturb_scale)
    hit = ctx._basis_cache.get(key)
    if hit is not None:
        return hit
    a = cluster_attention(w, c.attention)
    m = a[ctx.clusters.labels]
    UK = ctx.eig.eigenvectors[:, : c.K]
    C = UK.T @ (m[:, None] * UK)
    C = 0.5 * (C + C.T)
    s = None
    if c.variant == EMBEDDED:
        s = np.sqrt(np.clip(ctx.eig.eigenvalues[: c.K], 0.0, None))
        C = s[:, None] * C * s[None, :]
    lam, V, eig_backward = eig_sym_with_grad(C, c.perturb_scale)
    order = np.argsort(-lam if c.variant == ENERGY else lam, kind="stable")
    Vs = V[:, order]
    Bl = UK @ Vs
    Z = m[:, None] * Bl if c.basis == SPACELIMITED else Bl
    cache = dict(a=a, m=m, UK=UK, s=s, lam=lam[order], order=order, Bl=Bl, eig_backward=eig_backward)
    out = (Z, cache)
    if len(ctx._basis_cache) > 8:
        ctx._basis_cache.clear()
    ctx._basis_cache[key] = out
    return out


def basis_backward(state: ModelState, ctx: GraphContext, cache: dict, dZ: np.ndarray, dm_extra=None) -> np.ndarray:
    """Gradient with respect to the mask logits given ``dL/dZ``."""
    c = state.config
    m, Bl, UK = cache["m"], cache["Bl"], cache["UK"]
    if c.basis == SPACELIMITED:
        dm = np.sum(dZ * Bl, axis=1)
        dB = m[:, None] * dZ
    else:
        dm = np.zeros_like(m)
        dB = dZ
    dV = np.zeros((c.K, c.K))
    dV[:, cache["order"]] = UK.T @ dB
    dC = cache["eig_backward"](None, dV)
    if c.variant == EMBEDDED:
        s = cache["s"]
        dC = s[:, None] * dC * s[None, :]
    dm = dm + np.sum((UK @ dC) * UK, axis=1)
    if dm_extra is not None:
        dm = dm + dm_extra
    da = np.bincount(ctx.clusters.labels, weights=dm, minlength=ctx.clusters.kappa)
    return da * cluster_attention_grad(state.params["mask_w"], c.attention)


def _inputs(config: ModelConfig, X, t):
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    B, N, F = X.shape
    if F != config.in_features:
        raise ValueError(f"expected {config.in_features} input features, got {F}")
    if config.pe_dim:
        t = np.broadcast_to(np.asarray(t), (B,))
        pe = np.stack([time_embedding(int(ti), config.pe_dim) for ti in t])
        X = np.concatenate([X, np.broadcast_to(pe[:, None, :], (B, N, config.pe_dim))], axis=2)
    return X, single


def forward(state: ModelState, ctx: GraphContext, X, t=0):
    """Logits for one snapshot (N x F) or a batch (B x N x F).

    Returns ``(logits, cache)``; the cache holds every intermediate that
    :func:`backward` needs.
    """
    c = state.config
    P = state.params
    H, single = _inputs(c, X, t)
    cache = {"single": single, "layers": []}
    if c.arch == SLEPNET:
        Z, bcache = basis_forward(state, ctx)
        cache["Z"], cache["basis"] = Z, bcache
        Hn = np.ascontiguousarray(H.transpose(1, 0, 2))
        for l in range(c.n_layers):
            Hn, lc = layer_forward_nodemajor(Hn, P[f"theta_{l}"], Z, RELU)
            cache["layers"].append(lc)
        H = Hn.transpose(1, 0, 2)
    else:
        Pm = ctx.propagation
        for l in range(c.n_layers):
            PH = np.matmul(Pm, H)
            pre = np.matmul(PH, P[f"W_{l}"])
            cache["layers"].append((PH, pre))
            H = np.maximum(pre, 0.0)
    g = H.mean(axis=1)
    h1pre = g @ P["head_W1"] + P["head_b1"]
    h1 = np.maximum(h1pre, 0.0)
    logits = h1 @ P["head_W2"] + P["head_b2"]
    if not np.all(np.isfinite(logits)):
        raise NonFiniteError(
            f"non-finite logits (max |pooled| = {np.nanmax(np.abs(g)):.3e}, "
            f"max |hidden| = {np.nanmax(np.abs(h1)):.3e})"
        )
    cache.update(N=H.shape[1], HL=H, g=g, h1pre=h1pre, h1=h1)
    return (logits[0] if single else logits), cache


def embed(state: ModelState, ctx: GraphContext, X, t=0) -> np.ndarray:
    """Pooled representation fed to the classifier head."""
    _, cache = forward(state, ctx, X, t)
    return cache["g"][0] if cache["single"] else cache["g"]


def mask_penalty(m: np.ndarray):
    """``-w log(mean m)`` when every node weight has collapsed below threshold, else 0.

    Returns ``(value, dvalue/dm)``.
    """
    if np.all(m < PENALTY_THRESHOLD):
        mean = max(float(m.mean()), 1e-300)
        return -PENALTY_WEIGHT * np.log(mean), np.full_like(m, -PENALTY_WEIGHT / (mean * m.size))
    return 0.0, None


def backward(state: ModelState, cache: dict, dlogits, ctx: Optional[GraphContext] = None, penalty: bool = False):
    """Accumulate parameter gradients into ``state.grads`` and return them.

    ``dlogits`` is the cotangent of the logits returned by :func:`forward`.
    With ``penalty`` set, the mask-collapse penalty gradient is added.
    """
    c = state.config
    P = state.params
    G = {k: np.zeros_like(v) for k, v in P.items()}
    d = np.asarray(dlogits, dtype=np.float64)
    if cache["single"]:
        d = d[None]
    h1, h1pre, g = cache["h1"], cache["h1pre"], cache["g"]
    G["head_W2"] = h1.T @ d
    G["head_b2"] = d.sum(axis=0)
    dh1 = (d @ P["head_W2"].T) * (h1pre > 0)
    G["head_W1"] = g.T @ dh1
    G["head_b1"] = dh1.sum(axis=0)
    dg = dh1 @ P["head_W1"].T
    N = cache["N"]
    dH = np.broadcast_to(dg[:, None, :] / N, cache["HL"].shape)
    if c.arch == SLEPNET:
        Z = cache["Z"]
        dZ = np.zeros_like(Z)
        dH = np.broadcast_to(dg[None, :, :] / N, (N,) + dg.shape)
        for l in reversed(range(c.n_layers)):
            dH, dth, dz = layer_backward_nodemajor(dH, P[f"theta_{l}"], Z, cache["layers"][l], RELU)
            G[f"theta_{l}"] = dth
            dZ += dz
        dm_extra = None
        if penalty:
            m = cache["basis"]["m"]
            _, dm_extra = mask_penalty(m)
            if c.mask_l1:
                dl1 = np.full_like(m, c.mask_l1 / m.size)
                dm_extra = dl1 if dm_extra is None else dm_extra + dl1
        if ctx is None:
            raise ValueError("SlepNet backward needs the graph context for the mask gradient")
        G["mask_w"] = basis_backward(state, ctx, cache["basis"], dZ, dm_extra)
    else:
        Pm = None if ctx is None else ctx.propagation
        for l in reversed(range(c.n_layers)):
            PH, pre = cache["layers"][l]
            dpre = dH * (pre > 0)
            B, Nn, q = dpre.shape
            G[f"W_{l}"] = PH.reshape(B * Nn, -1).T @ dpre.reshape(B * Nn, q)
            if l > 0:
                if Pm is None:
                    raise ValueError("GCN backward needs the graph context")
                dH = np.matmul(Pm.T, np.matmul(dpre, P[f"W_{l}"].T))
    for k in P:
        state.grads[k] = G[k]
    return G


# -- checkpoints --------------------------------------------------------------

_MAGIC = b"SLEPCKPT1\n"


def save_checkpoint(path, state: ModelState, clusters: Optional[ClusterAssignment] = None, extra=None) -> None:
    """JSON header line followed by raw little-endian float64 blocks."""
    names = sorted(state.params)
    offset = 0
    tensors = []
    for n in names:
        a = np.ascontiguousarray(state.params[n], dtype="<f8")
        tensors.append({"name": n, "shape": list(a.shape), "offset": offset})
        offset += a.nbytes
    header = {
        "config": asdict(state.config),
        "seed": state.config.seed,
        "epoch": state.epoch,
        "tensors": tensors,
        "clusters": None if clusters is None else clusters.labels.tolist(),
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for n in names:
            fh.write(np.ascontiguousarray(state.params[n], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(state, clusters_or_None, header)``."""
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    rest = raw[len(_MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl])
    blob = rest[nl + 1:]
    known = {f.name for f in fields(ModelConfig)}
    config = ModelConfig(**{k: v for k, v in header["config"].items() if k in known})
    params = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        a = np.frombuffer(blob, dtype="<f8", count=count, offset=t["offset"])
        params[t["name"]] = a.reshape(t["shape"]).astype(np.float64)
    state = ModelState(config, params, {}, int(header["epoch"]))
    state.zero_grad()
    clusters = None
    if header.get("clusters") is not None:
        labels = np.asarray(header["clusters"], dtype=int)
        clusters = ClusterAssignment(labels, int(labels.max()) + 1)
    return state, clusters, header
