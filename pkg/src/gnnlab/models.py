"""Message-passing layer zoo and stacked node-classification models.

One propagation interface, eight variants: GCN, SGC, GAT, APPNP, GCNII,
JKNet, DGCN and the coupling network (CoGNet) with its reversible coupling.
The functional layer ops are exported separately from the model classes so
the exact reduction identities between variants can be tested directly.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import build_normalized_adjacency
from .tensor import (SparseMatrix, Tensor, Segments, add, concat_cols, dropout,
                     dropout_rng, element, gather_rows, leaky_relu, matmul,
                     maximum, mul, relu, row_softmax, scale, scale_by,
                     segment_softmax, segment_sum, sigmoid, spmm)

VARIANTS = ("GCN", "SGC", "GAT", "APPNP", "GCNII", "JKNet", "DGCN", "CoGNet")


@dataclass
class ModelConfig:
    variant: str = "GCN"
    depth: int = 2
    hidden: int = 64
    dropout: float = 0.5
    alpha: float = 0.1          # initial-residual weight (APPNP, GCNII)
    theta: float = 0.5          # identity-mapping schedule: beta_l = log(theta/l + 1)
    heads: int = 8              # GAT
    jk_combine: str = "attention"   # attention | concat | maxpool
    gate_init: float = 0.5      # CoGNet lambda/gamma start value
    cognet_switch: int = 2      # couple with H0 once the layer index exceeds this
    bias: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant: {self.variant}")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 < self.gate_init < 1.0:
            raise ValueError("gate_init must lie in (0, 1)")
        if self.jk_combine not in ("attention", "concat", "maxpool"):
            raise ValueError(f"unknown combine mode: {self.jk_combine}")


def beta_schedule(theta, layer):
    """Identity-mapping strength for layer index starting at 1."""
    return math.log(theta / layer + 1.0)


# ---------------------------------------------------------------------------
# scalar-gate helpers


def _scalar(x):
    return x if isinstance(x, Tensor) else Tensor(float(x))


def one_minus(s):
    return add(scale(s, -1.0), Tensor(1.0))


# ---------------------------------------------------------------------------
# functional layers


def gcn_layer(H, A, W, b=None, activation=relu):
    """sigma(A H W + b); pass activation=None for the pre-activation value."""
    out = spmm(A, matmul(H, W))
    if b is not None:
        out = add(out, b)
    return activation(out) if activation is not None else out


def sgc_propagate(X, A, K):
    """A^K X by K repeated sparse products, no intermediate nonlinearity."""
    if K < 0:
        raise ValueError("K must be >= 0")
    H = X
    for _ in range(K):
        H = spmm(A, H)
    return H


def appnp_propagate(H0, A, alpha, L):
    """H <- (1-alpha) A H + alpha H0, iterated L times from H0."""
    H = H0
    for _ in range(L):
        H = add(scale(spmm(A, H), 1.0 - alpha), scale(H0, alpha))
    return H


def gcnii_layer(H, H0, A, alpha, beta, W, activation=relu):
    """sigma(((1-a) A H + a H0)((1-b) I + b W)). beta=0 is one APPNP step."""
    support = add(scale(spmm(A, H), 1.0 - alpha), scale(H0, alpha))
    out = add(scale(support, 1.0 - beta), scale(matmul(support, W), beta))
    return activation(out) if activation is not None else out


def jk_combine(reps, mode, attention_logits=None):
    """Combine per-layer representations at the output.

    attention: softmax(logits)-weighted sum (logits is a 1 x L tensor);
    maxpool: entrywise max; concat: feature-axis concatenation.
    """
    if not reps:
        raise ValueError("no representations to combine")
    if mode == "attention":
        if attention_logits is None:
            attention_logits = Tensor(np.zeros((1, len(reps))))
        w = row_softmax(attention_logits)
        out = scale_by(reps[0], element(w, 0, 0))
        for l in range(1, len(reps)):
            out = add(out, scale_by(reps[l], element(w, 0, l)))
        return out
    if mode == "maxpool":
        out = reps[0]
        for r in reps[1:]:
            out = maximum(out, r)
        return out
    if mode == "concat":
        return concat_cols(reps)
    raise ValueError(f"unknown combine mode: {mode}")


def dgcn_combine(X, A, L, attention_logits, betas, Ws):
    """Z = sum_l alpha_l A^l X (beta_l W_l + (1-beta_l) I), softmaxed alphas."""
    w = row_softmax(attention_logits)
    P = X
    out = None
    for l in range(L):
        P = spmm(A, P)
        beta = _scalar(betas[l])
        term = add(scale_by(matmul(P, Ws[l]), beta),
                   scale_by(P, one_minus(beta)))
        term = scale_by(term, element(w, 0, l))
        out = term if out is None else add(out, term)
    return out


def cognet_layer(H, H_prev, A, lam, gamma, W):
    """Coupled update: G = g A H + (1-g) H_prev; P = G (l W + (1-l) I).

    Returns (P, relu(P)). `lam`/`gamma` may be floats or learnable scalars.
    """
    lam, gamma = _scalar(lam), _scalar(gamma)
    G = add(scale_by(spmm(A, H), gamma), scale_by(H_prev, one_minus(gamma)))
    P = add(scale_by(matmul(G, W), lam), scale_by(G, one_minus(lam)))
    return P, relu(P)


def coupling(H, H_prev, A, gamma):
    """The coupling term G alone, on plain arrays (no autodiff)."""
    Hd = H.data if isinstance(H, Tensor) else np.asarray(H, dtype=float)
    Pd = H_prev.data if isinstance(H_prev, Tensor) else np.asarray(H_prev, dtype=float)
    return gamma * A.dot(Hd) + (1.0 - gamma) * Pd


def reversible_recover(G, H, A, gamma):
    """Recover the previous representation from the coupling output:
    H_prev = (G - gamma A H) / (1 - gamma). Ill-conditioned near gamma = 1."""
    if abs(1.0 - gamma) < 1e-6:
        raise ValueError("recovery is ill-conditioned for gamma within 1e-6 of 1")
    Gd = G.data if isinstance(G, Tensor) else np.asarray(G, dtype=float)
    Hd = H.data if isinstance(H, Tensor) else np.asarray(H, dtype=float)
    return (Gd - gamma * A.dot(Hd)) / (1.0 - gamma)


def gat_layer(H, att, Ws, a_srcs, a_dsts, activation=relu, merge="concat"):
    """Multi-head attention aggregation over the self-looped edge set.

    `att` is a GraphContext attention structure (src, dst, segments sorted by
    target). Head outputs are concatenated on hidden layers and averaged at
    the output layer. Scores use the feedforward form with slope-0.2 leaky
    rectification.
    """
    src, dst, segments = att
    heads_out = []
    for W, a_src, a_dst in zip(Ws, a_srcs, a_dsts):
        HW = matmul(H, W)
        s_src = matmul(HW, a_src)    # n x 1 score pieces
        s_dst = matmul(HW, a_dst)
        scores = leaky_relu(add(gather_rows(s_src, src), gather_rows(s_dst, dst)), 0.2)
        alpha = segment_softmax(scores, segments)
        msg = mul(alpha, gather_rows(HW, src))
        heads_out.append(segment_sum(msg, segments))
    if merge == "concat":
        out = concat_cols(heads_out) if len(heads_out) > 1 else heads_out[0]
    else:
        out = heads_out[0]
        for h in heads_out[1:]:
            out = add(out, h)
        out = scale(out, 1.0 / len(heads_out))
    return activation(out) if activation is not None else out


def gat_attention_weights(H, att, W, a_src, a_dst):
    """Per-edge attention coefficients of a single head (for inspection)."""
    src, dst, segments = att
    HW = matmul(H, W)
    scores = leaky_relu(add(gather_rows(matmul(HW, a_src), src),
                            gather_rows(matmul(HW, a_dst), dst)), 0.2)
    return segment_softmax(scores, segments), src, dst


# ---------------------------------------------------------------------------
# graph context shared by every model forward pass


class GraphContext:
    """Immutable per-graph bundle: features, normalized adjacency, and the
    sorted edge structure attention layers need. Safe to share across runs."""

    SPARSE_THRESHOLD = 0.75

    def __init__(self, ds, A=None):
        self.ds = ds
        self.A = A if A is not None else build_normalized_adjacency(ds)
        self.n = ds.n
        self._sparse_input = ds.feature_sparsity() >= self.SPARSE_THRESHOLD
        self._att = None

    def input_features(self, p=0.0, rng=None):
        """Features as Tensor or SparseMatrix, with input dropout applied."""
        if self._sparse_input:
            X = self.ds.feature_csr()
            if p > 0.0:
                keep = (rng.random(X.nnz) >= p) / (1.0 - p)
                X = X.scale_values(keep)
            return X
        X = Tensor(self.ds.features)
        return dropout(X, p, rng) if p > 0.0 else X

    def attention_structure(self):
        """(src, dst, Segments) for the self-looped directed edge set,
        sorted by target node so neighborhoods are contiguous."""
        if self._att is None:
            e = self.ds.edges
            loops = np.arange(self.n)
            src = np.concatenate([e[:, 0], e[:, 1], loops])
            dst = np.concatenate([e[:, 1], e[:, 0], loops])
            order = np.lexsort((src, dst))
            src, dst = src[order], dst[order]
            offsets = np.zeros(self.n + 1, dtype=np.intp)
            np.add.at(offsets, dst + 1, 1)
            offsets = np.cumsum(offsets)
            self._att = (src, dst, Segments(offsets, self.n))
        return self._att


def _first_linear(X, W, b=None):
    """X @ W for X either Tensor or SparseMatrix (constant input)."""
    out = spmm(X, W) if isinstance(X, SparseMatrix) else matmul(X, W)
    return add(out, b) if b is not None else out


# ---------------------------------------------------------------------------
# models


class GNNModel:
    """Base: parameter registry, seeded init, shared forward plumbing."""

    def __init__(self, config, d_in, n_classes, seed=0):
        self.config = config
        self.d_in = d_in
        self.n_classes = n_classes
        self.seed = int(seed)
        self._rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x6E]))
        self._params = {}
        self._drop_site = 0
        self.build()

    # -- parameters

    def param(self, name, shape, decay=True, init="glorot", value=None):
        if value is None:
            if init == "glorot":
                limit = math.sqrt(6.0 / (shape[0] + shape[-1])) if len(shape) > 1 \
                    else math.sqrt(6.0 / (shape[0] + 1))
                value = self._rng.uniform(-limit, limit, shape)
            elif init == "zeros":
                value = np.zeros(shape)
            else:
                raise ValueError(f"unknown init: {init}")
        t = Tensor(value, requires_grad=True)
        t.decay = decay
        self._params[name] = t
        return t

    def parameters(self):
        return list(self._params.values())

    def named_parameters(self):
        return dict(self._params)

    def load_state(self, arrays):
        for name, arr in arrays.items():
            self._params[name].data = np.asarray(arr, dtype=np.float64).copy()

    def state(self):
        return {name: p.data.copy() for name, p in self._params.items()}

    # -- forward plumbing

    def _begin_forward(self, training, epoch, seed):
        self._training = training
        self._epoch = int(epoch)
        self._drop_seed = self.seed if seed is None else int(seed)
        self._drop_site = 0

    def _drop(self, H, p=None):
        p = self.config.dropout if p is None else p
        self._drop_site += 1
        if not self._training or p <= 0.0:
            return H
        rng = dropout_rng(self._drop_seed, self._drop_site, self._epoch)
        return dropout(H, p, rng)

    def _input(self, ctx):
        self._drop_site += 1
        if not self._training or self.config.dropout <= 0.0:
            return ctx.input_features()
        rng = dropout_rng(self._drop_seed, self._drop_site, self._epoch)
        return ctx.input_features(self.config.dropout, rng)

    def forward(self, ctx, training=False, epoch=0, seed=None,
                collect_hidden=False):
        """Per-node class logits; eval mode disables dropout. When
        `collect_hidden` is set, also returns the per-layer representations."""
        self._begin_forward(training, epoch, seed)
        logits, hidden = self._forward(ctx)
        return (logits, hidden) if collect_hidden else logits

    def _forward(self, ctx):
        raise NotImplementedError

    def _degenerate(self, ctx):
        """depth-0: linear head on the (input-dropped) raw features."""
        W = self._params["W_out"]
        b = self._params.get("b_out")
        return _first_linear(self._input(ctx), W, b), []


class GCN(GNNModel):
    def build(self):
        cfg = self.config
        if cfg.depth == 0:
            self.param("W_out", (self.d_in, self.n_classes))
            if cfg.bias:
                self.param("b_out", (self.n_classes,), decay=False, init="zeros")
            return
        dims = [self.d_in] + [cfg.hidden] * (cfg.depth - 1) + [self.n_classes]
        for l in range(cfg.depth):
            self.param(f"W{l}", (dims[l], dims[l + 1]))
            if cfg.bias:
                self.param(f"b{l}", (dims[l + 1],), decay=False, init="zeros")

    def _forward(self, ctx):
        cfg = self.config
        if cfg.depth == 0:
            return self._degenerate(ctx)
        hidden = []
        H = self._input(ctx)
        for l in range(cfg.depth):
            W = self._params[f"W{l}"]
            b = self._params.get(f"b{l}")
            pre = spmm(ctx.A, _first_linear(H, W))
            if b is not None:
                pre = add(pre, b)
            H = relu(pre) if l < cfg.depth - 1 else pre
            hidden.append(H)
            if l < cfg.depth - 1:
                H = self._drop(H)
        return H, hidden


class SGC(GNNModel):
    def build(self):
        self.param("W_out", (self.d_in, self.n_classes))
        if self.config.bias:
            self.param("b_out", (self.n_classes,), decay=False, init="zeros")
        self._prop_cache = {}

    def _propagated(self, ctx):
        key = id(ctx)
        if key not in self._prop_cache:
            P = ctx.ds.features
            hidden = [P]
            for _ in range(self.config.depth):
                P = ctx.A.dot(P)
                hidden.append(P)
            self._prop_cache = {key: (P, hidden)}
        return self._prop_cache[key]

    def _forward(self, ctx):
        P, hidden = self._propagated(ctx)
        logits = _first_linear(Tensor(P), self._params["W_out"],
                               self._params.get("b_out"))
        return logits, [Tensor(h) for h in hidden]


class GAT(GNNModel):
    def build(self):
        cfg = self.config
        if cfg.depth == 0:
            self.param("W_out", (self.d_in, self.n_classes))
            if cfg.bias:
                self.param("b_out", (self.n_classes,), decay=False, init="zeros")
            return
        if cfg.hidden % cfg.heads:
            raise ValueError("hidden must be divisible by heads")
        per_head = cfg.hidden // cfg.heads
        in_dim = self.d_in
        for l in range(cfg.depth):
            last = l == cfg.depth - 1
            n_heads = 1 if last else cfg.heads
            out_dim = self.n_classes if last else per_head
            for h in range(n_heads):
                self.param(f"W{l}h{h}", (in_dim, out_dim))
                self.param(f"asrc{l}h{h}", (out_dim, 1), decay=False)
                self.param(f"adst{l}h{h}", (out_dim, 1), decay=False)
            in_dim = out_dim * n_heads

    def _forward(self, ctx):
        cfg = self.config
        if cfg.depth == 0:
            return self._degenerate(ctx)
        att = ctx.attention_structure()
        hidden = []
        H = self._input(ctx)
        if isinstance(H, SparseMatrix):
            H = Tensor(H.to_dense())   # attention gathers need dense rows
        for l in range(cfg.depth):
            last = l == cfg.depth - 1
            n_heads = 1 if last else cfg.heads
            Ws = [self._params[f"W{l}h{h}"] for h in range(n_heads)]
            asrcs = [self._params[f"asrc{l}h{h}"] for h in range(n_heads)]
            adsts = [self._params[f"adst{l}h{h}"] for h in range(n_heads)]
            H = gat_layer(H, att, Ws, asrcs, adsts,
                          activation=None if last else relu,
                          merge="mean" if last else "concat")
            hidden.append(H)
            if not last:
                H = self._drop(H)
        return H, hidden


class APPNP(GNNModel):
    def build(self):
        cfg = self.config
        self.param("W_in", (self.d_in, cfg.hidden))
        self.param("W_out", (cfg.hidden, self.n_classes))
        if cfg.bias:
            self.param("b_in", (cfg.hidden,), decay=False, init="zeros")
            self.param("b_out", (self.n_classes,), decay=False, init="zeros")

    def _forward(self, ctx):
        cfg = self.config
        x = self._input(ctx)
        x = relu(_first_linear(x, self._params["W_in"], self._params.get("b_in")))
        x = self._drop(x)
        H0 = matmul(x, self._params["W_out"])
        if "b_out" in self._params:
            H0 = add(H0, self._params["b_out"])
        hidden = [H0]
        H = H0
        for _ in range(cfg.depth):
            H = add(scale(spmm(ctx.A, H), 1.0 - cfg.alpha), scale(H0, cfg.alpha))
            hidden.append(H)
        return H, hidden


class GCNII(GNNModel):
    def build(self):
        cfg = self.config
        self.param("W_in", (self.d_in, cfg.hidden))
        self.param("W_out", (cfg.hidden, self.n_classes))
        if cfg.bias:
            self.param("b_in", (cfg.hidden,), decay=False, init="zeros")
            self.param("b_out", (self.n_classes,), decay=False, init="zeros")
        for l in range(cfg.depth):
            self.param(f"W{l}", (cfg.hidden, cfg.hidden), decay="conv")

    def _forward(self, ctx):
        cfg = self.config
        x = self._input(ctx)
        x = relu(_first_linear(x, self._params["W_in"], self._params.get("b_in")))
        H0 = x
        hidden = [H0]
        H = H0
        for l in range(cfg.depth):
            H = self._drop(H)
            beta = beta_schedule(cfg.theta, l + 1)
            H = gcnii_layer(H, H0, ctx.A, cfg.alpha, beta, self._params[f"W{l}"])
            hidden.append(H)
        H = self._drop(H)
        logits = matmul(H, self._params["W_out"])
        if "b_out" in self._params:
            logits = add(logits, self._params["b_out"])
        return logits, hidden


class JKNet(GNNModel):
    def build(self):
        cfg = self.config
        dims = [self.d_in] + [cfg.hidden] * cfg.depth
        for l in range(cfg.depth):
            self.param(f"W{l}", (dims[l], dims[l + 1]), decay="conv")
            if cfg.bias:
                self.param(f"b{l}", (dims[l + 1],), decay=False, init="zeros")
        if cfg.jk_combine == "attention":
            self.param("combine", (1, cfg.depth), decay=False, init="zeros")
        head_in = cfg.hidden * (cfg.depth if cfg.jk_combine == "concat" else 1)
        self.param("W_out", (head_in, self.n_classes))
        if cfg.bias:
            self.param("b_out", (self.n_classes,), decay=False, init="zeros")

    def _forward(self, ctx):
        cfg = self.config
        H = self._input(ctx)
        reps = []
        for l in range(cfg.depth):
            pre = spmm(ctx.A, _first_linear(H, self._params[f"W{l}"]))
            if f"b{l}" in self._params:
                pre = add(pre, self._params[f"b{l}"])
            H = relu(pre)
            reps.append(H)
            H = self._drop(H)
        Z = jk_combine(reps, cfg.jk_combine, self._params.get("combine"))
        logits = matmul(Z, self._params["W_out"])
        if "b_out" in self._params:
            logits = add(logits, self._params["b_out"])
        return logits, reps


class DGCN(GNNModel):
    def build(self):
        cfg = self.config
        self.param("W_in", (self.d_in, cfg.hidden))
        if cfg.bias:
            self.param("b_in", (cfg.hidden,), decay=False, init="zeros")
        for l in range(cfg.depth):
            self.param(f"W{l}", (cfg.hidden, cfg.hidden), decay="conv")
        self.param("combine", (1, cfg.depth), decay=False, init="zeros")
        self.param("beta_raw", (cfg.depth,), decay=False, init="zeros")
        self.param("W_out", (cfg.hidden, self.n_classes))
        if cfg.bias:
            self.param("b_out", (self.n_classes,), decay=False, init="zeros")

    def _forward(self, ctx):
        cfg = self.config
        x = self._input(ctx)
        x = relu(_first_linear(x, self._params["W_in"], self._params.get("b_in")))
        x = self._drop(x)
        beta_row = _as_row(self._params["beta_raw"])
        betas = [sigmoid(element(beta_row, 0, l)) for l in range(cfg.depth)]
        Ws = [self._params[f"W{l}"] for l in range(cfg.depth)]
        Z = dgcn_combine(x, ctx.A, cfg.depth, self._params["combine"], betas, Ws)
        logits = matmul(Z, self._params["W_out"])
        if "b_out" in self._params:
            logits = add(logits, self._params["b_out"])
        return logits, [Z]


def _as_row(t):
    """View a length-L parameter vector as 1 x L for element extraction."""
    if t.data.ndim == 1:
        view = Tensor(t.data.reshape(1, -1))
        view.requires_grad = t.requires_grad
        view._parents = (t,)

        def backward(g):
            T._accum(t, g.reshape(t.data.shape))

        view._backward = backward
        return view
    return t


class CoGNet(GNNModel):
    def build(self):
        cfg = self.config
        self.param("W_in", (self.d_in, cfg.hidden))
        self.param("W_out", (cfg.hidden, self.n_classes))
        if cfg.bias:
            self.param("b_in", (cfg.hidden,), decay=False, init="zeros")
            self.param("b_out", (self.n_classes,), decay=False, init="zeros")
        raw = math.log(cfg.gate_init / (1.0 - cfg.gate_init))
        self.param("lam_raw", (cfg.depth,), decay=False,
                   value=np.full(cfg.depth, raw))
        self.param("gam_raw", (cfg.depth,), decay=False,
                   value=np.full(cfg.depth, raw))
        for l in range(cfg.depth):
            self.param(f"W{l}", (cfg.hidden, cfg.hidden), decay="conv")

    def _forward(self, ctx):
        cfg = self.config
        x = self._input(ctx)
        x = relu(_first_linear(x, self._params["W_in"], self._params.get("b_in")))
        H0 = x
        hidden = [H0]
        H_prev, H = H0, H0
        lam_row = _as_row(self._params["lam_raw"])
        gam_row = _as_row(self._params["gam_raw"])
        for l in range(cfg.depth):
            lam = sigmoid(element(lam_row, 0, l))
            gam = sigmoid(element(gam_row, 0, l))
            coupled_with = H_prev if (l + 1) <= cfg.cognet_switch else H0
            Hd = self._drop(H)
            _, H_next = cognet_layer(Hd, coupled_with, ctx.A, lam, gam,
                                     self._params[f"W{l}"])
            H_prev, H = H, H_next
            hidden.append(H)
        H = self._drop(H)
        logits = matmul(H, self._params["W_out"])
        if "b_out" in self._params:
            logits = add(logits, self._params["b_out"])
        return logits, hidden


_MODEL_CLASSES = {
    "GCN": GCN, "SGC": SGC, "GAT": GAT, "APPNP": APPNP,
    "GCNII": GCNII, "JKNet": JKNet, "DGCN": DGCN, "CoGNet": CoGNet,
}


def build_model(config, d_in, n_classes, seed=0):
    return _MODEL_CLASSES[config.variant](config, d_in, n_classes, seed)


def forward_model(model, ctx, mode="eval", epoch=0, seed=None):
    """Convenience wrapper matching the train/eval mode contract."""
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode: {mode}")
    return model.forward(ctx, training=mode == "train", epoch=epoch, seed=seed)
