"""Reverse-mode autodiff over numpy arrays and the two agent networks.

The tape is deliberately small: only the operations the agents and the A2C
loss need are defined. Every op records its parents and a closure mapping
the upstream gradient to one gradient per parent.
"""
from __future__ import annotations

import io
import struct
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import AllMaskedError, CorruptFileError, DimensionError, VersionMismatchError
from .graph import Graph


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        if self.requires_grad and parents:
            self.parents = parents
            self.backward_fn = backward_fn
        else:
            self.parents = ()
            self.backward_fn = None

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float("nan")

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if grad is None:
            grad = np.ones_like(self.value)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=float)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def detach(x: Tensor) -> Tensor:
    return Tensor(x.value)


def add(x, y) -> Tensor:
    x, y = _t(x), _t(y)
    return Tensor(x.value + y.value, (x, y),
                  lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)))


def mul(x, y) -> Tensor:
    x, y = _t(x), _t(y)
    return Tensor(x.value * y.value, (x, y),
                  lambda g: (_unbroadcast(g * y.value, x.shape), _unbroadcast(g * x.value, y.shape)))


def scale(x, c: float) -> Tensor:
    x = _t(x)
    return Tensor(x.value * c, (x,), lambda g: (g * c,))


def square(x) -> Tensor:
    x = _t(x)
    return Tensor(x.value ** 2, (x,), lambda g: (2.0 * x.value * g,))


def total(x) -> Tensor:
    x = _t(x)
    return Tensor(x.value.sum(), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def stack_scalars(xs: list[Tensor]) -> Tensor:
    vals = np.array([x.value.reshape(-1)[0] for x in xs])
    shapes = [x.shape for x in xs]
    return Tensor(vals, tuple(xs), lambda g: tuple(np.full(s, gi) for s, gi in zip(shapes, g)))


def matmul(x, w) -> Tensor:
    x, w = _t(x), _t(w)

    def back(g):
        if w.value.ndim == 1:
            return np.multiply.outer(g, w.value), x.value.T @ g
        return g @ w.value.T, x.value.T @ g

    return Tensor(x.value @ w.value, (x, w), back)


def spmm(m: sp.spmatrix, x: Tensor) -> Tensor:
    """Constant sparse matrix times tensor."""
    return Tensor(m @ x.value, (x,), lambda g: (m.T @ g,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    return Tensor(y, (x,), lambda g: (g * (1.0 - y * y),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.value > 0
    return Tensor(np.where(pos, x.value, slope * x.value), (x,),
                  lambda g: (np.where(pos, g, slope * g),))


def gather(x: Tensor, idx: np.ndarray) -> Tensor:
    n = x.shape[0]

    def back(g):
        out = np.zeros((n,) + g.shape[1:])
        np.add.at(out, idx, g)
        return (out,)

    return Tensor(x.value[idx], (x,), back)


def pick(x: Tensor, i: int) -> Tensor:
    def back(g):
        out = np.zeros_like(x.value)
        out.reshape(-1)[i] = np.asarray(g).reshape(-1)[0]
        return (out,)

    return Tensor(x.value.reshape(-1)[i], (x,), back)


def mean_rows(x: Tensor) -> Tensor:
    n = x.shape[0]
    return Tensor(x.value.mean(axis=0, keepdims=True), (x,),
                  lambda g: (np.broadcast_to(g / n, x.shape).copy(),))


def segment_softmax(x: Tensor, indptr: np.ndarray) -> Tensor:
    """Softmax of a 1-D tensor within consecutive segments given by ``indptr``."""
    v = x.value
    starts = indptr[:-1]
    counts = np.diff(indptr)
    seg = np.repeat(np.arange(len(counts)), counts)
    mx = np.maximum.reduceat(v, starts)
    ex = np.exp(v - mx[seg])
    y = ex / np.add.reduceat(ex, starts)[seg]

    def back(g):
        dot = np.add.reduceat(g * y, starts)
        return (y * (g - dot[seg]),)

    return Tensor(y, (x,), back)


def edge_aggregate(alpha: Tensor, h: Tensor, src: np.ndarray, dst: np.ndarray, n: int,
                   indptr: np.ndarray | None = None) -> Tensor:
    """out[i] = sum over edges e with dst[e] = i of alpha[e] * h[src[e]].

    With ``indptr`` the edges must be grouped by ``dst`` and every node must own
    at least one edge (self-loops guarantee this); the sum is then a segment
    reduction instead of a sparse product.
    """
    if indptr is not None:
        out = np.add.reduceat(alpha.value[:, None] * h.value[src], indptr[:-1], axis=0)
    else:
        out = sp.csr_matrix((alpha.value, (dst, src)), shape=(n, h.shape[0])) @ h.value

    def back(g):
        da = np.einsum("ij,ij->i", g[dst], h.value[src])
        mat = sp.csr_matrix((alpha.value, (dst, src)), shape=(n, h.shape[0]))
        return da, mat.T @ g

    return Tensor(out, (alpha, h), back)


def masked_log_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Log-softmax over unmasked entries; masked entries get -inf."""
    z = scores.value.reshape(-1)
    keep = ~np.asarray(mask, dtype=bool)
    if not keep.any():
        raise AllMaskedError("every node is masked")
    mx = z[keep].max()
    lse = mx + np.log(np.exp(z[keep] - mx).sum())
    out = np.full_like(z, -np.inf)
    out[keep] = z[keep] - lse
    p = np.zeros_like(z)
    p[keep] = np.exp(out[keep])
    shape = scores.shape

    def back(g):
        g = np.where(keep, g, 0.0)
        return ((g - p * g.sum()).reshape(shape),)

    return Tensor(out, (scores,), back)


# ---------------------------------------------------------------- layers

@dataclass
class GraphContext:
    """Per-graph constants the layers need; build once per (sub)graph."""

    n: int
    mean_op: sp.csr_matrix
    att_src: np.ndarray
    att_dst: np.ndarray
    att_indptr: np.ndarray

    @classmethod
    def of(cls, g: Graph) -> "GraphContext":
        loops = (g.csr + sp.identity(g.n, format="csr")).tocsr()
        loops.sort_indices()
        dst = np.repeat(np.arange(g.n), np.diff(loops.indptr))
        return cls(g.n, g.mean_operator, loops.indices.astype(np.int64), dst, loops.indptr.astype(np.int64))


def sage(x: Tensor, ctx: GraphContext, w_root, w_nbr, bias) -> Tensor:
    """x W_root + mean_{neighbors}(x) W_nbr + bias."""
    if x.shape[1] != w_root.shape[0] or x.shape[1] != w_nbr.shape[0]:
        raise DimensionError(f"SAGE expects {w_root.shape[0]} channels, got {x.shape[1]}")
    return add(add(matmul(x, w_root), matmul(spmm(ctx.mean_op, x), w_nbr)), bias)


def gat(x: Tensor, ctx: GraphContext, w, a_src, a_dst, bias, slope: float = 0.2) -> Tensor:
    """Single-head graph attention with self-loops."""
    if x.shape[1] != w.shape[0]:
        raise DimensionError(f"GAT expects {w.shape[0]} channels, got {x.shape[1]}")
    h = matmul(x, w)
    s_src = matmul(h, a_src)
    s_dst = matmul(h, a_dst)
    logits = leaky_relu(add(gather(s_src, ctx.att_src), gather(s_dst, ctx.att_dst)), slope)
    alpha = segment_softmax(logits, ctx.att_indptr)
    return add(edge_aggregate(alpha, h, ctx.att_src, ctx.att_dst, ctx.n, ctx.att_indptr), bias)


def linear(x: Tensor, w, b) -> Tensor:
    if x.shape[1] != w.shape[0]:
        raise DimensionError(f"linear layer expects {w.shape[0]} channels, got {x.shape[1]}")
    return add(matmul(x, w), b)


def attention_pool(x: Tensor, gate: Tensor) -> Tensor:
    """Softmax(gate) over all nodes, then the weighted sum of rows of ``x``."""
    w = segment_softmax(_reshape(gate, (-1,)), np.array([0, x.shape[0]]))
    return matmul(_reshape(w, (1, -1)), x)


def _reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return Tensor(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------- parameters

class ParamStore:
    """Named parameter arrays plus gradient buffers for one agent network."""

    def __init__(self, kind: str, channels: int, shapes: "OrderedDict[str, tuple]", fan_in: dict, seed=None):
        self.kind = kind
        self.channels = channels
        self.shapes = OrderedDict(shapes)
        rng = np.random.default_rng(seed)
        self.values = OrderedDict()
        for name, shape in self.shapes.items():
            bound = 1.0 / np.sqrt(fan_in[name])
            self.values[name] = rng.uniform(-bound, bound, size=shape)
        self.grads = OrderedDict((k, np.zeros(s)) for k, s in self.shapes.items())
        self.lock = threading.Lock()

    def count(self) -> int:
        return int(sum(v.size for v in self.values.values()))

    def as_tensors(self, requires_grad: bool = True) -> dict[str, Tensor]:
        """Leaf tensors over a snapshot of the current values."""
        with self.lock:
            return {k: Tensor(v.copy(), requires_grad=requires_grad) for k, v in self.values.items()}

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def collect_grads(self, leaves: dict[str, Tensor]) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, np.zeros(self.shapes[k]) if leaves[k].grad is None else leaves[k].grad.copy())
                           for k in self.shapes)

    def apply_gradients(self, grads, lr: float) -> None:
        """Plain gradient step, serialized under the store lock."""
        with self.lock:
            for k, g in grads.items():
                self.grads[k][...] = g
                self.values[k] -= lr * g

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.values.values()])

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=float)
        if vec.size != self.count():
            raise DimensionError("flat parameter vector has the wrong length")
        pos = 0
        for k, v in self.values.items():
            v[...] = vec[pos:pos + v.size].reshape(v.shape)
            pos += v.size

    def copy(self) -> "ParamStore":
        other = object.__new__(ParamStore)
        other.kind, other.channels = self.kind, self.channels
        other.shapes = OrderedDict(self.shapes)
        other.values = OrderedDict((k, v.copy()) for k, v in self.values.items())
        other.grads = OrderedDict((k, g.copy()) for k, g in self.grads.items())
        other.lock = threading.Lock()
        return other

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.values.values())


@dataclass
class AgentOutput:
    actor: Tensor
    critic: Tensor | None = None

    @property
    def log_probs(self) -> np.ndarray:
        return self.actor.value

    @property
    def value(self) -> float | None:
        return None if self.critic is None else self.critic.item()


def node_mask(features: np.ndarray, mask_features) -> np.ndarray:
    idx = list(mask_features)
    if not idx:
        return np.zeros(features.shape[0], dtype=bool)
    return np.any(features[:, idx] != 0, axis=1)


# ---------------------------------------------------------------- refinement agent

REFINE_KINDS = {5: "edge", 7: "vertex"}


def refine_agent_params(channels: int, seed=None) -> ParamStore:
    """Parameters of the SAGE actor-critic used to refine separators."""
    c = channels
    shapes, fan = OrderedDict(), {}
    for layer, out in (("sage1", c), ("sage2", c), ("actor", 1), ("critic_sage", c)):
        shapes[f"{layer}.w_root"] = (c, out)
        shapes[f"{layer}.w_nbr"] = (c, out)
        shapes[f"{layer}.bias"] = (out,)
        for suffix in ("w_root", "w_nbr", "bias"):
            fan[f"{layer}.{suffix}"] = c
    shapes["critic_lin.w"] = (c, 1)
    shapes["critic_lin.b"] = (1,)
    fan["critic_lin.w"] = fan["critic_lin.b"] = c
    kind = REFINE_KINDS.get(c, "refine")
    return ParamStore(kind, c, shapes, fan, seed)


def _sage_layer(x, ctx, p, name):
    return sage(x, ctx, p[f"{name}.w_root"], p[f"{name}.w_nbr"], p[f"{name}.bias"])


def _refine_branches(x: Tensor, ctx: GraphContext, params, training: bool):
    h = tanh(_sage_layer(x, ctx, params, "sage1"))
    h = tanh(_sage_layer(h, ctx, params, "sage2"))
    scores = _sage_layer(h, ctx, params, "actor")
    if not training:
        return scores, None
    c = detach(h)
    c = tanh(_sage_layer(c, ctx, params, "critic_sage"))
    c = linear(c, params["critic_lin.w"], params["critic_lin.b"])
    return scores, tanh(mean_rows(c))


def refine_agent_forward(ctx: GraphContext, features: np.ndarray, mask_features, params: dict[str, Tensor],
                         training: bool = False, extra_mask: np.ndarray | None = None,
                         side_swap=None) -> AgentOutput:
    """SAGE actor-critic forward pass.

    ``side_swap`` is an optional channel permutation exchanging the two
    sides; the actor scores and critic value are then averaged over the
    features and their swapped copy, so the policy cannot favour a side by
    its name.
    """
    channels = params["sage1.w_root"].shape[0]
    if features.shape[1] != channels:
        raise DimensionError(f"agent expects {channels} feature channels, got {features.shape[1]}")
    mask = node_mask(features, mask_features)
    if extra_mask is not None:
        mask = mask | extra_mask
    scores, critic = _refine_branches(Tensor(features), ctx, params, training)
    if side_swap is not None:
        s2, c2 = _refine_branches(Tensor(features[:, list(side_swap)]), ctx, params, training)
        scores = scale(add(scores, s2), 0.5)
        if training:
            critic = scale(add(critic, c2), 0.5)
    actor = masked_log_softmax(scores, mask)
    if not training:
        return AgentOutput(actor)
    return AgentOutput(actor, _reshape(critic, ()))


# ---------------------------------------------------------------- coarsest-level agent

GAT_UNITS = 10
DENSE_UNITS = 5


def coarse_agent_params(channels: int = 2, seed=None) -> ParamStore:
    shapes, fan = OrderedDict(), {}
    cin = channels
    for i in range(1, 5):
        name = f"gat{i}"
        shapes[f"{name}.w"] = (cin, GAT_UNITS)
        shapes[f"{name}.a_src"] = (GAT_UNITS,)
        shapes[f"{name}.a_dst"] = (GAT_UNITS,)
        shapes[f"{name}.bias"] = (GAT_UNITS,)
        fan[f"{name}.w"] = cin
        fan[f"{name}.a_src"] = fan[f"{name}.a_dst"] = fan[f"{name}.bias"] = GAT_UNITS
        cin = GAT_UNITS
    dense = [("dense1", GAT_UNITS, DENSE_UNITS), ("dense2", DENSE_UNITS, DENSE_UNITS),
             ("actor1", DENSE_UNITS, DENSE_UNITS), ("actor2", DENSE_UNITS, 1),
             ("gate1", DENSE_UNITS, DENSE_UNITS), ("gate2", DENSE_UNITS, 1),
             ("critic1", DENSE_UNITS, DENSE_UNITS), ("critic2", DENSE_UNITS, 1)]
    for name, i, o in dense:
        shapes[f"{name}.w"] = (i, o)
        shapes[f"{name}.b"] = (o,)
        fan[f"{name}.w"] = fan[f"{name}.b"] = i
    return ParamStore("coarse", channels, shapes, fan, seed)


def _lin(x, p, name):
    return linear(x, p[f"{name}.w"], p[f"{name}.b"])


def coarse_agent_forward(ctx: GraphContext, features: np.ndarray, params: dict[str, Tensor],
                         training: bool = False, mask_features=(1,)) -> AgentOutput:
    channels = params["gat1.w"].shape[0]
    if features.shape[1] != channels:
        raise DimensionError(f"coarse agent expects {channels} feature channels, got {features.shape[1]}")
    mask = node_mask(features, mask_features)
    h = Tensor(features)
    for i in range(1, 5):
        h = tanh(gat(h, ctx, params[f"gat{i}.w"], params[f"gat{i}.a_src"], params[f"gat{i}.a_dst"],
                     params[f"gat{i}.bias"]))
    h = tanh(_lin(h, params, "dense1"))
    h = tanh(_lin(h, params, "dense2"))
    a = tanh(_lin(h, params, "actor1"))
    a = tanh(_lin(a, params, "actor2"))
    actor = masked_log_softmax(a, mask)
    if not training:
        return AgentOutput(actor)
    gate = _lin(tanh(_lin(h, params, "gate1")), params, "gate2")
    pooled = attention_pool(h, gate)
    c = tanh(_lin(pooled, params, "critic1"))
    c = _lin(c, params, "critic2")
    return AgentOutput(actor, _reshape(c, ()))


# ---------------------------------------------------------------- checkpoints

MAGIC = b"DRLPCKPT"
FORMAT_VERSION = 1
TASK_CODES = {"edge": 0, "vertex": 1, "coarse": 2, "refine": 3}
TASK_NAMES = {v: k for k, v in TASK_CODES.items()}


def save_checkpoint(store: ParamStore, path) -> None:
    """Write parameters as a little-endian binary file with a self-describing header."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IBII", FORMAT_VERSION, TASK_CODES[store.kind], store.channels, len(store.shapes)))
    for name, shape in store.shapes.items():
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", len(shape)))
        buf.write(struct.pack(f"<{len(shape)}I", *shape))
    with store.lock:
        for v in store.values.values():
            buf.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path, kind: str | None = None, channels: int | None = None) -> ParamStore:
    data = Path(path).read_bytes()
    view = memoryview(data)
    pos = 0

    def take(nbytes):
        nonlocal pos
        if pos + nbytes > len(data):
            raise CorruptFileError(f"{path}: truncated checkpoint")
        chunk = view[pos:pos + nbytes]
        pos += nbytes
        return chunk

    if bytes(take(len(MAGIC))) != MAGIC:
        raise CorruptFileError(f"{path}: not a checkpoint file")
    version, task, ch, nlayers = struct.unpack("<IBII", take(13))
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if task not in TASK_NAMES:
        raise CorruptFileError(f"{path}: unknown task code {task}")
    task_name = TASK_NAMES[task]
    if kind is not None and kind != task_name:
        raise VersionMismatchError(f"{path}: checkpoint is for task {task_name!r}, expected {kind!r}")
    if channels is not None and channels != ch:
        raise VersionMismatchError(f"{path}: checkpoint has {ch} channels, expected {channels}")
    shapes = OrderedDict()
    for _ in range(nlayers):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shapes[name] = tuple(struct.unpack(f"<{ndim}I", take(4 * ndim)))
    if task_name == "coarse":
        store = coarse_agent_params(ch)
    else:
        store = refine_agent_params(ch)
        store.kind = task_name
    if OrderedDict(store.shapes) != shapes:
        raise VersionMismatchError(f"{path}: layer table does not match the {task_name} network")
    for name, shape in shapes.items():
        size = int(np.prod(shape)) if shape else 1
        store.values[name] = np.frombuffer(take(8 * size), dtype="<f8").astype(float).reshape(shape)
    if pos != len(data):
        raise CorruptFileError(f"{path}: trailing bytes after parameter blocks")
    return store
