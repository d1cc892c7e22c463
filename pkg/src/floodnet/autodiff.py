"""Tape-based reverse-mode autodiff over dense float64 arrays.

Every forward operation appends a node to the active Graph; nodes only
reference earlier nodes, so the insertion order is already topological and
the backward pass is a single reverse sweep.  Values are plain numpy
float64 arrays of rank 1..4 and are never mutated by an operation.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


class ContractError(RuntimeError):
    """Raised when an operation's calling contract is violated."""


def _as_f64(value) -> np.ndarray:
    a = np.asarray(value, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1)
    if a.ndim > 4:
        raise ShapeError(f"rank {a.ndim} exceeds the rank-4 limit")
    return a


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Node:
    """One recorded operation: output value plus its backward rule."""

    __slots__ = ("graph", "idx", "value", "grad", "parents", "bwd", "tag")

    def __init__(self, graph, idx, value, parents, bwd, tag):
        self.graph = graph
        self.idx = idx
        self.value = value
        self.grad = None
        self.parents = parents
        self.bwd = bwd
        self.tag = tag

    @property
    def shape(self):
        return self.value.shape

    # convenience arithmetic; all routed through the owning graph
    def __add__(self, other):
        return self.graph.add(self, other)

    def __sub__(self, other):
        return self.graph.sub(self, other)

    def __mul__(self, other):
        return self.graph.mul(self, other)

    def __neg__(self):
        return self.graph.scale(self, -1.0)


class Graph:
    """Ordered tape of Nodes; single-writer during one forward/backward."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._param_sinks: list[tuple[Node, object, str]] = []

    def _record(self, value, parents, bwd, tag) -> Node:
        node = Node(self, len(self.nodes), value, parents, bwd, tag)
        self.nodes.append(node)
        return node

    def _coerce(self, x) -> Node:
        if isinstance(x, Node):
            if x.graph is not self:
                raise ContractError("node belongs to a different graph")
            return x
        return self.constant(x)

    # ---- leaves -------------------------------------------------------

    def constant(self, value) -> Node:
        return self._record(_as_f64(value), (), None, "const")

    def param(self, store, name: str) -> Node:
        """Leaf backed by a ParamStore entry; backward accumulates there."""
        entry = store.entries[name]
        node = self._record(entry.value, (), None, f"param:{name}")
        self._param_sinks.append((node, store, name))
        return node

    # ---- elementwise --------------------------------------------------

    def add(self, a, b) -> Node:
        a, b = self._coerce(a), self._coerce(b)
        out = a.value + b.value

        def bwd(g, grads):
            grads[a.idx] += _unbroadcast(g, a.shape)
            grads[b.idx] += _unbroadcast(g, b.shape)

        return self._record(out, (a, b), bwd, "add")

    def sub(self, a, b) -> Node:
        a, b = self._coerce(a), self._coerce(b)
        out = a.value - b.value

        def bwd(g, grads):
            grads[a.idx] += _unbroadcast(g, a.shape)
            grads[b.idx] -= _unbroadcast(g, b.shape)

        return self._record(out, (a, b), bwd, "sub")

    def mul(self, a, b) -> Node:
        a, b = self._coerce(a), self._coerce(b)
        out = a.value * b.value

        def bwd(g, grads):
            grads[a.idx] += _unbroadcast(g * b.value, a.shape)
            grads[b.idx] += _unbroadcast(g * a.value, b.shape)

        return self._record(out, (a, b), bwd, "mul")

    def scale(self, a, c: float) -> Node:
        a = self._coerce(a)
        out = a.value * c

        def bwd(g, grads):
            grads[a.idx] += g * c

        return self._record(out, (a,), bwd, "scale")

    def shift(self, a, c: float) -> Node:
        a = self._coerce(a)
        out = a.value + c

        def bwd(g, grads):
            grads[a.idx] += g

        return self._record(out, (a,), bwd, "shift")

    def sigmoid(self, a) -> Node:
        a = self._coerce(a)
        with np.errstate(over="ignore"):
            out = 1.0 / (1.0 + np.exp(-a.value))

        def bwd(g, grads):
            grads[a.idx] += g * out * (1.0 - out)

        return self._record(out, (a,), bwd, "sigmoid")

    def tanh(self, a) -> Node:
        a = self._coerce(a)
        out = np.tanh(a.value)

        def bwd(g, grads):
            grads[a.idx] += g * (1.0 - out * out)

        return self._record(out, (a,), bwd, "tanh")

    def relu(self, a) -> Node:
        a = self._coerce(a)
        out = np.maximum(a.value, 0.0)

        def bwd(g, grads):
            grads[a.idx] += g * (a.value > 0.0)

        return self._record(out, (a,), bwd, "relu")

    def exp(self, a) -> Node:
        a = self._coerce(a)
        out = np.exp(a.value)

        def bwd(g, grads):
            grads[a.idx] += g * out

        return self._record(out, (a,), bwd, "exp")

    def log(self, a) -> Node:
        a = self._coerce(a)
        out = np.log(a.value)

        def bwd(g, grads):
            grads[a.idx] += g / a.value

        return self._record(out, (a,), bwd, "log")

    def powc(self, a, p: float) -> Node:
        a = self._coerce(a)
        out = a.value ** p

        def bwd(g, grads):
            grads[a.idx] += g * p * a.value ** (p - 1.0)

        return self._record(out, (a,), bwd, "powc")

    def clip(self, a, lo: float, hi: float) -> Node:
        a = self._coerce(a)
        out = np.clip(a.value, lo, hi)

        def bwd(g, grads):
            grads[a.idx] += g * ((a.value >= lo) & (a.value <= hi))

        return self._record(out, (a,), bwd, "clip")

    # ---- linear algebra ----------------------------------------------

    def matmul(self, a, b) -> Node:
        a, b = self._coerce(a), self._coerce(b)
        if a.value.ndim != 2 or b.value.ndim != 2:
            raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
        out = a.value @ b.value

        def bwd(g, grads):
            grads[a.idx] += g @ b.value.T
            grads[b.idx] += a.value.T @ g

        return self._record(out, (a, b), bwd, "matmul")

    def transpose(self, a) -> Node:
        a = self._coerce(a)
        if a.value.ndim != 2:
            raise ShapeError(f"transpose needs a rank-2 operand, got {a.shape}")
        out = a.value.T.copy()

        def bwd(g, grads):
            grads[a.idx] += g.T

        return self._record(out, (a,), bwd, "transpose")

    # ---- shape surgery ------------------------------------------------

    def reshape(self, a, shape) -> Node:
        a = self._coerce(a)
        out = a.value.reshape(shape)

        def bwd(g, grads):
            grads[a.idx] += g.reshape(a.shape)

        return self._record(out, (a,), bwd, "reshape")

    def concat(self, parts, axis: int) -> Node:
        parts = [self._coerce(p) for p in parts]
        out = np.concatenate([p.value for p in parts], axis=axis)
        offsets = np.cumsum([0] + [p.shape[axis] for p in parts])

        def bwd(g, grads):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                grads[p.idx] += g[tuple(sl)]

        return self._record(out, tuple(parts), bwd, "concat")

    def narrow(self, a, axis: int, start: int, length: int) -> Node:
        a = self._coerce(a)
        sl = [slice(None)] * a.value.ndim
        sl[axis] = slice(start, start + length)
        sl = tuple(sl)
        out = a.value[sl].copy()

        def bwd(g, grads):
            grads[a.idx][sl] += g

        return self._record(out, (a,), bwd, "narrow")

    # ---- reductions ---------------------------------------------------

    def reduce_sum(self, a, axes=None, keepdims=False) -> Node:
        a = self._coerce(a)
        out = a.value.sum(axis=axes, keepdims=keepdims)
        if out.ndim == 0:
            out = out.reshape(1)

        def bwd(g, grads):
            if axes is None:
                grads[a.idx] += g.reshape((1,) * a.value.ndim)
            elif keepdims:
                grads[a.idx] += g
            else:
                ax = (axes,) if isinstance(axes, int) else axes
                grads[a.idx] += np.expand_dims(g, ax)

        return self._record(out, (a,), bwd, "sum")

    def reduce_mean(self, a, axes=None, keepdims=False) -> Node:
        a = self._coerce(a)
        if axes is None:
            count = a.value.size
        else:
            ax = (axes,) if isinstance(axes, int) else axes
            count = int(np.prod([a.shape[i] for i in ax]))
        return self.scale(self.reduce_sum(a, axes, keepdims), 1.0 / count)

    def softmax_last(self, a) -> Node:
        a = self._coerce(a)
        shifted = a.value - a.value.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=-1, keepdims=True)

        def bwd(g, grads):
            dot = (g * out).sum(axis=-1, keepdims=True)
            grads[a.idx] += out * (g - dot)

        return self._record(out, (a,), bwd, "softmax")

    # ---- neural primitives -------------------------------------------

    def conv2d(self, x, kernel, groups: int = 1) -> Node:
        """Grouped same-padded cross-correlation, stride 1.

        x: (H, W, C_in), kernel: (K, K, C_in // groups, C_out).
        """
        x, kernel = self._coerce(x), self._coerce(kernel)
        if x.value.ndim != 3 or kernel.value.ndim != 4:
            raise ShapeError(f"conv2d expects (H,W,C) and (K,K,Cg,Cout), got {x.shape}, {kernel.shape}")
        H, W, c_in = x.shape
        K, K2, cg, c_out = kernel.shape
        if K != K2 or K % 2 == 0:
            raise ShapeError(f"kernel must be square with odd extent, got {K}x{K2}")
        if c_in % groups or c_out % groups:
            raise ShapeError(f"channels ({c_in} in, {c_out} out) not divisible by groups={groups}")
        if cg != c_in // groups:
            raise ShapeError(f"kernel input slice {cg} != C_in/groups = {c_in // groups}")
        P = K // 2
        xp = np.pad(x.value, ((P, P), (P, P), (0, 0)))
        # patches: (H, W, C_in, K, K)
        S = sliding_window_view(xp, (K, K), axis=(0, 1))
        cig, cog = c_in // groups, c_out // groups
        out = np.empty((H, W, c_out))
        for g_ in range(groups):
            out[:, :, g_ * cog:(g_ + 1) * cog] = np.einsum(
                "hwcij,ijcd->hwd",
                S[:, :, g_ * cig:(g_ + 1) * cig],
                kernel.value[:, :, :, g_ * cog:(g_ + 1) * cog],
            )

        def bwd(g, grads):
            dk = np.empty_like(kernel.value)
            dxp = np.zeros_like(xp)
            for g_ in range(groups):
                cs = slice(g_ * cig, (g_ + 1) * cig)
                ds = slice(g_ * cog, (g_ + 1) * cog)
                go = g[:, :, ds]
                dk[:, :, :, ds] = np.einsum("hwcij,hwd->ijcd", S[:, :, cs], go)
                T = np.einsum("hwd,ijcd->hwcij", go, kernel.value[:, :, :, ds])
                for i in range(K):
                    for j in range(K):
                        dxp[i:i + H, j:j + W, cs] += T[:, :, :, i, j]
            grads[kernel.idx] += dk
            grads[x.idx] += dxp[P:P + H, P:P + W]

        return self._record(out, (x, kernel), bwd, "conv2d")

    def fft2d_magnitude(self, x) -> Node:
        """Per-channel 2D DFT magnitude sqrt(Re^2 + Im^2).

        Gradient at exact spectral zeros is defined as zero.
        """
        x = self._coerce(x)
        if x.value.ndim != 3:
            raise ShapeError(f"fft2d_magnitude expects (H,W,C), got {x.shape}")
        H, W, _ = x.shape
        X = np.fft.fft2(x.value, axes=(0, 1))
        out = np.abs(X)

        def bwd(g, grads):
            safe = np.where(out == 0.0, 1.0, out)
            gc = np.where(out == 0.0, 0.0, g / safe) * X
            grads[x.idx] += np.real(np.fft.ifft2(gc, axes=(0, 1))) * (H * W)

        return self._record(out, (x,), bwd, "fft2d_mag")

    def maxpool2(self, x) -> Node:
        """2x2 max pooling; odd extents are edge-replicated first."""
        x = self._coerce(x)
        if x.value.ndim != 3:
            raise ShapeError(f"maxpool2 expects (H,W,C), got {x.shape}")
        H, W, C = x.shape
        ph, pw = H % 2, W % 2
        xp = np.pad(x.value, ((0, ph), (0, pw), (0, 0)), mode="edge")
        H2, W2 = xp.shape[0] // 2, xp.shape[1] // 2
        r = xp.reshape(H2, 2, W2, 2, C).transpose(0, 2, 4, 1, 3).reshape(H2, W2, C, 4)
        arg = r.argmax(axis=-1)
        out = np.take_along_axis(r, arg[..., None], axis=-1)[..., 0]

        def bwd(g, grads):
            dr = np.zeros((H2, W2, C, 4))
            np.put_along_axis(dr, arg[..., None], g[..., None], axis=-1)
            dxp = dr.reshape(H2, W2, C, 2, 2).transpose(0, 3, 1, 4, 2).reshape(H2 * 2, W2 * 2, C)
            dx = dxp[:H, :W].copy()
            if ph:
                dx[H - 1] += dxp[H, :W]
            if pw:
                dx[:, W - 1] += dxp[:H, W]
            if ph and pw:
                dx[H - 1, W - 1] += dxp[H, W]
            grads[x.idx] += dx

        return self._record(out, (x,), bwd, "maxpool2")

    def upsample2(self, x) -> Node:
        """Nearest-neighbor x2 upsampling; gradient sums replicated cells."""
        x = self._coerce(x)
        if x.value.ndim != 3:
            raise ShapeError(f"upsample2 expects (H,W,C), got {x.shape}")
        out = np.repeat(np.repeat(x.value, 2, axis=0), 2, axis=1)
        H, W, C = x.shape

        def bwd(g, grads):
            grads[x.idx] += g.reshape(H, 2, W, 2, C).sum(axis=(1, 3))

        return self._record(out, (x,), bwd, "upsample2")

    def nearest_subsample(self, x, factor: int) -> Node:
        """Nearest-neighbor downsampling: keep the top-left pixel per block."""
        x = self._coerce(x)
        if x.value.ndim != 3:
            raise ShapeError(f"nearest_subsample expects (H,W,C), got {x.shape}")
        H, W, _ = x.shape
        if H % factor or W % factor:
            raise ShapeError(f"extents {H}x{W} not divisible by factor {factor}")
        out = x.value[::factor, ::factor].copy()

        def bwd(g, grads):
            grads[x.idx][::factor, ::factor] += g

        return self._record(out, (x,), bwd, "subsample")

    def dropout(self, x, rate: float, rng: np.random.Generator) -> Node:
        """Inverted dropout; caller only invokes this in train mode."""
        x = self._coerce(x)
        mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
        out = x.value * mask

        def bwd(g, grads):
            grads[x.idx] += g * mask

        return self._record(out, (x,), bwd, "dropout")

    # ---- backward -----------------------------------------------------

    def backward(self, loss: Node) -> None:
        """Reverse sweep from a scalar loss; fills ParamStore gradients."""
        if loss.graph is not self:
            raise ContractError("loss node belongs to a different graph")
        if loss.value.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {}

        class _Lazy(dict):
            def __missing__(self, idx):
                z = np.zeros_like(self_nodes[idx].value)
                self[idx] = z
                return z

        self_nodes = self.nodes
        grads = _Lazy()
        grads[loss.idx] = np.ones_like(loss.value)
        for node in reversed(self.nodes[:loss.idx + 1]):
            g = grads.get(node.idx)
            if g is None or node.bwd is None:
                continue
            node.bwd(g, grads)
        for node in self.nodes:
            node.grad = grads.get(node.idx)
        for node, store, name in self._param_sinks:
            if node.grad is not None:
                store.entries[name].grad += node.grad
