"""Reverse-mode automatic differentiation over numpy arrays.

Every operation returns a Value node holding the forward result and a closure
that routes gradients to the operands. backward() on a scalar output sorts
the graph topologically and runs the closures in reverse, accumulating into
.grad, so shared subexpressions and repeated parameter use need no special
casing. All data is float64.

Gradients are lazy: .grad is None until the first contribution arrives, and
accumulation rebinds (grad = grad + g) rather than mutating, so gradient
buffers may alias downstream buffers safely. Hot composite kernels that the
network uses in inner loops (lstm_cell, lstm_sequence, additive_attention,
linear, conv2d_same) are single nodes with hand-written backward rules; the
finite-difference checker validates each one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def _noop():
    return None


def _acc(node: "Value", g: np.ndarray):
    node.grad = g if node.grad is None else node.grad + g


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _basic_key(key) -> bool:
    """True when indexing cannot visit the same element twice."""
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(part, (int, np.integer, slice)) for part in parts)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form avoids overflow warnings for large negative inputs
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Value:
    """A node in the computation graph: an ndarray and its gradient."""

    __slots__ = ("data", "grad", "_backward", "_parents", "name")

    def __init__(self, data, _parents: tuple = (), name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._backward = _noop
        self._parents = _parents
        self.name = name

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Value(shape={self.data.shape}{label})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def grad_or_zeros(self) -> np.ndarray:
        return np.zeros_like(self.data) if self.grad is None else np.asarray(self.grad)

    def __add__(self, other) -> "Value":
        other = other if isinstance(other, Value) else Value(other)
        out = Value(self.data + other.data, (self, other))

        def _backward():
            _acc(self, _unbroadcast(out.grad, self.data.shape))
            _acc(other, _unbroadcast(out.grad, other.data.shape))

        out._backward = _backward
        return out

    def __mul__(self, other) -> "Value":
        other = other if isinstance(other, Value) else Value(other)
        out = Value(self.data * other.data, (self, other))

        def _backward():
            _acc(self, _unbroadcast(other.data * out.grad, self.data.shape))
            _acc(other, _unbroadcast(self.data * out.grad, other.data.shape))

        out._backward = _backward
        return out

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self) -> "Value":
        return self * -1.0

    def __sub__(self, other) -> "Value":
        if not isinstance(other, Value):
            other = Value(-np.asarray(other, dtype=np.float64))
            return self + other
        return self + (-other)

    def __matmul__(self, other: "Value") -> "Value":
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError(
                f"matmul expects 2-D operands, got {self.data.shape} @ {other.data.shape}"
            )
        out = Value(self.data @ other.data, (self, other))

        def _backward():
            _acc(self, out.grad @ other.data.T)
            _acc(other, self.data.T @ out.grad)

        out._backward = _backward
        return out

    @property
    def T(self) -> "Value":
        out = Value(self.data.T, (self,))

        def _backward():
            _acc(self, out.grad.T)

        out._backward = _backward
        return out

    def reshape(self, *shape) -> "Value":
        out = Value(self.data.reshape(*shape), (self,))

        def _backward():
            _acc(self, out.grad.reshape(self.data.shape))

        out._backward = _backward
        return out

    def __getitem__(self, key) -> "Value":
        out = Value(self.data[key], (self,))
        if _basic_key(key):

            def _backward():
                full = np.zeros_like(self.data)
                full[key] = out.grad
                _acc(self, full)

        else:

            def _backward():
                full = np.zeros_like(self.data)
                np.add.at(full, key, out.grad)
                _acc(self, full)

        out._backward = _backward
        return out

    def sum(self, axis=None, keepdims: bool = False) -> "Value":
        out = Value(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def _backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _acc(self, np.broadcast_to(g, self.data.shape))

        out._backward = _backward
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Value":
        size = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / size)

    def tanh(self) -> "Value":
        t = np.tanh(self.data)
        out = Value(t, (self,))

        def _backward():
            _acc(self, (1.0 - t * t) * out.grad)

        out._backward = _backward
        return out

    def sigmoid(self) -> "Value":
        s = _sigmoid(self.data)
        out = Value(s, (self,))

        def _backward():
            _acc(self, s * (1.0 - s) * out.grad)

        out._backward = _backward
        return out

    def relu(self) -> "Value":
        out = Value(np.maximum(self.data, 0.0), (self,))

        def _backward():
            _acc(self, (self.data > 0.0) * out.grad)

        out._backward = _backward
        return out

    def log(self) -> "Value":
        out = Value(np.log(self.data), (self,))

        def _backward():
            _acc(self, out.grad / self.data)

        out._backward = _backward
        return out

    def pow(self, exponent: float) -> "Value":
        out = Value(self.data**exponent, (self,))

        def _backward():
            _acc(self, exponent * self.data ** (exponent - 1.0) * out.grad)

        out._backward = _backward
        return out

    def backward(self):
        """Run reverse-mode accumulation from this scalar output.

        Each call computes the gradient of this output alone and adds it to
        whatever the reachable nodes already hold, so repeated calls without
        zero_grad() accumulate exact multiples. Grads held before the call
        are set aside during the pass and merged back afterwards; the pass
        itself always starts from clean buffers.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar output, got shape {self.data.shape}")
        topo: list[Value] = []
        visited: set[int] = set()
        stack: list[tuple[Value, bool]] = [(self, False)]
        while stack:
            node, children_done = stack.pop()
            if children_done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        held = [(node, node.grad) for node in topo if node.grad is not None]
        for node, _ in held:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            node._backward()
        for node, old in held:
            node.grad = old if node.grad is None else old + node.grad


class Parameter(Value):
    """A named leaf Value; the name keys checkpoints and optimizer state."""

    __slots__ = ()

    def __init__(self, data, name: str):
        if not name:
            raise ValueError("parameters need a non-empty name")
        super().__init__(data, (), name)


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); fan_in = product of all but the last dim."""
    fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else int(shape[0])
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def save_checkpoint(stem: str | Path, params: dict[str, Value], step: int):
    """Write `<stem>.json` (manifest) and `<stem>.bin` (little-endian float64).

    The binary file concatenates each parameter's raw bytes in manifest order.
    """
    stem = Path(stem)
    manifest = {
        "step": int(step),
        "dtype": "<f8",
        "params": [{"name": name, "shape": list(v.data.shape)} for name, v in params.items()],
    }
    stem.with_suffix(".json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    blob = b"".join(
        np.ascontiguousarray(v.data, dtype="<f8").tobytes() for v in params.values()
    )
    stem.with_suffix(".bin").write_bytes(blob)


def load_checkpoint(stem: str | Path) -> tuple[dict[str, np.ndarray], int]:
    stem = Path(stem)
    manifest = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
    blob = stem.with_suffix(".bin").read_bytes()
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        chunk = np.frombuffer(blob[offset : offset + nbytes], dtype=manifest["dtype"])
        arrays[entry["name"]] = chunk.reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(blob):
        raise ValueError(f"checkpoint blob has {len(blob)} bytes, manifest expects {offset}")
    return arrays, int(manifest["step"])


def softmax(x: Value, axis: int = -1) -> Value:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Value(y, (x,))

    def _backward():
        g = out.grad
        _acc(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    out._backward = _backward
    return out


def log_softmax(x: Value, axis: int = -1) -> Value:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    ls = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = Value(ls, (x,))

    def _backward():
        g = out.grad
        _acc(x, g - np.exp(ls) * g.sum(axis=axis, keepdims=True))

    out._backward = _backward
    return out


def concat(values, axis: int = 0) -> Value:
    values = tuple(values)
    out = Value(np.concatenate([v.data for v in values], axis=axis), values)
    sizes = [v.data.shape[axis] for v in values]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def _backward():
        index = [slice(None)] * out.data.ndim
        for v, start, stop in zip(values, offsets[:-1], offsets[1:]):
            index[axis] = slice(int(start), int(stop))
            _acc(v, out.grad[tuple(index)])

    out._backward = _backward
    return out


def linear(x: Value, w: Value, b: Value) -> Value:
    """Affine map x @ w + b as a single node; x (n, m), w (m, k), b (k,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"linear got x {x.data.shape}, w {w.data.shape}")
    out = Value(x.data @ w.data + b.data, (x, w, b))

    def _backward():
        g = out.grad
        _acc(x, g @ w.data.T)
        _acc(w, x.data.T @ g)
        _acc(b, g.sum(axis=0))

    out._backward = _backward
    return out


def embedding_lookup(table: Value, ids) -> Value:
    """Select rows of an embedding table; repeated ids accumulate gradient."""
    ids = np.asarray(ids, dtype=int)
    out = Value(table.data[ids], (table,))

    def _backward():
        full = np.zeros_like(table.data)
        np.add.at(full, ids, out.grad)
        _acc(table, full)

    out._backward = _backward
    return out


def conv2d_same(x: Value, w: Value, b: Value) -> Value:
    """Same-padded 2-D convolution of an HWC input, via im2col.

    x: (h, w, c_in), w: (k, k, c_in, c_out) with odd k, b: (c_out,).
    Returns (h, w, c_out).
    """
    height, width, c_in = x.data.shape
    k, k2, c_in2, c_out = w.data.shape
    if k != k2 or c_in != c_in2:
        raise ValueError(f"kernel {w.data.shape} does not match input {x.data.shape}")
    if k % 2 != 1:
        raise ValueError(f"same padding needs an odd kernel size, got {k}")
    pad = k // 2
    padded = np.pad(x.data, ((pad, pad), (pad, pad), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(0, 1))
    # windows is (h, w, c_in, k, k); reorder to match the (k, k, c_in) kernel layout
    patches = np.ascontiguousarray(windows.transpose(0, 1, 3, 4, 2)).reshape(
        height * width, k * k * c_in
    )
    w_flat = w.data.reshape(k * k * c_in, c_out)
    out = Value((patches @ w_flat + b.data).reshape(height, width, c_out), (x, w, b))

    def _backward():
        g_flat = out.grad.reshape(height * width, c_out)
        _acc(w, (patches.T @ g_flat).reshape(k, k, c_in, c_out))
        _acc(b, g_flat.sum(axis=0))
        d_patches = (g_flat @ w_flat.T).reshape(height, width, k, k, c_in)
        d_padded = np.zeros_like(padded)
        for i in range(k):
            for j in range(k):
                d_padded[i : i + height, j : j + width, :] += d_patches[:, :, i, j, :]
        _acc(x, d_padded[pad : pad + height, pad : pad + width, :])

    out._backward = _backward
    return out


def lstm_cell(x: Value, h: Value, c: Value, w: Value, b: Value) -> Value:
    """One fused LSTM step; returns (1, 2*hidden): new h and new c concatenated.

    x: (1, input_dim), h and c: (1, hidden), w: (input_dim + hidden, 4*hidden)
    with gate blocks ordered input/forget/cell/output, b: (4*hidden,).
    """
    hidden = h.data.shape[1]
    in_dim = x.data.shape[1]
    if w.data.shape != (in_dim + hidden, 4 * hidden):
        raise ValueError(f"weight shape {w.data.shape} != {(in_dim + hidden, 4 * hidden)}")
    xh = np.concatenate([x.data, h.data], axis=1)
    z = xh @ w.data + b.data
    gate_i = _sigmoid(z[:, :hidden])
    gate_f = _sigmoid(z[:, hidden : 2 * hidden])
    gate_g = np.tanh(z[:, 2 * hidden : 3 * hidden])
    gate_o = _sigmoid(z[:, 3 * hidden :])
    c_new = gate_f * c.data + gate_i * gate_g
    tanh_c = np.tanh(c_new)
    h_new = gate_o * tanh_c
    out = Value(np.concatenate([h_new, c_new], axis=1), (x, h, c, w, b))

    def _backward():
        g_h = out.grad[:, :hidden]
        g_c = out.grad[:, hidden:]
        d_c = g_c + g_h * gate_o * (1.0 - tanh_c * tanh_c)
        d_z = np.empty_like(z)
        d_z[:, :hidden] = d_c * gate_g * gate_i * (1.0 - gate_i)
        d_z[:, hidden : 2 * hidden] = d_c * c.data * gate_f * (1.0 - gate_f)
        d_z[:, 2 * hidden : 3 * hidden] = d_c * gate_i * (1.0 - gate_g * gate_g)
        d_z[:, 3 * hidden :] = g_h * tanh_c * gate_o * (1.0 - gate_o)
        _acc(w, xh.T @ d_z)
        _acc(b, d_z[0])
        d_xh = d_z @ w.data.T
        _acc(x, d_xh[:, :in_dim])
        _acc(h, d_xh[:, in_dim:])
        _acc(c, d_c * gate_f)

    out._backward = _backward
    return out


def lstm_sequence(x: Value, w: Value, b: Value, reverse: bool = False) -> Value:
    """Run an LSTM over all rows of x (seq_len, input_dim) from zero state.

    Returns the per-position hidden states (seq_len, hidden), ordered by input
    position regardless of sweep direction. One node for the whole sweep keeps
    encoder graphs small; the backward rule is standard truncated BPTT.
    """
    n, in_dim = x.data.shape
    four_hidden = w.data.shape[1]
    hidden = four_hidden // 4
    if w.data.shape != (in_dim + hidden, four_hidden):
        raise ValueError(f"weight shape {w.data.shape} != {(in_dim + hidden, four_hidden)}")
    order = range(n - 1, -1, -1) if reverse else range(n)
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    states = np.zeros((n, hidden))
    cache = {}
    for t in order:
        xh = np.concatenate([x.data[t], h])
        z = xh @ w.data + b.data
        gate_i = _sigmoid(z[:hidden])
        gate_f = _sigmoid(z[hidden : 2 * hidden])
        gate_g = np.tanh(z[2 * hidden : 3 * hidden])
        gate_o = _sigmoid(z[3 * hidden :])
        c_new = gate_f * c + gate_i * gate_g
        tanh_c = np.tanh(c_new)
        cache[t] = (xh, gate_i, gate_f, gate_g, gate_o, c, tanh_c)
        c = c_new
        h = gate_o * tanh_c
        states[t] = h
    out = Value(states, (x, w, b))

    def _backward():
        d_x = np.zeros_like(x.data)
        d_w = np.zeros_like(w.data)
        d_b = np.zeros_like(b.data)
        d_h_next = np.zeros(hidden)
        d_c_next = np.zeros(hidden)
        for t in reversed(order):
            xh, gate_i, gate_f, gate_g, gate_o, c_prev, tanh_c = cache[t]
            d_h = out.grad[t] + d_h_next
            d_c = d_c_next + d_h * gate_o * (1.0 - tanh_c * tanh_c)
            d_z = np.empty(four_hidden)
            d_z[:hidden] = d_c * gate_g * gate_i * (1.0 - gate_i)
            d_z[hidden : 2 * hidden] = d_c * c_prev * gate_f * (1.0 - gate_f)
            d_z[2 * hidden : 3 * hidden] = d_c * gate_i * (1.0 - gate_g * gate_g)
            d_z[3 * hidden :] = d_h * tanh_c * gate_o * (1.0 - gate_o)
            d_w += np.outer(xh, d_z)
            d_b += d_z
            d_xh = w.data @ d_z
            d_x[t] = d_xh[:in_dim]
            d_h_next = d_xh[in_dim:]
            d_c_next = d_c * gate_f
        _acc(x, d_x)
        _acc(w, d_w)
        _acc(b, d_b)

    out._backward = _backward
    return out


def additive_attention(
    query: Value, keys: Value, proj_keys: Value, w_q: Value, bias: Value, v: Value
) -> Value:
    """Tanh-scored attention of one query row over key rows, as a single node.

    Scores are v' tanh(query @ w_q + proj_keys + bias) with proj_keys the
    precomputed key projections. Returns (1, n + key_dim): the softmax weights
    over the n keys concatenated with the context vector (weights @ keys).
    """
    n, key_dim = keys.data.shape
    u = query.data @ w_q.data + proj_keys.data + bias.data
    t = np.tanh(u)
    scores = (t @ v.data)[:, 0]
    e = np.exp(scores - scores.max())
    weights = e / e.sum()
    context = weights @ keys.data
    out = Value(
        np.concatenate([weights, context])[None, :], (query, keys, proj_keys, w_q, bias, v)
    )

    def _backward():
        g = out.grad[0]
        g_w = g[:n]
        g_ctx = g[n:]
        d_weights = g_w + keys.data @ g_ctx
        _acc(keys, np.outer(weights, g_ctx))
        d_scores = weights * (d_weights - float(d_weights @ weights))
        d_t = np.outer(d_scores, v.data[:, 0])
        _acc(v, (t.T @ d_scores)[:, None])
        d_u = (1.0 - t * t) * d_t
        d_u_sum = d_u.sum(axis=0, keepdims=True)
        _acc(query, d_u_sum @ w_q.data.T)
        _acc(w_q, query.data.T @ d_u_sum)
        _acc(proj_keys, d_u)
        _acc(bias, d_u_sum[0])

    out._backward = _backward
    return out


def dropout(x: Value, rate: float, rng: np.random.Generator, training: bool) -> Value:
    """Inverted dropout: kept units scale by 1/(1-rate); identity at eval."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = Value(x.data * mask, (x,))

    def _backward():
        _acc(x, mask * out.grad)

    out._backward = _backward
    return out


def cross_entropy(logits: Value, index: int) -> Value:
    """Negative log-softmax probability of a class index; logits (k,) or (1, k)."""
    flat = logits.data.reshape(-1)
    index = int(index)
    if not 0 <= index < flat.size:
        raise IndexError(f"class index {index} out of range for {flat.size} logits")
    m = flat.max()
    log_probs = flat - (m + np.log(np.exp(flat - m).sum()))
    out = Value(-log_probs[index], (logits,))

    def _backward():
        d = np.exp(log_probs)
        d[index] -= 1.0
        _acc(logits, (d * float(out.grad)).reshape(logits.data.shape))

    out._backward = _backward
    return out


def relative_error(a: float, b: float, floor: float = 1e-6) -> float:
    """|a-b| / max(|a|,|b|), treating a pair of near-zeros as an exact match."""
    if abs(a) < floor and abs(b) < floor:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b))


@dataclass
class GradCheckRecord:
    param: str
    index: tuple
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckResult:
    records: list[GradCheckRecord]

    @property
    def max_rel_err(self) -> float:
        return max((r.rel_err for r in self.records), default=0.0)

    def worst(self) -> GradCheckRecord:
        return max(self.records, key=lambda r: r.rel_err)


def grad_check(
    f,
    params: list[Value],
    eps: float = 1e-5,
    coords: int = 50,
    rng: np.random.Generator | None = None,
) -> GradCheckResult:
    """Compare backward() gradients against central differences.

    `f` must rebuild the graph from the given leaf `params` and return the
    scalar output; it is re-run with individual coordinates nudged by +/-eps,
    so it must be deterministic. `coords` coordinates are sampled without
    replacement across all parameters.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for p in params:
        p.zero_grad()
    f().backward()
    analytic = [p.grad_or_zeros().copy() for p in params]
    sizes = np.array([p.data.size for p in params])
    bounds = np.cumsum(sizes)
    total = int(bounds[-1])
    chosen = rng.choice(total, size=min(coords, total), replace=False)
    records = []
    for flat in sorted(int(c) for c in chosen):
        which = int(np.searchsorted(bounds, flat, side="right"))
        local = flat - (int(bounds[which - 1]) if which > 0 else 0)
        param = params[which]
        index = np.unravel_index(local, param.data.shape)
        original = param.data[index]
        param.data[index] = original + eps
        f_plus = float(f().data)
        param.data[index] = original - eps
        f_minus = float(f().data)
        param.data[index] = original
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = float(analytic[which][index])
        records.append(
            GradCheckRecord(
                param=param.name or f"param{which}",
                index=index,
                analytic=a,
                numeric=numeric,
                rel_err=relative_error(a, numeric),
            )
        )
    return GradCheckResult(records)
