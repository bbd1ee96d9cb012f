"""Small reverse-mode differentiation core used by the recommender models.

Values are float64 numpy arrays. Operations accept an optional ``Tape``; with
``tape=None`` nothing is recorded, which is what scoring/evaluation uses.
Most ops take a leading batch axis so a whole mini-batch is one tape entry.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.special import expit

DTYPE = np.float64
PRED_EPS = 1e-12
CHECKPOINT_MAGIC = b"LCMR1"


class EmptyMemoryError(ValueError):
    """Attention was asked to read from a memory with no slots."""


class TapeStateError(RuntimeError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


class Var:
    """A node in the computation: a value and (once reached) its gradient."""

    def __init__(self, value, name: str = ""):
        self.value = np.asarray(value, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE).reshape(self.value.shape)
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r}, shape={self.shape})"


class Parameter(Var):
    """Trainable array with a persistent gradient buffer and Adam moments."""

    def __init__(self, name: str, value):
        super().__init__(value, name)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.step_count = 0

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


@dataclass
class Op:
    name: str
    inputs: tuple[Var, ...]
    output: Var
    backward: Callable[[np.ndarray], None]
    cache: dict = field(default_factory=dict)


class Tape:
    def __init__(self):
        self.ops: list[Op] = []

    def record(self, name, inputs, output, backward, **cache) -> None:
        self.ops.append(Op(name, tuple(inputs), output, backward, cache))

    def __len__(self) -> int:
        return len(self.ops)


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --------------------------------------------------------------------------
# initialisation


def init_gaussian(shape: Sequence[int], sigma: float, rng: np.random.Generator,
                  name: str = "") -> Parameter:
    shape = tuple(int(s) for s in shape)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if any(s < 1 for s in shape):
        raise ValueError(f"zero-sized shape {shape} for parameter {name!r}")
    return Parameter(name, rng.normal(0.0, sigma, size=shape))


# --------------------------------------------------------------------------
# forward ops


def embed_lookup(tape: Tape | None, table: Var, index) -> Var:
    """Gather rows of ``table``; ``index`` may be an int or an int array."""
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer):
        raise TypeError("embedding index must be integer")
    m = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= m):
        raise IndexError(f"embedding index out of range [0, {m}) for {table.name!r}")
    out = Var(table.value[idx])
    if tape is not None:
        def backward(g):
            if isinstance(table, Parameter):
                scatter_rows(table.grad, idx, g)
            else:
                full = np.zeros_like(table.value)
                scatter_rows(full, idx, g)
                table.accumulate(full)
        tape.record("embed_lookup", [table], out, backward)
    return out


def scatter_rows(target: np.ndarray, idx: np.ndarray, g: np.ndarray) -> None:
    """target[idx] += g with repeated indices summed.

    Same result as np.add.at, done as a sparse one-hot product, which is
    several times faster for the (batch, words) index blocks of the local module.
    """
    flat = idx.reshape(-1)
    if flat.size == 0:
        return
    rows = g.reshape(flat.size, -1)
    uniq, inv = np.unique(flat, return_inverse=True)
    onehot = sparse.csr_matrix((np.ones(flat.size), (inv, np.arange(flat.size))),
                               shape=(len(uniq), flat.size))
    target[uniq] += (onehot @ rows).reshape(len(uniq), *target.shape[1:])


def concat(tape: Tape | None, a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    d1 = a.shape[-1]
    out = Var(np.concatenate([a.value, b.value], axis=-1))
    if tape is not None:
        def backward(g):
            a.accumulate(g[..., :d1])
            b.accumulate(g[..., d1:])
        tape.record("concat", [a, b], out, backward)
    return out


def softmax(scores: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row softmax over the last axis; fully masked rows come back all-zero."""
    s = np.array(scores, dtype=DTYPE)
    if mask is not None:
        s[~mask] = -np.inf
    top = s.max(axis=-1, keepdims=True)
    empty = ~np.isfinite(top)
    top[empty] = 0.0
    e = np.exp(s - top)
    # sequential sum: trailing masked zeros must not change the rounding
    total = np.cumsum(e, axis=-1)[..., -1:]
    total[empty] = 1.0
    return e / total


def attend(tape: Tape | None, query, keys, values, beta: float,
           mask: np.ndarray | None = None) -> Var:
    """Softmax(beta * query.key_j) weighted read over memory slots.

    ``query`` is (d,) or (B, d). ``keys``/``values`` are either a shared
    (N, d) memory or per-example (B, N, d) memories, optionally with a (B, N)
    boolean ``mask``; rows with no valid slot read a zero vector. The output
    Var carries the attention weights as ``out.weights``.
    """
    query, keys, values = _as_var(query), _as_var(keys), _as_var(values)
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    n_slots = keys.shape[-2]
    if n_slots == 0:
        raise EmptyMemoryError("attention over an empty memory")
    if keys.shape != values.shape:
        raise ValueError(f"keys {keys.shape} and values {values.shape} differ")
    single = query.value.ndim == 1
    q = query.value.reshape(1, -1) if single else query.value
    shared = keys.value.ndim == 2
    K, V = keys.value, values.value
    # non-BLAS einsum keeps each row's result independent of batch size
    if shared:
        scores = np.einsum("bd,nd->bn", q, K)
    else:
        scores = np.einsum("bd,bnd->bn", q, K)
    a = softmax(beta * scores, mask)
    if shared:
        out_val = np.einsum("bn,nd->bd", a, V)
    else:
        out_val = np.einsum("bn,bnd->bd", a, V)
    out = Var(out_val[0] if single else out_val)
    out.weights = a[0] if single else a
    if tape is not None:
        def backward(g):
            g2 = g.reshape(1, -1) if single else g
            if shared:
                values.accumulate(a.T @ g2)
                ga = g2 @ V.T
            else:
                values.accumulate(a[:, :, None] * g2[:, None, :])
                ga = np.einsum("bd,bnd->bn", g2, V)
            ds = beta * a * (ga - (a * ga).sum(-1, keepdims=True))
            if shared:
                dq = ds @ K
                keys.accumulate(ds.T @ q)
            else:
                dq = np.einsum("bn,bnd->bd", ds, K)
                keys.accumulate(ds[:, :, None] * q[:, None, :])
            query.accumulate(dq[0] if single else dq)
        tape.record("attend", [query, keys, values], out, backward, weights=out.weights)
    return out


def dot(tape: Tape | None, a, b) -> Var:
    """Inner product over the last axis, broadcasting leading axes."""
    a, b = _as_var(a), _as_var(b)
    if a.shape[-1:] != b.shape[-1:]:
        raise ValueError(f"dot shape mismatch {a.shape} vs {b.shape}")
    out = Var((a.value * b.value).sum(-1))
    if tape is not None:
        def backward(g):
            g = np.asarray(g)[..., None]
            a.accumulate(_unbroadcast(g * b.value, a.shape))
            b.accumulate(_unbroadcast(g * a.value, b.shape))
        tape.record("dot", [a, b], out, backward)
    return out


def sigmoid(tape: Tape | None, x) -> Var:
    x = _as_var(x)
    s = expit(x.value)
    out = Var(s)
    if tape is not None:
        def backward(g):
            x.accumulate(g * s * (1.0 - s))
        tape.record("sigmoid", [x], out, backward)
    return out


def sigmoid_dot(tape: Tape | None, h, z) -> Var:
    """Logistic output layer: 1 / (1 + exp(-h.z))."""
    h, z = _as_var(h), _as_var(z)
    if h.shape[-1:] != z.shape[-1:]:
        raise ValueError(f"output weights {h.shape} do not match input {z.shape}")
    return sigmoid(tape, dot(tape, h, z))


def linear(tape: Tape | None, x, w, b=None) -> Var:
    """x @ w (+ b) for x of shape (B, in) and w of shape (in, out)."""
    x, w = _as_var(x), _as_var(w)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear shape mismatch {x.shape} @ {w.shape}")
    y = x.value @ w.value
    if b is not None:
        b = _as_var(b)
        y = y + b.value
    out = Var(y)
    if tape is not None:
        def backward(g):
            x.accumulate(g @ w.value.T)
            w.accumulate(x.value.reshape(-1, x.shape[-1]).T @ g.reshape(-1, w.shape[1]))
            if b is not None:
                b.accumulate(_unbroadcast(g, b.shape))
        tape.record("linear", [x, w] + ([b] if b is not None else []), out, backward)
    return out


def relu(tape: Tape | None, x) -> Var:
    x = _as_var(x)
    on = x.value > 0
    out = Var(np.where(on, x.value, 0.0))
    if tape is not None:
        def backward(g):
            x.accumulate(g * on)
        tape.record("relu", [x], out, backward)
    return out


def bce_loss(tape: Tape | None, pred, label) -> Var:
    """Mean binary cross-entropy; predictions clamped to [eps, 1 - eps]."""
    pred = _as_var(pred)
    y = np.asarray(label, dtype=DTYPE)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    y = np.broadcast_to(y, pred.shape)
    p = np.clip(pred.value, PRED_EPS, 1.0 - PRED_EPS)
    per = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    n = max(per.size, 1)
    out = Var(per.sum() / n)
    if tape is not None:
        inside = (pred.value >= PRED_EPS) & (pred.value <= 1.0 - PRED_EPS)
        def backward(g):
            dp = (-(y / p) + (1.0 - y) / (1.0 - p)) * inside
            pred.accumulate(g * dp / n)
        tape.record("bce_loss", [pred], out, backward)
    return out


# --------------------------------------------------------------------------
# gradients and optimisation


def backward(tape: Tape, loss: Var) -> None:
    """Accumulate d(loss)/d(param) into every Parameter reached by the tape."""
    if not tape.ops:
        raise TapeStateError("backward on an empty tape")
    if tape.ops[-1].output is not loss:
        raise TapeStateError("loss must be the output of the last recorded op")
    if loss.value.size != 1:
        raise TapeStateError(f"loss must be scalar, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.value)
    for op in reversed(tape.ops):
        if op.output.grad is not None:
            op.backward(op.output.grad)


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def adam_step(params: Sequence[Parameter], cfg: AdamConfig) -> None:
    """Bias-corrected Adam update followed by zeroing of the gradients."""
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            bad = int((~np.isfinite(p.grad)).sum())
            raise NonFiniteGradientError(
                f"parameter {p.name!r} has {bad} non-finite gradient entries")
    for p in params:
        p.step_count += 1
        t = p.step_count
        g, m, v = p.grad, p.adam_m, p.adam_v
        tmp = np.empty_like(g)
        # m and v in place, then value -= lr * m_hat / (sqrt(v_hat) + eps)
        m *= cfg.beta1
        np.multiply(g, 1.0 - cfg.beta1, out=tmp)
        m += tmp
        v *= cfg.beta2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - cfg.beta2
        v += tmp
        np.divide(v, 1.0 - cfg.beta2 ** t, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += cfg.eps
        np.divide(m, tmp, out=tmp)
        tmp *= cfg.lr / (1.0 - cfg.beta1 ** t)
        p.value -= tmp
        p.zero_grad()


def finite_diff_check(loss_fn: Callable[[Tape | None], Var], params: Sequence[Parameter],
                      step: float = 1e-5, max_coords: int | None = None,
                      rng: np.random.Generator | None = None) -> float:
    """Max relative error between taped gradients and central differences.

    ``loss_fn(tape)`` must rebuild the loss from the current parameter values.
    With ``max_coords`` set, that many coordinates are sampled per parameter.
    """
    if not step > 0:
        raise ValueError(f"finite-difference step must be positive, got {step}")
    zero_grads(params)
    tape = Tape()
    loss = loss_fn(tape)
    if not np.isfinite(loss.value).all():
        raise FloatingPointError("loss is not finite")
    backward(tape, loss)
    analytic = [p.grad.copy() for p in params]
    zero_grads(params)

    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            up = float(loss_fn(None).value)
            flat[c] = orig - step
            down = float(loss_fn(None).value)
            flat[c] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"loss not finite while perturbing {p.name!r}")
            numeric = (up - down) / (2.0 * step)
            err = abs(grad.reshape(-1)[c] - numeric) / max(1e-8, abs(numeric))
            worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# checkpoints
#
# Layout: b"LCMR1\n", 8-byte little-endian header length, JSON header, then the
# raw little-endian float64 payload of each array in header order.


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "dtype": "<f8",
                        "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = json.dumps({"meta": meta, "params": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b"\n")
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC + b"\n"):
        raise ValueError(f"{path}: not an LCMR1 checkpoint")
    pos = len(CHECKPOINT_MAGIC) + 1
    (hlen,) = struct.unpack("<Q", raw[pos:pos + 8])
    pos += 8
    header = json.loads(raw[pos:pos + hlen])
    base = pos + hlen
    arrays = {}
    for e in header["params"]:
        start = base + e["offset"]
        buf = raw[start:start + e["nbytes"]]
        if len(buf) != e["nbytes"]:
            raise ValueError(f"{path}: truncated data for {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(buf, dtype=e["dtype"]).reshape(e["shape"]).copy()
    return header["meta"], arrays
