"""Dense 4-D tensors with reverse-mode automatic differentiation.

Every value is a (batch, channels, height, width) array.  Operations run
eagerly on numpy; when a :class:`Tape` is active and an input requires
gradients, the operation also records a backward rule so that
:func:`backward` can later fill the ``grad`` buffer of every leaf.

Tensors are never mutated by operations.  Parameters are updated between
steps by the optimizer, which rewrites ``data`` in place under a
single-writer discipline.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolationError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "conv2d",
    "activation",
    "relu",
    "sigmoid",
    "add",
    "mul",
    "concat_channels",
    "global_avg_pool",
    "scale_channels",
    "pixel_shuffle",
    "space_to_depth",
    "l1_loss",
    "mean_all",
    "zeros",
]


class Tensor:
    """A 4-D array (n, c, h, w), optionally participating in gradient taping."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.ndim != 4:
            raise ContractViolationError(
                f"tensor data must be 4-D (n, c, h, w), got shape {arr.shape}"
            )
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def numel(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolationError(
                f"item() needs a single-element tensor, got shape {self.shape}"
            )
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        """Reset the gradient slot to an owned all-zero buffer."""
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


class _Record:
    __slots__ = ("out", "parents", "backward_fn")

    def __init__(self, out, parents, backward_fn):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of operations, used as a context manager.

    Records are appended in execution order, so every operation's inputs
    precede it and one reverse sweep propagates gradients to all leaves.
    A tape belongs to a single worker; nothing here is thread-safe.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._outputs: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPES.pop()
        return False

    def _record(self, out: Tensor, parents, backward_fn) -> None:
        self._records.append(_Record(out, parents, backward_fn))
        self._outputs.add(id(out))

    def _owns(self, t: Tensor) -> bool:
        return id(t) in self._outputs

    def __len__(self) -> int:
        return len(self._records)


def _register(out: Tensor, parents, backward_fn) -> None:
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        if _TAPES:
            _TAPES[-1]._record(out, parents, backward_fn)


def backward(loss: Tensor, tape: Tape) -> None:
    """Propagate gradients from a scalar loss back through the tape.

    Every reachable leaf with ``requires_grad`` accumulates into its
    ``grad`` buffer; repeated calls without zeroing keep accumulating.
    Leaves that the loss does not depend on are left untouched.
    """
    if loss.data.size != 1:
        raise ContractViolationError(
            f"backward needs a scalar loss, got shape {loss.shape}"
        )
    if not tape._owns(loss):
        raise ContractViolationError("loss was not produced on this tape")
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape._records):
        g = pending.pop(id(rec.out), None)
        if g is None:
            continue
        for parent, pg in zip(rec.parents, rec.backward_fn(g)):
            if pg is None:
                continue
            if tape._owns(parent):
                key = id(parent)
                prev = pending.get(key)
                pending[key] = pg if prev is None else prev + pg
            elif parent.requires_grad:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg


# ---------------------------------------------------------------------------
# im2col plumbing for the convolution kernel
# ---------------------------------------------------------------------------


def _im2col(a: np.ndarray, k: int) -> np.ndarray:
    """Unfold (n, c, h, w) into (n, c*k*k, h*w) patches with same-size zero padding."""
    n, c, h, w = a.shape
    if k == 1:
        return a.reshape(n, c, h * w)
    p = (k - 1) // 2
    padded = np.pad(a, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((n, c, k, k, h, w), dtype=a.dtype)
    for dy in range(k):
        for dx in range(k):
            cols[:, :, dy, dx] = padded[:, :, dy : dy + h, dx : dx + w]
    return cols.reshape(n, c * k * k, h * w)


def _col2im(dcols: np.ndarray, n: int, c: int, h: int, w: int, k: int) -> np.ndarray:
    """Scatter-add the im2col adjoint back onto an (n, c, h, w) grid."""
    if k == 1:
        return dcols.reshape(n, c, h, w)
    p = (k - 1) // 2
    view = dcols.reshape(n, c, k, k, h, w)
    padded = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dcols.dtype)
    for dy in range(k):
        for dx in range(k):
            padded[:, :, dy : dy + h, dx : dx + w] += view[:, :, dy, dx]
    return np.ascontiguousarray(padded[:, :, p : p + h, p : p + w])


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """2-D convolution, stride 1, zero padding that preserves spatial size.

    ``weight`` is (out_c, in_c, k, k) with k in {1, 3, 5}; ``bias`` is kept
    4-D as (1, out_c, 1, 1).  Differentiable in all three arguments.
    """
    n, c, h, w = x.shape
    oc, ic, kh, kw = weight.shape
    if kh != kw or kh not in (1, 3, 5):
        raise ContractViolationError(f"conv2d kernel must be square 1/3/5, got {kh}x{kw}")
    if c != ic:
        raise ContractViolationError(
            f"conv2d input has {c} channels but weight expects {ic}"
        )
    if bias.shape != (1, oc, 1, 1):
        raise ContractViolationError(
            f"conv2d bias shape {bias.shape} does not match (1, {oc}, 1, 1)"
        )
    k = kh
    cols = _im2col(x.data, k)
    wmat = weight.data.reshape(oc, ic * k * k)
    out_mat = np.matmul(wmat[None], cols)
    out_mat += bias.data.reshape(1, oc, 1)
    out = Tensor(out_mat.reshape(n, oc, h, w))

    def backward_fn(g):
        gmat = g.reshape(n, oc, h * w)
        gx = _col2im(np.matmul(wmat.T[None], gmat), n, c, h, w, k)
        gw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(oc, ic, k, k)
        gb = g.sum(axis=(0, 2, 3)).reshape(1, oc, 1, 1)
        return gx, gw, gb

    _register(out, (x, weight, bias), backward_fn)
    return out


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise nonlinearity: ``relu`` (max(0, .)) or ``sigmoid``."""
    a = x.data
    if kind == "relu":
        out = Tensor(np.maximum(a, 0))
        mask = a > 0

        def backward_fn(g):
            return (g * mask,)

    elif kind == "sigmoid":
        s = np.empty_like(a)
        pos = a >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        s[~pos] = ea / (1.0 + ea)
        out = Tensor(s)

        def backward_fn(g):
            return (g * s * (1.0 - s),)

    else:
        raise ContractViolationError(f"unknown activation kind {kind!r}")
    _register(out, (x,), backward_fn)
    return out


def relu(x: Tensor) -> Tensor:
    return activation(x, "relu")


def sigmoid(x: Tensor) -> Tensor:
    return activation(x, "sigmoid")


def add(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if x.shape != y.shape:
        raise ContractViolationError(f"add shape mismatch: {x.shape} vs {y.shape}")
    out = Tensor(x.data + y.data)

    def backward_fn(g):
        return g, g

    _register(out, (x, y), backward_fn)
    return out


def mul(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    if x.shape != y.shape:
        raise ContractViolationError(f"mul shape mismatch: {x.shape} vs {y.shape}")
    out = Tensor(x.data * y.data)

    def backward_fn(g):
        return g * y.data, g * x.data

    _register(out, (x, y), backward_fn)
    return out


def concat_channels(xs) -> Tensor:
    """Concatenate tensors along the channel axis, in listed order."""
    xs = list(xs)
    if not xs:
        raise ContractViolationError("concat_channels needs at least one tensor")
    n, _, h, w = xs[0].shape
    for t in xs[1:]:
        tn, _, th, tw = t.shape
        if (tn, th, tw) != (n, h, w):
            raise ContractViolationError(
                f"concat_channels spatial mismatch: {t.shape} vs {xs[0].shape}"
            )
    widths = [t.shape[1] for t in xs]
    out = Tensor(np.concatenate([t.data for t in xs], axis=1))
    edges = np.cumsum([0] + widths)

    def backward_fn(g):
        return tuple(
            np.ascontiguousarray(g[:, edges[i] : edges[i + 1]]) for i in range(len(xs))
        )

    _register(out, tuple(xs), backward_fn)
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes, output shape (n, c, 1, 1)."""
    n, c, h, w = x.shape
    if h * w == 0:
        raise ContractViolationError(f"global_avg_pool needs h*w >= 1, got shape {x.shape}")
    out = Tensor(x.data.mean(axis=(2, 3), keepdims=True))

    def backward_fn(g):
        # materialized: 0-stride broadcast views cripple downstream matmuls
        gx = np.empty(x.shape, dtype=g.dtype)
        gx[:] = g / (h * w)
        return (gx,)

    _register(out, (x,), backward_fn)
    return out


def scale_channels(x: Tensor, s: Tensor) -> Tensor:
    """Multiply every spatial element of channel c by the gate s[:, c]."""
    n, c, _, _ = x.shape
    if s.shape != (n, c, 1, 1):
        raise ContractViolationError(
            f"scale_channels gate shape {s.shape} does not match (n={n}, c={c}, 1, 1)"
        )
    out = Tensor(x.data * s.data)

    def backward_fn(g):
        return g * s.data, (g * x.data).sum(axis=(2, 3), keepdims=True)

    _register(out, (x, s), backward_fn)
    return out


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange (n, c, h, w) into (n, c/r^2, r*h, r*w).

    out[n, c, r*y+dy, r*x+dx] = in[n, c*r*r + dy*r + dx, y, x]; the mapping
    is a bijection and the backward pass is its inverse permutation.
    """
    if r < 1:
        raise ContractViolationError(f"pixel_shuffle factor must be positive, got {r}")
    n, c, h, w = x.shape
    if c % (r * r) != 0:
        raise ContractViolationError(
            f"pixel_shuffle needs channels divisible by r^2: c={c}, r={r}"
        )
    oc = c // (r * r)
    out = Tensor(
        np.ascontiguousarray(
            x.data.reshape(n, oc, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
        ).reshape(n, oc, h * r, w * r)
    )

    def backward_fn(g):
        return (
            np.ascontiguousarray(
                g.reshape(n, oc, h, r, w, r).transpose(0, 1, 3, 5, 2, 4)
            ).reshape(n, c, h, w),
        )

    _register(out, (x,), backward_fn)
    return out


def space_to_depth(x: Tensor, r: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`: fold r x r spatial blocks into channels."""
    if r < 1:
        raise ContractViolationError(f"space_to_depth factor must be positive, got {r}")
    n, c, h, w = x.shape
    if h % r != 0 or w % r != 0:
        raise ContractViolationError(
            f"space_to_depth needs spatial dims divisible by r: {(h, w)}, r={r}"
        )
    oh, ow = h // r, w // r
    out = Tensor(
        np.ascontiguousarray(
            x.data.reshape(n, c, oh, r, ow, r).transpose(0, 1, 3, 5, 2, 4)
        ).reshape(n, c * r * r, oh, ow)
    )

    def backward_fn(g):
        return (
            np.ascontiguousarray(
                g.reshape(n, c, r, r, oh, ow).transpose(0, 1, 4, 2, 5, 3)
            ).reshape(n, c, h, w),
        )

    _register(out, (x,), backward_fn)
    return out


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference, returned as a (1, 1, 1, 1) scalar tensor.

    The subgradient with respect to ``pred`` is sign(pred - target) / numel,
    taken as 0 at exact ties.
    """
    if pred.shape != target.shape:
        raise ContractViolationError(
            f"l1_loss shape mismatch: {pred.shape} vs {target.shape}"
        )
    if target.requires_grad:
        raise ContractViolationError("l1_loss target must not require gradients")
    diff = pred.data - target.data
    out = Tensor(np.full((1, 1, 1, 1), np.abs(diff).mean(), dtype=pred.data.dtype))

    def backward_fn(g):
        return g.reshape(())[()] / diff.size * np.sign(diff), None

    _register(out, (pred, target), backward_fn)
    return out


def mean_all(x: Tensor) -> Tensor:
    """Mean over every element, returned as a (1, 1, 1, 1) scalar tensor."""
    out = Tensor(np.full((1, 1, 1, 1), x.data.mean(), dtype=x.data.dtype))
    size = x.data.size

    def backward_fn(g):
        return (np.full(x.shape, g.reshape(())[()] / size, dtype=g.dtype),)

    _register(out, (x,), backward_fn)
    return out
