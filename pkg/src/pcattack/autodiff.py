"""Reverse-mode differentiation over float64 numpy arrays.

Primitives accept either plain arrays or :class:`Var` handles. When no
argument is a ``Var`` the primitive simply returns an array, so the same code
path serves plain inference and taped gradient computation. Every primitive
computes its forward value with identical numpy calls in both modes, which keeps
taped and untaped logits bit-identical.
"""

from __future__ import annotations

import numpy as np


class TapeConsumedError(RuntimeError):
    """Raised when a tape is replayed a second time."""


class DegenerateGradientError(ValueError):
    """Raised when a tensor is too close to zero to be L1-normalized."""


class ShapeError(ValueError):
    """Raised on a shape or label contract violation."""


class Var:
    """Handle to a value recorded on a :class:`GradientTape`."""

    __slots__ = ("value", "tape", "index")

    def __init__(self, value, tape, index):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape


class GradientTape:
    """Ordered record of primitive applications.

    Nodes are appended in evaluation order, which is a topological order of
    the computation, so a single reversed sweep visits every node after all of
    its consumers. A tape may be replayed exactly once.
    """

    def __init__(self):
        self._parents = []
        self._vjps = []
        self._shapes = []
        self.consumed = False
        # set by forward_loss
        self.input = None
        self.loss = None

    def __len__(self):
        return len(self._parents)

    def watch(self, value):
        value = np.asarray(value, dtype=np.float64)
        return self._append(value, (), None)

    def _append(self, value, parents, vjp):
        self._parents.append(parents)
        self._vjps.append(vjp)
        self._shapes.append(value.shape)
        return Var(value, self, len(self._parents) - 1)

    def record(self, value, inputs, vjp):
        """Append a node. ``vjp(g, needs)`` returns one gradient per input."""
        parents = tuple(a.index if isinstance(a, Var) else -1 for a in inputs)
        return self._append(value, parents, vjp)

    def gradient(self, output, sources, seed=None):
        if self.consumed:
            raise TapeConsumedError("gradient tape already consumed")
        self.consumed = True
        keep = {s.index for s in sources}
        grads = [None] * len(self._parents)
        grads[output.index] = (
            np.ones(self._shapes[output.index]) if seed is None else np.asarray(seed, dtype=np.float64)
        )
        for i in range(output.index, -1, -1):
            g = grads[i]
            if g is None or self._vjps[i] is None:
                continue
            parents = self._parents[i]
            needs = tuple(p >= 0 for p in parents)
            for p, pg in zip(parents, self._vjps[i](g, needs)):
                if p < 0 or pg is None:
                    continue
                grads[p] = pg if grads[p] is None else grads[p] + pg
            if i not in keep:
                grads[i] = None
        return [grads[s.index] if grads[s.index] is not None else np.zeros(s.shape) for s in sources]


def _tape_of(*args):
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def _val(a):
    return a.value if isinstance(a, Var) else a


# ---------------------------------------------------------------- primitives


def dense(x, w, b=None):
    """``x @ w + b`` for ``x`` of shape (N, D) and ``w`` of shape (D, O)."""
    xv, wv = _val(x), _val(w)
    out = xv @ wv
    if b is not None:
        out = out + _val(b)
    tape = _tape_of(x, w, b)
    if tape is None:
        return out

    def vjp(g, needs):
        gx = g @ wv.T if needs[0] else None
        gw = xv.T @ g if needs[1] else None
        gb = g.sum(axis=0) if len(needs) > 2 and needs[2] else None
        return gx, gw, gb

    return tape.record(out, (x, w) if b is None else (x, w, b), vjp)


def _im2col(xp, k, h, w):
    """(N, C, H+k-1, W+k-1) padded input -> (N*H*W, k*k*C) patches, channels last."""
    n, c = xp.shape[:2]
    xn = xp.transpose(0, 2, 3, 1)
    cols = np.empty((n, h, w, k, k, c))
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xn[:, i : i + h, j : j + w, :]
    return cols.reshape(n * h * w, k * k * c)


def conv2d(x, w, b=None):
    """Stride-1, zero-padded ("same") 2D convolution.

    ``x`` is (N, C, H, W), ``w`` is (O, C, k, k) with odd ``k``.
    """
    xv, wv = _val(x), _val(w)
    n, c, h, wd = xv.shape
    o, c2, k, k2 = wv.shape
    if c != c2 or k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d: input {xv.shape} incompatible with kernel {wv.shape}")
    p = k // 2
    xp = np.pad(xv, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = _im2col(xp, k, h, wd)
    wmat = wv.transpose(0, 2, 3, 1).reshape(o, k * k * c)
    out = cols @ wmat.T
    if b is not None:
        out = out + _val(b)
    out = np.ascontiguousarray(out.reshape(n, h, wd, o).transpose(0, 3, 1, 2))
    tape = _tape_of(x, w, b)
    if tape is None:
        return out

    def vjp(g, needs):
        gflat = g.transpose(0, 2, 3, 1).reshape(n * h * wd, o)
        gx = gw = gb = None
        if needs[0]:
            gcols = (gflat @ wmat).reshape(n, h, wd, k, k, c)
            gxp = np.zeros((n, h + 2 * p, wd + 2 * p, c))
            for i in range(k):
                for j in range(k):
                    gxp[:, i : i + h, j : j + wd, :] += gcols[:, :, :, i, j, :]
            gx = np.ascontiguousarray(gxp[:, p : p + h, p : p + wd, :].transpose(0, 3, 1, 2))
        if needs[1]:
            gw = (gflat.T @ cols).reshape(o, k, k, c).transpose(0, 3, 1, 2)
        if len(needs) > 2 and needs[2]:
            gb = gflat.sum(axis=0)
        return gx, gw, gb

    return tape.record(out, (x, w) if b is None else (x, w, b), vjp)


def relu(x):
    xv = _val(x)
    out = np.maximum(xv, 0.0)
    tape = _tape_of(x)
    if tape is None:
        return out
    return tape.record(out, (x,), lambda g, needs: (g * (xv > 0),))


def maxpool2(x):
    """2x2 max pooling with stride 2; ties route the gradient to the first maximum."""
    xv = _val(x)
    n, c, h, w = xv.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial extents, got {xv.shape}")
    blocks = xv.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    tape = _tape_of(x)
    if tape is None:
        return out

    def vjp(g, needs):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return tape.record(out, (x,), vjp)


def reshape(x, shape):
    xv = _val(x)
    out = xv.reshape(shape)
    tape = _tape_of(x)
    if tape is None:
        return out
    return tape.record(out, (x,), lambda g, needs: (g.reshape(xv.shape),))


def flatten(x):
    return reshape(x, (_val(x).shape[0], -1))


def scale(x, c):
    """Multiply by a constant scalar."""
    out = _val(x) * c
    tape = _tape_of(x)
    if tape is None:
        return out
    return tape.record(out, (x,), lambda g, needs: (g * c,))


def add(a, b):
    out = _val(a) + _val(b)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    return tape.record(out, (a, b), lambda g, needs: (g if needs[0] else None, g if needs[1] else None))


def resample(x, rows, cols):
    """Per-example separable linear map ``rows[n] @ x[n, c] @ cols[n].T``.

    ``rows`` is (N, H', H) and ``cols`` is (N, W', W). Bilinear resizing and
    zero padding are both instances of this map.
    """
    xv = _val(x)
    out = np.einsum("nij,ncjk,nlk->ncil", rows, xv, cols, optimize=True)
    tape = _tape_of(x)
    if tape is None:
        return out
    return tape.record(out, (x,), lambda g, needs: (np.einsum("nij,ncil,nlk->ncjk", rows, g, cols, optimize=True),))


def bilinear_matrix(out_size, in_size):
    """Half-pixel bilinear interpolation matrix of shape (out_size, in_size)."""
    if out_size == in_size:
        return np.eye(in_size)
    m = np.zeros((out_size, in_size))
    src = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    rows = np.arange(out_size)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def pad_matrix(out_size, in_size, offset):
    """Zero-padding placement matrix: ``in_size`` samples land at ``offset``."""
    if offset < 0 or offset + in_size > out_size:
        raise ShapeError(f"cannot place {in_size} samples at {offset} in {out_size}")
    m = np.zeros((out_size, in_size))
    m[offset + np.arange(in_size), np.arange(in_size)] = 1.0
    return m


def resize_bilinear(x, size):
    """Bilinear resize of (N, C, H, W) to square ``size``."""
    xv = _val(x)
    n, _, h, w = xv.shape
    rows = np.broadcast_to(bilinear_matrix(size, h), (n, size, h))
    cols = np.broadcast_to(bilinear_matrix(size, w), (n, size, w))
    return resample(x, rows, cols)


def zero_pad(x, size, top, left):
    xv = _val(x)
    n, _, h, w = xv.shape
    rows = np.broadcast_to(pad_matrix(size, h, top), (n, size, h))
    cols = np.broadcast_to(pad_matrix(size, w, left), (n, size, w))
    return resample(x, rows, cols)


def _cross_entropy_terms(z, labels):
    # log-sum-exp split as  max + log1p(sum of the non-max terms)  so that
    # confidently classified examples keep full relative precision
    rows = np.arange(z.shape[0])
    top = z.argmax(axis=1)
    m = z[rows, top][:, None]
    e = np.exp(z - m)
    rest = e.copy()
    rest[rows, top] = 0.0
    per_example = (m[:, 0] - z[rows, labels]) + np.log1p(rest.sum(axis=1))
    return per_example, e


def softmax_cross_entropy(logits, labels):
    """Summed natural-log cross-entropy over the batch.

    Summation (rather than the mean) keeps each example's input gradient
    independent of the batch it travels in.
    """
    z = _val(logits)
    labels = np.asarray(labels)
    per_example, e = _cross_entropy_terms(z, labels)
    out = np.asarray(per_example.sum())
    tape = _tape_of(logits)
    if tape is None:
        return out

    def vjp(g, needs):
        p = e / e.sum(axis=1, keepdims=True)
        p[np.arange(z.shape[0]), labels] -= 1.0
        return (p * g,)

    return tape.record(out, (logits,), vjp)


def per_example_cross_entropy(z, labels):
    """Untaped per-example cross-entropy, used by finite differences and training logs."""
    return _cross_entropy_terms(z, np.asarray(labels))[0]


# ---------------------------------------------------- elementwise attack ops


def sign(t):
    """Elementwise sign with ``sign(0) == 0``."""
    return np.sign(np.asarray(t, dtype=np.float64))


def clip_ball(x_orig, x, epsilon, lo=0.0, hi=1.0):
    """Nearest point to ``x`` inside both the L-inf ``epsilon``-ball around
    ``x_orig`` and the box ``[lo, hi]``."""
    x_orig = np.asarray(x_orig, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x_orig.shape != x.shape:
        raise ShapeError(f"clip_ball: shape mismatch {x_orig.shape} vs {x.shape}")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if not lo < hi:
        raise ValueError("need lo < hi")
    lower = np.maximum(x_orig - epsilon, lo)
    upper = np.minimum(x_orig + epsilon, hi)
    return np.minimum(np.maximum(x, lower), upper)


def l1_normalize(t):
    """Divide by the L1 norm taken over every entry of ``t``."""
    t = np.asarray(t, dtype=np.float64)
    norm = np.abs(t).sum()
    if norm < 1e-12:
        raise DegenerateGradientError(f"L1 norm {norm:g} too small to normalize")
    return t / norm


def l1_normalize_rows(t):
    """Per-example L1 normalization of a batch; all-zero rows stay zero."""
    norm = np.abs(t).reshape(t.shape[0], -1).sum(axis=1)
    norm = norm.reshape((-1,) + (1,) * (t.ndim - 1))
    safe = np.where(norm < 1e-12, 1.0, norm)
    return np.where(norm < 1e-12, 0.0, t / safe)


# ---------------------------------------------------------- model gradients


def _as_batch(model, x, y):
    x = np.asarray(x, dtype=np.float64)
    shape = tuple(model.input_shape)
    single = x.shape == shape
    if single:
        x = x[None]
    elif x.shape[1:] != shape:
        raise ShapeError(f"input shape {x.shape} does not match model input {shape}")
    y = np.atleast_1d(np.asarray(y))
    if y.shape != (x.shape[0],):
        raise ShapeError(f"{y.shape[0]} labels for {x.shape[0]} inputs")
    if not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= model.class_count:
        raise ShapeError(f"labels must be integers in [0, {model.class_count})")
    return x, y, single


def forward_loss(model, x, y):
    """Cross-entropy of ``model`` at ``x`` with ``x`` recorded as a leaf.

    Accepts a single example or a batch; for a batch the loss is the sum of
    per-example losses. Returns ``(loss, logits, tape)``.
    """
    xb, yb, single = _as_batch(model, x, y)
    tape = GradientTape()
    xv = tape.watch(xb)
    logits = model.forward(xv, tape)
    loss = softmax_cross_entropy(logits, yb)
    tape.input = xv
    tape.loss = loss
    tape.single = single
    lv = logits.value
    return float(loss.value), (lv[0] if single else lv), tape


def input_gradient(tape):
    """Gradient of the recorded loss with respect to the recorded input."""
    (g,) = tape.gradient(tape.loss, [tape.input])
    return g[0] if tape.single else g


def loss_gradient(model, x, y):
    """Convenience: ``input_gradient(forward_loss(model, x, y)[2])``."""
    return input_gradient(forward_loss(model, x, y)[2])


def finite_diff_gradient(model, x, y, h=1e-4):
    """Central-difference input gradient of the cross-entropy for one example."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    flat = x.reshape(-1)
    probes = np.concatenate([flat + h * np.eye(d), flat - h * np.eye(d)]).reshape((2 * d,) + x.shape)
    losses = np.empty(2 * d)
    labels = np.full(2 * d, int(y))
    for start in range(0, 2 * d, 512):
        chunk = probes[start : start + 512]
        losses[start : start + len(chunk)] = per_example_cross_entropy(
            model.forward(chunk), labels[start : start + len(chunk)]
        )
    return ((losses[:d] - losses[d:]) / (2 * h)).reshape(x.shape)
