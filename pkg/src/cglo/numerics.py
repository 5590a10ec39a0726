"""Small reverse-mode differentiation core.

Only the handful of operations the deconvolution generator needs are
provided. Values are float64 numpy arrays wrapped in :class:`Var` nodes;
every op records a vector-Jacobian product so :func:`backward` can walk the
graph in reverse topological order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

DTYPE = np.float64


class Var:
    """A node in the computation graph.

    Leaves carry an optional ``name`` so gradients can be requested by
    identifier. Interior nodes keep their parents and a ``vjp`` closure that
    maps the output gradient to one gradient per parent.
    """

    __slots__ = ("value", "parents", "vjp", "name")

    def __init__(self, value, parents=(), vjp=None, name=None):
        self.value = np.asarray(value, dtype=DTYPE)
        self.parents = tuple(parents)
        self.vjp = vjp
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Var(shape={self.value.shape}{tag})"


def leaf(value, name=None) -> Var:
    return Var(np.array(value, dtype=DTYPE), name=name)


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


# ---------------------------------------------------------------------------
# transposed convolution kernels (array level)
# ---------------------------------------------------------------------------

def conv_transpose2d_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + kernel


def _conv_t_forward(x, w, b, stride, padding):
    cin, h, wd = x.shape
    _, cout, k, _ = w.shape
    full_h = (h - 1) * stride + k
    full_w = (wd - 1) * stride + k
    # cols[o, ky, kx, i, j] = sum_c w[c, o, ky, kx] * x[c, i, j]
    cols = np.tensordot(w, x, axes=([0], [0]))
    full = np.zeros((cout, full_h, full_w), dtype=DTYPE)
    for ky in range(k):
        for kx in range(k):
            full[:, ky:ky + stride * h:stride, kx:kx + stride * wd:stride] += cols[:, ky, kx]
    out = full[:, padding:full_h - padding, padding:full_w - padding]
    return out + b[:, None, None]


def _conv_t_backward(g, x, w, stride, padding):
    cin, h, wd = x.shape
    _, cout, k, _ = w.shape
    full_h = (h - 1) * stride + k
    full_w = (wd - 1) * stride + k
    full = np.zeros((cout, full_h, full_w), dtype=DTYPE)
    full[:, padding:full_h - padding, padding:full_w - padding] = g
    gcols = np.empty((cout, k, k, h, wd), dtype=DTYPE)
    for ky in range(k):
        for kx in range(k):
            gcols[:, ky, kx] = full[:, ky:ky + stride * h:stride, kx:kx + stride * wd:stride]
    gx = np.tensordot(w, gcols, axes=([1, 2, 3], [0, 1, 2]))
    gw = np.tensordot(x, gcols, axes=([1, 2], [3, 4]))
    gb = g.sum(axis=(1, 2))
    return gx, gw, gb


# ---------------------------------------------------------------------------
# differentiable ops
# ---------------------------------------------------------------------------

def conv_transpose2d(x, kernel, bias, stride: int = 1, padding: int = 0) -> Var:
    """Transposed 2-D convolution of a ``Cin x H x W`` input.

    ``kernel`` has shape ``Cin x Cout x K x K``; every input pixel scatters a
    ``Cout x K x K`` block into the output at ``stride`` spacing, and
    ``padding`` rows/columns are trimmed from each border afterwards.
    """
    x, kernel, bias = _as_var(x), _as_var(kernel), _as_var(bias)
    if stride < 1 or padding < 0:
        raise ValueError(f"stride must be >= 1 and padding >= 0, got stride={stride}, padding={padding}")
    if x.value.ndim != 3 or kernel.value.ndim != 4:
        raise ValueError(
            f"conv_transpose2d expects input Cin x H x W and kernel Cin x Cout x K x K, "
            f"got input {x.shape} and kernel {kernel.shape}")
    if x.shape[0] != kernel.shape[0] or kernel.shape[2] != kernel.shape[3]:
        raise ValueError(
            f"conv_transpose2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    if bias.shape != (kernel.shape[1],):
        raise ValueError(f"bias shape {bias.shape} does not match kernel {kernel.shape}")
    k = kernel.shape[2]
    for extent in x.shape[1:]:
        if conv_transpose2d_output_size(extent, k, stride, padding) < 1:
            raise ValueError(
                f"conv_transpose2d output would be empty for input {x.shape}, kernel {kernel.shape}, "
                f"stride={stride}, padding={padding}")

    xv, wv = x.value, kernel.value
    out = _conv_t_forward(xv, wv, bias.value, stride, padding)

    def vjp(g):
        return _conv_t_backward(g, xv, wv, stride, padding)

    return Var(out, (x, kernel, bias), vjp)


def dense(x, weight, bias) -> Var:
    x, weight, bias = _as_var(x), _as_var(weight), _as_var(bias)
    if weight.value.ndim != 2 or x.value.ndim != 1 or weight.shape[1] != x.shape[0]:
        raise ValueError(f"dense: weight {weight.shape} incompatible with input {x.shape}")
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"dense: bias {bias.shape} incompatible with weight {weight.shape}")
    xv, wv = x.value, weight.value
    out = wv @ xv + bias.value

    def vjp(g):
        return wv.T @ g, np.outer(g, xv), g

    return Var(out, (x, weight, bias), vjp)


def relu(x) -> Var:
    x = _as_var(x)
    mask = x.value > 0
    return Var(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def tanh(x) -> Var:
    x = _as_var(x)
    y = np.tanh(x.value)
    return Var(y, (x,), lambda g: (g * (1.0 - y * y),))


def reshape(x, shape) -> Var:
    x = _as_var(x)
    src = x.shape
    return Var(x.value.reshape(shape), (x,), lambda g: (g.reshape(src),))


def concat(parts: Iterable) -> Var:
    """Join 1-D vars end to end."""
    parts = [_as_var(p) for p in parts]
    if any(p.value.ndim != 1 for p in parts):
        raise ValueError("concat expects 1-D inputs")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def vjp(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return Var(np.concatenate([p.value for p in parts]), parts, vjp)


def l1_loss(a, b) -> Var:
    """Mean absolute difference. The subgradient at a tie is 0."""
    a, b = _as_var(a), _as_var(b)
    if a.shape != b.shape:
        raise ValueError(f"l1_loss shape mismatch: {a.shape} vs {b.shape}")
    diff = a.value - b.value
    n = diff.size
    s = np.sign(diff) / n

    def vjp(g):
        return g * s, -g * s

    return Var(np.abs(diff).mean(), (a, b), vjp)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topo_order(root: Var) -> list[Var]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Var, wrt: Iterable[Var | str]) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. the requested leaves.

    ``wrt`` may mix named :class:`Var` objects and names. A name that matches
    no leaf in the graph raises ``KeyError``; a ``Var`` the loss does not
    depend on gets a zero gradient.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    by_name = {n.name: n for n in order if n.name is not None and not n.parents}

    targets: dict[str, Var] = {}
    for item in wrt:
        if isinstance(item, Var):
            if item.name is None:
                raise ValueError("gradients can only be requested for named leaves")
            targets[item.name] = item
        else:
            if item not in by_name:
                raise KeyError(f"parameter {item!r} is not part of the loss graph")
            targets[item] = by_name[item]

    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg

    out = {}
    for name, var in targets.items():
        g = grads.get(id(var))
        out[name] = np.zeros_like(var.value) if g is None else np.asarray(g, dtype=DTYPE).reshape(var.shape)
    return out


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------

@dataclass
class CoordinateCheck:
    name: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    checks: list[CoordinateCheck] = field(default_factory=list)
    tol: float = 1e-3

    @property
    def max_rel_error(self) -> float:
        return max((c.rel_error for c in self.checks), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def finite_diff_check(
    f: Callable[[dict[str, Var]], Var],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-3,
    n_coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-8,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` with central differences.

    ``f`` receives a dict of named leaves and must return a scalar var.
    With ``n_coords`` set, that many coordinates are drawn uniformly over all
    parameters; otherwise every coordinate is checked.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    params = {k: np.array(v, dtype=DTYPE) for k, v in params.items()}
    leaves = {k: leaf(v, name=k) for k, v in params.items()}
    analytic = backward(f(leaves), list(leaves.values()))

    coords = [(k, idx) for k, v in params.items() for idx in np.ndindex(v.shape)]
    if n_coords is not None and n_coords < len(coords):
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    def evaluate(values):
        return float(f({k: leaf(v, name=k) for k, v in values.items()}).value)

    report = GradCheckReport(tol=tol)
    for name, idx in coords:
        base = params[name][idx]
        shifted = dict(params)
        arr = params[name].copy()
        shifted[name] = arr
        arr[idx] = base + h
        up = evaluate(shifted)
        arr[idx] = base - h
        down = evaluate(shifted)
        numeric = (up - down) / (2 * h)
        a = float(analytic[name][idx])
        report.checks.append(CoordinateCheck(name, idx, a, numeric, relative_error(a, numeric, floor)))
    return report
