"""Dense 2-D array arithmetic with reverse-mode differentiation.

Every value in the library is a real matrix (row-major ``numpy`` array,
float64 by default, float32 optional).  A :class:`Tensor` wraps one matrix
together with its gradient buffer and the links needed to replay the
computation backwards.  Operations build the graph eagerly; calling
:meth:`Tensor.backward` on a scalar output visits each node exactly once
in reverse topological order and accumulates gradients into every
upstream tensor.

The op set is deliberately small: matrix product, elementwise
tanh/relu/add/sub/mul, scalar broadcast helpers, row/column stacking,
column shifts and slices (for causal convolutions), and a
temperature-scaled softmax.  There is no general broadcasting and no
rank above 2.

:func:`gradcheck` verifies any scalar-valued function of named parameters
against central finite differences, skipping coordinates whose
perturbation crosses a ReLU kink.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, NumericError, ParameterError

DEFAULT_DTYPE = np.float64

# Distance from a ReLU kink below which a pre-activation is treated as
# sitting on the kink (its subgradient is taken as 0 and gradcheck skips it).
KINK_TOL = 1e-6

# Active kink recorders; relu() appends its sign pattern to each.
_kink_recorders: list[list] = []


@contextlib.contextmanager
def record_kinks(out: list):
    """Collect the (x > 0) pattern of every relu evaluated in this scope.

    Also records whether any pre-activation sat within ``KINK_TOL`` of 0.
    Used by gradcheck to discard finite-difference probes that cross a kink.
    """
    _kink_recorders.append(out)
    try:
        yield out
    finally:
        _kink_recorders.remove(out)


def _as_matrix(value, dtype=None):
    arr = np.atleast_2d(np.asarray(value))
    if arr.ndim != 2:
        raise DimensionError(f"expected a matrix, got array of rank {arr.ndim}")
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(DEFAULT_DTYPE)
    return arr


class Tensor:
    """A matrix node in a reverse-mode differentiation graph.

    Parameters
    ----------
    value : array-like
        2-D real data (1-D input is promoted to a single row).
    name : str, optional
        Identifier used in diagnostics; parameters get stable names.

    Notes
    -----
    Values are treated as immutable once wrapped; ops never write to an
    operand's ``value``.  ``grad`` is populated by :meth:`backward` and has
    the same shape and dtype as ``value``.
    """

    __slots__ = ("value", "grad", "name", "_parents", "_backward")

    def __init__(self, value, dtype=None, name=None):
        self.value = _as_matrix(value, dtype)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.value.shape

    @property
    def rows(self):
        return self.value.shape[0]

    @property
    def cols(self):
        return self.value.shape[1]

    @property
    def dtype(self):
        return self.value.dtype

    def item(self):
        if self.value.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # -- graph plumbing ------------------------------------------------------

    @staticmethod
    def _make(value, parents, backward):
        out = Tensor.__new__(Tensor)
        out.value = value
        out.grad = None
        out.name = None
        out._parents = parents
        out._backward = backward
        return out

    def backward(self, seed=None):
        """Accumulate gradients of this (scalar) node into the whole graph.

        ``seed`` overrides the initial adjoint (defaults to ones).  Each
        node's closure runs exactly once, in reverse topological order.
        """
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        for node in order:
            node.grad = np.zeros_like(node.value)
        if seed is None:
            self.grad = np.ones_like(self.value)
        else:
            seed = _as_matrix(seed, self.value.dtype)
            if seed.shape != self.value.shape:
                raise DimensionError(
                    f"backward: seed shape {seed.shape} does not match {self.value.shape}"
                )
            self.grad = seed
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return _shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return _shift(self, -float(other))

    def __rsub__(self, other):
        return _shift(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        if isinstance(other, np.ndarray):
            return mul_const(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div_scalar(self, other)
        return scale(self, 1.0 / float(other))

    @property
    def T(self):
        return transpose(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def sum(self):
        return sum_all(self)


def constant(value, dtype=None, name=None):
    """A graph leaf that participates in ops but needs no gradient of its own."""
    return Tensor(value, dtype=dtype, name=name)


def _binary_shape_check(op, a, b):
    if a.value.shape != b.value.shape:
        raise DimensionError(f"{op}: shapes {a.value.shape} and {b.value.shape} differ")


# -- elementwise -------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shape_check("add", a, b)
    out = Tensor._make(a.value + b.value, (a, b), None)

    def backward():
        a.grad += out.grad
        b.grad += out.grad

    out._backward = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shape_check("sub", a, b)
    out = Tensor._make(a.value - b.value, (a, b), None)

    def backward():
        a.grad += out.grad
        b.grad -= out.grad

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product."""
    _binary_shape_check("mul", a, b)
    out = Tensor._make(a.value * b.value, (a, b), None)

    def backward():
        a.grad += out.grad * b.value
        b.grad += out.grad * a.value

    out._backward = backward
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor._make(a.value * c, (a,), None)

    def backward():
        a.grad += out.grad * c

    out._backward = backward
    return out


def _shift(a: Tensor, c: float) -> Tensor:
    out = Tensor._make(a.value + c, (a,), None)

    def backward():
        a.grad += out.grad

    out._backward = backward
    return out


def mul_const(a: Tensor, arr: np.ndarray) -> Tensor:
    """Elementwise product with a constant array (no gradient to the constant).

    The constant must already have the operand's shape; masks and dropout
    keep the library free of implicit broadcasting.
    """
    arr = np.asarray(arr, dtype=a.value.dtype)
    if arr.shape != a.value.shape:
        raise DimensionError(f"mul_const: shapes {a.value.shape} and {arr.shape} differ")
    out = Tensor._make(a.value * arr, (a,), None)

    def backward():
        a.grad += out.grad * arr

    out._backward = backward
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    out = Tensor._make(y, (a,), None)

    def backward():
        a.grad += out.grad * (1.0 - y * y)

    out._backward = backward
    return out


def relu(a: Tensor) -> Tensor:
    positive = a.value > 0.0
    if _kink_recorders:
        in_band = np.abs(a.value) < KINK_TOL
        for rec in _kink_recorders:
            rec.append((positive, in_band))
    out = Tensor._make(np.where(positive, a.value, 0.0), (a,), None)

    def backward():
        # Subgradient at exactly 0 is taken as 0.
        a.grad += out.grad * positive

    out._backward = backward
    return out


# -- structural --------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError(
            f"matmul: inner dimensions differ, {a.value.shape} x {b.value.shape}"
        )
    out = Tensor._make(a.value @ b.value, (a, b), None)

    def backward():
        a.grad += out.grad @ b.value.T
        b.grad += a.value.T @ out.grad

    out._backward = backward
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor._make(np.ascontiguousarray(a.value.T), (a,), None)

    def backward():
        a.grad += out.grad.T

    out._backward = backward
    return out


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    """Stack ``a`` on top of ``b``; gradients split back by row ranges."""
    if a.cols != b.cols:
        raise DimensionError(
            f"concat_rows: column counts differ, {a.value.shape} vs {b.value.shape}"
        )
    split = a.rows
    out = Tensor._make(np.vstack([a.value, b.value]), (a, b), None)

    def backward():
        a.grad += out.grad[:split]
        b.grad += out.grad[split:]

    out._backward = backward
    return out


def hstack(tensors) -> Tensor:
    """Concatenate along columns; used to pool window predictions."""
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("hstack: need at least one tensor")
    rows = tensors[0].rows
    for t in tensors:
        if t.rows != rows:
            raise DimensionError("hstack: row counts differ")
    out = Tensor._make(
        np.hstack([t.value for t in tensors]), tuple(tensors), None
    )
    offsets = np.cumsum([0] + [t.cols for t in tensors])

    def backward():
        for t, j0, j1 in zip(tensors, offsets[:-1], offsets[1:]):
            t.grad += out.grad[:, j0:j1]

    out._backward = backward
    return out


def slice_cols(a: Tensor, j0: int, j1: int) -> Tensor:
    out = Tensor._make(np.ascontiguousarray(a.value[:, j0:j1]), (a,), None)

    def backward():
        a.grad[:, j0:j1] += out.grad

    out._backward = backward
    return out


def shift_cols(a: Tensor, offset: int) -> Tensor:
    """Shift columns right by ``offset``, zero-filling on the left.

    The building block of causal convolution: column i of the result only
    sees column i - offset of the input.
    """
    if offset < 0:
        raise ParameterError(f"shift_cols: offset must be >= 0, got {offset}")
    if offset == 0:
        y = a.value.copy()
    else:
        y = np.zeros_like(a.value)
        y[:, offset:] = a.value[:, :-offset] if offset < a.cols else 0.0
    out = Tensor._make(y, (a,), None)

    def backward():
        if offset == 0:
            a.grad += out.grad
        elif offset < a.cols:
            a.grad[:, :-offset] += out.grad[:, offset:]

    out._backward = backward
    return out


# -- broadcast helpers (row vector over rows, column vector over columns) ----


def mul_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Multiply each row of ``a`` (d x L) by the row vector ``v`` (1 x L)."""
    if v.rows != 1 or v.cols != a.cols:
        raise DimensionError(
            f"mul_rowvec: expected 1x{a.cols} vector, got {v.value.shape}"
        )
    out = Tensor._make(a.value * v.value, (a, v), None)

    def backward():
        a.grad += out.grad * v.value
        v.grad += (out.grad * a.value).sum(axis=0, keepdims=True)

    out._backward = backward
    return out


def add_colvec(a: Tensor, b: Tensor) -> Tensor:
    """Add the column vector ``b`` (d x 1) to every column of ``a`` (d x L)."""
    if b.cols != 1 or b.rows != a.rows:
        raise DimensionError(
            f"add_colvec: expected {a.rows}x1 vector, got {b.value.shape}"
        )
    out = Tensor._make(a.value + b.value, (a, b), None)

    def backward():
        a.grad += out.grad
        b.grad += out.grad.sum(axis=1, keepdims=True)

    out._backward = backward
    return out


def sub_scalar(a: Tensor, s: Tensor) -> Tensor:
    """Subtract the 1x1 tensor ``s`` from every entry of ``a``."""
    if s.value.size != 1:
        raise DimensionError(f"sub_scalar: expected 1x1 tensor, got {s.value.shape}")
    out = Tensor._make(a.value - s.value, (a, s), None)

    def backward():
        a.grad += out.grad
        s.grad -= out.grad.sum(keepdims=True).reshape(1, 1)

    out._backward = backward
    return out


def div_scalar(a: Tensor, b: Tensor) -> Tensor:
    """Quotient of two 1x1 tensors."""
    if a.value.size != 1 or b.value.size != 1:
        raise DimensionError(
            f"div_scalar: expected 1x1 tensors, got {a.value.shape} and {b.value.shape}"
        )
    out = Tensor._make(a.value / b.value, (a, b), None)

    def backward():
        a.grad += out.grad / b.value
        b.grad -= out.grad * a.value / (b.value * b.value)

    out._backward = backward
    return out


# -- reductions and softmax --------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    out = Tensor._make(a.value.sum(keepdims=True).reshape(1, 1), (a,), None)

    def backward():
        a.grad += out.grad[0, 0]

    out._backward = backward
    return out


def softmax_temp(logits: Tensor, temperature: float, axis: str = "rows") -> Tensor:
    """Temperature-scaled softmax over each row (``axis='rows'``) or column.

    Computed with max-subtraction; each normalized slice sums to 1.  Small
    temperatures sharpen the distribution toward the per-slice argmax.
    """
    if temperature <= 0.0:
        raise ParameterError(f"softmax_temp: temperature must be > 0, got {temperature}")
    if axis not in ("rows", "cols"):
        raise ParameterError(f"softmax_temp: axis must be 'rows' or 'cols', got {axis!r}")
    ax = 1 if axis == "rows" else 0
    z = logits.value / temperature
    z = z - z.max(axis=ax, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=ax, keepdims=True)
    out = Tensor._make(y, (logits,), None)

    def backward():
        inner = (out.grad * y).sum(axis=ax, keepdims=True)
        logits.grad += y * (out.grad - inner) / temperature

    out._backward = backward
    return out


# -- verification ------------------------------------------------------------


@dataclass
class GradcheckReport:
    """Outcome of a finite-difference sweep over named parameters."""

    per_param: dict = field(default_factory=dict)  # name -> worst relative error
    checked: int = 0
    skipped_kinks: int = 0
    below_noise: int = 0

    @property
    def worst(self) -> float:
        return max(self.per_param.values(), default=0.0)

    def worst_param(self):
        if not self.per_param:
            return None
        return max(self.per_param, key=self.per_param.get)

    def format_lines(self):
        width = max((len(n) for n in self.per_param), default=0)
        return [
            f"{name.ljust(width)}  {err:.3e}"
            for name, err in sorted(self.per_param.items())
        ]


def gradcheck(
    f,
    params: dict,
    epsilon: float = 1e-5,
    max_entries_per_param: int | None = None,
    rng=None,
) -> GradcheckReport:
    """Compare analytic gradients of ``f`` against central differences.

    Parameters
    ----------
    f : callable
        Builds a fresh graph from the current parameter values and returns
        a 1x1 loss tensor.
    params : dict
        Name -> leaf :class:`Tensor`.  Entries are perturbed in place and
        restored.
    epsilon : float
        Central-difference step, required to lie in [1e-7, 1e-3].
    max_entries_per_param : int, optional
        Cap on probed coordinates per parameter (sampled without
        replacement); all coordinates when omitted.
    rng : numpy Generator, optional
        Source for coordinate sampling; fixed seed when omitted.

    Returns
    -------
    GradcheckReport
        Worst relative error per parameter; ``report.worst`` is the max.
        Relative error is |ga - gn| / max(1e-8, |ga| + |gn|), minimized
        over a small ladder of step sizes around ``epsilon`` (kept inside
        [1e-7, 1e-3]) because curvature-limited and roundoff-limited
        coordinates want opposite steps; an incorrect gradient fails at
        every step.  Probes whose +/- evaluations disagree on any ReLU
        sign pattern are skipped at that step (kink crossings make the
        central difference meaningless), and probes whose disagreement
        falls below the roundoff noise floor of the difference quotient
        (~ulp(loss)/2eps) count as agreeing; differences that small are
        not measurable by this method.
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise ParameterError(f"gradcheck: epsilon must be in [1e-7, 1e-3], got {epsilon}")
    if rng is None:
        rng = np.random.default_rng(0)

    loss = f()
    if loss.value.size != 1:
        raise DimensionError(f"gradcheck: f must return a 1x1 tensor, got {loss.shape}")
    if not np.isfinite(loss.value).all():
        raise NumericError("gradcheck: loss is not finite at the base point")
    loss.backward()
    analytic = {name: p.grad.copy() for name, p in params.items()}

    report = GradcheckReport()
    for name, p in params.items():
        n = p.value.size
        if max_entries_per_param is not None and n > max_entries_per_param:
            idx = rng.choice(n, size=max_entries_per_param, replace=False)
        else:
            idx = np.arange(n)
        # no single step size suits every coordinate: large curvature wants
        # a small step, derivatives near roundoff want a large one, so
        # unresolved coordinates escalate through this ladder
        ladder = [epsilon]
        for scale in (10.0, 100.0, 0.1):
            step = epsilon * scale
            if 1e-7 <= step <= 1e-3 and step not in ladder:
                ladder.append(step)

        worst = 0.0
        for i in idx:
            r, c = np.unravel_index(i, p.value.shape)
            original = p.value[r, c]
            ga = analytic[name].flat[i]
            best = None
            for step in ladder:
                try:
                    p.value[r, c] = original + step
                    pattern_hi = []
                    with record_kinks(pattern_hi):
                        hi = f().item()
                    p.value[r, c] = original - step
                    pattern_lo = []
                    with record_kinks(pattern_lo):
                        lo = f().item()
                finally:
                    p.value[r, c] = original
                if not (np.isfinite(hi) and np.isfinite(lo)):
                    raise NumericError(f"gradcheck: non-finite loss while perturbing {name!r}")
                if _patterns_disagree(pattern_hi, pattern_lo):
                    continue
                numeric = (hi - lo) / (2.0 * step)
                # (hi - lo) carries roundoff of order ulp(loss), so the
                # quotient has an absolute noise floor; a disagreement
                # below it is not measurable by this method
                noise = 16.0 * np.finfo(np.float64).eps * max(1.0, abs(hi), abs(lo)) / (2.0 * step)
                if abs(ga - numeric) <= noise:
                    report.below_noise += 1
                    best = 0.0
                    break
                rel = abs(ga - numeric) / max(1e-8, abs(ga) + abs(numeric))
                best = rel if best is None else min(best, rel)
                if best < 1e-6:
                    break
            if best is None:
                report.skipped_kinks += 1
                continue
            worst = max(worst, best)
            report.checked += 1
        report.per_param[name] = worst
    return report


def _patterns_disagree(hi, lo):
    # A probe is invalid when the two evaluations land on different relu
    # branches anywhere, or when an affected pre-activation enters/leaves
    # the kink band (|x| < KINK_TOL).  Entries with identical state on both
    # sides, including exact zeros untouched by the perturbation, are fine.
    if len(hi) != len(lo):
        return True
    for (sign_hi, band_hi), (sign_lo, band_lo) in zip(hi, lo):
        if sign_hi.shape != sign_lo.shape:
            return True
        if not np.array_equal(sign_hi, sign_lo) or not np.array_equal(band_hi, band_lo):
            return True
    return False


def check_finite(arr: np.ndarray, context: str):
    """Raise :class:`NumericError` naming ``context`` if ``arr`` is not finite."""
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values in {context}")
