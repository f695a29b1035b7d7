"""Dense-tensor engine with reverse-mode differentiation.

Just enough machinery to express small convolutional localizers and the
attack losses: conv2d, relu/sigmoid, nearest-neighbour upsampling,
elementwise arithmetic, BCE and L2 losses, plus an Adam optimizer.
Arrays are numpy; the graph is built eagerly through parent references
and differentiated by ``Tensor.backward``.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, DomainError, GraphError, UpdateError

BCE_STABILIZER = 1e-7


class Tensor:
    """A node in the computation graph wrapping an ndarray.

    ``requires_grad`` marks leaves that should receive gradients; results
    of operations inherit it from their inputs. After ``backward`` on a
    scalar result, ``grad`` holds d(result)/d(tensor) for every node that
    requires grad. Gradients are recomputed from scratch on every
    ``backward`` call, never accumulated across calls.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Reverse-mode pass seeding d(self)/d(self) = 1.

        ``self`` must be a scalar (one element). Grads of every node
        reachable from ``self`` are reset first, so calling backward twice
        without re-running forward yields identical gradients.
        """
        if self.data.size != 1:
            raise GraphError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        order = _topo_order(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value))


def _topo_order(root: Tensor) -> list[Tensor]:
    # Iterative DFS; insertion order of parents fixes the ordering, which
    # keeps repeated backward passes bitwise deterministic.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _make_result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = np.zeros_like(tensor.data)
    tensor.grad += grad


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise DimensionError(
            f"{op}: shapes {a.data.shape} and {b.data.shape} are not "
            "elementwise-compatible (equal shapes or a scalar required)"
        )


def _reduce_to_shape(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Only scalar-vs-array broadcasting is supported, so a mismatch always
    # reduces to a full sum.
    if grad.shape == shape:
        return grad
    return np.sum(grad).reshape(shape) if shape == () else np.full(shape, np.sum(grad))


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "add")
    data = a.data + b.data

    def backward_fn(out_grad):
        _accumulate(a, _reduce_to_shape(out_grad, a.data.shape))
        _accumulate(b, _reduce_to_shape(out_grad, b.data.shape))

    return _make_result(data, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "sub")
    data = a.data - b.data

    def backward_fn(out_grad):
        _accumulate(a, _reduce_to_shape(out_grad, a.data.shape))
        _accumulate(b, _reduce_to_shape(-out_grad, b.data.shape))

    return _make_result(data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "mul")
    data = a.data * b.data

    def backward_fn(out_grad):
        _accumulate(a, _reduce_to_shape(out_grad * b.data, a.data.shape))
        _accumulate(b, _reduce_to_shape(out_grad * a.data, b.data.shape))

    return _make_result(data, (a, b), backward_fn)


# ---------------------------------------------------------------------------
# activations and shape ops


def relu(t: Tensor) -> Tensor:
    data = np.maximum(t.data, 0)

    def backward_fn(out_grad):
        # subgradient at 0 is 0
        _accumulate(t, out_grad * (t.data > 0))

    return _make_result(data, (t,), backward_fn)


def sigmoid(t: Tensor) -> Tensor:
    x = t.data
    # stable branch form; clamp keeps the output strictly inside (0, 1)
    # even where floating-point rounding would reach the endpoints
    pos = 1.0 / (1.0 + np.exp(-np.maximum(x, 0)))
    ex = np.exp(np.minimum(x, 0))
    neg = ex / (1.0 + ex)
    data = np.where(x >= 0, pos, neg)
    one = data.dtype.type(1)
    zero = data.dtype.type(0)
    data = np.clip(data, np.nextafter(zero, one), np.nextafter(one, zero))

    def backward_fn(out_grad):
        _accumulate(t, out_grad * data * (1.0 - data))

    return _make_result(data, (t,), backward_fn)


def upsample_nearest2x(t: Tensor) -> Tensor:
    """Duplicate every value into a 2x2 block along the last two axes."""
    if t.data.ndim < 2:
        raise DimensionError(
            f"upsample_nearest2x needs at least 2 axes, got shape {t.data.shape}"
        )
    data = np.repeat(np.repeat(t.data, 2, axis=-2), 2, axis=-1)

    def backward_fn(out_grad):
        shape = t.data.shape
        h, w = shape[-2], shape[-1]
        g = out_grad.reshape(shape[:-2] + (h, 2, w, 2))
        _accumulate(t, g.sum(axis=(-3, -1)))

    return _make_result(data, (t,), backward_fn)


# ---------------------------------------------------------------------------
# convolution


def _im2col(x: np.ndarray, k: int, stride: int, padding: int):
    c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    view = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    view = view[:, ::stride, ::stride]
    _, h_out, w_out, _, _ = view.shape
    cols = np.ascontiguousarray(view.transpose(0, 3, 4, 1, 2)).reshape(
        c * k * k, h_out * w_out
    )
    return cols, h_out, w_out


def _col2im(cols: np.ndarray, c: int, h: int, w: int, k: int, stride: int, padding: int):
    hp, wp = h + 2 * padding, w + 2 * padding
    h_out = (hp - k) // stride + 1
    w_out = (wp - k) // stride + 1
    out = np.zeros((c, hp, wp), dtype=cols.dtype)
    blocks = cols.reshape(c, k, k, h_out, w_out)
    for i in range(k):
        for j in range(k):
            out[:, i : i + stride * h_out : stride, j : j + stride * w_out : stride] += blocks[
                :, i, j
            ]
    if padding:
        out = out[:, padding : hp - padding, padding : wp - padding]
    return out


def conv2d(
    input: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0
) -> Tensor:
    """2D cross-correlation of a (C_in, H, W) input with a (C_out, C_in, k, k) kernel."""
    x, w, b = input.data, kernel.data, bias.data
    if x.ndim != 3:
        raise DimensionError(f"conv2d input must be (C, H, W), got shape {x.shape}")
    if w.ndim != 4:
        raise DimensionError(
            f"conv2d kernel must be (C_out, C_in, k, k), got shape {w.shape}"
        )
    c_out, c_in, kh, kw = w.shape
    if kh != kw:
        raise DimensionError(f"conv2d kernel must be square, got {kh}x{kw}")
    if kh % 2 != 1:
        raise DimensionError(f"conv2d kernel size must be odd, got {kh}")
    if x.shape[0] != c_in:
        raise DimensionError(
            f"conv2d channel axis mismatch: input has {x.shape[0]} channels, "
            f"kernel expects {c_in}"
        )
    if b.shape != (c_out,):
        raise DimensionError(
            f"conv2d bias axis mismatch: expected shape ({c_out},), got {b.shape}"
        )
    _, h, w_in = x.shape
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w_in + 2 * padding - kh) // stride + 1
    if h_out < 1 or w_out < 1:
        raise DimensionError(
            f"conv2d output would be empty ({h_out}x{w_out}) for input "
            f"{h}x{w_in}, kernel {kh}, stride {stride}, padding {padding}"
        )

    cols, h_out, w_out = _im2col(x, kh, stride, padding)
    data = (w.reshape(c_out, -1) @ cols + b[:, None]).reshape(c_out, h_out, w_out)

    def backward_fn(out_grad):
        g = out_grad.reshape(c_out, -1)
        if kernel.requires_grad:
            _accumulate(kernel, (g @ cols.T).reshape(w.shape))
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=1))
        if input.requires_grad:
            dcols = w.reshape(c_out, -1).T @ g
            _accumulate(input, _col2im(dcols, c_in, h, w_in, kh, stride, padding))

    return _make_result(data, (input, kernel, bias), backward_fn)


# ---------------------------------------------------------------------------
# losses


def bce_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy with a small stabilizer inside the logs."""
    if pred.data.size == 0:
        raise DomainError("bce_loss on an empty tensor")
    if pred.data.shape != target.data.shape:
        raise DimensionError(
            f"bce_loss: pred shape {pred.data.shape} != target shape {target.data.shape}"
        )
    p, t = pred.data, target.data
    n = p.size
    s = BCE_STABILIZER
    data = np.asarray(
        -np.mean(t * np.log(p + s) + (1.0 - t) * np.log(1.0 - p + s)), dtype=p.dtype
    )

    def backward_fn(out_grad):
        scale = out_grad / n
        if pred.requires_grad:
            _accumulate(pred, -scale * (t / (p + s) - (1.0 - t) / (1.0 - p + s)))
        if target.requires_grad:
            _accumulate(target, -scale * (np.log(p + s) - np.log(1.0 - p + s)))

    return _make_result(data, (pred, target), backward_fn)


def l2_norm(t: Tensor) -> Tensor:
    """Euclidean norm of all elements; gradient at the zero tensor is 0."""
    norm = np.asarray(np.sqrt(np.sum(np.square(t.data))), dtype=t.data.dtype)

    def backward_fn(out_grad):
        if norm > 0:
            _accumulate(t, out_grad * (t.data / norm))
        else:
            _accumulate(t, np.zeros_like(t.data))

    return _make_result(norm, (t,), backward_fn)


# ---------------------------------------------------------------------------
# non-differentiable helpers (detached from the graph)


def sign(t: Tensor) -> Tensor:
    """Elementwise signum; sign(0) = 0. Detached from the graph."""
    return Tensor(np.sign(t.data))


def clip01(t: Tensor) -> Tensor:
    """Projection onto [0, 1]. Detached: applied between iterations, not differentiated."""
    return Tensor(np.clip(t.data, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Adam


class AdamState:
    """Per-parameter Adam moments plus the shared step counter."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, epsilon_stab: float = 1e-8):
        self.first_moment: dict[str, np.ndarray] = {}
        self.second_moment: dict[str, np.ndarray] = {}
        self.step_count = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon_stab = epsilon_stab


class Adam:
    """Standard bias-corrected Adam over named parameter tensors (in-place updates)."""

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon_stab: float = 1e-8,
    ):
        self.params = dict(params)
        self.lr = lr
        self.state = AdamState(beta1, beta2, epsilon_stab)
        for name, p in self.params.items():
            self.state.first_moment[name] = np.zeros_like(p.data)
            self.state.second_moment[name] = np.zeros_like(p.data)

    def step(self, grads: dict[str, np.ndarray] | None = None, lr: float | None = None) -> None:
        """One Adam update. ``grads`` defaults to each parameter's ``.grad``."""
        st = self.state
        st.step_count += 1
        t = st.step_count
        lr = self.lr if lr is None else lr
        bc1 = 1.0 - st.beta1**t
        bc2 = 1.0 - st.beta2**t
        for name, p in self.params.items():
            g = p.grad if grads is None else grads.get(name)
            if g is None:
                raise UpdateError(f"no gradient available for parameter {name!r}")
            if not np.all(np.isfinite(g)):
                raise UpdateError(f"non-finite gradient for parameter {name!r}")
            m = st.first_moment[name]
            v = st.second_moment[name]
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * np.square(g)
            p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + st.epsilon_stab)
