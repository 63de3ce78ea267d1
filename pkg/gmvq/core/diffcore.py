"""反向模式自动微分核心

Node 持有不可变的 numpy 值以及反向传播时累积的伴随量。计算图每个训练步
重新构建，没有持久化的 tape。
"""

import contextlib
import contextvars
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, logsumexp

from gmvq.core.errors import DomainError, NonFiniteError, ShapeError

DEFAULT_DTYPE = np.float64

_grad_enabled: contextvars.ContextVar = contextvars.ContextVar("gmvq_grad_enabled", default=True)

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


def _freeze(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


class Node:
    """计算图节点"""

    __slots__ = ("value", "grad", "parents", "_backward", "requires_grad", "name")

    def __init__(
        self,
        value: np.ndarray,
        parents: Tuple["Node", ...] = (),
        backward: Optional[BackwardFn] = None,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        self.value = value
        self.grad: Optional[np.ndarray] = None
        self.parents = parents
        self._backward = backward
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        """标量节点的 Python 浮点值"""
        if self.value.size != 1:
            raise ShapeError(f"item() 需要标量节点，实际形状: {self.shape}")
        return float(self.value.reshape(()))

    def assign(self, value: np.ndarray) -> None:
        """替换叶子节点的值（优化器更新用）"""
        if not self.is_leaf:
            raise ValueError("只能为叶子节点赋值")
        value = np.array(value, dtype=self.value.dtype)
        if value.shape != self.value.shape:
            raise ShapeError(f"赋值形状不匹配: {value.shape} != {self.value.shape}")
        self.value = _freeze(value)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"<Node{label} shape={self.shape} requires_grad={self.requires_grad}>"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)


def tensor(data, requires_grad: bool = False, dtype=None, name: Optional[str] = None) -> Node:
    """创建叶子节点（拷贝输入数据）"""
    array = np.array(data, dtype=dtype or DEFAULT_DTYPE)
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(f"叶子节点包含非有限值: {name or ''}")
    return Node(_freeze(array), requires_grad=requires_grad, name=name)


def as_node(data, like: Optional[Node] = None) -> Node:
    """把数组或标量包装成常量节点"""
    if isinstance(data, Node):
        return data
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    return Node(_freeze(np.array(data, dtype=dtype)))


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """在此上下文中构建的节点不记录父节点"""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


def _make(value: np.ndarray, parents: Tuple[Node, ...], backward: BackwardFn, op: str) -> Node:
    value = np.asarray(value)
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op} 产生了非有限值")
    value = _freeze(value if value.base is None and value.flags.owndata else np.array(value))
    if not (_grad_enabled.get() and any(p.requires_grad for p in parents)):
        return Node(value)
    return Node(value, parents, backward, requires_grad=True)


def _pair(a, b) -> Tuple[Node, Node]:
    if isinstance(a, Node):
        return a, as_node(b, like=a)
    b = as_node(b)
    return as_node(a, like=b), b


def _broadcast_shape(a: Node, b: Node, op: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"{op} 形状不匹配: {a.shape} 与 {b.shape}") from e


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- 逐元素运算

def add(a, b) -> Node:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "add")
    return _make(
        a.value + b.value, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Node:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "sub")
    return _make(
        a.value - b.value, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Node:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "mul")
    return _make(
        a.value * b.value, (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
        "mul",
    )


def div(a, b) -> Node:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "div")
    if np.any(b.value == 0):
        raise DomainError("div 的除数包含 0")
    return _make(
        a.value / b.value, (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * a.value / np.square(b.value), b.shape),
        ),
        "div",
    )


def neg(a: Node) -> Node:
    return _make(-a.value, (a,), lambda g: (-g,), "neg")


def scale(a: Node, c: float) -> Node:
    """乘以常数"""
    c = float(c)
    return _make(a.value * c, (a,), lambda g: (g * c,), "scale")


def square(a: Node) -> Node:
    return _make(np.square(a.value), (a,), lambda g: (2.0 * a.value * g,), "square")


def sqrt(a: Node) -> Node:
    """平方根；在 0 处取次梯度 0"""
    if np.any(a.value < 0):
        raise DomainError("sqrt 输入必须非负")
    value = np.sqrt(a.value)

    def backward(g):
        safe = np.where(value > 0, value, 1.0)
        return (np.where(value > 0, 0.5 * g / safe, 0.0),)

    return _make(value, (a,), backward, "sqrt")


def exp(a: Node) -> Node:
    value = np.exp(a.value)
    return _make(value, (a,), lambda g: (g * value,), "exp")


def log(a: Node) -> Node:
    if np.any(a.value <= 0):
        raise DomainError("log 输入必须严格为正")
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def softplus(a: Node) -> Node:
    """ζ(x) = log(1 + e^x)"""
    return _make(np.logaddexp(0.0, a.value), (a,), lambda g: (g * expit(a.value),), "softplus")


def relu(a: Node) -> Node:
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def clamp_min(a: Node, lower: float) -> Node:
    """下截断；被截断的位置梯度为 0"""
    mask = a.value >= lower
    return _make(np.maximum(a.value, lower), (a,), lambda g: (g * mask,), "clamp_min")


# ---------------------------------------------------------------- 归约

def _expand_reduced(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum(a: Node, axis=None, keepdims: bool = False) -> Node:  # noqa: A001
    return _make(
        np.sum(a.value, axis=axis, keepdims=keepdims), (a,),
        lambda g: (np.array(_expand_reduced(g, a.shape, axis, keepdims)),),
        "sum",
    )


def mean(a: Node, axis=None, keepdims: bool = False) -> Node:
    count = a.value.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return _make(
        np.mean(a.value, axis=axis, keepdims=keepdims), (a,),
        lambda g: (np.array(_expand_reduced(g, a.shape, axis, keepdims)) / count,),
        "mean",
    )


# ---------------------------------------------------------------- 最后一维上的 softmax 族

def softmax_lastdim(a: Node) -> Node:
    shifted = a.value - np.max(a.value, axis=-1, keepdims=True)
    e = np.exp(shifted)
    value = e / np.sum(e, axis=-1, keepdims=True)
    return _make(
        value, (a,),
        lambda g: (value * (g - np.sum(g * value, axis=-1, keepdims=True)),),
        "softmax",
    )


def logsumexp_lastdim(a: Node, keepdims: bool = False) -> Node:
    value = logsumexp(a.value, axis=-1, keepdims=keepdims)

    def backward(g):
        lse = value if keepdims else np.expand_dims(value, -1)
        gg = g if keepdims else np.expand_dims(g, -1)
        return (gg * np.exp(a.value - lse),)

    return _make(value, (a,), backward, "logsumexp")


def log_softmax_lastdim(a: Node) -> Node:
    """logits − logsumexp(logits)，避免 log(softmax) 下溢"""
    value = a.value - logsumexp(a.value, axis=-1, keepdims=True)
    probs = np.exp(value)
    return _make(
        value, (a,),
        lambda g: (g - probs * np.sum(g, axis=-1, keepdims=True),),
        "log_softmax",
    )


# ---------------------------------------------------------------- 线性代数与形状

def matmul(a, b) -> Node:
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul 只支持二维矩阵: {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul 形状不匹配: {a.shape} @ {b.shape}")
    return _make(
        a.value @ b.value, (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
        "matmul",
    )


def reshape(a: Node, shape: Sequence[int]) -> Node:
    try:
        value = a.value.reshape(tuple(shape))
    except ValueError as e:
        raise ShapeError(f"无法把形状 {a.shape} 变换为 {tuple(shape)}") from e
    return _make(np.array(value), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def slice_lastdim(a: Node, start: int, stop: int) -> Node:
    if not 0 <= start < stop <= a.shape[-1]:
        raise ShapeError(f"切片 [{start}:{stop}] 超出最后一维 {a.shape[-1]}")

    def backward(g):
        full = np.zeros_like(a.value)
        full[..., start:stop] = g
        return (full,)

    return _make(np.array(a.value[..., start:stop]), (a,), backward, "slice")


def gather_rows(m: Node, indices: np.ndarray) -> Node:
    """按行索引取值，梯度散射回被选中的行"""
    indices = np.asarray(indices, dtype=np.int64)
    if np.any(indices < 0) or np.any(indices >= m.shape[0]):
        raise ShapeError(f"行索引越界: 0..{m.shape[0] - 1}")

    def backward(g):
        full = np.zeros_like(m.value)
        np.add.at(full, indices, g)
        return (full,)

    return _make(np.array(m.value[indices]), (m,), backward, "gather_rows")


# ---------------------------------------------------------------- 梯度控制

def stop_gradient(a: Node) -> Node:
    """sg[·]：数值不变，截断梯度"""
    return Node(a.value)


def straight_through(hard_value: np.ndarray, soft: Node) -> Node:
    """前向取 hard_value，反向把梯度原样传给 soft（∂hard/∂soft = I）"""
    hard_value = np.asarray(hard_value, dtype=soft.dtype)
    if hard_value.shape != soft.shape:
        raise ShapeError(f"straight-through 形状不匹配: {hard_value.shape} 与 {soft.shape}")
    return _make(np.array(hard_value), (soft,), lambda g: (g,), "straight_through")


def one_hot(indices, num_classes: int, dtype=None) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros(indices.shape + (num_classes,), dtype=dtype or DEFAULT_DTYPE)
    np.put_along_axis(out, indices[..., None], 1.0, axis=-1)
    return out


# ---------------------------------------------------------------- 反向传播

def _topological_order(root: Node) -> List[Node]:
    order: List[Node] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root: Node) -> Dict[Node, np.ndarray]:
    """从标量根节点反向传播，返回 {叶子节点: 梯度}"""
    if root.value.size != 1:
        raise ShapeError(f"反向传播需要标量根节点，实际形状: {root.shape}")

    order = _topological_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)

    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node._backward(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            g = np.asarray(g, dtype=parent.dtype).reshape(parent.shape)
            parent.grad = g if parent.grad is None else parent.grad + g

    return {
        node: (node.grad if node.grad is not None else np.zeros_like(node.value))
        for node in order
        if node.is_leaf and node.requires_grad
    }


# ---------------------------------------------------------------- 梯度检验

@dataclass
class GradCheckResult:
    """有限差分检验结果"""

    max_error: float
    checked: int
    kinks: List[Tuple[int, Tuple[int, ...]]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.checked > 0


def grad_check(
    f: Callable[[], Node],
    leaves: Sequence[Node],
    h: Optional[float] = None,
    kink_tolerance: Optional[float] = None,
) -> GradCheckResult:
    """比较解析梯度与中心差分

    f 必须是叶子当前值的确定性函数。单侧差分不一致的坐标视为折点，被标记并排除。
    误差定义为 |解析 − 中心差分| / max(1, |中心差分|)。
    """
    from gmvq.config import get_settings

    settings = get_settings()
    h = settings.GRAD_CHECK_STEP if h is None else h
    kink_tolerance = settings.KINK_TOLERANCE if kink_tolerance is None else kink_tolerance
    if not 0 < h <= 1e-3:
        raise DomainError(f"差分步长必须在 (0, 1e-3] 内: {h}")

    root = f()
    grads = backward(root)
    f0 = root.item()

    max_error = 0.0
    checked = 0
    kinks: List[Tuple[int, Tuple[int, ...]]] = []
    for leaf_index, leaf in enumerate(leaves):
        analytic = grads.get(leaf, np.zeros_like(leaf.value))
        base = np.array(leaf.value)
        for idx in np.ndindex(base.shape):
            values = {}
            for sign in (1.0, -1.0):
                perturbed = base.copy()
                perturbed[idx] += sign * h
                leaf.value = _freeze(perturbed)
                with no_grad():
                    values[sign] = f().item()
            leaf.value = _freeze(base.copy())

            central = (values[1.0] - values[-1.0]) / (2.0 * h)
            forward_diff = (values[1.0] - f0) / h
            backward_diff = (f0 - values[-1.0]) / h
            scale_ = max(1.0, abs(central))
            if abs(forward_diff - backward_diff) > kink_tolerance * scale_:
                kinks.append((leaf_index, idx))
                continue
            max_error = max(max_error, abs(float(analytic[idx]) - central) / scale_)
            checked += 1

    return GradCheckResult(max_error=max_error, checked=checked, kinks=kinks)
