"""Small reverse-mode automatic differentiation over float64 numpy arrays.

Values are wrapped in :class:`Tensor` nodes that record the operation that
produced them. Calling :func:`backward` on a scalar node walks the tape in
reverse topological order and accumulates exact gradients into every node
that was reached.

Only what the adversarial training code needs is provided: fully connected
layers, a handful of pointwise nonlinearities, training-mode batch
normalization, and reductions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

OP_KINDS = frozenset(
    {
        "input",
        "parameter",
        "linear",
        "relu",
        "sigmoid",
        "tanh",
        "log",
        "exp",
        "softplus",
        "batchnorm",
        "add",
        "mul",
        "neg",
        "square",
        "sum",
        "mean",
        "hinge-pos-part",
        "inner-product",
        "stack",
    }
)

BATCHNORM_EPS = 1e-5

_next_id = 0


def _new_id() -> int:
    global _next_id
    _next_id += 1
    return _next_id


class GraphError(ValueError):
    """Raised for malformed graphs: shape mismatches, unbound inputs, bad specs."""


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("id", "op", "parents", "value", "grad", "name", "needs_grad", "_backward")

    def __init__(
        self,
        value,
        parents: Sequence["Tensor"] = (),
        op: str = "input",
        name: str | None = None,
    ):
        self.id = _new_id()
        self.op = op
        self.parents = tuple(parents)
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.name = name
        # cleared by a pruned backward pass for nodes that lead to no requested parameter
        self.needs_grad = True
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor<{self.op}{label} shape={self.shape}>"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value, name: str) -> Tensor:
    return Tensor(value, op="parameter", name=name)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _make(value, parents, op, backward) -> Tensor:
    out = Tensor(value, parents, op)
    out._backward = backward
    return out


def _accumulate(node: Tensor, g: np.ndarray) -> None:
    # gradient arrays are never mutated in place, so sharing them is safe
    if not node.needs_grad:
        return
    if node.grad is None:
        node.grad = np.asarray(g, dtype=np.float64)
    else:
        node.grad = node.grad + g


# ---------------------------------------------------------------- primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.value + b.value
    except ValueError as exc:
        raise GraphError(f"add: incompatible shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(value, (a, b), "add", backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.value * b.value
    except ValueError as exc:
        raise GraphError(f"mul: incompatible shapes {a.shape} and {b.shape}") from exc

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.value, a.shape))
        _accumulate(b, _unbroadcast(g * a.value, b.shape))

    return _make(value, (a, b), "mul", backward)


def neg(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _make(-a.value, (a,), "neg", lambda g: _accumulate(a, -g))


def square(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _make(a.value**2, (a,), "square", lambda g: _accumulate(a, 2.0 * a.value * g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` for a batch ``x`` of shape (n, fan_in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.value.ndim != 2 or weight.value.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise GraphError(f"linear: cannot apply weight {weight.shape} to input {x.shape}")
    value = x.value @ weight.value
    parents = [x, weight]
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise GraphError(f"linear: bias shape {bias.shape} != ({weight.shape[1]},)")
        value = value + bias.value
        parents.append(bias)

    def backward(g):
        if x.needs_grad:
            _accumulate(x, g @ weight.value.T)
        if weight.needs_grad:
            _accumulate(weight, x.value.T @ g)
        if bias is not None and bias.needs_grad:
            _accumulate(bias, g.sum(axis=0))

    return _make(value, parents, "linear", backward)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0.0  # derivative 0 at exactly 0
    return _make(np.maximum(x.value, 0.0), (x,), "relu", lambda g: _accumulate(x, g * mask))


def hinge(x: Tensor) -> Tensor:
    """Positive part ``[x]_+``; same kink convention as :func:`relu`."""
    x = as_tensor(x)
    mask = x.value > 0.0
    return _make(
        np.maximum(x.value, 0.0), (x,), "hinge-pos-part", lambda g: _accumulate(x, g * mask)
    )


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = _stable_sigmoid(np.atleast_1d(x.value)).reshape(x.shape)
    return _make(s, (x,), "sigmoid", lambda g: _accumulate(x, g * s * (1.0 - s)))


def softplus(x: Tensor) -> Tensor:
    """``log(1 + exp(x))`` evaluated without overflow."""
    x = as_tensor(x)
    v = x.value
    value = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
    s = _stable_sigmoid(np.atleast_1d(v)).reshape(x.shape)
    return _make(value, (x,), "softplus", lambda g: _accumulate(x, g * s))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.value)
    return _make(t, (x,), "tanh", lambda g: _accumulate(x, g * (1.0 - t * t)))


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.value)
    return _make(e, (x,), "exp", lambda g: _accumulate(x, g * e))


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.log(x.value)
    return _make(value, (x,), "log", lambda g: _accumulate(x, g / x.value))


def total(x: Tensor) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _make(x.value.sum(), (x,), "sum", lambda g: _accumulate(x, np.broadcast_to(g, shape)))


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    if axis is None:
        count = x.value.size
        return _make(
            x.value.mean(), (x,), "mean", lambda g: _accumulate(x, np.broadcast_to(g / count, shape))
        )
    count = shape[axis]

    def backward(g):
        _accumulate(x, np.broadcast_to(np.expand_dims(g, axis) / count, shape))

    return _make(x.value.mean(axis=axis), (x,), "mean", backward)


def inner(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise inner product; vectors give a scalar, (n, d) pairs give (n,)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise GraphError(f"inner: shape mismatch {a.shape} vs {b.shape}")
    value = (a.value * b.value).sum(axis=-1)

    def backward(g):
        g = np.expand_dims(g, -1)
        _accumulate(a, g * b.value)
        _accumulate(b, g * a.value)

    return _make(value, (a, b), "inner-product", backward)


def column(x: Tensor, index: int) -> Tensor:
    """Column ``index`` of a 2-D node, as a 1-D node."""
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[:, index] = g
        _accumulate(x, full)

    return _make(x.value[:, index], (x,), "stack", backward)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = BATCHNORM_EPS) -> Tensor:
    """Training-mode batch normalization over axis 0 (batch statistics only)."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.value.ndim != 2:
        raise GraphError(f"batchnorm expects (batch, features), got {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise GraphError("batchnorm needs a batch of at least 2 rows")
    if eps <= 0:
        raise GraphError("batchnorm eps must be positive")
    mu = x.value.mean(axis=0)
    centered = x.value - mu
    var = (centered**2).mean(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    value = gamma.value * xhat + beta.value

    def backward(g):
        if gamma.needs_grad:
            _accumulate(gamma, (g * xhat).sum(axis=0))
        if beta.needs_grad:
            _accumulate(beta, g.sum(axis=0))
        if not x.needs_grad:
            return
        gx = g * gamma.value
        dx = inv_std * (gx - gx.mean(axis=0) - xhat * (gx * xhat).mean(axis=0))
        _accumulate(x, dx)

    return _make(value, (x, gamma, beta), "batchnorm", backward)


def batchnorm_train(x, gamma, beta, eps: float = BATCHNORM_EPS) -> np.ndarray:
    """Array-level convenience around :func:`batchnorm`."""
    return batchnorm(as_tensor(x), as_tensor(gamma), as_tensor(beta), eps).value


_ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "identity": lambda t: t,
}


# ------------------------------------------------------------------ backward


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node.parents:
            if p.id not in seen:
                stack.append((p, False))
    return order


def backward(output: Tensor, params: Iterable[Tensor] | None = None) -> dict[str, np.ndarray]:
    """Reverse-mode sweep from a scalar ``output``.

    Gradients are left on every reached node's ``grad``. When ``params`` is
    given, the sweep is pruned to nodes that lead to one of them, and the
    return value is restricted to those names; parameters the output does not
    depend on get zero arrays.
    """
    if output.value.size != 1:
        raise GraphError(f"backward needs a scalar output, got shape {output.shape}")
    order = _topological(output)
    wanted = None if params is None else {p.name for p in params}
    for node in order:  # parents precede children
        node.grad = None
        if wanted is None:
            node.needs_grad = True
        elif node.op == "parameter":
            node.needs_grad = node.name in wanted
        else:
            node.needs_grad = any(p.needs_grad for p in node.parents)
    output.grad = np.ones_like(output.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None and node.needs_grad:
            node._backward(node.grad)
    grads = {
        n.name: n.grad for n in order if n.op == "parameter" and n.name is not None and n.grad is not None
    }
    if params is not None:
        grads = {p.name: grads.get(p.name, np.zeros_like(p.value)) for p in params}
    return grads


# ---------------------------------------------------------------- parameters

PARTITIONS = ("w", "b", "zeta", "theta")


@dataclass
class ParamSet:
    """Named trainable tensors plus their partition label (w, b, zeta or theta)."""

    tensors: dict[str, Tensor] = field(default_factory=dict)
    labels: dict[str, str] = field(default_factory=dict)

    def add(self, tensor: Tensor, label: str) -> Tensor:
        if label not in PARTITIONS:
            raise GraphError(f"unknown partition label {label!r}")
        if tensor.name in self.tensors:
            raise GraphError(f"duplicate parameter name {tensor.name!r}")
        self.tensors[tensor.name] = tensor
        self.labels[tensor.name] = label
        return tensor

    def merged(self, other: "ParamSet") -> "ParamSet":
        out = ParamSet()
        for ps in (self, other):
            for name, t in ps.tensors.items():
                out.add(t, ps.labels[name])
        return out

    def names(self, labels: Iterable[str] | None = None) -> list[str]:
        if labels is None:
            return list(self.tensors)
        wanted = set(labels)
        return [n for n, lab in self.labels.items() if lab in wanted]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def __len__(self) -> int:
        return len(self.tensors)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.value.copy() for n, t in self.tensors.items()}

    def load(self, values: Mapping[str, np.ndarray]) -> None:
        for n, v in values.items():
            self.tensors[n].value = np.array(v, dtype=np.float64)


# ----------------------------------------------------------------------- MLP


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths plus per-layer activation and batchnorm flags.

    ``activations[i]`` and ``batchnorm[i]`` describe what follows linear layer
    ``i``; batchnorm is applied before the activation.
    """

    sizes: tuple[int, ...]
    activations: tuple[str, ...]
    batchnorm: tuple[bool, ...]

    @classmethod
    def simple(cls, sizes: Sequence[int], hidden="relu", output="identity", bn_hidden=False):
        k = len(sizes) - 1
        acts = tuple([hidden] * (k - 1) + [output]) if k >= 1 else ()
        bns = tuple([bn_hidden] * (k - 1) + [False]) if k >= 1 else ()
        return cls(tuple(sizes), acts, bns)

    def validate(self) -> None:
        if len(self.sizes) < 2:
            raise GraphError("an MLP needs at least one layer (two sizes)")
        if any(int(s) != s or s < 1 for s in self.sizes):
            raise GraphError(f"layer sizes must be positive integers: {self.sizes}")
        k = len(self.sizes) - 1
        if len(self.activations) != k or len(self.batchnorm) != k:
            raise GraphError(
                f"{k} layers need {k} activation tags and batchnorm flags, "
                f"got {len(self.activations)} and {len(self.batchnorm)}"
            )
        for a in self.activations:
            if a not in _ACTIVATIONS:
                raise GraphError(f"unknown activation {a!r}")


def discriminator_spec(width: int = 128, in_dim: int = 2) -> MlpSpec:
    return MlpSpec.simple([in_dim, width, width, width, 1])


def generator_spec(width: int = 128, latent_dim: int = 4, out_dim: int = 2) -> MlpSpec:
    return MlpSpec.simple([latent_dim, width, width, width, out_dim], bn_hidden=True)


class Mlp:
    """Fully connected network built as a fresh graph on every call.

    As a discriminator the last linear layer is the hyperplane ``(w, b)`` and
    everything below it is the feature map; as a generator every tensor is a
    generator parameter.
    """

    def __init__(self, spec: MlpSpec, params: ParamSet, prefix: str):
        self.spec = spec
        self.params = params
        self.prefix = prefix

    def _layer(self, i: int, part: str) -> Tensor:
        return self.params[f"{self.prefix}.{i}.{part}"]

    @property
    def head_weight(self) -> Tensor:
        return self._layer(len(self.spec.sizes) - 2, "weight")

    @property
    def head_bias(self) -> Tensor:
        return self._layer(len(self.spec.sizes) - 2, "bias")

    def _block(self, h: Tensor, i: int) -> Tensor:
        h = linear(h, self._layer(i, "weight"), self._layer(i, "bias"))
        if self.spec.batchnorm[i]:
            h = batchnorm(h, self._layer(i, "gamma"), self._layer(i, "beta"))
        return _ACTIVATIONS[self.spec.activations[i]](h)

    def features(self, x) -> Tensor:
        """Everything except the last layer; identity for a single-layer net."""
        h = as_tensor(x)
        if h.value.ndim != 2 or h.shape[1] != self.spec.sizes[0]:
            raise GraphError(f"input shape {h.shape} does not match width {self.spec.sizes[0]}")
        for i in range(len(self.spec.sizes) - 2):
            h = self._block(h, i)
        return h

    def __call__(self, x) -> Tensor:
        h = self._block(self.features(x), len(self.spec.sizes) - 2)
        if self.spec.sizes[-1] == 1:
            h = column(h, 0)
        return h


def build_mlp(
    spec: MlpSpec,
    seed: int | np.random.Generator,
    role: str = "discriminator",
    prefix: str | None = None,
    init: str = "glorot",
) -> tuple[Mlp, ParamSet]:
    """Create an :class:`Mlp` and its parameters.

    Weights are Glorot-uniform on ``[-a, a]``, ``a = sqrt(6 / (fan_in + fan_out))``;
    biases start at zero, batchnorm scale at one and shift at zero. ``init="zeros"``
    zeroes every weight as well.
    """
    spec.validate()
    if role not in ("discriminator", "generator"):
        raise GraphError(f"unknown role {role!r}")
    if init not in ("glorot", "zeros"):
        raise GraphError(f"unknown init {init!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    prefix = prefix or ("D" if role == "discriminator" else "G")
    params = ParamSet()
    last = len(spec.sizes) - 2
    for i, (fan_in, fan_out) in enumerate(zip(spec.sizes[:-1], spec.sizes[1:])):
        if init == "zeros":
            w = np.zeros((fan_in, fan_out))
        else:
            a = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-a, a, size=(fan_in, fan_out))
        if role == "generator":
            wl, bl = "theta", "theta"
        elif i == last:
            wl, bl = "w", "b"
        else:
            wl, bl = "zeta", "zeta"
        params.add(parameter(w, f"{prefix}.{i}.weight"), wl)
        params.add(parameter(np.zeros(fan_out), f"{prefix}.{i}.bias"), bl)
        if spec.batchnorm[i]:
            params.add(parameter(np.ones(fan_out), f"{prefix}.{i}.gamma"), wl)
            params.add(parameter(np.zeros(fan_out), f"{prefix}.{i}.beta"), wl)
    return Mlp(spec, params, prefix), params


def forward(graph: Callable[..., Tensor], inputs: Mapping[str, np.ndarray]) -> Tensor:
    """Evaluate ``graph`` (a callable taking keyword inputs) on bound arrays."""
    try:
        return graph(**{k: Tensor(v, name=k) for k, v in inputs.items()})
    except TypeError as exc:
        raise GraphError(f"unbound or unexpected input: {exc}") from exc


def grad_check(
    loss_fn: Callable[[], Tensor], params: ParamSet | Iterable[Tensor], eps: float = 1e-5
) -> float:
    """Max relative error between autodiff and central differences over all entries.

    ``loss_fn`` must rebuild the graph from the current parameter values each
    time it is called.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    tensors = list(params)
    grads = backward(loss_fn(), tensors)
    worst = 0.0
    for t in tensors:
        analytic = grads[t.name]
        flat = t.value.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = loss_fn().item()
            flat[j] = orig - eps
            down = loss_fn().item()
            flat[j] = orig
            numeric = (up - down) / (2.0 * eps)
            err = abs(analytic.reshape(-1)[j] - numeric) / (abs(numeric) + 1e-12)
            # both gradients zero counts as exact
            if analytic.reshape(-1)[j] == 0.0 and numeric == 0.0:
                err = 0.0
            worst = max(worst, err)
    return worst
