"""Small layer kit: dense, batch norm, activations, BCE, Adam, gradient checks.

Layers cache what they need during ``forward`` and accumulate parameter
gradients during ``backward``; ``backward`` returns the gradient with respect
to the layer input. Parameters live in ``params`` dicts and are updated in
place by the optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

BCE_CLAMP = 1e-7
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.99


class NumericalError(RuntimeError):
    pass


class Module:
    """Parameter/gradient/buffer bookkeeping shared by every layer and model."""

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self.children = {}
        self.training = True

    def add(self, name, module):
        self.children[name] = module
        return module

    def add_param(self, name, value):
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def named_parameters(self, prefix=""):
        for name, value in self.params.items():
            yield prefix + name, value
        for cname, child in self.children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_gradients(self, prefix=""):
        for name, value in self.grads.items():
            yield prefix + name, value
        for cname, child in self.children.items():
            yield from child.named_gradients(f"{prefix}{cname}.")

    def named_buffers(self, prefix=""):
        for name, value in self.buffers.items():
            yield prefix + name, value
        for cname, child in self.children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def parameters(self):
        return dict(self.named_parameters())

    def gradients(self):
        return dict(self.named_gradients())

    def state_dict(self):
        """Copies of every parameter and buffer, keyed by dotted name."""
        state = {k: v.copy() for k, v in self.named_parameters()}
        state.update({k: v.copy() for k, v in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        for table, prefix, owner in self._tables():
            for name in table:
                key = prefix + name
                if key not in state:
                    raise KeyError(f"missing tensor {key}")
                value = np.asarray(state[key])
                if value.shape != table[name].shape:
                    raise ValueError(f"{key}: shape {value.shape} != {table[name].shape}")
                table[name][...] = value

    def _tables(self, prefix=""):
        yield self.params, prefix, self
        yield self.buffers, prefix, self
        for cname, child in self.children.items():
            yield from child._tables(f"{prefix}{cname}.")

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0)
        for child in self.children.values():
            child.zero_grad()

    def train(self, mode=True):
        self.training = mode
        for child in self.children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def astype(self, dtype):
        for table, _, _ in self._tables():
            for name in table:
                table[name] = table[name].astype(dtype)
        for module in self.modules():
            module.grads = {k: np.zeros_like(v) for k, v in module.params.items()}
        return self

    def modules(self):
        yield self
        for child in self.children.values():
            yield from child.modules()

    @property
    def dtype(self):
        for _, v in self.named_parameters():
            return v.dtype
        return np.dtype(np.float32)


def glorot_uniform(rng, fan_out, fan_in, dtype=np.float32):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype)


class Dense(Module):
    def __init__(self, dim_in, dim_out, rng, dtype=np.float32):
        super().__init__()
        self.dim_in = dim_in
        self.dim_out = dim_out
        self.add_param("W", glorot_uniform(rng, dim_out, dim_in, dtype))
        self.add_param("b", np.zeros(dim_out, dtype=dtype))
        self._x = None

    def forward(self, x):
        if x.shape[-1] != self.dim_in:
            raise ValueError(f"dense layer expects last dim {self.dim_in}, got {x.shape[-1]}")
        self._x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, dy):
        x = self._x.reshape(-1, self.dim_in)
        dy2 = dy.reshape(-1, self.dim_out)
        self.grads["W"] += dy2.T @ x
        self.grads["b"] += dy2.sum(axis=0)
        return dy @ self.params["W"]


class BatchNorm(Module):
    def __init__(self, dim, dtype=np.float32, epsilon=BN_EPSILON, momentum=BN_MOMENTUM):
        super().__init__()
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        self.epsilon = epsilon
        self.momentum = momentum
        self.add_param("gamma", np.ones(dim, dtype=dtype))
        self.add_param("beta", np.zeros(dim, dtype=dtype))
        self.buffers["running_mean"] = np.zeros(dim, dtype=dtype)
        self.buffers["running_var"] = np.ones(dim, dtype=dtype)
        self._cache = None

    def forward(self, x):
        gamma, beta = self.params["gamma"], self.params["beta"]
        if self.training:
            if x.shape[0] < 2:
                raise ValueError("batch norm in train mode needs a batch of at least 2")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            m = self.momentum
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm *= m
            rm += (1 - m) * mean
            rv *= m
            rv += (1 - m) * var
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, self.training)
        return xhat * gamma + beta

    def backward(self, dy):
        xhat, inv_std, training = self._cache
        gamma = self.params["gamma"]
        self.grads["gamma"] += (dy * xhat).sum(axis=0)
        self.grads["beta"] += dy.sum(axis=0)
        dxhat = dy * gamma
        if not training:
            return dxhat * inv_std
        n = dy.shape[0]
        return (inv_std / n) * (
            n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))


class ReLU(Module):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


def sigmoid(o):
    o = np.asarray(o)
    out = np.empty_like(o, dtype=np.result_type(o.dtype, np.float32))
    pos = o >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-o[pos]))
    e = np.exp(o[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax(z):
    return kernels.softmax_rows(z)


def softmax_backward(s, ds):
    return s * (ds - (s * ds).sum(axis=-1, keepdims=True))


def bce_loss(p, y, clamp=BCE_CLAMP):
    """Mean binary cross-entropy over a B x C batch; returns (loss, dL/dp).

    Probabilities are clamped to [clamp, 1 - clamp]; the gradient is that of
    the clamped loss, so it is zero where clamping is active.
    """
    p = np.asarray(p)
    y = np.asarray(y)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: predictions {p.shape}, targets {y.shape}")
    p64 = p.astype(np.float64)
    y64 = y.astype(np.float64)
    pc = np.clip(p64, clamp, 1.0 - clamp)
    n = p.size
    loss = -np.mean(y64 * np.log(pc) + (1.0 - y64) * np.log1p(-pc))
    active = (p64 >= clamp) & (p64 <= 1.0 - clamp)
    grad = ((pc - y64) / (pc * (1.0 - pc)) / n) * active
    return float(loss), grad.astype(p.dtype)


def bce_with_logits(o, y, clamp=BCE_CLAMP):
    """Loss of sigmoid(o) against y, plus dL/do = (sigmoid(o) - y) / (B*C)."""
    p = sigmoid(o)
    loss, _ = bce_loss(p, y, clamp)
    return loss, p, ((p - y) / p.size).astype(o.dtype)


@dataclass
class Adam:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params, grads):
        if set(params) != set(grads):
            raise ValueError("parameter and gradient names differ")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.epsilon)).astype(p.dtype)

    def state_dict(self):
        state = {f"m.{k}": v.copy() for k, v in self.m.items()}
        state.update({f"v.{k}": v.copy() for k, v in self.v.items()})
        return state

    def load_state_dict(self, state, step_count):
        self.step_count = step_count
        self.m = {k[2:]: v.copy() for k, v in state.items() if k.startswith("m.")}
        self.v = {k[2:]: v.copy() for k, v in state.items() if k.startswith("v.")}


# -- finite-difference gradient checking -----------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    errors: dict
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


GRAD_SCALE_FLOOR = 1e-5


def _rel_error(analytic, numeric):
    # the floor keeps structurally-zero gradients (e.g. a bias feeding batch
    # norm) from turning finite-difference noise into a relative error of 1
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), GRAD_SCALE_FLOOR)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def grad_check(fragment, inputs, tolerance=1e-4, h=1e-5, seed=0, check_inputs=True):
    """Compare analytic and central-difference gradients of a fragment.

    ``fragment`` needs ``forward(*inputs)``, ``backward(dout)`` returning the
    input gradient(s), and the ``Module`` parameter/gradient accessors. Scalar
    outputs are used as the loss directly; array outputs are reduced against a
    fixed random projection. The error per tensor is the largest absolute
    deviation divided by the largest gradient magnitude of that tensor
    (floored at ``GRAD_SCALE_FLOOR``).
    """
    inputs = [np.array(x, copy=True) for x in inputs]
    out = fragment.forward(*inputs)
    proj = None
    if np.ndim(out) > 0:
        proj = np.random.default_rng(seed).standard_normal(np.shape(out)).astype(np.asarray(out).dtype)

    def loss():
        o = fragment.forward(*inputs)
        return float(np.sum(np.asarray(o, dtype=np.float64) * proj)) if proj is not None else float(o)

    fragment.zero_grad()
    fragment.forward(*inputs)
    dout = proj if proj is not None else 1.0
    dx = fragment.backward(dout)
    if not isinstance(dx, (tuple, list)):
        dx = (dx,)
    analytic = {name: g.copy() for name, g in fragment.named_gradients()}
    targets = list(fragment.named_parameters())
    if check_inputs:
        for i, (x, g) in enumerate(zip(inputs, dx)):
            if g is not None:
                analytic[f"input{i}"] = np.asarray(g).copy()
                targets.append((f"input{i}", x))

    errors = {}
    for name, arr in targets:
        numeric = np.zeros(arr.shape, dtype=np.float64)
        flat = arr.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss()
            flat[i] = orig - h
            fm = loss()
            flat[i] = orig
            num_flat[i] = (fp - fm) / (2 * h)
        errors[name] = _rel_error(analytic[name].astype(np.float64), numeric)
    worst = max(errors.values(), default=0.0)
    return GradCheckReport(worst, errors, tolerance)
