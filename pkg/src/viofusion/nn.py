"""Layers, parameter containers, the optimizer, and the gradient checker.

Everything here is built on the Tensor autodiff core. Parameters are named
so checkpoints and the parameter-count report can address them stably;
modules register parameters and submodules in definition order, which fixes
the iteration order everywhere (init draws, optimizer state, serialization).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, GradientStateError, ShapeError
from .tensor import Tensor


class Parameter:
    """A trainable tensor plus its optimizer state."""

    def __init__(self, data, name=""):
        self.tensor = Tensor(data, requires_grad=True)
        self.name = name
        self.adam_m = np.zeros_like(self.tensor.data)
        self.adam_v = np.zeros_like(self.tensor.data)
        self.adam_t = 0

    @property
    def data(self):
        return self.tensor.data

    @data.setter
    def data(self, value):
        value = np.asarray(value, dtype=self.tensor.data.dtype)
        if value.shape != self.tensor.data.shape:
            raise ShapeError(
                f"parameter {self.name}: cannot assign shape {value.shape} over {self.tensor.data.shape}"
            )
        self.tensor.data = value

    @property
    def grad(self):
        return self.tensor.grad

    @property
    def shape(self):
        return self.tensor.data.shape

    @property
    def size(self):
        return self.tensor.data.size

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def uniform_init(rng, shape, fan_in):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) draw, float64."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Base class: tracks parameters and submodules in definition order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            for i, v in enumerate(value):
                self._modules[f"{name}.{i}"] = v
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            p.name = f"{prefix}{name}"
            yield p.name, p
        for name, mod in self._modules.items():
            yield from mod.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def param_count(self):
        return sum(p.size for p in self.parameters())

    def state_dict(self):
        return {name: np.array(p.data, copy=True) for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ContractError(
                f"state dict mismatch: missing={missing[:4]} extra={extra[:4]}"
            )
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(
                    f"state dict: parameter {name} has shape {value.shape}, model expects {p.shape}"
                )
            p.data = value.astype(p.data.dtype)

    def astype(self, dtype):
        for p in self.parameters():
            p.tensor.data = p.tensor.data.astype(dtype)
            p.adam_m = p.adam_m.astype(dtype)
            p.adam_v = p.adam_v.astype(dtype)
        return self


class Linear(Module):
    """Affine map: rows of x against weight (out_features, in_features)."""

    def __init__(self, in_features, out_features, rng, bias=True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(uniform_init(rng, (out_features, in_features), in_features))
        self.bias = Parameter(uniform_init(rng, (out_features,), in_features)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(
                f"linear: input has {x.shape[-1]} features, layer expects {self.in_features}"
            )
        out = T.matmul(x, self.weight.tensor.transpose())
        if self.bias is not None:
            out = out + self.bias.tensor
        return out


class Conv1dCausal(Module):
    """Dilated causal 1-D conv layer over (channels, time) input."""

    def __init__(self, in_channels, out_channels, kernel_size, rng, dilation=1, bias=True):
        super().__init__()
        if kernel_size < 1:
            raise ConfigError(f"conv1d layer: kernel size must be >= 1, got {kernel_size}")
        if dilation < 1:
            raise ConfigError(f"conv1d layer: dilation must be >= 1, got {dilation}")
        self.dilation = dilation
        fan_in = in_channels * kernel_size
        self.weight = Parameter(uniform_init(rng, (out_channels, in_channels, kernel_size), fan_in))
        self.bias = Parameter(uniform_init(rng, (out_channels,), fan_in)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        b = self.bias.tensor if self.bias is not None else None
        return T.conv1d_causal(x, self.weight.tensor, bias=b, dilation=self.dilation)


class Conv2d(Module):
    """Strided 2-D conv layer over a single (channels, H, W) image."""

    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, padding=0, bias=True):
        super().__init__()
        kh, kw = (kernel_size, kernel_size) if isinstance(kernel_size, int) else kernel_size
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kh * kw
        self.weight = Parameter(uniform_init(rng, (out_channels, in_channels, kh, kw), fan_in))
        self.bias = Parameter(uniform_init(rng, (out_channels,), fan_in)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        b = self.bias.tensor if self.bias is not None else None
        return T.conv2d(x, self.weight.tensor, bias=b, stride=self.stride, padding=self.padding)


class LstmCell(Module):
    """Single LSTM cell; gate order is input, forget, cell, output."""

    def __init__(self, input_size, hidden_size, rng, bias=True):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.w_ih = Parameter(uniform_init(rng, (4 * hidden_size, input_size), input_size))
        self.w_hh = Parameter(uniform_init(rng, (4 * hidden_size, hidden_size), hidden_size))
        self.bias = Parameter(uniform_init(rng, (4 * hidden_size,), hidden_size)) if bias else None

    def __call__(self, x: Tensor, h: Tensor, c: Tensor):
        if x.shape != (self.input_size,):
            raise ShapeError(f"lstm cell: input shape {x.shape} != ({self.input_size},)")
        gates = T.matmul(self.w_ih.tensor, x) + T.matmul(self.w_hh.tensor, h)
        if self.bias is not None:
            gates = gates + self.bias.tensor
        hs = self.hidden_size
        i = gates[0:hs].sigmoid()
        f = gates[hs : 2 * hs].sigmoid()
        g = gates[2 * hs : 3 * hs].tanh()
        o = gates[3 * hs : 4 * hs].sigmoid()
        c_new = f * c + i * g
        h_new = o * c_new.tanh()
        return h_new, c_new

    def initial_state(self, dtype=np.float64):
        zeros = np.zeros(self.hidden_size, dtype=dtype)
        return Tensor(zeros), Tensor(zeros.copy())


def gated_activation(filt: Tensor, gate: Tensor) -> Tensor:
    """tanh(filter branch) * sigmoid(gate branch), elementwise."""
    if filt.shape != gate.shape:
        raise ShapeError(f"gated activation: shapes {filt.shape} and {gate.shape} differ")
    return filt.tanh() * gate.sigmoid()


def adam_step(params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """One ADAM update with bias correction; clears gradients afterwards.

    Every parameter must hold a gradient (a partial backward pass is a bug
    upstream, not something to silently skip).
    """
    params = list(params)
    for p in params:
        if p.grad is None:
            raise GradientStateError(f"adam: parameter {p.name or '<unnamed>'} has no gradient")
    for p in params:
        g = p.grad
        p.adam_t += 1
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * (g * g)
        m_hat = p.adam_m / (1.0 - beta1 ** p.adam_t)
        v_hat = p.adam_v / (1.0 - beta2 ** p.adam_t)
        p.tensor.data = p.tensor.data - lr * m_hat / (np.sqrt(v_hat) + eps)
        p.tensor.grad = None


def global_grad_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    return float(np.sqrt(total))


def finite_diff_check(fn, params, rng, eps=1e-5, samples_per_param=4):
    """Compare analytic gradients of ``fn()`` against central differences.

    ``fn`` must rebuild its graph from the given parameters on every call
    and return a scalar Tensor. The check first probes determinism (two
    calls must agree bitwise), then perturbs a random sample of coordinates
    per parameter. Relative error uses |a-n| / (|a|+|n|+1e-12).

    Returns a dict: per-parameter entries plus an overall ``max_rel_err``.
    """
    params = list(params)
    T.zero_grads(params)
    first = fn()
    if first.data.shape != ():
        raise ContractError(f"finite_diff_check: fn must return a scalar, got shape {first.shape}")
    second = fn()
    if first.data.tobytes() != second.data.tobytes():
        raise ContractError("finite_diff_check: fn is not deterministic across calls")
    T.backward(first)
    analytic = {id(p): np.array(p.grad, copy=True) for p in params}
    T.zero_grads(params)

    report = {"params": {}, "max_rel_err": 0.0}
    for idx, p in enumerate(params):
        flat = p.tensor.data.reshape(-1)
        n = min(samples_per_param, flat.size)
        coords = rng.choice(flat.size, size=n, replace=False)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            lo_hi = fn().item()
            flat[c] = orig - eps
            lo_lo = fn().item()
            flat[c] = orig
            numeric = (lo_hi - lo_lo) / (2.0 * eps)
            a = float(analytic[id(p)].reshape(-1)[c])
            rel = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
            worst = max(worst, rel)
        key = p.name or f"param_{idx}"
        report["params"][key] = {"max_rel_err": worst, "coords_checked": int(n)}
        report["max_rel_err"] = max(report["max_rel_err"], worst)
    return report
