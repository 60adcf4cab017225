"""Trainable building blocks on top of :mod:`tgnef.tensor`."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

CHECKPOINT_FORMAT_VERSION = 1


class Parameter(Tensor):
    """A leaf tensor owned by a module, with Adam moment accumulators."""

    __slots__ = ("name", "m", "v")

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)

    def assign(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.data.shape:
            raise T.DimensionError(f"{self.name}: shape {values.shape} != {self.data.shape}")
        self.data = values.copy()


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


class Module:
    training = True

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            p.assign(state[name])


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(glorot(rng, d_in, d_out))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class MLP(Module):
    """Stack of linear layers with ReLU between them (none after the last)."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator, dropout: float = 0.0):
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.dropout = dropout
        self._rng = np.random.default_rng(rng.integers(2**63))

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
                x = T.dropout(x, self.dropout, self._rng, self.training)
        return x


class GRUCell(Module):
    """GRU with the update convention ``h' = (1 - z) * h + z * h_tilde``."""

    def __init__(self, d_in: int, d_h: int, rng: np.random.Generator):
        self.d_in, self.d_h = d_in, d_h
        self.W_z = Parameter(glorot(rng, d_in, d_h))
        self.U_z = Parameter(glorot(rng, d_h, d_h))
        self.b_z = Parameter(np.zeros(d_h))
        self.W_r = Parameter(glorot(rng, d_in, d_h))
        self.U_r = Parameter(glorot(rng, d_h, d_h))
        self.b_r = Parameter(np.zeros(d_h))
        self.W_h = Parameter(glorot(rng, d_in, d_h))
        self.U_h = Parameter(glorot(rng, d_h, d_h))
        self.b_h = Parameter(np.zeros(d_h))

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in or h.shape[-1] != self.d_h:
            raise T.DimensionError(f"gru_cell expects ({self.d_in}, {self.d_h}), got {x.shape}, {h.shape}")
        z = T.sigmoid(x @ self.W_z + h @ self.U_z + self.b_z)
        r = T.sigmoid(x @ self.W_r + h @ self.U_r + self.b_r)
        h_tilde = T.tanh(x @ self.W_h + (r * h) @ self.U_h + self.b_h)
        return (1.0 - z) * h + z * h_tilde


class LSTMCell(Module):
    def __init__(self, d_in: int, d_h: int, rng: np.random.Generator):
        self.d_in, self.d_h = d_in, d_h
        self.W = Parameter(glorot(rng, d_in, 4 * d_h))
        self.U = Parameter(glorot(rng, d_h, 4 * d_h))
        b = np.zeros(4 * d_h)
        b[d_h:2 * d_h] = 1.0  # forget-gate bias
        self.b = Parameter(b)

    def __call__(self, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        h, c = state
        gates = x @ self.W + h @ self.U + self.b
        d = self.d_h
        i = T.sigmoid(gates[..., :d])
        f = T.sigmoid(gates[..., d:2 * d])
        g = T.tanh(gates[..., 2 * d:3 * d])
        o = T.sigmoid(gates[..., 3 * d:])
        c = f * c + i * g
        h = o * T.tanh(c)
        return h, c


class BiLSTM(Module):
    """Bidirectional LSTM over ``x[B, L, d]`` with a step mask ``[B, L]``.

    Masked steps leave the running state untouched, so trailing padding is
    invisible to both directions. Output is ``concat(h_fwd_final, h_bwd_final)``.
    """

    def __init__(self, d_in: int, d_h: int, rng: np.random.Generator):
        self.d_h = d_h
        self.fwd = LSTMCell(d_in, d_h, rng)
        self.bwd = LSTMCell(d_in, d_h, rng)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        mask = np.asarray(mask, dtype=bool)
        h_f = T.lstm_scan(x, mask, self.fwd.W, self.fwd.U, self.fwd.b)
        h_b = T.lstm_scan(x, mask, self.bwd.W, self.bwd.U, self.bwd.b, reverse=True)
        return T.concat([h_f, h_b], axis=-1)


class TimeEncoder(Module):
    """``cos(omega_k * dt)`` with a trainable geometric frequency ladder."""

    def __init__(self, dim: int):
        self.dim = dim
        self.omega = Parameter(1.0 / 10 ** (np.arange(dim) * 5.0 / dim))

    def __call__(self, dt) -> Tensor:
        dt = np.abs(np.asarray(dt, dtype=np.float64))
        return T.cos(Tensor(dt[..., None]) * self.omega)


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        for p in self.params:
            if p.grad is None:
                continue
            p.m = b1 * p.m + (1 - b1) * p.grad
            p.v = b2 * p.v + (1 - b2) * p.grad * p.grad
            if self.lr == 0.0:
                continue
            m_hat = p.m / (1 - b1 ** self.t)
            v_hat = p.v / (1 - b2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# checkpoints -----------------------------------------------------------------


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path: str | Path, module: Module, cfg_hash: str, extra: dict | None = None) -> None:
    """Write named little-endian float64 arrays plus a small JSON header."""
    header = {"format_version": CHECKPOINT_FORMAT_VERSION, "config_hash": cfg_hash, **(extra or {})}
    arrays = {name: np.ascontiguousarray(p.data, dtype="<f8") for name, p in module.named_parameters()}
    arrays["__header__"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path, module: Module, cfg_hash: str | None = None) -> dict:
    with np.load(path) as archive:
        header = json.loads(archive["__header__"].tobytes().decode())
        if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
        if cfg_hash is not None and header.get("config_hash") != cfg_hash:
            raise ValueError(f"checkpoint config hash {header.get('config_hash')} != {cfg_hash}")
        module.load_state_dict({k: archive[k] for k in archive.files if k != "__header__"})
    return header


# gradient checking -----------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    per_input: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_err={self.max_rel_err:.3e} tol={self.tol:.0e}"


def grad_check(f: Callable[[], Tensor], inputs: Sequence[Tensor] | dict[str, Tensor],
               tol: float = 1e-4, h: float = 1e-5, max_elems: int | None = None,
               rng: np.random.Generator | None = None, atol: float = 1e-8) -> GradCheckReport:
    """Compare autodiff gradients of scalar ``f()`` with central differences.

    ``f`` must be deterministic and read the current ``.data`` of ``inputs``.
    With ``max_elems`` only a random subset of coordinates per input is probed.
    The error is ``|ad - fd| / max(|ad|, |fd|, atol)``.
    """
    named = inputs if isinstance(inputs, dict) else {str(i): x for i, x in enumerate(inputs)}
    for x in named.values():
        x.grad = None
    f().backward()
    ad = {k: (x.grad.copy() if x.grad is not None else np.zeros_like(x.data)) for k, x in named.items()}
    rng = rng or np.random.default_rng(0)
    report = GradCheckReport(0.0, tol)
    with T.no_grad():
        for key, x in named.items():
            flat = x.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_elems is not None and flat.size > max_elems:
                idx = np.sort(rng.choice(flat.size, max_elems, replace=False))
            worst = 0.0
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                fp = f().item()
                flat[i] = orig - h
                fm = f().item()
                flat[i] = orig
                g_fd = (fp - fm) / (2 * h)
                g_ad = ad[key].reshape(-1)[i]
                err = abs(g_ad - g_fd) / max(abs(g_ad), abs(g_fd), atol)
                worst = max(worst, err)
            report.per_input[key] = worst
            report.max_rel_err = max(report.max_rel_err, worst)
    return report
