"""Finite-difference verification of analytic gradients.

The relative-error denominator is floored so that coordinates whose true
gradient is zero compare against the floor instead of amplifying
finite-difference noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .layers import Attention, Bilstm, Conv2d, Dense, LstmCell, MaxPool2d, ResidualBlock

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4
ERROR_FLOOR = 1e-3


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    tol: float
    worst_param: str

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


@dataclass
class GradCheckReport:
    results: list[GradCheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_text(self) -> str:
        lines = []
        for r in self.results:
            status = "ok" if r.passed else "FAIL"
            lines.append(
                f"{r.name:<24} max_rel_error={r.max_rel_error:.3e} "
                f"tol={r.tol:.1e} worst={r.worst_param} [{status}]"
            )
        lines.append("all checks passed" if self.passed else "GRADIENT CHECK FAILED")
        return "\n".join(lines)


def gradient_check(loss_fn: Callable[[], Tensor], params: dict[str, Tensor],
                   step: float = DEFAULT_STEP, tol: float = DEFAULT_TOL,
                   name: str = "check") -> GradCheckResult:
    """Compare backward() gradients against central differences.

    loss_fn must rebuild the graph from the live param tensors on every
    call; params maps names to the leaf tensors being perturbed.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {
        name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        for name, p in params.items()
    }

    max_err = 0.0
    worst = ""
    for pname, p in params.items():
        flat = p.data.reshape(-1)
        grad_flat = analytic[pname].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = float(loss_fn().data)
            flat[idx] = orig - step
            down = float(loss_fn().data)
            flat[idx] = orig
            numeric = (up - down) / (2 * step)
            a = grad_flat[idx]
            denom = max(abs(a), abs(numeric), ERROR_FLOOR)
            err = abs(a - numeric) / denom
            if err > max_err:
                max_err = err
                worst = f"{pname}[{idx}]"
    return GradCheckResult(name=name, max_rel_error=max_err, tol=tol,
                           worst_param=worst or next(iter(params), ""))


def _dense_case(rng: np.random.Generator) -> tuple[str, Callable[[], Tensor], dict]:
    layer = Dense(5, 4, rng, activation="tanh")
    x = Tensor(rng.standard_normal((3, 5)))
    return "dense", lambda: T.sum_(T.mul(layer(x), layer(x))), layer.named_parameters()


def _lstm_case(rng: np.random.Generator) -> tuple[str, Callable[[], Tensor], dict]:
    cell = LstmCell(3, 4, rng)
    x = Tensor(rng.standard_normal((2, 5, 3)))
    return "lstm_sequence", lambda: T.sum_(T.mul(cell.sequence(x), cell.sequence(x))), \
        cell.named_parameters()


def _bilstm_case(rng: np.random.Generator) -> tuple[str, Callable[[], Tensor], dict]:
    layer = Bilstm(3, 2, rng)
    x = Tensor(rng.standard_normal((2, 4, 3)))

    def loss():
        out = layer(x)
        return T.sum_(T.mul(layer.final_state(out), layer.final_state(out)))

    return "bilstm", loss, layer.named_parameters()


def _attention_case(rng: np.random.Generator) -> tuple[str, Callable[[], Tensor], dict]:
    layer = Attention(4, 3, 5, 4, rng)
    h = Tensor(rng.standard_normal((2, 4, 6)))
    q = Tensor(rng.standard_normal((2, 3)))

    def loss():
        out, _ = layer(h, q)
        return T.sum_(T.mul(out, out))

    return "attention", loss, layer.named_parameters()


def _conv_case(rng: np.random.Generator) -> tuple[str, Callable[[], Tensor], dict]:
    layer = Conv2d(2, 3, 3, rng, stride=2)
    x = Tensor(rng.standard_normal((2, 2, 6, 6)))
    return "conv2d", lambda: T.sum_(T.mul(layer(x), layer(x))), layer.named_parameters()


def _residual_case(rng: np.random.Generator) -> tuple[str, Callable[[], Tensor], dict]:
    block = ResidualBlock(2, 3, rng, stride=2)
    for p in block.named_parameters().values():
        p.data += 0.05 * rng.standard_normal(p.data.shape)
    x = Tensor(rng.standard_normal((1, 2, 6, 6)))
    return "residual_block", lambda: T.sum_(T.mul(block(x), block(x))), \
        block.named_parameters()


def _pool_case(rng: np.random.Generator) -> tuple[str, Callable[[], Tensor], dict]:
    w = Tensor(rng.standard_normal((1, 1, 3, 3)), requires_grad=True)
    x = Tensor(rng.standard_normal((1, 1, 8, 8)))

    def loss():
        y = MaxPool2d(2)(T.conv2d(x, w, None))
        return T.sum_(T.mul(y, y))

    return "maxpool2d", loss, {"w": w}


def standard_suite(seed: int = 0, step: float = DEFAULT_STEP,
                   tol: float = DEFAULT_TOL) -> GradCheckReport:
    """Gradient-check every layer family at miniature sizes."""
    report = GradCheckReport()
    cases = [_dense_case, _lstm_case, _bilstm_case, _attention_case,
             _conv_case, _residual_case, _pool_case]
    for i, build in enumerate(cases):
        rng = np.random.default_rng(seed + i)
        name, loss_fn, params = build(rng)
        report.results.append(gradient_check(loss_fn, params, step, tol, name=name))
    return report
