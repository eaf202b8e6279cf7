"""Differentiable tensor primitives and a finite-difference gradient checker.

Storage and reverse-mode differentiation are delegated to torch. The
functions here pin down the exact contracts the rest of the package relies
on (shape errors, softmax stabilisation, clamped binary cross-entropy), and
:func:`finite_difference_grad` is an autograd-free oracle used to verify every
backward pass in the test suite.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import torch

from .errors import DimensionError, NumericError

BCE_CLAMP = 1e-7


def tensor(data, requires_grad: bool = False, dtype=torch.float64) -> torch.Tensor:
    return torch.tensor(data, dtype=dtype, requires_grad=requires_grad)


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.dim() < 2 or b.dim() < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: cannot multiply shapes {tuple(a.shape)} and {tuple(b.shape)}"
        )
    return a @ b


def softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    if not -x.dim() <= axis < max(x.dim(), 1):
        raise DimensionError(f"softmax: axis {axis} invalid for shape {tuple(x.shape)}")
    shifted = x - x.amax(dim=axis, keepdim=True).detach()
    e = torch.exp(shifted)
    return e / e.sum(dim=axis, keepdim=True)


def layernorm(
    x: torch.Tensor,
    weight: torch.Tensor | None = None,
    bias: torch.Tensor | None = None,
    eps: float = 1e-5,
) -> torch.Tensor:
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    y = (x - mu) / torch.sqrt(var + eps)
    if weight is not None:
        y = y * weight
    if bias is not None:
        y = y + bias
    return y


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.clamp(x, min=0.0)


def gelu(x: torch.Tensor) -> torch.Tensor:
    # exact erf form; smooth everywhere, which keeps finite-difference checks clean
    return 0.5 * x * (1.0 + torch.erf(x / math.sqrt(2.0)))


def mean_pool(x: torch.Tensor, axis: int = -2) -> torch.Tensor:
    return x.mean(dim=axis)


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def cross_entropy_binary(p: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy of probabilities ``p`` against labels ``y``."""
    y = torch.as_tensor(y, dtype=p.dtype)
    if p.shape != y.shape:
        raise DimensionError(
            f"cross_entropy_binary: shapes {tuple(p.shape)} and {tuple(y.shape)} differ"
        )
    pc = torch.clamp(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    if not bool(torch.all((pc >= 0) & (pc <= 1))):
        raise NumericError("cross_entropy_binary: probability outside [0, 1]")
    loss = -(y * torch.log(pc) + (1.0 - y) * torch.log1p(-pc))
    return loss.mean()


def grad(loss: torch.Tensor, leaves: Sequence[torch.Tensor]) -> list[torch.Tensor]:
    """Reverse-mode gradients of a scalar ``loss`` with respect to ``leaves``.

    Leaves the loss does not depend on get a zero gradient.
    """
    if loss.numel() != 1:
        raise DimensionError(f"grad: loss must be scalar, got shape {tuple(loss.shape)}")
    leaves = list(leaves)
    grads = torch.autograd.grad(loss.reshape(()), leaves, allow_unused=True)
    return [torch.zeros_like(l) if g is None else g for l, g in zip(leaves, grads)]


def finite_difference_grad(
    fn: Callable[[], torch.Tensor],
    leaves: Iterable[torch.Tensor],
    h: float = 1e-5,
) -> list[torch.Tensor]:
    """Central-difference gradients of the scalar returned by ``fn``.

    ``fn`` is re-evaluated with each leaf entry perturbed in place by ±h; the
    original values are restored afterwards.
    """
    out = []
    with torch.no_grad():
        for leaf in leaves:
            g = torch.zeros_like(leaf)
            flat = leaf.view(-1)
            gflat = g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                fp = float(fn())
                flat[i] = orig - h
                fm = float(fn())
                flat[i] = orig
                gflat[i] = (fp - fm) / (2.0 * h)
            out.append(g)
    return out


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    """Max absolute deviation scaled by the larger of the two gradient magnitudes."""
    scale = max(analytic.abs().max().item(), numeric.abs().max().item(), 1e-12)
    return (analytic - numeric).abs().max().item() / scale


def check_gradients(
    fn: Callable[[], torch.Tensor],
    leaves: Sequence[torch.Tensor],
    h: float = 1e-5,
) -> list[float]:
    """Relative error per leaf between autograd and central differences."""
    leaves = list(leaves)
    analytic = grad(fn(), leaves)
    numeric = finite_difference_grad(fn, leaves, h=h)
    return [relative_error(a, n) for a, n in zip(analytic, numeric)]
