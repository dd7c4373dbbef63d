"""Central finite-difference gradient checking used across the test suite.

The analytic side is whatever backward() produces; the numeric side is an
independent two-point central difference of the scalar loss closure. The
comparison uses a vector-norm relative error over the checked coordinates.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np
import torch


def central_difference(
    f: Callable[[], torch.Tensor],
    tensor: torch.Tensor,
    coords: Sequence[tuple],
    h: float,
) -> np.ndarray:
    out = np.zeros(len(coords))
    with torch.no_grad():
        for n, idx in enumerate(coords):
            orig = tensor[idx].item()
            tensor[idx] = orig + h
            up = f().item()
            tensor[idx] = orig - h
            down = f().item()
            tensor[idx] = orig
            out[n] = (up - down) / (2 * h)
    return out


def sample_coords(shape: tuple[int, ...], max_coords: int, rng: np.random.Generator) -> list[tuple]:
    total = int(np.prod(shape))
    if total <= max_coords:
        flat = np.arange(total)
    else:
        flat = rng.choice(total, size=max_coords, replace=False)
    return [tuple(int(v) for v in np.unravel_index(i, shape)) for i in sorted(flat)]


def assert_gradients_match(
    f: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor],
    rel_tol: float = 1e-4,
    h: float = 1e-6,
    max_coords: int = 12,
    rng: np.random.Generator | None = None,
    atol: float = 1e-9,
) -> None:
    """Check autograd gradients of f against central differences.

    For each named tensor, up to ``max_coords`` coordinates are checked
    (all of them when the tensor is small). The criterion is a vector-norm
    relative error with an absolute floor at ``atol``, the noise level of
    a float64 central difference; without the floor, genuinely-zero
    gradients would fail on roundoff alone.
    """
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        p.grad = None
    loss = f()
    loss.backward()
    for name, p in params.items():
        analytic_full = p.grad if p.grad is not None else torch.zeros_like(p)
        coords = sample_coords(tuple(p.shape), max_coords, rng)
        analytic = np.array([analytic_full[idx].item() for idx in coords])
        numeric = central_difference(f, p, coords, h)
        num = np.linalg.norm(numeric - analytic)
        den = max(np.linalg.norm(numeric), np.linalg.norm(analytic))
        assert num <= atol + rel_tol * den, (
            f"gradient mismatch for {name}: |fd - grad| = {num:.3e} vs "
            f"tolerance {atol + rel_tol * den:.3e} (analytic {analytic}, numeric {numeric})"
        )
