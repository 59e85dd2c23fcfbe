import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


def finite_difference_grad(f, x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Central-difference gradient of scalar-valued f() w.r.t. tensor x.

    f must recompute the scalar from x's current contents; x is mutated
    in place and restored entry by entry.
    """
    grad = torch.zeros_like(x, dtype=torch.float64)
    flat = x.detach().reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        with torch.no_grad():
            flat[i] = orig + eps
            hi = f().item()
            flat[i] = orig - eps
            lo = f().item()
            flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = max(a.norm().item(), b.norm().item(), 1e-12)
    return (a - b).norm().item() / denom


def random_adjacency(n: int, rng: np.random.Generator,
                     dtype=torch.float64) -> torch.Tensor:
    """Random symmetric nonnegative adjacency with zero diagonal."""
    a = rng.uniform(0.0, 1.0, size=(n, n))
    a = (a + a.T) / 2.0
    np.fill_diagonal(a, 0.0)
    a[a < 0.3] = 0.0
    return torch.tensor(a, dtype=dtype)
