import numpy as np
import pytest

from hdffm import Panel, functional_space, scalar_space


def random_spd(rng, d, scale=1.0):
    """Well-conditioned random symmetric positive-definite matrix."""
    A = rng.standard_normal((d, d))
    return scale * (A @ A.T / d + np.eye(d))


def random_mixed_panel(rng, N=3, T=5, max_dim=4, identity_gram=False, scalar_prob=0.3):
    """Panel mixing scalar series and functional series with random Grams."""
    spaces, coeffs = [], []
    for _ in range(N):
        if rng.random() < scalar_prob:
            spaces.append(scalar_space())
        else:
            d = int(rng.integers(2, max_dim + 1))
            gram = None if identity_gram else random_spd(rng, d)
            spaces.append(functional_space(d, gram))
        coeffs.append(rng.standard_normal((T, spaces[-1].dim)))
    return Panel(spaces, coeffs)


def rank_k_panel(rng, N, T, k, dim=4):
    """Noiseless panel x_it = sum_l b_il u_lt in an orthonormal basis."""
    U = rng.standard_normal((k, T))
    B = rng.standard_normal((N, k, dim))
    spaces = [functional_space(dim) for _ in range(N)]
    coeffs = [U.T @ B[i] for i in range(N)]
    return Panel(spaces, coeffs), U, B


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
