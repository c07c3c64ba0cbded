import numpy as np

from models.data_models import MomentData


def make_moments(A, B, C, k_star=1.0, swap_k=None) -> MomentData:
    B = np.atleast_1d(np.asarray(B, dtype=float))
    C = np.asarray(C, dtype=float).reshape(len(B), len(B))
    return MomentData(A=float(A), B=B, C=C, k_star=k_star, swap_k=k_star if swap_k is None else swap_k,
                      labels=[f"X{i}" for i in range(len(B))], strikes=[float(i + 1) for i in range(len(B))])


def random_moments(rng: np.random.Generator, n: int, extra: int = 3) -> MomentData:
    """Covariance of n + 1 residuals drawn as a random Gram matrix."""
    G = rng.standard_normal((n + 1, n + extra))
    E = G @ G.T / (n + extra)
    return make_moments(E[0, 0], E[1:, 0], E[1:, 1:])
