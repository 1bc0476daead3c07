"""Reference solutions: per-level direct eigensolves, exact unit-square modes,
and Richardson extrapolation."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.sparse import linalg as spla

from .eigen_newton import Eigenpair, EigenpairSet, canonical_sign
from .linalg import SolverError, dense_gen_eig

DENSE_CUTOFF = 300


@dataclass(frozen=True)
class ExactEigen:
    """Analytic Dirichlet-Laplace eigenpair on the unit square.

    Mode (p, q) has eigenvalue (p^2 + q^2) pi^2 and b-normalized
    eigenfunction 2 sin(p pi x) sin(q pi y).
    """

    p: int
    q: int

    @property
    def value(self):
        return (self.p ** 2 + self.q ** 2) * math.pi ** 2

    def eigenfunction(self, x, y):
        return 2.0 * np.sin(self.p * np.pi * x) * np.sin(self.q * np.pi * y)

    def gradient(self, x, y):
        px = self.p * np.pi
        qy = self.q * np.pi
        out = np.empty(np.broadcast(x, y).shape + (2,))
        out[..., 0] = 2.0 * px * np.cos(px * x) * np.sin(qy * y)
        out[..., 1] = 2.0 * qy * np.sin(px * x) * np.cos(qy * y)
        return out


def exact_laplace(m):
    """First `m` exact unit-square Laplace eigenpairs, multiplicities included.

    Sorted by eigenvalue; within a degenerate pair the (p, q) mode with
    p < q comes first.
    """
    if not 1 <= m <= 20:
        raise ValueError("m must be between 1 and 20")
    kmax = 8  # p, q <= 8 covers far more than the first 20 modes
    modes = sorted(
        (ExactEigen(p, q) for p in range(1, kmax + 1) for q in range(1, kmax + 1)),
        key=lambda e: (e.p ** 2 + e.q ** 2, e.p),
    )
    return modes[:m]


def exact_multiplicity(index, count=None):
    """Multiplicity of the `index`-th (0-based) exact Laplace eigenvalue."""
    modes = exact_laplace(max(20, count or 0))
    key = modes[index].p ** 2 + modes[index].q ** 2
    return sum(1 for e in modes if e.p ** 2 + e.q ** 2 == key)


def richardson(lambda_h, lambda_h2):
    """Eliminate the leading O(h^2) error from two mesh levels.

    Parameters
    ----------
    lambda_h : float
        Approximation on mesh size h.
    lambda_h2 : float
        Approximation on mesh size h/2 for the same eigenvalue index.
    """
    return (4.0 * lambda_h2 - lambda_h) / 3.0


def _b_orthonormalize(block, mass, rng=None):
    gram = block.T @ (mass @ block)
    gram = 0.5 * (gram + gram.T)
    try:
        chol = cholesky(gram, lower=True)
    except np.linalg.LinAlgError:
        if rng is None:
            raise SolverError("subspace block lost rank during iteration") from None
        # rank collapse: nudge with fresh random directions and retry once
        block = block + 1e-8 * rng.standard_normal(block.shape)
        gram = block.T @ (mass @ block)
        gram = 0.5 * (gram + gram.T)
        chol = cholesky(gram, lower=True)
    return solve_triangular(chol, block.T, lower=True).T


def direct_solve(forms, m, tol=1e-12, max_iter=200, dense_cutoff=DENSE_CUTOFF, seed=0):
    """First `m` eigenpairs of the assembled pencil by direct solving.

    Below `dense_cutoff` free DOFs the dense path is taken.  Otherwise a
    shift-invert block subspace iteration runs on a block of
    ``m + max(2, m)`` vectors: multiply by the factored inverse of the
    stiffness matrix, b-orthonormalize, project (Rayleigh-Ritz), and repeat
    until the first `m` Ritz values change by less than `tol` relatively.

    Returns
    -------
    EigenpairSet
        b-normalized, ascending, on the level recorded in `forms`' mesh
        (level attribute left at 0; callers relabel).
    """
    n = forms.n_free
    if m < 1:
        raise ValueError("m must be at least 1")
    if m > n:
        raise ValueError("requested {} eigenpairs from a {}-dimensional space".format(m, n))

    if n < dense_cutoff:
        values, vectors = dense_gen_eig(forms.stiffness.toarray(), forms.mass.toarray())
        return _as_pairs(values[:m], vectors[:, :m])

    block_size = min(n, m + max(2, m))
    rng = np.random.default_rng(seed)
    block = rng.standard_normal((n, block_size))
    try:
        factor = spla.splu(forms.stiffness.tocsc())
    except RuntimeError as exc:
        raise SolverError("stiffness factorization failed: {}".format(exc)) from exc

    previous = None
    change = np.inf
    for iteration in range(1, max_iter + 1):
        block = _b_orthonormalize(block, forms.mass, rng)
        block = factor.solve(forms.mass @ block)
        block = _b_orthonormalize(block, forms.mass, rng)
        small_a = block.T @ (forms.stiffness @ block)
        small_b = block.T @ (forms.mass @ block)
        values, small_vecs = dense_gen_eig(small_a, small_b)
        block = block @ small_vecs
        if previous is not None:
            change = float(np.max(np.abs(values[:m] - previous) / np.abs(previous)))
            if change < tol:
                return _as_pairs(values[:m], block[:, :m])
        previous = values[:m].copy()
    raise SolverError("subspace iteration did not converge in {} iterations "
                      "(last relative change {:.3e})".format(max_iter, change),
                      residual=change, iterations=max_iter)


def _as_pairs(values, vectors, level=0):
    pairs = [Eigenpair(value=float(v), vector=canonical_sign(vectors[:, i]), level=level)
             for i, v in enumerate(values)]
    return EigenpairSet(pairs)
