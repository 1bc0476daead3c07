"""One Newton iteration step for eigenpairs on a refined space.

The step solves the bordered saddle-point system

    [[A - mu B, -B U0], [-(B U0)^T, 0]] (u, g) = (-mu B u0, -rhs)

where (mu, u0) is the prolonged iterate from the coarser level, then
b-normalizes and takes the Rayleigh quotient.  For several eigenpairs the m
solutions span a trial space on which a small Rayleigh-Ritz problem produces
the new b-orthonormal set.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import sparse as sp

from .assemble import b_norm, rayleigh_quotient
from .linalg import BorderedMatrix, SolverError, dense_gen_eig, solve_bordered

DENSE_SOLVE_CAP = 3000
CONSTRAINT_TOL = 1e-8


class ClusterGapWarning(RuntimeWarning):
    """The requested eigenpair count cuts through a near-degenerate cluster."""


class BasinWarning(RuntimeWarning):
    """A Newton step failed to improve the Rayleigh quotient."""


def canonical_sign(vector):
    """Flip the sign so the first significant entry is positive (determinism)."""
    vector = np.asarray(vector, dtype=float)
    nz = np.flatnonzero(np.abs(vector) > 1e-12 * max(np.abs(vector).max(), 1e-300))
    if len(nz) and vector[nz[0]] < 0:
        return -vector
    return vector.copy()


@dataclass(frozen=True)
class Eigenpair:
    """A b-normalized eigenvalue/eigenvector approximation on one level."""

    value: float
    vector: np.ndarray
    level: int = 0

    def check(self, forms, tol=1e-10):
        """Assert the normalization and Rayleigh-quotient invariants."""
        nb = b_norm(forms, self.vector)
        if abs(nb - 1.0) > tol:
            raise AssertionError("eigenvector b-norm is {} (expected 1)".format(nb))
        rq = rayleigh_quotient(forms, self.vector)
        if abs(rq - self.value) > tol * max(abs(self.value), 1.0):
            raise AssertionError("stored value {} disagrees with Rayleigh quotient {}".format(
                self.value, rq))


class EigenpairSet:
    """Ascending, pairwise b-orthogonal eigenpairs on a common level."""

    def __init__(self, pairs):
        pairs = list(pairs)
        if not pairs:
            raise ValueError("empty eigenpair set")
        if any(p.level != pairs[0].level for p in pairs):
            raise ValueError("eigenpairs live on different levels")
        if any(pairs[i + 1].value < pairs[i].value for i in range(len(pairs) - 1)):
            raise ValueError("eigenvalues must be ascending")
        self.pairs = pairs

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    @property
    def level(self):
        return self.pairs[0].level

    @property
    def values(self):
        return np.array([p.value for p in self.pairs])

    @property
    def vectors(self):
        """Eigenvectors as columns, shape (n_free, m)."""
        return np.column_stack([p.vector for p in self.pairs])


def coarse_solve(forms, m, dense_cap=DENSE_SOLVE_CAP, level=0):
    """First `m` eigenpairs of the pencil by a dense generalized eigensolve.

    Meant for the coarse space only; refuses above `dense_cap` free DOFs.
    Warns when the cut between m and m+1 splits a near-degenerate cluster
    (relative gap below 1e-8).
    """
    n = forms.n_free
    if n > dense_cap:
        raise SolverError("coarse space has {} free DOFs, above the dense-solve "
                          "cap of {}".format(n, dense_cap))
    if not 1 <= m <= n:
        raise ValueError("m must be between 1 and {}, got {}".format(n, m))
    values, vectors = dense_gen_eig(forms.stiffness.toarray(), forms.mass.toarray())
    if m < n and values[m] - values[m - 1] < 1e-8 * abs(values[m - 1]):
        warnings.warn("eigenvalues {} and {} differ by less than 1e-8 relative; "
                      "m={} splits a degenerate cluster".format(m, m + 1, m),
                      ClusterGapWarning, stacklevel=2)
    pairs = [Eigenpair(value=float(values[i]), vector=canonical_sign(vectors[:, i]),
                       level=level)
             for i in range(m)]
    return EigenpairSet(pairs)


def _as_operator(prolong, n_fine, n_coarse):
    if prolong is None:
        if n_fine != n_coarse:
            raise ValueError("prolongation required between spaces of different size")
        return sp.identity(n_fine, format="csr")
    if prolong.shape != (n_fine, n_coarse):
        raise ValueError("prolongation shape {} does not map {} -> {} free DOFs".format(
            prolong.shape, n_coarse, n_fine))
    return prolong


def newton_step_single(forms_fine, prev, prolong, tol=1e-10):
    """One Newton iteration step for a single eigenpair.

    Parameters
    ----------
    forms_fine : AssembledForms
        Pencil on the refined space.
    prev : Eigenpair
        Iterate on the coarser space (b-normalized, value = its Rayleigh
        quotient).
    prolong : sparse matrix or None
        Free-DOF prolongation from the coarse to the fine space (see
        `assemble.free_prolongation`); None means identity (same space).
    tol : float
        Relative residual bound for the bordered solve.

    Returns
    -------
    Eigenpair on the fine space.
    """
    op = _as_operator(prolong, forms_fine.n_free, prev.vector.shape[0])
    u0 = op @ prev.vector
    mass_u0 = forms_fine.mass @ u0
    core = (forms_fine.stiffness - prev.value * forms_fine.mass).tocsr()
    target = float(u0 @ mass_u0)

    solution, _ = solve_bordered(BorderedMatrix(core, mass_u0[:, None]),
                                 rhs_top=-prev.value * mass_u0,
                                 rhs_bottom=np.array([target]), tol=tol)
    _check_constraints(mass_u0[:, None], solution, np.array([target]))

    vector = solution / b_norm(forms_fine, solution)
    vector = canonical_sign(vector)
    value = rayleigh_quotient(forms_fine, vector)
    if value > prev.value * (1.0 + 1e-10):
        warnings.warn("Rayleigh quotient rose from {:.12g} to {:.12g}; the coarse "
                      "mesh is likely outside the basin of attraction".format(
                          prev.value, value),
                      BasinWarning, stacklevel=2)
    return Eigenpair(value=value, vector=vector, level=prev.level + 1)


def newton_step_multi(forms_fine, prev_set, prolong, threads=1, tol=1e-10):
    """One Newton iteration step for the first m eigenpairs.

    Each eigenpair gets its own bordered solve (independent, optionally
    threaded) constrained against all m previous eigenvectors; the m
    solutions then pass through a Rayleigh-Ritz projection that restores
    b-orthonormality and ascending order.
    """
    m = len(prev_set)
    op = _as_operator(prolong, forms_fine.n_free, prev_set.vectors.shape[0])
    basis = op @ prev_set.vectors                   # (n_fine, m)
    mass_basis = forms_fine.mass @ basis

    def solve_one(i):
        core = (forms_fine.stiffness - prev_set[i].value * forms_fine.mass).tocsr()
        rhs_bottom = np.zeros(m)
        rhs_bottom[i] = 1.0
        solution, _ = solve_bordered(BorderedMatrix(core, mass_basis),
                                     rhs_top=-prev_set[i].value * mass_basis[:, i],
                                     rhs_bottom=rhs_bottom, tol=tol)
        _check_constraints(mass_basis, solution, rhs_bottom)
        return solution

    if threads > 1 and m > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            columns = list(pool.map(solve_one, range(m)))
    else:
        columns = [solve_one(i) for i in range(m)]
    trial = np.column_stack(columns)

    gram = trial.T @ (forms_fine.mass @ trial)
    gram = 0.5 * (gram + gram.T)
    if np.linalg.cond(gram) > 1e12:
        raise SolverError("Newton solutions are numerically rank deficient; use a "
                          "smaller eigenpair count or a finer coarse mesh")
    small_a = trial.T @ (forms_fine.stiffness @ trial)
    small_a = 0.5 * (small_a + small_a.T)
    _, small_vecs = dense_gen_eig(small_a, gram)
    ritz = trial @ small_vecs

    level = prev_set.level + 1
    pairs = []
    for i in range(m):
        vector = canonical_sign(ritz[:, i] / b_norm(forms_fine, ritz[:, i]))
        pairs.append(Eigenpair(value=rayleigh_quotient(forms_fine, vector),
                               vector=vector, level=level))
    pairs.sort(key=lambda p: p.value)
    return EigenpairSet(pairs)


def _check_constraints(mass_basis, solution, targets):
    achieved = mass_basis.T @ solution
    err = float(np.abs(achieved - targets).max())
    if err > CONSTRAINT_TOL:
        raise SolverError("constraint rows violated by {:.3e} after the bordered "
                          "solve".format(err), residual=err)


def rayleigh_expansion_check(forms, psi, exact):
    """Residual of the exact Rayleigh-quotient error expansion.

    For a converged discrete eigenpair (value, vector) and any nonzero trial
    function psi, the identity

        RQ(psi) - value = a(e, e)/b(psi, psi) - value * b(e, e)/b(psi, psi)

    with e = vector - psi holds exactly; the returned residual is pure
    round-off plus the eigenpair's own convergence error.
    """
    psi = np.asarray(psi, dtype=float)
    lam_hat = rayleigh_quotient(forms, psi)
    err = exact.vector - psi
    b_psi = float(psi @ (forms.mass @ psi))
    lhs = lam_hat - exact.value
    rhs = (float(err @ (forms.stiffness @ err))
           - exact.value * float(err @ (forms.mass @ err))) / b_psi
    return abs(lhs - rhs)
