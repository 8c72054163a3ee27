"""Largest-eigenvalue minimization over an affine family of symmetric matrices.

F(x) = F0 + sum_k x_k F_k. The nonsmooth lambda_max is replaced by the
log-sum-exp of the spectrum at temperature mu, which is convex and smooth in
x, and mu is driven down geometrically with L-BFGS warm starts.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize

DEFAULT_TEMPERATURES = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)


def sym_basis(n: int) -> np.ndarray:
    """Orthonormal basis of n x n symmetric matrices, shape (n(n+1)/2, n, n)."""
    out = []
    for i in range(n):
        for j in range(i, n):
            e = np.zeros((n, n))
            if i == j:
                e[i, i] = 1.0
            else:
                e[i, j] = e[j, i] = 1.0 / np.sqrt(2.0)
            out.append(e)
    return np.array(out)


def assemble(offset: np.ndarray, basis: np.ndarray, x: np.ndarray) -> np.ndarray:
    return offset + np.tensordot(x, basis, axes=1)


def lambda_max(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (m + m.T))[-1])


def _smoothed(offset, basis, x, mu, penalty):
    m = assemble(offset, basis, x)
    lam, vecs = np.linalg.eigh(m)
    top = lam[-1]
    w = np.exp((lam - top) / mu)
    tot = w.sum()
    w /= tot
    f = top + mu * np.log(tot)
    g_mat = (vecs * w) @ vecs.T
    grad = np.tensordot(basis, g_mat, axes=([1, 2], [0, 1]))
    if penalty is not None:
        f += 0.5 * float(x @ (penalty * x))
        grad = grad + penalty * x
    return f, grad


def minimize_max_eig(offset, basis, x0, *, penalty=None, temperatures=DEFAULT_TEMPERATURES,
                     maxiter=400, scale=None):
    """Return (x, lambda_max(F(x))) after smoothed continuation.

    ``penalty`` is an optional diagonal weight vector for a quadratic term
    0.5 * x' diag(penalty) x added to the objective. Temperatures are relative
    to ``scale`` (default: spectral radius of F(x0)).
    """
    x = np.array(x0, dtype=float)
    if scale is None:
        lam0 = np.linalg.eigvalsh(assemble(offset, basis, x))
        scale = max(1e-12, float(np.max(np.abs(lam0))))
    if basis.shape[0] == 0:
        return x, lambda_max(offset)
    for t in temperatures:
        mu = t * scale
        res = minimize(lambda z: _smoothed(offset, basis, z, mu, penalty), x,
                       jac=True, method="L-BFGS-B", options={"maxiter": maxiter})
        if np.all(np.isfinite(res.x)):
            x = res.x
    return x, lambda_max(assemble(offset, basis, x))
