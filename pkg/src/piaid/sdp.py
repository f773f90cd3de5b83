"""Small dense semidefinite programs of MAXCUT form.

    minimize    trace(W S)
    subject to  diag(S) = 1,  S PSD

solved by a primal-dual interior-point method. The dual is
``max sum(y)  s.t.  Z = W - Diag(y) PSD``. Iterates stay primal and dual
feasible (``X = I`` and a diagonally dominant ``Z`` to start), so only the
complementarity gap ``<X, Z>`` has to be driven down. Search directions are
the HKM ones, whose Schur complement for this constraint family is simply
``Z^-1 o X`` (Hadamard product), combined with a Mehrotra-style adaptive
centering parameter.

Everything is batched over a leading axis; the single-problem functions wrap
a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NumericalFailure",
    "SdpProblem",
    "SdpSolution",
    "real_expansion",
    "assemble_w",
    "assemble_w_batch",
    "solve",
    "solve_batch",
    "extract_rank1",
    "sign_rule",
    "dominant_eigenvector_candidates",
    "binary_minimum",
]

DEFAULT_GAP_TOL = 1e-7
RANK1_TOL = 1e-6
MAX_ITERS = 100
STEP_FRACTION = 0.95
# Iterate until the gap is this much below the requested tolerance, so the
# primal objective is also within a small absolute distance of the optimum.
GAP_MARGIN = 1e-2


class NumericalFailure(RuntimeError):
    """The interior-point iteration did not reach the requested gap."""


@dataclass(frozen=True)
class SdpProblem:
    """``W = [[H_R^T H_R, -H_R^T y_R], [-y_R^T H_R, 0]]`` and its ingredients."""

    W: np.ndarray
    H_R: np.ndarray | None = None
    y_R: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.W.shape[0]


@dataclass
class SdpSolution:
    """Primal ``S``, dual ``y`` and eigen-decomposition (descending order)."""

    S: np.ndarray
    y: np.ndarray
    objective: float
    duality_gap: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    iterations: int


def real_expansion(h) -> np.ndarray:
    """``2 x 2n`` real form ``[[Re h^T, -Im h^T], [Im h^T, Re h^T]]`` of ``h^T x``."""
    h = np.asarray(h, dtype=complex)
    top = np.concatenate([h.real, -h.imag], axis=-1)
    bottom = np.concatenate([h.imag, h.real], axis=-1)
    return np.stack([top, bottom], axis=-2)


def assemble_w_batch(h: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Batched :func:`assemble_w`; ``h`` is ``(B, n)``, ``y`` is ``(B,)``."""
    h = np.asarray(h, dtype=complex)
    y = np.asarray(y, dtype=complex)
    HR = real_expansion(h)  # (B, 2, 2n)
    yR = np.stack([y.real, y.imag], axis=-1)  # (B, 2)
    m = HR.shape[-1]
    W = np.zeros(h.shape[:-1] + (m + 1, m + 1))
    W[..., :m, :m] = HR.swapaxes(-1, -2) @ HR
    c = -np.einsum("...ij,...i->...j", HR, yR)
    W[..., :m, m] = c
    W[..., m, :m] = c
    return W


def assemble_w(h_q, y) -> SdpProblem:
    """Quadratic form whose minimum over ``s = [x_R; 1]`` is the ML detection.

    ``h_q`` must already include the symbol amplitude, so that the
    interference symbols correspond to ``x_R`` in ``{+1, -1}``; then
    ``s^T W s = ||y_R - H_R x_R||^2 - ||y_R||^2``.
    """
    h_q = np.atleast_1d(np.asarray(h_q, dtype=complex))
    W = assemble_w_batch(h_q[None], np.asarray([y]))[0]
    return SdpProblem(W=W, H_R=real_expansion(h_q), y_R=np.array([np.real(y), np.imag(y)]))


def _max_step(X: np.ndarray, dX: np.ndarray) -> np.ndarray:
    """Largest ``t`` with ``X + t dX`` PSD, per batch entry (``inf`` if unbounded)."""
    # eigendecomposition rather than Cholesky: near convergence X is close to
    # singular and round-off may push its smallest eigenvalue below zero
    w, Q = np.linalg.eigh(X)
    floor = np.finfo(float).eps * np.maximum(w[..., -1:], 1e-300)
    r = 1.0 / np.sqrt(np.maximum(w, floor))
    R = (Q * r[..., None, :]) @ Q.swapaxes(-1, -2)
    lo = np.linalg.eigvalsh(R @ dX @ R)[..., 0]
    with np.errstate(divide="ignore"):
        return np.where(lo < 0, -1.0 / lo, np.inf)


def _direction(X, Zi, sigma_mu):
    n = X.shape[-1]
    Msc = Zi * X
    rhs = 1.0 - sigma_mu[:, None] * np.diagonal(Zi, axis1=-2, axis2=-1)
    dy = np.linalg.solve(Msc, rhs[..., None])[..., 0]
    dX = sigma_mu[:, None, None] * Zi - X + (X * dy[:, None, :]) @ Zi
    dX = 0.5 * (dX + dX.swapaxes(-1, -2))
    # primal feasibility is kept exactly: diag(dX) = 0
    dX[..., np.arange(n), np.arange(n)] = 0.0
    return dX, dy


def solve_batch(W: np.ndarray, gap_tol: float = DEFAULT_GAP_TOL, max_iters: int = MAX_ITERS):
    """Solve a batch of MAXCUT-form SDPs.

    Returns ``(S, y, objective, gap, iterations, converged)`` where ``gap``
    is the relative duality gap ``<S, Z> / max(1, |<W, S>|)`` measured on the
    internally normalized problem. Entries are iterated until the gap is
    below ``GAP_MARGIN * gap_tol``; ``converged`` reports ``gap <= gap_tol``.
    """
    W = np.asarray(W, dtype=float)
    W = 0.5 * (W + W.swapaxes(-1, -2))
    B, n, _ = W.shape
    scale = np.maximum(np.abs(W).max(axis=(-1, -2)), 1e-300)
    Wn = W / scale[:, None, None]
    eye = np.eye(n)

    X = np.broadcast_to(eye, (B, n, n)).copy()
    # Gershgorin shift keeps Z strictly diagonally dominant
    off = np.abs(Wn).sum(axis=-1) - np.abs(np.diagonal(Wn, axis1=-2, axis2=-1))
    y = np.diagonal(Wn, axis1=-2, axis2=-1) - off - 1.0
    Z = Wn - y[:, :, None] * eye

    iters = np.zeros(B, dtype=int)
    active = np.ones(B, dtype=bool)
    gap = np.full(B, np.inf)
    for _ in range(max_iters):
        pobj = np.einsum("bij,bij->b", Wn, X)
        xz = np.einsum("bij,bij->b", X, Z)
        gap = xz / np.maximum(1.0, np.abs(pobj))
        active &= ~(gap <= GAP_MARGIN * gap_tol)
        if not active.any():
            break
        a = np.flatnonzero(active)
        Xa, Za, ya = X[a], Z[a], y[a]
        mu = xz[a] / n
        Zi = np.linalg.inv(Za)
        Zi = 0.5 * (Zi + Zi.swapaxes(-1, -2))

        # predictor (pure Newton), then adaptive centering
        dX, dy = _direction(Xa, Zi, np.zeros_like(mu))
        dZ = -dy[:, :, None] * eye
        tp = np.minimum(1.0, STEP_FRACTION * _max_step(Xa, dX))
        td = np.minimum(1.0, STEP_FRACTION * _max_step(Za, dZ))
        mu_aff = np.einsum(
            "bij,bij->b", Xa + tp[:, None, None] * dX, Za + td[:, None, None] * dZ
        ) / n
        sigma = np.clip((mu_aff / mu) ** 3, 0.0, 1.0)

        dX, dy = _direction(Xa, Zi, sigma * mu)
        dZ = -dy[:, :, None] * eye
        tp = np.minimum(1.0, STEP_FRACTION * _max_step(Xa, dX))
        td = np.minimum(1.0, STEP_FRACTION * _max_step(Za, dZ))

        Xn = Xa + tp[:, None, None] * dX
        d = np.sqrt(np.diagonal(Xn, axis1=-2, axis2=-1))
        Xn = Xn / d[:, :, None] / d[:, None, :]
        X[a] = 0.5 * (Xn + Xn.swapaxes(-1, -2))
        y[a] = ya + td[:, None] * dy
        Z[a] = Wn[a] - y[a][:, :, None] * eye
        iters[a] += 1

    pobj = np.einsum("bij,bij->b", Wn, X)
    xz = np.einsum("bij,bij->b", X, Z)
    gap = xz / np.maximum(1.0, np.abs(pobj))
    converged = gap <= gap_tol
    return X, y * scale[:, None], pobj * scale, gap, iters, converged


def _decompose(S):
    """Eigenpairs in descending order, each vector's largest-magnitude entry positive."""
    w, v = np.linalg.eigh(S)
    w, v = w[..., ::-1], v[..., ::-1]
    idx = np.argmax(np.abs(v), axis=-2)[..., None, :]
    sgn = np.sign(np.take_along_axis(v, idx, axis=-2))
    return w, v * np.where(sgn == 0, 1.0, sgn)


def solve(problem: SdpProblem | np.ndarray, gap_tol: float = DEFAULT_GAP_TOL, max_iters: int = MAX_ITERS) -> SdpSolution:
    """Solve one SDP.

    Raises
    ------
    NumericalFailure
        If the relative duality gap is still above ``gap_tol`` after
        ``max_iters`` iterations.
    """
    W = problem.W if isinstance(problem, SdpProblem) else np.asarray(problem, dtype=float)
    S, y, obj, gap, iters, conv = solve_batch(W[None], gap_tol, max_iters)
    if not conv[0]:
        raise NumericalFailure(f"duality gap {gap[0]:.2e} above {gap_tol:.1e} after {iters[0]} iterations")
    w, v = _decompose(S[0])
    return SdpSolution(
        S=S[0],
        y=y[0],
        objective=float(obj[0]),
        duality_gap=float(gap[0]),
        eigenvalues=w,
        eigenvectors=v,
        iterations=int(iters[0]),
    )


def sign_rule(r: np.ndarray) -> np.ndarray:
    """``x_n = +1`` if ``r_n / r_last >= 0`` else ``-1``, for all but the last entry."""
    r = np.asarray(r, dtype=float)
    ratio = r[..., :-1] * np.sign(r[..., -1:])
    # r_last == 0 leaves the ratio undefined; fall back to the plain sign
    ratio = np.where(r[..., -1:] == 0, r[..., :-1], ratio)
    return np.where(ratio >= 0, 1.0, -1.0)


def extract_rank1(solution: SdpSolution, rank1_tol: float = RANK1_TOL):
    """Sign vector from the dominant eigenvector if ``S`` is numerically rank one."""
    w = solution.eigenvalues
    if w.size > 1 and w[1] / w[0] >= rank1_tol:
        return None
    return sign_rule(solution.eigenvectors[:, 0])


def dominant_eigenvector_candidates(S: np.ndarray, count: int) -> np.ndarray:
    """Sign-rule candidates from the ``count`` leading eigenvectors of each ``S``.

    ``S`` is ``(B, n, n)``; returns ``(B, count, n - 1)``.
    """
    _, v = _decompose(S)
    lead = v[..., :count]  # (B, n, count)
    return sign_rule(lead.swapaxes(-1, -2))


def binary_minimum(W: np.ndarray):
    """Exhaustive ``min s^T W s`` over ``s = [x; 1]``, ``x`` in ``{+1, -1}^(n-1)``.

    Returns ``(value, x)``. Used as an independent oracle; ``n <= 21``.
    """
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    if n > 21:
        raise ValueError("binary enumeration limited to n <= 21")
    m = n - 1
    codes = np.arange(2**m)
    x = 1.0 - 2.0 * ((codes[:, None] >> np.arange(m)[::-1]) & 1)
    s = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
    vals = np.einsum("ij,jk,ik->i", s, W, s)
    j = int(np.argmin(vals))
    return float(vals[j]), x[j]
