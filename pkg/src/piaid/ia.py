"""Precoders and decorrelators that null the aligned interference links.

The main routine is a batched alternating leakage minimization restricted to
the aligned links of a PIA set. Once the leakage is small, minimum-norm
Gauss-Newton steps on the bilinear null conditions ``U_k^H H_ki V_i = 0``
are tried; a step is only kept if it lowers the leakage, so the leakage
sequence stays monotone while converging quadratically near a solution.
After convergence the direct links are diagonalized by an SVD rotation of
each D-dimensional subspace, which leaves every null intact.

Arrays are batched over instances: ``H`` has shape ``(B, K, K, N, M)``,
``U`` ``(B, K, N, D)``, ``V`` ``(B, K, M, D)`` and edge masks ``(B, K, K)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .netgen import NOISE_POWER

__all__ = [
    "ConvergenceFailure",
    "RankDeficient",
    "IaSolution",
    "AlignmentResult",
    "solve_alignment",
    "solve_alignment_batch",
    "align_batch",
    "diagonalize_direct",
    "diagonalize_direct_batch",
    "effective_gains",
    "effective_gains_batch",
    "leakage_batch",
    "leakage_min_batch",
    "max_sinr_batch",
    "stream_sinr_batch",
    "random_orthonormal",
]

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERS = 2000
DEFAULT_RESTARTS = 5
RANK_TOL = 1e-10
# Gauss-Newton is attempted once the minimized leakage drops below this.
GN_START = 1e-2
POLISH_STEPS = 2
# relative eigenvalue floor for the max-SINR covariance solve
PSD_FLOOR = 1e-13
ILL_CONDITIONED = 1e12


class ConvergenceFailure(RuntimeError):
    """Aligned leakage stayed above tolerance after every restart."""


class RankDeficient(RuntimeError):
    """The effective direct channel lost rank."""


@dataclass
class IaSolution:
    """Transceivers for one instance.

    ``Heff[k, i, l, d] = u_k^l^H H_ki v_i^d``. ``leakage`` is the aligned
    interference power normalized to each desired link,
    ``sum_k sum_{i in A_k} (P_i L_ki / P_k L_kk) ||U_k^H H_ki V_i||^2``.
    ``history`` holds the (unweighted) leakage after every iteration of the
    winning run.
    """

    U: np.ndarray
    V: np.ndarray
    leakage: float
    Heff: np.ndarray
    iterations: int = 0
    converged: bool = True
    history: np.ndarray | None = None


@dataclass
class AlignmentResult:
    """Batched output of :func:`align_batch` / :func:`solve_alignment_batch`."""

    U: np.ndarray
    V: np.ndarray
    leakage: np.ndarray
    objective: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    restarts_used: np.ndarray | None = None
    history: list | None = None


def random_orthonormal(rng: np.random.Generator, K: int, rows: int, D: int) -> np.ndarray:
    """``K`` random ``rows x D`` matrices with orthonormal columns."""
    X = rng.standard_normal((K, rows, D)) + 1j * rng.standard_normal((K, rows, D))
    Q, _ = np.linalg.qr(X)
    return Q


def _orthonormalize(X: np.ndarray) -> np.ndarray:
    if X.shape[-1] == 1:
        return X / np.linalg.norm(X, axis=-2, keepdims=True)
    Q, _ = np.linalg.qr(X)
    return Q


def _cross(H, U, V):
    """``U_k^H H_ki V_i`` for all links, shape ``(B, K, K, D, D)``."""
    return (U.conj().swapaxes(-1, -2)[:, :, None] @ H) @ V[:, None]


def leakage_batch(H, U, V, weights) -> np.ndarray:
    """``sum_{k,i} w_ki ||U_k^H H_ki V_i||_F^2`` per instance."""
    X = _cross(H, U, V)
    return np.einsum("bki,bki->b", weights, (X.real**2 + X.imag**2).sum(axis=(-1, -2)))


def _update_U(H, V, weights, D):
    B, K, _, N, _ = H.shape
    HV = (H @ V[:, None]) * np.sqrt(weights)[..., None, None]  # (B, K, K, N, D)
    X = HV.transpose(0, 1, 3, 2, 4).reshape(B, K, N, -1)
    _, vecs = np.linalg.eigh(X @ X.conj().swapaxes(-1, -2))
    return vecs[..., :D]


def _update_V(H, U, weights, D):
    B, K, _, _, M = H.shape
    UH = (U.conj().swapaxes(-1, -2)[:, :, None] @ H) * np.sqrt(weights)[..., None, None]
    Y = UH.transpose(0, 2, 1, 3, 4).reshape(B, K, -1, M)  # stacked over receivers
    _, vecs = np.linalg.eigh(Y.conj().swapaxes(-1, -2) @ Y)
    return vecs[..., :D]


def _gauss_newton_step(H, U, V, mask):
    """Minimum-norm Newton step on ``U_k^H H_ki V_i = 0`` over masked links."""
    B, K, _, N, M = H.shape
    D = U.shape[-1]
    HV = np.einsum("bkinm,bimd->bkind", H, V)
    UH = np.einsum("bknl,bkinm->bkilm", U.conj(), H)
    F = np.einsum("bknl,bkind->bkild", U.conj(), HV) * mask[..., None, None]
    eK = np.eye(K)
    eD = np.eye(D)
    m = mask[:, :, :, None, None].astype(float)
    # derivative w.r.t. conj(U_k')[n, l'] and V_i'[m, d']
    JU = np.einsum("kq,lp,bkind->bkildqnp", eK, eD, HV) * m[..., None, None, None]
    JV = np.einsum("iq,dp,bkilm->bkildqmp", eK, eD, UH) * m[..., None, None, None]
    rows = K * K * D * D
    J = np.concatenate([JU.reshape(B, rows, K * N * D), JV.reshape(B, rows, K * M * D)], axis=-1)
    f = F.reshape(B, rows)
    JJ = J @ J.conj().transpose(0, 2, 1)
    row_off = 1.0 - np.repeat(mask.reshape(B, K * K).astype(float), D * D, axis=1)
    scale = np.maximum(np.abs(np.diagonal(JJ, axis1=1, axis2=2)).max(axis=1), 1e-300)
    JJ = JJ + (row_off + 1e-13)[:, :, None] * np.eye(rows) * scale[:, None, None]
    y = np.linalg.solve(JJ, f[..., None])[..., 0]
    step = -np.einsum("brc,br->bc", J.conj(), y)
    dUc = step[:, : K * N * D].reshape(B, K, N, D)
    dV = step[:, K * N * D:].reshape(B, K, M, D)
    U_new = _orthonormalize((U.conj() + dUc).conj())
    V_new = _orthonormalize(V + dV)
    return U_new, V_new


def _fill_free_users(H, U, V, mask, D):
    """Users untouched by any alignment constraint get SVD-matched filters."""
    rx_free = ~mask.any(axis=2)  # receiver k aligns nobody
    tx_free = ~mask.any(axis=1)  # transmitter k aligned nowhere
    K = H.shape[1]
    idx = np.arange(K)
    Hkk = H[:, idx, idx]  # (B, K, N, M)
    both = rx_free & tx_free
    if both.any():
        Ls, _, Rh = np.linalg.svd(Hkk[both])
        U[both] = Ls[..., :D]
        V[both] = Rh.conj().transpose(0, 2, 1)[..., :D]
    only_rx = rx_free & ~tx_free
    if only_rx.any():
        Ls, _, _ = np.linalg.svd(Hkk[only_rx] @ V[only_rx])
        U[only_rx] = Ls[..., :D]
    only_tx = tx_free & ~rx_free
    if only_tx.any():
        _, _, Rh = np.linalg.svd(U[only_tx].conj().transpose(0, 2, 1) @ Hkk[only_tx])
        V[only_tx] = Rh.conj().transpose(0, 2, 1)[..., :D]
    return U, V


def align_batch(
    H: np.ndarray,
    mask: np.ndarray,
    V0: np.ndarray,
    leak_weights: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    newton: bool = True,
    record: bool = False,
) -> AlignmentResult:
    """Alternating leakage minimization over the masked links, one run per instance.

    Iteration stops per instance once the ``leak_weights``-weighted leakage
    is below ``tol`` (after a short Gauss-Newton polish) or after
    ``max_iters`` iterations. Instances that already stopped are frozen.
    """
    mask = np.asarray(mask, dtype=bool)
    B, K = mask.shape[:2]
    D = V0.shape[-1]
    w = mask.astype(float)
    lw = w if leak_weights is None else w * leak_weights
    V = V0.copy()
    U = _update_U(H, V, w, D)
    obj = leakage_batch(H, U, V, w)
    meas = leakage_batch(H, U, V, lw)
    iters = np.zeros(B, dtype=int)
    polish = np.zeros(B, dtype=int)
    active = ~(meas < tol)
    history = [[float(o)] for o in obj] if record else None
    # instances with nothing to align are done immediately
    active &= mask.any(axis=(1, 2))

    for _ in range(max_iters):
        if not active.any():
            break
        a = np.flatnonzero(active)
        Ha, Ua, Va, wa = H[a], U[a], V[a], w[a]
        V_am = _update_V(Ha, Ua, wa, D)
        U_am = _update_U(Ha, V_am, wa, D)
        obj_am = leakage_batch(Ha, U_am, V_am, wa)
        U_new, V_new, obj_new = U_am, V_am, obj_am
        if newton:
            try_gn = obj[a] < GN_START
            if try_gn.any():
                g = np.flatnonzero(try_gn)
                U_gn, V_gn = _gauss_newton_step(Ha[g], Ua[g], Va[g], mask[a][g])
                obj_gn = leakage_batch(Ha[g], U_gn, V_gn, wa[g])
                better = np.isfinite(obj_gn) & (obj_gn < obj_am[g])
                if better.any():
                    gb = g[better]
                    U_new = U_new.copy()
                    V_new = V_new.copy()
                    obj_new = obj_new.copy()
                    U_new[gb] = U_gn[better]
                    V_new[gb] = V_gn[better]
                    obj_new[gb] = obj_gn[better]
        # never accept an increase (guards against eigen-solver round-off)
        keep = obj_new <= obj[a]
        U[a[keep]] = U_new[keep]
        V[a[keep]] = V_new[keep]
        obj[a[keep]] = obj_new[keep]
        iters[a] += 1
        meas[a] = leakage_batch(H[a], U[a], V[a], lw[a])
        if record:
            for j in a:
                history[j].append(float(obj[j]))
        below = meas[a] < tol
        polish[a[below]] += 1
        stalled = ~keep & below
        done = (polish[a] > POLISH_STEPS) | stalled | (obj[a] == 0.0)
        if not newton:
            done = below
        active[a[done]] = False

    U, V = _fill_free_users(H, U, V, mask, D)
    meas = leakage_batch(H, U, V, lw)
    return AlignmentResult(
        U=U,
        V=V,
        leakage=meas,
        objective=leakage_batch(H, U, V, w),
        iterations=iters,
        converged=meas < tol,
        history=[np.array(h) for h in history] if record else None,
    )


def diagonalize_direct_batch(U, V, H, rank_tol: float = RANK_TOL):
    """Rotate every user's subspaces so ``U_k^H H_kk V_k`` is diagonal.

    Returns ``(U, V, ok)``; ``ok[b]`` is False when some direct link has a
    singular value below ``rank_tol``.
    """
    K = H.shape[1]
    idx = np.arange(K)
    G = np.einsum("bknl,bknm,bkmd->bkld", U.conj(), H[:, idx, idx], V)
    A, s, Bh = np.linalg.svd(G)
    U2 = U @ A
    V2 = V @ Bh.conj().transpose(0, 1, 3, 2)
    ok = s.min(axis=(-1,)).min(axis=-1) >= rank_tol
    return U2, V2, ok


def diagonalize_direct(U_k: np.ndarray, V_k: np.ndarray, H_kk: np.ndarray, rank_tol: float = RANK_TOL):
    """Single-user version of :func:`diagonalize_direct_batch`.

    Raises
    ------
    RankDeficient
        If the effective direct channel has a singular value below
        ``rank_tol``.
    """
    U2, V2, ok = diagonalize_direct_batch(
        U_k[None, None], V_k[None, None], H_kk[None, None, None], rank_tol
    )
    if not ok[0]:
        raise RankDeficient("effective direct channel is rank deficient")
    return U2[0, 0], V2[0, 0]


def effective_gains_batch(U, V, H) -> np.ndarray:
    """``Heff[b, k, i, l, d] = u_k^l^H H_ki v_i^d``."""
    return np.einsum("bknl,bkinm,bimd->bkild", U.conj(), H, V)


def effective_gains(solution: IaSolution, instance) -> np.ndarray:
    """Equivalent scalar channel of every (receiver, transmitter, stream pair)."""
    return effective_gains_batch(solution.U[None], solution.V[None], instance.H[None])[0]


def _normalized_weights(rx_power: np.ndarray) -> np.ndarray:
    desired = np.diagonal(rx_power, axis1=-2, axis2=-1)[..., :, None]
    return rx_power / desired


def solve_alignment_batch(
    H: np.ndarray,
    rx_power: np.ndarray,
    mask: np.ndarray,
    D: int,
    rngs,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    restarts: int = DEFAULT_RESTARTS,
    newton: bool = True,
    record: bool = False,
) -> AlignmentResult:
    """PIA transceivers for a batch, with random restarts and diagonalization.

    ``rngs`` is one generator per instance; each restart draws its initial
    precoders from the instance's own generator, so results do not depend
    on how instances are grouped into batches.
    """
    B, K, _, N, M = H.shape
    mask = np.asarray(mask, dtype=bool)
    lw = _normalized_weights(rx_power)
    U = np.zeros((B, K, N, D), dtype=complex)
    V = np.zeros((B, K, M, D), dtype=complex)
    leak = np.full(B, np.inf)
    obj = np.full(B, np.inf)
    iters = np.zeros(B, dtype=int)
    used = np.zeros(B, dtype=int)
    conv = np.zeros(B, dtype=bool)
    hist = [None] * B
    todo = np.arange(B)
    for attempt in range(max(1, restarts)):
        if todo.size == 0:
            break
        V0 = np.stack([random_orthonormal(rngs[j], K, M, D) for j in todo])
        res = align_batch(H[todo], mask[todo], V0, lw[todo], tol, max_iters, newton, record)
        better = res.leakage < leak[todo]
        sel = todo[better]
        U[sel], V[sel] = res.U[better], res.V[better]
        leak[sel], obj[sel] = res.leakage[better], res.objective[better]
        if record:
            for j, h in zip(todo[better], np.array(res.history, dtype=object)[better]):
                hist[j] = h
        iters[todo] += res.iterations
        used[todo] = attempt + 1
        conv[todo] = res.converged | conv[todo]
        todo = todo[~res.converged]
    U, V, ok = diagonalize_direct_batch(U, V, H)
    leak = leakage_batch(H, U, V, mask * lw)
    return AlignmentResult(
        U=U,
        V=V,
        leakage=leak,
        objective=leakage_batch(H, U, V, mask.astype(float)),
        iterations=iters,
        converged=(leak < tol) & ok,
        restarts_used=used,
        history=hist if record else None,
    )


def solve_alignment(
    instance,
    pia_set,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    restarts: int = DEFAULT_RESTARTS,
    rng: np.random.Generator | None = None,
    D: int | None = None,
    record: bool = False,
) -> IaSolution:
    """PIA precoders/decorrelators for one instance.

    ``pia_set`` may be a :class:`~piaid.pia.PiaSet` or a boolean ``(K, K)``
    mask. ``D`` is the number of streams per user and defaults to 1.

    Raises
    ------
    ConvergenceFailure
        If the normalized leakage is still above ``tol`` after all restarts.
    RankDeficient
        If a direct link loses rank after alignment.
    """
    rng = np.random.default_rng() if rng is None else rng
    mask = pia_set.mask() if hasattr(pia_set, "mask") else np.asarray(pia_set, dtype=bool)
    if D is None:
        D = 1
    rx = instance.rx_power()
    res = solve_alignment_batch(
        instance.H[None], rx[None], mask[None], D, [rng], tol, max_iters, restarts, record=record
    )
    U, V = res.U[0], res.V[0]
    Heff = effective_gains_batch(U[None], V[None], instance.H[None])[0]
    idx = np.arange(instance.K)
    direct = np.abs(np.diagonal(Heff[idx, idx], axis1=-2, axis2=-1))
    if direct.min() < RANK_TOL:
        raise RankDeficient("effective direct channel is rank deficient")
    sol = IaSolution(
        U=U,
        V=V,
        leakage=float(res.leakage[0]),
        Heff=Heff,
        iterations=int(res.iterations[0]),
        converged=bool(res.converged[0]),
        history=res.history[0] if record else None,
    )
    if not sol.converged:
        raise ConvergenceFailure(f"leakage {sol.leakage:.3e} >= tol {tol:.1e} after {restarts} restarts")
    return sol


# ---------------------------------------------------------------------------
# Full-network transceivers for the one-stage baselines
# ---------------------------------------------------------------------------


def leakage_min_batch(H, rx_power, D, V0, iters: int = 100):
    """Power-weighted leakage minimization over all K-1 interferers.

    Every cross link ``(k, i)`` is weighted by its received power
    ``P_i L_ki``. Alignment of all interferers is generally infeasible, so a
    fixed number of iterations is run.
    """
    B, K = rx_power.shape[:2]
    off = ~np.eye(K, dtype=bool)
    w = rx_power * off
    # normalize per instance for conditioning; argmin is unchanged
    w = w / np.maximum(w.max(axis=(1, 2), keepdims=True), 1e-300)
    V = V0.copy()
    U = _update_U(H, V, w, D)
    for _ in range(iters):
        V = _update_V(H, U, w, D)
        U = _update_U(H, V, w, D)
    return U, V


def stream_sinr_batch(H, rx_power, U, V, noise_power: float = NOISE_POWER) -> np.ndarray:
    """Post-decorrelator SINR of every stream, shape ``(B, K, D)``."""
    G = np.einsum("bknl,bkinm,bimd->bkild", U.conj(), H, V)
    pw = np.abs(G) ** 2 * rx_power[:, :, :, None, None]
    K = H.shape[1]
    D = U.shape[-1]
    idx = np.arange(K)
    own = pw[:, idx, idx]  # (B, K, l, d)
    signal = np.einsum("bkll->bkl", own)
    total = pw.sum(axis=(2, 4))  # (B, K, l)
    noise = noise_power * np.linalg.norm(U, axis=-2) ** 2
    return signal / (total - signal + noise)


def _psd_solve(B, h, noise_power):
    """``B^-1 h`` for ``B = (PSD) + noise_power * I``.

    ``cond(B) <= trace(B) / noise_power``. Received powers can span 18 or more
    decades, beyond double precision; those matrices go through eigh with a
    relative eigenvalue floor, which turns the max-SINR filter into its
    zero-forcing limit. The rest use a plain solve.
    """
    out = np.empty_like(h)
    ill = np.trace(B, axis1=-2, axis2=-1).real > noise_power * ILL_CONDITIONED
    ok = ~ill
    if ok.any():
        out[ok] = np.linalg.solve(B[ok], h[ok][..., None])[..., 0]
    if ill.any():
        w, v = np.linalg.eigh(B[ill])
        w = np.maximum(w, w[..., -1:] * PSD_FLOOR)
        c = (v.conj().swapaxes(-1, -2) @ h[ill][..., None])[..., 0] / w
        out[ill] = (v @ c[..., None])[..., 0]
    return out


def _sinr_receivers(Hd, rx_power, V, own_gain, noise_power):
    """Max-SINR decorrelators for every stream given the precoders.

    ``Hd[b, k, i]`` is the channel from i to k; ``own_gain[b, k]`` the desired
    received power. Returns unit-norm columns, shape ``(B, K, N, D)``.
    """
    B, K, _, N, _ = Hd.shape
    D = V.shape[-1]
    HV = Hd @ V[:, None]  # (B, K, I, N, D)
    # other users plus noise; built directly rather than by subtracting the
    # desired term, which cancels badly at high SNR
    cross = np.sqrt(rx_power * ~np.eye(K, dtype=bool))
    X = (HV * cross[..., None, None]).transpose(0, 1, 3, 2, 4).reshape(B, K, N, K * D)
    cov = X @ X.conj().swapaxes(-1, -2) + noise_power * np.eye(N)
    idx = np.arange(K)
    own = HV[:, idx, idx]  # (B, K, N, D)
    out = np.empty((B, K, N, D), dtype=complex)
    for l in range(D):
        others = np.delete(own, l, axis=-1)
        Bl = cov + own_gain[:, :, None, None] * (others @ others.conj().swapaxes(-1, -2))
        h = own[..., l]
        u = _psd_solve(Bl, h, noise_power)
        out[..., l] = u / np.linalg.norm(u, axis=-1, keepdims=True)
    return out


def max_sinr_batch(H, rx_power, D, V0, iters: int = 50, noise_power: float = NOISE_POWER, record: bool = False):
    """Alternating max-SINR transceivers on the original/reciprocal networks.

    With ``record`` also returns, per iteration, the mean stream SINR before
    and after the decorrelator update (the update target).
    """
    K = H.shape[1]
    idx = np.arange(K)
    own = rx_power[:, idx, idx]
    Hr = np.conj(np.swapaxes(H, 1, 2)).swapaxes(-1, -2)  # Hr[k, i] = H[i, k]^H
    rx_r = np.swapaxes(rx_power, 1, 2)
    V = V0.copy()
    U = _sinr_receivers(H, rx_power, V, own, noise_power)
    trace = []
    for _ in range(iters):
        V = _sinr_receivers(Hr, rx_r, U, own, noise_power)
        if record:
            before = stream_sinr_batch(H, rx_power, U, V, noise_power)
        U = _sinr_receivers(H, rx_power, V, own, noise_power)
        if record:
            after = stream_sinr_batch(H, rx_power, U, V, noise_power)
            trace.append((before, after))
    if record:
        return U, V, trace
    return U, V
