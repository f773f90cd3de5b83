"""Per-stream receivers: interference detection followed by desired-symbol detection.

After zero-forcing the aligned interference, each stream sees

    y = g_0 x + sum_j g_j s_j + (weak interference) + z

where ``g_0`` is the direct gain, ``s_j`` are the QPSK symbols of the strong
residual interferers and the weak ones are treated as noise. Stage I
estimates the aggregate ``sum_j g_j s_j`` either exhaustively or with the
SDR-SID successive detector; Stage II removes it and slices the result.

The scalar functions follow the single-stream interface; the ``*_batch``
kernels do the same work over a leading stream axis and are what the
Monte-Carlo harness uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import sdp
from .netgen import QPSK

__all__ = [
    "MAX_ENUMERATED",
    "TIE_TOL",
    "TooManyInterferers",
    "ReceivedStream",
    "DetectorOutcome",
    "candidate_set",
    "slice_qpsk",
    "stage1_exhaustive",
    "stage1_exhaustive_batch",
    "stage2_min_distance",
    "stage2_batch",
    "sdr_sid",
    "sdr_sid_batch",
    "detect_stream",
    "detect_batch",
]

MAX_ENUMERATED = 10
TIE_TOL = 1e-12
AMP = np.sqrt(2) / 2
# upper bound on candidate evaluations held in memory at once
_CHUNK_ELEMENTS = 1 << 22


class TooManyInterferers(ValueError):
    """More strong interference symbols than exhaustive enumeration allows."""


@dataclass
class ReceivedStream:
    """Observation of one data stream after the receive filter.

    ``strong`` holds ``(gain, slot)`` pairs, with ``gain`` the full
    ``sqrt(P_i L_ki) u^H H_ki v`` coefficient and ``slot`` an identifier
    such as ``(i, d)``.
    """

    y: complex
    direct_gain: complex
    strong: list = field(default_factory=list)
    weak_power: float = 0.0

    def __post_init__(self):
        if self.direct_gain == 0:
            raise ValueError("direct gain must be nonzero")

    @property
    def gains(self) -> np.ndarray:
        return np.array([g for g, _ in self.strong], dtype=complex)


@dataclass
class DetectorOutcome:
    i_hat: complex
    x_hat: complex
    stage1_used: bool
    method: str
    interference_symbols: np.ndarray | None = None
    commit_order: tuple = ()
    sdp_solves: int = 0


def candidate_set(gains) -> np.ndarray:
    """All ``4**n`` aggregates ``sum_j g_j s_j``, first gain varying slowest."""
    gains = np.asarray(gains, dtype=complex)
    n = gains.size
    if n > MAX_ENUMERATED:
        raise TooManyInterferers(f"{n} interference symbols exceed the cap of {MAX_ENUMERATED}")
    c = np.zeros(1, dtype=complex)
    for g in gains:
        c = (c[:, None] + g * QPSK[None, :]).ravel()
    return c


def _symbol_indices(codes: np.ndarray, n: int) -> np.ndarray:
    """Base-4 digits of ``codes`` (most significant first), shape ``codes.shape + (n,)``."""
    shifts = 2 * np.arange(n - 1, -1, -1)
    return (codes[..., None] >> shifts) & 3


def stage1_exhaustive_batch(y: np.ndarray, gains: np.ndarray):
    """Exhaustive Stage I over a batch of streams with the same number of interferers.

    Parameters
    ----------
    y : (S,) complex
    gains : (S, n) complex

    Returns
    -------
    i_hat : (S,) complex
        Nearest candidate aggregate.
    symbols : (S, n) complex
        Interference symbols realizing it.
    """
    y = np.asarray(y, dtype=complex)
    gains = np.asarray(gains, dtype=complex)
    S, n = gains.shape
    if n == 0:
        return np.zeros(S, dtype=complex), np.zeros((S, 0), dtype=complex)
    if n > MAX_ENUMERATED:
        raise TooManyInterferers(f"{n} interference symbols exceed the cap of {MAX_ENUMERATED}")
    idx_all = _symbol_indices(np.arange(4**n), n)  # (4^n, n)
    basis = QPSK[idx_all]  # (4^n, n)
    best = np.empty(S, dtype=np.int64)
    step = max(1, _CHUNK_ELEMENTS // 4**n)
    for s0 in range(0, S, step):
        g = gains[s0 : s0 + step]
        cand = g @ basis.T  # (s, 4^n)
        d = np.abs(y[s0 : s0 + step, None] - cand)
        dmin = d.min(axis=1, keepdims=True)
        best[s0 : s0 + step] = np.argmax(d <= dmin + TIE_TOL, axis=1)
    symbols = basis[best]
    return (gains * symbols).sum(axis=1), symbols


def slice_qpsk(r: np.ndarray) -> np.ndarray:
    """Componentwise sign decision onto QPSK; zero goes to the positive branch."""
    r = np.asarray(r, dtype=complex)
    return AMP * (np.where(r.real >= 0, 1.0, -1.0) + 1j * np.where(r.imag >= 0, 1.0, -1.0))


def stage2_batch(y_tilde: np.ndarray, direct_gain: np.ndarray) -> np.ndarray:
    """Minimum-distance decision from the interference-free observation."""
    return slice_qpsk(np.asarray(y_tilde) / np.asarray(direct_gain))


def _default_solver(W: np.ndarray):
    S, _, _, _, _, conv = sdp.solve_batch(W)
    return S, conv


def sdr_sid_batch(
    y: np.ndarray,
    gains: np.ndarray,
    solver: Callable | None = None,
    candidates: Callable | None = None,
    rank1_tol: float = sdp.RANK1_TOL,
    strict: bool = False,
):
    """SDR-SID over a batch of streams with the same number of interferers.

    All streams advance in lockstep: in every pass each unfinished stream
    has the same number of active symbols, so one batched SDP solve serves
    the whole pass.

    Parameters
    ----------
    y : (S,) complex
    gains : (S, n) complex
        Full interference gains; the QPSK amplitude is folded in here.
    solver : callable, optional
        Maps ``W`` of shape ``(B, m, m)`` to ``(S, converged)``.
    candidates : callable, optional
        Maps ``(S, count)`` to sign candidates ``(B, count, m - 1)``.
    strict : bool
        Raise :class:`sdp.NumericalFailure` on any unconverged solve instead
        of using the last iterate.

    Returns
    -------
    i_hat : (S,) complex
    symbols : (S, n) complex
    commit_order : (S, n) int
        Interferer indices in the order they were committed; entries filled
        by the rank-one shortcut are ``-1``.
    stats : dict
        ``sdp_solves`` per stream and the count of ``unconverged`` solves.
    """
    solver = solver or _default_solver
    candidates = candidates or sdp.dominant_eigenvector_candidates
    y = np.asarray(y, dtype=complex).copy()
    gains = np.asarray(gains, dtype=complex)
    S, n = gains.shape
    symbols = np.zeros((S, n), dtype=complex)
    order = np.full((S, n), -1, dtype=int)
    active = np.ones((S, n), dtype=bool)
    done = np.zeros(S, dtype=bool)
    solves = np.zeros(S, dtype=int)
    unconverged = 0
    for step in range(n):
        lam = n - step
        rows = np.flatnonzero(~done)
        if rows.size == 0:
            break
        act_idx = np.nonzero(active[rows])[1].reshape(rows.size, lam)
        g = np.take_along_axis(gains[rows], act_idx, axis=1)
        W = sdp.assemble_w_batch(AMP * g, y[rows])
        Ssol, conv = solver(W)
        if not np.all(conv):
            if strict:
                raise sdp.NumericalFailure("SDP solve did not reach the duality-gap tolerance")
            unconverged += int(np.sum(~conv))
        solves[rows] += 1
        w, v = sdp._decompose(Ssol)
        rank1 = w[:, 1] / w[:, 0] < rank1_tol

        # rank-one shortcut: all active symbols at once
        r1 = np.flatnonzero(rank1)
        if r1.size:
            x = sdp.sign_rule(v[r1, :, 0])
            sym = AMP * (x[:, :lam] + 1j * x[:, lam:])
            rr = rows[r1]
            symbols[rr] = _scatter(symbols[rr], act_idx[r1], sym)
            active[rr] = False
            done[rr] = True

        rest = np.flatnonzero(~rank1)
        if rest.size:
            cand = candidates(Ssol[rest], lam)  # (R, lam, 2 lam)
            s = np.concatenate([cand, np.ones(cand.shape[:-1] + (1,))], axis=-1)
            obj = np.einsum("rci,rij,rcj->rc", s, W[rest], s)
            x = cand[np.arange(rest.size), np.argmin(obj, axis=1)]  # (R, 2 lam)
            gr = g[rest]
            j = np.argmax(np.abs(gr), axis=1)
            ar = np.arange(rest.size)
            sym = AMP * (x[ar, j] + 1j * x[ar, j + lam])
            col = act_idx[rest, j]
            rr = rows[rest]
            symbols[rr, col] = sym
            order[rr, step] = col
            y[rr] -= gr[ar, j] * sym
            active[rr, col] = False
            done[rr] = ~active[rr].any(axis=1)
    return (gains * symbols).sum(axis=1), symbols, order, {"sdp_solves": solves, "unconverged": unconverged}


def _scatter(base: np.ndarray, idx: np.ndarray, values: np.ndarray) -> np.ndarray:
    out = base.copy()
    np.put_along_axis(out, idx, values, axis=1)
    return out


def detect_batch(
    y: np.ndarray,
    direct_gain: np.ndarray,
    gains: np.ndarray,
    counts: np.ndarray | None = None,
    method: str = "exhaustive",
    **sdr_kwargs,
):
    """Two-stage detection of many streams with varying interferer counts.

    Parameters
    ----------
    y, direct_gain : (S,) complex
    gains : (S, n_max) complex
        Strong interference gains, left-aligned and zero padded.
    counts : (S,) int, optional
        Number of valid gains per row; defaults to all ``n_max``.
    method : {"exhaustive", "sdr_sid"}

    Returns
    -------
    x_hat : (S,) complex
    i_hat : (S,) complex
    """
    if method not in ("exhaustive", "sdr_sid"):
        raise ValueError(f"unknown method {method!r}")
    y = np.asarray(y, dtype=complex)
    gains = np.asarray(gains, dtype=complex).reshape(y.shape[0], -1)
    if counts is None:
        counts = np.full(y.shape[0], gains.shape[1])
    counts = np.asarray(counts)
    i_hat = np.zeros(y.shape[0], dtype=complex)
    for n in np.unique(counts):
        if n == 0:
            continue
        sel = np.flatnonzero(counts == n)
        g = gains[sel, :n]
        if method == "exhaustive":
            i_hat[sel] = stage1_exhaustive_batch(y[sel], g)[0]
        else:
            i_hat[sel] = sdr_sid_batch(y[sel], g, **sdr_kwargs)[0]
    return stage2_batch(y - i_hat, direct_gain), i_hat


def stage1_exhaustive(stream: ReceivedStream) -> complex:
    """Nearest aggregate interference candidate; ``0`` without strong interferers."""
    if not stream.strong:
        return 0j
    i_hat, _ = stage1_exhaustive_batch(np.array([stream.y]), stream.gains[None])
    return complex(i_hat[0])


def stage2_min_distance(stream: ReceivedStream, i_hat: complex = 0j) -> complex:
    """Desired QPSK symbol after removing ``i_hat``."""
    return complex(stage2_batch(np.array([stream.y - i_hat]), np.array([stream.direct_gain]))[0])


def _sdr_single(stream, sdp_solver, extraction_strategy):
    if not stream.strong:
        raise ValueError("SDR-SID needs at least one strong interferer")
    return sdr_sid_batch(
        np.array([stream.y]),
        stream.gains[None],
        solver=sdp_solver,
        candidates=extraction_strategy,
        strict=True,
    )


def sdr_sid(stream: ReceivedStream, sdp_solver: Callable | None = None, extraction_strategy: Callable | None = None) -> complex:
    """Aggregate interference estimate from the SDR-SID successive detector.

    Raises
    ------
    sdp.NumericalFailure
        If any SDP solve misses its duality-gap tolerance.
    """
    i_hat, *_ = _sdr_single(stream, sdp_solver, extraction_strategy)
    return complex(i_hat[0])


def detect_stream(stream: ReceivedStream, method: str = "exhaustive") -> DetectorOutcome:
    """Stage I (if there are strong interferers) followed by Stage II."""
    if method not in ("exhaustive", "sdr_sid"):
        raise ValueError(f"unknown method {method!r}")
    if not stream.strong:
        return DetectorOutcome(0j, stage2_min_distance(stream), False, method, np.zeros(0, dtype=complex))
    if method == "exhaustive":
        i_hat, syms = stage1_exhaustive_batch(np.array([stream.y]), stream.gains[None])
        return DetectorOutcome(complex(i_hat[0]), stage2_min_distance(stream, i_hat[0]), True, method, syms[0])
    i_hat, syms, order, stats = _sdr_single(stream, None, None)
    committed = tuple(stream.strong[j][1] for j in order[0] if j >= 0)
    return DetectorOutcome(
        complex(i_hat[0]),
        stage2_min_distance(stream, i_hat[0]),
        True,
        method,
        syms[0],
        committed,
        int(stats["sdp_solves"][0]),
    )
