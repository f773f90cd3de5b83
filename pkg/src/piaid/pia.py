"""Selection of the partial interference alignment (PIA) set.

Every receiver aligns exactly ``alpha`` interferers and every transmitter is
aligned at exactly ``alpha`` receivers, so a PIA set is an alpha-factor of
the complete bipartite receiver/transmitter graph without its diagonal.
The max-cost alpha-factor is found exactly with successive shortest paths
on the corresponding flow network; the LP relaxation of the same problem
has an integral optimum because its constraint matrix is totally
unimodular, which :func:`solve_lp_relaxation` and :func:`verify_integrality`
let you check independently.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "InfeasibleAlignment",
    "InfeasibleDegree",
    "TooLarge",
    "CostMatrix",
    "PiaSet",
    "feasible_alpha",
    "build_cost_matrix",
    "cost_matrix_from_array",
    "select_pia_set",
    "brute_force_pia",
    "enumerate_alpha_factors",
    "circulant_pia_set",
    "random_circulant_pia_set",
    "solve_lp_relaxation",
    "constraint_matrix",
    "verify_integrality",
    "objective",
]

BRUTE_FORCE_MAX_K = 6


class InfeasibleAlignment(ValueError):
    """No interferer can be aligned for the given antenna configuration."""


class InfeasibleDegree(ValueError):
    """The requested alpha cannot be realized with K users."""


class TooLarge(ValueError):
    """Exhaustive enumeration requested for too many users."""


@dataclass(frozen=True)
class CostMatrix:
    """Interference link costs ``c[k, i]`` (receiver k, transmitter i).

    The diagonal holds ``-C_big``. ``rx_power`` optionally keeps the
    received powers ``P_i L_ki`` the costs were built from, which is what
    splits the non-aligned interferers into strong and weak sets.
    """

    c: np.ndarray
    C_big: float
    rx_power: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.c.shape[0]


@dataclass(frozen=True)
class PiaSet:
    """Aligned (A), strong residual (Q) and weak residual (O) sets per receiver.

    All indices are 0-based. ``Q`` and ``O`` are ``None`` when the received
    powers are unknown.
    """

    A: tuple[tuple[int, ...], ...]
    alpha: int
    Q: tuple[tuple[int, ...], ...] | None = None
    O: tuple[tuple[int, ...], ...] | None = None

    @property
    def K(self) -> int:
        return len(self.A)

    def mask(self) -> np.ndarray:
        """Boolean ``(K, K)`` edge indicator ``e[k, i] = (i in A_k)``."""
        e = np.zeros((self.K, self.K), dtype=bool)
        for k, row in enumerate(self.A):
            e[k, list(row)] = True
        return e

    def edges(self) -> list[tuple[int, int]]:
        return [(k, i) for k, row in enumerate(self.A) for i in row]

    @classmethod
    def from_mask(cls, e: np.ndarray, rx_power: np.ndarray | None = None) -> "PiaSet":
        e = np.asarray(e, dtype=bool)
        K = e.shape[0]
        A = tuple(tuple(int(i) for i in np.flatnonzero(e[k])) for k in range(K))
        alpha = len(A[0]) if K else 0
        if rx_power is None:
            return cls(A=A, alpha=alpha)
        Q, O = residual_sets(A, rx_power)
        return cls(A=A, alpha=alpha, Q=Q, O=O)


def residual_sets(A, rx_power: np.ndarray):
    """Split non-aligned interferers into strong (``>=`` desired power) and weak."""
    K = len(A)
    Q, O = [], []
    for k in range(K):
        desired = rx_power[k, k]
        rest = [i for i in range(K) if i != k and i not in A[k]]
        Q.append(tuple(i for i in rest if rx_power[k, i] >= desired))
        O.append(tuple(i for i in rest if rx_power[k, i] < desired))
    return tuple(Q), tuple(O)


def feasible_alpha(M: int, N: int, D: int, K: int) -> int:
    """Largest number of interferers that can be aligned at every receiver."""
    if not 1 <= D <= min(M, N):
        raise ValueError(f"need 1 <= D <= min(M, N), got D={D}")
    alpha = min((M + N) // D - 2, K - 1)
    if alpha <= 0:
        raise InfeasibleAlignment(f"alpha={alpha} for M={M}, N={N}, D={D}, K={K}")
    return alpha


def _penalty(c: np.ndarray) -> float:
    off = ~np.eye(c.shape[0], dtype=bool)
    return 1.0 + float(np.abs(c[off]).sum())


def cost_matrix_from_array(c, rx_power: np.ndarray | None = None) -> CostMatrix:
    """Wrap an arbitrary ``(K, K)`` cost array; the diagonal is overwritten."""
    c = np.array(c, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {c.shape}")
    C_big = _penalty(c)
    np.fill_diagonal(c, -C_big)
    return CostMatrix(c=c, C_big=C_big, rx_power=rx_power)


def build_cost_matrix(instance) -> CostMatrix:
    """Interference cost of every link from received powers.

    ``c[k, i]`` is the ratio of the weaker to the stronger of ``P_i L_ki`` and
    ``P_k L_kk``, so it is large exactly when the interferer sits close to the
    desired power, where interference detection works worst.
    """
    rx = instance.rx_power() if hasattr(instance, "rx_power") else np.asarray(instance)
    desired = np.diag(rx)[:, np.newaxis]
    strong = rx >= desired
    with np.errstate(divide="ignore"):
        c = np.where(strong, desired / rx, rx / desired)
    return cost_matrix_from_array(c, rx_power=rx)


def objective(costs: CostMatrix | np.ndarray, pia: PiaSet | np.ndarray) -> float:
    """Sum of off-diagonal costs over the selected edges."""
    c = costs.c if isinstance(costs, CostMatrix) else np.asarray(costs)
    e = pia.mask() if isinstance(pia, PiaSet) else np.asarray(pia, dtype=bool)
    off = ~np.eye(c.shape[0], dtype=bool)
    return float(c[e & off].sum())


def _check_alpha(K: int, alpha: int):
    if alpha > K - 1:
        raise InfeasibleDegree(f"alpha={alpha} exceeds K-1={K - 1}")
    if alpha < 0:
        raise InfeasibleDegree(f"alpha must be non-negative, got {alpha}")


def _finish(e: np.ndarray, costs: CostMatrix) -> PiaSet:
    return PiaSet.from_mask(e, costs.rx_power)


def select_pia_set(costs: CostMatrix, alpha: int) -> PiaSet:
    """Max-cost alpha-factor by successive shortest paths.

    Flow network: source -> receiver k (capacity alpha), receiver k ->
    transmitter i for i != k (capacity 1, cost ``-c[k, i]``), transmitter i
    -> sink (capacity alpha). A min-cost flow of value ``alpha * K`` is an
    optimal alpha-factor. Shortest paths use Bellman-Ford over a fixed
    row-major edge order, so ties resolve the same way on every run.
    """
    K = costs.K
    _check_alpha(K, alpha)
    if alpha == 0:
        return _finish(np.zeros((K, K), dtype=bool), costs)

    src, sink = 2 * K, 2 * K + 1
    n_nodes = 2 * K + 2
    # edge arrays; edge j and j ^ 1 are a forward/backward pair
    head, tail, cap, cost = [], [], [], []

    def add(u, v, capacity, w):
        tail.extend((u, v))
        head.extend((v, u))
        cap.extend((capacity, 0))
        cost.extend((w, -w))

    for k in range(K):
        add(src, k, alpha, 0.0)
    link_edge = {}
    for k in range(K):
        for i in range(K):
            if i != k:
                link_edge[(k, i)] = len(tail)
                add(k, K + i, 1, -float(costs.c[k, i]))
    for i in range(K):
        add(K + i, sink, alpha, 0.0)

    n_edges = len(cap)
    needed = alpha * K
    flow = 0
    while flow < needed:
        dist = [np.inf] * n_nodes
        dist[src] = 0.0
        pred = [-1] * n_nodes
        for _ in range(n_nodes - 1):
            changed = False
            for j in range(n_edges):
                if cap[j] <= 0:
                    continue
                du = dist[tail[j]]
                if du == np.inf:
                    continue
                nd = du + cost[j]
                if nd < dist[head[j]] - 1e-12:
                    dist[head[j]] = nd
                    pred[head[j]] = j
                    changed = True
            if not changed:
                break
        if dist[sink] == np.inf:
            raise InfeasibleDegree("flow network cannot carry alpha * K units")
        path = []
        v = sink
        while v != src:
            j = pred[v]
            path.append(j)
            v = tail[j]
        push = min(min(cap[j] for j in path), needed - flow)
        for j in path:
            cap[j] -= push
            cap[j ^ 1] += push
        flow += push

    e = np.zeros((K, K), dtype=bool)
    for (k, i), j in link_edge.items():
        e[k, i] = cap[j] == 0
    return _finish(e, costs)


@lru_cache(maxsize=None)
def _alpha_factor_table(K: int, alpha: int) -> np.ndarray:
    """All 0/1 ``(K, K)`` matrices with zero diagonal and row/column sums alpha."""
    rows = [
        [c for c in itertools.combinations([i for i in range(K) if i != k], alpha)]
        for k in range(K)
    ]
    out = []
    col = np.zeros(K, dtype=int)
    chosen: list[tuple[int, ...]] = []

    def rec(k):
        if k == K:
            out.append(list(chosen))
            return
        remaining_rows = K - k - 1
        for comb in rows[k]:
            ok = True
            for i in comb:
                if col[i] + 1 > alpha:
                    ok = False
                    break
            if not ok:
                continue
            for i in comb:
                col[i] += 1
            # every column still needs to be reachable by the remaining rows
            if np.all(alpha - col <= remaining_rows):
                chosen.append(comb)
                rec(k + 1)
                chosen.pop()
            for i in comb:
                col[i] -= 1

    rec(0)
    table = np.zeros((len(out), K, K), dtype=bool)
    for n, combs in enumerate(out):
        for k, comb in enumerate(combs):
            table[n, k, list(comb)] = True
    table.setflags(write=False)
    return table


def enumerate_alpha_factors(K: int, alpha: int) -> np.ndarray:
    """Every feasible PIA edge mask for ``(K, alpha)``, shape ``(n, K, K)``."""
    if K > BRUTE_FORCE_MAX_K:
        raise TooLarge(f"exhaustive enumeration limited to K <= {BRUTE_FORCE_MAX_K}, got {K}")
    _check_alpha(K, alpha)
    return _alpha_factor_table(K, alpha)


def brute_force_pia(costs: CostMatrix, alpha: int, equal_degree: bool = True) -> PiaSet:
    """Exact optimum by exhaustive search (small K only).

    With ``equal_degree=False`` the per-transmitter degree constraint is
    dropped and each receiver simply keeps its ``alpha`` costliest
    interferers.
    """
    K = costs.K
    if K > BRUTE_FORCE_MAX_K:
        raise TooLarge(f"exhaustive enumeration limited to K <= {BRUTE_FORCE_MAX_K}, got {K}")
    _check_alpha(K, alpha)
    if not equal_degree:
        best_val, best = -np.inf, None
        for rows in itertools.product(
            *[itertools.combinations([i for i in range(K) if i != k], alpha) for k in range(K)]
        ):
            val = sum(costs.c[k, i] for k, row in enumerate(rows) for i in row)
            if val > best_val + 1e-12:
                best_val, best = val, rows
        e = np.zeros((K, K), dtype=bool)
        for k, row in enumerate(best):
            e[k, list(row)] = True
        return _finish(e, costs)

    table = _alpha_factor_table(K, alpha)
    off = ~np.eye(K, dtype=bool)
    values = (table * np.where(off, costs.c, 0.0)).sum(axis=(1, 2))
    return _finish(table[int(np.argmax(values))], costs)


def circulant_pia_set(K: int, alpha: int, shifts=None, rx_power=None) -> PiaSet:
    """``A_k = {k + s mod K : s in shifts}``, by default shifts ``1..alpha``."""
    _check_alpha(K, alpha)
    if shifts is None:
        shifts = range(1, alpha + 1)
    shifts = sorted(set(int(s) % K for s in shifts))
    if len(shifts) != alpha or 0 in shifts:
        raise ValueError(f"need {alpha} distinct non-zero shifts, got {shifts}")
    e = np.zeros((K, K), dtype=bool)
    for k in range(K):
        e[k, [(k + s) % K for s in shifts]] = True
    return PiaSet.from_mask(e, rx_power)


def random_circulant_pia_set(K: int, alpha: int, rng: np.random.Generator, rx_power=None) -> PiaSet:
    """Uniform draw from the circulant-shift family of feasible PIA sets."""
    shifts = rng.choice(np.arange(1, K), size=alpha, replace=False)
    return circulant_pia_set(K, alpha, shifts, rx_power)


def constraint_matrix(K: int) -> np.ndarray:
    """Equality-constraint matrix of the slack-form LP relaxation.

    Columns are ``[e_11..e_KK, s_11..s_KK]``; rows are the K receiver-degree
    rows, the K transmitter-degree rows and the ``K**2`` rows ``e + s = 1``.
    """
    K2 = K * K
    B = np.zeros((2 * K, K2), dtype=int)
    for k in range(K):
        for i in range(K):
            B[k, k * K + i] = 1
            B[K + i, k * K + i] = 1
    top = np.hstack([B, np.zeros((2 * K, K2), dtype=int)])
    bottom = np.hstack([np.eye(K2, dtype=int), np.eye(K2, dtype=int)])
    return np.vstack([top, bottom])


def solve_lp_relaxation(costs: CostMatrix, alpha: int) -> np.ndarray:
    """Solve the relaxed selection LP (``0 <= e <= 1``) with a simplex method.

    The diagonal stays in the model with its ``-C_big`` penalty, as in the
    original formulation. Returns the ``(K, K)`` matrix of ``e`` values.
    """
    from scipy.optimize import linprog

    K = costs.K
    _check_alpha(K, alpha)
    B = constraint_matrix(K)[: 2 * K, : K * K]
    b = np.full(2 * K, float(alpha))
    res = linprog(
        -costs.c.ravel(),
        A_eq=B,
        b_eq=b,
        bounds=[(0.0, 1.0)] * (K * K),
        method="highs-ds",
    )
    if res.status != 0:
        raise InfeasibleDegree(f"LP relaxation failed: {res.message}")
    return res.x.reshape(K, K)


def verify_integrality(lp_solution, tol: float = 1e-9) -> bool:
    """True iff every entry is within ``tol`` of 0 or 1."""
    x = np.asarray(lp_solution, dtype=float)
    return bool(np.all(np.minimum(np.abs(x), np.abs(x - 1.0)) <= tol))
