"""Monte-Carlo symbol-error-rate experiments.

One trial draws a network instance, selects the PIA set, solves the
transceivers, sends one QPSK symbol vector and counts stream errors at every
point of the Es/N0 grid. Random numbers come from ``trial_rng(seed, trial,
attempt, purpose, ...)``, so every trial is reproducible on its own and the
result does not depend on batching or on the number of worker processes.
The same instance, symbols and noise are reused for every scheme and every
Es/N0 point (common random numbers), which keeps scheme comparisons and
SER-vs-Es/N0 curves free of independent sampling noise.

Transmit powers enter as one common scale per instance (or one per user in
per-receiver mode); the PIA cost matrix, the strong/weak split and the
normalized leakage weights are invariant to that scale, so selection and
alignment are done once per instance and reused along the grid. Only the
Max-SINR baseline depends on the noise level and is re-solved per point.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import erfc
from scipy.stats import norm

from . import __version__, detect, ia, pia
from .netgen import NOISE_POWER, QPSK, SystemConfig, esn0_powers, generate_topology, trial_rng

__all__ = [
    "SCHEMES",
    "CSV_SCHEMA",
    "CDF_SCHEMA",
    "WINDOW_SCHEMA",
    "ExperimentSpec",
    "SerRow",
    "SerReport",
    "CdfReport",
    "wilson_interval",
    "qpsk_awgn_ser",
    "run_trial",
    "estimate_ser",
    "ser_cdf",
    "interference_window_curve",
    "theorem1_scaling_check",
    "baseline_one_stage",
    "write_ser_csv",
    "write_cdf_csv",
    "write_window_csv",
    "manifest",
]

SCHEMES = ("PIAID-Alg1", "PIAID-SDR-SID", "Randomized-PIA", "Iterative-IA", "Max-SINR")
CSV_SCHEMA = "piaid.ser/1"
CDF_SCHEMA = "piaid.cdf/1"
WINDOW_SCHEMA = "piaid.window/1"

# purposes in the per-trial seed key
_TOPOLOGY, _SYMBOLS, _RANDOM_PIA, _IA_INIT, _BASELINE_INIT, _CDF_SYMBOLS = range(6)
_FAMILY_CODE = {"piaid": 0, "randomized": 1}
_SCHEME_FAMILY = {
    "PIAID-Alg1": "piaid",
    "PIAID-SDR-SID": "piaid",
    "Randomized-PIA": "randomized",
    "Iterative-IA": "iterative",
    "Max-SINR": "max_sinr",
}


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything that determines a Monte-Carlo run.

    Parameters
    ----------
    system : SystemConfig
    esn0_grid_db : tuple of float
    schemes : tuple of str
        Subset of :data:`SCHEMES`.
    trials : int
        Channel realizations, each with one symbol vector per Es/N0 point.
    seed : int
    resample_on_ia_failure : bool
        Redraw the instance when PIA alignment misses the leakage tolerance
        (counted in the report); otherwise keep the unconverged transceivers.
    alpha : int, optional
        Aligned interferers per receiver; defaults to the largest feasible.
    per_receiver_esn0 : bool
        Put every desired link exactly at the target instead of the mean.
    symbols_per_instance : int
        Inner symbol loop length in CDF mode.
    instance_source : callable, optional
        ``(trial, attempt) -> NetworkInstance`` replacing random topologies,
        e.g. for fixed-channel reference tests. Powers are ignored.
    """

    system: SystemConfig = field(default_factory=SystemConfig)
    esn0_grid_db: tuple = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    schemes: tuple = SCHEMES
    trials: int = 1000
    seed: int = 0
    resample_on_ia_failure: bool = True
    alpha: int | None = None
    per_receiver_esn0: bool = False
    ia_tol: float = ia.DEFAULT_TOL
    ia_max_iters: int = 150
    ia_restarts: int = 20
    max_resamples: int = 20
    leakage_iters: int = 100
    max_sinr_iters: int = 50
    symbols_per_instance: int = 1000
    batch_size: int = 500
    instance_source: Callable | None = None

    def __post_init__(self):
        object.__setattr__(self, "esn0_grid_db", tuple(float(g) for g in self.esn0_grid_db))
        object.__setattr__(self, "schemes", tuple(self.schemes))
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.esn0_grid_db:
            raise ValueError("Es/N0 grid must be nonempty")
        if not self.schemes:
            raise ValueError("scheme list must be nonempty")
        unknown = [s for s in self.schemes if s not in SCHEMES]
        if unknown:
            raise ValueError(f"unknown schemes {unknown}; choose from {list(SCHEMES)}")
        if len(set(self.schemes)) != len(self.schemes):
            raise ValueError("duplicate schemes")
        if self.batch_size < 1 or self.symbols_per_instance < 1:
            raise ValueError("batch_size and symbols_per_instance must be >= 1")
        self.resolved_alpha()

    def resolved_alpha(self) -> int:
        s = self.system
        if self.alpha is not None:
            if not 0 <= self.alpha <= s.K - 1:
                raise pia.InfeasibleDegree(f"alpha={self.alpha} outside [0, K-1={s.K - 1}]")
            return self.alpha
        if s.K == 1:
            return 0
        return pia.feasible_alpha(s.M, s.N, s.D, s.K)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("instance_source")
        d["esn0_grid_db"] = list(self.esn0_grid_db)
        d["schemes"] = list(self.schemes)
        d["alpha"] = self.resolved_alpha()
        return d


@dataclass
class SerRow:
    scheme: str
    esn0_db: float
    trials: int
    errors: int
    symbols: int
    ser: float
    ci_lo: float
    ci_hi: float


@dataclass
class SerReport:
    """Aggregated SER per (scheme, Es/N0) with the per-trial samples kept.

    ``samples[scheme]`` has shape ``(trials, grid)`` and holds each trial's
    error fraction over its ``K * D`` streams. ``resamples`` counts instance
    redraws after alignment failures, ``ia_failures`` trials whose final
    transceivers still missed the tolerance.
    """

    spec: ExperimentSpec
    rows: list
    samples: dict
    resamples: dict
    ia_failures: dict
    sdp_unconverged: int = 0

    def row(self, scheme: str, esn0_db: float) -> SerRow:
        for r in self.rows:
            if r.scheme == scheme and r.esn0_db == float(esn0_db):
                return r
        raise KeyError((scheme, esn0_db))


@dataclass
class CdfReport:
    """Per-stream SER samples ``samples[scheme]`` of shape ``(instances, K * D)``."""

    spec: ExperimentSpec
    esn0_db: float
    samples: dict

    def percentile(self, scheme: str, q: float) -> float:
        return float(np.percentile(self.samples[scheme].ravel(), q))

    def ecdf(self, scheme: str):
        x = np.sort(self.samples[scheme].ravel())
        return x, np.arange(1, x.size + 1) / x.size


def wilson_interval(errors, n, z: float = norm.ppf(0.975)):
    """Wilson score interval for a binomial proportion."""
    errors = np.asarray(errors, dtype=float)
    n = np.asarray(n, dtype=float)
    p = errors / n
    den = 1.0 + z**2 / n
    centre = (p + z**2 / (2 * n)) / den
    half = z * np.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / den
    # the bounds touch 0 or 1 exactly at the extremes; avoid round-off there
    lo = np.where(errors == 0, 0.0, np.clip(centre - half, 0.0, 1.0))
    hi = np.where(errors == n, 1.0, np.clip(centre + half, 0.0, 1.0))
    return lo, hi


def qpsk_awgn_ser(esn0_db):
    """Exact QPSK SER on AWGN, ``2q - q**2`` with ``q = Q(sqrt(Es/N0))``."""
    g = 10.0 ** (np.asarray(esn0_db, dtype=float) / 10.0)
    q = 0.5 * erfc(np.sqrt(g / 2.0))
    return 2 * q - q**2


# ---------------------------------------------------------------------------
# per-trial building blocks
# ---------------------------------------------------------------------------


def _instance(spec: ExperimentSpec, t: int, attempt: int):
    if spec.instance_source is not None:
        return spec.instance_source(t, attempt)
    return generate_topology(spec.system, trial_rng(spec.seed, t, attempt, _TOPOLOGY))


def _strong_mask(mask: np.ndarray, rx: np.ndarray) -> np.ndarray:
    """Non-aligned interferers at or above the desired received power."""
    K = rx.shape[-1]
    desired = np.diagonal(rx, axis1=-2, axis2=-1)[..., :, None]
    return ~mask & ~np.eye(K, dtype=bool) & (rx >= desired)


@dataclass
class _Links:
    """Transceivers of one scheme family for a batch of trials."""

    L: np.ndarray  # (T, K, K)
    H: np.ndarray  # (T, K, K, N, M)
    U: np.ndarray
    V: np.ndarray
    strong: np.ndarray  # (T, K, K) bool
    failed: np.ndarray  # (T,) bool
    resamples: int = 0


def _align_family(spec: ExperimentSpec, trials: np.ndarray, family: str) -> _Links:
    """PIA selection and alignment, redrawing instances that fail to align."""
    s = spec.system
    alpha = spec.resolved_alpha()
    T = trials.size
    K, N, M, D = s.K, s.N, s.M, s.D
    L = np.empty((T, K, K))
    H = np.empty((T, K, K, N, M), dtype=complex)
    U = np.empty((T, K, N, D), dtype=complex)
    V = np.empty((T, K, M, D), dtype=complex)
    masks = np.empty((T, K, K), dtype=bool)
    failed = np.zeros(T, dtype=bool)
    attempts = np.zeros(T, dtype=int)
    pending = np.arange(T)
    resamples = 0
    for r in range(spec.max_resamples + 1):
        for j in pending:
            inst = _instance(spec, int(trials[j]), int(attempts[j]))
            L[j], H[j] = inst.L, inst.H
            rx = inst.L * esn0_powers(inst.L, spec.esn0_grid_db[0], spec.per_receiver_esn0)[None, :]
            if family == "piaid":
                masks[j] = pia.select_pia_set(pia.build_cost_matrix(rx), alpha).mask()
            else:
                rng = trial_rng(spec.seed, int(trials[j]), int(attempts[j]), _RANDOM_PIA)
                masks[j] = pia.random_circulant_pia_set(K, alpha, rng).mask() if alpha else np.zeros((K, K), bool)
        rngs = [
            trial_rng(spec.seed, int(trials[j]), int(attempts[j]), _IA_INIT, _FAMILY_CODE[family]) for j in pending
        ]
        rx = L[pending] * esn0_powers(L[pending], spec.esn0_grid_db[0], spec.per_receiver_esn0)[:, None, :]
        res = ia.solve_alignment_batch(
            H[pending],
            rx,
            masks[pending],
            D,
            rngs,
            tol=spec.ia_tol,
            max_iters=spec.ia_max_iters,
            restarts=spec.ia_restarts,
        )
        U[pending], V[pending] = res.U, res.V
        failed[pending] = ~res.converged
        if not spec.resample_on_ia_failure or r == spec.max_resamples:
            break
        pending = pending[~res.converged]
        if pending.size == 0:
            break
        attempts[pending] += 1
        resamples += pending.size
    rx = L * esn0_powers(L, spec.esn0_grid_db[0], spec.per_receiver_esn0)[:, None, :]
    return _Links(L, H, U, V, _strong_mask(masks, rx), failed, resamples)


def _baseline_links(spec: ExperimentSpec, trials: np.ndarray) -> _Links:
    s = spec.system
    insts = [_instance(spec, int(t), 0) for t in trials]
    L = np.stack([i.L for i in insts])
    H = np.stack([i.H for i in insts])
    T = trials.size
    return _Links(
        L,
        H,
        np.zeros((T, s.K, s.N, s.D), dtype=complex),
        np.zeros((T, s.K, s.M, s.D), dtype=complex),
        np.zeros((T, s.K, s.K), dtype=bool),
        np.zeros(T, dtype=bool),
    )


def _baseline_init(spec: ExperimentSpec, trials: np.ndarray, code: int) -> np.ndarray:
    s = spec.system
    return np.stack(
        [ia.random_orthonormal(trial_rng(spec.seed, int(t), 0, _BASELINE_INIT, code), s.K, s.M, s.D) for t in trials]
    )


def _iterative_ia(spec: ExperimentSpec, links: _Links, trials: np.ndarray) -> None:
    rx = links.L * esn0_powers(links.L, spec.esn0_grid_db[0], spec.per_receiver_esn0)[:, None, :]
    U, V = ia.leakage_min_batch(links.H, rx, spec.system.D, _baseline_init(spec, trials, 0), spec.leakage_iters)
    links.U, links.V, _ = ia.diagonalize_direct_batch(U, V, links.H)


def _max_sinr(spec: ExperimentSpec, links: _Links, trials: np.ndarray, esn0_db: float) -> None:
    rx = links.L * esn0_powers(links.L, esn0_db, spec.per_receiver_esn0)[:, None, :]
    links.U, links.V = ia.max_sinr_batch(
        links.H, rx, spec.system.D, _baseline_init(spec, trials, 1), spec.max_sinr_iters
    )


def _streams(links: _Links, P: np.ndarray, x: np.ndarray, z: np.ndarray):
    """Per-stream observations for transmit powers ``P`` (T, K).

    ``x`` is ``(T, ..., K, D)`` and ``z`` is ``(T, ..., K, N)`` with the same
    inner sample axes. Returns ``y``, ``direct`` with shape ``(T, ..., K, D)``
    and strong gains ``(T, K, D, n_max)`` plus their counts ``(T, K, D)``.
    """
    G = ia.effective_gains_batch(links.U, links.V, links.H)  # (T, K, I, l, d)
    amp = np.sqrt(links.L * P[:, None, :])
    Gs = G * amp[..., None, None]
    T, K, _, D, _ = Gs.shape
    inner = x.shape[1:-2]
    xf = x.reshape(T, -1, K, D)
    zf = np.einsum("bknl,bskn->bskl", links.U.conj(), z.reshape(T, -1, K, z.shape[-1]))
    y = np.einsum("bkild,bsid->bskl", Gs, xf) + zf
    idx = np.arange(K)
    direct = np.einsum("bkll->bkl", Gs[:, idx, idx])
    order = np.argsort(~links.strong, axis=-1, kind="stable")
    nq = links.strong.sum(axis=-1)
    n_max = int(nq.max()) if nq.size else 0
    sel = np.take_along_axis(Gs, order[..., :n_max, None, None], axis=2)  # (T, K, n, l, d)
    gains = sel.transpose(0, 1, 3, 2, 4).reshape(T, K, D, n_max * D)
    counts = np.broadcast_to((nq * D)[..., None], (T, K, D))
    return y.reshape((T,) + inner + (K, D)), direct, gains, counts


def _symbol_errors(x_hat: np.ndarray, x: np.ndarray) -> np.ndarray:
    return (np.sign(x_hat.real) != np.sign(x.real)) | (np.sign(x_hat.imag) != np.sign(x.imag))


def _detect(y, direct, gains, counts, method: str):
    """Detect ``y (T, S, K, D)`` with per-(T, K, D) gains; returns x_hat and SDP stats."""
    T, S, K, D = y.shape
    n = gains.shape[-1]
    g = np.broadcast_to(gains[:, None], (T, S, K, D, n)).reshape(T * S * K * D, n)
    c = np.broadcast_to(counts[:, None], (T, S, K, D)).ravel()
    dg = np.broadcast_to(direct[:, None], (T, S, K, D)).ravel()
    if method == "sdr_sid":
        unconverged = [0]

        def solver(W):
            S_, conv = detect._default_solver(W)
            unconverged[0] += int(np.sum(~conv))
            return S_, conv

        x_hat, _ = detect.detect_batch(y.ravel(), dg, g, c, method, solver=solver)
        return x_hat.reshape(T, S, K, D), unconverged[0]
    x_hat, _ = detect.detect_batch(y.ravel(), dg, g, c, method)
    return x_hat.reshape(T, S, K, D), 0


def _simulate(spec: ExperimentSpec, trials: np.ndarray, esn0_grid, inner: int, symbol_purpose: int):
    """Error indicators ``(T, G, inner, K, D)`` per scheme for a batch of trials."""
    s = spec.system
    T = trials.size
    sym = [trial_rng(spec.seed, int(t), 0, symbol_purpose) for t in trials]
    x = np.stack([QPSK[r.integers(0, 4, size=(inner, s.K, s.D))] for r in sym])
    z = np.stack([r.standard_normal((inner, s.K, s.N)) + 1j * r.standard_normal((inner, s.K, s.N)) for r in sym])
    grid = np.asarray(esn0_grid, dtype=float)
    out, stats = {}, {"resamples": {}, "ia_failures": {}, "sdp_unconverged": 0}

    families = {}
    for scheme in spec.schemes:
        fam = _SCHEME_FAMILY[scheme]
        if fam in ("piaid", "randomized") and fam not in families:
            families[fam] = _align_family(spec, trials, fam)
            stats["resamples"][fam] = families[fam].resamples
            stats["ia_failures"][fam] = int(families[fam].failed.sum())

    for scheme in spec.schemes:
        fam = _SCHEME_FAMILY[scheme]
        err = np.empty((T, grid.size, inner, s.K, s.D), dtype=bool)
        if fam in families:
            links = families[fam]
            method = "sdr_sid" if scheme == "PIAID-SDR-SID" else "exhaustive"
        else:
            links = _baseline_links(spec, trials)
            method = None
            if fam == "iterative":
                _iterative_ia(spec, links, trials)
        for gi, g in enumerate(grid):
            P = esn0_powers(links.L, g, spec.per_receiver_esn0)
            if fam == "max_sinr":
                _max_sinr(spec, links, trials, g)
            y, direct, gains, counts = _streams(links, P, x, z)
            if method is None:
                x_hat = detect.stage2_batch(y, direct[:, None])
            else:
                x_hat, unc = _detect(y, direct, gains, counts, method)
                stats["sdp_unconverged"] += unc
            err[:, gi] = _symbol_errors(x_hat, x)
        out[scheme] = err
    return out, stats


def piaid_streams(spec: ExperimentSpec, esn0_db: float):
    """Detector inputs of every stream under cost-optimal PIA, one symbol vector per trial.

    Returns flat arrays over ``trials * K * D`` streams: ``y``, ``direct``,
    strong ``gains`` (zero padded, shape ``(streams, n_max)``), ``counts``
    and the transmitted symbols ``x``.
    """
    s = spec.system
    trials = np.arange(spec.trials)
    links = _align_family(spec, trials, "piaid")
    sym = [trial_rng(spec.seed, int(t), 0, _SYMBOLS) for t in trials]
    x = np.stack([QPSK[r.integers(0, 4, size=(1, s.K, s.D))] for r in sym])
    z = np.stack([r.standard_normal((1, s.K, s.N)) + 1j * r.standard_normal((1, s.K, s.N)) for r in sym])
    P = esn0_powers(links.L, esn0_db, spec.per_receiver_esn0)
    y, direct, gains, counts = _streams(links, P, x, z)
    n = gains.shape[-1]
    return y.ravel(), direct.ravel(), gains.reshape(-1, n), counts.ravel(), x.ravel()


def _ser_chunk(spec: ExperimentSpec, start: int, stop: int):
    trials = np.arange(start, stop)
    err, stats = _simulate(spec, trials, spec.esn0_grid_db, 1, _SYMBOLS)
    counts = {k: v[:, :, 0].sum(axis=(-1, -2)).astype(np.int64) for k, v in err.items()}  # (T, G)
    return counts, stats


def _chunks(n: int, size: int):
    return [(a, min(a + size, n)) for a in range(0, n, size)]


def _map(fn, spec: ExperimentSpec, workers: int):
    jobs = _chunks(spec.trials, spec.batch_size)
    if workers <= 1 or len(jobs) == 1:
        return [fn(spec, a, b) for a, b in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, [spec] * len(jobs), [a for a, _ in jobs], [b for _, b in jobs]))


def _merge_stats(parts):
    total = {"resamples": {}, "ia_failures": {}, "sdp_unconverged": 0}
    for st in parts:
        for key in ("resamples", "ia_failures"):
            for fam, v in st[key].items():
                total[key][fam] = total[key].get(fam, 0) + v
        total["sdp_unconverged"] += st["sdp_unconverged"]
    return total


def run_trial(spec: ExperimentSpec, trial_index: int, scheme: str) -> np.ndarray:
    """Symbol errors of one trial, shape ``(grid, K, D)`` with 0/1 entries."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    sub = replace(spec, schemes=(scheme,), trials=1)
    err, _ = _simulate(sub, np.array([trial_index]), spec.esn0_grid_db, 1, _SYMBOLS)
    return err[scheme][0, :, 0].astype(np.int64)


def estimate_ser(spec: ExperimentSpec, workers: int = 1) -> SerReport:
    """SER per scheme and Es/N0 point with Wilson 95% intervals.

    Trials are processed in fixed chunks of ``spec.batch_size``; with
    ``workers > 1`` the chunks run in a process pool and are combined in
    chunk order, so the report does not depend on ``workers``.
    """
    parts = _map(_ser_chunk, spec, workers)
    s = spec.system
    per_trial = {k: np.concatenate([p[0][k] for p in parts]) for k in spec.schemes}
    stats = _merge_stats(p[1] for p in parts)
    streams = s.K * s.D
    rows = []
    for scheme in spec.schemes:
        for gi, g in enumerate(spec.esn0_grid_db):
            e = int(per_trial[scheme][:, gi].sum())
            n = spec.trials * streams
            lo, hi = wilson_interval(e, n)
            rows.append(SerRow(scheme, g, spec.trials, e, n, e / n, float(lo), float(hi)))
    samples = {k: v / streams for k, v in per_trial.items()}
    return SerReport(spec, rows, samples, stats["resamples"], stats["ia_failures"], stats["sdp_unconverged"])


def _cdf_chunk(spec: ExperimentSpec, start: int, stop: int):
    trials = np.arange(start, stop)
    (g,) = spec.esn0_grid_db
    err, stats = _simulate(spec, trials, (g,), spec.symbols_per_instance, _CDF_SYMBOLS)
    s = spec.system
    return {k: v[:, 0].mean(axis=1).reshape(stop - start, s.K * s.D) for k, v in err.items()}, stats


def ser_cdf(spec: ExperimentSpec, esn0_db: float, workers: int = 1) -> CdfReport:
    """Per-stream SER of every instance at one Es/N0 point.

    Each of ``spec.trials`` instances carries ``spec.symbols_per_instance``
    symbol vectors; the per-stream error fraction is one CDF sample.
    """
    sub = replace(spec, esn0_grid_db=(float(esn0_db),))
    parts = _map(_cdf_chunk, sub, workers)
    samples = {k: np.concatenate([p[0][k] for p in parts]) for k in spec.schemes}
    return CdfReport(sub, float(esn0_db), samples)


def baseline_one_stage(instance, transceiver: str, x: np.ndarray, z: np.ndarray, rng=None, iters: int | None = None):
    """One-stage detection with full-network transceivers.

    Parameters
    ----------
    instance : NetworkInstance
        Powers are taken as given.
    transceiver : {"iterative_ia", "max_sinr"}
    x : (K, D) complex
        Transmitted symbols.
    z : (K, N) complex
        Receiver noise.
    rng : numpy.random.Generator, optional
        Initial precoders.

    Returns
    -------
    (K, D) complex
        Stage II decisions; every interferer is treated as noise.
    """
    K, D = x.shape
    rng = rng if rng is not None else np.random.default_rng(0)
    H = instance.H[None]
    rx = instance.rx_power()[None]
    V0 = ia.random_orthonormal(rng, K, instance.M, D)[None]
    if transceiver == "iterative_ia":
        U, V = ia.leakage_min_batch(H, rx, D, V0, iters or 100)
        U, V, _ = ia.diagonalize_direct_batch(U, V, H)
    elif transceiver == "max_sinr":
        U, V = ia.max_sinr_batch(H, rx, D, V0, iters or 50)
    else:
        raise ValueError(f"unknown transceiver {transceiver!r}")
    links = _Links(instance.L[None], H, U, V, np.zeros((1, K, K), bool), np.zeros(1, bool))
    y, direct, _, _ = _streams(links, instance.P[None], x[None, None], z[None, None])
    return detect.stage2_batch(y[0, 0], direct[0])


# ---------------------------------------------------------------------------
# single-interferer link: the interference window and the SER scaling law
# ---------------------------------------------------------------------------


def _siso_ser(ratio_db: np.ndarray, trials: int, esn0_db: float, seed: int, chunk: int = 200_000) -> np.ndarray:
    """SER of ``y = sqrt(P1) h1 x1 + sqrt(P2) h2 x2 + z`` with PIAID detection.

    ``P1`` puts the desired link at ``esn0_db``; ``P2 = P1 * 10**(ratio/10)``.
    The interferer is detected in Stage I when ``P2 >= P1`` and treated as
    noise otherwise. The same fading, symbols and noise are used at every
    ratio.
    """
    ratio_db = np.atleast_1d(np.asarray(ratio_db, dtype=float))
    P1 = NOISE_POWER * 10.0 ** (esn0_db / 10.0)
    errors = np.zeros(ratio_db.size, dtype=np.int64)
    for c, a in enumerate(range(0, trials, chunk)):
        n = min(chunk, trials - a)
        rng = trial_rng(seed, c)
        h = (rng.standard_normal((2, n)) + 1j * rng.standard_normal((2, n))) / np.sqrt(2)
        x = QPSK[rng.integers(0, 4, size=(2, n))]
        z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        for j, r in enumerate(ratio_db):
            P2 = P1 * 10.0 ** (r / 10.0)
            g1, g2 = np.sqrt(P1) * h[0], np.sqrt(P2) * h[1]
            y = g1 * x[0] + g2 * x[1] + z
            if P2 >= P1:
                i_hat, _ = detect.stage1_exhaustive_batch(y, g2[:, None])
                y = y - i_hat
            errors[j] += _symbol_errors(detect.stage2_batch(y, g1), x[0]).sum()
    return errors / trials


def interference_window_curve(p2_grid_db=None, trials: int = 100_000, esn0_db: float = 40.0, seed: int = 0):
    """SER of two-stage detection versus interference-to-signal power ratio.

    Returns ``(p2_grid_db, ser)``. The default grid spans -20..20 dB in 2 dB
    steps; ``esn0_db`` keeps the link interference limited.
    """
    if p2_grid_db is None:
        p2_grid_db = np.arange(-20.0, 20.0 + 1e-9, 2.0)
    p2 = np.asarray(p2_grid_db, dtype=float)
    return p2, _siso_ser(p2, trials, esn0_db, seed)


def theorem1_scaling_check(rho_grid_db=(-30.0, -25.0, -20.0, -15.0), trials: int = 100_000, esn0_db: float = 70.0, seed: int = 0) -> dict:
    """Log-log SER slopes on both sides of the interference window.

    On the weak branch the interferer at ratio ``rho`` is treated as noise,
    on the strong branch (ratio ``1/rho``) it is detected and cancelled.
    Both SERs should scale linearly in ``rho``.

    Returns
    -------
    dict
        ``rho_db``, ``weak_ser``, ``strong_ser``, ``weak_slope`` and
        ``strong_slope`` (least-squares slopes of log10 SER vs log10 rho).
    """
    rho = np.asarray(rho_grid_db, dtype=float)
    weak = _siso_ser(rho, trials, esn0_db, seed)
    strong = _siso_ser(-rho, trials, esn0_db, seed)
    lx = rho / 10.0

    def slope(ser):
        ok = ser > 0
        if ok.sum() < 2:
            return float("nan")
        return float(np.polyfit(lx[ok], np.log10(ser[ok]), 1)[0])

    return {
        "rho_db": rho,
        "weak_ser": weak,
        "strong_ser": strong,
        "weak_slope": slope(weak),
        "strong_slope": slope(strong),
    }


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def write_ser_csv(report: SerReport, fh) -> None:
    fh.write(f"# schema={CSV_SCHEMA}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["scheme", "esn0_db", "trials", "errors", "ser", "ci_lo", "ci_hi"])
    for r in report.rows:
        w.writerow([r.scheme, _fmt(r.esn0_db), r.trials, r.errors, _fmt(r.ser), _fmt(r.ci_lo), _fmt(r.ci_hi)])


def write_cdf_csv(report: CdfReport, fh) -> None:
    fh.write(f"# schema={CDF_SCHEMA}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["scheme", "esn0_db", "instance_id", "ser_sample"])
    for scheme, s in report.samples.items():
        for inst, row in enumerate(s):
            for v in row:
                w.writerow([scheme, _fmt(report.esn0_db), inst, _fmt(v)])


def write_window_csv(p2_db, ser, fh) -> None:
    fh.write(f"# schema={WINDOW_SCHEMA}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["p2_db", "ser"])
    for p, v in zip(p2_db, ser):
        w.writerow([_fmt(p), _fmt(v)])


def manifest(command: str, spec_dict: dict, outputs: dict, extra: dict | None = None) -> str:
    """Deterministic JSON run manifest (sorted keys, no timestamps)."""
    doc = {
        "schema": "piaid.manifest/1",
        "command": command,
        "code_version": __version__,
        "numpy_version": np.__version__,
        "spec": spec_dict,
        "outputs": outputs,
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))
