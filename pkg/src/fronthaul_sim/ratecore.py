"""Single-BS backhaul and rate formulas for CFE and the three ECF schemes.

All rates are in bits per channel use and already include the data fraction
``T_d / T``. Expectations over the compressed channel estimate use common
random numbers: for a given ``McConfig`` every strategy sees the same draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence, Union

import numpy as np

from . import kernels
from .model import ChannelStats, EstimationMode, PowerSplit, SystemConfig, derive_stats
from .montecarlo import Estimate, McConfig, cached_complex_normal, summarize
from .optimizer import SearchSpec, bisect, line_search

__all__ = [
    "AdaptiveNoise",
    "BackhaulSplit",
    "CompressedGram",
    "CompressionParams",
    "EffectiveNoise",
    "RateReport",
    "ScalarNoise",
    "WaterLevels",
    "WaterfillSolution",
    "best_power_split",
    "cfe_rate",
    "csi_rate_floor",
    "csi_noise_from_rate",
    "csi_rate_from_noise",
    "data_noise_for_budget",
    "data_noise_rayleigh",
    "data_rate_for_noise",
    "ecf_joint_adaptive_rate",
    "ecf_joint_backhaul",
    "ecf_joint_rate",
    "ecf_separate_rate",
    "effective_noise",
    "gram_eigs",
    "kkt_residuals",
    "received_cov_eigs",
    "solve_joint_noise",
    "solve_waterfill_level",
    "waterfill",
    "waterfill_for_budget",
]

ESTIMATE_STREAM = "estimate"
DEFAULT_SEARCH = SearchSpec(0.0, 1.0)


# --------------------------------------------------------------------------
# Parameter and result types


@dataclass(frozen=True)
class BackhaulSplit:
    c_pilot: float
    c_data: float

    def __post_init__(self):
        if self.c_pilot < 0 or self.c_data < 0:
            raise ValueError("backhaul rates must be non-negative")

    @property
    def total(self) -> float:
        return self.c_pilot + self.c_data


@dataclass(frozen=True)
class ScalarNoise:
    variance: float


@dataclass(frozen=True)
class AdaptiveNoise:
    """Water-filled data quantisation with Lagrange multiplier ``mu``."""

    mu: float


DataNoise = Union[ScalarNoise, AdaptiveNoise]


@dataclass(frozen=True)
class CompressionParams:
    csi_noise: tuple[float, ...]
    data_noise: tuple[DataNoise, ...]


@dataclass(frozen=True)
class EffectiveNoise:
    sigma_pe_sq: float
    rho_eff: float


@dataclass
class RateReport:
    """Sum-rate estimate with the parameters that achieved it.

    ``samples`` holds the per-trial sum rates so that strategies evaluated on
    the same seed can be compared with paired statistics.
    """

    strategy: str
    sum_rate: float
    se: float
    per_bs_rates: tuple[float, ...]
    split: tuple[BackhaulSplit, ...]
    params: CompressionParams | None
    power_split: PowerSplit | None
    trials: int
    seed: int
    permutation: tuple[int, ...] | None = None
    extra: dict = field(default_factory=dict)
    samples: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def zero(cls, strategy: str, config: SystemConfig, mc: McConfig, power_split: PowerSplit | None = None, **extra) -> "RateReport":
        n = config.n_bs
        return cls(
            strategy,
            0.0,
            0.0,
            (0.0,) * n,
            tuple(BackhaulSplit(0.0, float(c)) for c in config.backhaul),
            None,
            power_split,
            mc.trials,
            mc.seed,
            extra=dict(extra),
            samples=np.zeros(mc.trials),
        )

    @property
    def estimate(self) -> Estimate:
        return Estimate(self.sum_rate, self.se, self.trials)


# --------------------------------------------------------------------------
# Spectra


def gram_eigs(h: np.ndarray) -> np.ndarray:
    """Eigenvalues of ``H H^H`` for a batch ``(n, nr, nt)``; shape ``(n, nr)``."""
    n, nr, nt = h.shape
    if nr == 1:
        return np.einsum("ijk,ijk->ij", h, h.conj()).real.copy()
    small = min(nr, nt)
    if nt < nr:
        g = np.conj(np.swapaxes(h, 1, 2)) @ h
    else:
        g = h @ np.conj(np.swapaxes(h, 1, 2))
    if small == 1:
        eig = g[:, :, 0].real
    elif small == 2:
        eig = kernels.herm2_eigvalsh(np.ascontiguousarray(g))
    else:
        eig = np.linalg.eigvalsh(g)
    eig = np.maximum(eig, 0.0)
    if small < nr:
        eig = np.concatenate([np.zeros((n, nr - small)), eig], axis=1)
    return eig


@lru_cache(maxsize=32)
def _white_gram(mc: McConfig, stream: str, nr: int, nt: int) -> np.ndarray:
    out = gram_eigs(cached_complex_normal(mc, stream, (nr, nt)))
    out.setflags(write=False)
    return out


class CompressedGram:
    """Spectrum of ``Hhat_j Hhat_j^H`` on fixed draws, as a function of the CSI noise.

    ``Hhat_j = M_j + W_j diag(sqrt(v - sigma_p^2))`` with ``W_j`` from the
    estimate stream. When ``M_j = 0`` and all column variances agree, the
    spectrum is a rescaled copy of the white Gram spectrum, which is cached.
    """

    def __init__(self, config: SystemConfig, stats: ChannelStats, mc: McConfig, bs: int = 0, stream: str = ESTIMATE_STREAM):
        self.config = config
        self.bs = bs
        self.mc = mc
        self.shape = (config.nr_per_bs[bs], config.nt)
        self.key = f"{stream}/comp/{bs}"
        self.mean = config.los_mean(bs)
        self.col_var = stats.column_est_var(config, bs)
        self.scalable = not np.any(self.mean) and float(np.ptp(self.col_var)) == 0.0

    @property
    def draws(self) -> np.ndarray:
        return cached_complex_normal(self.mc, self.key, self.shape)

    def matrices(self, csi_noise: float) -> np.ndarray:
        std = np.sqrt(np.maximum(self.col_var - csi_noise, 0.0))
        return self.mean + self.draws * std

    def eigs(self, csi_noise: float) -> np.ndarray:
        if self.scalable:
            v = max(float(self.col_var[0]) - csi_noise, 0.0)
            return _white_gram(self.mc, self.key, *self.shape) * v
        return gram_eigs(self.matrices(csi_noise))


# --------------------------------------------------------------------------
# Closed-form pieces


def csi_rate_from_noise(stats: ChannelStats, csi_noise: float, config: SystemConfig, bs: int = 0) -> float:
    """Backhaul rate needed to forward the channel estimate with noise ``csi_noise``."""
    if not csi_noise > 0:
        if csi_noise == 0:
            return math.inf
        raise ValueError("csi_noise must be positive")
    floor = stats.min_est_var(bs)
    if csi_noise > floor * (1 + 1e-12):
        raise ValueError(f"csi_noise {csi_noise!r} exceeds the smallest estimate variance {floor!r}")
    nr = config.nr_per_bs[bs]
    log_sum = sum(n * math.log2(v) for n, v in zip(config.nt_per_ms, stats.est_var[bs]))
    return nr / config.coherence_len * (log_sum - config.nt * math.log2(csi_noise))


def csi_noise_from_rate(stats: ChannelStats, c_pilot: float, config: SystemConfig, bs: int = 0) -> float:
    """Inverse of :func:`csi_rate_from_noise`."""
    if c_pilot < 0:
        raise ValueError("c_pilot must be non-negative")
    nr, nt = config.nr_per_bs[bs], config.nt
    log_geo = sum(n * math.log2(v) for n, v in zip(config.nt_per_ms, stats.est_var[bs])) / nt
    return 2.0 ** (log_geo - config.coherence_len * c_pilot / (nr * nt))


def csi_rate_floor(stats: ChannelStats, config: SystemConfig, bs: int = 0) -> float:
    """Smallest CSI rate that keeps every compressed-estimate variance non-negative."""
    floor = stats.min_est_var(bs)
    return max(csi_rate_from_noise(stats, floor, config, bs), 0.0) if floor > 0 else math.inf


def effective_noise(p_data: float, nt: int, csi_noise: float, err_aggregate: float, data_noise: float | None = None) -> EffectiveNoise:
    """Noise floor after lumping estimation error and CSI quantisation."""
    spe = 1.0 + p_data * (csi_noise + err_aggregate / nt)
    rho = math.nan if data_noise is None else p_data / (nt * (spe + data_noise))
    return EffectiveNoise(spe, rho)


def received_cov_eigs(config: SystemConfig, power: float, bs: int = 0) -> np.ndarray:
    """Eigenvalues of the average received covariance at BS ``bs``.

    This is ``(P/N_t)(K/(K+1) Hbar Hbar^H + sum_i alpha_i N_ti/(K+1) I) + I``
    with the gain-weighted line-of-sight matrix ``Hbar``.
    """
    k1 = config.rician_k + 1.0
    hbar = config.los_weighted(bs)
    nr = config.nr_per_bs[bs]
    scatter = float(config.gains[bs] @ np.asarray(config.nt_per_ms, dtype=float)) / k1
    cov = config.rician_k / k1 * (hbar @ hbar.conj().T) + scatter * np.eye(nr)
    return np.maximum(np.linalg.eigvalsh(power / config.nt * cov), 0.0) + 1.0


def data_rate_for_noise(eigs: np.ndarray, noise: float, fraction: float) -> float:
    """``fraction * sum log2(1 + e / noise)`` for a deterministic spectrum."""
    if math.isinf(noise):
        return 0.0
    return fraction * float(np.log2(1.0 + np.asarray(eigs) / noise).sum())


def data_noise_for_budget(eigs: np.ndarray, budget: float, fraction: float, tol: float = 1e-12) -> float:
    """Noise variance at which :func:`data_rate_for_noise` spends ``budget``."""
    eigs = np.asarray(eigs, dtype=float)
    if budget <= 0 or fraction <= 0:
        return math.inf
    if math.isinf(budget):
        return 0.0
    step = 2.0 ** (budget / (fraction * eigs.size)) - 1.0
    lo, hi = eigs.min() / step, eigs.max() / step
    if lo == hi:
        return float(lo)
    return bisect(lambda s: data_rate_for_noise(eigs, s, fraction), budget, (lo, hi), tol=tol, log=True)


def data_noise_rayleigh(config: SystemConfig, p_data: float, c_data: float, bs: int = 0) -> float:
    """Closed-form data quantisation noise when the mean channel vanishes."""
    if c_data <= 0:
        return math.inf
    nr, td = config.nr_per_bs[bs], config.data_len
    load = p_data / config.nt * float(config.gains[bs] @ np.asarray(config.nt_per_ms, dtype=float))
    return (load + 1.0) / (2.0 ** (config.coherence_len * c_data / (nr * td)) - 1.0)


def _noise_bracket(x: np.ndarray, budget_per_use: float, nr: int) -> tuple[float, float]:
    step = 2.0 ** (budget_per_use / nr) - 1.0
    return float(x.min()) / step, float(x.max()) / step


def solve_joint_noise(t: np.ndarray, budget_per_use: float, tol: float = 1e-12) -> float:
    """Scalar noise ``s`` with ``mean_i sum_n log2(1 + t_in / s) = budget_per_use``.

    ``t`` holds per-sample eigenvalues of the received-signal covariance,
    which all exceed the effective noise floor, so the bracket is finite.
    """
    if budget_per_use <= 0:
        return math.inf
    if math.isinf(budget_per_use):
        return 0.0
    n = t.shape[0]
    ones = np.ones(n)
    lo, hi = _noise_bracket(t, budget_per_use, t.shape[1])
    if lo == hi:
        return lo

    def spent(s):
        return kernels.sum_log2_1p(t, ones / s) / n

    return bisect(spent, budget_per_use, (lo, hi), tol=tol, log=True)


# --------------------------------------------------------------------------
# Water-filling


@dataclass(frozen=True)
class WaterfillSolution:
    basis: np.ndarray
    signal_eigs: np.ndarray
    inv_noise_eigs: np.ndarray
    mu: float
    c_tilde: float
    sigma_pe_sq: float
    budget_used: float
    rate: float

    def data_noise_cov(self) -> np.ndarray:
        """``U diag(1/lambda) U^H`` restricted to active modes (inactive ones are dropped)."""
        active = self.inv_noise_eigs > 0
        u = self.basis[:, active]
        return u @ np.diag(1.0 / self.inv_noise_eigs[active]) @ u.conj().T


def _levels(t: np.ndarray, spe: float, kappa: float) -> np.ndarray:
    return np.maximum(kappa * (1.0 / spe - 1.0 / t) - 1.0 / spe, 0.0)


def _hermitian(a: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    gap = np.max(np.abs(a - a.conj().T)) if a.size else 0.0
    if gap > tol * max(1.0, float(np.max(np.abs(a)))):
        raise ValueError(f"matrix is not Hermitian (asymmetry {gap:.3g})")
    return 0.5 * (a + a.conj().T)


def waterfill(hhat: np.ndarray, sigma_pe_sq: float, mu: float, p_data: float, nt: int, fraction: float = 1.0, c_tilde: float = math.nan) -> WaterfillSolution:
    """Adaptive data-noise levels for one channel estimate at multiplier ``mu``.

    Budget and rate are per data symbol times ``fraction``.
    """
    if not 0 < mu < 1:
        raise ValueError("mu must lie in (0, 1)")
    if not sigma_pe_sq > 0:
        raise ValueError("sigma_pe_sq must be positive")
    cov = _hermitian(p_data / nt * hhat @ hhat.conj().T) + sigma_pe_sq * np.eye(hhat.shape[0])
    t, u = np.linalg.eigh(cov)
    t = np.maximum(t, sigma_pe_sq)
    lam = _levels(t, sigma_pe_sq, 1.0 / mu)
    spent = float(np.log2(1.0 + lam * t).sum())
    gain = spent - float(np.log2(1.0 + lam * sigma_pe_sq).sum())
    return WaterfillSolution(u, t, lam, mu, c_tilde, sigma_pe_sq, fraction * spent, fraction * gain)


class WaterLevels:
    """Exact water level for a batch of spectra.

    With ``u = t / sigma_pe^2 - 1`` and ``x = 1/mu - 1`` a mode is active
    iff ``u > 1/x``. On active modes ``1 + lambda t = x u`` and
    ``1 + lambda sigma_pe^2 = x (1 + u) / (1 + x)``. The mean budget is then
    ``(k log2 x + sum of the k largest log2 u) / n``, which is solved exactly
    after one sort.
    """

    def __init__(self, t: np.ndarray, spe: np.ndarray):
        self.n = t.shape[0]
        self.u = np.maximum(t / spe[:, None] - 1.0, 0.0)
        flat = self.u[self.u > 0]
        self.sorted = np.sort(flat)[::-1]
        self.prefix = np.cumsum(np.log2(self.sorted))

    def level(self, c_tilde: float) -> float:
        """``x = 1/mu - 1`` at which the mean budget equals ``c_tilde``; 0 if unusable."""
        if c_tilde <= 0 or self.sorted.size == 0:
            return 0.0
        if math.isinf(c_tilde):
            return math.inf
        k = np.arange(1, self.sorted.size + 1)
        with np.errstate(over="ignore", invalid="ignore"):
            x = np.exp2((self.n * c_tilde - self.prefix) / k)
            nxt = np.append(self.sorted[1:], 0.0)
            ok = (self.sorted * x > 1.0) & (nxt * x <= 1.0)
        hits = np.flatnonzero(ok)
        if hits.size == 0:
            # rounding at a breakpoint; fall back to the closest candidate
            hits = [int(np.argmin(np.abs(np.log(self.sorted * x))))]
        return float(x[hits[0]])

    def rows(self, x: float) -> tuple[np.ndarray, np.ndarray]:
        """Per-sample budget and rate gain (bits per data symbol) at level ``x``."""
        if x <= 0:
            zero = np.zeros(self.n)
            return zero, zero.copy()
        if math.isinf(x):
            raise ValueError("infinite water level has unbounded budget")
        active = self.u * x > 1.0
        spent = np.where(active, np.log2(np.where(active, x * self.u, 1.0)), 0.0).sum(axis=1)
        lift = math.log2(x / (1.0 + x))
        gain = np.where(active, lift + np.log2(1.0 + self.u), 0.0).sum(axis=1)
        return spent, gain


def solve_waterfill_level(t: np.ndarray, spe: np.ndarray, c_tilde: float) -> float:
    """Water level ``kappa = 1/mu`` at which the mean budget equals ``c_tilde``.

    ``t`` is ``(n, m)`` and ``spe`` is ``(n,)``. The budget is the sample mean
    of ``sum_n log2(1 + lambda_n t_n)`` in bits per data symbol. Returns 1
    (no quantisation at all) when the budget is zero or there is no signal.
    """
    return 1.0 + WaterLevels(t, spe).level(c_tilde)


def waterfill_for_budget(hhat: np.ndarray, sigma_pe_sq: float, c_tilde: float, p_data: float, nt: int) -> WaterfillSolution:
    """Single-sample water-filling whose budget ``sum log2(1 + lambda t)`` equals ``c_tilde``."""
    cov = _hermitian(p_data / nt * hhat @ hhat.conj().T) + sigma_pe_sq * np.eye(hhat.shape[0])
    t = np.maximum(np.linalg.eigvalsh(cov), sigma_pe_sq)
    x = WaterLevels(t[None, :], np.array([sigma_pe_sq])).level(c_tilde)
    if x <= 0:
        raise ValueError("no usable signal mode or zero budget")
    return waterfill(hhat, sigma_pe_sq, 1.0 / (1.0 + x), p_data, nt, c_tilde=c_tilde)


def kkt_residuals(solution: WaterfillSolution, sigma_pe_sq: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stationarity residuals on active modes and implied multipliers on inactive ones.

    Returns ``(active_residuals, inactive_upsilon)``. At an optimum the first
    array is zero and the second is non-negative.
    """
    s2 = solution.sigma_pe_sq if sigma_pe_sq is None else sigma_pe_sq
    mu = solution.mu
    t = solution.signal_eigs
    lam = solution.inv_noise_eigs
    active = lam > 0
    resid = (1.0 - mu) * t[active] / (1.0 + lam[active] * t[active]) - s2 / (1.0 + lam[active] * s2)
    upsilon = s2 - (1.0 - mu) * t[~active]
    return resid, upsilon


# --------------------------------------------------------------------------
# Strategy evaluation


class _Link:
    """Everything needed to evaluate the single-BS ECF schemes at one power split."""

    def __init__(self, config: SystemConfig, split: PowerSplit, mc: McConfig):
        if config.n_bs != 1:
            raise ValueError("single-BS evaluation needs exactly one BS")
        self.config = config
        self.split = split
        self.mc = mc
        self.stats = derive_stats(config, split, mode=EstimationMode.ECF)
        self.gram = CompressedGram(config, self.stats, mc)
        self.frac = config.data_fraction
        self.nt = config.nt
        self.nr = config.nr_per_bs[0]
        self.floor = csi_rate_floor(self.stats, config)
        self.eps = float(self.stats.err_aggregate[0])

    def csi_noise(self, c_pilot: float) -> float:
        return min(csi_noise_from_rate(self.stats, c_pilot, self.config), self.stats.min_est_var(0))

    def spe(self, csi_noise: float) -> float:
        return effective_noise(self.split.p_data, self.nt, csi_noise, self.eps).sigma_pe_sq

    def signal_eigs(self, csi_noise: float) -> np.ndarray:
        return self.split.p_data / self.nt * self.gram.eigs(csi_noise)

    def rate_samples(self, sig: np.ndarray, total_noise: float) -> np.ndarray:
        if math.isinf(total_noise):
            return np.zeros(sig.shape[0])
        scale = np.full(sig.shape[0], 1.0 / total_noise)
        return self.frac * kernels.row_log2_1p(np.ascontiguousarray(sig), scale)

    def mean_rate(self, sig: np.ndarray, total_noise: float) -> float:
        if math.isinf(total_noise):
            return 0.0
        scale = np.full(sig.shape[0], 1.0 / total_noise)
        return self.frac * kernels.sum_log2_1p(np.ascontiguousarray(sig), scale) / sig.shape[0]


def _degenerate(config: SystemConfig, split: PowerSplit) -> bool:
    return config.data_len == 0 or config.train_len == 0 or split.p_data <= 0 or split.p_pilot <= 0


def _report(strategy, link: _Link, samples, c_pilot, csi_noise, noise: DataNoise, **extra) -> RateReport:
    est = summarize(samples)
    c = link.config.backhaul[0]
    return RateReport(
        strategy,
        est.mean,
        est.se,
        (est.mean,),
        (BackhaulSplit(c_pilot, max(c - c_pilot, 0.0)),),
        CompressionParams((csi_noise,), (noise,)),
        link.split,
        link.mc.trials,
        link.mc.seed,
        extra=dict(extra),
        samples=samples,
    )


def _pilot_search(link: _Link, c: float, spec: SearchSpec | None) -> SearchSpec:
    spec = spec or DEFAULT_SEARCH
    return SearchSpec(link.floor, c, spec.grid_points, spec.refine_iters, spec.tol * max(c, 1.0))


def _separate_noise(link: _Link, c_data: float) -> float:
    eigs = received_cov_eigs(link.config, link.split.p_data)
    return data_noise_for_budget(eigs, c_data, link.frac)


def ecf_separate_rate(
    config: SystemConfig,
    split: PowerSplit,
    mc: McConfig,
    backhaul: BackhaulSplit | None = None,
    search: SearchSpec | None = None,
) -> RateReport:
    """Separate compression of CSI and data.

    With ``backhaul`` the given split is evaluated; otherwise the CSI rate is
    line-searched over its feasible range.
    """
    name = "ecf_sep"
    c = config.backhaul[0]
    if _degenerate(config, split) or c <= 0:
        return RateReport.zero(name, config, mc, split)
    link = _Link(config, split, mc)
    eigs = received_cov_eigs(config, split.p_data)

    def parts(c_pilot):
        csi = link.csi_noise(c_pilot)
        noise = data_noise_for_budget(eigs, c - c_pilot, link.frac)
        return csi, noise, link.signal_eigs(csi), link.spe(csi) + noise

    if backhaul is not None:
        if abs(backhaul.total - c) > 1e-9:
            raise ValueError("backhaul split does not add up to the capacity")
        if backhaul.c_pilot < link.floor - 1e-12:
            return RateReport.zero(name, config, mc, split, infeasible=True)
        csi, noise, sig, total = parts(backhaul.c_pilot)
        return _report(name, link, link.rate_samples(sig, total), backhaul.c_pilot, csi, ScalarNoise(noise))
    if link.floor >= c:
        return RateReport.zero(name, config, mc, split, infeasible=True)

    def objective(c_pilot):
        _, _, sig, total = parts(c_pilot)
        return link.mean_rate(sig, total)

    best = line_search(objective, _pilot_search(link, c, search))
    csi, noise, sig, total = parts(best.x)
    return _report(name, link, link.rate_samples(sig, total), best.x, csi, ScalarNoise(noise))


def ecf_joint_backhaul(config: SystemConfig, split: PowerSplit, csi_noise: float, data_noise: float, mc: McConfig) -> tuple[float, Estimate]:
    """CSI rate and Monte Carlo data rate consumed by joint compression."""
    stats = derive_stats(config, split)
    c_pilot = csi_rate_from_noise(stats, csi_noise, config)
    if math.isinf(data_noise):
        return c_pilot, Estimate(0.0, 0.0, mc.trials)
    gram = CompressedGram(config, stats, mc)
    spe = effective_noise(split.p_data, config.nt, csi_noise, float(stats.err_aggregate[0])).sigma_pe_sq
    t = split.p_data / config.nt * gram.eigs(csi_noise) + spe
    scale = np.full(t.shape[0], 1.0 / data_noise)
    per = config.data_fraction * kernels.row_log2_1p(t, scale)
    return c_pilot, summarize(per)


def ecf_joint_rate(
    config: SystemConfig,
    split: PowerSplit,
    mc: McConfig,
    backhaul: BackhaulSplit | None = None,
    search: SearchSpec | None = None,
) -> RateReport:
    """Joint compression with a scalar data-noise variance.

    For each CSI rate the data noise is solved so the Monte Carlo data rate
    exactly fills the remaining backhaul.
    """
    name = "ecf_joint"
    c = config.backhaul[0]
    if _degenerate(config, split) or c <= 0:
        return RateReport.zero(name, config, mc, split)
    link = _Link(config, split, mc)

    def parts(c_pilot):
        csi = link.csi_noise(c_pilot)
        spe = link.spe(csi)
        sig = link.signal_eigs(csi)
        noise = solve_joint_noise(sig + spe, (c - c_pilot) / link.frac)
        return csi, noise, sig, spe + noise

    if backhaul is not None:
        if abs(backhaul.total - c) > 1e-9:
            raise ValueError("backhaul split does not add up to the capacity")
        if backhaul.c_pilot < link.floor - 1e-12:
            return RateReport.zero(name, config, mc, split, infeasible=True)
        csi, noise, sig, total = parts(backhaul.c_pilot)
        return _report(name, link, link.rate_samples(sig, total), backhaul.c_pilot, csi, ScalarNoise(noise))
    if link.floor >= c:
        return RateReport.zero(name, config, mc, split, infeasible=True)

    def objective(c_pilot):
        _, _, sig, total = parts(c_pilot)
        return link.mean_rate(sig, total)

    best = line_search(objective, _pilot_search(link, c, search))
    csi, noise, sig, total = parts(best.x)
    return _report(name, link, link.rate_samples(sig, total), best.x, csi, ScalarNoise(noise))


def ecf_joint_adaptive_rate(
    config: SystemConfig,
    split: PowerSplit,
    mc: McConfig,
    backhaul: BackhaulSplit | None = None,
    search: SearchSpec | None = None,
) -> RateReport:
    """Joint compression with per-block water-filled data noise."""
    name = "ecf_jac"
    c = config.backhaul[0]
    if _degenerate(config, split) or c <= 0:
        return RateReport.zero(name, config, mc, split)
    link = _Link(config, split, mc)
    n = mc.trials

    def parts(c_pilot):
        csi = link.csi_noise(c_pilot)
        spe = np.full(n, link.spe(csi))
        levels = WaterLevels(link.signal_eigs(csi) + spe[:, None], spe)
        x = levels.level((c - c_pilot) / link.frac)
        return csi, x, levels

    def gain(levels, x, rows=False):
        per = link.frac * levels.rows(x)[1]
        return per if rows else float(per.mean())

    if backhaul is not None:
        if abs(backhaul.total - c) > 1e-9:
            raise ValueError("backhaul split does not add up to the capacity")
        if backhaul.c_pilot < link.floor - 1e-12:
            return RateReport.zero(name, config, mc, split, infeasible=True)
        c_pilot = backhaul.c_pilot
    else:
        if link.floor >= c:
            return RateReport.zero(name, config, mc, split, infeasible=True)

        def objective(cp):
            _, x, levels = parts(cp)
            return gain(levels, x)

        c_pilot = line_search(objective, _pilot_search(link, c, search)).x
    csi, x, levels = parts(c_pilot)
    return _report(name, link, gain(levels, x, rows=True), c_pilot, csi, AdaptiveNoise(1.0 / (1.0 + x)))


# --------------------------------------------------------------------------
# Compress-forward-estimate


def _cfe_noises(config: SystemConfig, split: PowerSplit, fraction: float) -> tuple[np.ndarray, np.ndarray]:
    t = config.coherence_len
    csi, data = [], []
    for j, c in enumerate(config.backhaul):
        cp, cd = fraction * c, (1.0 - fraction) * c
        csi.append(data_noise_for_budget(received_cov_eigs(config, split.p_pilot, j), cp, config.train_len / t))
        data.append(data_noise_for_budget(received_cov_eigs(config, split.p_data, j), cd, config.data_fraction))
    return np.array(csi), np.array(data)


def _cfe_samples(config: SystemConfig, split: PowerSplit, mc: McConfig, fraction: float):
    csi, data = _cfe_noises(config, split, fraction)
    if np.all(np.isinf(csi)) or np.all(np.isinf(data)):
        return None, csi, data
    finite_csi = np.where(np.isinf(csi), 0.0, csi)
    stats = derive_stats(config, split, finite_csi, EstimationMode.CFE)
    nt = config.nt
    blocks, active = [], []
    for j in range(config.n_bs):
        # a BS with no usable pilots or data contributes nothing
        if np.isinf(csi[j]) or np.isinf(data[j]):
            continue
        gram = CompressedGram(config, stats, mc, j)
        floor = 1.0 + data[j] + split.p_data / nt * float(stats.err_aggregate[j])
        active.append((gram, floor))
        blocks.append(gram.matrices(0.0) / math.sqrt(floor))
    if not blocks:
        return None, csi, data
    if len(active) == 1:
        gram, floor = active[0]
        eig = split.p_data / nt * gram.eigs(0.0) / floor
    else:
        eig = split.p_data / nt * gram_eigs(np.concatenate(blocks, axis=1))
    ones = np.ones(eig.shape[0])
    return config.data_fraction * kernels.row_log2_1p(np.ascontiguousarray(eig), ones), csi, data


def cfe_rate(
    config: SystemConfig,
    split: PowerSplit,
    mc: McConfig,
    backhaul: BackhaulSplit | None = None,
    search: SearchSpec | None = None,
) -> RateReport:
    """Compress raw pilots and data; the channel is estimated centrally.

    With several BSs each one compresses independently and all BSs give the
    same fraction of their capacity to the pilots.
    """
    name = "cfe"
    if _degenerate(config, split) or max(config.backhaul) <= 0:
        return RateReport.zero(name, config, mc, split)
    if backhaul is not None:
        if config.n_bs != 1:
            raise ValueError("an explicit backhaul split applies to a single BS")
        if abs(backhaul.total - config.backhaul[0]) > 1e-9:
            raise ValueError("backhaul split does not add up to the capacity")
        fraction = backhaul.c_pilot / config.backhaul[0]
    else:

        def objective(f):
            samples = _cfe_samples(config, split, mc, f)[0]
            return 0.0 if samples is None else float(samples.mean())

        spec = search or DEFAULT_SEARCH
        fraction = line_search(objective, SearchSpec(0.0, 1.0, spec.grid_points, spec.refine_iters, spec.tol)).x
    samples, csi, data = _cfe_samples(config, split, mc, fraction)
    if samples is None:
        return RateReport.zero(name, config, mc, split)
    est = summarize(samples)
    splits = tuple(BackhaulSplit(fraction * c, (1.0 - fraction) * c) for c in config.backhaul)
    per_bs = (est.mean,) if config.n_bs == 1 else (math.nan,) * config.n_bs
    return RateReport(
        name,
        est.mean,
        est.se,
        per_bs,
        splits,
        CompressionParams(tuple(csi), tuple(ScalarNoise(float(d)) for d in data)),
        split,
        mc.trials,
        mc.seed,
        extra={"pilot_fraction": fraction},
        samples=samples,
    )


# --------------------------------------------------------------------------
# Power allocation


def best_power_split(
    evaluate: Callable[[PowerSplit], RateReport],
    config: SystemConfig,
    search: SearchSpec | None = None,
) -> RateReport:
    """Line-search the share of block energy spent on pilots.

    ``evaluate`` maps a :class:`PowerSplit` to a report; the best report is
    returned. Without training or data symbols the uniform split is used.
    """
    if config.train_len == 0 or config.data_len == 0:
        return evaluate(PowerSplit.uniform(config))
    cache: dict[float, RateReport] = {}

    def objective(f):
        rep = evaluate(PowerSplit.from_fraction(config, f))
        cache[f] = rep
        return rep.sum_rate

    spec = search or SearchSpec(1e-3, 1.0 - 1e-3, grid_points=16, refine_iters=30, tol=1e-4)
    best = line_search(objective, spec)
    return cache[best.x]
