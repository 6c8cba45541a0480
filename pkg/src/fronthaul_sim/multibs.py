"""Several BSs forwarding over separate backhaul links with Wyner-Ziv coding.

BSs are decoded one after another. Each BS compresses its data signal using
the already-decoded BSs' signals as decoder side information. The side
information enters through the conditional covariance of the transmitted
vector, computed in information form::

    R = ((N_t/P_d) I + sum_k Hhat_k^H N_k^{-1} Hhat_k)^{-1}

where ``N_k`` is the total noise covariance in BS ``k``'s reconstruction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import permutations
from typing import Literal

import numpy as np

from . import kernels
from .model import EstimationMode, PowerSplit, SystemConfig, derive_stats
from .montecarlo import Estimate, McConfig, paired_estimate, summarize
from .optimizer import SearchSpec, SolverError, line_search
from .ratecore import (
    AdaptiveNoise,
    BackhaulSplit,
    CompressedGram,
    CompressionParams,
    DataNoise,
    RateReport,
    ScalarNoise,
    WaterLevels,
    csi_noise_from_rate,
    csi_rate_floor,
    data_noise_for_budget,
    data_rate_for_noise,
    gram_eigs,
    solve_joint_noise,
)

__all__ = [
    "GreedyResult",
    "SCHEMES",
    "exhaustive_orders",
    "SideInfoState",
    "greedy_order",
    "multibs_joint_backhaul",
    "multibs_waterfill",
    "per_bs_rate",
    "sequential_rate",
    "side_info_cov",
    "wz_data_noise",
    "wz_data_noise_rayleigh",
    "wz_data_rate",
]

Scheme = Literal["separate", "joint", "adaptive"]
SCHEMES = ("separate", "joint", "adaptive")
_STRATEGY_NAMES = {"separate": "ecf_sep", "joint": "ecf_joint", "adaptive": "ecf_jac"}
COND_LIMIT = 1e12


# --------------------------------------------------------------------------
# Side information


@dataclass(frozen=True)
class SideInfoState:
    """Conditional covariance of the transmitted vector given decoded BSs.

    ``info`` and ``cond_cov`` are per-sample ``(n, N_t, N_t)`` arrays;
    ``params`` records each decoded BS as ``(bs, csi_noise, data_noise)``.
    """

    p_data: float
    nt: int
    order: tuple[int, ...]
    info: np.ndarray = field(repr=False)
    cond_cov: np.ndarray = field(repr=False)
    params: tuple[tuple[int, float, DataNoise], ...] = ()

    @classmethod
    def empty(cls, n: int, nt: int, p_data: float) -> "SideInfoState":
        eye = np.broadcast_to(np.eye(nt), (n, nt, nt))
        return cls(p_data, nt, (), eye * (nt / p_data), eye * (p_data / nt))

    @property
    def is_empty(self) -> bool:
        return not self.order

    @property
    def trace(self) -> np.ndarray:
        if self.is_empty:
            return np.full(self.cond_cov.shape[0], self.p_data)
        return np.einsum("ijj->i", self.cond_cov).real

    def sigma_pe(self, csi_noise: float, err_aggregate: float) -> np.ndarray:
        """Per-sample effective noise floor of the next BS."""
        if self.is_empty:
            value = 1.0 + self.p_data * (csi_noise + err_aggregate / self.nt)
            return np.full(self.cond_cov.shape[0], value)
        return self.trace * (csi_noise + err_aggregate / self.nt) + 1.0

    def mean_cov(self) -> np.ndarray:
        if self.is_empty:
            return np.eye(self.nt) * (self.p_data / self.nt)
        return self.cond_cov.mean(axis=0)


def _herm(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def _check_conditioning(info: np.ndarray, nt: int, p_data: float) -> None:
    # info >= (nt/p) I, so trace * p / nt bounds the condition number from above
    bound = np.einsum("ijj->i", info).real * p_data / nt
    if np.max(bound) <= COND_LIMIT:
        return
    suspect = info[bound > COND_LIMIT]
    cond = np.linalg.cond(suspect)
    if np.max(cond) > COND_LIMIT:
        warnings.warn(f"side-information matrix is ill-conditioned (cond {np.max(cond):.3g})", RuntimeWarning, stacklevel=3)


def side_info_cov(state: SideInfoState, hhat: np.ndarray, noise_inv: np.ndarray | float, bs: int, csi_noise: float, data_noise: DataNoise) -> SideInfoState:
    """Add one decoded BS to the side information.

    ``noise_inv`` is the inverse noise covariance of that BS's reconstruction,
    either a scalar or a per-sample ``(n, N_r, N_r)`` array; a zero entry means
    the BS carries no information.
    """
    hh = np.conj(np.swapaxes(hhat, 1, 2))
    if np.isscalar(noise_inv):
        contrib = float(noise_inv) * (hh @ hhat)
    else:
        contrib = hh @ noise_inv @ hhat
    info = _herm(state.info + contrib)
    _check_conditioning(info, state.nt, state.p_data)
    cond_cov = _herm(np.linalg.inv(info))
    return SideInfoState(state.p_data, state.nt, state.order + (bs,), info, cond_cov, state.params + ((bs, csi_noise, data_noise),))


# --------------------------------------------------------------------------
# Per-BS quantities given side information


class _Scene:
    """Fixed draws and statistics shared by every BS evaluation at one power split."""

    def __init__(self, config: SystemConfig, split: PowerSplit, mc: McConfig):
        self.config = config
        self.split = split
        self.mc = mc
        self.stats = derive_stats(config, split, mode=EstimationMode.ECF)
        self.grams = [CompressedGram(config, self.stats, mc, j) for j in range(config.n_bs)]
        self.frac = config.data_fraction
        self.nt = config.nt
        self.pd = split.p_data

    def eps(self, j: int) -> float:
        return float(self.stats.err_aggregate[j])

    def floor(self, j: int) -> float:
        return csi_rate_floor(self.stats, self.config, j)

    def csi_noise(self, j: int, c_pilot: float) -> float:
        return min(csi_noise_from_rate(self.stats, c_pilot, self.config, j), self.stats.min_est_var(j))

    def empty_state(self) -> SideInfoState:
        return SideInfoState.empty(self.mc.trials, self.nt, self.pd)

    def recon_noise(self, j: int, csi_noise: float) -> float:
        """Noise power in BS ``j``'s reconstruction before data quantisation."""
        return 1.0 + self.pd * (csi_noise + self.eps(j) / self.nt)


class _Candidate:
    """BS ``j`` evaluated against a fixed side-information state."""

    def __init__(self, scene: _Scene, state: SideInfoState, j: int):
        self.scene = scene
        self.state = state
        self.j = j
        self.gram = scene.grams[j]
        self._base = None

    def signal(self, csi_noise: float) -> np.ndarray:
        """Eigenvalues of ``Hhat_j R Hhat_j^H`` per sample."""
        if self.state.is_empty:
            return self.scene.pd / self.scene.nt * self.gram.eigs(csi_noise)
        if self.gram.scalable:
            if self._base is None:
                w = self.gram.draws
                self._base = np.maximum(_sandwich_eigs(w, self.state.cond_cov), 0.0)
            return self._base * max(float(self.gram.col_var[0]) - csi_noise, 0.0)
        return np.maximum(_sandwich_eigs(self.gram.matrices(csi_noise), self.state.cond_cov), 0.0)

    def sigma_pe(self, csi_noise: float) -> np.ndarray:
        return self.state.sigma_pe(csi_noise, self.scene.eps(self.j))

    def separate_cov_eigs(self, csi_noise: float) -> np.ndarray:
        """Spectrum of the averaged conditional covariance of BS ``j``'s signal.

        Given the side-information covariance, the average over ``Hhat_j`` is
        analytic: ``E[Hhat R Hhat^H] = M R M^H + tr(D R) I`` with ``D`` the
        column variances of ``Hhat_j``. The remaining average over the
        decoded BSs' estimates is the sample mean of ``R``.
        """
        rbar = self.state.mean_cov()
        mean = self.gram.mean
        d = np.maximum(self.gram.col_var - csi_noise, 0.0)
        tr_dr = float(np.real(np.diag(rbar)) @ d)
        tr_r = float(np.real(np.trace(rbar)))
        nr = mean.shape[0]
        load = tr_dr + (csi_noise + self.scene.eps(self.j) / self.scene.nt) * tr_r + 1.0
        cov = mean @ rbar @ mean.conj().T + load * np.eye(nr)
        return np.maximum(np.linalg.eigvalsh(_herm(cov)), 0.0)


def _sandwich_eigs(h: np.ndarray, r: np.ndarray) -> np.ndarray:
    g = _herm(h @ r @ np.conj(np.swapaxes(h, 1, 2)))
    m = g.shape[-1]
    if m == 1:
        return g[:, :, 0].real.copy()
    if m == 2:
        return kernels.herm2_eigvalsh(np.ascontiguousarray(g))
    return np.linalg.eigvalsh(g)


def _rate_rows(frac: float, signal: np.ndarray, total_noise: np.ndarray) -> np.ndarray:
    return frac * kernels.row_log2_1p(np.ascontiguousarray(signal), np.ascontiguousarray(1.0 / total_noise))


def per_bs_rate(signal: np.ndarray, sigma_pe: np.ndarray, data_noise: float, fraction: float) -> Estimate:
    """Monte Carlo rate of one BS given its conditioned signal spectrum and a scalar data noise."""
    if math.isinf(data_noise):
        return Estimate(0.0, 0.0, signal.shape[0])
    return summarize(_rate_rows(fraction, signal, sigma_pe + data_noise))


def wz_data_rate(cov_eigs: np.ndarray, data_noise: float, fraction: float) -> float:
    """Backhaul rate of separate Wyner-Ziv data compression at a given noise."""
    return data_rate_for_noise(cov_eigs, data_noise, fraction)


def wz_data_noise(cov_eigs: np.ndarray, c_data: float, fraction: float) -> float:
    """Data noise at which separate Wyner-Ziv compression fills ``c_data``."""
    return data_noise_for_budget(cov_eigs, c_data, fraction)


def wz_data_noise_rayleigh(config: SystemConfig, p_data: float, c_data: float, bs: int, decoded: list[tuple[int, float, float, float]]) -> float:
    """Closed-form Wyner-Ziv data noise for Rayleigh fading with unit gains.

    ``decoded`` lists ``(k, csi_noise_k, err_aggregate_k, data_noise_k)`` for
    the BSs already in the side information. The expected conditional power
    is approximated by substituting mean channel gains into the conditional
    covariance.
    """
    if config.rician_k != 0 or np.any(config.gains != 1.0):
        raise ValueError("the closed form assumes Rayleigh fading with unit gains")
    if c_data <= 0:
        return math.inf
    nt = config.nt
    reduction = sum(
        config.nr_per_bs[k] * (1.0 - csi - eps / nt) / (1.0 + p_data + noise)
        for k, csi, eps, noise in decoded
    )
    power = p_data - p_data**2 / nt * reduction
    nr, td = config.nr_per_bs[bs], config.data_len
    return (power + 1.0) / (2.0 ** (config.coherence_len * c_data / (nr * td)) - 1.0)


def multibs_joint_backhaul(signal: np.ndarray, sigma_pe: np.ndarray, data_noise: float, fraction: float) -> Estimate:
    """Data backhaul of joint compression with side information."""
    if math.isinf(data_noise):
        return Estimate(0.0, 0.0, signal.shape[0])
    t = signal + sigma_pe[:, None]
    return summarize(fraction * kernels.row_log2_1p(np.ascontiguousarray(t), np.full(t.shape[0], 1.0 / data_noise)))


def multibs_waterfill(hhat: np.ndarray, cond_cov: np.ndarray, sigma_pe_sq: float, mu: float):
    """Per-sample water-filling on ``Hhat R Hhat^H + sigma_pe^2 I``.

    Returns ``(basis, signal_eigs, inv_noise_eigs)`` for one sample.
    """
    if not 0 < mu < 1:
        raise ValueError("mu must lie in (0, 1)")
    cov = _herm(hhat @ cond_cov @ hhat.conj().T) + sigma_pe_sq * np.eye(hhat.shape[0])
    t, u = np.linalg.eigh(cov)
    t = np.maximum(t, sigma_pe_sq)
    kappa = 1.0 / mu
    lam = np.maximum(kappa * (1.0 / sigma_pe_sq - 1.0 / t) - 1.0 / sigma_pe_sq, 0.0)
    return u, t, lam


# --------------------------------------------------------------------------
# Per-BS optimisation


@dataclass
class _Choice:
    bs: int
    c_pilot: float
    csi_noise: float
    data_noise: DataNoise
    rows: np.ndarray
    noise_inv: np.ndarray | float

    @property
    def rate(self) -> float:
        return float(self.rows.mean())


def _evaluate(cand: _Candidate, scheme: Scheme, c_pilot: float, final: bool) -> _Choice | float:
    scene, j = cand.scene, cand.j
    c = scene.config.backhaul[j]
    csi = scene.csi_noise(j, c_pilot)
    c_data = max(c - c_pilot, 0.0)
    spe = cand.sigma_pe(csi)
    sig = cand.signal(csi)
    frac = scene.frac
    if scheme == "adaptive":
        levels = WaterLevels(sig + spe[:, None], spe)
        x = levels.level(c_data / frac)
        if not final:
            return float(frac * levels.rows(x)[1].mean())
        rows = frac * levels.rows(x)[1]
        noise_inv = _adaptive_noise_inv(cand, csi, spe, x) if x > 0 else 0.0
        return _Choice(j, c_pilot, csi, AdaptiveNoise(1.0 / (1.0 + x)), rows, noise_inv)
    if scheme == "joint":
        noise = solve_joint_noise(sig + spe[:, None], c_data / frac)
    else:
        noise = wz_data_noise(cand.separate_cov_eigs(csi), c_data, frac)
    if math.isinf(noise):
        rows = np.zeros(sig.shape[0])
    else:
        rows = _rate_rows(frac, sig, spe + noise)
    if not final:
        return float(rows.mean())
    inv = 0.0 if math.isinf(noise) else 1.0 / (scene.recon_noise(j, csi) + noise)
    return _Choice(j, c_pilot, csi, ScalarNoise(noise), rows, inv)


def _adaptive_noise_inv(cand: _Candidate, csi: float, spe: np.ndarray, x: float) -> np.ndarray:
    """``U diag(lambda / (1 + c lambda)) U^H`` for the water-filled noise of BS ``j``."""
    scene = cand.scene
    h = cand.gram.matrices(csi)
    r = cand.state.cond_cov
    cov = _herm(h @ r @ np.conj(np.swapaxes(h, 1, 2)))
    s, u = np.linalg.eigh(cov)
    t = np.maximum(s, 0.0) + spe[:, None]
    uu = np.maximum(t / spe[:, None] - 1.0, 0.0)
    lam = np.where(uu * x > 1.0, (x * uu - 1.0) / t, 0.0)
    c0 = scene.recon_noise(cand.j, csi)
    w = lam / (1.0 + c0 * lam)
    return (u * w[:, None, :]) @ np.conj(np.swapaxes(u, 1, 2))


def _optimise_bs(cand: _Candidate, scheme: Scheme, search: SearchSpec | None) -> _Choice:
    scene, j = cand.scene, cand.j
    c = scene.config.backhaul[j]
    floor = scene.floor(j)
    n = scene.mc.trials
    if c <= 0 or floor >= c or scene.frac <= 0:
        csi = scene.stats.min_est_var(j)
        dn = AdaptiveNoise(1.0) if scheme == "adaptive" else ScalarNoise(math.inf)
        return _Choice(j, min(floor, c), csi, dn, np.zeros(n), 0.0)
    spec = search or SearchSpec(0.0, 1.0)
    spec = SearchSpec(floor, c, spec.grid_points, spec.refine_iters, spec.tol * max(c, 1.0))
    best = line_search(lambda cp: _evaluate(cand, scheme, cp, False), spec)
    return _evaluate(cand, scheme, best.x, True)


# --------------------------------------------------------------------------
# Ordering


@dataclass
class GreedyResult:
    permutation: tuple[int, ...]
    params: CompressionParams
    splits: tuple[BackhaulSplit, ...]
    per_bs_rates: tuple[float, ...]
    sum_rate: float
    se: float
    samples: np.ndarray = field(repr=False)

    def report(self, scheme: Scheme, split: PowerSplit, mc: McConfig) -> RateReport:
        return RateReport(
            _STRATEGY_NAMES[scheme],
            self.sum_rate,
            self.se,
            self.per_bs_rates,
            self.splits,
            self.params,
            split,
            mc.trials,
            mc.seed,
            permutation=self.permutation,
            samples=self.samples,
        )


def _finish(scene: _Scene, choices: list[_Choice]) -> GreedyResult:
    by_bs = sorted(choices, key=lambda ch: ch.bs)
    total = np.sum([ch.rows for ch in choices], axis=0)
    est = summarize(total)
    config = scene.config
    splits = tuple(BackhaulSplit(ch.c_pilot, max(config.backhaul[ch.bs] - ch.c_pilot, 0.0)) for ch in by_bs)
    params = CompressionParams(tuple(ch.csi_noise for ch in by_bs), tuple(ch.data_noise for ch in by_bs))
    return GreedyResult(tuple(ch.bs for ch in choices), params, splits, tuple(ch.rate for ch in by_bs), est.mean, est.se, total)


def _freeze(scene: _Scene, state: SideInfoState, ch: _Choice) -> SideInfoState:
    h = scene.grams[ch.bs].matrices(ch.csi_noise)
    return side_info_cov(state, h, ch.noise_inv, ch.bs, ch.csi_noise, ch.data_noise)


def sequential_rate(config: SystemConfig, split: PowerSplit, mc: McConfig, scheme: Scheme, order: tuple[int, ...], search: SearchSpec | None = None) -> GreedyResult:
    """Decode BSs in a fixed ``order``, optimising each one given its predecessors."""
    if sorted(order) != list(range(config.n_bs)):
        raise ValueError("order must be a permutation of the BS indices")
    scene = _Scene(config, split, mc)
    state = scene.empty_state()
    choices = []
    for j in order:
        ch = _optimise_bs(_Candidate(scene, state, j), scheme, search)
        choices.append(ch)
        state = _freeze(scene, state, ch)
    return _finish(scene, choices)


def greedy_order(
    config: SystemConfig,
    split: PowerSplit,
    mc: McConfig,
    scheme: Scheme,
    search: SearchSpec | None = None,
    tie_se: float = 3.0,
) -> GreedyResult:
    """Greedy decoding order: at each step take the BS with the largest rate.

    Candidates within ``tie_se`` paired standard errors of the best one are
    treated as tied and the lowest index wins.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if config.data_len == 0 or split.p_data <= 0:
        n = config.n_bs
        return GreedyResult(
            tuple(range(n)),
            CompressionParams((math.nan,) * n, (ScalarNoise(math.inf),) * n),
            tuple(BackhaulSplit(0.0, c) for c in config.backhaul),
            (0.0,) * n,
            0.0,
            0.0,
            np.zeros(mc.trials),
        )
    scene = _Scene(config, split, mc)
    state = scene.empty_state()
    remaining = list(range(config.n_bs))
    choices: list[_Choice] = []
    while remaining:
        options = []
        for j in remaining:
            try:
                options.append(_optimise_bs(_Candidate(scene, state, j), scheme, search))
            except (ArithmeticError, ValueError, RuntimeError) as exc:
                raise SolverError(f"greedy step {len(choices) + 1}, BS {j}: {exc}") from exc
        best = max(options, key=lambda ch: ch.rate)
        tied = [ch for ch in options if ch is best or best.rate - ch.rate <= tie_se * paired_estimate(best.rows, ch.rows).se]
        pick = min(tied, key=lambda ch: ch.bs)
        choices.append(pick)
        remaining.remove(pick.bs)
        state = _freeze(scene, state, pick)
    return _finish(scene, choices)


def exhaustive_orders(config: SystemConfig, split: PowerSplit, mc: McConfig, scheme: Scheme, search: SearchSpec | None = None) -> dict[tuple[int, ...], GreedyResult]:
    """Every decoding order (small ``n_bs`` only)."""
    if config.n_bs > 4:
        raise ValueError("exhaustive search is limited to four BSs")
    return {p: sequential_rate(config, split, mc, scheme, p, search) for p in permutations(range(config.n_bs))}
