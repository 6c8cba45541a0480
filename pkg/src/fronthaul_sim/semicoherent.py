"""Single-user schemes that send no CSI over the backhaul.

Semi-coherent processing equalises locally with the estimated channel,
compresses the equalised signal, and decodes with a weighted nearest-neighbour
metric. The non-coherent baseline forwards compressed raw samples and decodes
without any CSI; its block-fading mutual information is estimated by Monte
Carlo for an on-off isotropic input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Union

import numpy as np
from scipy.special import gammainc, gammaln, hyp1f1

from .model import EstimationMode, PowerSplit, SystemConfig, derive_stats
from .montecarlo import Estimate, McConfig, cached_complex_normal, summarize, uniform
from .optimizer import SearchSpec, line_search
from .ratecore import BackhaulSplit, CompressionParams, RateReport, ScalarNoise

__all__ = [
    "ConstantWeights",
    "EqualizerState",
    "GAMMA_RANGE",
    "SelectiveWeights",
    "SemiCoherentParams",
    "cutset_bound",
    "equalizer",
    "log_hyp1f1_1",
    "noise_traces",
    "noncoherent_mi",
    "noncoherent_rate",
    "rate_constant_weights",
    "rate_selective_weights",
    "semi_data_noise",
    "weight_objective",
]

GAMMA_RANGE = (1e-4, 1e6)
OMEGA_LEVELS = 21
_LN2 = math.log(2.0)


@dataclass(frozen=True)
class ConstantWeights:
    gamma: float


@dataclass(frozen=True)
class SelectiveWeights:
    gamma_bad: float
    gamma_good: float
    omega: float


@dataclass(frozen=True)
class SemiCoherentParams:
    weights: Union[ConstantWeights, SelectiveWeights]
    data_noise: float


@dataclass(frozen=True)
class EqualizerState:
    g: np.ndarray
    noise_cov: np.ndarray


# --------------------------------------------------------------------------
# Equalisation


def equalizer(h_est: np.ndarray, err_var: float, p_data: float, nt: int, data_noise: float) -> EqualizerState:
    """MMSE equaliser and the covariance of the residual after compression.

    ``h_est`` may be a single ``(nr, nt)`` matrix or a batch. The residual
    covariance is ``(P/N_t)(GH - I)(GH - I)^H + (P err_var + 1) G G^H +
    data_noise I``; the middle weight counts the interference ``E X`` of all
    ``N_t`` streams.
    """
    if p_data <= 0:
        raise ValueError("data power must be positive")
    hh = np.conj(np.swapaxes(h_est, -1, -2))
    eye = np.eye(nt)
    g = np.linalg.solve(hh @ h_est + (err_var + nt / p_data) * eye, hh)
    resid = g @ h_est - eye
    cov = p_data / nt * resid @ np.conj(np.swapaxes(resid, -1, -2))
    cov = cov + (p_data * err_var + 1.0) * g @ np.conj(np.swapaxes(g, -1, -2)) + data_noise * eye
    return EqualizerState(g, 0.5 * (cov + np.conj(np.swapaxes(cov, -1, -2))))


def noise_traces(h_est: np.ndarray, err_var: float, p_data: float, nt: int, data_noise: float) -> np.ndarray:
    """``tr R`` for every estimate in a batch ``(n, nr, nt)``."""
    if h_est.shape[-1] == 1:
        # scalar per receive antenna: G is a row vector
        h = h_est[..., 0]
        power = np.einsum("ij,ij->i", h, h.conj()).real
        reg = err_var + 1.0 / p_data
        gh = power / (power + reg)
        gg = power / (power + reg) ** 2
        return p_data * (gh - 1.0) ** 2 + (p_data * err_var + 1.0) * gg + data_noise
    state = equalizer(h_est, err_var, p_data, nt, data_noise)
    return np.einsum("ijj->i", state.noise_cov).real


def semi_data_noise(config: SystemConfig, p_data: float, selective: bool = False) -> float:
    """Compression noise of the equalised signal; one bit per block is reserved when selective."""
    c = config.backhaul[0]
    bits = config.coherence_len * c - (1.0 if selective else 0.0)
    if bits <= 0:
        return math.inf
    nr, td = config.nr_per_bs[0], config.data_len
    return (p_data + 1.0) / (2.0 ** (bits / (nr * td)) - 1.0)


# --------------------------------------------------------------------------
# Weighted nearest-neighbour metric


def weight_objective(gamma: float | np.ndarray, traces: np.ndarray | float, p_data: float, nt: int) -> np.ndarray:
    """Generalised mutual information (nats) of the weighted metric for given noise traces.

    Averaging this over blocks gives the bracket maximised over the weight.
    """
    q = p_data / nt
    gq = np.asarray(gamma) * q
    return nt * np.log1p(gq) + gq * (nt - np.asarray(gamma) * np.asarray(traces)) / (1.0 + gq)


def _semi_setup(config: SystemConfig, split: PowerSplit, mc: McConfig, selective: bool):
    if config.n_bs != 1 or config.n_ms != 1:
        raise ValueError("semi-coherent processing is implemented for one MS and one BS")
    stats = derive_stats(config, split, mode=EstimationMode.ECF)
    nr, nt = config.nr_per_bs[0], config.nt
    w = cached_complex_normal(mc, "estimate/comp/0", (nr, nt))
    h_est = config.los_mean(0) + w * math.sqrt(stats.est_var[0, 0])
    noise = semi_data_noise(config, split.p_data, selective)
    return h_est, float(stats.err_var[0, 0]), noise


def _gamma_search(objective, search: SearchSpec | None) -> tuple[float, float, bool]:
    base = search or SearchSpec(*GAMMA_RANGE)
    spec = SearchSpec(GAMMA_RANGE[0], GAMMA_RANGE[1], base.grid_points, base.refine_iters, base.tol, log_scale=True)
    best = line_search(objective, spec)
    at_edge = best.x >= GAMMA_RANGE[1] * (1 - 1e-9) or best.x <= GAMMA_RANGE[0] * (1 + 1e-9)
    return best.x, best.value, at_edge


def _semi_report(name, config, split, mc, samples, noise, weights, **extra) -> RateReport:
    if samples.mean() <= 0:
        samples = np.zeros_like(samples)
    est = summarize(samples)
    return RateReport(
        name,
        est.mean,
        est.se,
        (est.mean,),
        (BackhaulSplit(0.0, config.backhaul[0]),),
        CompressionParams((math.nan,), (ScalarNoise(noise),)),
        split,
        mc.trials,
        mc.seed,
        extra={"weights": weights, **extra},
        samples=samples,
    )


def rate_constant_weights(config: SystemConfig, split: PowerSplit, mc: McConfig, search: SearchSpec | None = None) -> RateReport:
    """Semi-coherent rate with one weight for every block."""
    name = "semi_const"
    if config.data_len == 0 or config.train_len == 0 or config.backhaul[0] <= 0 or split.p_data <= 0:
        return RateReport.zero(name, config, mc, split)
    h_est, err, noise = _semi_setup(config, split, mc, selective=False)
    nt, pd = config.nt, split.p_data
    traces = noise_traces(h_est, err, pd, nt, noise)
    mean_tr = float(traces.mean())
    gamma, _, edge = _gamma_search(lambda g: float(weight_objective(g, mean_tr, pd, nt)), search)
    samples = config.data_fraction / _LN2 * weight_objective(gamma, traces, pd, nt)
    return _semi_report(name, config, split, mc, samples, noise, ConstantWeights(gamma), gamma_at_bound=edge)


def rate_selective_weights(config: SystemConfig, split: PowerSplit, mc: McConfig, search: SearchSpec | None = None) -> RateReport:
    """Semi-coherent rate with a one-bit block quality flag choosing between two weights."""
    name = "semi_select"
    if config.coherence_len * config.backhaul[0] <= 1.0:
        raise ValueError("selective weights need C > 1/T for the one-bit flag")
    if config.data_len == 0 or config.train_len == 0 or split.p_data <= 0:
        return RateReport.zero(name, config, mc, split)
    h_est, err, noise = _semi_setup(config, split, mc, selective=True)
    nt, pd = config.nt, split.p_data
    traces = noise_traces(h_est, err, pd, nt, noise)
    norms = np.sqrt(np.einsum("ijk,ijk->i", h_est, h_est.conj()).real)
    n = traces.size
    best = None
    for omega in np.quantile(norms, np.linspace(0.0, 1.0, OMEGA_LEVELS)):
        bad = norms < omega
        gammas, value = [], 0.0
        for mask in (bad, ~bad):
            count = int(mask.sum())
            if count == 0:
                gammas.append(math.nan)
                continue
            m = float(traces[mask].mean())
            g, v, _ = _gamma_search(lambda x: float(weight_objective(x, m, pd, nt)), search)
            gammas.append(g)
            value += count / n * v
        if best is None or value > best[0]:
            best = (value, float(omega), gammas, bad)
    _, omega, (g_bad, g_good), bad = best
    per_block = np.where(bad, np.nan_to_num(g_bad), np.nan_to_num(g_good))
    samples = config.data_fraction / _LN2 * weight_objective(per_block, traces, pd, nt)
    return _semi_report(name, config, split, mc, samples, noise, SelectiveWeights(g_bad, g_good, omega))


# --------------------------------------------------------------------------
# Non-coherent baseline


def log_hyp1f1_1(t: int, x: np.ndarray) -> np.ndarray:
    """``log 1F1(1; t; x)`` for ``x >= 0``, stable for large arguments.

    Uses ``1F1(1; t; x) = Gamma(t) x^(1-t) e^x P(t-1, x)`` with the
    regularised lower incomplete gamma ``P`` once ``x`` is large, and the
    series otherwise.
    """
    x = np.asarray(x, dtype=float)
    if t == 1:
        return x.copy()
    out = np.empty_like(x)
    small = x < t
    out[small] = np.log(hyp1f1(1.0, t, x[small]))
    xs = x[~small]
    out[~small] = gammaln(t) + (1 - t) * np.log(xs) + xs + np.log(gammainc(t - 1, xs))
    return out


def _mixture_log(y2: np.ndarray, t: int, energy: float, p: float) -> np.ndarray:
    """``log p(Y) - log p(Y | x = 0)`` for the on-off isotropic input."""
    a = energy / (1.0 + energy)
    on = math.log(p) - math.log1p(energy) + log_hyp1f1_1(t, a * y2)
    off = math.log1p(-p) if p < 1.0 else -math.inf
    return np.logaddexp(off, on)


def _nc_draws(mc: McConfig, t: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    w = cached_complex_normal(mc, f"noncoherent/{t}", (t + 1,))
    h, z0 = w[:, 0], w[:, 1]
    rest = (np.abs(w[:, 2:]) ** 2).sum(axis=1)
    return h, z0, rest


def _nc_terms(t: int, rho: float, p: float, mc: McConfig) -> np.ndarray:
    """Per-trial information density (nats per block), stratified over on/off."""
    energy = t * rho / p
    a = energy / (1.0 + energy)
    h, z0, rest = _nc_draws(mc, t)
    u2 = np.abs(math.sqrt(energy) * h + z0) ** 2
    on = a * u2 - math.log1p(energy) - _mixture_log(u2 + rest, t, energy, p)
    if p >= 1.0:
        return on
    off = -_mixture_log(np.abs(z0) ** 2 + rest, t, energy, p)
    return p * on + (1.0 - p) * off


def _nc_resampled(t: int, rho: float, p: float, mc: McConfig, inner: int, groups: int) -> tuple[float, float]:
    """Plug-in estimate with ``p(Y)`` averaged over ``inner`` resampled inputs.

    Returns the jackknife bias-corrected value and its standard error, both
    in nats per block.
    """
    energy = t * rho / p
    a = energy / (1.0 + energy)
    n = mc.trials
    w = cached_complex_normal(mc, f"noncoherent/{t}", (t + 1,))
    coin = uniform(mc, f"noncoherent/{t}/switch", (1,))[:, 0] < p
    x_dir = w[:, 1:] / np.linalg.norm(w[:, 1:], axis=1, keepdims=True)
    probe_mc = McConfig(inner, mc.seed)
    probes = cached_complex_normal(probe_mc, f"noncoherent/{t}/probe", (t,))
    probes = probes / np.linalg.norm(probes, axis=1, keepdims=True)
    on_probe = uniform(probe_mc, f"noncoherent/{t}/probe-switch", (1,))[:, 0] < p
    noise = cached_complex_normal(mc, f"noncoherent/{t}/noise", (t,))
    y = np.where(coin[:, None], math.sqrt(energy) * w[:, :1] * x_dir, 0.0) + noise
    # log p(Y | x') + ||Y||^2 for every probe
    proj = np.abs(y @ probes.conj().T) ** 2
    lik = np.where(on_probe[None, :], a * proj - math.log1p(energy), 0.0)
    own_proj = np.abs((y * x_dir.conj()).sum(axis=1)) ** 2
    own = np.where(coin, a * own_proj - math.log1p(energy), 0.0)
    split = np.array_split(np.arange(inner), groups)
    group_sums = np.stack([np.exp(lik[:, g] - own[:, None]).sum(axis=1) for g in split], axis=1)
    full = -np.log(group_sums.sum(axis=1) / inner)
    loo = np.stack([-np.log((group_sums.sum(axis=1) - group_sums[:, k]) / (inner - len(split[k]))) for k in range(groups)], axis=1)
    theta = float(full.mean())
    theta_loo = loo.mean(axis=0)
    corrected = groups * theta - (groups - 1) * float(theta_loo.mean())
    jack_se = math.sqrt((groups - 1) / groups * float(((theta_loo - theta_loo.mean()) ** 2).sum()))
    se = math.hypot(jack_se, float(full.std(ddof=1)) / math.sqrt(n))
    return corrected, se


def noncoherent_mi(
    coherence_len: int,
    rho: float,
    mc: McConfig,
    p: float | None = None,
    inner: Literal["analytic", "resample"] = "analytic",
    inner_samples: int = 10_000,
    jackknife_groups: int = 10,
) -> tuple[Estimate, float]:
    """Block-fading mutual information, bits per channel use, and the on-probability used.

    The input is silent with probability ``1 - p`` and otherwise an isotropic
    vector of energy ``T rho / p``; ``p`` is line-searched when not given.
    ``inner="analytic"`` evaluates the average over input directions in
    closed form, while ``"resample"`` averages over ``inner_samples`` probe
    inputs and applies a jackknife bias correction.
    """
    t = int(coherence_len)
    if rho <= 0:
        return Estimate(0.0, 0.0, mc.trials), 1.0
    if p is None:
        spec = SearchSpec(1e-3, 1.0, grid_points=24, refine_iters=30, tol=1e-3, log_scale=True)
        p = line_search(lambda q: float(_nc_terms(t, rho, q, mc).mean()), spec).x
    scale = 1.0 / (t * _LN2)
    if inner == "resample":
        value, se = _nc_resampled(t, rho, p, mc, inner_samples, jackknife_groups)
        return Estimate(value * scale, se * scale, mc.trials), p
    est = summarize(_nc_terms(t, rho, p, mc) * scale)
    return est, p


def _check_scalar(config: SystemConfig) -> None:
    if config.n_bs != 1 or config.n_ms != 1 or config.nt != 1 or config.nr != 1:
        raise ValueError("the non-coherent baseline is implemented for one single-antenna MS and BS")


def noncoherent_rate(config: SystemConfig, mc: McConfig, capacity: float | None = None) -> RateReport:
    """Non-coherent rate after compressing the raw received samples.

    No pilots are sent, so all power goes to data and training length is ignored.
    """
    _check_scalar(config)
    c = config.backhaul[0] if capacity is None else capacity
    split = PowerSplit(0.0, config.power)
    if c <= 0 or config.power <= 0:
        return RateReport.zero("noncoherent", config, mc, split)
    nr = config.nr
    noise = 0.0 if math.isinf(c) else (1.0 + config.power) / (2.0 ** (c / nr) - 1.0)
    rho = config.power / (1.0 + noise)
    est, p = noncoherent_mi(config.coherence_len, rho, mc)
    samples = _nc_terms(config.coherence_len, rho, p, mc) / (config.coherence_len * _LN2)
    return RateReport(
        "noncoherent",
        est.mean,
        est.se,
        (est.mean,),
        (BackhaulSplit(0.0, c),),
        CompressionParams((math.nan,), (ScalarNoise(noise),)),
        split,
        mc.trials,
        mc.seed,
        extra={"rho": rho, "p_on": p},
        samples=samples,
    )


def cutset_bound(config: SystemConfig, mc: McConfig, capacity: float | None = None) -> RateReport:
    """``min(C, R_nc)`` with the non-coherent rate at full SNR."""
    _check_scalar(config)
    c = config.backhaul[0] if capacity is None else capacity
    split = PowerSplit(0.0, config.power)
    if c <= 0:
        return RateReport.zero("cutset", config, mc, split)
    nc = noncoherent_rate(config, mc, capacity=math.inf)
    binding = c < nc.sum_rate
    value, se = (c, 0.0) if binding else (nc.sum_rate, nc.se)
    samples = np.full(mc.trials, c) if binding else nc.samples
    return RateReport(
        "cutset",
        value,
        se,
        (value,),
        (BackhaulSplit(0.0, c),),
        None,
        split,
        mc.trials,
        mc.seed,
        extra={"noncoherent": nc.sum_rate, "backhaul_bound": binding},
        samples=samples,
    )
