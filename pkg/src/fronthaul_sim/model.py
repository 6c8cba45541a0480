"""Scenario description, Rician channels, estimation statistics and CSI compression.

Channels are synthesised "compressed-first": the compressed estimate is drawn
from its Gaussian marginal and the estimate and true channel are built by
adding independent noise. The explicit pilot path exists only to cross-check
that synthesis.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .montecarlo import McConfig, complex_normal

__all__ = [
    "ChannelSample",
    "ChannelStats",
    "EstimationMode",
    "PowerSplit",
    "SystemConfig",
    "derive_stats",
    "estimate_from_pilots",
    "orthogonal_pilots",
    "pilot_observation",
    "sample_channel",
    "sample_estimated_channel",
]


class EstimationMode(str, Enum):
    ECF = "ECF"
    CFE = "CFE"


def _counts(values, name: str) -> tuple[int, ...]:
    out = tuple(int(v) for v in np.atleast_1d(values))
    if not out or any(v < 1 for v in out):
        raise ValueError(f"{name} must be a non-empty list of positive counts")
    return out


@dataclass(eq=False)
class SystemConfig:
    """Uplink scenario: ``n_bs`` receivers, ``n_ms`` transmitters.

    ``backhaul`` holds one capacity per BS in bits/s/Hz. ``gains`` is the
    ``n_bs x n_ms`` matrix of linear power gains. ``los`` optionally holds the
    deterministic line-of-sight blocks as ``los[j][i]`` of shape
    ``(nr_per_bs[j], nt_per_ms[i])``; all-ones blocks are used when omitted.
    """

    nt_per_ms: tuple[int, ...]
    nr_per_bs: tuple[int, ...]
    coherence_len: int
    train_len: int
    power: float
    backhaul: tuple[float, ...]
    rician_k: float = 0.0
    gains: np.ndarray | None = None
    los: list[list[np.ndarray]] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.nt_per_ms = _counts(self.nt_per_ms, "nt_per_ms")
        self.nr_per_bs = _counts(self.nr_per_bs, "nr_per_bs")
        self.backhaul = tuple(float(c) for c in np.atleast_1d(self.backhaul))
        if len(self.backhaul) == 1 and self.n_bs > 1:
            self.backhaul = self.backhaul * self.n_bs
        if len(self.backhaul) != self.n_bs:
            raise ValueError("backhaul needs one capacity per BS")
        if any(not c >= 0 for c in self.backhaul):
            raise ValueError("backhaul capacities must be non-negative")
        if int(self.coherence_len) != self.coherence_len or self.coherence_len < 1:
            raise ValueError("coherence_len must be a positive integer")
        if int(self.train_len) != self.train_len or not 0 <= self.train_len <= self.coherence_len:
            raise ValueError("train_len must be an integer in [0, coherence_len]")
        self.coherence_len = int(self.coherence_len)
        self.train_len = int(self.train_len)
        if not self.power >= 0:
            raise ValueError("power must be non-negative")
        if not self.rician_k >= 0:
            raise ValueError("rician_k must be non-negative")
        gains = np.ones((self.n_bs, self.n_ms)) if self.gains is None else np.array(self.gains, dtype=float)
        if gains.shape != (self.n_bs, self.n_ms) or np.any(~(gains >= 0)):
            raise ValueError("gains must be a non-negative n_bs x n_ms matrix")
        self.gains = gains
        if self.los is None:
            self.los = [[np.ones((nr, nt)) for nt in self.nt_per_ms] for nr in self.nr_per_bs]
        else:
            for j, row in enumerate(self.los):
                for i, block in enumerate(row):
                    if np.shape(block) != (self.nr_per_bs[j], self.nt_per_ms[i]):
                        raise ValueError(f"los[{j}][{i}] has the wrong shape")
            self.los = [[np.asarray(b, dtype=complex) for b in row] for row in self.los]

    @property
    def n_bs(self) -> int:
        return len(self.nr_per_bs)

    @property
    def n_ms(self) -> int:
        return len(self.nt_per_ms)

    @property
    def nt(self) -> int:
        return sum(self.nt_per_ms)

    @property
    def nr(self) -> int:
        return sum(self.nr_per_bs)

    @property
    def data_len(self) -> int:
        return self.coherence_len - self.train_len

    @property
    def data_fraction(self) -> float:
        return self.data_len / self.coherence_len

    def replace(self, **changes) -> "SystemConfig":
        if "nr_per_bs" in changes or "nt_per_ms" in changes:
            changes.setdefault("los", None)
        return dataclasses.replace(self, **changes)

    def column_ms(self) -> np.ndarray:
        """MS index owning each of the ``nt`` transmit columns."""
        return np.repeat(np.arange(self.n_ms), self.nt_per_ms)

    def los_mean(self, j: int) -> np.ndarray:
        """Mean of ``H_j``: gain-weighted LoS blocks scaled by ``sqrt(K/(K+1))``."""
        k = self.rician_k
        blocks = [np.sqrt(self.gains[j, i]) * self.los[j][i] for i in range(self.n_ms)]
        return np.sqrt(k / (k + 1.0)) * np.hstack(blocks).astype(complex)

    def los_weighted(self, j: int) -> np.ndarray:
        """Gain-weighted LoS matrix of BS ``j`` without the Rician factor."""
        return np.hstack([np.sqrt(self.gains[j, i]) * self.los[j][i] for i in range(self.n_ms)]).astype(complex)


@dataclass(frozen=True)
class PowerSplit:
    """Pilot and data powers satisfying the per-block power budget."""

    p_pilot: float
    p_data: float

    @classmethod
    def uniform(cls, config: SystemConfig) -> "PowerSplit":
        return cls(config.power, config.power)

    @classmethod
    def from_fraction(cls, config: SystemConfig, fraction: float) -> "PowerSplit":
        """Give ``fraction`` of the block energy ``T*P`` to the pilots."""
        if not 0.0 <= fraction <= 1.0:
            raise ValueError("fraction must lie in [0, 1]")
        t, tp, td = config.coherence_len, config.train_len, config.data_len
        energy = t * config.power
        pp = fraction * energy / tp if tp else 0.0
        pd = (1.0 - fraction) * energy / td if td else 0.0
        return cls(pp, pd)

    def check(self, config: SystemConfig, tol: float = 1e-12) -> None:
        t = config.coherence_len
        used = (config.train_len * self.p_pilot + config.data_len * self.p_data) / t
        if abs(used - config.power) > tol * max(1.0, config.power):
            raise ValueError(f"power split uses {used!r}, budget is {config.power!r}")

    def pilot_fraction(self, config: SystemConfig) -> float:
        energy = config.coherence_len * config.power
        return config.train_len * self.p_pilot / energy if energy else 0.0


@dataclass(frozen=True)
class ChannelStats:
    est_var: np.ndarray
    err_var: np.ndarray
    err_aggregate: np.ndarray
    mode: EstimationMode

    def column_est_var(self, config: SystemConfig, j: int) -> np.ndarray:
        return self.est_var[j, config.column_ms()]

    def min_est_var(self, j: int) -> float:
        return float(self.est_var[j].min())


def derive_stats(
    config: SystemConfig,
    split: PowerSplit,
    csi_noise: Sequence[float] | float | None = None,
    mode: EstimationMode | str = EstimationMode.ECF,
) -> ChannelStats:
    """Per-link estimate and error variances under MMSE training.

    In CFE mode the estimate is formed from pilots that were compressed with
    noise variance ``csi_noise[j]``; ECF ignores ``csi_noise``.
    """
    mode = EstimationMode(mode)
    if config.train_len < 1:
        raise ValueError("estimation needs at least one training symbol")
    if split.p_pilot <= 0:
        raise ValueError("pilot power must be positive")
    k1 = config.rician_k + 1.0
    nt = config.nt
    energy = config.train_len * split.p_pilot
    if mode is EstimationMode.CFE:
        noise = np.broadcast_to(np.asarray(0.0 if csi_noise is None else csi_noise, dtype=float), (config.n_bs,))
        if np.any(~(noise >= 0)):
            raise ValueError("csi_noise must be non-negative")
        inflate = (1.0 + noise)[:, None]
    else:
        inflate = np.ones((config.n_bs, 1))
    denom = energy + nt * inflate * k1
    est = config.gains / k1 * energy / denom
    err = config.gains * nt * inflate / denom
    agg = err @ np.asarray(config.nt_per_ms, dtype=float)
    return ChannelStats(est, err, agg, mode)


@dataclass
class ChannelSample:
    """Batched channel draws, one array of shape ``(trials, nr_j, nt)`` per BS."""

    h_true: list[np.ndarray]
    h_est: list[np.ndarray] | None = None
    h_comp: list[np.ndarray] | None = None


def sample_channel(config: SystemConfig, mc: McConfig, stream: str = "channel", start: int = 0, stop: int | None = None) -> ChannelSample:
    """Rician draws of every ``H_j``."""
    k1 = config.rician_k + 1.0
    out = []
    for j, nr in enumerate(config.nr_per_bs):
        w = complex_normal(mc, f"{stream}/{j}", (nr, config.nt), start, stop)
        scale = np.sqrt(config.gains[j, config.column_ms()] / k1)
        out.append(config.los_mean(j) + w * scale)
    return ChannelSample(out)


def _check_csi_noise(stats: ChannelStats, csi_noise, n_bs: int) -> np.ndarray:
    noise = np.broadcast_to(np.asarray(csi_noise, dtype=float), (n_bs,)).copy()
    if np.any(~(noise >= 0)):
        raise ValueError("csi_noise must be non-negative")
    for j in range(n_bs):
        floor = stats.min_est_var(j)
        if noise[j] > floor * (1 + 1e-12):
            raise ValueError(f"csi_noise {noise[j]!r} at BS {j} exceeds the smallest estimate variance {floor!r}")
    return noise


def sample_estimated_channel(
    config: SystemConfig,
    stats: ChannelStats,
    csi_noise: Sequence[float] | float,
    mc: McConfig,
    stream: str = "estimate",
    start: int = 0,
    stop: int | None = None,
) -> ChannelSample:
    """Draw compressed estimates, then add CSI-compression and estimation noise."""
    noise = _check_csi_noise(stats, csi_noise, config.n_bs)
    comp, est, true = [], [], []
    cols = config.column_ms()
    for j, nr in enumerate(config.nr_per_bs):
        shape = (nr, config.nt)
        mean = config.los_mean(j)
        var = np.maximum(stats.est_var[j, cols] - noise[j], 0.0)
        h_comp = mean + complex_normal(mc, f"{stream}/comp/{j}", shape, start, stop) * np.sqrt(var)
        h_est = h_comp + complex_normal(mc, f"{stream}/csi/{j}", shape, start, stop) * np.sqrt(noise[j])
        h_true = h_est + complex_normal(mc, f"{stream}/err/{j}", shape, start, stop) * np.sqrt(stats.err_var[j, cols])
        comp.append(h_comp)
        est.append(h_est)
        true.append(h_true)
    return ChannelSample(true, est, comp)


def orthogonal_pilots(nt: int, tp: int, rng: np.random.Generator) -> np.ndarray:
    """Random ``nt x tp`` pilot matrix with ``S S^H = tp I``."""
    if tp < nt:
        raise ValueError("orthogonal pilots need tp >= nt")
    g = rng.standard_normal((tp, tp)) + 1j * rng.standard_normal((tp, tp))
    q, r = np.linalg.qr(g)
    q = q * (np.diag(r) / np.abs(np.diag(r)))
    return np.sqrt(tp) * q[:nt, :]


def pilot_observation(config: SystemConfig, split: PowerSplit, h: np.ndarray, pilots: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Received training block ``sqrt(P_p/N_t) H S + Z``."""
    return np.sqrt(split.p_pilot / config.nt) * h @ pilots + noise


def estimate_from_pilots(config: SystemConfig, split: PowerSplit, y_pilot: np.ndarray, pilots: np.ndarray, bs: int = 0) -> np.ndarray:
    """MMSE channel estimate of BS ``bs`` from its training observation.

    ``y_pilot`` may carry leading batch axes; ``pilots`` is ``nt x T_p`` or
    batched to match.
    """
    nt, tp = config.nt, config.train_len
    if pilots.shape[-2:] != (nt, tp):
        raise ValueError(f"pilots must be {nt} x {tp}, got {pilots.shape[-2:]}")
    if y_pilot.shape[-2:] != (config.nr_per_bs[bs], tp):
        raise ValueError("pilot observation does not match the BS antennas and training length")
    pp = split.p_pilot
    mean = config.los_mean(bs)
    centred = y_pilot - np.sqrt(pp / nt) * mean @ pilots
    sh = np.conj(np.swapaxes(pilots, -1, -2))
    reg = nt * (config.rician_k + 1.0) / pp * np.eye(nt) + pilots @ sh
    # X = centred S^H reg^{-1}, solved as reg^H X^H = (centred S^H)^H
    rhs = centred @ sh
    sol = np.linalg.solve(np.conj(np.swapaxes(reg, -1, -2)), np.conj(np.swapaxes(rhs, -1, -2)))
    return np.sqrt(nt / pp) * np.conj(np.swapaxes(sol, -1, -2)) + mean
