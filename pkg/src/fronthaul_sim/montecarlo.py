"""Reproducible Monte Carlo plumbing.

Every random quantity is tied to a named stream and a trial index. Draws come
from a counter-based Philox generator keyed by ``(seed, stream)``. Trial ``i``
always reads the same block of counter space, so any chunking or worker
layout gives bit-identical samples.
"""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np

from . import kernels

__all__ = [
    "Estimate",
    "McConfig",
    "NonFiniteSampleError",
    "cached_complex_normal",
    "complex_normal",
    "estimate",
    "paired_estimate",
    "stream_id",
    "summarize",
    "uniform",
]

_WORDS_PER_BLOCK = 4  # Philox4x64 emits four words per counter step
_SEED_MASK = (1 << 64) - 1


class NonFiniteSampleError(FloatingPointError):
    """Raised when a per-trial value is NaN or infinite."""

    def __init__(self, trial: int, value: float):
        super().__init__(f"non-finite sample {value!r} at trial {trial}")
        self.trial = trial
        self.value = value


@dataclass(frozen=True)
class McConfig:
    trials: int
    seed: int = 0
    batch: int = 10_000
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be positive")
        if self.batch < 1:
            raise ValueError("batch must be positive")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        if not 0 <= self.seed <= _SEED_MASK:
            raise ValueError("seed must fit in 64 unsigned bits")

    def chunks(self) -> list[tuple[int, int]]:
        return [(a, min(a + self.batch, self.trials)) for a in range(0, self.trials, self.batch)]


class Estimate(NamedTuple):
    mean: float
    se: float
    n: int


def stream_id(name: str) -> int:
    """Stable 32-bit identifier for a stream name."""
    return zlib.crc32(name.encode("utf-8"))


def _raw_words(seed: int, stream: str, words_per_trial: int, start: int, stop: int) -> np.ndarray:
    stride = -(-words_per_trial // _WORDS_PER_BLOCK) * _WORDS_PER_BLOCK
    bitgen = np.random.Philox(key=np.array([seed, stream_id(stream)], dtype=np.uint64))
    if start:
        bitgen.advance(start * stride // _WORDS_PER_BLOCK)
    words = bitgen.random_raw((stop - start) * stride).reshape(stop - start, stride)
    return words[:, :words_per_trial]


def _span(mc: McConfig, start: int, stop: int | None) -> tuple[int, int]:
    stop = mc.trials if stop is None else stop
    if not 0 <= start <= stop <= mc.trials:
        raise ValueError(f"trial range [{start}, {stop}) outside [0, {mc.trials})")
    return start, stop


def complex_normal(mc: McConfig, stream: str, shape: tuple[int, ...] = (), start: int = 0, stop: int | None = None) -> np.ndarray:
    """Unit-variance circular complex normals, shape ``(stop - start, *shape)``."""
    start, stop = _span(mc, start, stop)
    size = math.prod(shape)
    words = _raw_words(mc.seed, stream, 2 * size, start, stop)
    flat = kernels.cnormal_from_raw(np.ascontiguousarray(words).reshape(-1))
    return flat.reshape((stop - start, *shape))


@lru_cache(maxsize=32)
def cached_complex_normal(mc: McConfig, stream: str, shape: tuple[int, ...] = ()) -> np.ndarray:
    """Read-only, memoised :func:`complex_normal` over all trials.

    Lets repeated evaluations on the same random numbers (searches over
    power or compression parameters) skip regeneration.
    """
    out = complex_normal(mc, stream, shape)
    out.setflags(write=False)
    return out


def uniform(mc: McConfig, stream: str, shape: tuple[int, ...] = (), start: int = 0, stop: int | None = None) -> np.ndarray:
    """Uniforms on (0, 1], one row per trial."""
    start, stop = _span(mc, start, stop)
    size = math.prod(shape)
    words = _raw_words(mc.seed, stream, size, start, stop)
    flat = kernels.uniform_from_raw(np.ascontiguousarray(words).reshape(-1))
    return flat.reshape((stop - start, *shape))


def summarize(values: np.ndarray, offset: int = 0) -> Estimate:
    """Mean and standard error of per-trial values; rejects non-finite entries."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NonFiniteSampleError(offset + int(bad[0]), float(values[bad[0]]))
    n = values.size
    if n == 0:
        raise ValueError("no samples")
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return Estimate(mean, se, n)


def paired_estimate(a: np.ndarray, b: np.ndarray) -> Estimate:
    """Estimate of ``E[a - b]`` from paired (common random number) samples."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal shapes")
    return summarize(a - b)


def estimate(sample_fn: Callable[[int, int], np.ndarray], mc: McConfig) -> tuple[Estimate, np.ndarray]:
    """Run ``sample_fn(start, stop)`` over trial chunks and reduce in trial order.

    ``sample_fn`` must return one value per trial in ``[start, stop)``. With
    ``mc.workers > 1`` chunks are spread over processes, so the callable has to
    be picklable. The result does not depend on the worker count.
    """
    spans = mc.chunks()
    if mc.workers > 1 and len(spans) > 1:
        with ProcessPoolExecutor(max_workers=mc.workers) as pool:
            parts = list(pool.map(sample_fn, *zip(*spans)))
    else:
        parts = [sample_fn(a, b) for a, b in spans]
    for (a, b), part in zip(spans, parts):
        part = np.asarray(part, dtype=np.float64).reshape(-1)
        if part.size != b - a:
            raise ValueError(f"sample_fn returned {part.size} values for {b - a} trials")
        bad = np.flatnonzero(~np.isfinite(part))
        if bad.size:
            raise NonFiniteSampleError(a + int(bad[0]), float(part[bad[0]]))
    values = np.concatenate(parts)
    return summarize(values), values
