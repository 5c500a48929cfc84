"""Monte-Carlo check of probabilistic orthogonal-channel assignment.

Each interfering sensor with SINR d < d_thr is moved to an orthogonal
channel with probability d / d_thr. Outage is the event that the summed
SINR of the sensors left on the shared channel exceeds d_thr. The check
compares outage with and without the assignment, independently of the
event simulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import binomtest

from .errors import DegenerateScenario


@dataclass(frozen=True)
class InterferenceScenario:
    """``params`` are fractions of ``threshold``:
    uniform -> (low, high), beta -> (a, b), point -> (value,)."""

    is_size: int
    threshold: float = 1.0
    distribution: str = "uniform"
    params: tuple[float, ...] = (0.0, 1.0)
    trials: int = 100_000

    def __post_init__(self):
        if self.is_size < 1 or self.trials < 1:
            raise ValueError("is_size and trials must be >= 1")
        if self.distribution not in ("uniform", "beta", "point"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.distribution in ("uniform", "point") and max(self.params) > 1.0:
            raise ValueError("interfering sensors need SINR below the threshold")
        if min(self.params) < 0:
            raise ValueError("negative SINR")

    @property
    def degenerate(self) -> bool:
        return self.distribution in ("uniform", "point") and max(self.params) == 0.0

    def sample(self, rng: np.random.Generator, trials: int | None = None) -> np.ndarray:
        shape = (trials or self.trials, self.is_size)
        if self.distribution == "uniform":
            lo, hi = self.params
            frac = rng.uniform(lo, hi, size=shape)
        elif self.distribution == "beta":
            frac = rng.beta(*self.params, size=shape)
        else:
            frac = np.full(shape, self.params[0])
        return frac * self.threshold

    def label(self) -> str:
        args = ",".join(f"{p:g}" for p in self.params)
        return f"{self.distribution}({args})"


def probabilistic_assignment(samples: np.ndarray, threshold: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask: True where a sensor is moved to an orthogonal channel."""
    samples = np.asarray(samples, dtype=float)
    return rng.random(samples.shape) < samples / threshold


def residual_interference(samples, threshold: float):
    """Expected interference left on the shared channel, sum of d * (1 - d / d_thr)."""
    samples = np.asarray(samples, dtype=float)
    return np.sum(samples * (1.0 - samples / threshold), axis=-1)


def realized_residual(samples, assigned) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    return np.sum(np.where(assigned, 0.0, samples), axis=-1)


def residual_monte_carlo(samples, threshold: float, trials: int,
                         rng: np.random.Generator) -> tuple[float, float]:
    """Mean and standard error of the realized residual for one fixed SINR vector."""
    samples = np.asarray(samples, dtype=float)
    batch = np.broadcast_to(samples, (trials, samples.size))
    r = realized_residual(batch, probabilistic_assignment(batch, threshold, rng))
    return float(r.mean()), float(r.std(ddof=1) / math.sqrt(trials))


def outage_pair(samples: np.ndarray, threshold: float, rng: np.random.Generator) -> tuple[float, float]:
    """(P_probabilistic, P_original) over the rows of ``samples``."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    original = samples.sum(axis=1) > threshold
    kept = realized_residual(samples, probabilistic_assignment(samples, threshold, rng)) > threshold
    return float(kept.mean()), float(original.mean())


def _wilson(k: int, n: int) -> tuple[float, float]:
    ci = binomtest(k, n).proportion_ci(confidence_level=0.95, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class Lemma1Result:
    scenario: InterferenceScenario
    trials: int
    p_probabilistic: float
    p_original: float
    ci_probabilistic: tuple[float, float]
    ci_original: tuple[float, float]
    expected_residual: float  # mean of the closed-form residual over trials
    realized_residual: float  # mean of the sampled residual
    residual_se: float

    @property
    def verdict(self) -> bool:
        return self.p_probabilistic <= self.p_original

    @property
    def strict(self) -> bool:
        return self.p_probabilistic < self.p_original

    @property
    def strict_required(self) -> bool:
        return self.ci_original[0] > 0.0

    @property
    def holds(self) -> bool:
        return self.verdict and (self.strict or not self.strict_required)


def verify_lemma1(scenario: InterferenceScenario, rng: np.random.Generator,
                  trials: int | None = None) -> Lemma1Result:
    if scenario.degenerate:
        raise DegenerateScenario("all interfering SINRs are zero")
    n = trials or scenario.trials
    thr = scenario.threshold
    samples = scenario.sample(rng, n)
    assigned = probabilistic_assignment(samples, thr, rng)
    original = samples.sum(axis=1)
    residual = realized_residual(samples, assigned)
    k_orig = int((original > thr).sum())
    k_prob = int((residual > thr).sum())
    expected = residual_interference(samples, thr)
    return Lemma1Result(
        scenario, n, k_prob / n, k_orig / n, _wilson(k_prob, n), _wilson(k_orig, n),
        float(expected.mean()), float(residual.mean()),
        float((residual - expected).std(ddof=1) / math.sqrt(n)),
    )


def default_sweep(threshold: float = 10 ** 0.7, trials: int = 100_000) -> list[InterferenceScenario]:
    """Twenty parameterizations: five IS sizes times four SINR laws."""
    laws = [("uniform", (0.0, 1.0)), ("uniform", (0.3, 0.9)), ("beta", (2.0, 2.0)),
            ("beta", (0.5, 0.5))]
    return [InterferenceScenario(size, threshold, d, p, trials)
            for size in (2, 3, 4, 6, 8) for d, p in laws]
