"""Radio model: log-distance pathloss, SINR, source classification and the
three-state Markov channel with its persistence (stability) test.

Channel states are numbered 1..3 with 3 the best quality state.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DistanceBelowReference, NegativeMu, NonStochasticInput, NoStableChannel

STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True)
class LinkBudget:
    tx_power: float  # dBm
    distance: float  # m
    pathloss_exponent: float
    reference_distance: float = 0.1
    reference_loss: float = 35.0

    def __post_init__(self):
        if self.distance <= 0:
            raise ValueError("distance must be > 0")
        if self.pathloss_exponent <= 0:
            raise ValueError("pathloss exponent must be > 0")


def pathloss_db(budget: LinkBudget) -> float:
    if budget.distance < budget.reference_distance:
        raise DistanceBelowReference(
            f"distance {budget.distance} m is below the reference distance "
            f"{budget.reference_distance} m")
    return budget.reference_loss + 10.0 * budget.pathloss_exponent * math.log10(
        budget.distance / budget.reference_distance)


def received_power_dbm(budget: LinkBudget, penalty_db: float = 0.0) -> float:
    return budget.tx_power - pathloss_db(budget) - penalty_db


def sinr(desired: float, interferers: Sequence[float], noise: float) -> float:
    """Linear SINR from powers in mW: desired / (sum(interferers) + noise)."""
    if noise <= 0:
        raise ValueError("noise power must be > 0")
    return desired / (math.fsum(interferers) + noise)


def to_db(ratio: float) -> float:
    return 10.0 * math.log10(ratio) if ratio > 0 else -math.inf


class Classification(enum.Enum):
    NON_INTERFERING = "TS"
    HIGH_INTERFERING = "IS"


def classify_source(sinr_db: float, threshold_db: float) -> Classification:
    if sinr_db >= threshold_db:
        return Classification.NON_INTERFERING
    return Classification.HIGH_INTERFERING


def check_stochastic(P, tol: float = STOCHASTIC_TOL) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.shape != (3, 3):
        raise NonStochasticInput(f"expected a 3x3 matrix, got shape {P.shape}")
    if (P < 0).any() or np.abs(P.sum(axis=1) - 1.0).max() > tol:
        raise NonStochasticInput("rows must be non-negative and sum to 1")
    return P


def matrix_power(P, n: int) -> np.ndarray:
    """n-step transition matrix of a 3-state chain (P**0 is the identity)."""
    P = check_stochastic(P)
    if n < 0:
        raise ValueError("n must be >= 0")
    return np.linalg.matrix_power(P, int(n))


@dataclass(frozen=True)
class MarkovChannel:
    channel_index: int
    state: int
    step_matrix: tuple[tuple[float, ...], ...]
    step_duration: float

    def __post_init__(self):
        if self.state not in (1, 2, 3):
            raise ValueError(f"state must be 1, 2 or 3, got {self.state}")
        check_stochastic(self.step_matrix)


def horizon_steps(K: int, T: float, T_data: float, x: int, tau_s: float, step_duration: float) -> int:
    mu = K * T + T_data - x * tau_s
    if mu < -1e-15:
        raise NegativeMu(f"sensing time {x * tau_s} exceeds horizon {K * T + T_data}")
    return int(round(max(mu, 0.0) / step_duration))


def is_stable(channel: MarkovChannel, K: int, T: float, T_data: float, x: int,
              tau_s: float, p_thr: float) -> bool:
    """Persistence test: P_mu(i, i) + P_mu(i, i-1) > p_thr for the current state i.

    The horizon mu = K*T + T_data - x*tau_s is mapped to a whole number of
    chain steps. A channel already in the best state needs no check.
    """
    n = horizon_steps(K, T, T_data, x, tau_s, channel.step_duration)
    i = channel.state
    if i == 3:
        return True
    M = matrix_power(channel.step_matrix, n)
    stay = M[i - 1, i - 1]
    below = M[i - 1, i - 2] if i > 1 else 0.0
    return bool(stay + below > p_thr)


def _next_state(cum_row: Sequence[float], u: float) -> int:
    for j, c in enumerate(cum_row):
        if u < c:
            return j + 1
    return len(cum_row)


def step_channel(channel: MarkovChannel, rng: np.random.Generator) -> MarkovChannel:
    row = np.cumsum(channel.step_matrix[channel.state - 1])
    nxt = _next_state(row, rng.random())
    return MarkovChannel(channel.channel_index, nxt, channel.step_matrix, channel.step_duration)


def find_stable_channel(channels: Sequence[MarkovChannel], K: int, T: float, T_data: float,
                        tau_s: float, p_thr: float, rng: np.random.Generator) -> tuple[int, int]:
    """Scan channels in a random order and return ``(channel_index, scans)``
    for the first one passing ``is_stable``. Each scan costs ``tau_s`` which
    shortens the remaining horizon."""
    order = rng.permutation(len(channels))
    x = 0
    for x, pos in enumerate(order, start=1):
        ch = channels[pos]
        try:
            if is_stable(ch, K, T, T_data, x, tau_s, p_thr):
                return ch.channel_index, x
        except NegativeMu:
            break
    err = NoStableChannel(f"no stable channel among {len(channels)} scanned")
    err.scans = x if len(channels) else 0
    raise err


class ChannelBank:
    """Mutable set of Markov channels stepped together by the simulator.

    Uses the same sampling rule as ``step_channel`` but keeps the states in
    a plain list so a slot boundary costs one uniform draw per channel.
    """

    def __init__(self, count: int, matrix, step_duration: float, rng: np.random.Generator,
                 initial_states: Sequence[int] | None = None):
        self.matrix = check_stochastic(matrix)
        self.step_duration = step_duration
        self.rng = rng
        self._cum = [list(np.cumsum(row)) for row in self.matrix]
        self._jump_cache: dict[int, list[list[float]]] = {}
        if initial_states is None:
            pi = stationary(self.matrix)
            initial_states = [int(s) + 1 for s in rng.choice(3, size=count, p=pi)]
        self.states = list(initial_states)
        self._frozen = tuple(tuple(r) for r in self.matrix)

    def step(self, n: int = 1) -> None:
        if n <= 0:
            return
        if n == 1:
            cum = self._cum
        else:
            cum = self._jump_cache.get(n)
            if cum is None:
                cum = [list(np.cumsum(row)) for row in matrix_power(self.matrix, n)]
                self._jump_cache[n] = cum
        u = self.rng.random(len(self.states))
        self.states = [_next_state(cum[s - 1], float(v)) for s, v in zip(self.states, u)]

    def channel(self, index: int) -> MarkovChannel:
        return MarkovChannel(index, self.states[index], self._frozen, self.step_duration)

    def snapshot(self) -> list[MarkovChannel]:
        return [self.channel(i) for i in range(len(self.states))]


def stationary(P) -> np.ndarray:
    P = check_stochastic(P)
    w, v = np.linalg.eig(P.T)
    k = int(np.argmin(np.abs(w - 1.0)))
    pi = np.real(v[:, k])
    pi = np.clip(pi / pi.sum(), 0.0, None)
    return pi / pi.sum()
