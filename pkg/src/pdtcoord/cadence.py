"""Note emission cadence policies.

Three modes share one stepping interface: deterministic (every M tokens),
stochastic (Bernoulli 1/M per token, geometric inter-arrivals with mean M),
and adaptive (the per-token probability is modulated by decode-context
signals, bounded to [m_min, m_max] times the base rate).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

from .errors import ConfigError
from .rng import DOMAIN_CADENCE, uniform

CadenceMode = Literal["deterministic", "stochastic", "adaptive"]


@dataclass(frozen=True)
class CadenceConfig:
    mode: CadenceMode = "deterministic"
    interval_m: int = 4
    m_min: float = 0.5
    m_max: float = 2.0

    def __post_init__(self) -> None:
        if self.mode not in ("deterministic", "stochastic", "adaptive"):
            raise ConfigError(f"unknown cadence mode {self.mode!r}")
        if self.interval_m < 1:
            raise ConfigError("interval_m must be >= 1")
        if not 0.0 < self.m_min <= self.m_max:
            raise ConfigError("need 0 < m_min <= m_max")


@dataclass(frozen=True)
class CadenceState:
    """Replayable cadence cursor: draws are keyed by (seed, stream, position)."""

    seed: int
    stream_id: int = 0
    position: int = 0


@dataclass(frozen=True)
class ContextSignals:
    """Decode-context inputs to the adaptive modulation factor.

    Neutral defaults produce a modulation factor of exactly 1, so the adaptive
    mode degrades gracefully to the stochastic base rate.
    """

    agreement: float = 0.5
    entropy_norm: float = 0.5
    coverage_gap: float = 0.0
    note_age: int = 0
    note_age_window: int = 128
    gate: float = 1.0


def modulation_factor(config: CadenceConfig, signals: ContextSignals) -> float:
    """Bounded cadence modulation m_t in [m_min, m_max].

    Pressure terms raise the rate: low agreement, high normalized entropy,
    uncovered constraints, and stale notes.  A closed gate halves it, since
    siblings are not consuming the notes anyway.
    """
    m = 1.0
    m += max(0.0, 0.5 - signals.agreement)
    m += max(0.0, signals.entropy_norm - 0.5)
    m += 0.5 * max(0.0, signals.coverage_gap)
    m += 0.5 * min(1.0, signals.note_age / max(1, signals.note_age_window))
    if signals.gate < 1e-6:
        m -= 0.5
    return min(config.m_max, max(config.m_min, m))


def next_emission(
    config: CadenceConfig,
    state: CadenceState,
    signals: ContextSignals | None = None,
) -> tuple[bool, CadenceState]:
    """Consume one token position and decide whether to emit a note.

    Deterministic mode emits exactly at positions M, 2M, 3M, ...  Stochastic
    mode emits with probability 1/M per position.  Adaptive mode scales that
    probability by modulation_factor (capped at 1).
    """
    pos = state.position + 1
    new_state = CadenceState(state.seed, state.stream_id, pos)
    if config.mode == "deterministic":
        return pos % config.interval_m == 0, new_state
    p = 1.0 / config.interval_m
    if config.mode == "adaptive":
        p = min(1.0, p * modulation_factor(config, signals or ContextSignals()))
    u = uniform(state.seed, DOMAIN_CADENCE, state.stream_id, pos)
    return u < p, new_state
