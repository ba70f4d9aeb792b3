"""Multi-stream decode controller: strides, note barriers, agreement-gated rollback.

Streams consume replay-artifact frames in lockstep strides of B tokens.  Inside
a stride each stream sees a frozen view of its siblings' notes, so the schedule
is independent of worker count.  At the stride barrier published notes enter
the bus, each stream's uncommitted span is committed or rolled back based on
its minimum agreement score, and a new bus snapshot is recorded.

The full run serializes to a line-oriented trace whose SHA-256 is the
determinism fingerprint: two runs agree iff their trace hashes agree.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .cadence import CadenceConfig, CadenceState, ContextSignals, next_emission
from .errors import ConfigError
from .kernels import logistic, row_softmax
from .memmodel import pages_touched
from .notebus import BusSnapshot, NotesBus, stack_sibling_rows
from .replay import ReplayArtifact
from .rng import DOMAIN_NOISE, normal_array
from .snc import GateState, agreement_score, apply_adapter, attend_notes, gate_controller_step


@dataclass(frozen=True)
class DecodeConfig:
    """Controller settings; every field has a replay-safe default."""

    n_streams: int | None = None
    stride_b: int = 32
    horizon_l: int = 32
    tau: float | None = None
    read_delta: int = 0
    cadence: CadenceConfig = field(default_factory=CadenceConfig)
    gate_override: float | None = None
    agreement_mode: Literal["artifact", "live"] = "artifact"
    regen_mode: Literal["skip_ahead", "reconsume"] = "skip_ahead"
    max_reconsume_attempts: int = 2
    bus_capacity: int = 2560
    bus_retain_k: int = 8
    b_page: int | None = None
    seed: int | None = None
    note_noise_scale: float = 0.0
    masked_strides: frozenset[int] = frozenset()
    g_min: float = 0.05
    g_max: float = 0.80
    warmup_tokens: int = 128
    stability_threshold: float = 1.0
    tau_lipschitz: float = 40.0
    record_margins: bool = False

    def __post_init__(self) -> None:
        if self.stride_b < 1:
            raise ConfigError("stride_b must be >= 1")
        if self.horizon_l < self.stride_b:
            raise ConfigError("horizon_l must be >= stride_b so commits bound uncommitted spans")
        if self.tau is not None and not 0.0 < self.tau < 1.0:
            raise ConfigError("tau must lie in (0, 1)")
        if self.read_delta < 0:
            raise ConfigError("read_delta must be non-negative")
        if self.regen_mode not in ("skip_ahead", "reconsume"):
            raise ConfigError(f"unknown regen_mode {self.regen_mode!r}")
        if self.agreement_mode not in ("artifact", "live"):
            raise ConfigError(f"unknown agreement_mode {self.agreement_mode!r}")
        if self.max_reconsume_attempts < 1:
            raise ConfigError("max_reconsume_attempts must be >= 1")
        if self.note_noise_scale < 0.0:
            raise ConfigError("note_noise_scale must be non-negative")
        if self.gate_override is not None and not 0.0 <= self.gate_override <= 1.0:
            raise ConfigError("gate_override must lie in [0, 1]")

    def page_size(self) -> int:
        return self.b_page if self.b_page is not None else self.horizon_l


# -- events -----------------------------------------------------------------


@dataclass(frozen=True)
class TokenEvent:
    round_index: int
    stream_id: int
    position: int
    frame_index: int
    token_id: int


@dataclass(frozen=True)
class GateEvent:
    round_index: int
    stream_id: int
    position: int
    value: float


@dataclass(frozen=True)
class NoteEvent:
    round_index: int
    stream_id: int
    emitted_at_token: int
    version: int


@dataclass(frozen=True)
class SnapshotEvent:
    round_index: int
    snapshot_version: int
    created_at_token: int


@dataclass(frozen=True)
class RollbackEvent:
    stream_id: int
    trigger_position: int
    rolled_back_to: int
    min_agreement: float
    pages_dropped: int
    round_index: int = -1


@dataclass(frozen=True)
class StreamEnded:
    """In-memory marker that a stream exhausted its frames; not serialized."""

    round_index: int
    stream_id: int


TraceRecord = TokenEvent | GateEvent | NoteEvent | SnapshotEvent | RollbackEvent | StreamEnded


@dataclass
class _SiblingView:
    rows: np.ndarray
    keys: tuple[tuple[int, int], ...]
    snapshot: BusSnapshot


@dataclass
class StreamState:
    """Mutable per-stream decode state, owned by exactly one worker."""

    stream_id: int
    gate_state: GateState
    cadence_state: CadenceState
    token_log: list[int] = field(default_factory=list)
    agreement_log: list[float] = field(default_factory=list)
    frame_log: list[int] = field(default_factory=list)
    committed_prefix: int = 0
    cursor: int = 0
    rollback_count: int = 0
    reconsume_attempts: int = 0
    forced_commits: int = 0
    tokens_since_own_note: int = 0
    done: bool = False
    pending_notes: list[tuple[np.ndarray, int]] = field(default_factory=list)
    sibling_view: _SiblingView | None = None
    known_note_keys: frozenset[tuple[int, int]] = frozenset()
    last_note_mean: np.ndarray | None = None
    last_gate_value: float | None = None
    margins: list[float] = field(default_factory=list)

    @property
    def position(self) -> int:
        return len(self.token_log)


def _effective_tau(artifact: ReplayArtifact, config: DecodeConfig) -> float:
    return config.tau if config.tau is not None else artifact.agreement.tau


def make_stream_states(artifact: ReplayArtifact, config: DecodeConfig) -> list[StreamState]:
    seed = config.seed if config.seed is not None else artifact.seed
    states = []
    for k in range(artifact.n_streams):
        gs = GateState(
            g_min=config.g_min,
            g_max=config.g_max,
            warmup_tokens=config.warmup_tokens,
            stability_threshold=config.stability_threshold,
            tau_lipschitz=config.tau_lipschitz,
            tokens_since_note=config.warmup_tokens,
        )
        states.append(
            StreamState(
                stream_id=k,
                gate_state=gs,
                cadence_state=CadenceState(seed=seed, stream_id=k, position=0),
            )
        )
    return states


def _note_entropy(probs: np.ndarray) -> float:
    nz = probs[probs > 0.0]
    return float(-(nz * np.log(nz)).sum())


def step_stream(
    state: StreamState,
    artifact: ReplayArtifact,
    config: DecodeConfig,
    round_index: int = 0,
) -> tuple[StreamState, list[TraceRecord]]:
    """Decode one token for one stream against its frozen sibling view.

    Applies the adapter to the frame's hidden state, adds the gated note
    residual, maps the residual through the readout into a logit bias, and
    takes the argmax.  Emissions are queued in pending_notes; nothing touches
    the bus until the caller's barrier.
    """
    events: list[TraceRecord] = []
    frames = artifact.streams[state.stream_id]
    if state.cursor >= frames.length:
        if not state.done:
            state.done = True
            events.append(StreamEnded(round_index, state.stream_id))
        return state, events

    frame = state.cursor
    h_row = frames.hidden[frame][None, :]
    h_adapted = apply_adapter(h_row, artifact.adapter)

    view = state.sibling_view
    rows = view.rows if view is not None else np.zeros((0, artifact.d_note))
    keys = view.keys if view is not None else ()

    new_keys = frozenset(keys) - state.known_note_keys
    note_event = len(new_keys) > 0
    note_change = None
    if note_event:
        mean_now = rows.mean(axis=0) if rows.shape[0] else np.zeros(artifact.d_note)
        if state.last_note_mean is not None:
            note_change = float(np.linalg.norm(mean_now - state.last_note_mean))
        state.last_note_mean = mean_now
        state.known_note_keys = frozenset(keys)

    if config.gate_override is not None:
        gate = float(config.gate_override)
    else:
        base_gate = float(logistic(artifact.snc.gamma))
        _, gate, _ = gate_controller_step(
            state.gate_state, base_gate, new_note_event=note_event, note_change=note_change
        )

    if rows.shape[0] > 0 and gate != 0.0:
        residual = gate * attend_notes(h_adapted, rows, artifact.snc)
        bias = (residual @ artifact.readout)[0]
        h_out = (h_adapted + residual)[0]
    else:
        bias = np.zeros(artifact.vocab_size)
        h_out = h_adapted[0]

    biased = frames.logits[frame] + bias
    token = int(np.argmax(biased))
    if config.record_margins:
        top2 = np.partition(biased, -2)[-2:]
        state.margins.append(float(top2[1] - top2[0]))

    if config.agreement_mode == "artifact":
        score = float(frames.agreement[frame])
    else:
        score = agreement_score(h_out, artifact.agreement, deterministic=True)

    state.token_log.append(token)
    state.frame_log.append(frame)
    state.agreement_log.append(score)
    state.cursor += 1
    state.tokens_since_own_note += 1
    position = state.position - 1

    events.append(TokenEvent(round_index, state.stream_id, position, frame, token))
    if state.last_gate_value is None or gate != state.last_gate_value:
        events.append(GateEvent(round_index, state.stream_id, position, gate))
        state.last_gate_value = gate

    signals = None
    if config.cadence.mode == "adaptive":
        probs = row_softmax(biased[None, :])[0]
        signals = ContextSignals(
            agreement=score,
            entropy_norm=_note_entropy(probs) / math.log(artifact.vocab_size),
            note_age=state.tokens_since_own_note,
            gate=gate,
        )
    emit, state.cadence_state = next_emission(config.cadence, state.cadence_state, signals)
    if emit and frames.note_present[frame]:
        emb = frames.note_embeddings[frame]
        if config.note_noise_scale > 0.0:
            seed = config.seed if config.seed is not None else artifact.seed
            noise = normal_array(
                seed, DOMAIN_NOISE, state.stream_id, frame, np.arange(artifact.d_note)
            )
            emb = emb + config.note_noise_scale * noise
        state.pending_notes.append((np.array(emb), position))
        state.tokens_since_own_note = 0
    return state, events


def check_and_rollback(
    state: StreamState,
    artifact: ReplayArtifact,
    config: DecodeConfig,
    round_index: int = 0,
) -> tuple[StreamState, RollbackEvent | None]:
    """Commit or rewind the uncommitted span at a stride boundary.

    If every uncommitted agreement score clears tau the span commits.
    Otherwise the stream rewinds to its committed prefix: the token log is
    truncated, queued notes are dropped, and (in reconsume mode) the frame
    cursor steps back so the span is decoded again.  After
    max_reconsume_attempts failed retries the span force-commits so replays
    cannot live-lock; skip-ahead mode instead leaves the cursor in place and
    continues with fresh frames.
    """
    span = state.position - state.committed_prefix
    if span == 0:
        return state, None
    if span > config.horizon_l:
        raise ConfigError(f"uncommitted span {span} exceeds commit horizon {config.horizon_l}")
    tau = _effective_tau(artifact, config)
    min_score = min(state.agreement_log)
    forced = (
        min_score < tau
        and config.regen_mode == "reconsume"
        and state.reconsume_attempts >= config.max_reconsume_attempts
    )
    if min_score >= tau or forced:
        state.committed_prefix = state.position
        state.agreement_log.clear()
        state.reconsume_attempts = 0
        if forced:
            state.forced_commits += 1
        return state, None

    trigger = state.position
    target = state.committed_prefix
    del state.token_log[target:]
    del state.frame_log[target:]
    state.agreement_log.clear()
    state.pending_notes.clear()
    if config.regen_mode == "reconsume":
        state.cursor -= span
        state.reconsume_attempts += 1
        state.done = False
    state.rollback_count += 1
    pages = pages_touched(target, trigger, config.page_size())
    return state, RollbackEvent(
        stream_id=state.stream_id,
        trigger_position=trigger,
        rolled_back_to=target,
        min_agreement=min_score,
        pages_dropped=pages,
        round_index=round_index,
    )


# -- trace ------------------------------------------------------------------


@dataclass
class DecodeTrace:
    """Complete record of a run: config echo, event log, final bus, summary."""

    config_line: str
    events: list[TraceRecord]
    bus_lines: list[str]
    token_logs: tuple[tuple[int, ...], ...]
    committed: tuple[int, ...]
    rollback_states: tuple[tuple[int, int, tuple[int, ...]], ...]
    forced_commits: int
    margins: tuple[tuple[float, ...], ...] = ()

    def to_lines(self) -> list[str]:
        lines = ["PDTTRACE v1", self.config_line]
        for ev in self.events:
            if isinstance(ev, TokenEvent):
                lines.append(
                    f"TOKEN {ev.round_index} {ev.stream_id} {ev.position} {ev.frame_index} {ev.token_id}"
                )
            elif isinstance(ev, GateEvent):
                lines.append(f"GATE {ev.round_index} {ev.stream_id} {ev.position} {ev.value!r}")
            elif isinstance(ev, NoteEvent):
                lines.append(
                    f"NOTE {ev.round_index} {ev.stream_id} {ev.emitted_at_token} {ev.version}"
                )
            elif isinstance(ev, RollbackEvent):
                lines.append(
                    f"ROLLBACK {ev.round_index} {ev.stream_id} {ev.trigger_position} "
                    f"{ev.rolled_back_to} {ev.min_agreement!r} {ev.pages_dropped}"
                )
            elif isinstance(ev, SnapshotEvent):
                lines.append(
                    f"SNAPSHOT {ev.round_index} {ev.snapshot_version} {ev.created_at_token}"
                )
        lines.extend(self.bus_lines)
        n_tokens = sum(len(t) for t in self.token_logs)
        n_rollbacks = sum(1 for e in self.events if isinstance(e, RollbackEvent))
        n_notes = sum(1 for e in self.events if isinstance(e, NoteEvent))
        lines.append(
            f"SUMMARY streams={len(self.token_logs)} tokens={n_tokens} "
            f"rollbacks={n_rollbacks} notes={n_notes} forced_commits={self.forced_commits}"
        )
        return lines

    def trace_hash(self) -> str:
        digest = hashlib.sha256()
        for line in self.to_lines():
            digest.update(line.encode("utf-8"))
            digest.update(b"\n")
        return digest.hexdigest()

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.to_lines():
                fh.write(line)
                fh.write("\n")

    def rollback_events(self) -> list[RollbackEvent]:
        return [e for e in self.events if isinstance(e, RollbackEvent)]


def _config_line(artifact: ReplayArtifact, config: DecodeConfig) -> str:
    seed = config.seed if config.seed is not None else artifact.seed
    cad = config.cadence
    fields = [
        ("streams", artifact.n_streams),
        ("stride_b", config.stride_b),
        ("horizon_l", config.horizon_l),
        ("tau", repr(_effective_tau(artifact, config))),
        ("read_delta", config.read_delta),
        ("cadence", f"{cad.mode}:{cad.interval_m}"),
        ("gate_override", "none" if config.gate_override is None else repr(config.gate_override)),
        ("agreement_mode", config.agreement_mode),
        ("regen_mode", config.regen_mode),
        ("seed", seed),
        ("noise", repr(config.note_noise_scale)),
    ]
    return "CONFIG " + " ".join(f"{k}={v}" for k, v in fields)


def run_parallel(
    artifact: ReplayArtifact, config: DecodeConfig | None = None, workers: int = 1
) -> DecodeTrace:
    """Decode every stream of an artifact to completion.

    The trace is a pure function of (artifact, config): worker count only
    changes wall-clock time.  Each round decodes up to stride_b tokens per
    stream against sibling views frozen at the last barrier, then publishes
    queued notes, commits or rolls back each stream, and snapshots the bus.
    """
    config = config or DecodeConfig()
    if config.n_streams is not None and config.n_streams != artifact.n_streams:
        raise ConfigError(
            f"config expects {config.n_streams} streams, artifact has {artifact.n_streams}"
        )
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    bus = NotesBus(artifact.d_note, capacity=config.bus_capacity, retain_k=config.bus_retain_k)
    states = make_stream_states(artifact, config)
    events: list[TraceRecord] = []
    rollback_states: list[tuple[int, int, tuple[int, ...]]] = []
    round_index = 0

    def run_stride(state: StreamState) -> list[TraceRecord]:
        local: list[TraceRecord] = []
        for _ in range(config.stride_b):
            if state.done:
                break
            _, evs = step_stream(state, artifact, config, round_index)
            local.extend(evs)
        return local

    while not all(s.done for s in states):
        masked = round_index in config.masked_strides
        for s in states:
            if masked:
                s.sibling_view = _SiblingView(np.zeros((0, artifact.d_note)), (), bus.read_lagged(s.stream_id, config.read_delta))
            else:
                snap = bus.read_lagged(s.stream_id, config.read_delta)
                rows, keys = stack_sibling_rows(snap)
                s.sibling_view = _SiblingView(rows, keys, snap)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                per_stream = list(pool.map(run_stride, states))
        else:
            per_stream = [run_stride(s) for s in states]
        for evs in per_stream:
            events.extend(evs)

        published = False
        for s in states:
            for emb, pos in s.pending_notes:
                note = bus.publish(s.stream_id, emb, pos)
                events.append(NoteEvent(round_index, s.stream_id, pos, note.version))
                published = True
            s.pending_notes.clear()
        for s in states:
            _, rb = check_and_rollback(s, artifact, config, round_index)
            if rb is not None:
                bus.tombstone_after(s.stream_id, rb.rolled_back_to)
                events.append(rb)
                rollback_states.append((s.stream_id, rb.rolled_back_to, tuple(s.token_log)))
        if published:
            clock = max(s.position for s in states)
            snap = bus.snapshot(created_at_token=clock)
            events.append(SnapshotEvent(round_index, snap.snapshot_version, snap.created_at_token))
        round_index += 1

    return DecodeTrace(
        config_line=_config_line(artifact, config),
        events=events,
        bus_lines=bus.dump_lines(),
        token_logs=tuple(tuple(s.token_log) for s in states),
        committed=tuple(s.committed_prefix for s in states),
        rollback_states=tuple(rollback_states),
        forced_commits=sum(s.forced_commits for s in states),
        margins=tuple(tuple(s.margins) for s in states),
    )
