"""Versioned cross-stream notes bus.

Streams publish fixed-width note embeddings; readers see their siblings'
notes either live or through immutable lagged snapshots.  Rolled-back notes
are tombstoned, never deleted, so a trace replays identically.  A capacity
cap triggers mean-pool compaction of the oldest notes per stream.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import CapacityError, ConfigError, ShapeError
from .kernels import Matrix, as_vector

SCHEMA_NOTE = "note"
SCHEMA_SUMMARY = "summary"


@dataclass(frozen=True)
class Note:
    """One published note: stream of origin, per-stream version, embedding."""

    stream_id: int
    version: int
    embedding: np.ndarray
    emitted_at_token: int
    schema_tag: str = SCHEMA_NOTE

    def __post_init__(self) -> None:
        emb = as_vector(self.embedding, "embedding").copy()
        emb.setflags(write=False)
        object.__setattr__(self, "embedding", emb)
        if self.stream_id < 0 or self.version < 0 or self.emitted_at_token < 0:
            raise ConfigError("stream_id, version and emitted_at_token must be non-negative")
        if self.schema_tag not in (SCHEMA_NOTE, SCHEMA_SUMMARY):
            raise ConfigError(f"unknown schema_tag {self.schema_tag!r}")


@dataclass(frozen=True)
class BusSnapshot:
    """Immutable view of the bus: per-stream tuples of notes, version-ordered."""

    snapshot_version: int
    created_at_token: int
    d_note: int
    entries: Mapping[int, tuple[Note, ...]]

    def total_rows(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def rows(self) -> Matrix:
        """All note embeddings stacked, streams ascending then versions ascending."""
        chunks = [n.embedding for sid in sorted(self.entries) for n in self.entries[sid]]
        if not chunks:
            return np.zeros((0, self.d_note))
        return np.stack(chunks)


class NotesBus:
    """Append-only store of notes with snapshots, lagged reads and compaction."""

    def __init__(self, d_note: int, capacity: int = 2560, retain_k: int = 8) -> None:
        if d_note <= 0:
            raise ConfigError("d_note must be positive")
        if capacity <= 0 or retain_k <= 0:
            raise ConfigError("capacity and retain_k must be positive")
        self.d_note = d_note
        self.capacity = capacity
        self.retain_k = retain_k
        self._active: dict[int, list[Note]] = {}
        self._tombstoned: list[Note] = []
        self._next_version: dict[int, int] = {}
        # The bus starts with an implicit empty snapshot so lagged reads are
        # well defined before any emission round completes.
        self._snapshots: list[BusSnapshot] = [BusSnapshot(0, 0, d_note, {})]

    # -- publishing ---------------------------------------------------------

    def publish(self, stream_id: int, embedding: np.ndarray, token_pos: int) -> Note:
        """Append a note for stream_id; returns the stored Note with its version."""
        emb = as_vector(embedding, "embedding")
        if emb.shape[0] != self.d_note:
            raise ShapeError(f"note width {emb.shape[0]} != bus width {self.d_note}")
        version = self._next_version.get(stream_id, 0)
        note = Note(stream_id, version, emb, token_pos)
        self._active.setdefault(stream_id, []).append(note)
        self._next_version[stream_id] = version + 1
        if self.visible_rows() > self.capacity:
            self.compact()
            if self.visible_rows() > self.capacity:
                self.compact(retain_k=1)
            if self.visible_rows() > self.capacity:
                raise CapacityError(
                    f"bus over capacity ({self.visible_rows()} rows > {self.capacity}) after compaction"
                )
        return note

    def visible_rows(self) -> int:
        return sum(len(v) for v in self._active.values())

    # -- snapshots and reads ------------------------------------------------

    def snapshot(self, created_at_token: int) -> BusSnapshot:
        """Record and return an immutable snapshot of all visible notes."""
        version = self._snapshots[-1].snapshot_version + 1
        entries = {sid: tuple(notes) for sid, notes in sorted(self._active.items()) if notes}
        snap = BusSnapshot(version, created_at_token, self.d_note, entries)
        self._snapshots.append(snap)
        return snap

    def read_lagged(self, reader_stream: int, delta: int = 0) -> BusSnapshot:
        """Sibling view for reader_stream.

        delta=0 is a live view of current visible notes; delta>=1 reads the
        snapshot delta emission rounds back (clamped to the initial empty
        snapshot).  The reader's own notes are always filtered out.
        """
        if delta < 0:
            raise ConfigError("delta must be non-negative")
        if delta == 0:
            base_entries: Mapping[int, tuple[Note, ...]] = {
                sid: tuple(notes) for sid, notes in sorted(self._active.items()) if notes
            }
            version = self._snapshots[-1].snapshot_version
            created = self._snapshots[-1].created_at_token
        else:
            snap = self._snapshots[max(0, len(self._snapshots) - delta)]
            base_entries = snap.entries
            version = snap.snapshot_version
            created = snap.created_at_token
        entries = {sid: notes for sid, notes in base_entries.items() if sid != reader_stream}
        return BusSnapshot(version, created, self.d_note, entries)

    # -- rollback and compaction --------------------------------------------

    def tombstone_after(self, stream_id: int, token_pos: int) -> int:
        """Tombstone stream_id's notes with emitted_at_token >= token_pos.

        Tombstoned notes leave the visible set but are archived for dumps, so
        replay bookkeeping is preserved.  Returns the number tombstoned.
        """
        notes = self._active.get(stream_id, [])
        keep = [n for n in notes if n.emitted_at_token < token_pos]
        dropped = [n for n in notes if n.emitted_at_token >= token_pos]
        if dropped:
            self._active[stream_id] = keep
            self._tombstoned.extend(dropped)
        return len(dropped)

    def compact(self, retain_k: int | None = None) -> int:
        """Mean-pool each stream's oldest notes into one summary note.

        Keeps the newest retain_k notes per stream verbatim; anything older is
        replaced by a single summary row carrying the newest summarized
        version.  Returns the number of summary notes created.
        """
        k = self.retain_k if retain_k is None else retain_k
        if k <= 0:
            raise ConfigError("retain_k must be positive")
        created = 0
        for sid, notes in self._active.items():
            if len(notes) <= k:
                continue
            old, recent = notes[:-k], notes[-k:]
            pooled = np.mean(np.stack([n.embedding for n in old]), axis=0)
            summary = Note(
                stream_id=sid,
                version=old[-1].version,
                embedding=pooled,
                emitted_at_token=old[-1].emitted_at_token,
                schema_tag=SCHEMA_SUMMARY,
            )
            self._active[sid] = [summary, *recent]
            created += 1
        return created

    # -- serialization ------------------------------------------------------

    def dump_lines(self) -> list[str]:
        """Canonical text dump: one line per note, ordered (stream_id, version).

        Tombstoned notes are included with a tombstone marker.
        """
        records: list[tuple[int, int, int, Note]] = []
        for notes in self._active.values():
            records.extend((n.stream_id, n.version, 0, n) for n in notes)
        records.extend((n.stream_id, n.version, 1, n) for n in self._tombstoned)
        records.sort(key=lambda r: (r[0], r[1], r[2]))
        lines = []
        for sid, version, tomb, n in records:
            vals = ",".join(repr(float(x)) for x in n.embedding)
            lines.append(
                f"BUSNOTE {sid} {version} {n.emitted_at_token} {n.schema_tag} "
                f"{'tombstoned' if tomb else 'live'} {vals}"
            )
        return lines

    def state_hash(self) -> str:
        """SHA-256 over the canonical dump."""
        digest = hashlib.sha256()
        for line in self.dump_lines():
            digest.update(line.encode("utf-8"))
            digest.update(b"\n")
        return digest.hexdigest()


def ragged_mask(snapshot: BusSnapshot, pad_to: int) -> tuple[Matrix, np.ndarray]:
    """Pack a snapshot into a padded matrix plus validity mask.

    Each stream contributes exactly pad_to rows (its notes version-ordered,
    then zero rows); streams are laid out in ascending stream_id.  The boolean
    mask marks real note rows.  pad_to must cover the largest per-stream count.
    """
    if pad_to < 0:
        raise ConfigError("pad_to must be non-negative")
    sids = sorted(snapshot.entries)
    counts = {sid: len(snapshot.entries[sid]) for sid in sids}
    if counts and max(counts.values()) > pad_to:
        raise ShapeError(f"pad_to={pad_to} smaller than largest stream count {max(counts.values())}")
    n_rows = len(sids) * pad_to
    matrix = np.zeros((n_rows, snapshot.d_note if sids else 0))
    mask = np.zeros(n_rows, dtype=bool)
    for i, sid in enumerate(sids):
        base = i * pad_to
        for j, note in enumerate(snapshot.entries[sid]):
            matrix[base + j] = note.embedding
            mask[base + j] = True
    return matrix, mask


def stack_sibling_rows(snapshot: BusSnapshot) -> tuple[Matrix, tuple[tuple[int, int], ...]]:
    """Dense sibling rows plus their (stream_id, version) keys, bus order."""
    keys = tuple(
        (sid, n.version) for sid in sorted(snapshot.entries) for n in snapshot.entries[sid]
    )
    return snapshot.rows(), keys


def load_bus_lines(lines: Iterable[str], capacity: int = 2560, retain_k: int = 8) -> NotesBus:
    """Rebuild a NotesBus from dump_lines output (inverse of dump_lines)."""
    parsed: list[tuple[int, int, int, str, bool, np.ndarray]] = []
    d_note = None
    for raw in lines:
        line = raw.strip()
        if not line:
            continue
        parts = line.split(" ")
        if len(parts) != 7 or parts[0] != "BUSNOTE":
            raise ValueError(f"malformed bus line: {line!r}")
        sid, version, token = int(parts[1]), int(parts[2]), int(parts[3])
        tag, status = parts[4], parts[5]
        emb = np.array([float(x) for x in parts[6].split(",")])
        if d_note is None:
            d_note = emb.shape[0]
        parsed.append((sid, version, token, tag, status == "tombstoned", emb))
    if d_note is None:
        raise ValueError("empty bus dump")
    bus = NotesBus(d_note, capacity=capacity, retain_k=retain_k)
    for sid, version, token, tag, tombstoned, emb in parsed:
        note = Note(sid, version, emb, token, tag)
        if tombstoned:
            bus._tombstoned.append(note)
        else:
            bus._active.setdefault(sid, []).append(note)
        nxt = bus._next_version.get(sid, 0)
        bus._next_version[sid] = max(nxt, version + 1)
    return bus
