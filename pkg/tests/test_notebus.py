"""Notes bus: versioning, snapshots, lagged reads, tombstones, compaction."""

from __future__ import annotations

import numpy as np
import pytest

from pdtcoord.errors import CapacityError, ConfigError, ShapeError
from pdtcoord.notebus import (
    SCHEMA_SUMMARY,
    Note,
    NotesBus,
    load_bus_lines,
    ragged_mask,
    stack_sibling_rows,
)


def fill(bus: NotesBus, stream: int, count: int, base: float = 0.0) -> None:
    for i in range(count):
        bus.publish(stream, np.full(bus.d_note, base + i), token_pos=i * 4)


def test_publish_assigns_per_stream_versions():
    bus = NotesBus(d_note=2)
    n0 = bus.publish(0, np.zeros(2), 0)
    n1 = bus.publish(0, np.ones(2), 4)
    n2 = bus.publish(1, np.ones(2), 4)
    assert (n0.version, n1.version, n2.version) == (0, 1, 0)


def test_publish_width_mismatch():
    bus = NotesBus(d_note=3)
    with pytest.raises(ShapeError):
        bus.publish(0, np.zeros(4), 0)


def test_note_embedding_is_frozen():
    note = Note(0, 0, np.array([1.0, 2.0]), 0)
    with pytest.raises(ValueError):
        note.embedding[0] = 9.0


def test_live_read_excludes_reader_and_tombstoned():
    bus = NotesBus(d_note=2)
    fill(bus, 0, 2)
    fill(bus, 1, 2, base=10)
    view = bus.read_lagged(0, delta=0)
    assert sorted(view.entries) == [1]
    bus.tombstone_after(1, token_pos=4)
    view2 = bus.read_lagged(0, delta=0)
    assert view2.total_rows() == 1


def test_lagged_read_is_immutable_history():
    bus = NotesBus(d_note=2)
    fill(bus, 1, 2)
    bus.snapshot(created_at_token=8)
    fill(bus, 1, 3, base=50)
    # delta=1 sees only what the last recorded snapshot saw; live sees all.
    assert bus.read_lagged(0, delta=1).total_rows() == 2
    assert bus.read_lagged(0, delta=0).total_rows() == 5
    bus.snapshot(created_at_token=20)
    assert bus.read_lagged(0, delta=1).total_rows() == 5
    assert bus.read_lagged(0, delta=2).total_rows() == 2


def test_lagged_read_clamps_to_initial_empty():
    bus = NotesBus(d_note=2)
    fill(bus, 1, 3)
    assert bus.read_lagged(0, delta=99).total_rows() == 0
    with pytest.raises(ConfigError):
        bus.read_lagged(0, delta=-1)


def test_snapshot_versions_increment():
    bus = NotesBus(d_note=2)
    s1 = bus.snapshot(0)
    s2 = bus.snapshot(5)
    assert (s1.snapshot_version, s2.snapshot_version) == (1, 2)


def test_tombstone_is_token_position_threshold():
    bus = NotesBus(d_note=2)
    fill(bus, 0, 4)  # emitted at 0, 4, 8, 12
    assert bus.tombstone_after(0, token_pos=8) == 2
    assert bus.visible_rows() == 2
    # Already-tombstoned notes are not double counted.
    assert bus.tombstone_after(0, token_pos=0) == 2
    assert bus.visible_rows() == 0


def test_ragged_mask_layout():
    bus = NotesBus(d_note=3)
    fill(bus, 0, 2)
    fill(bus, 1, 3, base=10)
    snap = bus.snapshot(12)
    matrix, mask = ragged_mask(snap, pad_to=3)
    assert matrix.shape == (6, 3)
    assert mask.sum() == 5
    assert (~mask).sum() == 1
    # Stream 0 occupies rows 0..2 with one pad row; stream 1 rows 3..5 full.
    assert list(mask) == [True, True, False, True, True, True]
    assert np.array_equal(matrix[3], np.full(3, 10.0))
    assert np.array_equal(matrix[2], np.zeros(3))


def test_ragged_mask_pad_too_small():
    bus = NotesBus(d_note=2)
    fill(bus, 0, 3)
    snap = bus.snapshot(8)
    with pytest.raises(ShapeError):
        ragged_mask(snap, pad_to=2)


def test_ragged_mask_empty_snapshot():
    bus = NotesBus(d_note=2)
    snap = bus.snapshot(0)
    matrix, mask = ragged_mask(snap, pad_to=4)
    assert matrix.shape[0] == 0
    assert mask.shape[0] == 0


def test_stack_sibling_rows_order():
    bus = NotesBus(d_note=2)
    bus.publish(2, np.full(2, 9.0), 0)
    bus.publish(0, np.full(2, 1.0), 0)
    bus.publish(0, np.full(2, 2.0), 4)
    rows, keys = stack_sibling_rows(bus.read_lagged(5, delta=0))
    assert keys == ((0, 0), (0, 1), (2, 0))
    assert rows[0, 0] == 1.0 and rows[2, 0] == 9.0


def test_compact_mean_pools_oldest():
    bus = NotesBus(d_note=2, retain_k=2)
    fill(bus, 0, 5)  # values 0..4
    created = bus.compact()
    assert created == 1
    view = bus.read_lagged(9, delta=0)
    notes = view.entries[0]
    assert len(notes) == 3
    summary = notes[0]
    assert summary.schema_tag == SCHEMA_SUMMARY
    assert summary.version == 2  # newest summarized version
    assert np.allclose(summary.embedding, 1.0)  # mean of 0, 1, 2
    assert [n.version for n in notes[1:]] == [3, 4]


def test_capacity_triggers_compaction_then_error():
    bus = NotesBus(d_note=2, capacity=4, retain_k=2)
    fill(bus, 0, 5)
    # Five publishes exceeded capacity 4 and compacted down to 3 rows.
    assert bus.visible_rows() == 3
    # Compaction floor is summary + newest per stream, so two streams can
    # never fit in a 2-row bus.
    tiny = NotesBus(d_note=2, capacity=2, retain_k=1)
    fill(tiny, 0, 3)
    assert tiny.visible_rows() == 2
    with pytest.raises(CapacityError):
        tiny.publish(1, np.zeros(2), 0)


def test_dump_ordering_and_roundtrip():
    bus = NotesBus(d_note=2)
    bus.publish(1, np.array([1.5, -2.25]), 4)
    bus.publish(0, np.array([0.1, 0.2]), 0)
    bus.publish(0, np.array([0.3, 0.4]), 8)
    bus.tombstone_after(0, token_pos=8)
    lines = bus.dump_lines()
    ids = [tuple(line.split()[1:3]) for line in lines]
    assert ids == sorted(ids)
    clone = load_bus_lines(lines)
    assert clone.dump_lines() == lines
    assert clone.state_hash() == bus.state_hash()


def test_state_hash_reflects_content():
    a = NotesBus(d_note=2)
    b = NotesBus(d_note=2)
    fill(a, 0, 2)
    fill(b, 0, 2)
    assert a.state_hash() == b.state_hash()
    b.publish(1, np.zeros(2), 0)
    assert a.state_hash() != b.state_hash()


def test_bus_config_validation():
    with pytest.raises(ConfigError):
        NotesBus(d_note=0)
    with pytest.raises(ConfigError):
        NotesBus(d_note=2, capacity=0)
