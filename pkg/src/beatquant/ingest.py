"""Standard MIDI File and beat-annotation readers.

Only what the quantizer needs is decoded: note on/off, tempo (0x51) and
time signature (0x58) meta events.  Everything else is skipped by length.
"""

from __future__ import annotations

import logging
import struct
from bisect import bisect_right
from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Iterable

from .core import (
    BeatAnnotations,
    PerformanceNote,
    PerformanceSequence,
)

log = logging.getLogger(__name__)

DEFAULT_TEMPO = 500_000  # microseconds per quarter, 120 BPM


class MidiParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class AnnotationParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class RawMidiEvent:
    tick: int
    kind: str  # note-on | note-off | tempo | time-signature | other
    channel: int = 0
    data: tuple = ()


def _read_varlen(buf: bytes, pos: int, end: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= end:
            raise MidiParseError("truncated variable-length quantity", pos)
        byte = buf[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise MidiParseError("variable-length quantity longer than 4 bytes", pos)


def _parse_track(buf: bytes, pos: int, end: int) -> list[RawMidiEvent]:
    events = []
    tick = 0
    status = None
    while pos < end:
        delta, pos = _read_varlen(buf, pos, end)
        tick += delta
        if pos >= end:
            raise MidiParseError("truncated event", pos)
        byte = buf[pos]
        if byte & 0x80:
            status = byte
            pos += 1
        elif status is None:
            raise MidiParseError("running status without a previous status byte", pos)

        if status == 0xFF:
            if pos >= end:
                raise MidiParseError("truncated meta event", pos)
            meta_type = buf[pos]
            length, pos = _read_varlen(buf, pos + 1, end)
            if pos + length > end:
                raise MidiParseError("meta event overruns track", pos)
            payload = buf[pos:pos + length]
            pos += length
            # meta and sysex events cancel running status
            status = None
            if meta_type == 0x51 and length == 3:
                events.append(RawMidiEvent(tick, "tempo", data=(int.from_bytes(payload, "big"),)))
            elif meta_type == 0x58 and length >= 2:
                events.append(RawMidiEvent(tick, "time-signature", data=(payload[0], 2 ** payload[1])))
            elif meta_type == 0x2F:
                events.append(RawMidiEvent(tick, "other", data=("end-of-track",)))
                break
            continue
        if status in (0xF0, 0xF7):
            length, pos = _read_varlen(buf, pos, end)
            pos += length
            status = None
            continue

        kind = status & 0xF0
        channel = status & 0x0F
        nbytes = 1 if kind in (0xC0, 0xD0) else 2
        if pos + nbytes > end:
            raise MidiParseError("truncated channel event", pos)
        data = tuple(buf[pos:pos + nbytes])
        pos += nbytes
        if kind == 0x90 and data[1] > 0:
            events.append(RawMidiEvent(tick, "note-on", channel, data))
        elif kind == 0x80 or (kind == 0x90 and data[1] == 0):
            events.append(RawMidiEvent(tick, "note-off", channel, data))
    return events


def read_midi_events(data: bytes) -> tuple[int, list[list[RawMidiEvent]]]:
    """Split an SMF into (ticks per quarter, per-track event lists)."""
    if len(data) < 14 or data[:4] != b"MThd":
        raise MidiParseError("missing MThd header", 0)
    (hlen,) = struct.unpack(">I", data[4:8])
    if hlen < 6 or 8 + hlen > len(data):
        raise MidiParseError("bad header length", 4)
    fmt, ntracks, division = struct.unpack(">HHH", data[8:14])
    if fmt not in (0, 1):
        raise MidiParseError(f"unsupported SMF format {fmt}", 8)
    if division & 0x8000:
        raise MidiParseError("SMPTE time division is not supported", 12)
    if division == 0:
        raise MidiParseError("zero ticks per quarter", 12)

    pos = 8 + hlen
    tracks = []
    while pos < len(data) and len(tracks) < ntracks:
        if pos + 8 > len(data):
            raise MidiParseError("truncated chunk header", pos)
        chunk_id = data[pos:pos + 4]
        (length,) = struct.unpack(">I", data[pos + 4:pos + 8])
        start, end = pos + 8, pos + 8 + length
        if end > len(data):
            raise MidiParseError("chunk overruns file", pos)
        if chunk_id == b"MTrk":
            tracks.append(_parse_track(data, start, end))
        pos = end
    if len(tracks) != ntracks:
        raise MidiParseError(f"expected {ntracks} tracks, found {len(tracks)}", pos)
    return division, tracks


def _tempo_map(events: Iterable[RawMidiEvent], ppq: int):
    """Return a tick->seconds converter built from tempo events."""
    changes = sorted((e.tick, e.data[0]) for e in events if e.kind == "tempo")
    # (tick, seconds at tick, tempo from tick)
    segments = [(0, 0.0, DEFAULT_TEMPO)]
    for tick, tempo in changes:
        t0, s0, tempo0 = segments[-1]
        seconds = s0 + (tick - t0) * tempo0 / 1e6 / ppq
        if tick == t0:
            segments[-1] = (t0, s0, tempo)
        else:
            segments.append((tick, seconds, tempo))

    starts = [s[0] for s in segments]

    def to_seconds(tick: int) -> float:
        t0, s0, tempo = segments[bisect_right(starts, tick) - 1]
        return s0 + (tick - t0) * tempo / 1e6 / ppq

    return to_seconds


def parse_midi(data: bytes) -> PerformanceSequence:
    """Parse SMF bytes into an onset-sorted single-stream performance."""
    ppq, tracks = read_midi_events(data)
    to_seconds = _tempo_map((e for t in tracks for e in t), ppq)

    notes = []
    dangling = 0
    for events in tracks:
        # offs before ons at equal ticks so repeated pitches never get zero length
        ordered = sorted(
            enumerate(events), key=lambda ie: (ie[1].tick, ie[1].kind != "note-off", ie[0])
        )
        pending: dict[tuple[int, int], deque[int]] = defaultdict(deque)
        last_tick = events[-1].tick if events else 0
        for _, ev in ordered:
            if ev.kind == "note-on":
                pending[(ev.channel, ev.data[0])].append(ev.tick)
            elif ev.kind == "note-off":
                queue = pending.get((ev.channel, ev.data[0]))
                if queue:
                    notes.append((ev.data[0], queue.popleft(), ev.tick))
        for (channel, pitch), queue in pending.items():
            for on in queue:
                dangling += 1
                notes.append((pitch, on, last_tick))
    if dangling:
        log.warning("%d note-on events without note-off closed at end of track", dangling)

    out = []
    for pitch, on, off in notes:
        onset = to_seconds(on)
        offset = to_seconds(off)
        if offset <= onset:
            continue
        out.append(PerformanceNote(pitch, onset, offset - onset))
    return PerformanceSequence.from_unsorted(out, dangling)


def _varlen(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def write_midi(perf: PerformanceSequence, ppq: int = 480, tempo: int = DEFAULT_TEMPO) -> bytes:
    """Write a format-0 SMF at a constant tempo (debugging and fixtures)."""
    per_second = ppq * 1e6 / tempo
    events = []
    for n in perf.notes:
        on = round(n.onset_s * per_second)
        off = max(round(n.offset_s * per_second), on + 1)
        events.append((off, 0, bytes([0x80, n.pitch, 0])))
        events.append((on, 1, bytes([0x90, n.pitch, 80])))
    events.sort(key=lambda e: (e[0], e[1]))

    body = bytearray(b"\x00\xff\x51\x03" + tempo.to_bytes(3, "big"))
    now = 0
    for tick, _, msg in events:
        body += _varlen(tick - now) + msg
        now = tick
    body += b"\x00\xff\x2f\x00"
    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, ppq)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def parse_annotations(text: str) -> BeatAnnotations:
    """Parse tab-separated ``time time label`` beat annotation lines.

    Labels beginning with ``db`` mark downbeats and may carry a time
    signature after a comma (``db,6/8``); labels beginning with ``b`` mark
    beats.  The latest signature carries forward to later downbeats.
    """
    beats: list[float] = []
    downbeats: list[float] = []
    sig_map: list[tuple[int, int, int]] = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) < 3:
            raise AnnotationParseError(f"expected 3 fields, got {len(fields)}", lineno)
        try:
            time = float(fields[0])
        except ValueError:
            raise AnnotationParseError(f"bad time value {fields[0]!r}", lineno) from None
        label = fields[2]
        kind, _, rest = label.partition(",")
        if kind not in ("db", "b"):
            log.warning("line %d: ignoring unknown label %r", lineno, label)
            continue
        if beats and time <= beats[-1]:
            raise AnnotationParseError("times must be strictly increasing", lineno)
        beats.append(time)
        if kind == "db":
            sig_field = rest.split(",")[0] if rest else ""
            if "/" in sig_field:
                num, den = sig_field.split("/")
                if not num.isdigit() or not den.isdigit():
                    raise AnnotationParseError(f"bad time signature {sig_field!r}", lineno)
                current = (int(num), int(den))
            if current is not None and (not sig_map or sig_map[-1][1:] != current):
                sig_map.append((len(downbeats), *current))
            downbeats.append(time)
    return BeatAnnotations(tuple(beats), tuple(downbeats), tuple(sig_map))


def format_annotations(beats: BeatAnnotations) -> str:
    """Inverse of :func:`parse_annotations`."""
    down = set(beats.downbeats)
    sigs = {k: (n, d) for k, n, d in beats.time_signature_map}
    lines = []
    k = 0
    for t in beats.beats:
        if t in down:
            label = "db"
            if k in sigs:
                label += ",%d/%d" % sigs[k]
            k += 1
        else:
            label = "b"
        lines.append(f"{t!r}\t{t!r}\t{label}")
    return "\n".join(lines) + "\n"
