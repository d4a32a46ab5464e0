"""Indexed frame archive and embedding sidecar.

Archive layout (all integers little-endian)::

    header   32 B   magic "FAFV0001" | frame_count u32 | fps_millis u32
                    | duration_ms u64 | index_offset u64
    payloads        opaque frame blobs, back to back
    index    20 B * frame_count: timestamp_ms u64 | payload_offset u64 | payload_len u32

Sidecar layout::

    header   16 B   magic "FAEM0001" | count u32 | dim u32
    records         timestamp_ms u64 | dim * float32

Readers load header and index eagerly and touch payload bytes only when a
frame is requested. Every byte pulled off disk is counted in
:class:`ReadAccounting`.
"""

from __future__ import annotations

import bisect
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Optional, Sequence

import numpy as np

from .evidence import Embedding, FrameRef, RetrievedWindow

ARCHIVE_MAGIC = b"FAFV0001"
SIDECAR_MAGIC = b"FAEM0001"
HEADER = struct.Struct("<8sIIQQ")
INDEX_ENTRY = struct.Struct("<QQI")
SIDECAR_HEADER = struct.Struct("<8sII")
SIDECAR_TS = struct.Struct("<Q")


class ArchiveFormatError(ValueError):
    pass


class ArchiveCorruptionError(ArchiveFormatError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class RetrievalError(IOError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class FrameArchiveHeader:
    magic: bytes
    frame_count: int
    fps_millis: int
    duration_ms: int
    index_offset: int

    @property
    def fps(self) -> float:
        return self.fps_millis / 1000.0

    @property
    def duration_sec(self) -> float:
        return self.duration_ms / 1000.0


@dataclass(frozen=True)
class FrameIndexEntry:
    timestamp_ms: int
    payload_offset: int
    payload_len: int


@dataclass
class ReadAccounting:
    bytes_read: int = 0
    payload_bytes: int = 0
    frames_decoded: int = 0
    seeks: int = 0

    def snapshot(self) -> "ReadAccounting":
        return ReadAccounting(self.bytes_read, self.payload_bytes, self.frames_decoded, self.seeks)

    def since(self, before: "ReadAccounting") -> dict:
        return {
            "bytes_read": self.bytes_read - before.bytes_read,
            "payload_bytes": self.payload_bytes - before.payload_bytes,
            "frames_decoded": self.frames_decoded - before.frames_decoded,
            "seeks": self.seeks - before.seeks,
        }


def write_archive(frames: Sequence[tuple[int, bytes]], fps_millis: int, path,
                  duration_ms: Optional[int] = None) -> None:
    """Write ``(timestamp_ms, payload)`` pairs.

    ``duration_ms`` defaults to the last timestamp plus one frame interval.
    """
    if not frames:
        raise ArchiveFormatError("archive needs at least one frame")
    if fps_millis <= 0:
        raise ArchiveFormatError("fps_millis must be > 0")
    prev = -1
    for ts, _ in frames:
        if ts < 0 or ts <= prev:
            raise ArchiveFormatError(f"timestamps must be strictly increasing, got {ts} after {prev}")
        prev = ts
    last = frames[-1][0]
    if duration_ms is None:
        duration_ms = last + round(1_000_000 / fps_millis)
    if duration_ms < last:
        raise ArchiveFormatError("duration_ms shorter than last frame timestamp")

    entries = []
    offset = HEADER.size
    for ts, payload in frames:
        entries.append((ts, offset, len(payload)))
        offset += len(payload)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(ARCHIVE_MAGIC, len(frames), fps_millis, duration_ms, offset))
        for _, payload in frames:
            fh.write(payload)
        for e in entries:
            fh.write(INDEX_ENTRY.pack(*e))


class ArchiveReader:
    """One handle over one archive file. Not shared across threads."""

    def __init__(self, path, source_id: Optional[str] = None):
        self.path = Path(path)
        self.source_id = source_id if source_id is not None else self.path.stem
        self.accounting = ReadAccounting()
        self._fh: BinaryIO = open(self.path, "rb")
        try:
            self.file_size = os.fstat(self._fh.fileno()).st_size
            self.header = self._read_header()
            self.index = self._read_index()
        except BaseException:
            self._fh.close()
            raise
        self.frames = [
            FrameRef(self.source_id, i, e.timestamp_ms / 1000.0, e.payload_offset, e.payload_len)
            for i, e in enumerate(self.index)
        ]
        self._times = [f.timestamp_sec for f in self.frames]

    def _read(self, offset: int, n: int) -> bytes:
        try:
            self._fh.seek(offset)
            data = self._fh.read(n)
        except OSError as exc:
            raise RetrievalError(str(exc), offset) from exc
        self.accounting.seeks += 1
        self.accounting.bytes_read += len(data)
        return data

    def _read_header(self) -> FrameArchiveHeader:
        raw = self._read(0, HEADER.size)
        if len(raw) < HEADER.size or raw[:8] != ARCHIVE_MAGIC:
            raise ArchiveFormatError(f"{self.path}: bad magic {raw[:8]!r}")
        h = FrameArchiveHeader(*HEADER.unpack(raw))
        if h.frame_count < 1:
            raise ArchiveFormatError(f"{self.path}: frame_count must be >= 1")
        if h.fps_millis < 1:
            raise ArchiveFormatError(f"{self.path}: fps_millis must be >= 1")
        return h

    def _read_index(self) -> list[FrameIndexEntry]:
        h = self.header
        need = h.frame_count * INDEX_ENTRY.size
        if h.index_offset < HEADER.size:
            raise ArchiveCorruptionError("index offset inside header", h.index_offset)
        raw = self._read(h.index_offset, need)
        if len(raw) < need:
            raise ArchiveCorruptionError(
                f"truncated index: expected {need} bytes, got {len(raw)}", h.index_offset + len(raw))
        entries = []
        prev_ts, prev_end = -1, HEADER.size
        for i, (ts, off, ln) in enumerate(INDEX_ENTRY.iter_unpack(raw)):
            at = h.index_offset + i * INDEX_ENTRY.size
            if ts <= prev_ts:
                raise ArchiveCorruptionError(f"index entry {i}: timestamps not increasing", at)
            if off < prev_end:
                raise ArchiveCorruptionError(f"index entry {i}: payload overlaps previous", at)
            if off + ln > h.index_offset or off + ln > self.file_size:
                raise ArchiveCorruptionError(f"index entry {i}: payload past end of data", at)
            entries.append(FrameIndexEntry(ts, off, ln))
            prev_ts, prev_end = ts, off + ln
        if entries[-1].timestamp_ms > h.duration_ms:
            raise ArchiveCorruptionError("last timestamp exceeds duration", h.index_offset)
        return entries

    @property
    def duration_sec(self) -> float:
        return self.header.duration_sec

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def frame_at_ms(self, timestamp_ms: int) -> Optional[FrameRef]:
        i = bisect.bisect_left(self._times, timestamp_ms / 1000.0)
        if i < len(self.index) and self.index[i].timestamp_ms == timestamp_ms:
            return self.frames[i]
        return None

    def window_bounds(self, target_sec: float, half_width_sec: float) -> tuple[float, float]:
        if not half_width_sec > 0:
            raise ValueError("half width must be > 0")
        return max(0.0, target_sec - half_width_sec), min(self.duration_sec, target_sec + half_width_sec)

    def locate(self, lo_sec: float, hi_sec: float) -> list[FrameRef]:
        """Index-only lookup of frames with lo <= t <= hi. No payload I/O."""
        i = bisect.bisect_left(self._times, lo_sec)
        j = bisect.bisect_right(self._times, hi_sec)
        return self.frames[i:j]

    def read_frames(self, frames: Sequence[FrameRef]) -> list[bytes]:
        """Payloads for ``frames`` (in the given order), one seek per contiguous run."""
        order = sorted(range(len(frames)), key=lambda i: frames[i].index)
        out: list[Optional[bytes]] = [None] * len(frames)
        run: list[int] = []

        def flush():
            if not run:
                return
            first, last = frames[run[0]], frames[run[-1]]
            start = first.payload_offset
            total = last.payload_offset + last.payload_len - start
            data = self._read(start, total)
            if len(data) < total:
                raise RetrievalError("short payload read", start + len(data))
            self.accounting.payload_bytes += total
            for k in run:
                f = frames[k]
                rel = f.payload_offset - start
                out[k] = data[rel:rel + f.payload_len]
                self.accounting.frames_decoded += 1
            run.clear()

        for k in order:
            f = frames[k]
            if f.source_id != self.source_id:
                raise ValueError(f"frame from {f.source_id!r} requested from {self.source_id!r}")
            if run:
                p = frames[run[-1]]
                same = f.index == p.index
                adjacent = f.index == p.index + 1 and f.payload_offset == p.payload_offset + p.payload_len
                if not (same or adjacent):
                    flush()
            run.append(k)
        flush()
        return out  # type: ignore[return-value]

    def decode_window(self, target_sec: float, half_width_sec: float,
                      grounding_source: Optional[str] = None) -> RetrievedWindow:
        lo, hi = self.window_bounds(target_sec, half_width_sec)
        frames = self.locate(lo, hi)
        payloads = self.read_frames(frames)
        return RetrievedWindow(target_sec, half_width_sec, tuple(frames), grounding_source,
                               tuple(payloads), lo, hi)

    def preload_all(self) -> list[tuple[FrameRef, bytes]]:
        return list(zip(self.frames, self.read_frames(self.frames)))


def open_archive(path, source_id: Optional[str] = None):
    r = ArchiveReader(path, source_id)
    return r, r.header, r.index


def decode_window(reader: ArchiveReader, target_sec: float, half_width_sec: float,
                  grounding_source: Optional[str] = None) -> RetrievedWindow:
    return reader.decode_window(target_sec, half_width_sec, grounding_source)


def preload_all(reader: ArchiveReader) -> list[tuple[FrameRef, bytes]]:
    return reader.preload_all()


def write_embedding_sidecar(records: Iterable[tuple[int, Sequence[float]]], path) -> None:
    records = list(records)
    if not records:
        raise ArchiveFormatError("sidecar needs at least one record")
    dim = len(records[0][1])
    with open(path, "wb") as fh:
        fh.write(SIDECAR_HEADER.pack(SIDECAR_MAGIC, len(records), dim))
        for ts, vec in records:
            v = np.asarray(vec, dtype="<f4")
            if v.shape != (dim,):
                raise ArchiveFormatError(f"record at {ts} ms has shape {v.shape}, expected ({dim},)")
            fh.write(SIDECAR_TS.pack(ts))
            fh.write(v.tobytes())


def read_embedding_sidecar(path) -> list[tuple[int, Embedding]]:
    raw = Path(path).read_bytes()
    if len(raw) < SIDECAR_HEADER.size or raw[:8] != SIDECAR_MAGIC:
        raise ArchiveFormatError(f"{path}: bad sidecar magic {raw[:8]!r}")
    _, count, dim = SIDECAR_HEADER.unpack_from(raw)
    if dim < 1:
        raise ArchiveFormatError(f"{path}: dim must be >= 1")
    rec = SIDECAR_TS.size + 4 * dim
    body = len(raw) - SIDECAR_HEADER.size
    if body != count * rec:
        raise ArchiveFormatError(
            f"{path}: header declares {count} records of {rec} B, body has {body} B (truncated or padded)")
    out = []
    for i in range(count):
        off = SIDECAR_HEADER.size + i * rec
        (ts,) = SIDECAR_TS.unpack_from(raw, off)
        vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=off + SIDECAR_TS.size)
        out.append((ts, Embedding(vec.astype(np.float64))))
    return out
