"""On-disk formats: PPG1 waveform files, record manifests, atomic writes."""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .signal import SignalRecord

MAGIC = b"PPG1"
_HEADER = struct.Struct("<4sIQ")  # magic, u32 fs, u64 sample count -> 16 bytes
MANIFEST_VERSION = 1


def write_waveform(path, samples, fs: int) -> None:
    if int(fs) != fs or fs <= 0:
        raise DataError(f"waveform fs must be a positive integer, got {fs}")
    data = np.asarray(samples, dtype="<f4")
    atomic_write_bytes(path, _HEADER.pack(MAGIC, int(fs), data.size) + data.tobytes())


def read_waveform(path) -> tuple[np.ndarray, int]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, fs, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size :]
    if len(body) != 4 * count:
        raise DataError(f"{path}: header says {count} samples, body holds {len(body) / 4:g}")
    return np.frombuffer(body, dtype="<f4").astype(np.float64), fs


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    subject_id: str
    label: int
    fs: int


def write_manifest(path, entries: list[ManifestEntry]) -> None:
    lines = [f"#version={MANIFEST_VERSION}"]
    lines += [f"{e.path},{e.subject_id},{e.label},{e.fs}" for e in entries]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_manifest(path) -> list[ManifestEntry]:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != f"#version={MANIFEST_VERSION}":
        raise DataError(f"{path}: first line must be '#version={MANIFEST_VERSION}'")
    entries = []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        parts = line.strip().split(",")
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected path,subject_id,label,fs")
        fpath, sid, label, fs = parts
        if not sid:
            raise DataError(f"{path}:{lineno}: empty subject_id")
        if label not in ("0", "1"):
            raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
        try:
            fs_val = int(fs)
        except ValueError:
            raise DataError(f"{path}:{lineno}: fs must be an integer, got {fs!r}") from None
        entries.append(ManifestEntry(fpath, sid, int(label), fs_val))
    if not entries:
        raise DataError(f"{path}: manifest lists no records")
    return entries


def load_records(manifest_path) -> list[SignalRecord]:
    """Read every waveform a manifest lists; relative paths resolve against the manifest."""
    base = Path(manifest_path).parent
    records = []
    for e in read_manifest(manifest_path):
        p = Path(e.path)
        if not p.is_absolute():
            p = base / p
        samples, fs = read_waveform(p)
        if fs != e.fs:
            raise DataError(f"{p}: manifest fs {e.fs} disagrees with file fs {fs}")
        records.append(SignalRecord(e.subject_id, samples, float(fs), e.label, "file"))
    return records


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
