"""
File formats.

Recording, binary (``.gbr``)::

    b"GBCIREC1\\n"
    one JSON header line: {"version": 1, "fs", "n_channels", "n_samples", "labels", "t0"}
    n_channels * n_samples little-endian float64, channel-major

Recording, text (any other suffix)::

    one JSON header line (same keys)
    one line per channel, samples separated by spaces (repr precision)

Cue schedule: one ``<Idle|Walk> <duration_s>`` pair per line.
State trace: ``t_s state pbar posterior`` rows.
Lines starting with ``#`` are comments in every text format.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .core import CueSchedule, Recording, State
from .decoder import StateTrace
from .errors import ConfigurationError, FormatError
from .training import atomic_write_text

__all__ = [
    "save_recording",
    "load_recording",
    "dumps_cues",
    "loads_cues",
    "save_cues",
    "load_cues",
    "dumps_trace",
    "loads_trace",
    "write_text",
]

MAGIC = b"GBCIREC1\n"
FORMAT_VERSION = 1
BINARY_SUFFIX = ".gbr"


def write_text(path, text: str) -> None:
    atomic_write_text(path, text)


def _header(rec: Recording) -> bytes:
    h = {
        "version": FORMAT_VERSION,
        "fs": rec.fs,
        "n_channels": rec.n_channels,
        "n_samples": rec.n_samples,
        "labels": list(rec.channel_labels),
        "t0": rec.t0,
    }
    return (json.dumps(h, sort_keys=True, separators=(",", ":")) + "\n").encode()


def _parse_header(line: bytes) -> dict:
    try:
        h = json.loads(line)
    except json.JSONDecodeError as e:
        raise FormatError(f"bad recording header: {e}") from None
    for key in ("version", "fs", "n_channels", "n_samples", "labels"):
        if key not in h:
            raise FormatError(f"recording header lacks {key!r}")
    if h["version"] != FORMAT_VERSION:
        raise FormatError(f"unsupported recording version {h['version']}")
    return h


def save_recording(path, rec: Recording, binary: bool | None = None) -> None:
    path = Path(path)
    if binary is None:
        binary = path.suffix == BINARY_SUFFIX
    if binary:
        data = MAGIC + _header(rec) + rec.samples.astype("<f8").tobytes(order="C")
    else:
        rows = [" ".join(repr(float(v)) for v in ch) for ch in rec.samples]
        data = _header(rec) + ("\n".join(rows) + "\n").encode()
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def load_recording(path) -> Recording:
    raw = Path(path).read_bytes()
    if raw.startswith(MAGIC):
        head, _, body = raw[len(MAGIC):].partition(b"\n")
        h = _parse_header(head)
        expected = 8 * h["n_channels"] * h["n_samples"]
        if len(body) != expected:
            raise FormatError(f"recording body has {len(body)} bytes, header implies {expected}")
        samples = np.frombuffer(body, dtype="<f8").reshape(h["n_channels"], h["n_samples"]).astype(np.float64)
    else:
        head, _, body = raw.partition(b"\n")
        h = _parse_header(head)
        rows = [r for r in body.decode().splitlines() if r.strip() and not r.startswith("#")]
        if len(rows) != h["n_channels"]:
            raise FormatError(f"recording has {len(rows)} channel rows, header says {h['n_channels']}")
        try:
            samples = np.array([[float(v) for v in r.split()] for r in rows])
        except ValueError as e:
            raise FormatError(f"bad sample value: {e}") from None
        if samples.shape != (h["n_channels"], h["n_samples"]):
            raise FormatError(f"sample matrix {samples.shape} does not match the header")
    return Recording(samples, h["fs"], tuple(h["labels"]), h.get("t0", 0.0))


def dumps_cues(cues: CueSchedule) -> str:
    return "".join(f"{s.label} {d!r}\n" for s, d in cues.entries)


def loads_cues(text: str) -> CueSchedule:
    entries = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"cue line {n}: expected '<state> <duration>', got {line!r}")
        try:
            entries.append((State.parse(parts[0]), float(parts[1])))
        except ValueError as e:
            raise FormatError(f"cue line {n}: {e}") from None
    try:
        return CueSchedule(tuple(entries))
    except ConfigurationError as e:
        raise FormatError(f"bad cue schedule: {e}") from None


def save_cues(path, cues: CueSchedule) -> None:
    write_text(path, dumps_cues(cues))


def load_cues(path) -> CueSchedule:
    return loads_cues(Path(path).read_text())


def dumps_trace(trace: StateTrace) -> str:
    raw = trace.raw if trace.raw is not None else np.full(len(trace), np.nan)
    lines = [f"# gaitbci state trace v1 step={trace.step!r}", "# t_s state pbar posterior"]
    for t, s, pb, p in zip(trace.times, trace.states, trace.posteriors, raw):
        lines.append(f"{float(t)!r} {State(int(s)).label} {float(pb)!r} {float(p)!r}")
    return "\n".join(lines) + "\n"


def loads_trace(text: str) -> StateTrace:
    step = None
    rows = []
    for line in text.splitlines():
        if line.startswith("#"):
            if "step=" in line:
                step = float(line.split("step=", 1)[1].split()[0])
            continue
        if line.strip():
            parts = line.split()
            if len(parts) != 4:
                raise FormatError(f"bad trace row {line!r}")
            rows.append((float(parts[0]), int(State.parse(parts[1])), float(parts[2]), float(parts[3])))
    if step is None:
        raise FormatError("state trace lacks its step header")
    a = np.array(rows, dtype=object).reshape(-1, 4)
    raw = np.array(a[:, 3], dtype=float)
    return StateTrace(step, np.array(a[:, 0], dtype=float), np.array(a[:, 1], dtype=np.int8),
                      np.array(a[:, 2], dtype=float), None if np.isnan(raw).all() and len(raw) else raw)
