"""Trial-set persistence and text import.

Two binary containers live here: the "MITS" trial-set file (raw trials as
32-bit floats) and the "MITC" feature-tensor cache (64-bit planes tagged
with the grid identity they were built under).  A delimited-text import
bridges externally converted recordings into the MITS world.  All formats
are little-endian and round-trip bit-exactly; field layouts are documented
in docs/formats.md.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._binio import FormatError, Reader, Writer
from .featmap import FeatureTensor, GRID_ROWS, GRID_COLS, N_PLANES

__all__ = [
    "FormatError",
    "StaleCacheWarning",
    "Trial",
    "TrialSet",
    "read_trialset",
    "write_trialset",
    "import_text",
    "cache_tensors",
    "load_tensors",
]

CLASSES = ("left", "right")
SESSIONS = ("T", "E")

TRIALSET_MAGIC = b"MITS"
TRIALSET_VERSION = 1
CACHE_MAGIC = b"MITC"
CACHE_VERSION = 1

# Refuse to believe a single trial above this (corrupted length fields).
MAX_TRIAL_BYTES = 1 << 30


class StaleCacheWarning(UserWarning):
    """A tensor cache was built under a different grid than requested."""


@dataclass
class Trial:
    """One continuous recording: channels x samples, cue index, class."""

    data: np.ndarray
    cue_sample: int
    label: str

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError(f"trial data must be 2-D, got shape {self.data.shape}")
        if self.label not in CLASSES:
            raise ValueError(
                f"unknown label {self.label!r}; this pipeline is two-class "
                f"({', '.join(CLASSES)})")
        if self.cue_sample < 0:
            raise ValueError(f"cue sample must be non-negative, got {self.cue_sample}")


@dataclass
class TrialSet:
    """All trials of one subject-session recording."""

    subject: str
    session: str
    sample_rate: float
    channel_names: tuple[str, ...]
    trials: list[Trial] = field(default_factory=list)

    def __post_init__(self):
        self.channel_names = tuple(self.channel_names)
        if self.session not in SESSIONS:
            raise ValueError(f"session must be one of {SESSIONS}, got {self.session!r}")
        if not self.sample_rate > 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        n = len(self.channel_names)
        if len(set(self.channel_names)) != n:
            raise ValueError("duplicate channel names")
        for i, tr in enumerate(self.trials):
            if tr.data.shape[0] != n:
                raise ValueError(
                    f"trial {i} has {tr.data.shape[0]} channels, set declares {n}")

    @property
    def n_channels(self) -> int:
        return len(self.channel_names)


def write_trialset(tset: TrialSet, path) -> None:
    w = Writer()
    w.raw(TRIALSET_MAGIC)
    w.u32(TRIALSET_VERSION)
    w.string(tset.subject)
    w.string(tset.session)
    w.f64(tset.sample_rate)
    w.u32(tset.n_channels)
    for name in tset.channel_names:
        w.string(name)
    w.u32(len(tset.trials))
    for tr in tset.trials:
        w.u32(tr.data.shape[1])
        w.u32(tr.cue_sample)
        w.u8(CLASSES.index(tr.label))
        w.array(tr.data, "<f4")
    with open(path, "wb") as f:
        f.write(w.getvalue())


def read_trialset(path, max_trial_bytes: int = MAX_TRIAL_BYTES) -> TrialSet:
    with open(path, "rb") as f:
        r = Reader(f.read(), name=str(path))
    if r.take(4, "magic") != TRIALSET_MAGIC:
        raise FormatError(f"{path}: not a trial-set file (bad magic)")
    version = r.u32("version")
    if version != TRIALSET_VERSION:
        raise FormatError(f"{path}: unsupported trial-set version {version}")
    subject = r.string("subject")
    session = r.string("session")
    sample_rate = r.f64("sample rate")
    n_channels = r.u32("channel count")
    if n_channels == 0 or n_channels > 4096:
        raise FormatError(f"{path}: implausible channel count {n_channels}")
    names = tuple(r.string(f"channel name {i}") for i in range(n_channels))
    n_trials = r.u32("trial count")
    trials = []
    for t in range(n_trials):
        n_samples = r.u32(f"trial {t} sample count")
        if 4 * n_channels * n_samples > max_trial_bytes:
            raise FormatError(
                f"{path}: trial {t} declares {n_samples} samples x "
                f"{n_channels} channels, beyond the {max_trial_bytes}-byte cap")
        cue = r.u32(f"trial {t} cue sample")
        label_idx = r.u8(f"trial {t} label")
        if label_idx >= len(CLASSES):
            raise FormatError(f"{path}: trial {t} has unknown label code {label_idx}")
        data = r.array(n_channels * n_samples, "<f4", f"trial {t} samples",
                       shape=(n_channels, n_samples))
        trials.append(Trial(data=data, cue_sample=cue, label=CLASSES[label_idx]))
    r.expect_end()
    return TrialSet(subject=subject, session=session, sample_rate=sample_rate,
                    channel_names=names, trials=trials)


def import_text(directory, include_rejected: bool = True) -> TrialSet:
    """Read one recording from a manifest plus per-trial CSV files.

    The directory holds ``manifest.json`` (subject, session,
    sample_rate_hz, channels, and a trial list with file name, cue sample,
    and label; entries may carry ``"rejected": true``) and one CSV per
    trial, one row per channel.  With ``include_rejected=False``, marked
    trials are dropped at import.
    """
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"expected manifest file {manifest_path}")
    with open(manifest_path, encoding="utf-8") as f:
        manifest = json.load(f)
    for key in ("subject", "session", "sample_rate_hz", "channels", "trials"):
        if key not in manifest:
            raise ValueError(f"{manifest_path}: missing manifest key {key!r}")
    channels = tuple(manifest["channels"])
    n_channels = len(channels)

    trials = []
    for n, entry in enumerate(manifest["trials"]):
        for key in ("file", "cue_sample", "label"):
            if key not in entry:
                raise ValueError(
                    f"{manifest_path}: trial entry {n} is missing {key!r}")
        if entry.get("rejected", False) and not include_rejected:
            continue
        name = entry["file"]
        label = entry["label"]
        if label not in CLASSES:
            raise ValueError(
                f"{manifest_path}: trial file {name} has unknown label "
                f"{label!r} (two-class scope: {', '.join(CLASSES)})")
        path = directory / name
        rows = []
        with open(path, newline="", encoding="utf-8") as f:
            for lineno, row in enumerate(csv.reader(f), start=1):
                if not row:
                    continue
                try:
                    rows.append([float(cell) for cell in row])
                except ValueError:
                    raise ValueError(
                        f"{path}: line {lineno}: non-numeric cell") from None
        if len(rows) != n_channels:
            raise ValueError(
                f"{path}: {len(rows)} rows but manifest declares "
                f"{n_channels} channels (wrong orientation or shape)")
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise ValueError(f"{path}: ragged rows, widths {sorted(widths)}")
        try:
            cue = int(entry["cue_sample"])
        except (TypeError, ValueError):
            raise ValueError(
                f"{manifest_path}: trial file {name} has non-integer "
                f"cue_sample {entry['cue_sample']!r}") from None
        trials.append(Trial(data=np.array(rows, dtype=np.float32),
                            cue_sample=cue, label=label))
    return TrialSet(subject=manifest["subject"], session=manifest["session"],
                    sample_rate=float(manifest["sample_rate_hz"]),
                    channel_names=channels, trials=trials)


def cache_tensors(tensors, path, grid_hash: str, config_digest: str = "") -> None:
    """Write feature tensors with the grid identity they were built under."""
    w = Writer()
    w.raw(CACHE_MAGIC)
    w.u32(CACHE_VERSION)
    w.string(grid_hash)
    w.string(config_digest)
    w.u32(len(tensors))
    for t in tensors:
        w.u8(CLASSES.index(t.label))
        w.array(t.planes, "<f8")
    with open(path, "wb") as f:
        f.write(w.getvalue())


def load_tensors(path, expected_grid_hash: str | None = None):
    """Read a tensor cache; returns ``(tensors, grid_hash, config_digest)``.

    A grid-hash mismatch against ``expected_grid_hash`` warns (the cache
    may be stale) but still loads.
    """
    with open(path, "rb") as f:
        r = Reader(f.read(), name=str(path))
    if r.take(4, "magic") != CACHE_MAGIC:
        raise FormatError(f"{path}: not a tensor cache (bad magic)")
    version = r.u32("version")
    if version != CACHE_VERSION:
        raise FormatError(f"{path}: unsupported cache version {version}")
    grid_hash = r.string("grid hash")
    digest = r.string("config digest")
    if expected_grid_hash is not None and grid_hash != expected_grid_hash:
        warnings.warn(
            f"{path}: cache was built under grid {grid_hash}, current grid "
            f"is {expected_grid_hash}; tensors may be stale",
            StaleCacheWarning, stacklevel=2)
    n = r.u32("tensor count")
    cell_count = GRID_ROWS * GRID_COLS * N_PLANES
    tensors = []
    for i in range(n):
        label_idx = r.u8(f"tensor {i} label")
        if label_idx >= len(CLASSES):
            raise FormatError(f"{path}: tensor {i} has unknown label code {label_idx}")
        planes = r.array(cell_count, "<f8", f"tensor {i} planes",
                         shape=(GRID_ROWS, GRID_COLS, N_PLANES))
        tensors.append(FeatureTensor(planes=planes, label=CLASSES[label_idx]))
    r.expect_end()
    return tensors, grid_hash, digest
