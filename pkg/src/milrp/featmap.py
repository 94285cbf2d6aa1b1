"""Scalp-grid projection and the 6x7x12 max/min feature tensor.

The 22 montage channels map onto a fixed 6x7 grid; for each of the six
analysis bands the per-channel maximum and minimum over the two-second
segment fill one plane pair, giving 12 planes per trial.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import dsp

__all__ = [
    "GRID_ROWS",
    "GRID_COLS",
    "N_PLANES",
    "CLASSES",
    "ChannelGrid",
    "FeatureTensor",
    "default_grid",
    "extremes",
    "build_feature_tensor",
    "tensors_from_trialset",
]

GRID_ROWS = 6
GRID_COLS = 7
N_PLANES = 12
CLASSES = ("left", "right")

# Fixed montage projection: the 22 channels of the two-class recordings,
# centered on the vertex column.  20 of the 42 cells stay empty.
_PLACEMENTS = {
    "Fz": (0, 3),
    "FC3": (1, 1), "FC1": (1, 2), "FCz": (1, 3), "FC2": (1, 4), "FC4": (1, 5),
    "C5": (2, 0), "C3": (2, 1), "C1": (2, 2), "Cz": (2, 3),
    "C2": (2, 4), "C4": (2, 5), "C6": (2, 6),
    "CP3": (3, 1), "CP1": (3, 2), "CPz": (3, 3), "CP2": (3, 4), "CP4": (3, 5),
    "P1": (4, 2), "Pz": (4, 3), "P2": (4, 4),
    "POz": (5, 3),
}


@dataclass(frozen=True)
class ChannelGrid:
    """Injective mapping channel name -> (row, col) on the 6x7 grid."""

    placements: dict[str, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self):
        seen = {}
        for name, (r, c) in self.placements.items():
            if not (0 <= r < GRID_ROWS and 0 <= c < GRID_COLS):
                raise ValueError(f"channel {name} placed off-grid at ({r}, {c})")
            if (r, c) in seen:
                raise ValueError(
                    f"channels {seen[(r, c)]} and {name} share cell ({r}, {c})")
            seen[(r, c)] = name

    def __len__(self) -> int:
        return len(self.placements)

    def position(self, channel: str) -> tuple[int, int]:
        return self.placements[channel]

    def hash(self) -> str:
        """Stable identity of the placement table, for cache validation."""
        canon = ";".join(f"{n}:{r},{c}"
                         for n, (r, c) in sorted(self.placements.items()))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class FeatureTensor:
    """One trial's 6x7x12 input map plus its class label.

    Plane ``2b`` holds band-b maxima and plane ``2b+1`` band-b minima,
    b running over the six bands in bank order.  Unplaced cells are 0.
    """

    planes: np.ndarray
    label: str

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=np.float64)
        if self.planes.shape != (GRID_ROWS, GRID_COLS, N_PLANES):
            raise ValueError(
                f"feature tensor must be {GRID_ROWS}x{GRID_COLS}x{N_PLANES}, "
                f"got {self.planes.shape}")
        if self.label not in CLASSES:
            raise ValueError(f"unknown class label {self.label!r}")


def default_grid() -> ChannelGrid:
    """The fixed 22-channel montage projection."""
    return ChannelGrid(dict(_PLACEMENTS))


def extremes(seg: dsp.Segment) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel maximum and minimum over the segment's time axis."""
    return seg.data.max(axis=1), seg.data.min(axis=1)


def build_feature_tensor(segments: Sequence[dsp.Segment],
                         channel_names: Sequence[str],
                         grid: ChannelGrid,
                         label: str) -> FeatureTensor:
    """Assemble the 12-plane tensor from one trial's six filtered segments.

    ``segments`` must come in bank band order and share the channel
    order given by ``channel_names``.
    """
    if len(segments) != 6:
        raise ValueError(f"exactly 6 band segments required, got {len(segments)}")
    names = list(channel_names)
    for seg in segments:
        if seg.n_channels != len(names):
            raise ValueError(
                f"segment has {seg.n_channels} channels but {len(names)} "
                f"names were given")
    index = {name: i for i, name in enumerate(names)}
    for ch in grid.placements:
        if ch not in index:
            raise ValueError(f"grid channel {ch} missing from segment channels")

    planes = np.zeros((GRID_ROWS, GRID_COLS, N_PLANES))
    for b, seg in enumerate(segments):
        hi, lo = extremes(seg)
        for ch, (r, c) in grid.placements.items():
            i = index[ch]
            planes[r, c, 2 * b] = hi[i]
            planes[r, c, 2 * b + 1] = lo[i]
    return FeatureTensor(planes=planes, label=label)


def tensors_from_trialset(trialset, config, grid: ChannelGrid | None = None) -> list[FeatureTensor]:
    """Run the full feature pipeline over every trial of one recording set.

    Filters the continuous trials through the band bank (zero phase, whole
    trial, so no edge transients land in the window), segments, applies the
    local average reference, and extracts the max/min planes.  Equal-length
    trials are filtered as one batch.
    """
    if grid is None:
        grid = default_grid()
    bank = dsp.default_filter_bank(trialset.sample_rate, order=config.filter_order,
                                   bands=config.bands)
    names = trialset.channel_names
    trials = trialset.trials

    # Group equal-length trials so the IIR time loop runs once per group.
    by_len: dict[int, list[int]] = {}
    for i, tr in enumerate(trials):
        by_len.setdefault(tr.data.shape[1], []).append(i)

    filtered: list[list[np.ndarray] | None] = [None] * len(trials)
    for _, idxs in sorted(by_len.items()):
        block = np.stack([np.asarray(trials[i].data, dtype=np.float64)
                          for i in idxs])
        for b, sections in enumerate(bank.sections):
            out = dsp.filtfilt(sections, block)
            for j, i in enumerate(idxs):
                if filtered[i] is None:
                    filtered[i] = []
                filtered[i].append(out[j])

    tensors = []
    for i, tr in enumerate(trials):
        segs = []
        for band_signal in filtered[i]:
            seg = dsp.segment(band_signal, tr.cue_sample, config.window,
                              trialset.sample_rate, trial_index=i)
            segs.append(dsp.local_average_reference(seg))
        tensors.append(build_feature_tensor(segs, names, grid, tr.label))
    return tensors
