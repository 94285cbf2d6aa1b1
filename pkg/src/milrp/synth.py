"""Synthetic two-class recordings with lateralized mu-band power.

Useful for exercising the whole pipeline without real recordings: every
trial is broadband noise plus an 8-13 Hz oscillation over the motor sites,
stronger at C3 for right-hand trials and at C4 for left-hand trials.
Pseudo-subjects differ by mild gain and frequency jitter.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .featmap import default_grid
from .trialio import Trial, TrialSet

__all__ = ["synthetic_trialset", "synthetic_dataset", "write_text_dataset"]

SESSIONS = ("T", "E")


def synthetic_trialset(subject: str, session: str, n_trials: int = 144,
                       sample_rate: float = 250.0, trial_seconds: float = 4.0,
                       cue_second: float = 1.0, seed: int = 0,
                       strong_amp: float = 3.0, weak_amp: float = 1.0,
                       noise: float = 1.0) -> TrialSet:
    """One pseudo-session of balanced left/right trials."""
    channels = tuple(default_grid().placements)
    idx = {ch: i for i, ch in enumerate(channels)}
    subject_num = int("".join(c for c in subject if c.isdigit()) or 0)
    rng = np.random.default_rng([seed, subject_num, SESSIONS.index(session)])

    gain = rng.uniform(0.85, 1.15)
    freq = rng.uniform(9.0, 11.0)
    n_samples = round(trial_seconds * sample_rate)
    cue = round(cue_second * sample_rate)
    t = np.arange(n_samples) / sample_rate

    labels = ["left"] * (n_trials // 2) + ["right"] * (n_trials - n_trials // 2)
    rng.shuffle(labels)
    trials = []
    for label in labels:
        data = noise * rng.standard_normal((len(channels), n_samples))
        # Contralateral organization: left-hand imagery drives the right
        # hemisphere site (C4) and vice versa.
        amp_c3 = weak_amp if label == "left" else strong_amp
        amp_c4 = strong_amp if label == "left" else weak_amp
        f = freq * rng.uniform(0.97, 1.03)
        for ch, amp in (("C3", amp_c3), ("C4", amp_c4)):
            phase = rng.uniform(0.0, 2.0 * np.pi)
            data[idx[ch]] += gain * amp * np.sin(2.0 * np.pi * f * t + phase)
        trials.append(Trial(data=data.astype(np.float32), cue_sample=cue,
                            label=label))
    return TrialSet(subject=subject, session=session, sample_rate=sample_rate,
                    channel_names=channels, trials=trials)


def synthetic_dataset(n_subjects: int = 9, seed: int = 0, **kwargs):
    """Mapping (subject, session) -> TrialSet for n pseudo-subjects."""
    dataset = {}
    for i in range(1, n_subjects + 1):
        subject = f"A{i:02d}"
        for session in SESSIONS:
            dataset[(subject, session)] = synthetic_trialset(
                subject, session, seed=seed, **kwargs)
    return dataset


def write_text_dataset(dataset, root) -> None:
    """Emit each session in the delimited import layout under ``root``."""
    root = Path(root)
    for (subject, session), tset in sorted(dataset.items()):
        directory = root / f"{subject}{session}"
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for i, tr in enumerate(tset.trials):
            name = f"trial_{i:03d}.csv"
            with open(directory / name, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                for row in tr.data:
                    writer.writerow([f"{v:.9g}" for v in row])
            entries.append({"file": name, "cue_sample": tr.cue_sample,
                            "label": tr.label})
        manifest = {
            "subject": subject,
            "session": session,
            "sample_rate_hz": tset.sample_rate,
            "channels": list(tset.channel_names),
            "trials": entries,
        }
        with open(directory / "manifest.json", "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=1)
