"""Band-pass filter bank, trial segmentation, and local-average referencing.

Everything between raw multichannel samples and the normalized two-second
analysis segments lives here.  Filters are Butterworth band-passes designed
from the analog prototype (frequency pre-warping + bilinear transform) and
factored into second-order sections; application is zero-phase
(forward-backward with odd-reflective edge padding).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BandSpec",
    "Biquad",
    "FilterBank",
    "Segment",
    "DEFAULT_BANDS",
    "design_bandpass",
    "default_filter_bank",
    "sosfilt",
    "filtfilt",
    "segment",
    "local_average_reference",
]

# The six analysis bands, in the fixed order the feature planes use:
# theta, alpha, beta, theta+alpha, alpha+beta, theta+alpha+beta.
DEFAULT_BANDS = ((4.0, 8.0), (8.0, 13.0), (13.0, 30.0),
               (4.0, 13.0), (8.0, 30.0), (4.0, 30.0))


@dataclass(frozen=True)
class BandSpec:
    """A pass band, in Hz.  Requires 0 < low_hz < high_hz < Nyquist."""

    low_hz: float
    high_hz: float

    def validate(self, sample_rate: float) -> None:
        if not (self.low_hz > 0.0):
            raise ValueError(f"band low edge must be > 0 Hz, got {self.low_hz}")
        if not (self.high_hz > self.low_hz):
            raise ValueError(
                f"band high edge {self.high_hz} Hz must exceed low edge "
                f"{self.low_hz} Hz")
        if not (self.high_hz < sample_rate / 2.0):
            raise ValueError(
                f"band high edge {self.high_hz} Hz must be below the Nyquist "
                f"frequency {sample_rate / 2.0} Hz")


@dataclass(frozen=True)
class Biquad:
    """One second-order section; denominator normalized to a0 = 1."""

    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    def poles(self) -> tuple[complex, complex]:
        d = cmath.sqrt(complex(self.a1 * self.a1 - 4.0 * self.a2))
        return ((-self.a1 + d) / 2.0, (-self.a1 - d) / 2.0)


@dataclass(frozen=True)
class Segment:
    """A windowed chunk of one trial, channels x samples."""

    data: np.ndarray
    t_start_s: float
    t_end_s: float

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class FilterBank:
    """Six band-pass filters in the fixed band order, as biquad cascades."""

    bands: tuple[BandSpec, ...]
    sections: tuple[tuple[Biquad, ...], ...]
    sample_rate: float

    def __post_init__(self):
        if len(self.bands) != 6:
            raise ValueError(f"a filter bank holds exactly 6 bands, got {len(self.bands)}")
        if len(self.sections) != len(self.bands):
            raise ValueError("one section cascade per band required")


def _butter_prototype_poles(n: int) -> list[complex]:
    """Left-half-plane poles of the order-n analog Butterworth low-pass."""
    return [cmath.exp(1j * math.pi * (2.0 * k + n - 1.0) / (2.0 * n))
            for k in range(1, n + 1)]


def _pair_conjugates(poles: list[complex]) -> list[tuple[complex, complex]]:
    """Group a conjugate-closed pole set into (p, conj p) or real pairs."""
    tol = 1e-9 * max(1.0, max(abs(p) for p in poles))
    complex_poles = sorted((p for p in poles if p.imag > tol),
                           key=lambda p: (round(p.real, 9), round(p.imag, 9)))
    real_poles = sorted((p.real for p in poles if abs(p.imag) <= tol))
    pairs = [(p, p.conjugate()) for p in complex_poles]
    if len(real_poles) % 2:
        raise ValueError("unpaired real pole; pole set is not conjugate-closed")
    for i in range(0, len(real_poles), 2):
        pairs.append((complex(real_poles[i]), complex(real_poles[i + 1])))
    return pairs


def design_bandpass(band: BandSpec, sample_rate: float, order: int = 4) -> tuple[Biquad, ...]:
    """Design a digital Butterworth band-pass as a cascade of biquads.

    Parameters
    ----------
    band : BandSpec
        Pass-band edges in Hz; the -3 dB points of the composed response.
    sample_rate : float
        Sampling frequency in Hz.
    order : int
        Overall filter order; one of 2, 4, 6, 8.  The cascade holds
        ``order // 2`` sections.

    Returns
    -------
    tuple of Biquad
        Stable second-order sections whose product realizes the filter.
        The response is structurally zero at DC and at Nyquist.
    """
    band.validate(sample_rate)
    if order not in (2, 4, 6, 8):
        raise ValueError(f"filter order must be one of 2, 4, 6, 8, got {order}")
    n = order // 2

    # Pre-warp the edges so the bilinear transform lands them exactly.
    fs2 = 2.0 * sample_rate
    w1 = fs2 * math.tan(math.pi * band.low_hz / sample_rate)
    w2 = fs2 * math.tan(math.pi * band.high_hz / sample_rate)
    bw = w2 - w1
    w0sq = w1 * w2

    # Low-pass prototype -> band-pass: each prototype pole spawns two.
    analog_poles: list[complex] = []
    for p in _butter_prototype_poles(n):
        s = p * (bw / 2.0)
        d = cmath.sqrt(s * s - w0sq)
        analog_poles.extend((s + d, s - d))

    # Bilinear transform.  Analog zeros are n at s=0 plus n at infinity,
    # giving n digital zeros at z=+1 and n at z=-1.
    zpoles = [(fs2 + p) / (fs2 - p) for p in analog_poles]
    num = fs2 ** n
    den = complex(1.0)
    for p in analog_poles:
        den *= (fs2 - p)
    gain = (bw ** n) * (num / den).real

    pairs = _pair_conjugates(zpoles)
    # Deterministic section order: poles nearest the origin first.
    pairs.sort(key=lambda pq: (pq[0] * pq[1]).real)
    g = abs(gain) ** (1.0 / n)
    sections = []
    for i, (p, q) in enumerate(pairs):
        a1 = -(p + q).real
        a2 = (p * q).real
        b = g if i else g * math.copysign(1.0, gain)
        sections.append(Biquad(b0=b, b1=0.0, b2=-b, a1=a1, a2=a2))
    for sec in sections:
        if max(abs(z) for z in sec.poles()) >= 1.0:
            raise ValueError(f"unstable section designed for band {band}")
    return tuple(sections)


def default_filter_bank(sample_rate: float, order: int = 4,
                        bands=DEFAULT_BANDS) -> FilterBank:
    """The six-band analysis bank at the given sampling rate."""
    specs = tuple(BandSpec(lo, hi) for lo, hi in bands)
    return FilterBank(
        bands=specs,
        sections=tuple(design_bandpass(b, sample_rate, order) for b in specs),
        sample_rate=sample_rate,
    )


def sosfilt(sections, x: np.ndarray) -> np.ndarray:
    """Run a biquad cascade causally along the last axis of ``x``.

    Direct-form II transposed; zero initial state.  Accepts any leading
    shape, so a whole (channels x samples) trial — or a batch of trials —
    filters in one call.
    """
    y = np.asarray(x, dtype=np.float64).copy()
    if y.shape[-1] == 0:
        return y
    lead = y.shape[:-1]
    for s in sections:
        out = np.empty_like(y)
        z1 = np.zeros(lead)
        z2 = np.zeros(lead)
        for t in range(y.shape[-1]):
            xt = y[..., t]
            yt = s.b0 * xt + z1
            z1 = s.b1 * xt - s.a1 * yt + z2
            z2 = s.b2 * xt - s.a2 * yt
            out[..., t] = yt
        y = out
    return y


def filtfilt(sections, x: np.ndarray) -> np.ndarray:
    """Zero-phase filtering: forward pass, reverse, filter again, reverse.

    The signal is extended at both ends with odd reflection (3x the filter
    order) before filtering and cropped afterwards, so output length equals
    input length.  Raises if the signal is too short to pad.
    """
    y = np.asarray(x, dtype=np.float64)
    order = 2 * len(tuple(sections))
    padlen = 3 * order
    n = y.shape[-1]
    if n <= padlen:
        raise ValueError(
            f"signal of length {n} is too short for zero-phase filtering; "
            f"need more than {padlen} samples")
    head = 2.0 * y[..., :1] - y[..., padlen:0:-1]
    tail = 2.0 * y[..., -1:] - y[..., -2:-padlen - 2:-1]
    ext = np.concatenate([head, y, tail], axis=-1)
    fwd = sosfilt(sections, ext)
    back = sosfilt(sections, fwd[..., ::-1])[..., ::-1]
    return back[..., padlen:padlen + n]


def segment(trial: np.ndarray, cue_sample: int, window: tuple[float, float],
            sample_rate: float, trial_index: int | None = None) -> Segment:
    """Cut the analysis window out of one trial.

    The window is given in seconds relative to cue onset; the slice starts
    at ``cue_sample + round(window[0] * fs)`` and holds exactly
    ``round((window[1] - window[0]) * fs)`` samples.
    """
    t_start, t_end = window
    if not t_end > t_start:
        raise ValueError(f"window end {t_end} s must exceed start {t_start} s")
    start = cue_sample + round(t_start * sample_rate)
    length = round((t_end - t_start) * sample_rate)
    stop = start + length
    n = trial.shape[1]
    if start < 0 or stop > n:
        where = "" if trial_index is None else f" (trial {trial_index})"
        raise ValueError(
            f"window [{t_start}, {t_end}] s after cue sample {cue_sample} "
            f"needs samples [{start}, {stop}) but the trial has {n}{where}")
    return Segment(data=np.asarray(trial[:, start:stop], dtype=np.float64),
                   t_start_s=t_start, t_end_s=t_end)


def local_average_reference(seg: Segment) -> Segment:
    """Subtract the instantaneous cross-channel mean from every channel.

    At each time sample the mean over all channels is removed, so the
    per-sample channel sum of the result is zero.  Idempotent.
    """
    if seg.n_channels < 2:
        raise ValueError("local average reference needs at least 2 channels")
    data = seg.data - seg.data.mean(axis=0, keepdims=True)
    return Segment(data=data, t_start_s=seg.t_start_s, t_end_s=seg.t_end_s)
