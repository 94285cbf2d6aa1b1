"""CSP spatial filtering with log-variance features and an LDA readout.

The baseline classifier: trials filtered to the mu band are reduced to
trace-normalized covariance matrices per class, jointly diagonalized by
whitening plus a cyclic Jacobi eigendecomposition, and the most
discriminative filter pairs feed a pooled-covariance Fisher discriminant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _binio, dsp

__all__ = [
    "CspModel",
    "LdaModel",
    "jacobi_eigh",
    "class_covariance",
    "csp_fit",
    "csp_features",
    "lda_fit",
    "lda_predict",
    "baseline_pipeline",
    "save_baseline_model",
    "load_baseline_model",
]

BASELINE_BAND = (8.0, 12.0)
BASELINE_MAGIC = b"CSPB"
BASELINE_VERSION = 1


@dataclass
class CspModel:
    """Spatial filters as rows, most-discriminative pairs first.

    ``filters[i] @ composite @ filters[j]`` is the identity on the selected
    subspace (whitening property); ``eigenvalues[i]`` is the share of
    class-1 variance captured by filter i, in [0, 1].
    """

    filters: np.ndarray       # (2m, n_channels)
    eigenvalues: np.ndarray   # (2m,)
    m: int
    ridge: float = 0.0

    def __post_init__(self):
        self.filters = np.asarray(self.filters, dtype=np.float64)
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=np.float64)
        if self.filters.shape[0] != 2 * self.m:
            raise ValueError(
                f"{self.filters.shape[0]} filters but m={self.m} pairs requested")


@dataclass
class LdaModel:
    """Affine decision rule: score = weights @ f + bias, class 0 iff > 0."""

    weights: np.ndarray
    bias: float

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.bias)):
            raise ValueError("LDA parameters must be finite")


def jacobi_eigh(a: np.ndarray, tol: float = 1e-13,
                max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and
    eigenvectors as the corresponding columns, like ``numpy.linalg.eigh``.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"square matrix required, got shape {a.shape}")
    if not np.allclose(a, a.T, atol=1e-10 * max(1.0, np.abs(a).max())):
        raise ValueError("matrix is not symmetric")
    n = a.shape[0]
    a = (a + a.T) / 2.0
    v = np.eye(n)
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        # Off-diagonal mass, computed directly: the algebraically equal
        # form ||A||^2 - ||diag||^2 cancels catastrophically near
        # convergence and can fake an early stop.
        off_part = a - np.diag(np.diag(a))
        off = np.sqrt((off_part ** 2).sum())
        if off <= tol * scale * n:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= tol * scale / n:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                a[p, q] = a[q, p] = 0.0
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    order = np.argsort(np.diag(a), kind="stable")
    return np.diag(a)[order], v[:, order]


def class_covariance(segments) -> np.ndarray:
    """Average trace-normalized covariance over one class's segments.

    Each segment contributes ``X X^T / trace(X X^T)``; an all-zero segment
    has no scale to normalize by and is rejected with its index.
    """
    segs = list(segments)
    if not segs:
        raise ValueError("at least one segment required")
    acc = None
    for i, seg in enumerate(segs):
        x = seg.data if hasattr(seg, "data") else seg
        # fresh aligned buffer: GEMM results depend on operand alignment,
        # and arrays arriving from worker processes are arbitrarily aligned
        x = np.array(x, dtype=np.float64, order="C", copy=True)
        s = x @ x.T
        tr = np.trace(s)
        if not tr > 0.0:
            raise ValueError(f"segment {i} has zero total power; cannot normalize")
        acc = s / tr if acc is None else acc + s / tr
    cov = acc / len(segs)
    return (cov + cov.T) / 2.0


def csp_fit(cov1: np.ndarray, cov2: np.ndarray, m: int = 3) -> CspModel:
    """Solve ``cov1 w = lambda (cov1 + cov2) w`` and keep m filter pairs.

    The composite covariance is whitened (a diagonal ridge of
    ``1e-8 * trace / n`` is added first only if the composite is
    numerically rank-deficient), then ``cov1`` is diagonalized in the
    whitened basis.  Rows of the result are the m largest- and m
    smallest-eigenvalue filters, in descending eigenvalue order.
    """
    cov1 = np.array(cov1, dtype=np.float64, order="C", copy=True)
    cov2 = np.array(cov2, dtype=np.float64, order="C", copy=True)
    n = cov1.shape[0]
    if cov1.shape != (n, n) or cov2.shape != (n, n):
        raise ValueError(f"covariance shapes {cov1.shape} and {cov2.shape} disagree")
    if not 1 <= 2 * m <= n:
        raise ValueError(f"cannot select {m} filter pairs from {n} channels")

    composite = (cov1 + cov2 + cov1.T + cov2.T) / 2.0
    ridge = 0.0
    evals, evecs = jacobi_eigh(composite)
    if evals[0] <= 1e-10 * max(evals[-1], 0.0):
        ridge = 1e-8 * np.trace(composite) / n
        composite = composite + ridge * np.eye(n)
        evals, evecs = jacobi_eigh(composite)
    if evals[0] <= 0.0:
        raise ValueError(
            "composite covariance is not positive definite even after ridge")

    whitener = (evecs / np.sqrt(evals)).T          # P C P^T = I
    s = whitener @ cov1 @ whitener.T
    lam, u = jacobi_eigh((s + s.T) / 2.0)
    order = np.argsort(lam, kind="stable")[::-1]   # descending
    lam, u = lam[order], u[:, order]
    w_full = u.T @ whitener
    keep = list(range(m)) + list(range(n - m, n))
    return CspModel(filters=w_full[keep], eigenvalues=lam[keep], m=m,
                    ridge=ridge)


def csp_features(model: CspModel, segment) -> np.ndarray:
    """Normalized log-variance of each spatially filtered signal."""
    x = segment.data if hasattr(segment, "data") else segment
    x = np.array(x, dtype=np.float64, order="C", copy=True)
    if x.shape[0] != model.filters.shape[1]:
        raise ValueError(
            f"segment has {x.shape[0]} channels, filters expect "
            f"{model.filters.shape[1]}")
    proj = model.filters @ x
    var = proj.var(axis=1)
    total = var.sum()
    if not total > 0.0:
        raise ValueError("zero total variance after spatial filtering")
    return np.log(var / total)


def lda_fit(features_a: np.ndarray, features_b: np.ndarray) -> LdaModel:
    """Fisher discriminant on pooled within-class covariance (small ridge).

    The decision score is positive for the first class; the boundary sits
    at the midpoint of the projected class means.
    """
    fa = np.atleast_2d(np.asarray(features_a, dtype=np.float64))
    fb = np.atleast_2d(np.asarray(features_b, dtype=np.float64))
    if fa.shape[0] < 2 or fb.shape[0] < 2:
        raise ValueError("need at least 2 samples per class")
    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    da, db = fa - mu_a, fb - mu_b
    pooled = (da.T @ da + db.T @ db) / (fa.shape[0] + fb.shape[0] - 2)
    d = pooled.shape[0]
    pooled = pooled + (1e-8 * max(np.trace(pooled), 1e-300) / d) * np.eye(d)
    try:
        w = np.linalg.solve(pooled, mu_a - mu_b)
    except np.linalg.LinAlgError as e:
        raise ValueError(f"singular pooled covariance even after ridge: {e}") from e
    if not np.all(np.isfinite(w)):
        raise ValueError("singular pooled covariance even after ridge")
    bias = -float(w @ (mu_a + mu_b)) / 2.0
    return LdaModel(weights=w, bias=bias)


def lda_predict(model: LdaModel, features: np.ndarray) -> int:
    """0 for the first fitted class, 1 for the second."""
    score = float(model.weights @ np.asarray(features, dtype=np.float64)
                  + model.bias)
    return 0 if score > 0.0 else 1


def fit_baseline(train_segments, train_labels, classes, m: int = 3):
    """CSP + LDA fit from labeled segments; returns (CspModel, LdaModel)."""
    labels = list(train_labels)
    seg_a = [s for s, y in zip(train_segments, labels) if y == classes[0]]
    seg_b = [s for s, y in zip(train_segments, labels) if y == classes[1]]
    if not seg_a or not seg_b:
        raise ValueError("both classes must appear in the training set")
    csp = csp_fit(class_covariance(seg_a), class_covariance(seg_b), m=m)
    feats_a = np.stack([csp_features(csp, s) for s in seg_a])
    feats_b = np.stack([csp_features(csp, s) for s in seg_b])
    lda = lda_fit(feats_a, feats_b)
    return csp, lda


def predict_baseline(csp: CspModel, lda: LdaModel, segment, classes) -> str:
    return classes[lda_predict(lda, csp_features(csp, segment))]


def _mu_band_segments(trialset, window, order):
    sections = dsp.design_bandpass(dsp.BandSpec(*BASELINE_BAND),
                                   trialset.sample_rate, order)
    by_len: dict[int, list[int]] = {}
    for i, tr in enumerate(trialset.trials):
        by_len.setdefault(tr.data.shape[1], []).append(i)
    segments: list = [None] * len(trialset.trials)
    for _, idxs in sorted(by_len.items()):
        block = np.stack([np.asarray(trialset.trials[i].data, dtype=np.float64)
                          for i in idxs])
        out = dsp.filtfilt(sections, block)
        for j, i in enumerate(idxs):
            tr = trialset.trials[i]
            segments[i] = dsp.segment(out[j], tr.cue_sample, window,
                                      trialset.sample_rate, trial_index=i)
    return segments


def baseline_pipeline(train_set, test_set, m: int = 3,
                      window: tuple[float, float] = (0.5, 2.5),
                      order: int = 4) -> float:
    """Full baseline on two trial sets; returns test accuracy in percent.

    Filters 8-12 Hz, segments the analysis window, fits CSP (m pairs) and
    LDA on the training set, and classifies the test set.
    """
    if tuple(train_set.channel_names) != tuple(test_set.channel_names):
        raise ValueError("train and test sets use different montages")
    if train_set.sample_rate != test_set.sample_rate:
        raise ValueError("train and test sets use different sample rates")
    classes = ("left", "right")
    train_segs = _mu_band_segments(train_set, window, order)
    test_segs = _mu_band_segments(test_set, window, order)
    csp, lda = fit_baseline(train_segs, [t.label for t in train_set.trials],
                            classes, m=m)
    preds = [predict_baseline(csp, lda, s, classes) for s in test_segs]
    truth = [t.label for t in test_set.trials]
    if not truth:
        raise ValueError("empty test set")
    return 100.0 * float(np.mean([p == y for p, y in zip(preds, truth)]))


def save_baseline_model(csp: CspModel, lda: LdaModel, path,
                        config_digest: str = "") -> None:
    """Write the CSPB container: header then f64 filters and LDA params."""
    w = _binio.Writer()
    w.raw(BASELINE_MAGIC)
    w.u32(BASELINE_VERSION)
    w.string(config_digest)
    w.u32(csp.m)
    w.u32(csp.filters.shape[1])
    w.f64(csp.ridge)
    w.array(csp.filters, "<f8")
    w.array(csp.eigenvalues, "<f8")
    w.u32(lda.weights.shape[0])
    w.array(lda.weights, "<f8")
    w.f64(lda.bias)
    with open(path, "wb") as f:
        f.write(w.getvalue())


def load_baseline_model(path) -> tuple[CspModel, LdaModel, str]:
    with open(path, "rb") as f:
        r = _binio.Reader(f.read(), name=str(path))
    if r.take(4, "magic") != BASELINE_MAGIC:
        raise _binio.FormatError(f"{path}: not a baseline model file (bad magic)")
    version = r.u32("version")
    if version != BASELINE_VERSION:
        raise _binio.FormatError(
            f"{path}: unsupported baseline format version {version}")
    digest = r.string("config digest")
    m = r.u32("filter pair count")
    n_ch = r.u32("channel count")
    if m > 4096 or n_ch > 4096:
        raise _binio.FormatError(f"{path}: implausible sizes m={m}, channels={n_ch}")
    ridge = r.f64("ridge")
    filters = r.array(2 * m * n_ch, "<f8", "filters", shape=(2 * m, n_ch))
    eigenvalues = r.array(2 * m, "<f8", "eigenvalues")
    feat_dim = r.u32("feature dimension")
    if feat_dim > 4096:
        raise _binio.FormatError(f"{path}: implausible feature dimension {feat_dim}")
    weights = r.array(feat_dim, "<f8", "lda weights")
    bias = r.f64("lda bias")
    r.expect_end()
    csp = CspModel(filters=filters, eigenvalues=eigenvalues, m=m, ridge=ridge)
    return csp, LdaModel(weights=weights, bias=bias), digest
