"""Relevance propagation from the classifier output back to the input map.

The chosen logit's raw value seeds the backward pass; each layer
redistributes relevance onto its inputs in proportion to their share of the
pre-activation sum.  The epsilon rule (default) stabilizes small
denominators; the alpha/beta rule splits positive and negative
contributions.  Bias terms have no input to inherit their share, so that
share is dropped and the total dropped amount is reported with each map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autonet
from .featmap import GRID_ROWS, GRID_COLS, N_PLANES, ChannelGrid

__all__ = [
    "LrpRule",
    "RelevanceMap",
    "ClassAggregate",
    "lrp_dense",
    "lrp_conv",
    "explain",
    "aggregate",
    "relevance_table",
    "write_relevance_table",
    "read_relevance_table",
]

CLASSES = autonet.CLASSES


@dataclass(frozen=True)
class LrpRule:
    """Redistribution rule: ``epsilon`` (default) or ``alpha_beta``."""

    variant: str = "epsilon"
    epsilon: float = 1e-6
    alpha: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if self.variant not in ("epsilon", "alpha_beta"):
            raise ValueError(f"unknown LRP rule variant {self.variant!r}")
        if self.variant == "epsilon" and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.variant == "alpha_beta" and abs(self.alpha - self.beta - 1.0) > 1e-12:
            raise ValueError(
                f"alpha - beta must equal 1, got {self.alpha} - {self.beta}")


@dataclass
class RelevanceMap:
    """Per-trial relevance over the 6x7x12 input, plus derived views.

    ``plane_avg`` is the mean over the 12 planes; ``per_channel`` reads
    ``plane_avg`` at each placed channel's grid cell.  ``leak`` is the
    signed difference between the starting logit and the total input
    relevance (the bias share dropped along the way); ``leak_bound`` is the
    sum of per-layer dropped-share magnitudes, an upper bound on ``|leak|``.
    """

    planes: np.ndarray
    plane_avg: np.ndarray
    per_channel: dict[str, float]
    source: tuple[str, str, float]  # (trial id, explained class, logit)
    leak: float = 0.0
    leak_bound: float = 0.0

    @classmethod
    def build(cls, planes: np.ndarray, grid: ChannelGrid,
              source: tuple[str, str, float], leak: float = 0.0,
              leak_bound: float = 0.0) -> "RelevanceMap":
        planes = np.asarray(planes, dtype=np.float64)
        if planes.shape != (GRID_ROWS, GRID_COLS, N_PLANES):
            raise ValueError(f"relevance planes must be 6x7x12, got {planes.shape}")
        plane_avg = planes.mean(axis=2)
        per_channel = {ch: float(plane_avg[r, c])
                       for ch, (r, c) in grid.placements.items()}
        return cls(planes=planes, plane_avg=plane_avg, per_channel=per_channel,
                   source=source, leak=leak, leak_bound=leak_bound)


@dataclass
class ClassAggregate:
    """Mean relevance map over correctly classified trials of one class."""

    mean_map: RelevanceMap | None
    n_trials: int


def _stabilized(z: np.ndarray, eps: float) -> np.ndarray:
    return z + eps * np.where(z >= 0.0, 1.0, -1.0)


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """num/den with zero denominators mapping to zero shares."""
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den != 0.0)
    return out


def lrp_dense(activations: np.ndarray, layer: autonet.DenseLayer,
              upstream_relevance: np.ndarray, rule: LrpRule) -> np.ndarray:
    """Redistribute output relevance onto the 32 dense inputs."""
    a = np.asarray(activations, dtype=np.float64)
    r_up = np.asarray(upstream_relevance, dtype=np.float64)
    w = layer.weights
    if a.shape != (w.shape[0],):
        raise ValueError(
            f"activations shape {a.shape} does not match dense input "
            f"({w.shape[0]},)")
    if r_up.shape != (w.shape[1],):
        raise ValueError(
            f"upstream relevance shape {r_up.shape} does not match dense "
            f"output ({w.shape[1]},)")
    if rule.variant == "epsilon":
        z = a @ w + layer.bias
        ratio = r_up / _stabilized(z, rule.epsilon)
        return a * (w @ ratio)
    ap, am = np.maximum(a, 0.0), np.minimum(a, 0.0)
    wp, wm = np.maximum(w, 0.0), np.minimum(w, 0.0)
    zp = ap @ wp + am @ wm + np.maximum(layer.bias, 0.0)
    zn = ap @ wm + am @ wp + np.minimum(layer.bias, 0.0)
    rp = rule.alpha * _safe_ratio(r_up, zp)
    rn = rule.beta * _safe_ratio(r_up, zn)
    pos = ap * (wp @ rp) + am * (wm @ rp)
    neg = ap * (wm @ rn) + am * (wp @ rn)
    return pos - neg


def lrp_conv(activations: np.ndarray, layer: autonet.ConvLayer,
             upstream_relevance: np.ndarray, rule: LrpRule) -> np.ndarray:
    """Redistribute relevance through one VALID convolution.

    Overlapping windows accumulate additively; the result has the shape of
    ``activations``.
    """
    a = np.asarray(activations, dtype=np.float64)
    r_up = np.asarray(upstream_relevance, dtype=np.float64)
    kh, kw, cin, cout = layer.weights.shape
    expect = (a.shape[0] - kh + 1, a.shape[1] - kw + 1, cout)
    if a.ndim != 3 or a.shape[2] != cin:
        raise ValueError(
            f"activations {a.shape} incompatible with kernel {layer.weights.shape}")
    if r_up.shape != expect:
        raise ValueError(
            f"upstream relevance shape {r_up.shape} does not match conv "
            f"output {expect}")

    def back(weights: np.ndarray, ratio: np.ndarray) -> np.ndarray:
        spread = np.zeros_like(a)
        oh, ow = ratio.shape[:2]
        for di in range(kh):
            for dj in range(kw):
                spread[di:di + oh, dj:dj + ow, :] += np.tensordot(
                    ratio, weights[di, dj], axes=([2], [1]))
        return spread

    if rule.variant == "epsilon":
        z = autonet.conv2d_valid_forward(a, layer)
        ratio = r_up / _stabilized(z, rule.epsilon)
        return a * back(layer.weights, ratio)
    ap, am = np.maximum(a, 0.0), np.minimum(a, 0.0)
    wp = autonet.ConvLayer(weights=np.maximum(layer.weights, 0.0),
                           bias=np.zeros(cout))
    wm = autonet.ConvLayer(weights=np.minimum(layer.weights, 0.0),
                           bias=np.zeros(cout))
    zp = (autonet.conv2d_valid_forward(ap, wp)
          + autonet.conv2d_valid_forward(am, wm)
          + np.maximum(layer.bias, 0.0))
    zn = (autonet.conv2d_valid_forward(ap, wm)
          + autonet.conv2d_valid_forward(am, wp)
          + np.minimum(layer.bias, 0.0))
    rp = rule.alpha * _safe_ratio(r_up, zp)
    rn = rule.beta * _safe_ratio(r_up, zn)
    pos = ap * back(wp.weights, rp) + am * back(wm.weights, rp)
    neg = ap * back(wm.weights, rn) + am * back(wp.weights, rn)
    return pos - neg


def explain(model: autonet.CnnModel, tensor, target: str,
            rule: LrpRule = LrpRule(), grid: ChannelGrid | None = None,
            trial_id: str = "") -> RelevanceMap:
    """Propagate the target class logit back to a relevance map.

    The starting relevance vector carries the raw logit of ``target`` and
    zero for the other class; propagation runs dense, then the conv stack
    in reverse, using the recorded forward activations at every boundary.
    """
    if grid is None:
        from .featmap import default_grid
        grid = default_grid()
    if target not in CLASSES:
        raise ValueError(f"unknown class {target!r}; expected one of {CLASSES}")
    planes = tensor.planes if hasattr(tensor, "planes") else np.asarray(tensor)
    t_idx = CLASSES.index(target)

    logits, cache, code = model.forward(planes, record=True)
    start = float(logits[t_idx])
    r_out = np.zeros(2)
    r_out[t_idx] = start

    leak_bound = 0.0
    total = start
    r = lrp_dense(code, model.dense, r_out, rule)
    leak_bound += abs(total - r.sum())
    total = r.sum()
    r = r.reshape(autonet.SHAPE_CHAIN[4])
    for layer, (h_in, z) in zip(reversed(model.convs), reversed(cache)):
        # ReLU passes relevance through; the layer redistributes onto its
        # recorded (post-activation) inputs.
        r = lrp_conv(h_in[0], layer, r, rule)
        leak_bound += abs(total - r.sum())
        total = r.sum()
    return RelevanceMap.build(r, grid, source=(trial_id, target, start),
                              leak=start - float(r.sum()),
                              leak_bound=float(leak_bound))


def aggregate(maps, predictions, labels,
              grid: ChannelGrid | None = None) -> dict[str, ClassAggregate]:
    """Class-wise mean maps over trials where prediction equals label.

    A class with no correctly classified trials gets ``mean_map=None``
    rather than a fabricated aggregate.
    """
    if grid is None:
        from .featmap import default_grid
        grid = default_grid()
    if not (len(maps) == len(predictions) == len(labels)):
        raise ValueError("maps, predictions, and labels must align by trial")
    out: dict[str, ClassAggregate] = {}
    for cls in CLASSES:
        picked = [m for m, p, y in zip(maps, predictions, labels)
                  if p == y == cls]
        if not picked:
            out[cls] = ClassAggregate(mean_map=None, n_trials=0)
            continue
        planes = np.mean([m.planes for m in picked], axis=0)
        mean_map = RelevanceMap.build(
            planes, grid,
            source=("aggregate", cls,
                    float(np.mean([m.source[2] for m in picked]))),
            leak=float(np.mean([m.leak for m in picked])),
            leak_bound=float(np.mean([m.leak_bound for m in picked])))
        out[cls] = ClassAggregate(mean_map=mean_map, n_trials=len(picked))
    return out


def relevance_table(maps, config_digest: str = "") -> str:
    """Tab-separated export: one row per trial per channel, 17 digits.

    A ``# digest=`` comment line identifies the producing configuration.
    """
    lines = []
    if config_digest:
        lines.append(f"# digest={config_digest}")
    lines.append("trial\tclass\tchannel\trelevance")
    for m in maps:
        trial_id, cls, _ = m.source
        for ch in sorted(m.per_channel):
            lines.append(f"{trial_id}\t{cls}\t{ch}\t{m.per_channel[ch]:.17g}")
    return "\n".join(lines) + "\n"


def write_relevance_table(maps, path, config_digest: str = "") -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(relevance_table(maps, config_digest=config_digest))


def read_relevance_table(path):
    """Rows written by :func:`write_relevance_table`, plus the digest."""
    rows = []
    digest = ""
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header.startswith("# digest="):
            digest = header[len("# digest="):]
            header = f.readline().rstrip("\n")
        if header.split("\t") != ["trial", "class", "channel", "relevance"]:
            raise ValueError(f"{path}: not a relevance table (bad header)")
        for lineno, line in enumerate(f, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 columns")
            try:
                value = float(parts[3])
            except ValueError:
                raise ValueError(
                    f"{path}:{lineno}: bad relevance value {parts[3]!r}") from None
            rows.append((parts[0], parts[1], parts[2], value))
    return rows, digest
