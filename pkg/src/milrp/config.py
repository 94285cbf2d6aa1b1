"""Run configuration: the protocol knobs and their stable digest.

Defaults reproduce the evaluation protocol exactly; the digest identifies
the protocol (not filesystem paths or parallelism) and is embedded in every
artifact a run writes, so mismatched pipeline stages are detectable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict

from .autonet import TrainConfig
from .dsp import DEFAULT_BANDS
from .lrp import LrpRule

__all__ = ["RunConfig"]


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    bands: tuple = DEFAULT_BANDS
    window: tuple[float, float] = (0.5, 2.5)
    filter_order: int = 4
    lr: float = 1e-4
    iterations: int = 300
    batch_size: int | None = 64
    lrp_rule: str = "epsilon"
    epsilon: float = 1e-6
    alpha: float = 1.0
    beta: float = 0.0
    csp_pairs: int = 3
    include_rejected: bool = False

    def __post_init__(self):
        object.__setattr__(self, "bands",
                           tuple((float(lo), float(hi)) for lo, hi in self.bands))
        object.__setattr__(self, "window",
                           (float(self.window[0]), float(self.window[1])))
        if len(self.bands) != 6:
            raise ValueError(f"exactly 6 bands required, got {len(self.bands)}")
        if not self.window[1] > self.window[0]:
            raise ValueError(f"bad analysis window {self.window}")
        self.rule()  # validates rule fields

    def digest(self) -> str:
        """Stable hash of the protocol fields."""
        canon = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:12]

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(lr=self.lr, iterations=self.iterations,
                           batch_size=self.batch_size,
                           seed=self.seed if seed is None else seed)

    def rule(self) -> LrpRule:
        return LrpRule(variant=self.lrp_rule, epsilon=self.epsilon,
                       alpha=self.alpha, beta=self.beta)
