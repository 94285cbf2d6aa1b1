"""Motor-imagery EEG decoding with an interpretable CNN.

Subpackages cover the full pipeline: band-pass filter bank and segmentation
(:mod:`milrp.dsp`), scalp-grid feature tensors (:mod:`milrp.featmap`), the
from-scratch convolutional classifier (:mod:`milrp.autonet`), relevance
propagation (:mod:`milrp.lrp`), the CSP+LDA baseline (:mod:`milrp.cspbase`),
persistence (:mod:`milrp.trialio`), the leave-one-subject-out harness
(:mod:`milrp.harness`), and topography rendering (:mod:`milrp.topoviz`).
"""

__version__ = "0.1.0"
