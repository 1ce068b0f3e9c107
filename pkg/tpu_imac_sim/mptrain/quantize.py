import numpy as np

from tpu_imac_sim.defaults import TERNARY_THRESHOLD_FACTOR
from tpu_imac_sim.imac import TernaryMatrix


def sign_binarize(v) -> np.ndarray:
    """Map entries >= 0 to +1 and negative entries to -1."""
    v = np.asarray(v)
    return np.where(v >= 0, 1, -1).astype(np.int8)


def ternary_threshold(w) -> float:
    return TERNARY_THRESHOLD_FACTOR * float(np.mean(np.abs(w))) if np.size(w) else 0.0


def ternarize_values(w) -> np.ndarray:
    """Threshold ternarization of an array of any shape.

    Entries with ``|w| > 0.7 * mean(|w|)`` keep their sign, the rest become 0.
    """
    w = np.asarray(w, dtype=np.float64)
    delta = ternary_threshold(w)
    return np.where(np.abs(w) > delta, np.sign(w), 0).astype(np.int8)


def ternarize(w) -> TernaryMatrix:
    return TernaryMatrix(ternarize_values(np.atleast_2d(w)))
