"""Input validation helpers shared across the package.

All checks raise ValueError for bad arguments so estimators behave like
standard sklearn components under `check_X` style validation.
"""
from __future__ import annotations

import numpy as np

from sklearn.exceptions import NotFittedError


def check_image(image, name="image"):
    """Validate a single-channel float image in [0, 1] and return it as float32."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < -1e-6 or arr.max() > 1 + 1e-6:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return np.clip(arr, 0.0, 1.0)


def check_finite(x, name="value"):
    arr = np.asarray(x)
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_fitted(estimator, attribute):
    """Raise NotFittedError unless `estimator` carries the fitted attribute."""
    if getattr(estimator, attribute, None) is None:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted; call fit() before use"
        )


def check_positive(value, name):
    if value <= 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


def check_in_range(value, lo, hi, name, inclusive=(True, True)):
    ok_lo = value >= lo if inclusive[0] else value > lo
    ok_hi = value <= hi if inclusive[1] else value < hi
    if not (ok_lo and ok_hi):
        lb = "[" if inclusive[0] else "("
        rb = "]" if inclusive[1] else ")"
        raise ValueError(f"{name} must lie in {lb}{lo}, {hi}{rb}, got {value}")
    return value
