"""Input checks shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array


def check_features(X, n_features=None):
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, expected {n_features}")
    return X


def check_targets(y, n_samples):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(y) != n_samples:
        raise ValueError(f"y has {len(y)} entries, expected {n_samples}")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite values")
    return y


def check_spins(X):
    """Validate a 2D array of +/-1 spin rows."""
    X = np.asarray(X)
    if X.ndim != 2:
        raise ValueError(f"expected a 2D array of spin rows, got shape {X.shape}")
    if not np.all((X == 1) | (X == -1)):
        raise ValueError("spin arrays may only contain -1 and +1")
    return X
