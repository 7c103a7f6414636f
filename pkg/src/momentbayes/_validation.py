"""Input checks shared by the estimator classes."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_is_fitted

from .core import DataError, Dataset, Hyperparameters, MomentModel, ThetaBox, ThetaPrior
from .core import make_interval_mean_model, make_missing_data_model

__all__ = ["check_dataset", "check_model", "check_hyper", "check_box", "check_prior", "check_theta",
           "check_is_fitted"]

_NAMED = {"interval-mean": make_interval_mean_model, "missing-data": make_missing_data_model}


def check_dataset(X, columns=None) -> Dataset:
    """Coerce ``X`` to a :class:`Dataset`.

    Accepts a Dataset, a DataFrame-like object with ``columns``, or a 2-D
    array together with ``columns``.
    """
    if isinstance(X, Dataset):
        return X
    if columns is None and hasattr(X, "columns"):
        columns = [str(c) for c in X.columns]
    arr = check_array(X, dtype=float)
    if columns is None:
        raise DataError("column names are required for array input")
    return Dataset(arr, tuple(columns))


def check_model(model) -> MomentModel:
    if isinstance(model, MomentModel):
        return model
    if isinstance(model, str) and model in _NAMED:
        return _NAMED[model]()
    raise DataError(f"model must be a MomentModel or one of {sorted(_NAMED)}, got {model!r}")


def check_hyper(psi, V, p: int) -> Hyperparameters:
    if psi is None:
        raise DataError("psi is required")
    psi = np.broadcast_to(np.asarray(psi, dtype=float), (p,))
    return Hyperparameters(psi, np.eye(p) if V is None else V)


def check_box(box, d: int) -> ThetaBox:
    if isinstance(box, ThetaBox):
        out = box
    else:
        lo, hi = box
        out = ThetaBox(np.broadcast_to(np.asarray(lo, dtype=float), (d,)),
                       np.broadcast_to(np.asarray(hi, dtype=float), (d,)))
    if out.d != d:
        raise DataError(f"box has dimension {out.d}, model has {d}")
    return out


def check_prior(kind, mean, sd, box: ThetaBox) -> ThetaPrior:
    if kind == "flat":
        return ThetaPrior.flat(box)
    if kind == "normal":
        return ThetaPrior.normal(box, mean, sd)
    raise DataError(f"prior must be 'flat' or 'normal', got {kind!r}")


def check_theta(theta, d: int) -> np.ndarray:
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if d == 1 and theta.shape[0] == 1 and theta.shape[1] != 1:
        theta = theta.T
    if theta.shape[1] != d:
        raise DataError(f"theta must have {d} columns, got shape {theta.shape}")
    return theta
