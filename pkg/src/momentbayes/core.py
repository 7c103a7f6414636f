"""Datasets, parameter boxes, priors and moment-inequality models.

A moment model maps one observation and a parameter vector ``theta`` to a
vector of ``p`` moment functions whose population means are required to be
nonnegative.  Every model shipped here is affine in ``theta``::

    m(X_i, theta) = A_i @ theta + b_i

and the affine coefficients are what the likelihood and selection code
consume.  A generic (callback) kind is kept for user models.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import ndtr

__all__ = [
    "DataError",
    "Dataset",
    "ThetaBox",
    "ThetaPrior",
    "Hyperparameters",
    "MomentModel",
    "load_dataset",
    "save_dataset",
    "sample_moment_mean",
    "make_interval_mean_model",
    "make_missing_data_model",
    "make_interval_regression_model",
    "make_mean_bounds_model",
]


class DataError(ValueError):
    """Raised for malformed input data or inconsistent dimensions."""


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """An ``n x q`` matrix of observations with named columns."""

    values: np.ndarray
    columns: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError(f"values must be 2-D, got shape {values.shape}")
        columns = tuple(str(c) for c in self.columns)
        n, q = values.shape
        if n < 1 or q < 1:
            raise DataError(f"dataset needs n >= 1 and q >= 1, got {values.shape}")
        if len(columns) != q:
            raise DataError(f"{len(columns)} column names for {q} columns")
        if len(set(columns)) != q:
            raise DataError(f"column names are not unique: {columns}")
        bad = np.argwhere(~np.isfinite(values))
        if bad.size:
            r, c = bad[0]
            raise DataError(f"non-finite value at row {r}, column {columns[c]!r}")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "columns", columns)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def q(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.columns.index(name)]
        except ValueError:
            raise DataError(f"dataset has no column {name!r}; columns are {self.columns}") from None

    def as_dict(self) -> dict[str, np.ndarray]:
        return {c: self.values[:, j] for j, c in enumerate(self.columns)}

    def take(self, rows) -> "Dataset":
        return Dataset(self.values[np.asarray(rows)], self.columns)


@dataclass(frozen=True)
class ThetaBox:
    """Compact rectangular parameter space ``[lower, upper]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size < 1:
            raise DataError("box bounds must be equal-length non-empty vectors")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise DataError("box must be bounded")
        if np.any(lo >= hi):
            raise DataError(f"box needs lower < upper componentwise, got {lo} and {hi}")
        object.__setattr__(self, "lower", _frozen(lo))
        object.__setattr__(self, "upper", _frozen(hi))

    @property
    def d(self) -> int:
        return self.lower.size

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, theta) -> np.ndarray | bool:
        theta = np.asarray(theta, dtype=float)
        inside = np.all((theta >= self.lower) & (theta <= self.upper), axis=-1)
        return bool(inside) if inside.ndim == 0 else inside

    def clip(self, theta) -> np.ndarray:
        return np.clip(theta, self.lower, self.upper)

    def restrict(self, free) -> "ThetaBox":
        free = list(free)
        return ThetaBox(self.lower[free], self.upper[free])


@dataclass(frozen=True)
class ThetaPrior:
    """Prior on ``theta``: flat or independent normal, truncated to a box.

    ``sd`` holds standard deviations.  The normal prior is renormalised on
    the box so that both kinds are proper densities there.
    """

    box: ThetaBox
    kind: str = "flat"
    mean: np.ndarray | None = None
    sd: np.ndarray | None = None
    _log_norm: float = field(init=False, repr=False, default=0.0)

    def __post_init__(self):
        if self.kind not in ("flat", "normal"):
            raise DataError(f"unknown prior kind {self.kind!r}")
        d = self.box.d
        if self.kind == "flat":
            object.__setattr__(self, "_log_norm", -math.log(self.box.volume))
            return
        mean = np.broadcast_to(np.asarray(self.mean, dtype=float), (d,))
        sd = np.broadcast_to(np.asarray(self.sd, dtype=float), (d,))
        if np.any(sd <= 0) or not np.all(np.isfinite(sd)):
            raise DataError("prior standard deviations must be positive and finite")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "sd", _frozen(sd))
        # mass of each marginal inside the box
        mass = ndtr((self.box.upper - mean) / sd) - ndtr((self.box.lower - mean) / sd)
        log_norm = -np.sum(np.log(sd)) - 0.5 * d * math.log(2 * math.pi) - np.sum(np.log(mass))
        object.__setattr__(self, "_log_norm", float(log_norm))

    @classmethod
    def flat(cls, box: ThetaBox) -> "ThetaPrior":
        return cls(box)

    @classmethod
    def normal(cls, box: ThetaBox, mean, sd) -> "ThetaPrior":
        return cls(box, "normal", mean, sd)

    @property
    def d(self) -> int:
        return self.box.d

    def logpdf(self, theta) -> np.ndarray | float:
        """Log density; ``-inf`` outside the box.  Accepts ``(d,)`` or ``(N, d)``."""
        theta = np.asarray(theta, dtype=float)
        inside = np.all((theta >= self.box.lower) & (theta <= self.box.upper), axis=-1)
        if self.kind == "flat":
            out = np.where(inside, self._log_norm, -np.inf)
        else:
            z = (theta - self.mean) / self.sd
            out = np.where(inside, self._log_norm - 0.5 * np.sum(z * z, axis=-1), -np.inf)
        return float(out) if out.ndim == 0 else out

    def marginal(self, free) -> "ThetaPrior":
        """Prior of the sub-vector ``theta[free]`` (independence makes this exact)."""
        free = list(free)
        box = self.box.restrict(free)
        if self.kind == "flat":
            return ThetaPrior(box)
        return ThetaPrior(box, "normal", self.mean[free], self.sd[free])

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.box.lower, self.box.upper
        if self.kind == "flat":
            return rng.uniform(lo, hi, size=(size, self.d))
        # inverse-cdf sampling of the truncated normal
        from scipy.special import ndtri

        a = ndtr((lo - self.mean) / self.sd)
        b = ndtr((hi - self.mean) / self.sd)
        u = rng.uniform(a, b, size=(size, self.d))
        return np.clip(self.mean + self.sd * ndtri(u), lo, hi)


@dataclass(frozen=True)
class Hyperparameters:
    """Exponential-prior rates ``psi`` for the bias and the scale matrix ``V``."""

    psi: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        psi = np.atleast_1d(np.asarray(self.psi, dtype=float))
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        p = psi.size
        if psi.ndim != 1 or V.shape != (p, p):
            raise DataError(f"psi has length {p} but V has shape {V.shape}")
        if np.any(psi <= 0) or not np.all(np.isfinite(psi)):
            raise DataError(f"psi must be strictly positive, got {psi}")
        if not np.allclose(V, V.T, rtol=0.0, atol=1e-12):
            raise DataError("V must be symmetric")
        if np.linalg.eigvalsh(V)[0] <= 0:
            raise DataError("V must be positive definite")
        object.__setattr__(self, "psi", _frozen(psi))
        object.__setattr__(self, "V", _frozen(0.5 * (V + V.T)))

    @classmethod
    def identity(cls, psi) -> "Hyperparameters":
        psi = np.atleast_1d(np.asarray(psi, dtype=float))
        return cls(psi, np.eye(psi.size))

    @property
    def p(self) -> int:
        return self.psi.size

    @property
    def is_diagonal(self) -> bool:
        off = self.V - np.diag(np.diag(self.V))
        return bool(np.max(np.abs(off)) < 1e-14 * np.max(np.diag(self.V)))

    def subset(self, idx) -> "Hyperparameters":
        idx = list(idx)
        return Hyperparameters(self.psi[idx], self.V[np.ix_(idx, idx)])


Coefficients = Callable[[Mapping[str, np.ndarray]], tuple[np.ndarray, np.ndarray]]
Evaluator = Callable[[Mapping[str, np.ndarray], np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MomentModel:
    """``p`` moment functions of a ``d``-dimensional parameter.

    For ``kind="affine"``, ``coefficients`` maps a column dict (arrays of
    length ``n``) to ``(A, b)`` with shapes ``(n, p, d)`` and ``(n, p)``.
    For ``kind="generic"``, ``evaluator`` maps ``(columns, theta)`` to an
    ``(n, p)`` matrix.  ``columns`` lists the dataset columns read.
    """

    p: int
    d: int
    columns: tuple[str, ...]
    kind: str = "affine"
    coefficients: Coefficients | None = None
    evaluator: Evaluator | None = None
    moment_names: tuple[str, ...] = ()
    param_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.p < 1 or self.d < 1:
            raise DataError(f"moment model needs p >= 1 and d >= 1, got p={self.p}, d={self.d}")
        if self.kind == "affine" and self.coefficients is None:
            raise DataError("affine model needs a coefficient extractor")
        if self.kind == "generic" and self.evaluator is None:
            raise DataError("generic model needs an evaluator")
        if self.kind not in ("affine", "generic"):
            raise DataError(f"unknown model kind {self.kind!r}")
        if not self.moment_names:
            object.__setattr__(self, "moment_names", tuple(f"m{j + 1}" for j in range(self.p)))
        if not self.param_names:
            object.__setattr__(self, "param_names", tuple(f"theta{j + 1}" for j in range(self.d)))

    @property
    def is_affine(self) -> bool:
        return self.kind == "affine"

    def _cols(self, data) -> dict[str, np.ndarray]:
        if isinstance(data, Dataset):
            missing = [c for c in self.columns if c not in data.columns]
            if missing:
                raise DataError(f"dataset lacks columns {missing} required by the model")
            return {c: data.column(c) for c in self.columns}
        try:
            return {c: np.atleast_1d(np.asarray(data[c], dtype=float)) for c in self.columns}
        except KeyError as e:
            raise DataError(f"observation lacks column {e.args[0]!r}") from None

    def affine_terms(self, data) -> tuple[np.ndarray, np.ndarray]:
        """Per-observation ``(A_i, b_i)`` as arrays ``(n, p, d)`` and ``(n, p)``."""
        if not self.is_affine:
            raise DataError("affine_terms requires an affine model")
        A, b = self.coefficients(self._cols(data))
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        n = b.shape[0]
        if A.shape != (n, self.p, self.d) or b.shape != (n, self.p):
            raise DataError(f"coefficient extractor returned shapes {A.shape}, {b.shape}")
        return A, b

    def averaged_terms(self, data) -> tuple[np.ndarray, np.ndarray]:
        """Sample averages of the affine coefficients."""
        A, b = self.affine_terms(data)
        return A.mean(axis=0), b.mean(axis=0)

    def moments(self, data, theta) -> np.ndarray:
        """``m(X_i, theta)`` for every observation, shape ``(n, p)``.

        ``data`` is a :class:`Dataset` or a mapping from column name to a
        value (or array of values).
        """
        theta = _check_theta(theta, self.d)
        if self.is_affine:
            A, b = self.affine_terms(data)
            return A @ theta + b
        out = np.asarray(self.evaluator(self._cols(data), theta), dtype=float)
        return np.atleast_2d(out)


def _check_theta(theta, d: int) -> np.ndarray:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (d,):
        raise DataError(f"theta must have shape ({d},), got {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise DataError("theta must be finite")
    return theta


def sample_moment_mean(model: MomentModel, data: Dataset, theta) -> np.ndarray:
    """Sample average of the moment functions at ``theta``."""
    theta = _check_theta(theta, model.d)
    if model.is_affine:
        A_bar, b_bar = model.averaged_terms(data)
        return A_bar @ theta + b_bar
    return model.moments(data, theta).mean(axis=0)


# --------------------------------------------------------------------------
# model builders


def make_mean_bounds_model(bounds: Sequence[tuple[str, str]]) -> MomentModel:
    """Scalar parameter bounded by column means.

    Each entry ``(column, side)`` gives one moment: ``side="upper"`` means
    ``E[column] >= theta`` (moment ``column - theta``) and ``side="lower"``
    means ``E[column] <= theta`` (moment ``theta - column``).
    """
    if not bounds:
        raise DataError("need at least one bound")
    sides = []
    for col, side in bounds:
        if side not in ("upper", "lower"):
            raise DataError(f"side must be 'upper' or 'lower', got {side!r}")
        sides.append(1.0 if side == "upper" else -1.0)
    cols = tuple(c for c, _ in bounds)
    sign = np.array(sides)

    def coefficients(x):
        y = np.column_stack([x[c] for c in cols])
        n = y.shape[0]
        A = np.broadcast_to(-sign[None, :, None], (n, len(cols), 1)).copy()
        return A, sign * y

    return MomentModel(
        p=len(cols),
        d=1,
        columns=tuple(dict.fromkeys(cols)),
        coefficients=coefficients,
        moment_names=tuple(f"{c}_{side}" for c, side in bounds),
    )


def make_interval_mean_model() -> MomentModel:
    """Mean of a variable observed only through ``y1 <= Y <= y2``.

    Moments, in order: ``y2 - theta`` and ``theta - y1``.
    """
    return make_mean_bounds_model([("y2", "upper"), ("y1", "lower")])


def make_missing_data_model() -> MomentModel:
    """Mean of ``Y`` in ``[0, 1]`` observed only when ``z = 1``.

    Reads columns ``zy`` (the product ``z * y``) and ``z``.  Moments, in
    order: ``theta - zy`` and ``zy - theta + 1 - z``.
    """

    def coefficients(x):
        zy, z = x["zy"], x["z"]
        n = zy.shape[0]
        A = np.empty((n, 2, 1))
        A[:, 0, 0] = 1.0
        A[:, 1, 0] = -1.0
        return A, np.column_stack([-zy, zy + 1.0 - z])

    return MomentModel(p=2, d=1, columns=("zy", "z"), coefficients=coefficients,
                       moment_names=("lower", "upper"))


def make_interval_regression_model(num_instruments: int, num_regressors: int) -> MomentModel:
    """Linear regression with an interval-observed outcome and positive instruments.

    Reads ``y1, y2, x1..xk, z1..zJ``.  For each instrument ``j`` two
    moments follow in order: ``z_j (x'theta - y1)`` and ``z_j (y2 - x'theta)``.
    """
    if num_instruments < 1 or num_regressors < 1:
        raise DataError("interval regression needs at least one instrument and one regressor")
    J, k = num_instruments, num_regressors
    xs = tuple(f"x{i + 1}" for i in range(k))
    zs = tuple(f"z{j + 1}" for j in range(J))

    def coefficients(c):
        X = np.column_stack([c[x] for x in xs])
        Z = np.column_stack([c[z] for z in zs])
        y1, y2 = c["y1"], c["y2"]
        n = X.shape[0]
        A = np.empty((n, 2 * J, k))
        b = np.empty((n, 2 * J))
        ZX = Z[:, :, None] * X[:, None, :]
        A[:, 0::2, :] = ZX
        A[:, 1::2, :] = -ZX
        b[:, 0::2] = -Z * y1[:, None]
        b[:, 1::2] = Z * y2[:, None]
        return A, b

    names = []
    for z in zs:
        names += [f"{z}_lower", f"{z}_upper"]
    return MomentModel(
        p=2 * J,
        d=k,
        columns=("y1", "y2") + xs + zs,
        coefficients=coefficients,
        moment_names=tuple(names),
        param_names=tuple(f"theta{i + 1}" for i in range(k)),
    )


# --------------------------------------------------------------------------
# CSV input/output


def load_dataset(path, schema: Sequence[str] | None = None) -> Dataset:
    """Read a comma-separated file with a header row.

    If ``schema`` is given the header must list exactly those names, in
    order.  Errors name the offending row (1-based, header excluded) and
    column.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if schema is not None and list(schema) != header:
            raise DataError(f"{path}: header {header} does not match expected {list(schema)}")
        rows = []
        for i, rec in enumerate(reader, start=1):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: row {i} has {len(rec)} fields, expected {len(header)}")
            row = []
            for name, cell in zip(header, rec):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {i}, column {name!r}: cannot parse {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {i}, column {name!r}: non-finite value {cell!r}")
                row.append(v)
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(rows), tuple(header))


def save_dataset(data: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(data.columns)
        for row in data.values:
            w.writerow([repr(float(v)) for v in row])
