"""Trial data container, CSV ingestion and design-matrix construction.

A design matrix holds the columns ``[intercept, treatment, mains..., interactions...]``
where each interaction column is the product of the treatment indicator and one
of the main-effect covariates.  Solvers always work on the standardized
version of the matrix; coefficients are mapped back to the raw scale with
:func:`unstandardize_coefficients`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    HierarchyViolation,
    IndexOutOfRange,
    LengthMismatch,
    MissingValue,
    NonBinary,
    SchemaMismatch,
)

NA_TOKENS = {"", "na", "nan", "null", "none", "."}

INTERCEPT = "intercept"
TREATMENT = "treatment"
MAIN = "main"
INTERACTION = "interaction"


@dataclass(frozen=True)
class Dataset:
    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    column_names: tuple
    # how raw file columns map onto covariate columns (used to encode new data)
    encoding: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        a = np.asarray(self.treatment)
        y = np.asarray(self.outcome)
        n = X.shape[0]
        if n < 1:
            raise LengthMismatch("dataset needs at least one row")
        if a.shape != (n,) or y.shape != (n,):
            raise LengthMismatch(
                f"covariates have {n} rows, treatment {a.shape}, outcome {y.shape}")
        if len(self.column_names) != X.shape[1]:
            raise LengthMismatch("column_names does not match covariate count")
        for name, v in (("treatment", a), ("outcome", y)):
            if not np.all((v == 0) | (v == 1)):
                raise NonBinary(f"{name} must contain only 0/1")
        if not np.all(np.isfinite(X)):
            raise MissingValue("non-finite covariate value")
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "treatment", a.astype(np.int64))
        object.__setattr__(self, "outcome", y.astype(np.int64))
        object.__setattr__(self, "column_names", tuple(self.column_names))
        object.__setattr__(self, "encoding", tuple(self.encoding))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.covariates[rows], self.treatment[rows], self.outcome[rows],
                       self.column_names, self.encoding)


# --------------------------------------------------------------------------- CSV


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in NA_TOKENS


def _as_float(cell: str) -> Optional[float]:
    try:
        return float(cell)
    except ValueError:
        return None


def _binary(cell: str, name: str, line: int) -> int:
    v = _as_float(cell)
    if v is None or v not in (0.0, 1.0):
        raise NonBinary(f"{name}={cell!r} on line {line} is not 0/1")
    return int(v)


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaMismatch(f"{path} is empty") from None
        rows = [r for r in reader if r]
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise SchemaMismatch(f"line {i + 2} has {len(r)} fields, header has {len(header)}")
    return header, rows


def encode_covariates(header: Sequence[str], rows, encoding, first_line: int = 2):
    """Encode raw CSV cells to a covariate matrix following ``encoding``."""
    index = {h: j for j, h in enumerate(header)}
    cols = []
    for enc in encoding:
        src = enc["name"]
        if src not in index:
            raise SchemaMismatch(f"column {src!r} not in file")
        j = index[src]
        cells = [r[j].strip() for r in rows]
        for i, c in enumerate(cells):
            if _is_missing(c):
                raise MissingValue(f"missing {src} on line {i + first_line}")
        if enc["kind"] == "numeric":
            vals = []
            for i, c in enumerate(cells):
                v = _as_float(c)
                if v is None:
                    raise SchemaMismatch(f"non-numeric {src}={c!r} on line {i + first_line}")
                vals.append(v)
            cols.append(np.asarray(vals, dtype=float))
        else:
            levels = enc["levels"]
            known = set(levels)
            for i, c in enumerate(cells):
                if c not in known:
                    raise SchemaMismatch(f"unknown level {c!r} for {src} on line {i + first_line}")
            for lev in levels[1:]:
                cols.append(np.asarray([c == lev for c in cells], dtype=float))
    if cols:
        return np.column_stack(cols)
    return np.zeros((len(rows), 0))


def encoded_names(encoding) -> tuple:
    names = []
    for enc in encoding:
        if enc["kind"] == "numeric":
            names.append(enc["name"])
        else:
            names.extend(f"{enc['name']}={lev}" for lev in enc["levels"][1:])
    return tuple(names)


def load_csv(path, schema: dict) -> Dataset:
    """Read a trial CSV.

    ``schema`` holds ``treatment`` and ``outcome`` column names, optionally a
    ``covariates`` list (default: every other column) and a ``categorical``
    list.  Columns whose cells are not all numeric are treated as categorical
    too.  Categorical columns are dummy coded with the first observed level as
    reference.
    """
    header, rows = _read_rows(path)
    t_col, y_col = schema.get("treatment"), schema.get("outcome")
    if t_col is None or y_col is None:
        raise SchemaMismatch("schema must name a treatment and an outcome column")
    for c in (t_col, y_col):
        if c not in header:
            raise SchemaMismatch(f"column {c!r} not in file header")
    covs = schema.get("covariates")
    if covs is None:
        covs = [h for h in header if h not in (t_col, y_col)]
    categorical = set(schema.get("categorical", ()))
    unknown = (set(covs) | categorical) - set(header)
    if unknown:
        raise SchemaMismatch(f"columns not in file: {sorted(unknown)}")
    if not rows:
        raise SchemaMismatch("file has no data rows")

    ti, yi = header.index(t_col), header.index(y_col)
    treatment, outcome = [], []
    for i, r in enumerate(rows):
        for j, name in ((ti, t_col), (yi, y_col)):
            if _is_missing(r[j]):
                raise MissingValue(f"missing {name} on line {i + 2}")
        treatment.append(_binary(r[ti], t_col, i + 2))
        outcome.append(_binary(r[yi], y_col, i + 2))

    encoding = []
    for name in covs:
        j = header.index(name)
        cells = [r[j].strip() for r in rows]
        numeric = all(_as_float(c) is not None for c in cells if not _is_missing(c))
        if name in categorical or not numeric:
            levels = list(dict.fromkeys(c for c in cells if not _is_missing(c)))
            encoding.append({"name": name, "kind": "categorical", "levels": levels})
        else:
            encoding.append({"name": name, "kind": "numeric"})
    X = encode_covariates(header, rows, encoding)
    return Dataset(X, np.array(treatment), np.array(outcome), encoded_names(encoding),
                   tuple(encoding))


def load_covariates(path, encoding) -> np.ndarray:
    """Covariate matrix for new subjects, encoded like the training data."""
    header, rows = _read_rows(path)
    return encode_covariates(header, rows, encoding)


def save_csv(data: Dataset, path, treatment: str = "treatment", outcome: str = "outcome"):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(data.column_names) + [treatment, outcome])
        for x, a, y in zip(data.covariates, data.treatment, data.outcome):
            w.writerow([repr(float(v)) for v in x] + [int(a), int(y)])


# ------------------------------------------------------------------------ design


@dataclass(frozen=True)
class DesignSpec:
    main_columns: tuple = ()
    interaction_columns: tuple = ()
    include_treatment: bool = True
    standardize: bool = True
    offset: Optional[np.ndarray] = None
    intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "main_columns", tuple(int(j) for j in self.main_columns))
        object.__setattr__(self, "interaction_columns",
                           tuple(int(j) for j in self.interaction_columns))
        missing = set(self.interaction_columns) - set(self.main_columns)
        if missing:
            raise HierarchyViolation(f"interaction columns {sorted(missing)} lack a main effect")
        if self.interaction_columns and not self.include_treatment:
            raise HierarchyViolation("interactions need the treatment main effect")
        if self.offset is not None:
            off = np.asarray(self.offset, dtype=float)
            if off.ndim != 1 or not np.all(np.isfinite(off)):
                raise ValueError("offset must be a finite vector")
            object.__setattr__(self, "offset", off)

    @classmethod
    def full(cls, p: int, interactions: bool = True, **kw) -> "DesignSpec":
        cols = tuple(range(p))
        return cls(cols, cols if interactions else (), **kw)

    def to_dict(self) -> dict:
        return {"main_columns": list(self.main_columns),
                "interaction_columns": list(self.interaction_columns),
                "include_treatment": self.include_treatment,
                "standardize": self.standardize,
                "intercept": self.intercept}

    @classmethod
    def from_dict(cls, d) -> "DesignSpec":
        return cls(tuple(d["main_columns"]), tuple(d["interaction_columns"]),
                   d["include_treatment"], d["standardize"], None, d.get("intercept", True))


@dataclass(frozen=True)
class Scaling:
    center: np.ndarray
    scale: np.ndarray
    roles: tuple


@dataclass(frozen=True)
class Coefficients:
    beta0: float
    beta_t: Optional[float]
    beta_m: np.ndarray
    beta_z: np.ndarray
    roles: tuple = field(default=(), repr=False)

    def __post_init__(self):
        object.__setattr__(self, "beta_m", np.asarray(self.beta_m, dtype=float))
        object.__setattr__(self, "beta_z", np.asarray(self.beta_z, dtype=float))
        if self.beta_z.size and self.beta_t is None:
            raise HierarchyViolation("interaction coefficients require a treatment effect")

    @classmethod
    def from_vector(cls, vec, roles) -> "Coefficients":
        vec = np.asarray(vec, dtype=float)
        if len(vec) != len(roles):
            raise LengthMismatch("coefficient vector does not match design roles")
        roles = tuple(roles)
        r = np.array(roles)
        beta0 = float(vec[r == INTERCEPT][0]) if INTERCEPT in roles else 0.0
        beta_t = float(vec[r == TREATMENT][0]) if TREATMENT in roles else None
        return cls(beta0, beta_t, vec[r == MAIN], vec[r == INTERACTION], roles)

    def as_vector(self) -> np.ndarray:
        out = []
        it_m, it_z = iter(self.beta_m), iter(self.beta_z)
        for role in self.roles:
            if role == INTERCEPT:
                out.append(self.beta0)
            elif role == TREATMENT:
                out.append(self.beta_t)
            elif role == MAIN:
                out.append(next(it_m))
            else:
                out.append(next(it_z))
        return np.asarray(out, dtype=float)

    def to_dict(self) -> dict:
        return {"beta0": self.beta0, "beta_t": self.beta_t, "beta_m": self.beta_m.tolist(),
                "beta_z": self.beta_z.tolist(), "roles": list(self.roles)}

    @classmethod
    def from_dict(cls, d) -> "Coefficients":
        return cls(d["beta0"], d["beta_t"], d["beta_m"], d["beta_z"], tuple(d["roles"]))


def _column_scaling(raw, roles, intercept):
    n = raw.shape[0]
    center = raw.mean(axis=0) if intercept else np.zeros(raw.shape[1])
    if intercept:
        scale = raw.std(axis=0)
    else:
        scale = np.sqrt((raw ** 2).sum(axis=0) / n)
    for j, role in enumerate(roles):
        if role == INTERCEPT:
            center[j], scale[j] = 0.0, 1.0
    scale = np.where(scale > 1e-12, scale, 1.0)
    return center, scale


@dataclass(frozen=True)
class DesignMatrix:
    raw: np.ndarray
    roles: tuple
    names: tuple
    parents: np.ndarray  # raw column of each interaction's parent main effect, -1 otherwise
    scaling: Scaling
    spec: DesignSpec
    offset: Optional[np.ndarray] = None

    @property
    def std(self) -> np.ndarray:
        """Standardized columns (intercept untouched)."""
        cached = self.__dict__.get("_std")
        if cached is None:
            cached = (self.raw - self.scaling.center) / self.scaling.scale
            cached.flags.writeable = False
            object.__setattr__(self, "_std", cached)
        return cached

    @property
    def matrix(self) -> np.ndarray:
        return self.std if self.spec.standardize else self.raw

    @property
    def n(self) -> int:
        return self.raw.shape[0]

    @property
    def n_columns(self) -> int:
        return self.raw.shape[1]

    @property
    def column_roles(self) -> tuple:
        return self.roles

    def offset_or_zero(self) -> np.ndarray:
        return np.zeros(self.n) if self.offset is None else self.offset

    def subset(self, rows) -> "DesignMatrix":
        """Row subset, re-standardized on the retained rows."""
        rows = np.asarray(rows)
        raw = self.raw[rows]
        center, scale = _column_scaling(raw, self.roles, self.spec.intercept)
        off = None if self.offset is None else self.offset[rows]
        return DesignMatrix(raw, self.roles, self.names, self.parents,
                            Scaling(center, scale, self.roles), self.spec, off)

    def with_treatment(self, a) -> np.ndarray:
        """Raw matrix with the treatment column and all interactions evaluated at ``a``."""
        raw = self.raw.copy()
        a = np.broadcast_to(np.asarray(a, dtype=float), (self.n,))
        for j, role in enumerate(self.roles):
            if role == TREATMENT:
                raw[:, j] = a
            elif role == INTERACTION:
                raw[:, j] = a * raw[:, self.parents[j]]
        return raw


def build_design(data: Dataset, spec: DesignSpec) -> DesignMatrix:
    p = data.p
    for j in spec.main_columns:
        if not 0 <= j < p:
            raise IndexOutOfRange(f"main column {j} outside 0..{p - 1}")
    if spec.offset is not None and len(spec.offset) != data.n:
        raise LengthMismatch("offset length differs from row count")

    cols, roles, names, parents = [], [], [], []
    if spec.intercept:
        cols.append(np.ones(data.n))
        roles.append(INTERCEPT)
        names.append("(intercept)")
        parents.append(-1)
    a = data.treatment.astype(float)
    if spec.include_treatment:
        cols.append(a)
        roles.append(TREATMENT)
        names.append("treatment")
        parents.append(-1)
    main_pos = {}
    for j in spec.main_columns:
        main_pos[j] = len(cols)
        cols.append(data.covariates[:, j])
        roles.append(MAIN)
        names.append(data.column_names[j])
        parents.append(-1)
    for j in spec.interaction_columns:
        cols.append(a * data.covariates[:, j])
        roles.append(INTERACTION)
        names.append(f"treatment:{data.column_names[j]}")
        parents.append(main_pos[j])
    raw = np.column_stack(cols) if cols else np.zeros((data.n, 0))
    roles = tuple(roles)
    center, scale = _column_scaling(raw, roles, spec.intercept)
    return DesignMatrix(raw, roles, tuple(names), np.asarray(parents, dtype=np.int64),
                        Scaling(center, scale, roles), spec, spec.offset)


def unstandardize_vector(beta_std, scaling: Scaling) -> np.ndarray:
    beta_std = np.asarray(beta_std, dtype=float)
    if beta_std.shape != scaling.center.shape:
        raise LengthMismatch(
            f"{beta_std.shape[0]} coefficients for {scaling.center.shape[0]} columns")
    beta = beta_std / scaling.scale
    if INTERCEPT in scaling.roles:
        k = scaling.roles.index(INTERCEPT)
        beta[k] = beta_std[k] - np.dot(beta_std / scaling.scale, scaling.center)
    return beta


def standardize_vector(beta_raw, scaling: Scaling) -> np.ndarray:
    beta_raw = np.asarray(beta_raw, dtype=float)
    if beta_raw.shape != scaling.center.shape:
        raise LengthMismatch("coefficient vector does not match design")
    beta = beta_raw * scaling.scale
    if INTERCEPT in scaling.roles:
        k = scaling.roles.index(INTERCEPT)
        beta[k] = beta_raw[k] + np.dot(beta_raw, scaling.center)
    return beta


def unstandardize_coefficients(beta_std, scaling: Scaling) -> Coefficients:
    """Map standardized-scale coefficients back to the raw design scale."""
    return Coefficients.from_vector(unstandardize_vector(beta_std, scaling), scaling.roles)
