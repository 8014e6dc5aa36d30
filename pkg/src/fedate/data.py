"""Dataset containers, design matrices, rank checks and CSV input/output.

CSV schema: a header row ``study_id,w,y,x1,...,xd`` followed by one record
per subject. ``w`` is 0 or 1. Study identifiers may be any distinct values;
they are remapped to ``1..K`` in ascending order on load.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionError, EmptyArm, ParseError, SchemaError, SingleStudy, ValidationError
from .numerics import DEFAULT_RANK_TOLERANCE, full_column_rank

__all__ = [
    "StudyDataset",
    "FederatedDataset",
    "ArmView",
    "split_by_arm",
    "pooled_arm",
    "augment_dummies",
    "check_conditions",
    "load_csv",
    "emit_csv",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StudyDataset:
    """Rows of one study.

    Attributes
    ----------
    study_id : int
    covariates : ndarray, shape (n_k, d)
    treatment : ndarray of int8, shape (n_k,)
    outcome : ndarray, shape (n_k,)
    """

    study_id: int
    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if X.size else X.reshape(0, 0)
        if X.ndim != 2:
            raise DimensionError("covariates must be 2-D")
        w_raw = np.asarray(self.treatment)
        y = np.asarray(self.outcome, dtype=np.float64)
        n = X.shape[0]
        if n < 1:
            raise ValidationError("a study needs at least one row")
        if w_raw.shape != (n,) or y.shape != (n,):
            raise DimensionError("covariates, treatment and outcome must have matching rows")
        if not np.all(np.isin(w_raw, (0, 1))):
            raise ValidationError("treatment entries must be 0 or 1")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValidationError("non-finite covariate or outcome")
        object.__setattr__(self, "study_id", int(self.study_id))
        object.__setattr__(self, "covariates", _frozen(X))
        object.__setattr__(self, "treatment", _frozen(w_raw.astype(np.int8)))
        object.__setattr__(self, "outcome", _frozen(y))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    def n_arm(self, arm: int) -> int:
        return int(np.count_nonzero(self.treatment == arm))

    def design(self) -> np.ndarray:
        """Intercept-augmented design ``X′ = (1, X)`` over all rows."""
        return np.column_stack([np.ones(self.n), self.covariates])

    def with_outcome(self, outcome) -> "StudyDataset":
        return StudyDataset(self.study_id, self.covariates, self.treatment, outcome)


@dataclass(frozen=True)
class FederatedDataset:
    """Ordered collection of studies sharing the covariate dimension."""

    studies: tuple[StudyDataset, ...]

    def __post_init__(self):
        studies = tuple(self.studies)
        if not studies:
            raise ValidationError("a federated dataset needs at least one study")
        if len({s.d for s in studies}) != 1:
            raise DimensionError("all studies must share the covariate dimension")
        ids = [s.study_id for s in studies]
        if len(set(ids)) != len(ids):
            raise ValidationError("study ids must be distinct")
        object.__setattr__(self, "studies", studies)

    @property
    def K(self) -> int:
        return len(self.studies)

    @property
    def d(self) -> int:
        return self.studies[0].d

    @property
    def n(self) -> int:
        return sum(s.n for s in self.studies)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([s.n for s in self.studies], dtype=np.int64)

    def n_arm(self, arm: int) -> int:
        return sum(s.n_arm(arm) for s in self.studies)

    def design(self) -> np.ndarray:
        """Pooled intercept-augmented design over all rows, study order."""
        return np.vstack([s.design() for s in self.studies])

    def map_outcomes(self, outcomes: Sequence[np.ndarray]) -> "FederatedDataset":
        return FederatedDataset(tuple(s.with_outcome(y) for s, y in zip(self.studies, outcomes)))


@dataclass(frozen=True)
class ArmView:
    """Design and response of the rows of one arm (first design column is 1)."""

    design: np.ndarray
    response: np.ndarray
    study_id: int | None = field(default=None)

    @property
    def n(self) -> int:
        return self.design.shape[0]


def split_by_arm(ds: StudyDataset, arm: int) -> ArmView:
    """Rows of ``ds`` with ``treatment == arm``, intercept prepended.

    Raises
    ------
    EmptyArm
        If the arm has no rows.
    """
    if arm not in (0, 1):
        raise ValidationError("arm must be 0 or 1")
    mask = ds.treatment == arm
    if not mask.any():
        raise EmptyArm(f"study {ds.study_id} has no rows in arm {arm}")
    X = ds.covariates[mask]
    return ArmView(np.column_stack([np.ones(X.shape[0]), X]), ds.outcome[mask].copy(), ds.study_id)


def pooled_arm(fed: FederatedDataset, arm: int) -> ArmView:
    """Stack one arm's rows across studies (studies without rows are skipped)."""
    views = []
    for s in fed.studies:
        if s.n_arm(arm):
            views.append(split_by_arm(s, arm))
    if not views:
        raise EmptyArm(f"no rows in arm {arm} across the federation")
    return ArmView(np.vstack([v.design for v in views]), np.concatenate([v.response for v in views]))


def augment_dummies(fed: FederatedDataset) -> FederatedDataset:
    """Append ``K − 1`` study indicators, the smallest study id as reference.

    Raises
    ------
    SingleStudy
        If the federation has a single study.
    """
    if fed.K < 2:
        raise SingleStudy("dummy augmentation needs at least two studies")
    order = sorted(s.study_id for s in fed.studies)
    rank = {sid: i for i, sid in enumerate(order)}
    out = []
    for s in fed.studies:
        H = np.zeros((s.n, fed.K - 1))
        j = rank[s.study_id]
        if j > 0:
            H[:, j - 1] = 1.0
        out.append(StudyDataset(s.study_id, np.hstack([s.covariates, H]), s.treatment, s.outcome))
    return FederatedDataset(tuple(out))


def check_conditions(fed: FederatedDataset, rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> dict[str, bool]:
    """Local and federated full-rank verdicts for the per-arm Gram matrices."""
    local = True
    for s in fed.studies:
        for arm in (0, 1):
            if s.n_arm(arm) == 0 or not full_column_rank(split_by_arm(s, arm).design, rank_tolerance):
                local = False
    federated = True
    for arm in (0, 1):
        if fed.n_arm(arm) == 0 or not full_column_rank(pooled_arm(fed, arm).design, rank_tolerance):
            federated = False
    return {"local_full_rank": local, "federated_full_rank": federated}


_X_COLUMN = re.compile(r"^x(\d+)$")


def _default_schema(header: Sequence[str]) -> dict:
    xs = sorted((int(m.group(1)), h) for h in header if (m := _X_COLUMN.match(h)))
    return {"study_id": "study_id", "w": "w", "y": "y", "x": [h for _, h in xs]}


def _study_sort_key(values):
    try:
        return sorted(values, key=lambda v: float(v))
    except ValueError:
        return sorted(values)


def load_csv(path, schema: Mapping | None = None) -> FederatedDataset:
    """Read a federated dataset from CSV.

    Parameters
    ----------
    path : path-like
    schema : mapping, optional
        Keys ``study_id``, ``w``, ``y`` (column names) and ``x`` (ordered
        list of covariate column names). Defaults to ``study_id,w,y,x1..xd``.

    Raises
    ------
    SchemaError
        Missing column.
    ParseError
        Wrong field count or unparsable number.
    ValidationError
        ``w`` outside {0, 1} or a non-finite value (a ``ValueError``).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError("empty file") from None
        sch = dict(_default_schema(header) if schema is None else schema)
        needed = [sch["study_id"], sch["w"], sch["y"], *sch["x"]]
        missing = [c for c in needed if c not in header]
        if missing:
            raise SchemaError(f"missing columns: {', '.join(missing)}")
        idx = {h: i for i, h in enumerate(header)}
        i_sid, i_w, i_y = idx[sch["study_id"]], idx[sch["w"]], idx[sch["y"]]
        i_x = [idx[c] for c in sch["x"]]
        groups: dict[str, list] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
            try:
                w = float(row[i_w])
                y = float(row[i_y])
                x = [float(row[i]) for i in i_x]
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if w not in (0.0, 1.0):
                raise ValidationError(f"line {lineno}: treatment must be 0 or 1, got {row[i_w]}")
            if not (math.isfinite(y) and all(math.isfinite(v) for v in x)):
                raise ValidationError(f"line {lineno}: non-finite value")
            groups.setdefault(row[i_sid].strip(), []).append((int(w), y, x))
    if not groups:
        raise SchemaError("no data rows")
    d = len(i_x)
    studies = []
    for k, key in enumerate(_study_sort_key(list(groups)), start=1):
        rows = groups[key]
        X = np.array([r[2] for r in rows], dtype=np.float64).reshape(len(rows), d)
        studies.append(StudyDataset(k, X, np.array([r[0] for r in rows]), np.array([r[1] for r in rows])))
    return FederatedDataset(tuple(studies))


def emit_csv(fed: FederatedDataset, path) -> None:
    """Write ``fed`` in the CSV schema with 17 significant digits."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["study_id", "w", "y", *[f"x{j}" for j in range(1, fed.d + 1)]])
        for s in fed.studies:
            for i in range(s.n):
                out.writerow([s.study_id, int(s.treatment[i]), format(s.outcome[i], ".17g"),
                              *[format(v, ".17g") for v in s.covariates[i]]])
