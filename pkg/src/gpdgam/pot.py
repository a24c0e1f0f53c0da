"""Peaks-over-threshold preprocessing and the CSV input format.

Input CSV: a header row with a response column ``y``, linear covariates
``x_1 .. x_{p-1}`` (the intercept is prepended automatically) and smooth
covariates ``z_1 .. z_d``.  Other columns are carried along and may be used
as a per-row threshold.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOW_THRESHOLD_FRACTION = 0.2


class EmptySampleError(ValueError):
    """No observation exceeds the threshold."""


class CsvFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdSpec:
    """How to compute the threshold tau.

    ``kind`` is ``"constant"`` (``value`` = w > 0), ``"quantile"`` (marginal
    empirical quantile, ``value`` = level in (0, 1)) or ``"column"`` (``value``
    = name of a column holding a per-row threshold).
    """

    kind: str
    value: float | str

    def __post_init__(self):
        if self.kind == "constant":
            if not float(self.value) >= 0:
                raise ValueError(f"constant threshold must be nonnegative, got {self.value}")
        elif self.kind == "quantile":
            if not 0 < float(self.value) < 1:
                raise ValueError(f"quantile level must lie in (0, 1), got {self.value}")
        elif self.kind == "column":
            if not isinstance(self.value, str) or not self.value:
                raise ValueError("column threshold needs a column name")
        else:
            raise ValueError(f"unknown threshold kind {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "ThresholdSpec":
        """Parse ``constant:1.5``, ``quantile:0.9`` or ``column:tau``."""
        kind, sep, value = text.partition(":")
        if not sep:
            raise ValueError(f"threshold must look like kind:value, got {text!r}")
        kind = kind.strip().lower()
        if kind in ("constant", "quantile"):
            try:
                return cls(kind, float(value))
            except ValueError as err:
                raise ValueError(f"bad threshold {text!r}: {err}") from None
        return cls(kind, value.strip())

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value}


@dataclass
class RawTable:
    """Raw observations before thresholding; ``x`` excludes the intercept."""

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    extra: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, float).ravel()
        n = self.y.size
        self.x = np.asarray(self.x, float).reshape(n, -1)
        self.z = np.asarray(self.z, float).reshape(n, -1)

    def __len__(self):
        return self.y.size


@dataclass(frozen=True)
class ExceedanceSample:
    """Exceedances ``Y_i = Y*_i - tau_i`` with their covariates.

    ``x`` carries the intercept column.
    """

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    N: int
    threshold: ThresholdSpec
    tau: np.ndarray

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def d(self) -> int:
        return self.z.shape[1]

    @property
    def exceedance_fraction(self) -> float:
        return self.n / self.N

    def diagnostics(self) -> list[str]:
        if self.exceedance_fraction > LOW_THRESHOLD_FRACTION:
            return [
                f"exceedance fraction n/N = {self.exceedance_fraction:.3f} > {LOW_THRESHOLD_FRACTION}; "
                "threshold is probably too low for the tail approximation"
            ]
        return []

    def summary(self) -> dict:
        return {"n": self.n, "N": self.N, "threshold": self.threshold.to_dict()}


def with_intercept(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, float)
    return np.column_stack([np.ones(x.shape[0]), x])


def threshold_values(raw: RawTable, spec: ThresholdSpec) -> np.ndarray:
    if spec.kind == "constant":
        return np.full(len(raw), float(spec.value))
    if spec.kind == "quantile":
        return np.full(len(raw), np.quantile(raw.y, float(spec.value)))
    if spec.value not in raw.extra:
        raise KeyError(f"threshold column {spec.value!r} not present; have {sorted(raw.extra)}")
    return np.asarray(raw.extra[spec.value], float)


def apply_threshold(raw: RawTable, spec: ThresholdSpec) -> ExceedanceSample:
    """Keep strict exceedances ``Y* > tau`` and shift them by the threshold."""
    if len(raw) == 0:
        raise EmptySampleError("raw table is empty")
    tau = threshold_values(raw, spec)
    keep = raw.y > tau
    if not keep.any():
        raise EmptySampleError(f"no observation exceeds the threshold ({spec.kind}:{spec.value})")
    return ExceedanceSample(
        y=raw.y[keep] - tau[keep],
        x=with_intercept(raw.x[keep]),
        z=raw.z[keep],
        N=len(raw),
        threshold=spec,
        tau=tau[keep],
    )


_XCOL = re.compile(r"^x_(\d+)$")
_ZCOL = re.compile(r"^z_(\d+)$")


def _indexed_columns(header, pattern, prefix):
    idx = sorted(int(m.group(1)) for h in header if (m := pattern.match(h)))
    if idx != list(range(1, len(idx) + 1)):
        raise CsvFormatError(f"{prefix} columns must be numbered {prefix}_1..{prefix}_k without gaps, got {idx}")
    return [f"{prefix}_{i}" for i in idx]


def read_table(path, require_y: bool = True) -> tuple[list[str], dict[str, np.ndarray]]:
    """Read a numeric CSV into named float columns, naming the line of any bad cell."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        if len(set(header)) != len(header):
            raise CsvFormatError(f"{path}: duplicate column names in header")
        if require_y and "y" not in header:
            raise CsvFormatError(f"{path}: missing required column 'y'")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CsvFormatError(f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}")
            vals = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise CsvFormatError(f"{path}: line {lineno}, column {col!r}: not a number: {cell!r}") from None
                if not math.isfinite(v):
                    raise CsvFormatError(f"{path}: line {lineno}, column {col!r}: non-finite value")
                vals.append(v)
            rows.append(vals)
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, {h: data[:, i] for i, h in enumerate(header)}


def read_raw_csv(path) -> RawTable:
    header, cols = read_table(path)
    xcols = _indexed_columns(header, _XCOL, "x")
    zcols = _indexed_columns(header, _ZCOL, "z")
    if not zcols:
        raise CsvFormatError(f"{path}: at least one smooth covariate column z_1 is required")
    n = cols["y"].size
    x = np.column_stack([cols[c] for c in xcols]) if xcols else np.zeros((n, 0))
    z = np.column_stack([cols[c] for c in zcols])
    extra = {h: v for h, v in cols.items() if h != "y" and h not in xcols and h not in zcols}
    return RawTable(cols["y"], x, z, extra)


def write_raw_csv(path, raw: RawTable) -> None:
    path = Path(path)
    header = ["y"] + [f"x_{i + 1}" for i in range(raw.x.shape[1])] + [f"z_{j + 1}" for j in range(raw.z.shape[1])]
    header += list(raw.extra)
    cols = [raw.y[:, None], raw.x, raw.z] + [np.asarray(v)[:, None] for v in raw.extra.values()]
    data = np.hstack(cols)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in data:
            w.writerow([repr(float(v)) for v in row])
