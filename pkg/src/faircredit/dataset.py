"""Loading, validation, preprocessing, splitting, and synthetic generation.

The ingestion path mirrors a German-credit style CSV: sex and housing labels,
an ordinal job level, age in years, and a positive credit amount. Processing
maps these onto the binary/standardized features the model consumes.
"""

import csv
import io
import math
from dataclasses import dataclass, field, replace as _dc_replace
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from . import probmodel
from .errors import DataError, RateCapError
from .util import atomic_write_text

# candidate header spellings accepted out of the box (lowercased)
DEFAULT_COLUMN_CANDIDATES: dict[str, tuple[str, ...]] = {
    "sex": ("sex",),
    "age": ("age",),
    "job": ("job",),
    "housing": ("housing",),
    "credit": ("credit amount", "credit_amount", "credit"),
}

AGE_MIN, AGE_MAX = 18, 120


@dataclass(frozen=True)
class RawRecord:
    """One row of the source CSV after parsing and range validation."""

    sex: str
    age: int
    job: int
    housing: str
    credit_amount: int

    def validate(self, row: int | None = None) -> None:
        at = f" (row {row})" if row is not None else ""
        if not (AGE_MIN <= self.age <= AGE_MAX):
            raise DataError(f"age {self.age} outside [{AGE_MIN}, {AGE_MAX}]{at}")
        if self.job < 0:
            raise DataError(f"job level {self.job} is negative{at}")
        if self.credit_amount < 1:
            raise DataError(f"credit amount {self.credit_amount} is below 1{at}")


class Standardization(NamedTuple):
    """Training-set age moments, in years. age_std uses the n-1 denominator."""

    age_mean: float
    age_std: float


@dataclass(frozen=True)
class Observation:
    """One processed record in model space."""

    sex: int
    age_std: float
    job: int
    house: int
    credit: int


@dataclass(frozen=True)
class Dataset:
    """Column-major processed data plus the standardization that produced it.

    standardization is None in raw-age mode (ages passed through unscaled).
    age_raw keeps the original years when known; split() prefers it when
    re-standardizing, otherwise it reconstructs years from the stored moments.
    """

    sex: np.ndarray
    age_std: np.ndarray
    job: np.ndarray
    house: np.ndarray
    credit: np.ndarray
    standardization: Standardization | None = None
    age_raw: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.sex.shape[0])

    def __iter__(self) -> Iterator[Observation]:
        return iter(self.observations())

    def observation(self, i: int) -> Observation:
        return Observation(
            sex=int(self.sex[i]),
            age_std=float(self.age_std[i]),
            job=int(self.job[i]),
            house=int(self.house[i]),
            credit=int(self.credit[i]),
        )

    def observations(self) -> list[Observation]:
        return [self.observation(i) for i in range(len(self))]

    def validate(self) -> None:
        n = len(self)
        if n == 0:
            raise DataError("dataset is empty")
        for name in ("sex", "age_std", "job", "house", "credit"):
            col = getattr(self, name)
            if np.asarray(col).shape != (n,):
                raise DataError(f"column {name} has wrong shape")
        for name in ("sex", "job", "house"):
            col = np.asarray(getattr(self, name))
            if not np.all((col == 0) | (col == 1)):
                raise DataError(f"column {name} must be binary")
        if not np.all(np.isfinite(np.asarray(self.age_std, dtype=float))):
            raise DataError("age_std contains non-finite values")
        credit = np.asarray(self.credit)
        if not np.all(credit >= 1):
            raise DataError("credit must be >= 1")
        if self.standardization is not None and not (self.standardization.age_std > 0):
            raise DataError("stored age standard deviation must be positive")

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            sex=self.sex[idx],
            age_std=self.age_std[idx],
            job=self.job[idx],
            house=self.house[idx],
            credit=self.credit[idx],
            standardization=self.standardization,
            age_raw=None if self.age_raw is None else self.age_raw[idx],
        )

    def ages_in_years(self) -> np.ndarray:
        if self.age_raw is not None:
            return np.asarray(self.age_raw, dtype=float)
        if self.standardization is None:
            return np.asarray(self.age_std, dtype=float)
        mu, sd = self.standardization
        return np.asarray(self.age_std, dtype=float) * sd + mu


@dataclass(frozen=True)
class PreprocessConfig:
    """How raw labels become model features.

    sex_codes maps lowercased sex labels to {0,1}; labels outside the map are
    rejected. job becomes 1 when the ordinal level is >= job_threshold. house
    becomes 1 exactly when the housing label equals own_label. standardize_age
    False passes raw years through (no standardization stored).
    """

    sex_codes: dict[str, int] = field(default_factory=lambda: {"female": 0, "male": 1})
    job_threshold: int = 1
    own_label: str = "own"
    standardize_age: bool = True


DEFAULT_PREPROCESS = PreprocessConfig()


@dataclass(frozen=True)
class SplitSpec:
    train_count: int
    seed: int


def _resolve_columns(
    header: Sequence[str], column_map: dict[str, str] | None, path: str
) -> dict[str, int]:
    lowered = [h.strip().lower() for h in header]
    out: dict[str, int] = {}
    for fieldname, candidates in DEFAULT_COLUMN_CANDIDATES.items():
        wanted: tuple[str, ...]
        if column_map and fieldname in column_map:
            wanted = (column_map[fieldname].strip().lower(),)
        else:
            wanted = candidates
        hit = [i for i, h in enumerate(lowered) if h in wanted]
        if not hit:
            raise DataError(
                f"{path}: missing column for {fieldname!r} (accepted: {', '.join(wanted)})"
            )
        out[fieldname] = hit[0]
    return out


def _parse_int(value: str, row: int, column: str, path: str) -> int:
    try:
        f = float(value)
    except (TypeError, ValueError):
        raise DataError(f"{path} row {row}: column {column!r} is not a number: {value!r}") from None
    if not math.isfinite(f) or f != int(f):
        raise DataError(f"{path} row {row}: column {column!r} is not an integer: {value!r}")
    return int(f)


def load_csv(path: str, column_map: dict[str, str] | None = None) -> list[RawRecord]:
    """Read and validate the raw CSV. Header matching is case-insensitive.

    column_map overrides individual header names, e.g. {"credit": "Kredit"}.
    Errors name the offending row and column.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.reader(io.StringIO("\n".join(lines)))
    rows = list(reader)
    if not rows:
        raise DataError(f"{path}: empty file")
    cols = _resolve_columns(rows[0], column_map, path)
    records: list[RawRecord] = []
    for rownum, row in enumerate(rows[1:], start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) <= max(cols.values()):
            raise DataError(f"{path} row {rownum}: expected {len(rows[0])} cells, got {len(row)}")
        rec = RawRecord(
            sex=row[cols["sex"]].strip(),
            age=_parse_int(row[cols["age"]], rownum, "age", path),
            job=_parse_int(row[cols["job"]], rownum, "job", path),
            housing=row[cols["housing"]].strip(),
            credit_amount=_parse_int(row[cols["credit"]], rownum, "credit", path),
        )
        rec.validate(row=rownum)
        records.append(rec)
    if not records:
        raise DataError(f"{path}: no data rows")
    return records


def preprocess(records: Sequence[RawRecord], config: PreprocessConfig = DEFAULT_PREPROCESS) -> Dataset:
    """Map raw records onto model features. Pure: no global state, no RNG."""
    if not records:
        raise DataError("no records to preprocess")
    sex = np.empty(len(records), dtype=np.int64)
    for i, rec in enumerate(records):
        label = rec.sex.strip().lower()
        if label not in config.sex_codes:
            raise DataError(
                f"row {i + 1}: unknown sex label {rec.sex!r} "
                f"(known: {sorted(config.sex_codes)})"
            )
        sex[i] = int(config.sex_codes[label])
    ages = np.array([rec.age for rec in records], dtype=float)
    job = np.array([1 if rec.job >= config.job_threshold else 0 for rec in records], dtype=np.int64)
    own = config.own_label.strip().lower()
    house = np.array(
        [1 if rec.housing.strip().lower() == own else 0 for rec in records], dtype=np.int64
    )
    credit = np.array([rec.credit_amount for rec in records], dtype=np.int64)

    if config.standardize_age:
        if len(records) < 2:
            raise DataError("need at least 2 records to standardize age")
        mu = float(np.mean(ages))
        sd = float(np.std(ages, ddof=1))
        if sd == 0.0:
            raise DataError("age has zero variance; cannot standardize")
        age_std = (ages - mu) / sd
        standardization = Standardization(mu, sd)
    else:
        age_std = ages.copy()
        standardization = None

    ds = Dataset(
        sex=sex, age_std=age_std, job=job, house=house, credit=credit,
        standardization=standardization, age_raw=ages,
    )
    ds.validate()
    return ds


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Disjoint train/test split, deterministic in the seed.

    Age is re-standardized with the train split's own moments, and the test
    split reuses those train moments (never its own).
    """
    n = len(data)
    if not (0 < spec.train_count < n):
        raise DataError(f"train_count must be in (0, {n}), got {spec.train_count}")
    perm = np.random.default_rng(spec.seed).permutation(n)
    train_idx = np.sort(perm[: spec.train_count])
    test_idx = np.sort(perm[spec.train_count :])
    train = data.subset(train_idx)
    test = data.subset(test_idx)
    if data.standardization is None:
        return train, test
    ages = data.ages_in_years()
    train_ages = ages[train_idx]
    mu = float(np.mean(train_ages))
    sd = float(np.std(train_ages, ddof=1))
    if sd == 0.0:
        raise DataError("train split has zero age variance")
    stdz = Standardization(mu, sd)
    train = _dc_replace(
        train, age_std=(train_ages - mu) / sd, standardization=stdz, age_raw=train_ages
    )
    test = _dc_replace(
        test, age_std=(ages[test_idx] - mu) / sd, standardization=stdz, age_raw=ages[test_idx]
    )
    return train, test


@dataclass(frozen=True)
class CovariateSpec:
    """Marginals for the exogenous covariates of synthetic data."""

    sex_p: float = 0.69
    age_mean: float = 35.5
    age_sd: float = 11.0
    age_min: int = 19
    age_max: int = 75


DEFAULT_COVARIATES = CovariateSpec()


def generate_synthetic(
    params: probmodel.ModelParams,
    n: int,
    seed: int,
    covariate_spec: CovariateSpec = DEFAULT_COVARIATES,
    rate_cap: float = 1e7,
) -> tuple[Dataset, np.ndarray]:
    """Draw a dataset from the generative model. Returns (dataset, true latents).

    Draw order is fixed (sex, age, latents, job, house, credit) so results are
    reproducible for a given seed. The credit head includes params.b_c when it
    is set. Poisson draws of 0 are clamped to the credit floor of 1; with
    realistic rates the clamp never fires.
    """
    if n < 2:
        raise DataError("need n >= 2 synthetic records")
    params.validate()
    rng = np.random.default_rng(seed)
    sex = (rng.random(n) < covariate_spec.sex_p).astype(np.int64)
    ages = np.clip(
        np.rint(rng.normal(covariate_spec.age_mean, covariate_spec.age_sd, size=n)),
        covariate_spec.age_min,
        covariate_spec.age_max,
    )
    c = rng.standard_normal(n)
    mu = float(np.mean(ages))
    sd = float(np.std(ages, ddof=1))
    if sd == 0.0:
        raise DataError("synthetic ages degenerate; widen the covariate spec")
    age_std = (ages - mu) / sd

    p_job = _sigmoid_vec(params.b_j + sex * params.beta_j_s + age_std * params.beta_j_a + c * params.beta_j_c)
    job = (rng.random(n) < p_job).astype(np.int64)
    p_house = _sigmoid_vec(params.b_h + sex * params.beta_h_s + age_std * params.beta_h_a + c * params.beta_h_c)
    house = (rng.random(n) < p_house).astype(np.int64)

    lin = sex * params.beta_c_s + age_std * params.beta_c_a + c * params.beta_c_c
    if params.b_c is not None:
        lin = lin + params.b_c
    over = lin > math.log(rate_cap)
    if np.any(over):
        raise RateCapError(float(lin[np.nonzero(over)[0][0]]), rate_cap)
    credit = np.maximum(rng.poisson(np.exp(lin)), 1).astype(np.int64)

    ds = Dataset(
        sex=sex, age_std=age_std, job=job, house=house, credit=credit,
        standardization=Standardization(mu, sd), age_raw=ages,
    )
    ds.validate()
    return ds, c


def _sigmoid_vec(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


PROCESSED_COLUMNS = ("sex", "age_std", "job", "house", "credit")


def write_processed_csv(data: Dataset, path: str, header_lines: tuple[str, ...] = ()) -> None:
    """Export the processed dataset. Standardization rides along as comments."""
    lines = [f"# {h}" for h in header_lines]
    if data.standardization is not None:
        lines.append(f"# age_mean={data.standardization.age_mean!r}")
        lines.append(f"# age_sd={data.standardization.age_std!r}")
    lines.append(",".join(PROCESSED_COLUMNS))
    for i in range(len(data)):
        lines.append(
            f"{int(data.sex[i])},{float(data.age_std[i])!r},{int(data.job[i])},"
            f"{int(data.house[i])},{int(data.credit[i])}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_processed_csv(path: str) -> Dataset:
    """Read a dataset written by write_processed_csv."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    mu = sd = None
    rows: list[str] = []
    for ln in raw.splitlines():
        if ln.startswith("#"):
            body = ln[1:].strip()
            if body.startswith("age_mean="):
                mu = float(body.partition("=")[2])
            elif body.startswith("age_sd="):
                sd = float(body.partition("=")[2])
            continue
        if ln.strip():
            rows.append(ln)
    if not rows or rows[0].split(",") != list(PROCESSED_COLUMNS):
        raise DataError(f"{path}: expected header {','.join(PROCESSED_COLUMNS)}")
    try:
        cells = [ln.split(",") for ln in rows[1:]]
        sex = np.array([int(r[0]) for r in cells], dtype=np.int64)
        age_std = np.array([float(r[1]) for r in cells], dtype=float)
        job = np.array([int(r[2]) for r in cells], dtype=np.int64)
        house = np.array([int(r[3]) for r in cells], dtype=np.int64)
        credit = np.array([int(r[4]) for r in cells], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed data row: {exc}") from exc
    stdz = Standardization(mu, sd) if mu is not None and sd is not None else None
    ds = Dataset(sex=sex, age_std=age_std, job=job, house=house, credit=credit, standardization=stdz)
    ds.validate()
    return ds
