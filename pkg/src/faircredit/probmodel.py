"""Generative credit model: parameters, priors, and log-densities.

A person's job and house indicators follow logistic (sigmoid-link) heads in
sex, standardized age, and a latent reliability score c. Their credit amount
follows a log-linear Poisson head in the same drivers. The latent score and
every parameter carry standard normal priors. Everything here is pure,
log-space, and overflow-guarded.
"""

import math
from dataclasses import dataclass, replace as _dc_replace
from typing import TYPE_CHECKING, Iterable

import numpy as np
from scipy.special import gammaln

from .errors import RateCapError
from .util import parse_kv_text, format_kv_text

if TYPE_CHECKING:  # only for annotations; avoids a circular import
    from .dataset import Dataset, Observation

LOG_2PI = math.log(2.0 * math.pi)

# serialization / update order of the parameters; b_c participates only when
# the credit head has an intercept
PARAM_NAMES = (
    "b_j", "beta_j_s", "beta_j_a", "beta_j_c",
    "b_h", "beta_h_s", "beta_h_a", "beta_h_c",
    "beta_c_s", "beta_c_a", "beta_c_c",
    "b_c",
)
BASE_PARAM_NAMES = PARAM_NAMES[:11]

HEAD_JOB, HEAD_HOUSE, HEAD_CREDIT = 0, 1, 2
# which likelihood head each parameter position feeds
PARAM_HEAD = (0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2)


@dataclass(frozen=True)
class ModelConfig:
    """Structural switches of the credit head.

    include_credit_intercept: whether the Poisson head gets an intercept b_c.
    credit_scale: divisor applied to raw credit before treating it as a count.
    poisson_rate_cap: rates above this raise / reject as divergent.
    """

    include_credit_intercept: bool = False
    credit_scale: float = 1.0
    poisson_rate_cap: float = 1e7

    def validate(self) -> None:
        if not (self.credit_scale > 0 and math.isfinite(self.credit_scale)):
            raise ValueError(f"credit_scale must be positive, got {self.credit_scale!r}")
        if not (self.poisson_rate_cap > 0 and math.isfinite(self.poisson_rate_cap)):
            raise ValueError(f"poisson_rate_cap must be positive, got {self.poisson_rate_cap!r}")

    def active_param_names(self) -> tuple[str, ...]:
        return PARAM_NAMES if self.include_credit_intercept else BASE_PARAM_NAMES


DEFAULT_MODEL_CONFIG = ModelConfig()


@dataclass(frozen=True)
class ModelParams:
    """One point in parameter space. b_c is None unless the credit intercept is on."""

    b_j: float = 0.0
    beta_j_s: float = 0.0
    beta_j_a: float = 0.0
    beta_j_c: float = 0.0
    b_h: float = 0.0
    beta_h_s: float = 0.0
    beta_h_a: float = 0.0
    beta_h_c: float = 0.0
    beta_c_s: float = 0.0
    beta_c_a: float = 0.0
    beta_c_c: float = 0.0
    b_c: float | None = None

    def validate(self) -> None:
        for name in PARAM_NAMES:
            v = getattr(self, name)
            if name == "b_c" and v is None:
                continue
            if not math.isfinite(v):
                raise ValueError(f"parameter {name} is not finite: {v!r}")

    def replace(self, **kw) -> "ModelParams":
        return _dc_replace(self, **kw)

    def to_vector(self, include_credit_intercept: bool = False) -> np.ndarray:
        vals = [getattr(self, n) for n in BASE_PARAM_NAMES]
        if include_credit_intercept:
            if self.b_c is None:
                raise ValueError("credit intercept enabled but b_c is None")
            vals.append(self.b_c)
        return np.asarray(vals, dtype=float)

    @classmethod
    def from_vector(cls, vec: Iterable[float]) -> "ModelParams":
        v = [float(x) for x in vec]
        if len(v) == 11:
            return cls(*v)
        if len(v) == 12:
            return cls(*v[:11], b_c=v[11])
        raise ValueError(f"expected 11 or 12 values, got {len(v)}")

    def to_kv_text(self, header_lines: tuple[str, ...] = ()) -> str:
        # float() first: a numpy scalar's repr is not readable back
        items = {n: repr(float(getattr(self, n))) for n in BASE_PARAM_NAMES}
        if self.b_c is not None:
            items["b_c"] = repr(float(self.b_c))
        return format_kv_text(items, header_lines)

    @classmethod
    def from_kv_text(cls, text: str) -> "ModelParams":
        raw = parse_kv_text(text, where="params")
        unknown = set(raw) - set(PARAM_NAMES)
        if unknown:
            raise ValueError(f"unknown parameter names: {sorted(unknown)}")
        missing = set(BASE_PARAM_NAMES) - set(raw)
        if missing:
            raise ValueError(f"missing parameter names: {sorted(missing)}")
        kw = {k: float(v) for k, v in raw.items()}
        return cls(**kw)


@dataclass
class LatentState:
    """The per-observation latent reliability scores of one chain state."""

    c: np.ndarray

    def validate(self, n_expected: int | None = None) -> None:
        arr = np.asarray(self.c, dtype=float)
        if arr.ndim != 1:
            raise ValueError("latent state must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise ValueError("latent state contains non-finite values")
        if n_expected is not None and arr.shape[0] != n_expected:
            raise ValueError(f"latent state has {arr.shape[0]} entries, expected {n_expected}")


# ---------------------------------------------------------------------------
# scalar densities

def sigmoid(x: float) -> float:
    """Numerically stable logistic function; never overflows for finite x."""
    x = float(x)
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def log_sigmoid(x: float) -> float:
    """log(sigmoid(x)) without ever materializing the probability."""
    x = float(x)
    if x >= 0.0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


def bernoulli_log_pmf(y: int, p: float) -> float:
    """y*log(p) + (1-y)*log(1-p) for y in {0,1} and p in (0,1)."""
    if y not in (0, 1):
        raise ValueError(f"y must be 0 or 1, got {y!r}")
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must lie strictly inside (0,1), got {p!r}")
    return math.log(p) if y == 1 else math.log1p(-p)


def bernoulli_log_pmf_logit(y: int, x: float) -> float:
    """Bernoulli log-pmf with success probability sigmoid(x).

    Works directly on the linear predictor, so log(1-p) stays exact even when
    sigmoid(x) rounds to 1.0 (catastrophic cancellation in probability space).
    """
    if y not in (0, 1):
        raise ValueError(f"y must be 0 or 1, got {y!r}")
    return log_sigmoid(x) if y == 1 else log_sigmoid(-x)


def poisson_log_pmf(k: float, rate: float, rate_cap: float = 1e7) -> float:
    """k*log(rate) - rate - logGamma(k+1) for integer k >= 0, 0 < rate <= cap."""
    if k < 0 or k != math.floor(k):
        raise ValueError(f"k must be a non-negative integer, got {k!r}")
    if not (rate > 0.0):
        raise ValueError(f"rate must be positive, got {rate!r}")
    if rate > rate_cap:
        raise RateCapError(math.log(rate), rate_cap)
    return k * math.log(rate) - rate - float(gammaln(k + 1.0))


def normal_log_pdf(x: float) -> float:
    """Standard normal log-density."""
    return -0.5 * (LOG_2PI + x * x)


def credit_count(credit: float, credit_scale: float) -> int:
    """Count fed to the Poisson head: credit / scale, rounded half to even."""
    return int(np.rint(credit / credit_scale))


def log_prior(theta: ModelParams, config: ModelConfig = DEFAULT_MODEL_CONFIG) -> float:
    """Sum of independent standard normal log-densities over active parameters."""
    theta.validate()
    vec = theta.to_vector(config.include_credit_intercept)
    return float(-0.5 * (len(vec) * LOG_2PI + np.dot(vec, vec)))


def obs_log_likelihood(
    theta: ModelParams,
    c_i: float,
    obs: "Observation",
    include_credit: bool = True,
    config: ModelConfig = DEFAULT_MODEL_CONFIG,
) -> float:
    """Log-likelihood of a single observation given its latent score.

    include_credit=False drops the Poisson term; that is the test-time mode
    where the target must not inform its own features.
    """
    theta.validate()
    config.validate()
    if not math.isfinite(c_i):
        raise ValueError(f"latent value must be finite, got {c_i!r}")
    sex, age = float(obs.sex), float(obs.age_std)
    ll = bernoulli_log_pmf_logit(
        obs.job, theta.b_j + sex * theta.beta_j_s + age * theta.beta_j_a + c_i * theta.beta_j_c
    )
    ll += bernoulli_log_pmf_logit(
        obs.house, theta.b_h + sex * theta.beta_h_s + age * theta.beta_h_a + c_i * theta.beta_h_c
    )
    if include_credit:
        lin = sex * theta.beta_c_s + age * theta.beta_c_a + c_i * theta.beta_c_c
        if config.include_credit_intercept:
            if theta.b_c is None:
                raise ValueError("credit intercept enabled but b_c is None")
            lin += theta.b_c
        if lin > math.log(config.poisson_rate_cap):
            raise RateCapError(lin, config.poisson_rate_cap)
        k = credit_count(obs.credit, config.credit_scale)
        ll += k * lin - math.exp(lin) - float(gammaln(k + 1.0))
    return ll


def log_posterior(
    theta: ModelParams,
    latents: "LatentState | np.ndarray",
    data: "Dataset",
    config: ModelConfig = DEFAULT_MODEL_CONFIG,
) -> float:
    """Joint log-density: prior + latent prior + full-data likelihood (credit included)."""
    config.validate()
    c = np.asarray(getattr(latents, "c", latents), dtype=float)
    if c.shape != (len(data),):
        raise ValueError(f"latent vector shape {c.shape} does not match {len(data)} observations")
    if not np.all(np.isfinite(c)):
        raise ValueError("latent vector contains non-finite values")
    design = Design.from_dataset(data, config)
    vec = theta.to_vector(config.include_credit_intercept)
    ll, n_over = per_obs_log_likelihood(vec, c, design, include_credit=True)
    if n_over:
        bad = _first_overflow_lin(vec, c, design)
        raise RateCapError(bad, config.poisson_rate_cap)
    lp = log_prior(theta, config)
    lp += float(np.sum(-0.5 * (LOG_2PI + c * c)))
    lp += float(np.sum(ll))
    return lp


# ---------------------------------------------------------------------------
# vectorized likelihood engine (shared by the sampler and the scalar ops)

@dataclass
class Design:
    """Per-observation arrays precomputed once per (dataset, model config)."""

    sex: np.ndarray
    age: np.ndarray
    job_sign: np.ndarray    # 2*job - 1
    house_sign: np.ndarray  # 2*house - 1
    counts: np.ndarray      # rounded credit / credit_scale
    lgamma_counts: np.ndarray
    cap_log: float

    @classmethod
    def from_dataset(cls, data: "Dataset", config: ModelConfig) -> "Design":
        sex = np.asarray(data.sex, dtype=float)
        age = np.asarray(data.age_std, dtype=float)
        job = np.asarray(data.job, dtype=float)
        house = np.asarray(data.house, dtype=float)
        counts = np.rint(np.asarray(data.credit, dtype=float) / config.credit_scale)
        return cls(
            sex=sex,
            age=age,
            job_sign=2.0 * job - 1.0,
            house_sign=2.0 * house - 1.0,
            counts=counts,
            lgamma_counts=gammaln(counts + 1.0),
            cap_log=math.log(config.poisson_rate_cap),
        )

    def __len__(self) -> int:
        return self.sex.shape[0]


def head_log_likelihood(
    head: int, vec: np.ndarray, c: np.ndarray, design: Design
) -> tuple[float, int]:
    """Summed log-likelihood of one head. Returns (sum, overflow count).

    Overflowed credit rates contribute -inf to the sum instead of raising, so
    sampler steps can reject them and keep a counter.
    """
    if head == HEAD_JOB:
        x = vec[0] + design.sex * vec[1] + design.age * vec[2] + c * vec[3]
        return float(-np.sum(np.logaddexp(0.0, -x * design.job_sign))), 0
    if head == HEAD_HOUSE:
        x = vec[4] + design.sex * vec[5] + design.age * vec[6] + c * vec[7]
        return float(-np.sum(np.logaddexp(0.0, -x * design.house_sign))), 0
    lin = design.sex * vec[8] + design.age * vec[9] + c * vec[10]
    if vec.shape[0] == 12:
        lin = lin + vec[11]
    over = lin > design.cap_log
    n_over = int(np.count_nonzero(over))
    if n_over:
        return float("-inf"), n_over
    ll = design.counts * lin - np.exp(lin) - design.lgamma_counts
    return float(np.sum(ll)), 0


def per_obs_log_likelihood(
    vec: np.ndarray, c: np.ndarray, design: Design, include_credit: bool = True
) -> tuple[np.ndarray, int]:
    """Per-observation log-likelihood vector. Overflowed entries become -inf."""
    x = vec[0] + design.sex * vec[1] + design.age * vec[2] + c * vec[3]
    ll = -np.logaddexp(0.0, -x * design.job_sign)
    x = vec[4] + design.sex * vec[5] + design.age * vec[6] + c * vec[7]
    ll = ll - np.logaddexp(0.0, -x * design.house_sign)
    n_over = 0
    if include_credit:
        lin = design.sex * vec[8] + design.age * vec[9] + c * vec[10]
        if vec.shape[0] == 12:
            lin = lin + vec[11]
        over = lin > design.cap_log
        n_over = int(np.count_nonzero(over))
        safe = np.where(over, 0.0, lin)
        term = design.counts * lin - np.exp(safe) - design.lgamma_counts
        ll = ll + np.where(over, -np.inf, term)
    return ll, n_over


def _first_overflow_lin(vec: np.ndarray, c: np.ndarray, design: Design) -> float:
    lin = design.sex * vec[8] + design.age * vec[9] + c * vec[10]
    if vec.shape[0] == 12:
        lin = lin + vec[11]
    idx = np.nonzero(lin > design.cap_log)[0]
    return float(lin[idx[0]])
