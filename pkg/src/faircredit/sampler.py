"""Metropolis-within-Gibbs inference over parameters and latent scores.

Each sweep updates every parameter by a single-coordinate normal random walk,
then every latent score by a uniform-window random walk, all accepted or
rejected in log space against the joint posterior.

Random streams. One master seed. derive_rng(seed, 0, 0) drives the parameter
updates, derive_rng(seed, 1, i) drives training latent i, and
derive_rng(seed, 2, j) drives test-time inference for observation j, so
results do not depend on update order or parallel scheduling. Every latent
step consumes exactly two uniforms from its stream: first the proposal, then
the accept test. Every parameter step consumes one standard normal (proposal)
then one uniform (accept test) from the parameter stream.
"""

import math
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

from . import probmodel
from .dataset import Dataset, Observation
from .errors import DataError, SamplerError
from .probmodel import (
    Design,
    LatentState,
    ModelConfig,
    ModelParams,
    DEFAULT_MODEL_CONFIG,
    LOG_2PI,
    PARAM_HEAD,
    head_log_likelihood,
    per_obs_log_likelihood,
)
from .util import (
    STREAM_PARAMS,
    STREAM_TEST_LATENT,
    STREAM_TRAIN_LATENT,
    atomic_write_text,
    derive_rng,
)

ADAPT_EVERY = 100     # sweeps between proposal-width rescalings during burn-in
ADAPT_FACTOR = 1.1
ERROR_BUDGET = 0.01   # abort when likelihood errors exceed this fraction of steps
_LATENT_CHUNK = 256   # sweeps of pre-drawn uniforms per latent stream refill


@dataclass(frozen=True)
class SamplerConfig:
    """Chain length and proposal settings.

    iterations counts total sweeps; the first burn_in sweeps are discarded and
    the rest kept at stride thin, so (iterations - burn_in) // thin draws are
    stored. delta is the half-width of the uniform latent proposal and
    param_step the std of the normal parameter proposal; with
    adapt_during_burn_in both are rescaled by 1.1 every 100 burn-in sweeps
    toward target_accept, then frozen.
    """

    iterations: int = 5000
    burn_in: int = 1000
    thin: int = 1
    delta: float = 0.5
    param_step: float = 0.1
    adapt_during_burn_in: bool = True
    target_accept: float = 0.35
    seed: int = 0

    def validate(self) -> None:
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not (0 <= self.burn_in < self.iterations):
            raise ValueError(
                f"burn_in must lie in [0, iterations), got {self.burn_in} of {self.iterations}"
            )
        if self.thin < 1:
            raise ValueError(f"thin must be >= 1, got {self.thin}")
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ValueError(f"delta must be positive, got {self.delta!r}")
        if not (self.param_step > 0 and math.isfinite(self.param_step)):
            raise ValueError(f"param_step must be positive, got {self.param_step!r}")
        if not (0 < self.target_accept < 1):
            raise ValueError(f"target_accept must be in (0,1), got {self.target_accept!r}")

    def n_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class Chain:
    """Stored draws plus bookkeeping from one run."""

    param_names: tuple[str, ...]
    param_draws: np.ndarray            # (n_draws, n_params)
    latent_draws: np.ndarray           # (n_draws, n_obs)
    accept_rate_params: np.ndarray     # per parameter, post burn-in
    accept_rate_latents: float         # pooled over latents, post burn-in
    config: SamplerConfig
    rng_seed: int
    n_likelihood_errors: int = 0
    final_delta: float = 0.0
    final_param_step: float = 0.0

    def n_draws(self) -> int:
        return int(self.param_draws.shape[0])

    def param_column(self, name: str) -> np.ndarray:
        return self.param_draws[:, self.param_names.index(name)]

    def theta_median(self) -> ModelParams:
        med = np.median(self.param_draws, axis=0)
        return ModelParams.from_vector(med)

    def latent_means(self) -> np.ndarray:
        return self.latent_draws.mean(axis=0)

    def latent_medians(self) -> np.ndarray:
        return np.median(self.latent_draws, axis=0)

    def iter_param_draws(self):
        for row in self.param_draws:
            yield ModelParams.from_vector(row)


@dataclass
class LatentPosterior:
    """Posterior summary of one observation's latent score."""

    mean: float
    median: float
    std: float
    draws: np.ndarray
    accept_rate: float = 0.0


def mh_step_scalar(
    current: float,
    log_target: Callable[[float], float],
    delta: float,
    rng: np.random.Generator,
) -> tuple[float, bool, float]:
    """One uniform-window random-walk step against an arbitrary scalar log target.

    Consumes exactly two uniforms: proposal then accept test. Returns
    (new value, accepted, log acceptance ratio). A log ratio >= 0 always
    accepts; a log_target of -inf at the proposal always rejects.
    """
    u_prop = rng.random()
    u_acc = rng.random()
    proposal = current + delta * (2.0 * u_prop - 1.0)
    log_r = log_target(proposal) - log_target(current)
    if log_r >= 0.0:
        return proposal, True, log_r
    if u_acc > 0.0 and math.log(u_acc) < log_r:
        return proposal, True, log_r
    return current, False, log_r


def mh_step_latent(
    i: int,
    current_c: float,
    theta: ModelParams,
    obs: Observation,
    delta: float,
    include_credit: bool,
    rng: np.random.Generator,
    config: ModelConfig = DEFAULT_MODEL_CONFIG,
) -> tuple[float, bool]:
    """One latent update for observation i.

    The target is log N(c; 0, 1) plus the observation log-likelihood. A
    likelihood error (credit rate above the cap) rejects the proposal rather
    than aborting. Stream use: one uniform for the proposal, one for the
    accept test, in that order.
    """
    design = _single_obs_design(obs, config)
    vec = theta.to_vector(config.include_credit_intercept)

    def target(c: float) -> float:
        ll, n_over = per_obs_log_likelihood(vec, np.array([c]), design, include_credit)
        if n_over:
            return float("-inf")
        return float(ll[0] - 0.5 * (LOG_2PI + c * c))

    new_c, accepted, _ = mh_step_scalar(current_c, target, delta, rng)
    return new_c, accepted


def mh_step_param(
    name: str,
    theta: ModelParams,
    latents: LatentState | np.ndarray,
    data: Dataset,
    step: float,
    rng: np.random.Generator,
    config: ModelConfig = DEFAULT_MODEL_CONFIG,
) -> tuple[ModelParams, bool]:
    """One single-coordinate parameter update against the joint posterior.

    Only the affected likelihood head is recomputed; combined with the
    standard normal prior term this equals the full log-posterior ratio.
    Stream use: one standard normal (proposal), one uniform (accept test).
    """
    names = config.active_param_names()
    if name not in names:
        raise ValueError(f"unknown parameter {name!r}; expected one of {names}")
    j = names.index(name)
    c = np.asarray(getattr(latents, "c", latents), dtype=float)
    if c.shape != (len(data),):
        raise ValueError(f"latent vector shape {c.shape} does not match data of size {len(data)}")
    design = Design.from_dataset(data, config)
    vec = theta.to_vector(config.include_credit_intercept)
    head = PARAM_HEAD[j if j < 11 else 11]
    current_sum, _ = head_log_likelihood(head, vec, c, design)

    z = rng.standard_normal()
    u_acc = rng.random()
    proposal = vec[j] + step * z
    accepted = _accept_param(vec, j, proposal, head, current_sum, c, design, u_acc)[0]
    if accepted:
        vec = vec.copy()
        vec[j] = proposal
    return ModelParams.from_vector(vec), accepted


def _accept_param(
    vec: np.ndarray,
    j: int,
    proposal: float,
    head: int,
    current_head_sum: float,
    c: np.ndarray,
    design: Design,
    u_acc: float,
) -> tuple[bool, float, int]:
    """Shared accept logic for parameter steps. Returns (accepted, new head sum, errors)."""
    old = vec[j]
    vec[j] = proposal
    new_sum, n_over = head_log_likelihood(head, vec, c, design)
    vec[j] = old
    if n_over or new_sum == float("-inf"):
        return False, current_head_sum, 1
    log_r = (new_sum - current_head_sum) + 0.5 * (old * old - proposal * proposal)
    if log_r >= 0.0 or (u_acc > 0.0 and math.log(u_acc) < log_r):
        return True, new_sum, 0
    return False, current_head_sum, 0


def run_chain(data: Dataset, model_config: ModelConfig, sampler_config: SamplerConfig) -> Chain:
    """Run the full Metropolis-within-Gibbs chain on a dataset.

    Initial state is all zeros. Within a sweep, parameters update first in
    serialization order, then all latents. Results are bit-identical for a
    given config and seed. Persistent likelihood errors (more than 1% of
    steps) abort with diagnostics.
    """
    sampler_config.validate()
    model_config.validate()
    data.validate()
    cfg = sampler_config
    n = len(data)
    design = Design.from_dataset(data, model_config)
    names = model_config.active_param_names()
    k = len(names)
    heads = [PARAM_HEAD[j if j < 11 else 11] for j in range(k)]

    theta = np.zeros(k)
    c = np.zeros(n)
    delta = cfg.delta
    step = cfg.param_step

    param_rng = derive_rng(cfg.seed, STREAM_PARAMS, 0)
    latent_rngs = [derive_rng(cfg.seed, STREAM_TRAIN_LATENT, i) for i in range(n)]

    n_draws = cfg.n_draws()
    param_draws = np.empty((n_draws, k))
    latent_draws = np.empty((n_draws, n))

    post_sweeps = cfg.iterations - cfg.burn_in
    acc_param_post = np.zeros(k, dtype=np.int64)
    acc_latent_post = 0
    win_param_acc = win_param_tot = 0
    win_latent_acc = win_latent_tot = 0
    err_steps = 0
    total_steps = 0

    buf = np.empty((n, 2 * _LATENT_CHUNK))
    buf_pos = _LATENT_CHUNK  # forces a refill on first use
    draw_idx = 0

    for sweep in range(1, cfg.iterations + 1):
        post = sweep > cfg.burn_in

        # parameter phase; head sums refresh here because latents moved
        head_sums = [head_log_likelihood(h, theta, c, design)[0] for h in (0, 1, 2)]
        for j in range(k):
            z = param_rng.standard_normal()
            u_acc = param_rng.random()
            proposal = theta[j] + step * z
            accepted, new_sum, n_err = _accept_param(
                theta, j, proposal, heads[j], head_sums[heads[j]], c, design, u_acc
            )
            total_steps += 1
            err_steps += n_err
            win_param_tot += 1
            if accepted:
                theta[j] = proposal
                head_sums[heads[j]] = new_sum
                win_param_acc += 1
                if post:
                    acc_param_post[j] += 1

        # latent phase, vectorized across observations
        if buf_pos >= _LATENT_CHUNK:
            for i, g in enumerate(latent_rngs):
                buf[i] = g.random(2 * _LATENT_CHUNK)
            buf_pos = 0
        u_prop = buf[:, 2 * buf_pos]
        u_acc_vec = buf[:, 2 * buf_pos + 1]
        buf_pos += 1

        ll_cur, _ = per_obs_log_likelihood(theta, c, design, include_credit=True)
        c_prop = c + delta * (2.0 * u_prop - 1.0)
        ll_prop, n_over = per_obs_log_likelihood(theta, c_prop, design, include_credit=True)
        total_steps += n
        err_steps += n_over
        # associate exactly as the scalar kernel does so both paths agree bitwise
        log_r = (ll_prop - 0.5 * (LOG_2PI + c_prop * c_prop)) - (ll_cur - 0.5 * (LOG_2PI + c * c))
        with np.errstate(divide="ignore"):
            accept = (log_r >= 0.0) | (np.log(u_acc_vec) < log_r)
        c = np.where(accept, c_prop, c)
        n_acc = int(np.count_nonzero(accept))
        win_latent_acc += n_acc
        win_latent_tot += n
        if post:
            acc_latent_post += n_acc

        if sweep % ADAPT_EVERY == 0:
            if err_steps > ERROR_BUDGET * total_steps:
                raise SamplerError(
                    f"sampler aborted at sweep {sweep}: {err_steps} likelihood errors "
                    f"over {total_steps} steps (> {ERROR_BUDGET:.0%}); "
                    f"delta={delta!r} param_step={step!r}"
                )
            if cfg.adapt_during_burn_in and sweep <= cfg.burn_in:
                if win_latent_tot:
                    rate = win_latent_acc / win_latent_tot
                    delta = delta * ADAPT_FACTOR if rate > cfg.target_accept else delta / ADAPT_FACTOR
                if win_param_tot:
                    rate = win_param_acc / win_param_tot
                    step = step * ADAPT_FACTOR if rate > cfg.target_accept else step / ADAPT_FACTOR
                win_param_acc = win_param_tot = 0
                win_latent_acc = win_latent_tot = 0

        if post and (sweep - cfg.burn_in) % cfg.thin == 0:
            param_draws[draw_idx] = theta
            latent_draws[draw_idx] = c
            draw_idx += 1

    if err_steps > ERROR_BUDGET * total_steps:
        raise SamplerError(
            f"sampler finished with {err_steps} likelihood errors over {total_steps} steps "
            f"(> {ERROR_BUDGET:.0%})"
        )
    assert draw_idx == n_draws
    return Chain(
        param_names=names,
        param_draws=param_draws,
        latent_draws=latent_draws,
        accept_rate_params=acc_param_post / max(post_sweeps, 1),
        accept_rate_latents=acc_latent_post / max(n * post_sweeps, 1),
        config=cfg,
        rng_seed=cfg.seed,
        n_likelihood_errors=err_steps,
        final_delta=delta,
        final_param_step=step,
    )


def infer_latent(
    theta_hat: ModelParams,
    obs: Observation,
    model_config: ModelConfig,
    sampler_config: SamplerConfig,
    include_credit: bool,
    stream_index: int = 0,
) -> LatentPosterior:
    """Posterior over one observation's latent score under fixed parameters.

    include_credit=True conditions on the observation's own credit amount;
    prediction must use False so the target cannot leak into its feature.
    Stream: derive_rng(seed, 2, stream_index).
    """
    sampler_config.validate()
    model_config.validate()
    theta_hat.validate()
    cfg = sampler_config

    sex, age = float(obs.sex), float(obs.age_std)
    a_j = theta_hat.b_j + sex * theta_hat.beta_j_s + age * theta_hat.beta_j_a
    k_j = theta_hat.beta_j_c
    s_j = 2.0 * obs.job - 1.0
    a_h = theta_hat.b_h + sex * theta_hat.beta_h_s + age * theta_hat.beta_h_a
    k_h = theta_hat.beta_h_c
    s_h = 2.0 * obs.house - 1.0
    if include_credit:
        a_c = sex * theta_hat.beta_c_s + age * theta_hat.beta_c_a
        if model_config.include_credit_intercept:
            if theta_hat.b_c is None:
                raise ValueError("credit intercept enabled but b_c is None")
            a_c += theta_hat.b_c
        k_c = theta_hat.beta_c_c
        count = float(probmodel.credit_count(obs.credit, model_config.credit_scale))
        lgam = float(gammaln(count + 1.0))
        cap_log = math.log(model_config.poisson_rate_cap)

    exp, log1p, log = math.exp, math.log1p, math.log

    def loglik(cv: float) -> float:
        x = (a_j + k_j * cv) * s_j
        ll = -log1p(exp(-x)) if x >= 0.0 else x - log1p(exp(x))
        x = (a_h + k_h * cv) * s_h
        ll += -log1p(exp(-x)) if x >= 0.0 else x - log1p(exp(x))
        if include_credit:
            lin = a_c + k_c * cv
            if lin > cap_log:
                return float("-inf")
            ll += count * lin - exp(lin) - lgam
        return ll

    rng = derive_rng(cfg.seed, STREAM_TEST_LATENT, stream_index)
    u = rng.random(2 * cfg.iterations)

    cv = 0.0
    lp = loglik(cv) - 0.5 * (LOG_2PI + cv * cv)
    delta = cfg.delta
    draws = np.empty(cfg.n_draws())
    draw_idx = 0
    accepts = 0
    win_acc = 0
    for sweep in range(1, cfg.iterations + 1):
        prop = cv + delta * (2.0 * u[2 * sweep - 2] - 1.0)
        lp_prop = loglik(prop) - 0.5 * (LOG_2PI + prop * prop)
        log_r = lp_prop - lp
        u_acc = u[2 * sweep - 1]
        if log_r >= 0.0 or (u_acc > 0.0 and log(u_acc) < log_r):
            cv = prop
            lp = lp_prop
            win_acc += 1
            if sweep > cfg.burn_in:
                accepts += 1
        if sweep % ADAPT_EVERY == 0:
            if cfg.adapt_during_burn_in and sweep <= cfg.burn_in:
                rate = win_acc / ADAPT_EVERY
                delta = delta * ADAPT_FACTOR if rate > cfg.target_accept else delta / ADAPT_FACTOR
            win_acc = 0
        if sweep > cfg.burn_in and (sweep - cfg.burn_in) % cfg.thin == 0:
            draws[draw_idx] = cv
            draw_idx += 1

    post = cfg.iterations - cfg.burn_in
    return LatentPosterior(
        mean=float(np.mean(draws)),
        median=float(np.median(draws)),
        std=float(np.std(draws, ddof=1)) if draws.size > 1 else 0.0,
        draws=draws,
        accept_rate=accepts / max(post, 1),
    )


def infer_latent_test(
    theta_hat: ModelParams,
    obs: Observation,
    model_config: ModelConfig,
    sampler_config: SamplerConfig,
    stream_index: int = 0,
) -> LatentPosterior:
    """Test-time latent inference: the credit term is always excluded."""
    return infer_latent(
        theta_hat, obs, model_config, sampler_config,
        include_credit=False, stream_index=stream_index,
    )


def _single_obs_design(obs: Observation, config: ModelConfig) -> Design:
    counts = np.rint(np.array([float(obs.credit)]) / config.credit_scale)
    return Design(
        sex=np.array([float(obs.sex)]),
        age=np.array([float(obs.age_std)]),
        job_sign=np.array([2.0 * obs.job - 1.0]),
        house_sign=np.array([2.0 * obs.house - 1.0]),
        counts=counts,
        lgamma_counts=gammaln(counts + 1.0),
        cap_log=math.log(config.poisson_rate_cap),
    )


# ---------------------------------------------------------------------------
# chain file io

def export_chain(
    chain: Chain,
    out_dir: str,
    latent_indices: Sequence[int] | None = None,
    header_lines: tuple[str, ...] = (),
) -> list[str]:
    """Write params.csv and latents.csv under out_dir; returns the paths.

    latent_indices selects which latent columns to export (all by default;
    pass a subset to keep files small).
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    lines = [f"# {h}" for h in header_lines]
    lines.append(",".join(("draw",) + chain.param_names))
    for d in range(chain.n_draws()):
        row = ",".join(repr(float(v)) for v in chain.param_draws[d])
        lines.append(f"{d},{row}")
    p = os.path.join(out_dir, "params.csv")
    atomic_write_text(p, "\n".join(lines) + "\n")
    paths.append(p)

    n_obs = chain.latent_draws.shape[1]
    if latent_indices is None:
        idx = list(range(n_obs))
    else:
        idx = [int(i) for i in latent_indices]
        for i in idx:
            if not (0 <= i < n_obs):
                raise ValueError(f"latent index {i} out of range [0, {n_obs})")
    lines = [f"# {h}" for h in header_lines]
    lines.append(",".join(["draw"] + [f"c_{i}" for i in idx]))
    sub = chain.latent_draws[:, idx]
    for d in range(chain.n_draws()):
        row = ",".join(repr(float(v)) for v in sub[d])
        lines.append(f"{d},{row}")
    p = os.path.join(out_dir, "latents.csv")
    atomic_write_text(p, "\n".join(lines) + "\n")
    paths.append(p)
    return paths


def read_param_chain_csv(path: str) -> tuple[tuple[str, ...], np.ndarray]:
    """Read a params.csv written by export_chain: (names, draws array)."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = [ln for ln in raw.splitlines() if ln.strip() and not ln.startswith("#")]
    if not rows:
        raise DataError(f"{path}: no content")
    header = rows[0].split(",")
    if header[:1] != ["draw"] or len(header) < 2:
        raise DataError(f"{path}: malformed chain file header: {rows[0]!r}")
    names = tuple(header[1:])
    try:
        draws = np.array([[float(v) for v in ln.split(",")[1:]] for ln in rows[1:]])
    except ValueError as exc:
        raise DataError(f"{path}: malformed chain file row: {exc}") from exc
    if draws.ndim != 2 or draws.shape[0] == 0 or draws.shape[1] != len(names):
        raise DataError(f"{path}: malformed chain file shape")
    return names, draws
