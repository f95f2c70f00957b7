"""Credit predictors: OLS baselines, a bagged regression forest, and the
two-stage fair model.

The fair model first infers each person's latent reliability score with the
sampler (training stage conditions on everything including credit), then
regresses credit on that single score with a bagged forest of CART trees.
At prediction time the score is re-inferred without the credit term, so the
target never feeds its own feature.
"""

import math
import os
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
import scipy.linalg

from .dataset import Dataset
from .errors import ConfigError, DataError, RankDeficientError, UserError
from .probmodel import ModelConfig, ModelParams
from .sampler import Chain, SamplerConfig, infer_latent, run_chain
from .util import (
    STREAM_TREE,
    atomic_write_text,
    derive_rng,
    format_kv_text,
    parse_bool,
    parse_kv_text,
)

FULL_FEATURES = ("sex", "age_std", "job", "house")
UNAWARE_FEATURES = ("job", "house")


# ---------------------------------------------------------------------------
# ordinary least squares

@dataclass
class LinearModel:
    feature_names: tuple[str, ...]
    coefficients: np.ndarray
    intercept: float

    def to_kv_text(self, header_lines: tuple[str, ...] = ()) -> str:
        items = {"intercept": repr(float(self.intercept))}
        for name, b in zip(self.feature_names, self.coefficients):
            items[f"coef.{name}"] = repr(float(b))
        return format_kv_text(items, header_lines)

    @classmethod
    def from_kv_text(cls, text: str) -> "LinearModel":
        raw = parse_kv_text(text, where="linear model")
        if "intercept" not in raw:
            raise UserError("linear model file is missing 'intercept'")
        names = tuple(k[len("coef."):] for k in raw if k.startswith("coef."))
        coefs = np.array([float(raw[f"coef.{n}"]) for n in names])
        return cls(feature_names=names, coefficients=coefs, intercept=float(raw["intercept"]))


def feature_matrix(data: Dataset, names: Sequence[str]) -> np.ndarray:
    cols = []
    for n in names:
        if n not in ("sex", "age_std", "job", "house"):
            raise ValueError(f"unknown feature {n!r}")
        cols.append(np.asarray(getattr(data, n), dtype=float))
    return np.column_stack(cols)


def fit_ols(
    features: np.ndarray, targets: np.ndarray, feature_names: Sequence[str] | None = None
) -> LinearModel:
    """Least squares through a pivoted QR decomposition (never normal equations).

    The intercept column is prepended internally. Rank deficiency raises and
    names a dependent column.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError(f"targets shape {y.shape} does not match {n} rows")
    if feature_names is None:
        feature_names = tuple(f"x{i}" for i in range(p))
    feature_names = tuple(feature_names)
    if len(feature_names) != p:
        raise ValueError("feature_names length does not match feature count")
    if n <= p + 1:
        raise DataError(f"need more rows ({n}) than coefficients ({p + 1}) to fit")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("features/targets contain non-finite values")

    A = np.column_stack([np.ones(n), X])
    q, r, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(A.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.count_nonzero(diag > tol))
    if rank < p + 1:
        all_names = ("intercept",) + feature_names
        offender = all_names[piv[rank]] if rank < len(piv) else all_names[piv[-1]]
        raise RankDeficientError(
            f"design matrix is rank deficient (rank {rank} of {p + 1}); "
            f"column {offender!r} is linearly dependent on the others"
        )
    beta_perm = scipy.linalg.solve_triangular(r, q.T @ y)
    beta = np.empty(p + 1)
    beta[piv] = beta_perm
    return LinearModel(
        feature_names=feature_names, coefficients=beta[1:].copy(), intercept=float(beta[0])
    )


def predict_ols(model: LinearModel, features: np.ndarray) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.coefficients.shape[0]:
        raise ValueError(
            f"feature matrix has shape {X.shape}, expected (*, {model.coefficients.shape[0]})"
        )
    return model.intercept + X @ model.coefficients


def fit_full(train: Dataset) -> LinearModel:
    """OLS of credit on (sex, age_std, job, house)."""
    train.validate()
    return fit_ols(
        feature_matrix(train, FULL_FEATURES),
        np.asarray(train.credit, dtype=float),
        FULL_FEATURES,
    )


def fit_unaware(train: Dataset) -> LinearModel:
    """OLS of credit on (job, house) only: protected attributes dropped."""
    train.validate()
    return fit_ols(
        feature_matrix(train, UNAWARE_FEATURES),
        np.asarray(train.credit, dtype=float),
        UNAWARE_FEATURES,
    )


# ---------------------------------------------------------------------------
# bagged regression trees on the single latent feature

@dataclass
class TreeNode:
    """Internal node when left/right are set (value still caches the mean);
    leaf when both children are None."""

    value: float
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    def is_leaf(self) -> bool:
        return self.left is None


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 200
    max_depth: int = 6
    min_leaf: int = 5
    seed: int = 0

    def validate(self) -> None:
        if self.n_trees < 1:
            raise ConfigError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth < 0:
            raise ConfigError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.min_leaf < 1:
            raise ConfigError(f"min_leaf must be >= 1, got {self.min_leaf}")


@dataclass
class ForestModel:
    trees: list[TreeNode]
    config: ForestConfig


def _build_tree(c: np.ndarray, y: np.ndarray, depth: int, cfg: ForestConfig) -> TreeNode:
    node = TreeNode(value=float(np.mean(y)))
    n = c.shape[0]
    if depth >= cfg.max_depth or n < 2 * cfg.min_leaf:
        return node
    if float(np.min(y)) == float(np.max(y)):
        return node  # zero variance, nothing to gain

    order = np.argsort(c, kind="stable")
    cs = c[order]
    ys = y[order]
    # candidate split after position i (1-based left size), only where the
    # feature value actually changes; thresholds are midpoints
    csum = np.cumsum(ys)
    csum2 = np.cumsum(ys * ys)
    total = csum[-1]
    total2 = csum2[-1]
    left_n = np.arange(1, n)
    valid = (cs[:-1] < cs[1:]) & (left_n >= cfg.min_leaf) & ((n - left_n) >= cfg.min_leaf)
    if not np.any(valid):
        return node
    lsum = csum[:-1]
    lsum2 = csum2[:-1]
    rsum = total - lsum
    rsum2 = total2 - lsum2
    rn = n - left_n
    sse = (lsum2 - lsum * lsum / left_n) + (rsum2 - rsum * rsum / rn)
    sse = np.where(valid, sse, np.inf)
    best = int(np.argmin(sse))
    if not np.isfinite(sse[best]):
        return node
    node.threshold = float((cs[best] + cs[best + 1]) / 2.0)
    node.left = _build_tree(cs[: best + 1], ys[: best + 1], depth + 1, cfg)
    node.right = _build_tree(cs[best + 1 :], ys[best + 1 :], depth + 1, cfg)
    return node


def _tree_predict_one(node: TreeNode, x: float) -> float:
    while not node.is_leaf():
        node = node.left if x <= node.threshold else node.right
    return node.value


def fit_forest(c_values: np.ndarray, targets: np.ndarray, config: ForestConfig) -> ForestModel:
    """Bagged variance-minimizing CART trees on the single latent feature.

    Each tree draws a same-size bootstrap from derive_rng(seed, 3, tree_index),
    so fitting is deterministic and order-independent.
    """
    config.validate()
    c = np.asarray(c_values, dtype=float)
    y = np.asarray(targets, dtype=float)
    if c.ndim != 1 or c.shape != y.shape:
        raise ValueError("c_values and targets must be matching 1-D arrays")
    if c.shape[0] < 1:
        raise DataError("cannot fit a forest to an empty dataset")
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(y))):
        raise DataError("forest inputs contain non-finite values")
    n = c.shape[0]
    trees = []
    for t in range(config.n_trees):
        rng = derive_rng(config.seed, STREAM_TREE, t)
        idx = rng.integers(0, n, size=n)
        trees.append(_build_tree(c[idx], y[idx], 0, config))
    return ForestModel(trees=trees, config=config)


def predict_forest(model: ForestModel, c_values: np.ndarray) -> np.ndarray:
    c = np.atleast_1d(np.asarray(c_values, dtype=float))
    out = np.empty(c.shape[0])
    for i, x in enumerate(c):
        out[i] = math.fsum(_tree_predict_one(t, float(x)) for t in model.trees) / len(model.trees)
    return out


# forest text format: preorder, one node per line, "N <threshold>" for an
# internal node followed by its left then right subtree, "L <value>" for a leaf
FOREST_FORMAT = "forest/1"


def forest_to_text(model: ForestModel, header_lines: tuple[str, ...] = ()) -> str:
    lines = [f"# {h}" for h in header_lines]
    cfg = model.config
    lines += [
        f"format = {FOREST_FORMAT}",
        f"n_trees = {cfg.n_trees}",
        f"max_depth = {cfg.max_depth}",
        f"min_leaf = {cfg.min_leaf}",
        f"seed = {cfg.seed}",
    ]
    for t, tree in enumerate(model.trees):
        lines.append(f"tree {t}")
        stack = [tree]
        while stack:
            node = stack.pop()
            if node.is_leaf():
                lines.append(f"L {float(node.value)!r}")
            else:
                lines.append(f"N {float(node.threshold)!r}")
                stack.append(node.right)
                stack.append(node.left)
    return "\n".join(lines) + "\n"


def forest_from_text(text: str) -> ForestModel:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    meta: dict[str, str] = {}
    pos = 0
    while pos < len(lines) and "=" in lines[pos]:
        k, _, v = lines[pos].partition("=")
        meta[k.strip()] = v.strip()
        pos += 1
    if meta.get("format") != FOREST_FORMAT:
        raise UserError(f"unsupported forest format: {meta.get('format')!r}")
    cfg = ForestConfig(
        n_trees=int(meta["n_trees"]),
        max_depth=int(meta["max_depth"]),
        min_leaf=int(meta["min_leaf"]),
        seed=int(meta["seed"]),
    )

    def parse_node(it: Iterator[str]) -> TreeNode:
        line = next(it)
        kind, _, payload = line.partition(" ")
        if kind == "L":
            return TreeNode(value=float(payload))
        if kind == "N":
            node = TreeNode(value=math.nan, threshold=float(payload))
            node.left = parse_node(it)
            node.right = parse_node(it)
            node.value = (node.left.value + node.right.value) / 2.0
            return node
        raise UserError(f"malformed forest node line: {line!r}")

    trees = []
    it = iter(lines[pos:])
    for t in range(cfg.n_trees):
        marker = next(it, None)
        if marker != f"tree {t}":
            raise UserError(f"malformed forest file: expected 'tree {t}', got {marker!r}")
        trees.append(parse_node(it))
    return ForestModel(trees=trees, config=cfg)


# ---------------------------------------------------------------------------
# the two-stage fair model

@dataclass
class FairModel:
    """Stage-one posterior medians plus the stage-two forest.

    latent_point picks the per-observation point estimate fed to the forest:
    the posterior mean (default) or median of the latent draws, applied at
    both training and prediction time.
    """

    theta_hat: ModelParams
    forest: ForestModel
    latent_sampler_config: SamplerConfig
    model_config: ModelConfig = field(default_factory=ModelConfig)
    latent_point: str = "mean"


def _point(draws_mean: float, draws_median: float, mode: str) -> float:
    return draws_mean if mode == "mean" else draws_median


def fit_fair(
    train: Dataset,
    model_config: ModelConfig,
    sampler_config: SamplerConfig,
    forest_config: ForestConfig,
    latent_point: str = "mean",
    chain: Chain | None = None,
) -> FairModel:
    """Two-stage fit: full-model chain, then forest of credit on the latent score.

    Pass a chain already run on (train, model_config, sampler_config) to skip
    the sampling stage.
    """
    if latent_point not in ("mean", "median"):
        raise ConfigError(f"latent_point must be 'mean' or 'median', got {latent_point!r}")
    train.validate()
    if chain is None:
        chain = run_chain(train, model_config, sampler_config)
    if chain.latent_draws.shape[1] != len(train):
        raise ValueError("chain latent width does not match the training set")
    theta_hat = chain.theta_median()
    c_feat = chain.latent_means() if latent_point == "mean" else chain.latent_medians()
    forest = fit_forest(c_feat, np.asarray(train.credit, dtype=float), forest_config)
    return FairModel(
        theta_hat=theta_hat,
        forest=forest,
        latent_sampler_config=sampler_config,
        model_config=model_config,
        latent_point=latent_point,
    )


def fair_latent_points(
    model: FairModel, data: Dataset, condition_on_credit: bool = False
) -> np.ndarray:
    """Per-observation latent point estimates at prediction time.

    Streams are derived from the observation index, so two datasets that
    differ only in a flipped attribute see identical randomness.
    """
    out = np.empty(len(data))
    mode = model.latent_point
    for i in range(len(data)):
        post = infer_latent(
            model.theta_hat,
            data.observation(i),
            model.model_config,
            model.latent_sampler_config,
            include_credit=condition_on_credit,
            stream_index=i,
        )
        out[i] = _point(post.mean, post.median, mode)
    return out


def predict_fair(model: FairModel, test: Dataset, condition_on_credit: bool = False) -> np.ndarray:
    """Forest prediction on re-inferred latent scores.

    condition_on_credit=True reproduces the leaky protocol where the observed
    credit informs its own feature; keep it False for honest prediction.
    """
    test.validate()
    c_hat = fair_latent_points(model, test, condition_on_credit)
    return predict_forest(model.forest, c_hat)


# ---------------------------------------------------------------------------
# fair model directory io

def save_fair_model(model: FairModel, out_dir: str, header_lines: tuple[str, ...] = ()) -> None:
    os.makedirs(out_dir, exist_ok=True)
    atomic_write_text(os.path.join(out_dir, "params.kv"), model.theta_hat.to_kv_text(header_lines))
    atomic_write_text(os.path.join(out_dir, "forest.txt"), forest_to_text(model.forest, header_lines))
    sc = model.latent_sampler_config
    mc = model.model_config
    items = {
        "sampler.iterations": str(sc.iterations),
        "sampler.burn_in": str(sc.burn_in),
        "sampler.thin": str(sc.thin),
        "sampler.delta": repr(sc.delta),
        "sampler.param_step": repr(sc.param_step),
        "sampler.adapt_during_burn_in": str(sc.adapt_during_burn_in).lower(),
        "sampler.target_accept": repr(sc.target_accept),
        "sampler.seed": str(sc.seed),
        "model.include_credit_intercept": str(mc.include_credit_intercept).lower(),
        "model.credit_scale": repr(mc.credit_scale),
        "model.poisson_rate_cap": repr(mc.poisson_rate_cap),
        "latent_point": model.latent_point,
    }
    atomic_write_text(os.path.join(out_dir, "config.kv"), format_kv_text(items, header_lines))


def load_fair_model(model_dir: str) -> FairModel:
    def read(name: str) -> str:
        path = os.path.join(model_dir, name)
        try:
            with open(path, encoding="utf-8") as fh:
                return fh.read()
        except OSError as exc:
            raise UserError(f"cannot read fair model file {path}: {exc}") from exc

    theta = ModelParams.from_kv_text(read("params.kv"))
    forest = forest_from_text(read("forest.txt"))
    raw = parse_kv_text(read("config.kv"), where="fair model config")
    sc = SamplerConfig(
        iterations=int(raw["sampler.iterations"]),
        burn_in=int(raw["sampler.burn_in"]),
        thin=int(raw["sampler.thin"]),
        delta=float(raw["sampler.delta"]),
        param_step=float(raw["sampler.param_step"]),
        adapt_during_burn_in=parse_bool(raw["sampler.adapt_during_burn_in"], "adapt_during_burn_in"),
        target_accept=float(raw["sampler.target_accept"]),
        seed=int(raw["sampler.seed"]),
    )
    mc = ModelConfig(
        include_credit_intercept=parse_bool(
            raw["model.include_credit_intercept"], "include_credit_intercept"
        ),
        credit_scale=float(raw["model.credit_scale"]),
        poisson_rate_cap=float(raw["model.poisson_rate_cap"]),
    )
    return FairModel(
        theta_hat=theta,
        forest=forest,
        latent_sampler_config=sc,
        model_config=mc,
        latent_point=raw.get("latent_point", "mean"),
    )
