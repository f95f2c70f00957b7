"""Command line tests: config resolution, hashing, and end-to-end runs.

The pipeline fixture drives every subcommand once against a small generated
CSV and a shared output directory; individual tests then inspect the stored
exit codes, captured output, and files. Error paths get fresh invocations.
"""

import contextlib
import io
import os
from dataclasses import dataclass

import numpy as np
import pytest

from faircredit.cli import (
    DEFAULTS,
    PRESETS,
    config_hash,
    main,
    resolve_config,
)
from faircredit.errors import ConfigError
from faircredit.predictors import LinearModel
from faircredit.util import parse_kv_text


@dataclass
class CommandResult:
    code: int
    out: str
    err: str


def run_cli(argv) -> CommandResult:
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(list(argv))
    return CommandResult(code, out.getvalue(), err.getvalue())


def write_raw_csv(path, n=40, seed=9):
    r = np.random.default_rng(seed)
    lines = ["sex,age,job,housing,credit amount"]
    for _ in range(n):
        sex = "male" if r.integers(0, 2) else "female"
        age = int(r.integers(19, 70))
        job = int(r.integers(0, 4))
        housing = ("own", "rent", "free")[int(r.integers(0, 3))]
        credit = int(r.integers(3, 80))
        lines.append(f"{sex},{age},{job},{housing},{credit}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


CONFIG_TEMPLATE = """\
data.path = {raw}
split.train_count = 30
split.seed = 1
sampler.iterations = 80
sampler.burn_in = 20
sampler.thin = 2
sampler.delta = 0.8
forest.n_trees = 5
forest.max_depth = 3
forest.min_leaf = 2
out.latent_columns = 3
out.max_lag = 12
out.bins = 8
out.dir = {out}
synth.n = 50
synth.param.b_j = 0.5
synth.param.beta_c_c = 0.4
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    raw = root / "raw.csv"
    write_raw_csv(raw)
    out = root / "out"
    config = root / "config.kv"
    config.write_text(
        CONFIG_TEMPLATE.format(raw=raw, out=out), encoding="utf-8"
    )
    base = ["--config", str(config)]
    results = {
        "ingest": run_cli(["ingest", *base]),
        "fit_full": run_cli(["fit", *base, "--model", "full"]),
        "fit_unaware": run_cli(["fit", *base, "--model", "unaware"]),
        "fit_fair": run_cli(["fit", *base, "--model", "fair"]),
        "diagnose": run_cli(["diagnose", *base]),
        "compare": run_cli(["compare", *base]),
        "synth": run_cli(["synth", *base]),
    }
    for name, res in results.items():
        assert res.code == 0, f"{name} failed ({res.code}): {res.err or res.out}"
    return {"root": root, "raw": raw, "out": out, "config": config, "results": results}


def expected_hash(workspace) -> str:
    cfg = resolve_config(str(workspace["config"]), None, None, None, False)
    return config_hash(cfg)


def first_line(path) -> str:
    return path.read_text(encoding="utf-8").splitlines()[0]


# ---------------------------------------------------------------------------
# config resolution


def test_resolve_defaults_untouched():
    cfg = resolve_config(None, None, None, None, False)
    assert cfg == DEFAULTS
    assert cfg is not DEFAULTS


def test_resolve_preset_then_file_then_flags(tmp_path):
    config = tmp_path / "c.kv"
    config.write_text(
        "sampler.iterations = 123\nsampler.adapt_during_burn_in = true\n",
        encoding="utf-8",
    )
    cfg = resolve_config(str(config), "paper", 77, str(tmp_path / "o"), True)
    # preset applied first
    assert cfg["model.include_credit_intercept"] == "false"
    assert cfg["sampler.delta"] == "0.5"
    # file overrides the preset
    assert cfg["sampler.iterations"] == "123"
    assert cfg["sampler.adapt_during_burn_in"] == "true"
    # flags override everything
    assert cfg["split.seed"] == "77"
    assert cfg["sampler.seed"] == "77"
    assert cfg["forest.seed"] == "77"
    assert cfg["synth.seed"] == "77"
    assert cfg["out.dir"] == str(tmp_path / "o")
    assert cfg["fair.leaky"] == "true"


def test_resolve_preset_keys_are_known():
    for name, overrides in PRESETS.items():
        unknown = set(overrides) - set(DEFAULTS)
        assert not unknown, f"preset {name} has unknown keys {unknown}"


def test_resolve_unknown_config_key(tmp_path):
    config = tmp_path / "c.kv"
    config.write_text("sampler.iterationz = 5\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="unknown config keys.*sampler.iterationz"):
        resolve_config(str(config), None, None, None, False)


def test_resolve_unknown_preset():
    with pytest.raises(ConfigError, match="unknown preset"):
        resolve_config(None, "bogus", None, None, False)


def test_resolve_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        resolve_config(str(tmp_path / "nope.kv"), None, None, None, False)


def test_config_hash_stable_and_order_free():
    a = dict(DEFAULTS)
    b = dict(sorted(DEFAULTS.items(), reverse=True))
    assert config_hash(a) == config_hash(b)
    assert len(config_hash(a)) == 16


def test_config_hash_sensitive_to_values():
    changed = dict(DEFAULTS)
    changed["sampler.seed"] = "1"
    assert config_hash(changed) != config_hash(DEFAULTS)


# ---------------------------------------------------------------------------
# subcommands, happy path


def test_ingest_outputs(workspace):
    res = workspace["results"]["ingest"]
    assert "ingested 40 rows" in res.out
    out = workspace["out"]
    h = expected_hash(workspace)
    for name in (
        "preprocessed.csv",
        "dist_sex.csv",
        "dist_age.csv",
        "dist_job.csv",
        "dist_housing.csv",
        "dist_credit.csv",
        "covariance.csv",
        "correlation.csv",
    ):
        path = out / name
        assert path.exists(), name
        assert first_line(path) == f"# config_hash={h}", name


def test_resolved_config_recorded(workspace):
    text = (workspace["out"] / "config.kv").read_text(encoding="utf-8")
    stored = parse_kv_text(text, where="config.kv")
    assert stored == resolve_config(str(workspace["config"]), None, None, None, False)


def test_fit_linear_models(workspace):
    for model in ("full", "unaware"):
        res = workspace["results"][f"fit_{model}"]
        assert f"{model} model: intercept=" in res.out
        path = workspace["out"] / f"model_{model}.kv"
        fitted = LinearModel.from_kv_text(path.read_text(encoding="utf-8"))
        assert len(fitted.feature_names) == len(fitted.coefficients)
    full = LinearModel.from_kv_text(
        (workspace["out"] / "model_full.kv").read_text(encoding="utf-8")
    )
    assert "sex" in full.feature_names


def test_fit_fair_outputs(workspace):
    res = workspace["results"]["fit_fair"]
    assert "accept(" in res.out
    out = workspace["out"]
    h = expected_hash(workspace)
    for name in ("params.csv", "latents.csv", "summary.csv"):
        assert first_line(out / name) == f"# config_hash={h}", name
    for name in ("params.kv", "forest.txt", "config.kv"):
        assert (out / "model_fair" / name).exists(), name
    # out.latent_columns = 3 of 30 training rows
    lat_header = [
        line
        for line in (out / "latents.csv").read_text(encoding="utf-8").splitlines()
        if not line.startswith("#")
    ][0]
    fields = lat_header.split(",")
    assert fields[0] == "draw"
    assert fields[1] == "c_0"
    assert len(fields) == 4


def test_diagnose_outputs(workspace):
    res = workspace["results"]["diagnose"]
    assert "name,std,q05,median,q95,ess_bulk,ess_tail" in res.out
    plots = workspace["out"] / "plots"
    files = sorted(p.name for p in plots.iterdir())
    # 11 parameters, three files each
    assert len(files) == 33
    assert "b_j_trace.csv" in files
    assert "b_j_acf.csv" in files
    assert "b_j_hist.csv" in files


def test_compare_outputs(workspace):
    res = workspace["results"]["compare"]
    for token in ("full", "unaware", "fair", "honest (credit excluded"):
        assert token in res.out, token
    text = (workspace["out"] / "compare.csv").read_text(encoding="utf-8")
    assert text.startswith(f"# config_hash={expected_hash(workspace)}")
    assert "fair_test_r2_honest=" in text
    assert "fair_test_r2_leaky=" in text
    data_lines = [l for l in text.splitlines() if l and not l.startswith("#")]
    assert len(data_lines) == 4  # header plus one row per model


def test_compare_rerun_is_byte_identical(workspace):
    path = workspace["out"] / "compare.csv"
    before = path.read_bytes()
    res = run_cli(["compare", "--config", str(workspace["config"])])
    assert res.code == 0
    assert path.read_bytes() == before


def test_compare_leaky_flag(workspace, tmp_path):
    out2 = tmp_path / "leaky_out"
    res = run_cli(
        [
            "compare",
            "--config",
            str(workspace["config"]),
            "--out",
            str(out2),
            "--leaky-fair",
        ]
    )
    assert res.code == 0
    assert "(auto-ingested 40 rows" in res.out
    stored = parse_kv_text(
        (out2 / "config.kv").read_text(encoding="utf-8"), where="config.kv"
    )
    assert stored["fair.leaky"] == "true"
    assert "fair_test_r2_leaky=" in (out2 / "compare.csv").read_text(encoding="utf-8")


def test_synth_outputs(workspace):
    res = workspace["results"]["synth"]
    assert "corr(inferred latent means, true latents)" in res.out
    out = workspace["out"]
    lines = (out / "true_latents.csv").read_text(encoding="utf-8").splitlines()
    data = [l for l in lines if not l.startswith("#")]
    assert data[0] == "index,c"
    assert len(data) == 51  # header plus synth.n rows
    recovery = (out / "recovery.csv").read_text(encoding="utf-8")
    assert "# latent_corr=" in recovery
    rows = [l for l in recovery.splitlines() if not l.startswith("#")]
    assert rows[0] == "name,truth,median,abs_error"
    assert any(r.startswith("b_j,0.5,") for r in rows)
    synth_lines = (out / "synthetic.csv").read_text(encoding="utf-8").splitlines()
    assert synth_lines[0] == f"# config_hash={expected_hash(workspace)}"


def test_master_seed_changes_outputs(workspace, tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    base = ["synth", "--config", str(workspace["config"])]
    res_a = run_cli([*base, "--out", str(out_a), "--seed", "3"])
    res_b = run_cli([*base, "--out", str(out_b), "--seed", "4"])
    assert res_a.code == 0 and res_b.code == 0
    text_a = (out_a / "synthetic.csv").read_text(encoding="utf-8").splitlines()[1:]
    text_b = (out_b / "synthetic.csv").read_text(encoding="utf-8").splitlines()[1:]
    assert text_a != text_b


# ---------------------------------------------------------------------------
# error paths


def test_missing_data_file_exit_code(tmp_path):
    config = tmp_path / "c.kv"
    config.write_text(f"data.path = {tmp_path / 'absent.csv'}\n", encoding="utf-8")
    res = run_cli(["ingest", "--config", str(config), "--out", str(tmp_path / "o")])
    assert res.code == 2
    assert res.err.startswith("error:")


def test_bad_config_key_exit_code(tmp_path):
    config = tmp_path / "c.kv"
    config.write_text("no.such.key = 1\n", encoding="utf-8")
    res = run_cli(["ingest", "--config", str(config)])
    assert res.code == 2
    assert "unknown config keys" in res.err


def test_diagnose_without_chain(workspace, tmp_path):
    res = run_cli(
        [
            "diagnose",
            "--config",
            str(workspace["config"]),
            "--out",
            str(tmp_path / "empty"),
        ]
    )
    assert res.code == 2
    assert res.err.startswith("error:")


def test_malformed_csv_cell(tmp_path):
    raw = tmp_path / "raw.csv"
    raw.write_text(
        "sex,age,job,housing,credit amount\nmale,43,2,own,xyz\n", encoding="utf-8"
    )
    config = tmp_path / "c.kv"
    config.write_text(f"data.path = {raw}\n", encoding="utf-8")
    res = run_cli(["ingest", "--config", str(config), "--out", str(tmp_path / "o")])
    assert res.code == 2
    assert "error:" in res.err
