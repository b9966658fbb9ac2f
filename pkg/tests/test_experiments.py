import json

import pytest

from dsp.config import resolve_config
from dsp.datasets import collect_demos, perturb_dataset
from dsp.errors import ConfigurationError, ValidationError
from dsp.experiments import run_pipeline, sweep


@pytest.fixture
def base(tmp_path):
    overrides = {
        "run.task": "point_reach",
        "train.stage1_steps": 2,
        "train.stage2_steps": 3,
        "train.batch_size": 4,
        "train.eval_every": 1,
        "policy.hidden_dim": 4,
        "policy.embed_dim": 4,
        "eval.n_episodes": 2,
        "eval.n_resamples": 50,
        "data.n_clean": 2,
        "data.n_perturbed": 2,
    }
    return resolve_config(None, overrides, env={}, env_file=tmp_path / ".env")


@pytest.fixture(scope="module")
def demos():
    return collect_demos("point_reach", 6, seed=0)


def test_run_pipeline_summary(base, demos, tmp_path):
    dirty = perturb_dataset(demos[3:], frac=0.5, eta=0.3, sigma_sq=0.05, flip_prob=0.5, seed=0)
    record = run_pipeline(base, demos[:3], dirty, tmp_path / "run")
    assert record["n_clean"] == 2 and record["n_perturbed"] == 2
    assert record["label"] == "online"
    assert record["skipped_batches"] >= 0
    assert set(record["filter_quality"]) == {"first", "last"}
    written = json.loads((tmp_path / "run" / "summary.jsonl").read_text())
    assert written == json.loads(json.dumps(record))
    metrics = [json.loads(line) for line in (tmp_path / "run" / "metrics.log").read_text().splitlines()]
    stage2 = [line for line in metrics if line["stage"] == 2]
    assert [line["step"] for line in stage2] == [1, 2, 3]
    assert all("recall" in line for line in stage2)


def test_run_pipeline_rejects_other_task_data(base, demos, tmp_path):
    other = collect_demos("block_transfer", 2, seed=0)
    with pytest.raises(ValidationError):
        run_pipeline(base, other, [], tmp_path / "run")


def test_sweep_over_eta(base, demos, tmp_path):
    result = sweep(base, "eta", [0.1, 0.4], [0], ["naive", "online"], tmp_path / "sweep", demos=demos)
    assert len(result.records) == 4
    assert list(result.medians.columns) == ["eta", "online", "perturbed"]
    assert result.medians["eta"].tolist() == [0.1, 0.4]
    lines = (tmp_path / "sweep" / "sweep.jsonl").read_text().splitlines()
    assert len(lines) == 4
    assert (tmp_path / "sweep" / "eta=0.4" / "online" / "seed=0" / "final.ckpt").exists()


def test_sweep_over_clean_count(base, demos, tmp_path):
    result = sweep(base, "n_clean", [1, 3], [0], ["none"], tmp_path / "sweep", demos=demos)
    assert [record["n_clean"] for record in result.records] == [1, 3]
    assert all(record["n_perturbed"] == 2 for record in result.records)


def test_sweep_argument_checks(base, demos, tmp_path):
    with pytest.raises(ConfigurationError):
        sweep(base, "lr", [0.1], [0], ["online"], tmp_path, demos=demos)
    with pytest.raises(ConfigurationError):
        sweep(base, "eta", [0.1], [0], ["sometimes"], tmp_path, demos=demos)
    with pytest.raises(ConfigurationError):
        sweep(base, "n_clean", [5], [0], ["online"], tmp_path, demos=demos)
