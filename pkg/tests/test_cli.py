import json

import pytest

from dsp.cli import main
from dsp.datasets import load_dataset
from dsp.policy import PolicyConfig, build_policy, save_policy

TINY = [
    "--stage1-steps", "2",
    "--stage2-steps", "2",
    "--batch-size", "4",
    "--hidden-dim", "4",
    "--embed-dim", "4",
    "--episodes", "2",
    "--eval-every", "1",
]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["gen-demos", "--task", "point_reach", "-n", "4", "--seed", "0", "-o", str(root / "clean.jsonl")]) == 0
    assert main(["perturb", "--in", str(root / "clean.jsonl"), "-o", str(root / "dirty.jsonl"), "--seed", "1"]) == 0
    return root


def _train(data_dir, out_dir, mode, *extra):
    argv = [
        "train",
        "--task", "point_reach",
        "--clean", str(data_dir / "clean.jsonl"),
        "--perturbed", str(data_dir / "dirty.jsonl"),
        "--mode", mode,
        "-o", str(out_dir),
        *TINY,
        *extra,
    ]
    return main(argv)


def test_gen_demos_zero_episodes(tmp_path, capsys):
    out = tmp_path / "none.jsonl"
    assert main(["gen-demos", "--task", "point_reach", "-n", "0", "-o", str(out)]) == 0
    assert out.read_text() == ""
    assert load_dataset(out) == []
    assert "0/0" in capsys.readouterr().out


def test_gen_demos_is_deterministic(tmp_path):
    args = ["gen-demos", "--task", "bi_handover", "-n", "3", "--seed", "5"]
    assert main(args + ["-o", str(tmp_path / "a.jsonl")]) == 0
    assert main(args + ["-o", str(tmp_path / "b.jsonl")]) == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_perturb_with_zero_fraction_copies_input(data_dir, tmp_path):
    out = tmp_path / "same.jsonl"
    assert main(["perturb", "--in", str(data_dir / "clean.jsonl"), "-o", str(out), "--frac", "0"]) == 0
    assert out.read_bytes() == (data_dir / "clean.jsonl").read_bytes()


def test_perturb_marks_steps(data_dir):
    dirty = load_dataset(data_dir / "dirty.jsonl")
    assert len(dirty) == 4
    assert any(traj.perturbed_mask.any() for traj in dirty)


def test_train_without_stage2_writes_stage1_only(data_dir, tmp_path):
    run = tmp_path / "run"
    assert _train(data_dir, run, "none") == 0
    assert sorted(path.name for path in run.iterdir()) == [
        "config.toml",
        "metrics.log",
        "stage1.ckpt",
        "summary.jsonl",
    ]
    (record,) = [json.loads(line) for line in (run / "summary.jsonl").read_text().splitlines()]
    assert record["label"] == "stage1"
    assert record["n_clean"] == 4 and record["n_perturbed"] == 4
    assert record["seeds"] == [10000, 10001]
    metrics = [json.loads(line) for line in (run / "metrics.log").read_text().splitlines()]
    assert [(line["stage"], line["step"]) for line in metrics] == [(1, 1), (1, 2)]


def test_config_echo_repeats_the_run(data_dir, tmp_path):
    first = tmp_path / "first"
    assert _train(data_dir, first, "online") == 0
    second = tmp_path / "second"
    assert main(["train", "--config", str(first / "config.toml"), "-o", str(second)]) == 0
    for name in ("stage1.ckpt", "final.ckpt", "metrics.log"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_report_over_four_modes(data_dir, tmp_path, capsys):
    runs = []
    for mode in ("none", "naive", "offline", "online"):
        run = tmp_path / mode
        assert _train(data_dir, run, mode) == 0
        runs.append(str(run))
    capsys.readouterr()
    out = tmp_path / "report.jsonl"
    assert main(["report", *runs, "-o", str(out)]) == 0
    text = capsys.readouterr().out
    for label in ("stage1", "perturbed", "offline", "online"):
        assert label in text
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(rows) == 4
    assert {row["composition"] for row in rows} == {"(4,4)"}


def test_eval_writes_record(tmp_path, capsys):
    path = save_policy(tmp_path / "p.ckpt", build_policy(PolicyConfig(obs_dim=13, act_dim=4, hidden_dim=4, embed_dim=4)))
    out = tmp_path / "eval.json"
    assert main(["eval", str(path), "--task", "point_reach", "-n", "2", "--n-resamples", "50", "-o", str(out)]) == 0
    record = json.loads(out.read_text())
    assert record["n_episodes"] == 2
    assert record["checkpoint"] == str(path)
    assert "iqm" in capsys.readouterr().out


def test_eval_with_wrong_task_dims(tmp_path, capsys):
    path = save_policy(tmp_path / "p.ckpt", build_policy(PolicyConfig(obs_dim=13, act_dim=4, hidden_dim=4, embed_dim=4)))
    assert main(["eval", str(path), "--task", "bi_handover", "-n", "2"]) == 2
    assert "error:" in capsys.readouterr().err


def test_eval_corrupt_checkpoint(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"DSPCKPT1\x01")
    assert main(["eval", str(path), "--task", "point_reach", "-n", "1"]) == 2


def test_report_without_summaries(tmp_path):
    assert main(["report", str(tmp_path)]) == 2


def test_usage_errors_exit_one(tmp_path, capsys):
    assert main([]) == 1
    assert main(["report"]) == 1
    assert main(["launch"]) == 1
    assert main(["train", "--mode", "sometimes"]) == 1
    assert "error:" in capsys.readouterr().err


def test_invalid_config_exits_one(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[perturb]\nfrac = 3\n")
    assert main(["gen-demos", "--config", str(path), "-n", "1", "-o", str(tmp_path / "x.jsonl")]) == 1


def test_train_needs_clean_data(tmp_path):
    assert main(["train", "-o", str(tmp_path / "run"), *TINY]) == 1
