import inspect
import json

import pytest

from grfkit.cli import EXIT_CONFIG, EXIT_DATA, RunConfig, build_parser, cmd_run, main
from grfkit.synth import MIN_STEPS, SPEEDS, synth_generate


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def store(tmp_path_factory):
    """A small dataset synthesized and preprocessed through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", str(root / "data"), "--athletes", "2", "--collections", "2", "--speeds", "3.8"]) == 0
    assert main(["preprocess", str(root / "data" / "manifest.json"), str(root / "steps")]) == 0
    return root


def test_synth_defaults():
    args = build_parser().parse_args(["synth", "out"])
    assert (args.n_athletes, args.collections_per_athlete, args.speeds, args.steps_per_measurement) == (None,) * 4
    sig = inspect.signature(synth_generate).parameters
    assert sig["n_athletes"].default == 4 and sig["collections_per_athlete"].default == 2
    assert len(SPEEDS) == 2 and sig["steps_per_measurement"].default == MIN_STEPS == 60


def test_synth_same_seed_same_manifest(tmp_path, capsys):
    for d in ("a", "b"):
        assert main(["synth", str(tmp_path / d), "--athletes", "1", "--collections", "1", "--speeds", "3.8"]) == 0
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
    out = capsys.readouterr()
    assert out.out == "" and "1 athletes" in out.err


def test_preprocess_bookkeeping(store):
    summary = json.loads((store / "steps" / "preprocess.json").read_text())
    assert summary["failures"] == {}
    assert set(summary["counts"].values()) == {60}
    assert summary["n_steps"] == sum(summary["counts"].values())


def test_single_task_single_report(store):
    out = store / "one"
    code = main(["run", str(store / "steps"), str(out), "--scenario", "others", "--sensors", "all",
                 "--method", "knn", "--targets", "A01", "--S", "2", "--k", "5"])
    assert code == 0
    reports = list((out / "reports").iterdir())
    assert [p.name for p in reports] == ["others_all_knn_A01.json"]
    report = json.loads(reports[0].read_text())
    assert report["config"]["scenarios"] == ["others"] and report["config"]["seed"] == 0
    assert report["task"]["target"] == "A01"


def test_rerun_byte_identical(store):
    argv = ["run", str(store / "steps"), str(store / "det"), "--scenario", "personal,everyone",
            "--sensors", "sacrum,shanks", "--S", "2,3", "--k", "2,5", "--lam1", "0,0.01", "--lam2", "0"]
    assert main(argv) == 0
    first = tree_bytes(store / "det")
    assert main(argv) == 0
    assert tree_bytes(store / "det") == first
    assert len(first) > 10


@pytest.mark.parametrize(
    "flags, message",
    [
        (["--method", "lstm"], "unimplemented"),
        (["--sensors", "wrist"], "sac-acc3d"),
        (["--scenario", "friends"], "everyone"),
        (["--targets", "Z9"], "Z9"),
        (["--S", "two"], "list of int"),
    ],
)
def test_config_errors(store, capsys, flags, message):
    code = main(["run", str(store / "steps"), str(store / "bad")] + flags)
    assert code == EXIT_CONFIG
    err = capsys.readouterr().err.lower()
    assert message.lower() in err
    assert not (store / "bad" / "reports").exists()


def test_missing_store_is_data_error(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nothing"), str(tmp_path / "out")]) == EXIT_DATA
    assert "error" in capsys.readouterr().err


def test_unparseable_flags_exit_config(capsys):
    assert main(["run"]) == EXIT_CONFIG


def test_cmd_run_api(store, tmp_path):
    config = RunConfig(steps=str(store / "steps"), out=str(tmp_path), scenarios=["others"], sensors=["acc"],
                       methods=["ser"], targets=["A02"],
                       grids={"S": [2], "lam1": [0.0], "lam2": [0.0], "k": [5], "rank": 6,
                              "knn_weighting": "inverse", "impulse_mode": "literal", "penalize_intercept": True})
    written = cmd_run(config)
    tables = json.loads((tmp_path / "tables" / "tables.json").read_text())
    assert tables["config"] == config.to_dict()
    assert tables["tables"]["rrmse_z"]["columns"] == ["others/ser"]
    assert all(p.exists() for p in written)
