import numpy as np
import pytest

from microexit import cli, obp, preprocess
from microexit.preprocess import OPPORTUNITY

STEPS = ("synth", "train", "train-obp", "evaluate", "cost", "cdln-sweep")


def run(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    codes = [run(step, "--out", str(out), "--seed", "0") for step in STEPS]
    return out, codes


def _rows(path):
    return [line for line in path.read_text().splitlines() if not line.startswith("#")]


def test_full_pipeline_succeeds(pipeline):
    out, codes = pipeline
    assert codes == [0] * len(STEPS)
    for name in ("segments.mxs", "model.mxw", "train_log.csv", "tree.mxt", "exit_labels.csv",
                 "obp_report.csv", "evaluation.csv", "evaluation.txt", "cost.csv", "cost.txt",
                 "cdln_sweep.csv", "cdln_sweep.txt"):
        assert (out / name).is_file(), name


def test_cost_report_satisfies_energy_constraint(pipeline):
    out, _ = pipeline
    text = (out / "cost.txt").read_text()
    assert "cost profile: whar" in text
    assert "predictor routing" in text and "oracle routing" in text
    predictor_line = next(l for l in text.splitlines() if l.startswith("predictor routing"))
    assert "energy constraint satisfied" in predictor_line


def test_reports_carry_provenance(pipeline):
    out, _ = pipeline
    for name in ("evaluation.csv", "cost.txt", "obp_report.txt", "cdln_sweep.csv"):
        head = (out / name).read_text().splitlines()[:6]
        assert head[0].startswith("# microexit ")
        assert any(l.startswith("# config_sha256=") for l in head)
        assert "# seed=0" in head
        assert any("model.mxw blake2b64=" in l for l in head)


def test_cdln_sweep_default_thresholds(pipeline):
    out, _ = pipeline
    rows = _rows(out / "cdln_sweep.csv")[1:]
    assert [r.split(",")[0] for r in rows] == [f"cdln (th={t})" for t in (0.5, 0.6, 0.7, 0.8, 0.9)]
    base = [int(r.split(",")[-1]) for r in rows]
    assert base == sorted(base)


def test_evaluate_lists_all_variants(pipeline):
    out, _ = pipeline
    names = [r.split(",")[0] for r in _rows(out / "evaluation.csv")[1:]]
    assert names == ["fob", "baseline", "cdln (th=0.9)", "adaptive"]


def test_commands_are_deterministic(pipeline, tmp_path):
    out, _ = pipeline
    for step in STEPS:
        assert run(step, "--out", str(tmp_path), "--seed", "0") == 0
    for name in ("segments.mxs", "model.mxw", "tree.mxt", "evaluation.csv", "cost.txt",
                 "cdln_sweep.txt", "obp_report.txt", "train_log.csv"):
        assert (out / name).read_bytes() == (tmp_path / name).read_bytes(), name


def test_constant_tree_makes_adaptive_equal_fob(pipeline, tmp_path):
    out, _ = pipeline
    for name in ("segments.mxs", "model.mxw"):
        (tmp_path / name).write_bytes((out / name).read_bytes())
    obp.save_tree(obp.constant_tree(1, 6), tmp_path / "tree.mxt")
    assert run("evaluate", "--out", str(tmp_path)) == 0
    rows = {r.split(",")[0]: r.split(",")[1:5] for r in _rows(tmp_path / "evaluation.csv")[1:]}
    assert rows["adaptive"] == rows["fob"]


def test_missing_prerequisite_names_artifact(tmp_path, capsys):
    assert run("synth", "--out", str(tmp_path)) == 0
    assert run("train-obp", "--out", str(tmp_path)) == cli.EXIT_CONFIG
    assert "model.mxw" in capsys.readouterr().err
    assert run("evaluate", "--out", str(tmp_path)) == cli.EXIT_CONFIG


def test_config_errors(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("bogus_section: {}\n")
    assert run("synth", "--out", str(tmp_path), "--config", str(cfg)) == cli.EXIT_CONFIG
    cfg.write_text("synth: {n_classes: 0}\n")
    assert run("synth", "--out", str(tmp_path), "--config", str(cfg)) == cli.EXIT_CONFIG
    assert run("synth", "--out", str(tmp_path), "--profile", "nope") == cli.EXIT_CONFIG
    assert run("synth", "--out", str(tmp_path), "--config", str(tmp_path / "absent.yaml")) \
        == cli.EXIT_CONFIG


def test_data_error_exit_code(tmp_path):
    (tmp_path / "segments.mxs").write_bytes(b"garbage")
    assert run("train", "--out", str(tmp_path)) == cli.EXIT_DATA


def test_numerical_error_exit_code(tmp_path):
    rng = np.random.default_rng(0)
    segs = [preprocess.Segment(rng.normal(size=(32, 7)), np.zeros(6), i % 2) for i in range(40)]
    segs[3].data[0, 0] = np.nan
    preprocess.write_segments(tmp_path / "segments.mxs", segs)
    cfg = tmp_path / "c.yaml"
    cfg.write_text("train: {epochs: 1}\nsplit: {kind: none}\n")
    assert run("train", "--out", str(tmp_path), "--config", str(cfg)) == cli.EXIT_NUMERICAL


def test_exit_codes_are_distinct():
    assert len({cli.EXIT_OK, cli.EXIT_CONFIG, cli.EXIT_DATA, cli.EXIT_NUMERICAL}) == 4


def _opportunity_csv(path, n=1000, bad_line=None):
    rng = np.random.default_rng(0)
    lines = [",".join(OPPORTUNITY.channels) + ",label"]
    for i in range(n):
        cells = [f"{v:.6f}" for v in rng.normal(size=7)] + [str(i * 3 // n)]
        lines.append(",".join(cells))
    if bad_line is not None:
        lines[bad_line - 1] = lines[bad_line - 1].replace(",", ",oops", 1)
    path.write_text("\n".join(lines) + "\n")


def test_preprocess_opportunity_csv(tmp_path):
    raw = tmp_path / "raw.csv"
    _opportunity_csv(raw)
    assert run("preprocess", "--out", str(tmp_path), "--profile", "opportunity",
               "--input", str(raw)) == 0
    segs = preprocess.read_segments(tmp_path / "segments.mxs")
    assert len(segs) == 31
    assert "segments=31" in (tmp_path / "preprocess_summary.txt").read_text()
    first = (tmp_path / "segments.mxs").read_bytes()
    assert run("preprocess", "--out", str(tmp_path), "--profile", "opportunity",
               "--input", str(raw)) == 0
    assert (tmp_path / "segments.mxs").read_bytes() == first


def test_preprocess_reports_bad_line(tmp_path, capsys):
    raw = tmp_path / "raw.csv"
    _opportunity_csv(raw, n=200, bad_line=57)
    assert run("preprocess", "--out", str(tmp_path), "--profile", "opportunity",
               "--input", str(raw)) == cli.EXIT_DATA
    assert ":57:" in capsys.readouterr().err


def test_preprocess_column_map(tmp_path):
    raw = tmp_path / "raw.csv"
    _opportunity_csv(raw, n=150)
    raw.write_text(raw.read_text().replace("accX", "ACC_X_vendor", 1))
    assert run("preprocess", "--out", str(tmp_path), "--profile", "opportunity",
               "--input", str(raw)) == cli.EXIT_DATA
    cfg = tmp_path / "c.yaml"
    cfg.write_text("preprocess: {column_map: {ACC_X_vendor: accX}}\n")
    assert run("preprocess", "--out", str(tmp_path), "--profile", "opportunity",
               "--config", str(cfg), "--input", str(raw)) == 0
