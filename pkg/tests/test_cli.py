import numpy as np
import pytest

from sedkit.cli import ensemble_average, main
from sedkit.events import read_events_tsv
from sedkit.model import PosteriorGrid

MICRO_CFG = """
[run]
seed = 3

[paths]
data_dir = data
features_dir = features
checkpoints_dir = checkpoints
outputs_dir = outputs

[synth]
n_weak = 4
n_strong = 4
n_unlabeled = 4
n_test = 2
noise_floor_db = -30

[model]
conv_filters = 2,2
poolings = 2x8,2x16
gru_units = 2

[trainer]
method = mean_teacher
w_max = 1.0
epochs = 1
lr = 0.002
ema_decay = 0.9
ramp_steps = 10
n_weak = 2
n_strong = 2
n_unlabeled = 2
checkpoint_every = 5

[decode]
median_window = 9

[predict]
checkpoint = checkpoints/teacher.ckpt

[ensemble]
members = checkpoints/teacher.ckpt,checkpoints/student.ckpt

[sweep]
windows = 9
systems = micro:checkpoints/teacher.ckpt
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One micro pipeline run shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.cfg"
    cfg.write_text(MICRO_CFG)
    for command in ("synth", "featurize", "train", "predict", "eval"):
        assert main([command, "--config", str(cfg)]) == 0, command
    return root, cfg


def test_pipeline_artifacts_exist(workspace):
    root, _ = workspace
    assert (root / "data" / "weak.tsv").exists()
    assert len(list((root / "features" / "test").glob("*.feat"))) == 2
    assert (root / "checkpoints" / "teacher.ckpt").exists()
    assert (root / "checkpoints" / "student.ckpt").exists()
    assert (root / "checkpoints" / "train_log.csv").exists()
    assert (root / "outputs" / "predictions.tsv").exists()
    assert (root / "outputs" / "report.txt").exists()
    assert (root / "outputs" / "report.csv").exists()
    log_header = (root / "checkpoints" / "train_log.csv").read_text().splitlines()[0]
    assert log_header == "step,L_w,L_s,L_cw,L_cs,w_t,total"


def test_predict_deterministic(workspace):
    root, cfg = workspace
    first = (root / "outputs" / "predictions.tsv").read_bytes()
    assert main(["predict", "--config", str(cfg)]) == 0
    assert (root / "outputs" / "predictions.tsv").read_bytes() == first


def test_sweep_emits_table(workspace):
    root, cfg = workspace
    assert main(["sweep", "--config", str(cfg)]) == 0
    table = (root / "outputs" / "sweep.txt").read_text()
    assert "micro" in table and table.count("%") == 1
    csv_text = (root / "outputs" / "sweep.csv").read_text().splitlines()
    assert csv_text[0] == "system,9"


def test_ensemble_predict_runs(workspace):
    root, cfg = workspace
    assert main(["ensemble-predict", "--config", str(cfg)]) == 0
    assert (root / "outputs" / "predictions.tsv").exists()


def test_eval_perfect_predictions_scores_100(workspace, tmp_path):
    root, cfg = workspace
    out = tmp_path / "selfeval"
    out.mkdir()
    # evaluating the reference against itself must give macro F = 100%
    (out / "predictions.tsv").write_bytes((root / "data" / "test.tsv").read_bytes())
    assert main(["eval", "--config", str(cfg), "--out", str(out)]) == 0
    assert "macro F: 100.00%" in (out / "report.txt").read_text()


def test_unknown_config_key_exit_2(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[trainer]\nmethod = mean_teacher\nbananas = 3\n")
    assert main(["train", "--config", str(cfg)]) == 2


def test_unknown_section_exit_2(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[things]\nx = 1\n")
    assert main(["synth", "--config", str(cfg)]) == 2


def test_missing_config_file_exit_3(tmp_path):
    assert main(["synth", "--config", str(tmp_path / "absent.cfg")]) == 3


def test_missing_features_exit_3(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(MICRO_CFG)
    assert main(["predict", "--config", str(cfg)]) == 3


def test_checkpoint_mismatch_exit_4(workspace, tmp_path):
    root, _ = workspace
    cfg = tmp_path / "mismatch.cfg"
    # same checkpoint, different architecture
    cfg.write_text(
        MICRO_CFG.replace("gru_units = 2", "gru_units = 3").replace(
            "data_dir = data", f"data_dir = {root / 'data'}"
        ).replace("features_dir = features", f"features_dir = {root / 'features'}")
        .replace("checkpoints_dir = checkpoints", f"checkpoints_dir = {root / 'checkpoints'}")
    )
    assert main(["predict", "--config", str(cfg)]) == 4


def test_error_paths_leave_no_outputs(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(MICRO_CFG)
    main(["predict", "--config", str(cfg)])
    assert not (tmp_path / "outputs").exists()


def test_wmax_zero_trains_supervised(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(MICRO_CFG.replace("w_max = 1.0", "w_max = 0.0"))
    assert main(["synth", "--config", str(cfg)]) == 0
    assert main(["featurize", "--config", str(cfg)]) == 0
    assert main(["train", "--config", str(cfg)]) == 0
    log = (tmp_path / "checkpoints" / "train_log.csv").read_text().splitlines()
    for row in log[1:]:
        cells = row.split(",")
        assert float(cells[3]) == 0.0 and float(cells[4]) == 0.0  # L_cw, L_cs


def test_seed_override_changes_synth(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(MICRO_CFG)
    assert main(["synth", "--config", str(cfg)]) == 0
    first = (tmp_path / "data" / "strong.tsv").read_bytes()
    assert main(["synth", "--config", str(cfg), "--seed", "99"]) == 0
    assert (tmp_path / "data" / "strong.tsv").read_bytes() != first


# -- ensemble_average unit behaviour --------------------------------------


def grid_of(frame, clip):
    return PosteriorGrid(np.asarray(frame, float), np.asarray(clip, float), 0.0390929705)


def test_ensemble_identity_for_copies(rng):
    g = grid_of(rng.uniform(size=(256, 10)), rng.uniform(size=10))
    out = ensemble_average([g, g, g])
    np.testing.assert_array_equal(out.frame_probs, g.frame_probs)
    np.testing.assert_array_equal(out.clip_probs, g.clip_probs)


def test_ensemble_mean_of_two():
    a = grid_of(np.full((4, 2), 0.2), [0.2, 0.2])
    b = grid_of(np.full((4, 2), 0.6), [0.6, 0.6])
    out = ensemble_average([a, b])
    np.testing.assert_allclose(out.frame_probs, 0.4)
    np.testing.assert_allclose(out.clip_probs, 0.4)


def test_ensemble_bounded_by_members(rng):
    grids = [grid_of(rng.uniform(size=(8, 3)), rng.uniform(size=3)) for _ in range(5)]
    out = ensemble_average(grids)
    stack = np.stack([g.frame_probs for g in grids])
    assert np.all(out.frame_probs >= stack.min(axis=0) - 1e-12)
    assert np.all(out.frame_probs <= stack.max(axis=0) + 1e-12)


def test_ensemble_shape_mismatch_rejected(rng):
    a = grid_of(rng.uniform(size=(8, 3)), rng.uniform(size=3))
    b = grid_of(rng.uniform(size=(8, 4)), rng.uniform(size=4))
    with pytest.raises(ValueError, match="shapes differ"):
        ensemble_average([a, b])
