import math
import statistics

import numpy as np
import pytest

from gravpano.errors import InfeasibleConfigError, InvalidInputError
from gravpano.geometry import compose_model, transfer_errors
from gravpano.solvers import SolverCandidateSet, SolverId
from gravpano.synthbench import (
    GRAVITY_NOISE_LEVELS,
    IMAGE_NOISE_LEVELS,
    RECORD_HEADER,
    SceneConfig,
    TrialRecord,
    aggregate_cdf,
    cdf_quantile,
    compute_errors,
    failed_record,
    generate_scene,
    geometric_lambda,
    medians,
    read_records_csv,
    run_sweep,
    write_cdf_csv,
    write_records_csv,
)


def _record(v, failed=False):
    return TrialRecord("H1f", 0.0, 0, v, v, v, v, math.nan, 1, failed)


# --- scene generation ----------------------------------------------------------


@pytest.mark.parametrize("distorted", [False, True])
def test_zero_noise_scene_is_consistent(distorted):
    cfg = SceneConfig.with_distortion() if distorted else SceneConfig()
    scene = generate_scene(cfg, 1)
    gt = scene.gt
    err = transfer_errors(gt.H, scene.pts1, scene.pts2, gt.lambda1, gt.lambda2, gt.norm_scale)
    assert len(scene.pts1) == 200
    assert np.max(err) < 1e-9
    assert np.all(np.abs(scene.pts1) <= cfg.image_bound)
    assert np.all(np.abs(scene.pts2) <= cfg.image_bound)


def test_identity_motion_scene():
    scene = generate_scene(SceneConfig(yaw_range=(0.0, 0.0), prior_range=(0.0, 0.0)), 2)
    assert np.allclose(scene.pts1, scene.pts2, atol=1e-9)


def test_image_noise_statistics():
    cfg = SceneConfig(n_points=5000, image_noise_sigma=2.0)
    resid = []
    for k in range(10):
        scene = generate_scene(cfg, k)
        resid.append((scene.pts1 - scene.clean1).ravel())
        resid.append((scene.pts2 - scene.clean2).ravel())
    resid = np.concatenate(resid)
    assert len(resid) >= 1e5
    assert abs(np.std(resid) - 2.0) < 0.1


def test_gravity_noise_perturbs_priors():
    scene = generate_scene(SceneConfig(roll_noise_sigma=0.5, pitch_noise_sigma=0.5), 3)
    assert not np.allclose(scene.prior1.rotation, scene.gt.R1)
    clean = generate_scene(SceneConfig(), 3)
    assert np.array_equal(clean.prior1.rotation, clean.gt.R1)


def test_outliers_are_labelled():
    scene = generate_scene(SceneConfig(outlier_ratio=0.4), 4)
    assert scene.inlier_mask.sum() == 120
    gt = scene.gt
    err = transfer_errors(gt.H, scene.pts1, scene.pts2, norm_scale=gt.norm_scale)
    assert np.max(err[scene.inlier_mask]) < 1e-9
    assert np.median(err[~scene.inlier_mask]) > 10.0


def test_scene_is_reproducible():
    a = generate_scene(SceneConfig(image_noise_sigma=1.0), (7, 1))
    b = generate_scene(SceneConfig(image_noise_sigma=1.0), (7, 1))
    assert np.array_equal(a.pts1, b.pts1) and np.array_equal(a.gt.H, b.gt.H)


def test_infeasible_config():
    # a huge focal pushes every point outside the image
    with pytest.raises(InfeasibleConfigError):
        generate_scene(SceneConfig(n_points=5, f1_gt=1e6, f2_gt=1e6, image_bound=10.0), 0)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(box=((-1, 1), (-1, 1), (-1, 2))),
        dict(image_noise_sigma=-1.0),
        dict(n_points=0),
        dict(outlier_ratio=1.0),
        dict(lambda1_gt=-0.2, lambda2_gt=0.1),
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(InvalidInputError):
        SceneConfig(**kwargs)


# --- error metrics ----------------------------------------------------------------------


def _gt(**kw):
    args = dict(s=0.3, f1=1000.0, f2=1000.0, lambda1=0.0, lambda2=0.0) | kw
    return compose_model(args["s"], args["f1"], args["f2"], args["lambda1"], args["lambda2"], norm_scale=1000.0)


def test_errors_at_ground_truth():
    scene = generate_scene(SceneConfig.with_distortion(), 5)
    rec = compute_errors([scene.gt], scene.gt, (scene.holdout1, scene.holdout2))
    assert not rec.failed
    for v in (rec.focal_error, rec.rotation_error, rec.distortion_error, rec.reprojection_error):
        assert abs(v) < 1e-9


def test_focal_error_example():
    rec = compute_errors([_gt(f1=1100.0, f2=1100.0)], _gt())
    assert rec.focal_error == pytest.approx(0.1)


def test_distortion_error_example():
    rec = compute_errors([_gt(lambda1=-0.3, lambda2=-0.3)], _gt(lambda1=-0.4, lambda2=-0.4))
    assert rec.distortion_error == pytest.approx(-0.1)


def test_focal_error_uses_geometric_mean():
    rec = compute_errors([_gt(f1=800.0, f2=1250.0)], _gt())
    assert rec.focal_error == pytest.approx(0.0, abs=1e-12)


def test_nearest_candidate_is_selected():
    far = _gt(s=-0.5, f1=500.0, f2=500.0)
    near = _gt(s=0.31, f1=1010.0, f2=1010.0)
    rec = compute_errors(SolverCandidateSet(SolverId.H1f, [far, near], 2), _gt())
    assert rec.focal_error == pytest.approx(0.01)
    assert rec.candidate_count == 2 and rec.solver_id == "H1f"


def test_empty_candidates_fail_with_sentinels():
    rec = compute_errors(SolverCandidateSet(SolverId.H1f, [], 0), _gt())
    assert rec.failed and rec.focal_error == math.inf and rec.reprojection_error == math.inf


@pytest.mark.parametrize("l1, l2, expected", [(-0.4, -0.4, -0.4), (-0.1, -0.4, -0.2), (0.0, 0.0, 0.0), (0.2, 0.8, 0.4)])
def test_geometric_lambda(l1, l2, expected):
    assert geometric_lambda(l1, l2) == pytest.approx(expected)


# --- CDFs -------------------------------------------------------------------------------


def test_cdf_example():
    assert aggregate_cdf([1.0, 2.0, 3.0]) == [(1.0, 1 / 3), (2.0, 2 / 3), (3.0, 1.0)]


def test_cdf_with_failure():
    recs = [_record(1.0), _record(2.0), _record(0.0, failed=True)]
    cdf = aggregate_cdf(recs, "focal_error")
    assert cdf[-1] == (2.0, pytest.approx(2 / 3))


def test_cdf_empty():
    with pytest.raises(InvalidInputError):
        aggregate_cdf([])


@pytest.mark.parametrize("n", [1000, 999])
def test_cdf_median_matches_direct(rng, n):
    vals = rng.exponential(size=n).tolist()
    cdf = aggregate_cdf([_record(v) for v in vals], "focal_error")
    assert cdf_quantile(cdf, 0.5) == pytest.approx(statistics.median(vals), rel=1e-12)


def test_medians_count_failures_as_inf():
    recs = [_record(1.0), _record(2.0), _record(0.0, failed=True)]
    assert medians(recs, "focal_error") == {("H1f", 0.0): 2.0}


# --- sweeps -------------------------------------------------------------------------------


def test_sweep_record_count():
    recs = run_sweep(SceneConfig(n_trials=1000), "image_noise", [1.0], ["H1f"], workers=1, timing=False)
    assert len(recs) == 1000
    assert [r.trial for r in recs] == list(range(1000))


def test_sweep_noise_free_exact():
    cfg = SceneConfig(n_trials=50)
    recs = run_sweep(cfg, "image_noise", [0.0], ["H1f", "H2f1f2"], workers=1, timing=False)
    for field in ("focal_error", "rotation_error"):
        assert all(v < 1e-6 for v in medians(recs, field).values())


def test_sweep_noise_free_exact_distortion():
    cfg = SceneConfig.with_distortion(n_trials=50)
    recs = run_sweep(cfg, "image_noise", [0.0], ["H2lambda", "H3l1l2"], workers=1, timing=False)
    for field in ("focal_error", "rotation_error", "distortion_error"):
        assert all(v < 1e-6 for v in medians(recs, field).values())


def test_sweep_reproducible_across_workers(tmp_path):
    cfg = SceneConfig(n_trials=20, seed=3)
    a = run_sweep(cfg, "roll_noise", GRAVITY_NOISE_LEVELS[:3], ["H1f", "H4dlt"], workers=1, timing=False)
    b = run_sweep(cfg, "roll_noise", GRAVITY_NOISE_LEVELS[:3], ["H1f", "H4dlt"], workers=4, timing=False)
    write_records_csv(tmp_path / "a.csv", a)
    write_records_csv(tmp_path / "b.csv", b)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_sweep_records_independent_of_solver_set():
    cfg = SceneConfig(n_trials=10, seed=4)
    alone = run_sweep(cfg, "image_noise", [1.0], ["H2f1f2"], workers=1, timing=False)
    mixed = run_sweep(cfg, "image_noise", [1.0], ["H1f", "H2f1f2"], workers=1, timing=False)
    assert [r.row() for r in alone] == [r.row() for r in mixed if r.solver_id == "H2f1f2"]


def test_sweep_unknown_kind():
    with pytest.raises(InvalidInputError):
        run_sweep(SceneConfig(n_trials=1), "yaw_noise", [0.0], ["H1f"])


def test_distortion_solvers_reproject_better():
    cfg = SceneConfig.with_distortion(n_trials=100, image_noise_sigma=0.5)
    recs = run_sweep(cfg, "image_noise", [0.5], ["H1f", "H2f1f2", "H2lambda", "H3l1l2"], workers=1, timing=False)
    med = medians(recs, "reprojection_error")
    worst_aware = max(med[("H2lambda", 0.5)], med[("H3l1l2", 0.5)])
    best_blind = min(med[("H1f", 0.5)], med[("H2f1f2", 0.5)])
    assert worst_aware < best_blind


def test_image_noise_trend_small():
    cfg = SceneConfig(n_trials=200)
    recs = run_sweep(cfg, "image_noise", IMAGE_NOISE_LEVELS, ["H1f"], workers=1, timing=False)
    med = medians(recs, "focal_error")
    seq = [med[("H1f", lv)] for lv in IMAGE_NOISE_LEVELS]
    assert all(b >= a for a, b in zip(seq, seq[1:]))


# --- CSV ---------------------------------------------------------------------------------


def test_records_csv_round_trip(tmp_path):
    recs = [_record(0.25), failed_record("H2lambda", 0.5, 3)]
    path = tmp_path / "r.csv"
    write_records_csv(path, recs)
    text = path.read_text(encoding="utf-8")
    assert text.splitlines()[0] == ",".join(RECORD_HEADER)
    assert text.endswith("\n")
    back = read_records_csv(path)
    assert back[0].focal_error == 0.25 and back[1].failed and back[1].focal_error == math.inf


def test_cdf_csv(tmp_path):
    path = tmp_path / "c.csv"
    write_cdf_csv(path, [(1.0, 0.5), (2.0, 1.0)])
    assert path.read_text(encoding="utf-8") == "value,fraction\n1.0,0.5\n2.0,1.0\n"
