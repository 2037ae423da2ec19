import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from densevo.errors import DegenerateConfigurationError, InsufficientMatchesError, InvalidInputError
from densevo.imaging import CurvatureMap, curvature_of
from densevo.tracking import (LIVE, LOST, DominantFlow, FeatureTrack, RobustKernel, TrackerConfig, TrackSet,
                              advance_tracks, estimate_dominant_flow, geman_mcclure, irls_weight, match_brief,
                              predict_position, prediction_weight, seed_tracks, track_extremum)
from densevo.tracking.flow import flow_cost
from tracking_fixtures import follow_fraction, texture, translated_sequence

K = RobustKernel(2.0)


# robust kernel

def test_geman_mcclure_values():
    assert geman_mcclure(0.0, K) == 0.0
    assert geman_mcclure(2.0, K) == pytest.approx(0.5, abs=1e-15)
    assert geman_mcclure(20.0, K) == pytest.approx(100 / 101, abs=1e-15)


def test_kernel_rejects_bad_sigma():
    for s in (0.0, -1.0, float("inf"), float("nan")):
        with pytest.raises(InvalidInputError):
            RobustKernel(s)


@given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(1e-3, 1e2))
def test_rho_monotone_and_bounded_weight_monotone(a, b, sigma):
    k = RobustKernel(sigma)
    lo, hi = min(a, b), max(a, b)
    assert 0.0 <= geman_mcclure(lo, k) <= geman_mcclure(hi, k) <= 1.0
    assert prediction_weight(lo, k) >= prediction_weight(hi, k)
    assert prediction_weight(lo, k) == pytest.approx(1.0 - geman_mcclure(lo, k), abs=1e-12)


@given(st.floats(0, 1e3), st.floats(1e-3, 1e2))
def test_irls_weight_never_decreases_when_sigma_doubles(r, sigma):
    assert irls_weight(r, RobustKernel(2 * sigma)) >= irls_weight(r, RobustKernel(sigma))
    assert irls_weight(0.0, RobustKernel(sigma)) == 1.0


# feature matching

def test_match_identical_images_are_self_matches():
    img = texture(480, 752)
    xp, xc = match_brief(img, img, TrackerConfig())
    assert len(xp) >= 3
    assert np.array_equal(xp, xc)


def test_match_six_pixel_shift():
    frames = translated_sequence(2, 6)
    xp, xc = match_brief(frames[0], frames[1], TrackerConfig())
    d = xc - xp - np.array([6.0, 0.0])
    assert np.mean(np.max(np.abs(d), axis=1) <= 6.0) >= 0.8


def test_match_featureless_raises():
    flat = np.full((120, 160), 0.5)
    with pytest.raises(InsufficientMatchesError):
        match_brief(flat, flat, TrackerConfig())


# dominant flow

def grid_points(n=64, seed=0):
    return np.random.default_rng(seed).uniform(0, 300, (n, 2))


def test_flow_identity_pairs():
    x = grid_points()
    f = estimate_dominant_flow((x, x.copy()))
    assert np.allclose(f.A, np.eye(2), atol=1e-9) and np.allclose(f.b, 0, atol=1e-9)


def test_flow_pure_translation():
    x = grid_points()
    f = estimate_dominant_flow((x, x + [3.0, -2.0]))
    assert np.allclose(f.A, np.eye(2), atol=1e-6) and np.allclose(f.b, [3, -2], atol=1e-6)


def test_flow_accepts_list_of_pairs():
    x = grid_points(8)
    f = estimate_dominant_flow([(p, p + [1.0, 1.0]) for p in x])
    assert np.allclose(f.b, [1, 1], atol=1e-6)


def test_flow_collinear_is_degenerate():
    t = np.linspace(0, 100, 20)
    x = np.column_stack([t, 2 * t + 1])
    with pytest.raises(DegenerateConfigurationError):
        estimate_dominant_flow((x, x + 1))


def test_flow_needs_three_pairs():
    x = grid_points(2)
    with pytest.raises(InvalidInputError):
        estimate_dominant_flow((x, x))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_flow_cost_never_increases(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 300, (60, 2))
    A = np.eye(2) + rng.normal(0, 0.02, (2, 2))
    y = x @ A.T + rng.normal(0, 4, 2) + rng.normal(0, 0.5, x.shape)
    out = rng.random(60) < 0.3
    y[out] = rng.uniform(0, 300, (out.sum(), 2))
    flow, history = estimate_dominant_flow((x, y), kernel=RobustKernel(4.0), return_history=True)
    assert np.all(np.diff(history) <= 1e-12)
    assert history[-1] == pytest.approx(flow_cost(flow.A, flow.b, x, y, RobustKernel(4.0)))


def test_predict_position_examples():
    assert predict_position((10, 10), DominantFlow(np.eye(2), np.array([2.0, 3.0]))) == (12, 13)
    assert predict_position((7, 9), DominantFlow()) == (7, 9)
    assert predict_position((5, 7), DominantFlow(2 * np.eye(2), np.zeros(2))) == (10, 14)
    assert predict_position((5, 7), DominantFlow(np.eye(2), np.array([100.0, -100.0])), shape=(20, 30)) == (29, 0)


# hill climbing

def peak_map(px, py, h=31, w=31, slope=0.1):
    y, x = np.mgrid[0:h, 0:w]
    return CurvatureMap(1.0 - slope * (np.abs(x - px) + np.abs(y - py)))


def F(kmap, lam, sigma, pred, x, y):
    d2 = (x - pred[0]) ** 2 + (y - pred[1]) ** 2
    return kmap.kappa[y, x] + lam * sigma ** 2 / (d2 + sigma ** 2)


def test_climb_stays_on_strict_maximum():
    pos, _ = track_extremum((15, 15), peak_map(15, 15), TrackerConfig(lam=0.05))
    assert pos == (15, 15)


def test_climb_reaches_nearby_ridge_maximum():
    kmap = peak_map(17, 15)
    cfg = TrackerConfig(lam=0.01)
    pred = (15, 15)
    pos, f = track_extremum(pred, kmap, cfg)
    # brute-force argmax of F over the 15x15 window around the prediction
    best, arg = -np.inf, None
    for y in range(pred[1] - 7, pred[1] + 8):
        for x in range(pred[0] - 7, pred[0] + 8):
            v = F(kmap, 0.01, cfg.kernel.sigma, pred, x, y)
            if v > best:
                best, arg = v, (x, y)
    assert pos == arg == (17, 15)
    assert f == pytest.approx(best)


def test_climb_on_flat_curvature_returns_prediction():
    kmap = CurvatureMap(np.full((20, 20), 0.3))
    pos, f = track_extremum((8, 11), kmap, TrackerConfig(lam=0.2))
    assert pos == (8, 11) and f == pytest.approx(0.5)


def test_climb_lost_below_floor():
    kmap = CurvatureMap(np.full((20, 20), 0.01))
    assert track_extremum((5, 5), kmap, TrackerConfig(lam=0.0), floor=0.1) is None
    assert track_extremum((5, 5), CurvatureMap(np.zeros((20, 20))), TrackerConfig(lam=0.0)) is None


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1), st.integers(2, 29), st.integers(2, 29))
def test_climb_never_degrades_objective(seed, lam, px, py):
    kappa = np.random.default_rng(seed).random((32, 32)) + 0.01
    kmap = CurvatureMap(kappa)
    cfg = TrackerConfig(lam=lam)
    pos, f = track_extremum((px, py), kmap, cfg)
    assert f >= F(kmap, lam, cfg.kernel.sigma, (px, py), px, py) - 1e-15
    assert f == pytest.approx(F(kmap, lam, cfg.kernel.sigma, (px, py), *pos))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 30), st.integers(1, 30))
def test_zero_lambda_is_pure_curvature_ascent(seed, px, py):
    kappa = np.random.default_rng(seed).random((32, 32)) + 0.01
    pos, f = track_extremum((px, py), CurvatureMap(kappa), TrackerConfig(lam=0.0, max_hill_climb_steps=1000))
    x, y = pos
    nb = kappa[max(y - 1, 0):y + 2, max(x - 1, 0):x + 2]
    assert f == kappa[y, x] == nb.max()


# tracks

def test_feature_track_invariants():
    t = FeatureTrack(0)
    t.add(3, (1, 2))
    with pytest.raises(InvalidInputError):
        t.add(3, (1, 2))
    with pytest.raises(InvalidInputError):
        t.add(2, (1, 2))
    t.mark_lost()
    assert t.status == LOST
    with pytest.raises(InvalidInputError):
        t.add(4, (1, 2))


def test_tracker_config_validation():
    with pytest.raises(InvalidInputError):
        TrackerConfig(subsample_factor=0)
    with pytest.raises(InvalidInputError):
        TrackerConfig(max_hill_climb_steps=0)
    with pytest.raises(InvalidInputError):
        TrackerConfig(lam=-1.0)


def test_static_sequence_keeps_every_track():
    img = texture(240, 320, seed=5)
    cfg = TrackerConfig(subsample_factor=3)
    ts = TrackSet()
    kmap = curvature_of(img, cfg.blur_sigma)
    n = seed_tracks(ts, 0, img, kmap, cfg)
    start = {t.track_id: t.last_position for t in ts.live_tracks()}
    for k in (1, 2, 3):
        rep = advance_tracks(ts, img, img, kmap, cfg, k)
        assert rep.n_lost == 0 and rep.n_tracked == n and rep.n_spawned == 0
    assert {t.track_id: t.last_position for t in ts.live_tracks()} == start
    assert all(t.status == LIVE for t in ts.tracks.values())


def test_three_pixel_translation_is_followed():
    frac, total = follow_fraction(translated_sequence(6, 3), 3, TrackerConfig())
    assert total > 1000
    assert frac >= 0.95


def test_occluded_half_loses_its_tracks_only():
    img = texture(480, 752, seed=9)
    occluded = img.copy()
    occluded[:, 376:] = 0.5
    cfg = TrackerConfig()
    ts = TrackSet()
    seed_tracks(ts, 0, img, curvature_of(img, cfg.blur_sigma), cfg)
    before = {t.track_id: t.last_position for t in ts.live_tracks()}
    advance_tracks(ts, img, occluded, curvature_of(occluded, cfg.blur_sigma), cfg, 1)
    margin = 8  # blur and Sobel support reach a few pixels across the edge
    right = [tid for tid, (x, _) in before.items() if x >= 376 + margin]
    left = [tid for tid, (x, _) in before.items() if x < 376 - margin]
    assert right and left
    assert all(ts.tracks[tid].status == LOST for tid in right)
    assert all(ts.tracks[tid].live and ts.tracks[tid].last_position == before[tid] for tid in left)


def test_insufficient_matches_reuse_previous_flow():
    img = texture(240, 320, seed=5)
    flat = np.full_like(img, 0.5)
    cfg = TrackerConfig(subsample_factor=3)
    ts = TrackSet()
    seed_tracks(ts, 0, img, curvature_of(img, cfg.blur_sigma), cfg)
    ts.last_flow = DominantFlow(np.eye(2), np.array([1.0, 0.0]))
    rep = advance_tracks(ts, img, flat, curvature_of(flat, cfg.blur_sigma), cfg, 1)
    assert rep.flow_reused and np.allclose(rep.flow.b, [1.0, 0.0])
    assert rep.n_tracked == 0 and rep.n_lost > 0


def test_advance_rejects_non_increasing_frame():
    img = texture(120, 160)
    cfg = TrackerConfig(subsample_factor=2)
    ts = TrackSet()
    seed_tracks(ts, 5, img, curvature_of(img), cfg)
    with pytest.raises(InvalidInputError):
        advance_tracks(ts, img, img, curvature_of(img), cfg, 5)


def test_collisions_keep_one_track_per_pixel():
    img = texture(240, 320, seed=2)
    cfg = TrackerConfig(subsample_factor=3)
    ts = TrackSet()
    kmap = curvature_of(img, cfg.blur_sigma)
    seed_tracks(ts, 0, img, kmap, cfg)
    # duplicate every track so each pair must collide
    for t in list(ts.live_tracks()):
        ts.spawn(0, t.last_position)
    n = len(ts.live_tracks())
    rep = advance_tracks(ts, img, img, kmap, cfg, 1)
    assert rep.n_tracked == n // 2 and rep.n_lost == n // 2
    positions = [t.last_position for t in ts.live_tracks()]
    assert len(positions) == len(set(positions))
    # the survivor of an exact tie is the lower track id
    survivors = sorted(t.track_id for t in ts.live_tracks())
    assert survivors == list(range(n // 2))
