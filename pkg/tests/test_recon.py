import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from densevo.errors import FormatError, LoadError
from densevo.geometry import PinholeCamera, Pose, so3_exp
from densevo.recon import (TriangleMesh, TsdfVolume, export_ply, extract_surface, integrate_mesh, mesh_frame,
                           read_ply, smooth_mesh, triangle_gates)

CAM = PinholeCamera(400, 400, 319.5, 239.5, width=640, height=480)
VOXEL = 0.05


def grid_points(n, spacing, depth, jitter=0.0, seed=0):
    rng = np.random.default_rng(seed)
    xs = (np.arange(n) - (n - 1) / 2) * spacing
    X, Y = np.meshgrid(xs, xs)
    pts = np.column_stack([X.ravel(), Y.ravel(), np.full(n * n, depth)])
    return pts + rng.normal(0, jitter, pts.shape) if jitter else pts


def grid_mesh(n=20, spacing=0.2, depth=2.0):
    pts = grid_points(n, spacing, depth)
    faces = []
    for i in range(n - 1):
        for j in range(n - 1):
            a = i * n + j
            faces += [[a, a + 1, a + n], [a + 1, a + n + 1, a + n]]
    return TriangleMesh(pts, faces)


def plane_distance_rms(vertices, depth):
    return float(np.sqrt(np.mean((vertices[:, 2] - depth) ** 2)))


def wall(depth, half=3.0, normal_tilt=None):
    """Large square facing the camera at ``depth``; optionally rotated about its centre."""
    v = np.array([[-half, -half, 0], [half, -half, 0], [half, half, 0], [-half, half, 0]], dtype=float)
    if normal_tilt is not None:
        v = v @ so3_exp(normal_tilt).T
    return TriangleMesh(v + [0, 0, depth], [[0, 1, 2], [0, 2, 3]])


# per-frame meshing

def test_three_points_give_one_triangle():
    m = mesh_frame([[0, 0, 2], [0.3, 0, 2], [0, 0.3, 2.1]], Pose(), CAM)
    assert m.n_faces == 1 and m.n_vertices == 3


def test_degenerate_inputs_give_empty_mesh():
    assert mesh_frame([[0, 0, 2], [0.1, 0, 2]], Pose(), CAM).is_empty()
    assert mesh_frame([[0, 0, 2], [0.1, 0, 2], [0.2, 0, 2], [0.3, 0, 2]], Pose(), CAM).is_empty()
    assert mesh_frame(np.zeros((0, 3)), Pose(), CAM).is_empty()


def test_planar_grid_triangle_count_and_coplanarity():
    n = 10
    m = mesh_frame(grid_points(n, 0.1, 2.0), Pose(), CAM)
    assert m.n_faces == 2 * (n - 1) ** 2 == 162
    assert np.abs(m.vertices[:, 2] - 2.0).max() < 1e-9


def test_depth_discontinuity_edge_is_removed():
    # a near triangle and a far point next to it in the image
    near = [[0.0, 0.0, 1.0], [0.05, 0.0, 1.0], [0.0, 0.05, 1.0]]
    far = [[0.6, 0.6, 10.0]]
    m = mesh_frame(near + far, Pose(), CAM)
    z = m.vertices[m.faces][:, :, 2]
    assert not np.any((z.min(axis=1) < 2) & (z.max(axis=1) > 5))
    assert m.n_faces == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_mesh_triangles_pass_gates_post_hoc(seed):
    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.uniform(-1, 1, (80, 2)), rng.uniform(1.0, 4.0, 80)])
    pose = Pose(so3_exp(rng.normal(0, 0.05, 3)), rng.normal(0, 0.1, 3))
    m = mesh_frame(pts, pose, CAM)
    if m.is_empty():
        return
    depth = pose.to_camera(m.vertices)[:, 2]
    assert triangle_gates(m.vertices, m.faces, depth, 30 * VOXEL, 1.5).all()
    m.validate()


# smoothing

def test_smoothing_keeps_planar_mesh():
    m = grid_mesh()
    out = smooth_mesh(m, 10, 1.0)
    assert np.abs(out.vertices - m.vertices).max() < 1e-9


def test_smoothing_halves_noise_on_plane():
    rng = np.random.default_rng(1)
    m = grid_mesh()
    noisy = TriangleMesh(m.vertices + rng.normal(0, VOXEL, m.vertices.shape), m.faces)
    before = plane_distance_rms(noisy.vertices, 2.0)
    after = plane_distance_rms(smooth_mesh(noisy, 10, 1.0).vertices, 2.0)
    assert after <= 0.5 * before


def test_smoothing_empty_mesh():
    assert smooth_mesh(TriangleMesh(), 10, 1.0).is_empty()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.floats(0.1, 1.0))
def test_smoothing_preserves_topology(seed, iterations, strength):
    rng = np.random.default_rng(seed)
    m = grid_mesh(8)
    noisy = TriangleMesh(m.vertices + rng.normal(0, VOXEL, m.vertices.shape), m.faces)
    out = smooth_mesh(noisy, iterations, strength)
    assert out.n_vertices == noisy.n_vertices and np.array_equal(out.faces, noisy.faces)


# fusion

def voxels_along_axis(volume, z_values):
    return volume.world_to_index(np.column_stack([np.zeros(len(z_values)), np.zeros(len(z_values)), z_values]))


def test_plane_integration_matches_signed_distance():
    vol = TsdfVolume(VOXEL)
    integrate_mesh(vol, wall(2.0), Pose(), CAM)
    tau = vol.truncation
    on, _ = vol.lookup(voxels_along_axis(vol, [2.0]))
    assert abs(on[0]) < VOXEL / tau
    front, w = vol.lookup(voxels_along_axis(vol, [2.0 - tau]))
    assert front[0] == pytest.approx(1.0, abs=1e-9) and w[0] == 1
    # samples across the band follow (depth - z) / tau
    zs = 2.0 + VOXEL * np.arange(-3, 4)
    d, w = vol.lookup(voxels_along_axis(vol, zs))
    assert np.all(w == 1)
    assert np.allclose(d, (2.0 - zs) / tau, atol=1e-9)


def test_double_integration_doubles_weight_only():
    vol = TsdfVolume(VOXEL)
    integrate_mesh(vol, wall(2.0), Pose(), CAM)
    once = vol.copy()
    integrate_mesh(vol, wall(2.0), Pose(), CAM)
    assert once.chunks.keys() == vol.chunks.keys()
    for k in vol.chunks:
        assert np.array_equal(vol.chunks[k][0], once.chunks[k][0])
        assert np.array_equal(vol.chunks[k][1], 2 * once.chunks[k][1])


def test_empty_mesh_leaves_volume_unchanged():
    vol = TsdfVolume(VOXEL)
    integrate_mesh(vol, wall(2.0), Pose(), CAM)
    before = vol.copy()
    integrate_mesh(vol, TriangleMesh(), Pose(), CAM)
    assert before.chunks.keys() == vol.chunks.keys()
    assert all(np.array_equal(vol.chunks[k][0], before.chunks[k][0]) for k in vol.chunks)


@settings(max_examples=6, deadline=None)
@given(st.lists(st.tuples(st.floats(1.5, 3.0), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3)), min_size=1, max_size=3))
def test_tsdf_bounded_and_weights_non_decreasing(walls):
    vol = TsdfVolume(VOXEL)
    prev = {}
    for depth, a, b in walls:
        integrate_mesh(vol, wall(depth, normal_tilt=[a, b, 0.0]), Pose(), CAM, shape=(120, 160))
        for k, (d, w) in vol.chunks.items():
            assert np.all(np.abs(d) <= 1.0)
            if k in prev:
                assert np.all(w >= prev[k])
        prev = {k: w.copy() for k, (_, w) in vol.chunks.items()}


def test_integration_order_commutes():
    cam = PinholeCamera(200, 200, 159.5, 119.5, width=320, height=240)
    a = (wall(2.0, normal_tilt=[0.2, 0.1, 0.0]), Pose())
    b = (wall(2.1, normal_tilt=[-0.1, 0.3, 0.0]), Pose(so3_exp([0.0, 0.05, 0.0]), [0.1, 0.0, 0.0]))
    v1, v2 = TsdfVolume(VOXEL), TsdfVolume(VOXEL)
    for m, p in (a, b):
        integrate_mesh(v1, m, p, cam)
    for m, p in (b, a):
        integrate_mesh(v2, m, p, cam)
    assert v1.chunks.keys() == v2.chunks.keys()
    for k in v1.chunks:
        assert np.abs(v1.chunks[k][0] - v2.chunks[k][0]).max() <= 1e-12
        assert np.array_equal(v1.chunks[k][1], v2.chunks[k][1])


def test_volume_save_load_round_trip(tmp_path):
    vol = TsdfVolume(VOXEL)
    integrate_mesh(vol, wall(2.0), Pose(), CAM, shape=(120, 160))
    vol.save(tmp_path / "v.npz")
    back = TsdfVolume.load(tmp_path / "v.npz")
    assert back.voxel_size == vol.voxel_size and back.truncation == vol.truncation
    assert all(np.array_equal(back.chunks[k][0], vol.chunks[k][0]) for k in vol.chunks)
    with pytest.raises(LoadError):
        TsdfVolume.load(tmp_path / "missing.npz")


# extraction

def analytic_volume(sdf, lo, hi):
    vol = TsdfVolume(1.0, truncation=4.0)
    idx = np.stack(np.meshgrid(*(np.arange(lo, hi),) * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    vol.assign(idx, sdf(idx.astype(float)) / vol.truncation, 1.0)
    return vol


def test_sphere_extraction_within_half_voxel():
    c, r = np.array([20.3, 19.7, 20.1]), 10.0
    vol = analytic_volume(lambda p: r - np.linalg.norm(p - c, axis=1), 0, 41)
    m = extract_surface(vol)
    assert m.n_faces > 100
    dist = np.linalg.norm(m.vertices - c, axis=1)
    assert np.abs(dist - r).max() <= 0.5


def test_chunked_extraction_matches_one_dense_pass():
    from skimage import measure

    c, r = np.array([16.4, 15.6, 31.8]), 9.0  # straddles several chunk faces
    vol = analytic_volume(lambda p: r - np.linalg.norm(p - c, axis=1), 0, 48)
    m = extract_surface(vol)
    tsdf, _, lo = vol.dense()
    verts, faces, _, _ = measure.marching_cubes(tsdf[:48, :48, :48], level=0.0)
    from scipy.spatial import cKDTree

    ref = verts + lo
    assert m.n_faces == len(faces) and m.n_vertices == len(np.unique(np.round(ref, 6), axis=0))
    # the extractor works in single precision: a few ulps at coordinate ~32
    assert cKDTree(ref).query(m.vertices)[0].max() < 1e-5
    assert cKDTree(m.vertices).query(ref)[0].max() < 1e-5


def test_plane_extraction_planar():
    n = np.array([0.2, -0.3, 1.0])
    n /= np.linalg.norm(n)
    vol = analytic_volume(lambda p: 16.4 - p @ n, 0, 33)
    m = extract_surface(vol)
    assert m.n_faces > 100
    v = m.vertices - m.vertices.mean(axis=0)
    normal = np.linalg.svd(v)[2][-1]
    assert np.sqrt(np.mean((v @ normal) ** 2)) <= 0.1


def test_empty_volume_extracts_nothing():
    assert extract_surface(TsdfVolume()).is_empty()
    vol = TsdfVolume()
    vol.assign([[0, 0, 0], [1, 1, 1]], 1.0, 0.0)  # allocated but never observed
    assert extract_surface(vol).is_empty()


def test_extraction_needs_observed_corners():
    vol = analytic_volume(lambda p: 8.2 - p[:, 2], 0, 17)
    full = extract_surface(vol)
    tsdf, w = vol.lookup([[i, j, k] for i in range(17) for j in range(8) for k in range(17)])
    vol.assign([[i, j, k] for i in range(17) for j in range(8) for k in range(17)], tsdf, 0.0)
    part = extract_surface(vol)
    assert 0 < part.n_faces < full.n_faces
    assert part.vertices[:, 1].min() >= 8 - 1e-9


# PLY

def unit_cube():
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    f = [[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
         [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]]
    return TriangleMesh(v, f)


@pytest.mark.parametrize("ascii", [False, True])
def test_ply_round_trip_is_exact(tmp_path, ascii):
    rng = np.random.default_rng(0)
    m = TriangleMesh(rng.normal(size=(30, 3)), rng.permuted(np.tile(np.arange(30), (20, 1)), axis=1)[:, :3])
    export_ply(m, tmp_path / "m.ply", ascii=ascii)
    back = read_ply(tmp_path / "m.ply")
    assert np.array_equal(back.vertices, m.vertices) and np.array_equal(back.faces, m.faces)
    withn = m.with_vertex_normals()
    export_ply(withn, tmp_path / "n.ply", ascii=ascii)
    assert np.array_equal(read_ply(tmp_path / "n.ply").normals, withn.normals)


def test_ply_empty_mesh(tmp_path):
    export_ply(TriangleMesh(), tmp_path / "e.ply")
    text = (tmp_path / "e.ply").read_bytes().decode("ascii")
    assert "element vertex 0\n" in text and "element face 0\n" in text and text.endswith("end_header\n")
    assert read_ply(tmp_path / "e.ply").is_empty()


def test_ply_header_follows_grammar(tmp_path):
    """Independent parse of the header and binary body of a unit cube."""
    export_ply(unit_cube(), tmp_path / "c.ply")
    raw = (tmp_path / "c.ply").read_bytes()
    head, body = raw.split(b"end_header\n", 1)
    lines = head.decode("ascii").strip().split("\n")
    assert lines[0] == "ply" and lines[1] == "format binary_little_endian 1.0"
    tokens = [ln.split() for ln in lines[2:] if not ln.startswith("comment")]
    assert tokens[0] == ["element", "vertex", "8"]
    assert [t[2] for t in tokens[1:4]] == ["x", "y", "z"] and all(t[:2] == ["property", "double"] for t in tokens[1:4])
    assert tokens[4] == ["element", "face", "12"]
    assert tokens[5] == ["property", "list", "uchar", "int", "vertex_indices"]
    assert len(body) == 8 * 3 * 8 + 12 * (1 + 3 * 4)
    verts = np.frombuffer(body[:192], "<f8").reshape(8, 3)
    faces = np.frombuffer(body[192:], np.dtype([("n", "u1"), ("i", "<i4", 3)]))
    assert np.array_equal(verts, unit_cube().vertices) and np.all(faces["n"] == 3)
    assert np.array_equal(faces["i"], unit_cube().faces)


def test_ply_errors(tmp_path):
    with pytest.raises(LoadError):
        read_ply(tmp_path / "none.ply")
    (tmp_path / "bad.ply").write_text("not a ply\n")
    with pytest.raises(FormatError):
        read_ply(tmp_path / "bad.ply")
