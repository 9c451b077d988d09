import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthex_forge.geometry import (
    DEG,
    CameraModel,
    GeometryError,
    PoseSample,
    PoseSampler,
    PoseSamplerConfig,
    ProjectionGeometry,
    RigidTransform,
    canonical_geometry,
    compose,
    default_carm,
    euler_xyz_to_matrix,
    geometry_for_pose,
    invert,
    matrix_to_euler_xyz,
    project_point,
    read_pose_log,
    sample_pose,
    write_pose_log,
)


def random_rigid(rng) -> RigidTransform:
    R = euler_xyz_to_matrix(*rng.uniform(-80, 80, 3))
    return RigidTransform(R, rng.uniform(-100, 100, 3))


def projection_matrix_oracle(geom: ProjectionGeometry) -> np.ndarray:
    """Independent 3x4 homogeneous pinhole matrix: K @ [R|t] of camera_from_world."""
    sdd = geom.camera.source_to_detector
    s = geom.output_pixel_spacing
    ppx, ppy = geom.output_principal_point
    K = np.array([[sdd / s, 0, ppx], [0, sdd / s, ppy], [0, 0, 1.0]])
    R = geom.world_from_camera.rotation.T
    t = -R @ geom.world_from_camera.translation
    return K @ np.hstack([R, t[:, None]])


# ---------------------------------------------------------------------------
# camera + projection
# ---------------------------------------------------------------------------

def test_default_carm_constants():
    cam = default_carm()
    assert cam.detector_dims == (1536, 1536)
    assert cam.pixel_spacing == 0.194
    assert cam.source_to_detector == 1020.0
    assert cam.principal_point == (768.0, 768.0)


def test_isocenter_projects_to_principal_point():
    geom = canonical_geometry(default_carm())
    pixel, visible = project_point(geom, [0.0, 0.0, 0.0])
    assert visible
    assert np.allclose(pixel, [768.0, 768.0], atol=1e-9)


def test_point_behind_source_invisible():
    geom = canonical_geometry(default_carm())  # source at z = -510
    _, visible = project_point(geom, [0.0, 0.0, -600.0])
    assert not visible


def test_point_at_source_raises():
    geom = canonical_geometry(default_carm())
    with pytest.raises(GeometryError, match="source"):
        project_point(geom, geom.source_world())


def test_projection_matches_matrix_oracle():
    rng = np.random.default_rng(42)
    for _ in range(20):
        geom = ProjectionGeometry(
            camera=default_carm().at_resolution(360),
            world_from_camera=random_rigid(rng),
        )
        P = projection_matrix_oracle(geom)
        p = rng.uniform(-150, 150, 3)
        ph = P @ np.append(p, 1.0)
        if abs(ph[2]) < 1e-6:
            continue
        expected = ph[:2] / ph[2]
        pixel, _ = project_point(geom, p)
        assert np.allclose(pixel, expected, atol=1e-6)


def test_downsample_scale_consistency():
    cam = default_carm()
    rng = np.random.default_rng(0)
    g1 = ProjectionGeometry(camera=cam, world_from_camera=random_rigid(rng),
                            downsample=1)
    g2 = ProjectionGeometry(camera=cam, world_from_camera=g1.world_from_camera,
                            downsample=2)
    for _ in range(20):
        p = rng.uniform(-100, 100, 3)
        px1, _ = project_point(g1, p)
        px2, _ = project_point(g2, p)
        rel1 = px1 - np.array(g1.output_principal_point)
        rel2 = px2 - np.array(g2.output_principal_point)
        assert np.allclose(rel1 / 2.0, rel2, atol=1e-6)


def test_downsample_must_divide():
    with pytest.raises(GeometryError, match="divide"):
        ProjectionGeometry(camera=default_carm(),
                           world_from_camera=RigidTransform.identity(),
                           downsample=7)


def test_at_resolution_scales_spacing():
    cam = default_carm().at_resolution(360)
    assert cam.detector_dims == (360, 360)
    assert np.isclose(cam.pixel_spacing, 0.194 * 1536 / 360)
    assert cam.principal_point == (180.0, 180.0)


# ---------------------------------------------------------------------------
# rigid transforms
# ---------------------------------------------------------------------------

def test_compose_identity():
    rng = np.random.default_rng(1)
    T = random_rigid(rng)
    I = RigidTransform.identity()
    assert np.allclose(compose(I, T).matrix(), T.matrix(), atol=1e-12)


def test_compose_with_inverse_is_identity():
    rng = np.random.default_rng(2)
    for _ in range(10):
        T = random_rigid(rng)
        M = compose(T, invert(T)).matrix()
        assert np.allclose(M, np.eye(4), atol=1e-9)


def test_compose_matches_homogeneous_matrix_oracle():
    rng = np.random.default_rng(3)
    for _ in range(10):
        a, b = random_rigid(rng), random_rigid(rng)
        assert np.allclose(compose(a, b).matrix(), a.matrix() @ b.matrix(),
                           atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.tuples(st.floats(-44, 44), st.floats(-44, 44), st.floats(-44, 44)))
def test_euler_xyz_roundtrip(angles):
    R = euler_xyz_to_matrix(*angles)
    back = matrix_to_euler_xyz(R)
    assert np.allclose(back, angles, atol=1e-9)


def test_rotation_validation():
    with pytest.raises(GeometryError):
        RigidTransform(np.diag([1.0, 1.0, 0.5]), np.zeros(3))


# ---------------------------------------------------------------------------
# pose samplers
# ---------------------------------------------------------------------------

def test_hip_sampler_ranges():
    sampler = PoseSampler(PoseSamplerConfig(task="hip", seed=5))
    for _ in range(2000):
        s = sampler.sample()
        assert np.all(np.abs(s.euler_deg) <= 45.0)
        # decomposing the logged matrix recovers the same angles
        assert np.allclose(matrix_to_euler_xyz(s.pose.rotation), s.euler_deg,
                           atol=1e-9)
        t = s.pose.translation
        assert abs(t[0]) <= 50.0 and abs(t[1]) <= 20.0 and abs(t[2]) <= 100.0
        assert s.shear is None


def test_tool_sampler_gaussian_sigma():
    sampler = PoseSampler(PoseSamplerConfig(task="tool", seed=6))
    xs, zs = [], []
    for _ in range(10_000):
        s = sampler.sample()
        xs.append(s.pose.translation[0])
        zs.append(s.pose.translation[2])
        assert abs(s.euler_deg[0]) <= 10.0    # CRAN/CAUD
        assert abs(s.euler_deg[1]) <= 30.0    # LAO/RAO
    assert abs(np.std(xs) - 10.0) / 10.0 < 0.05
    src_iso = np.array(zs) + 510.0
    assert src_iso.min() >= 600.0 and src_iso.max() <= 900.0


def test_covid_sampler_ranges():
    sampler = PoseSampler(PoseSamplerConfig(task="covid", seed=7))
    for _ in range(2000):
        s = sampler.sample()
        assert np.all(np.abs(s.euler_deg) <= 5.0)
        src_iso = s.pose.translation[2] + 510.0
        assert 350.0 <= src_iso <= 650.0
        assert s.shear is not None
        off = s.shear - np.eye(3)
        assert np.count_nonzero(off) == 1
        assert np.abs(off).max() <= np.tan(30 * DEG) + 1e-12


def test_sampler_determinism():
    a = PoseSampler(PoseSamplerConfig(task="hip", seed=99))
    b = PoseSampler(PoseSamplerConfig(task="hip", seed=99))
    for _ in range(50):
        sa, sb = a.sample(), b.sample()
        assert np.array_equal(sa.pose.rotation, sb.pose.rotation)
        assert np.array_equal(sa.pose.translation, sb.pose.translation)


def test_sampler_outputs_valid_rotations():
    for task in ("hip", "tool", "covid"):
        sampler = PoseSampler(PoseSamplerConfig(task=task, seed=1))
        for _ in range(200):
            R = sampler.sample().pose.rotation
            assert np.allclose(R @ R.T, np.eye(3), atol=1e-9)
            assert abs(np.linalg.det(R) - 1) < 1e-9


def test_unknown_task_rejected():
    with pytest.raises(GeometryError, match="unknown task"):
        PoseSamplerConfig(task="knee")


def test_pose_log_roundtrip(tmp_path):
    sampler = PoseSampler(PoseSamplerConfig(task="covid", seed=3))
    samples = [sampler.sample() for _ in range(5)]
    path = tmp_path / "poses.jsonl"
    write_pose_log(path, samples, seed=3)
    back = read_pose_log(path)
    assert len(back) == 5
    for s, b in zip(samples, back):
        assert np.allclose(s.pose.rotation, b.pose.rotation, atol=1e-15)
        assert np.allclose(s.pose.translation, b.pose.translation, atol=1e-15)
        assert np.allclose(s.shear, b.shear, atol=1e-15)


def test_geometry_for_pose_equals_transformed_point_in_canonical_view():
    # rendering the posed volume with the folded geometry equals rendering the
    # unposed volume where every point p is seen at pose(p) in canonical view
    rng = np.random.default_rng(8)
    cam = default_carm()
    pose = PoseSample(random_rigid(rng))
    geom = geometry_for_pose(cam, pose)
    base = canonical_geometry(cam)
    for _ in range(10):
        p = rng.uniform(-80, 80, 3)
        px_folded, _ = project_point(geom, p)
        px_canon, _ = project_point(base, pose.pose.apply(p))
        assert np.allclose(px_folded, px_canon, atol=1e-8)
