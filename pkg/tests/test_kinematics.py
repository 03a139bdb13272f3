import numpy as np
import pytest

from artikit.artcore import JointSpec, JointType
from artikit.kinematics import (
    JointState,
    RigidTransform,
    joint_transform,
    pose_object,
    project_origin_to_aabb,
    sample_states,
)

from helpers import cabinet, drawer_unit, random_depth1_object


def rev(axis, origin, rng=(-10.0, 10.0)):
    return JointSpec(JointType.REVOLUTE, "door", origin, axis, rng, 0)


class TestJointTransform:
    def test_revolute_z_quarter_turn(self):
        t = joint_transform(rev((0, 0, 1), (0, 0, 0)), np.pi / 2)
        np.testing.assert_allclose(t.apply([[1, 0, 0]]), [[0, 1, 0]], atol=1e-12)

    def test_prismatic_translation(self):
        j = JointSpec(JointType.PRISMATIC, "drawer", (0, 0, 0), (0, 0, 1), (0, 1), 0)
        t = joint_transform(j, 0.3)
        np.testing.assert_allclose(t.rotation, np.eye(3), atol=1e-15)
        np.testing.assert_allclose(t.translation, [0, 0, 0.3], atol=1e-15)

    def test_revolute_about_offset_pivot(self):
        # Oracle: compose 4x4 matrices translate(o) @ rot @ translate(-o).
        origin = np.array([1.0, 0.0, 0.0])
        angle = np.pi
        to = np.eye(4)
        to[:3, 3] = origin
        back = np.eye(4)
        back[:3, 3] = -origin
        rot = np.eye(4)
        c, s = np.cos(angle), np.sin(angle)
        rot[:2, :2] = [[c, -s], [s, c]]
        oracle = to @ rot @ back

        t = joint_transform(rev((0, 0, 1), tuple(origin)), angle)
        np.testing.assert_allclose(t.matrix(), oracle, atol=1e-12)
        np.testing.assert_allclose(t.apply([[2, 0, 0]]), [[0, 0, 0]], atol=1e-12)

    def test_identity_at_zero_for_all_types(self):
        joints = [rev((0, 0, 1), (0.3, 0.2, 0.1)),
                  JointSpec(JointType.PRISMATIC, "drawer", (0, 0, 0), (1, 0, 0), (0, 1), 0),
                  JointSpec(JointType.FIXED, "base", (0, 0, 0), (0, 0, 1), (0, 0), -1)]
        for j in joints:
            t = joint_transform(j, 0.0)
            np.testing.assert_allclose(t.matrix(), np.eye(4), atol=1e-15)

    def test_axis_line_fixed_pointwise(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            origin = rng.uniform(-1, 1, size=3)
            q = rng.uniform(-3, 3)
            t = joint_transform(rev(tuple(axis), tuple(origin)), q)
            pts = origin + np.outer(rng.uniform(-2, 2, size=5), axis)
            np.testing.assert_allclose(t.apply(pts), pts, atol=1e-10)

    def test_non_unit_axis_rejected(self):
        with pytest.raises(ValueError, match="non-unit"):
            joint_transform(rev((0, 0, 2), (0, 0, 0)), 0.5)

    def test_out_of_range_clamped(self):
        j = rev((0, 0, 1), (0, 0, 0), rng=(0.0, 1.0))
        t = joint_transform(j, 5.0)
        np.testing.assert_allclose(t.matrix(), joint_transform(j, 1.0).matrix())


class TestPoseObject:
    def test_rest_state_is_input(self):
        obj = cabinet()
        posed = pose_object(obj, JointState.resting(obj.num_parts))
        for a, b in zip(obj.parts, posed.parts):
            np.testing.assert_array_equal(a.geometry.points, b.geometry.points)

    def test_prismatic_shift(self):
        obj = drawer_unit()
        posed = pose_object(obj, JointState([0.0, 0.25]))
        np.testing.assert_allclose(posed.parts[1].geometry.points,
                                   obj.parts[1].geometry.points + [0, -0.25, 0], atol=1e-15)

    def test_aabb_from_points_not_corners(self):
        # Oracle: transform every point, then take min/max.
        obj = cabinet()
        q = np.pi / 2
        posed = pose_object(obj, JointState([0.0, q]))
        t = joint_transform(obj.parts[1].joint, q)
        moved = t.apply(obj.parts[1].geometry.points)
        lo, hi = posed.parts[1].geometry.aabb
        np.testing.assert_allclose(lo, moved.min(axis=0), atol=1e-15)
        np.testing.assert_allclose(hi, moved.max(axis=0), atol=1e-15)

    def test_rigidity_preserved(self):
        rng = np.random.default_rng(7)
        obj = random_depth1_object(rng)
        pts_before = [p.geometry.points for p in obj.parts]
        for _ in range(10):
            frac = rng.uniform()
            posed = pose_object(obj, sample_states(obj, [frac])[0])
            for before, after in zip(pts_before, (p.geometry.points for p in posed.parts)):
                assert before.shape == after.shape
                d0 = np.linalg.norm(before[:, None] - before[None, :], axis=-1)
                d1 = np.linalg.norm(after[:, None] - after[None, :], axis=-1)
                np.testing.assert_allclose(d0, d1, atol=1e-9)

    def test_wrong_state_length(self):
        with pytest.raises(ValueError, match="length"):
            pose_object(cabinet(), JointState([0.0]))

    def test_joint_specs_carried_through(self):
        obj = cabinet()
        posed = pose_object(obj, JointState([0.0, 0.5]))
        assert posed.parts[1].joint == obj.parts[1].joint


class TestSampleStates:
    def test_zero_fraction_is_rest(self):
        obj = cabinet()
        state = sample_states(obj, [0.0])[0]
        np.testing.assert_array_equal(state.values, [0.0, 0.0])

    def test_endpoint(self):
        obj = cabinet(door_range=(0.0, np.pi / 2))
        state = sample_states(obj, [1.0])[0]
        assert state.values[1] == pytest.approx(np.pi / 2)

    def test_monotone_interpolation(self):
        # Oracle: q = lo + f * (hi - lo) computed directly.
        obj = drawer_unit()
        fracs = [0.25, 0.5, 0.75, 1.0]
        states = sample_states(obj, fracs)
        assert len(states) == 4
        lo, hi = obj.parts[1].joint.range
        expected = [lo + f * (hi - lo) for f in fracs]
        got = [s.values[1] for s in states]
        np.testing.assert_allclose(got, expected, atol=1e-15)
        assert all(a < b for a, b in zip(got, got[1:]))

    def test_fraction_out_of_range(self):
        with pytest.raises(ValueError, match="fraction"):
            sample_states(cabinet(), [1.5])

    def test_sequential_mode(self):
        rng = np.random.default_rng(0)
        obj = random_depth1_object(rng, num_parts=3)
        states = sample_states(obj, [0.5, 1.0], mode="sequential")
        assert len(states) == 4  # 2 movable joints x 2 fractions
        for s in states:
            assert np.count_nonzero(s.values) <= 1


class TestProjectOrigin:
    CUBE = (np.zeros(3), np.ones(3))

    def test_exterior_clamps(self):
        out = project_origin_to_aabb([2.0, 0.5, 0.5], self.CUBE)
        np.testing.assert_allclose(out, [1.0, 0.5, 0.5])

    def test_interior_pushed_to_nearest_face(self):
        # Oracle: grid-search over surface samples.
        p = np.array([0.5, 0.5, 0.1])
        out = project_origin_to_aabb(p, self.CUBE)
        np.testing.assert_allclose(out, [0.5, 0.5, 0.0])
        best = self._surface_grid_min(p)
        assert np.linalg.norm(out - p) <= best + 1e-3

    def test_surface_point_fixed(self):
        p = [0.3, 1.0, 0.7]
        np.testing.assert_allclose(project_origin_to_aabb(p, self.CUBE), p)

    def test_output_on_surface_and_inside(self):
        rng = np.random.default_rng(11)
        lo = np.array([0.2, -0.3, 0.0])
        hi = np.array([1.0, 0.4, 2.0])
        for _ in range(200):
            p = rng.uniform(-1, 3, size=3)
            out = project_origin_to_aabb(p, (lo, hi))
            assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)
            on_face = any(np.isclose(out[d], lo[d]) or np.isclose(out[d], hi[d]) for d in range(3))
            assert on_face

    def test_beats_random_surface_samples(self):
        rng = np.random.default_rng(13)
        lo = np.array([0.0, 0.0, 0.0])
        hi = np.array([1.0, 0.5, 0.25])
        samples = _surface_samples(lo, hi, 20000, rng)
        for _ in range(50):
            p = rng.uniform(-0.5, 1.5, size=3)
            out = project_origin_to_aabb(p, (lo, hi))
            d_out = np.linalg.norm(out - p)
            d_best = np.min(np.linalg.norm(samples - p, axis=1))
            assert d_out <= d_best + 1e-12

    def test_degenerate_box(self):
        out = project_origin_to_aabb([5, 5, 5], (np.ones(3) * 2, np.ones(3) * 2))
        np.testing.assert_allclose(out, [2, 2, 2])

    def _surface_grid_min(self, p, n=100):
        g = np.linspace(0, 1, n)
        best = np.inf
        for fixed_dim in range(3):
            for val in (0.0, 1.0):
                a, b = np.meshgrid(g, g, indexing="ij")
                pts = np.zeros((n * n, 3))
                other = [d for d in range(3) if d != fixed_dim]
                pts[:, other[0]] = a.ravel()
                pts[:, other[1]] = b.ravel()
                pts[:, fixed_dim] = val
                best = min(best, np.min(np.linalg.norm(pts - p, axis=1)))
        return best


def _surface_samples(lo, hi, n, rng):
    size = hi - lo
    areas = np.array([size[1] * size[2], size[0] * size[2], size[0] * size[1]])
    areas = np.repeat(areas, 2)
    probs = areas / areas.sum()
    faces = rng.choice(6, size=n, p=probs)
    pts = rng.uniform(size=(n, 3)) * size + lo
    for i, f in enumerate(faces):
        d = f // 2
        pts[i, d] = lo[d] if f % 2 == 0 else hi[d]
    return pts


def test_rigid_transform_validation():
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3) * 2, np.zeros(3))


def test_joint_state_clamps_and_zeroes_fixed():
    obj = cabinet(door_range=(0.0, 1.0))
    state = JointState.for_object(obj, [0.7, 5.0])
    assert state.values[0] == 0.0  # fixed base pinned
    assert state.values[1] == 1.0  # clamped to range
