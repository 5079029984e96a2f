import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streampile import (
    ConfigError,
    LandmarkSet,
    MergeTable,
    RegionTransformParams,
    apply_region_transforms,
    merge_points,
    retarget,
)
from streampile.landmarks import aperture

from conftest import GOLDEN


def random_face68(seed):
    r = np.random.default_rng(seed)
    return LandmarkSet(points=r.uniform(0.05, 0.95, (68, 2)), scheme="human68")


@pytest.fixture(scope="module")
def table():
    return MergeTable.default()


@pytest.fixture(scope="module")
def neutral_face():
    with open(f"{GOLDEN}/neutral_face68.json") as fh:
        return LandmarkSet.from_json(fh.read())


class TestMergePoints:
    def test_constant_face_maps_to_constant(self, table):
        pts = LandmarkSet(points=np.full((68, 2), 0.5), scheme="human68")
        out = merge_points(pts, table)
        np.testing.assert_allclose(out.points, 0.5, atol=1e-15)

    def test_singleton_groups_are_copies(self, table):
        face = random_face68(0)
        out = merge_points(face, table)
        for target, group in enumerate(table.sources):
            if len(group) == 1:
                np.testing.assert_array_equal(out.points[target], face.points[group[0]])

    def test_three_point_group_hand_computed(self):
        # group {(0,0), (0.3,0.6), (0.6,0)} averages to (0.3, 0.2)
        table = MergeTable(
            sources=tuple([(0, 1, 2)] + [(i,) for i in range(3, 28)]),
            regions=tuple(["face_contour"] * 26),
            aperture_pairs=(),
        )
        pts = np.zeros((68, 2))
        pts[1] = [0.3, 0.6]
        pts[2] = [0.6, 0.0]
        out = merge_points(LandmarkSet(points=pts, scheme="human68"), table)
        np.testing.assert_allclose(out.points[0], [0.3, 0.2], atol=1e-15)

    def test_wrong_scheme_rejected(self, table):
        with pytest.raises(ConfigError):
            merge_points(LandmarkSet(points=np.zeros((26, 2)), scheme="anime26"), table)

    @settings(max_examples=25, deadline=None)
    @given(seed_a=st.integers(0, 999), seed_b=st.integers(0, 999),
           alpha=st.floats(-2, 2), beta=st.floats(-2, 2))
    def test_linearity(self, seed_a, seed_b, alpha, beta):
        table = MergeTable.default()
        a = random_face68(seed_a).points
        b = random_face68(seed_b).points
        mixed = LandmarkSet(points=alpha * a + beta * b, scheme="human68")
        lhs = merge_points(mixed, table).points
        rhs = (alpha * merge_points(LandmarkSet(points=a, scheme="human68"), table).points
               + beta * merge_points(LandmarkSet(points=b, scheme="human68"), table).points)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


class TestRegionTransforms:
    def test_identity_everything_is_identity(self, table):
        pts = merge_points(random_face68(1), table)
        out = apply_region_transforms(pts, RegionTransformParams.identity(), table)
        np.testing.assert_allclose(out.points, pts.points, atol=1e-15)

    def test_eye_scale_doubles_aperture_only(self, table):
        pts = merge_points(random_face68(2), table)
        params = RegionTransformParams(matrices={"left_eye": 2.0 * np.eye(2)})
        out = apply_region_transforms(pts, params, table)
        left_idx = table.region_indices("left_eye")
        others = np.setdiff1d(np.arange(26), left_idx)
        np.testing.assert_allclose(out.points[others], pts.points[others], atol=1e-15)
        # left-eye aperture pair is (16, 18)
        before = aperture(pts, (16, 18))
        after = aperture(out, (16, 18))
        assert after == pytest.approx(2 * before, rel=1e-12)

    def test_global_similarity_scales_all_pairwise_distances(self, table):
        pts = merge_points(random_face68(3), table)
        s, theta = 1.7, 0.4
        params = RegionTransformParams(scale=s, rotation=theta, translation=np.array([0.3, -0.2]))
        out = apply_region_transforms(pts, params, table)
        d_in = np.linalg.norm(pts.points[:, None] - pts.points[None, :], axis=-1)
        d_out = np.linalg.norm(out.points[:, None] - out.points[None, :], axis=-1)
        np.testing.assert_allclose(d_out, s * d_in, atol=1e-12)

    def test_singular_matrix_rejected(self):
        with pytest.raises(ConfigError):
            RegionTransformParams(matrices={"mouth": np.zeros((2, 2))})


class TestRetarget:
    def test_closed_mouth_stays_closed(self, table, neutral_face):
        # collapse the inner mouth: lower inner-lip points onto the upper ones
        pts = neutral_face.points.copy()
        pts[65], pts[66], pts[67] = pts[63], pts[62], pts[61]
        face = LandmarkSet(points=pts, scheme="human68")
        params = RegionTransformParams(matrices={"mouth": np.array([[1.3, 0.2], [0.1, 0.8]])})
        out = retarget(face, table, params)
        assert aperture(out, (24, 25)) == pytest.approx(0.0, abs=1e-14)

    def test_translation_equivariance_with_identity_transforms(self, table):
        face = random_face68(4)
        shift = np.array([0.07, -0.03])
        shifted = LandmarkSet(points=face.points + shift, scheme="human68")
        base = retarget(face, table, RegionTransformParams.identity())
        moved = retarget(shifted, table, RegionTransformParams.identity())
        np.testing.assert_allclose(moved.points, base.points + shift, atol=1e-12)

    def test_affine_equivariance_with_identity_transforms(self, table):
        face = random_face68(5)
        m = np.array([[1.2, 0.3], [-0.1, 0.9]])
        b = np.array([0.05, 0.1])
        mapped = LandmarkSet(points=face.points @ m.T + b, scheme="human68")
        lhs = retarget(mapped, table, RegionTransformParams.identity()).points
        rhs = retarget(face, table, RegionTransformParams.identity()).points @ m.T + b
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_neutral_face_golden_output(self, table, neutral_face):
        out = retarget(neutral_face, table, RegionTransformParams.identity())
        with open(f"{GOLDEN}/neutral_face26_expected.json") as fh:
            expected = LandmarkSet.from_json(fh.read())
        np.testing.assert_allclose(out.points, expected.points, atol=1e-12)

    def test_zero_aperture_iff_input_closed(self, table):
        # open input stays open under a nonsingular matrix
        face = random_face68(6)
        params = RegionTransformParams(matrices={"left_eye": np.array([[0.5, 0.4], [0.2, 0.9]])})
        out = retarget(face, table, params)
        merged = merge_points(face, table)
        if aperture(merged, (16, 18)) > 1e-9:
            assert aperture(out, (16, 18)) > 1e-12


class TestIO:
    def test_landmark_json_round_trip(self):
        face = random_face68(7)
        back = LandmarkSet.from_json(face.to_json())
        np.testing.assert_array_equal(back.points, face.points)
        assert back.scheme == face.scheme

    def test_merge_table_validation(self):
        with pytest.raises(ConfigError):
            MergeTable(sources=tuple([(0,)] * 25), regions=tuple(["mouth"] * 25),
                       aperture_pairs=())
        with pytest.raises(ConfigError):
            MergeTable(sources=tuple([(99,)] + [(0,)] * 25), regions=tuple(["mouth"] * 26),
                       aperture_pairs=())

    def test_transform_toml_parsing(self, tmp_path):
        cfgfile = tmp_path / "t.toml"
        cfgfile.write_text(
            "[global]\nscale = 2.0\nrotation = 0.1\ntranslation = [0.1, 0.2]\n"
            "[region.mouth]\nmatrix = [[1.0, 0.0], [0.0, 2.0]]\noffset = [0.0, 0.01]\n"
        )
        params = RegionTransformParams.from_toml_file(cfgfile)
        assert params.scale == 2.0
        np.testing.assert_array_equal(params.matrix("mouth"), [[1, 0], [0, 2]])

    def test_unknown_toml_key_rejected(self, tmp_path):
        cfgfile = tmp_path / "bad.toml"
        cfgfile.write_text("[global]\nscale = 1.0\nshear = 0.5\n")
        with pytest.raises(ConfigError):
            RegionTransformParams.from_toml_file(cfgfile)

    def test_default_table_covers_all_points(self):
        table = MergeTable.default()
        used = sorted({s for grp in table.sources for s in grp})
        assert len(table.sources) == 26
        assert all(0 <= s < 68 for s in used)
        assert len(table.aperture_pairs) == 4
