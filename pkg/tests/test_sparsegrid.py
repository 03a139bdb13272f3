import numpy as np
import pytest

from artikit.sparsegrid import (
    PartVoxelSet,
    SparseOccupancy,
    TokenSequence,
    dense_grid_layout,
    encode_coords,
    flatten_tokenize,
    occupancy_from_logits,
    positional_encoding,
    voxelize_points,
)


class TestVoxelize:
    def test_floor_rule(self):
        occ = voxelize_points([[0.5, 0.5, 0.5]], 2)
        assert occ.to_set() == {(1, 1, 1)}

    def test_cube_corners(self):
        # Oracle: enumerate by hand; 1.0 clamps to the last cell.
        corners = [[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)]
        occ = voxelize_points(corners, 2)
        assert occ.count == 8
        assert occ.to_set() == {(x, y, z) for x in (0, 1) for y in (0, 1) for z in (0, 1)}

    def test_duplicates_collapse(self):
        occ = voxelize_points([[0.1, 0.1, 0.1]] * 5, 4)
        assert occ.count == 1

    def test_outside_points_dropped(self, caplog):
        with caplog.at_level("WARNING"):
            occ = voxelize_points([[0.5, 0.5, 0.5], [1.5, 0, 0]], 2)
        assert occ.count == 1
        assert "dropped 1" in caplog.text

    def test_strict_mode_raises(self):
        with pytest.raises(ValueError, match="outside"):
            voxelize_points([[2, 0, 0]], 2, strict=True)

    def test_center_roundtrip_identity(self):
        rng = np.random.default_rng(0)
        for res in (2, 8, 16):
            cells = np.unique(rng.integers(0, res, size=(50, 3)), axis=0)
            occ = SparseOccupancy(res, cells)
            again = voxelize_points(occ.centers(), res)
            assert again.to_set() == occ.to_set()


class TestPositionalEncoding:
    def test_zero_coord(self):
        enc = positional_encoding((0, 0, 0), 12)
        per_axis = enc.reshape(3, 4)
        np.testing.assert_allclose(per_axis[:, :2], 0.0)   # sin block
        np.testing.assert_allclose(per_axis[:, 2:], 1.0)   # cos block

    def test_distinct_over_full_grid(self):
        res = 16
        seen = set()
        for x in range(res):
            for y in range(res):
                for z in range(res):
                    seen.add(tuple(np.round(positional_encoding((x, y, z), 12, res), 12)))
        assert len(seen) == res ** 3

    def test_dim_must_divide_six(self):
        with pytest.raises(ValueError, match="divisible by 6"):
            positional_encoding((0, 0, 0), 10)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(1)
        coords = rng.integers(0, 16, size=(20, 3))
        batch = encode_coords(coords, 24, 16)
        for row, c in zip(batch, coords):
            np.testing.assert_allclose(row, positional_encoding(tuple(c), 24, 16), atol=1e-15)


class TestFlattenTokenize:
    def feat(self, dim):
        return lambda coord: np.full(dim, float(sum(coord)))

    def test_single_voxel(self):
        pv = PartVoxelSet((SparseOccupancy(4, [[1, 2, 3]]),))
        seq = flatten_tokenize(pv, self.feat(12), 12)
        assert seq.length == 1
        assert seq.part_ids.tolist() == [0]

    def test_two_parts_concatenated(self):
        pv = PartVoxelSet((
            SparseOccupancy(4, [[0, 0, 0], [1, 0, 0], [2, 0, 0]]),
            SparseOccupancy(4, [[0, 1, 0], [1, 1, 0], [2, 1, 0], [3, 1, 0], [0, 2, 0]]),
        ))
        seq = flatten_tokenize(pv, self.feat(12), 12)
        assert seq.length == 8
        assert seq.part_ids.tolist() == [0, 0, 0, 1, 1, 1, 1, 1]

    def test_insertion_order_independence(self):
        cells = [[3, 1, 2], [0, 0, 0], [1, 3, 1], [2, 2, 2]]
        a = PartVoxelSet((SparseOccupancy(4, cells),))
        b = PartVoxelSet((SparseOccupancy(4, cells[::-1]),))
        sa = flatten_tokenize(a, self.feat(12), 12)
        sb = flatten_tokenize(b, self.feat(12), 12)
        np.testing.assert_array_equal(sa.coords, sb.coords)
        np.testing.assert_array_equal(sa.tokens, sb.tokens)

    def test_raster_order_x_fastest(self):
        pv = PartVoxelSet((SparseOccupancy(2, [[1, 1, 1], [0, 0, 0], [1, 0, 0], [0, 1, 0]]),))
        seq = flatten_tokenize(pv, self.feat(12), 12)
        assert seq.coords.tolist() == [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 1]]

    def test_bijection_coord_token(self):
        pv = PartVoxelSet((SparseOccupancy(4, [[0, 0, 0], [1, 0, 0]]),
                           SparseOccupancy(4, [[2, 2, 2]])))
        seq = flatten_tokenize(pv, self.feat(12), 12)
        pairs = {(int(p), tuple(c)) for p, c in zip(seq.part_ids, seq.coords.tolist())}
        assert len(pairs) == seq.length == 3

    def test_token_is_feat_plus_encoding(self):
        pv = PartVoxelSet((SparseOccupancy(4, [[1, 2, 3]]),))
        seq = flatten_tokenize(pv, self.feat(12), 12)
        expected = np.full(12, 6.0) + positional_encoding((1, 2, 3), 12, 4)
        np.testing.assert_allclose(seq.tokens[0], expected, atol=1e-15)

    def test_bad_dim(self):
        pv = PartVoxelSet((SparseOccupancy(4, [[0, 0, 0]]),))
        with pytest.raises(ValueError, match="divisible by 6"):
            flatten_tokenize(pv, self.feat(10), 10)


class TestPartVoxelSet:
    def test_overlap_first_part_wins(self, caplog):
        with caplog.at_level("WARNING"):
            pv = PartVoxelSet((SparseOccupancy(4, [[1, 1, 1]]),
                               SparseOccupancy(4, [[1, 1, 1], [2, 2, 2]])))
        assert pv.parts[0].to_set() == {(1, 1, 1)}
        assert pv.parts[1].to_set() == {(2, 2, 2)}
        assert "claimed by several parts" in caplog.text

    def test_resolution_mismatch(self):
        with pytest.raises(ValueError, match="resolution"):
            PartVoxelSet((SparseOccupancy(4, [[0, 0, 0]]), SparseOccupancy(8, [[0, 0, 0]])))

    def test_upsample_factor2(self):
        pv = PartVoxelSet((SparseOccupancy(2, [[1, 0, 1]]),))
        fine = pv.upsample(2)
        assert fine.resolution == 4
        assert fine.parts[0].count == 8
        assert (2, 0, 2) in fine.parts[0].to_set()
        assert (3, 1, 3) in fine.parts[0].to_set()


class TestTokenSequence:
    def test_ungrouped_ids_rejected(self):
        with pytest.raises(ValueError, match="grouped"):
            TokenSequence(np.zeros((2, 6)), np.zeros((2, 3), dtype=int), [1, 0])

    def test_part_slices(self):
        seq = TokenSequence(np.zeros((5, 6)), np.zeros((5, 3), dtype=int), [0, 0, 2, 2, 2])
        assert seq.part_slices() == [(0, slice(0, 2)), (2, slice(2, 5))]


def test_dense_layout_and_threshold_monotonicity():
    # Per-part superset relation on a single-part layout (no ownership ties).
    layout = dense_grid_layout(1, 4, 6)
    assert layout.length == 64
    rng = np.random.default_rng(5)
    logits = rng.normal(size=(layout.length, 1))
    low = occupancy_from_logits(layout, logits, 4, threshold=0.0)
    high = occupancy_from_logits(layout, logits, 4, threshold=0.1)
    assert high.parts[0].to_set() <= low.parts[0].to_set()

    # With overlapping dense layouts the tie rule may move a cell between
    # parts, but the occupied union stays monotone.
    layout2 = dense_grid_layout(2, 4, 6)
    logits2 = rng.normal(size=(layout2.length, 1))
    low2 = occupancy_from_logits(layout2, logits2, 4, threshold=0.0)
    high2 = occupancy_from_logits(layout2, logits2, 4, threshold=0.1)
    union = lambda pv: set().union(*(p.to_set() for p in pv.parts))
    assert union(high2) <= union(low2)
