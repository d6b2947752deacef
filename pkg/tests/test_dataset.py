import numpy as np
import pytest

from reloc_kit.core.errors import (
    ArtifactMissing,
    IntrinsicsMismatch,
    MissingDepth,
    ParamsFormatError,
    ParseError,
)
from reloc_kit.models.pose_graph import EdgeKind, PoseGraphEdge, PoseGraphProblem, Trajectory
from reloc_kit.services.dataset import load_dataset
from reloc_kit.services.geometry import relative
from reloc_kit.utils.formats import (
    read_g2o,
    read_indexed_rows,
    read_intrinsics,
    read_matrix_csv,
    read_tum,
    write_g2o,
    write_indexed_rows,
    write_matrix_csv,
    write_tum,
)
from reloc_kit.utils.netpbm import heatmap_image, read_pgm, read_ppm, write_pgm, write_ppm
from reloc_kit.utils.params import read_params, split_flat, write_params
from tests.helpers import random_pose


@pytest.mark.unit
class TestDataset:
    """On-disk dataset layout."""

    def test_save_load_is_lossless(self, dataset_dir, small_scene):
        """Depth on the millimetre grid, RGB and poses survive a save/load cycle."""
        keyframes, trajectory, k = load_dataset(dataset_dir)
        assert k == small_scene.intrinsics
        assert len(keyframes) == len(small_scene.keyframes)
        for loaded, original in zip(keyframes, small_scene.keyframes):
            np.testing.assert_array_equal(loaded.rgb, original.rgb)
            np.testing.assert_allclose(loaded.depth.values, original.depth.values, atol=1e-12)
            assert loaded.timestamp == original.timestamp
        for loaded, original in zip(trajectory.poses, small_scene.trajectory):
            assert loaded.allclose(original, atol=1e-12)

    def test_missing_directory(self, tmp_path):
        """A missing dataset directory names the path."""
        with pytest.raises(ArtifactMissing) as excinfo:
            load_dataset(tmp_path / "nope")
        assert "nope" in str(excinfo.value)

    def test_missing_depth_image(self, dataset_dir):
        """Fewer depth images than poses is an error."""
        (dataset_dir / "depth" / "000003.pgm").unlink()
        with pytest.raises(MissingDepth):
            load_dataset(dataset_dir)

    def test_intrinsics_size_mismatch(self, dataset_dir):
        """Images must match the declared resolution."""
        (dataset_dir / "intrinsics.txt").write_text("20 20 10 8 20 16\n")
        with pytest.raises(IntrinsicsMismatch):
            load_dataset(dataset_dir)

    def test_bad_pose_line_reports_line_number(self, dataset_dir):
        """A malformed TUM line is reported with its line number."""
        path = dataset_dir / "poses.txt"
        lines = path.read_text().splitlines()
        lines[2] = "0.1 1 2 3"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError) as excinfo:
            load_dataset(dataset_dir)
        assert excinfo.value.line == 3


@pytest.mark.unit
class TestTextFormats:
    """CSV, TUM, intrinsics and g2o codecs."""

    def test_matrix_csv_round_trip(self, tmp_path, rng):
        """Nine significant digits are kept."""
        values = rng.random((4, 4))
        write_matrix_csv(tmp_path / "m.csv", values, header="similarity")
        np.testing.assert_allclose(read_matrix_csv(tmp_path / "m.csv"), values, rtol=1e-8)

    def test_ragged_matrix_is_rejected(self, tmp_path):
        """Rows must have equal length."""
        (tmp_path / "m.csv").write_text("1,2\n3\n")
        with pytest.raises(ParseError) as excinfo:
            read_matrix_csv(tmp_path / "m.csv")
        assert excinfo.value.line == 2

    def test_indexed_rows_skip_header(self, tmp_path):
        """The header row is skipped; integers are written without decimals."""
        write_indexed_rows(tmp_path / "r.csv", ["query_idx", "ref_idx", "score"], [[3, 1, 0.5]])
        assert (tmp_path / "r.csv").read_text().splitlines()[1] == "3,1,0.5"
        assert read_indexed_rows(tmp_path / "r.csv", 3) == [[3.0, 1.0, 0.5]]

    def test_tum_round_trip_is_exact(self, tmp_path, rng):
        """Poses are written with repr precision."""
        poses = tuple(random_pose(rng, 3.0, 2.0) for _ in range(5))
        write_tum(tmp_path / "t.txt", Trajectory.from_poses(poses))
        loaded = read_tum(tmp_path / "t.txt")
        np.testing.assert_array_equal(loaded.timestamps, np.round(np.arange(5) * 0.1, 6))
        for a, b in zip(loaded.poses, poses):
            assert a.allclose(b, atol=1e-14)

    def test_intrinsics_need_integer_size(self, tmp_path):
        """Width and height are integers."""
        (tmp_path / "k.txt").write_text("10 10 5 5 10.5 10\n")
        with pytest.raises(ParseError):
            read_intrinsics(tmp_path / "k.txt")

    def test_g2o_round_trip(self, tmp_path, rng):
        """Vertices, edges, isotropic information and the anchor survive."""
        poses = tuple(random_pose(rng) for _ in range(4))
        edges = (
            PoseGraphEdge(0, 1, relative(poses[0], poses[1]), 1.0, EdgeKind.ODOMETRY),
            PoseGraphEdge(1, 2, relative(poses[1], poses[2]), 1.0, EdgeKind.ODOMETRY),
            PoseGraphEdge(2, 3, relative(poses[2], poses[3]), 1.0, EdgeKind.ODOMETRY),
            PoseGraphEdge(3, 0, relative(poses[3], poses[0]), 0.75, EdgeKind.LOOP),
        )
        write_g2o(tmp_path / "p.g2o", PoseGraphProblem(poses, edges, anchor=1))
        loaded = read_g2o(tmp_path / "p.g2o")
        assert loaded.anchor == 1
        assert [e.kind for e in loaded.edges] == [e.kind for e in edges]
        assert loaded.edges[3].info_scale == 0.75
        for a, b in zip(loaded.poses, poses):
            assert a.allclose(b, atol=1e-14)

    def test_g2o_unknown_record(self, tmp_path):
        """Records other than vertices, edges and FIX are rejected."""
        (tmp_path / "p.g2o").write_text("VERTEX_XY 0 1 2\n")
        with pytest.raises(ParseError):
            read_g2o(tmp_path / "p.g2o")


@pytest.mark.unit
class TestBinaryFormats:
    """Netpbm images and parameter files."""

    def test_pgm_16_bit_round_trip(self, tmp_path, rng):
        """16-bit depth images are binary PGM, big-endian and lossless."""
        image = rng.integers(0, 65536, size=(6, 7)).astype(np.uint16)
        write_pgm(tmp_path / "d.pgm", image)
        data = (tmp_path / "d.pgm").read_bytes()
        assert data.startswith(b"P5")
        assert data[-image.nbytes :] == image.astype(">u2").tobytes()
        np.testing.assert_array_equal(read_pgm(tmp_path / "d.pgm"), image)

    def test_ppm_round_trip(self, tmp_path, rng):
        """8-bit RGB images are lossless."""
        image = rng.integers(0, 256, size=(5, 4, 3)).astype(np.uint8)
        write_ppm(tmp_path / "c.ppm", image)
        np.testing.assert_array_equal(read_ppm(tmp_path / "c.ppm"), image)

    def test_ppm_samples_are_stored_rgb(self, tmp_path):
        """Pixel bytes on disk are in R, G, B order."""
        image = np.array([[[10, 20, 30], [40, 50, 60]]], dtype=np.uint8)
        write_ppm(tmp_path / "c.ppm", image)
        data = (tmp_path / "c.ppm").read_bytes()
        assert data.startswith(b"P6")
        assert data[-6:] == bytes([10, 20, 30, 40, 50, 60])

    def test_missing_image(self, tmp_path):
        """An absent image file is a parse error naming the path."""
        with pytest.raises(ParseError) as excinfo:
            read_ppm(tmp_path / "none.ppm")
        assert "none.ppm" in str(excinfo.value)

    def test_truncated_pgm(self, tmp_path):
        """Missing sample bytes are a parse error."""
        (tmp_path / "d.pgm").write_bytes(b"P5\n4 4\n255\n\x00\x01")
        with pytest.raises(ParseError):
            read_pgm(tmp_path / "d.pgm")

    def test_heatmap_levels(self):
        """Scores map to round(255·s)."""
        np.testing.assert_array_equal(
            heatmap_image(np.array([[0.0, 0.5], [1.0, 0.25]])), [[0, 128], [255, 64]]
        )

    def test_params_round_trip_float32(self, tmp_path, rng):
        """Parameters are stored as float32 after the magic and dims."""
        arrays = [rng.normal(size=(2, 3)), rng.normal(size=3)]
        write_params(tmp_path / "p.bin", b"TEST", [2, 3], arrays)
        dims, values = read_params(tmp_path / "p.bin", b"TEST")
        assert dims == [2, 3]
        restored = split_flat(values, [(2, 3), (3,)], tmp_path / "p.bin")
        for a, b in zip(restored, arrays):
            np.testing.assert_array_equal(a, b.astype(np.float32).astype(np.float64))

    def test_params_bad_magic(self, tmp_path):
        """Files of another kind are rejected."""
        write_params(tmp_path / "p.bin", b"TEST", [1], [np.zeros(1)])
        with pytest.raises(ParamsFormatError):
            read_params(tmp_path / "p.bin", b"S3EP")

    def test_params_size_mismatch(self, tmp_path):
        """The parameter count must match the declared shapes."""
        with pytest.raises(ParamsFormatError):
            split_flat(np.zeros(5), [(2, 3)], tmp_path / "p.bin")
