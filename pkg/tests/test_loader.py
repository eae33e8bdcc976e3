"""
Tests for brep_fitter.loader module.

These tests verify:
1. XYZL and PLY clouds are read with labels, edge values and optional normals
2. Malformed clouds raise ParseError naming the row
3. B-rep documents read back into identical models
4. Gaussian scene files parse with their camera and reject bad records
"""

import io
import json
import logging

import numpy as np
import pytest

from brep_fitter.cloud import UNLABELED, LabeledPointCloud
from brep_fitter.exporter import encode_ply, format_brep
from brep_fitter.loader import ParseError, brep_from_document, parse_scene, read_brep, read_cloud, read_scene


def _stream(text: str) -> io.BytesIO:
    return io.BytesIO(text.encode("utf-8"))


class TestReadXyzl:
    """Test the XYZL text format."""

    def test_five_columns(self) -> None:
        """
        GIVEN rows of x y z patch_id edge with comments and blank lines
        WHEN reading
        THEN points, labels and edge values are returned without normals
        """
        text = "# header\n0 0 0 0 0.0\n\n1 0 0 0 1.0\n0 1 0 -1 0.5\n"

        cloud = read_cloud(_stream(text))

        assert len(cloud) == 3
        assert cloud.patch_id.tolist() == [0, 0, UNLABELED]
        assert cloud.edge_flag.tolist() == [0.0, 1.0, 0.5]
        assert cloud.normals is None

    def test_eight_columns_carry_normals(self) -> None:
        """
        GIVEN rows with normals
        WHEN reading
        THEN the normals are kept
        """
        cloud = read_cloud(_stream("0 0 0 0 0 1 2 0\n1 0 0 0 0 1 2 0\n"))

        np.testing.assert_array_equal(cloud.normals, [[0, 0, 1], [0, 0, 1]])
        assert cloud.patch_id.tolist() == [2, 2]

    @pytest.mark.parametrize(
        ("text", "row", "message"),
        [
            ("0 0 0 0\n", 1, "5 or 8 columns"),
            ("0 0 0 0 0\n0 0 0 0 0 1 0 0\n", 2, "like the first row"),
            ("0 0 0 0 0\n0 0 x 0 0\n", 2, "not a number"),
            ("0 0 nan 0 0\n", 1, "non-finite"),
            ("0 0 0 1.5 0\n", 1, "not an integer"),
        ],
    )
    def test_malformed_rows(self, text, row, message) -> None:
        """
        GIVEN a malformed row
        WHEN reading
        THEN ParseError names the row and the problem
        """
        with pytest.raises(ParseError, match=message) as info:
            read_cloud(_stream(text))

        assert info.value.row == row

    def test_edge_value_out_of_range(self) -> None:
        """
        GIVEN an edge value of 2
        WHEN reading
        THEN ParseError is raised
        """
        with pytest.raises(ParseError, match="edge_flag"):
            read_cloud(_stream("0 0 0 0 2.0\n"))

    def test_undecodable_bytes(self) -> None:
        """
        GIVEN bytes that are neither PLY nor UTF-8
        WHEN reading
        THEN ParseError is raised
        """
        with pytest.raises(ParseError, match="not UTF-8"):
            read_cloud(io.BytesIO(b"\xff\xfe\x00garbage"))


class TestReadPly:
    """Test PLY clouds."""

    @pytest.mark.parametrize("binary", [True, False])
    def test_reads_written_cloud(self, binary) -> None:
        """
        GIVEN a cloud encoded as PLY
        WHEN reading it back
        THEN every column is restored
        """
        cloud = LabeledPointCloud(
            points=[[0.1, 0.2, 0.3], [1.0, 2.0, 3.0]],
            patch_id=[4, UNLABELED],
            edge_flag=[0.0, 0.75],
            normals=[[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]],
        )

        back = read_cloud(io.BytesIO(encode_ply(cloud, binary=binary)))

        np.testing.assert_array_equal(back.points, cloud.points)
        np.testing.assert_array_equal(back.normals, cloud.normals)
        assert back.patch_id.tolist() == [4, UNLABELED]
        assert back.edge_flag.tolist() == [0.0, 0.75]

    def test_missing_label_property(self, caplog) -> None:
        """
        GIVEN a PLY file with only coordinates
        WHEN reading
        THEN every point is UNLABELED with edge 0 and a warning is logged
        """
        text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 1 1\n"

        with caplog.at_level(logging.WARNING):
            cloud = read_cloud(_stream(text))

        assert cloud.patch_id.tolist() == [UNLABELED, UNLABELED]
        assert cloud.edge_flag.tolist() == [0.0, 0.0]
        assert "no patch_id property" in caplog.text

    def test_malformed_header(self) -> None:
        """
        GIVEN a PLY file with a broken header
        WHEN reading
        THEN ParseError is raised
        """
        with pytest.raises(ParseError, match="PLY"):
            read_cloud(_stream("ply\nformat ascii 1.0\nelement vertex two\nend_header\n"))


class TestReadBrep:
    """Test B-rep documents."""

    def test_written_model_reads_back(self, fitted_cube, tmp_path) -> None:
        """
        GIVEN a fitted cube written as a document
        WHEN reading it back and writing again
        THEN the text is byte-identical
        """
        path = tmp_path / "cube.brep.json"
        path.write_text(format_brep(fitted_cube.model), encoding="utf-8")

        model = read_brep(path)

        assert len(model.faces) == 6
        assert format_brep(model) == path.read_text(encoding="utf-8")

    def test_unknown_format_tag(self) -> None:
        """
        GIVEN a document with another format tag
        WHEN rebuilding
        THEN ParseError is raised
        """
        with pytest.raises(ParseError, match="unsupported B-rep format"):
            brep_from_document({"format": "other/2", "corners": [], "edges": [], "faces": []})

    def test_invalid_json(self, tmp_path) -> None:
        """
        GIVEN a truncated JSON file
        WHEN reading
        THEN ParseError reports the line
        """
        path = tmp_path / "bad.json"
        path.write_text('{\n  "format": \n', encoding="utf-8")

        with pytest.raises(ParseError, match="invalid JSON") as info:
            read_brep(path)

        assert info.value.row is not None

    def test_dangling_corner_reference(self, fitted_cube, tmp_path) -> None:
        """
        GIVEN a document whose edge references a missing corner
        WHEN reading
        THEN ParseError lists the violation
        """
        document = json.loads(format_brep(fitted_cube.model))
        document["edges"][0]["endpoint_corners"] = [0, 99]
        path = tmp_path / "broken.json"
        path.write_text(json.dumps(document), encoding="utf-8")

        with pytest.raises(ParseError, match="missing corner 99"):
            read_brep(path)


class TestParseScene:
    """Test the Gaussian scene text format."""

    def test_camera_and_gaussians(self) -> None:
        """
        GIVEN a camera record and two Gaussians with 2-dim features
        WHEN parsing
        THEN the camera and both Gaussians are read
        """
        text = (
            "# scene\n"
            "camera 0.5 0.5 2 1 0 0 0 1 0 0 0 -1 8 8 0.125\n"
            "0.5 0.5 0 1 0 0 0 1 0 0.1 0.1 0.9 1 0 0 0.5 1 0\n"
            "0.2 0.2 0 1 0 0 0 1 0 0.2 0.1 0.5 0 1 0 0.0 0 1\n"
        )

        scene = parse_scene(text)

        assert scene.camera is not None
        assert scene.camera.width == 8
        assert len(scene.gaussians) == 2
        np.testing.assert_array_equal(scene.gaussians[1].feature, [0, 1])
        scene.validate()

    def test_scene_without_camera(self) -> None:
        """
        GIVEN Gaussians only
        WHEN parsing
        THEN the camera is None
        """
        scene = parse_scene("0.5 0.5 0 1 0 0 0 1 0 0.1 0.1 0.9 1 0 0 0.5\n")

        assert scene.camera is None
        assert len(scene.gaussians[0].feature) == 0

    @pytest.mark.parametrize(
        ("text", "message"),
        [
            ("0.5 0.5 0 1 0 0\n", "at least 16 values"),
            ("camera 1 2 3\n", "camera record needs 15"),
            ("camera 0.5 0.5 2 1 0 0 0 1 0 0 0 -1 8 8 0.125\ncamera 0.5 0.5 2 1 0 0 0 1 0 0 0 -1 8 8 0.125\n", "second camera"),
            ("0 0 0 1 0 0 0 1 0 1 1 1 1 1 1 1 5\n0 0 0 1 0 0 0 1 0 1 1 1 1 1 1 1 5 6\n", "feature dimension"),
            ("0 0 0 1 0 0 0 1 0 1 1 1 1 1 inf 1\n", "non-finite"),
        ],
    )
    def test_malformed_scene(self, text, message) -> None:
        """
        GIVEN a malformed scene
        WHEN parsing
        THEN ParseError is raised
        """
        with pytest.raises(ParseError, match=message):
            parse_scene(text)

    def test_reads_scene_file(self, tmp_path) -> None:
        """
        GIVEN a scene file on disk
        WHEN reading it
        THEN the path is used as the error source
        """
        path = tmp_path / "scene.txt"
        path.write_text("bad row\n", encoding="utf-8")

        with pytest.raises(ParseError) as info:
            read_scene(path)

        assert info.value.source == str(path)
        assert info.value.row == 1
