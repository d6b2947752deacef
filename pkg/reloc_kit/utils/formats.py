"""Text artifact codecs: CSV matrices, TUM trajectories, intrinsics, g2o graphs."""

from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from reloc_kit.core.errors import ParseError
from reloc_kit.models.geometry import CameraIntrinsics, Pose
from reloc_kit.models.pose_graph import EdgeKind, PoseGraphEdge, PoseGraphProblem, Trajectory
from reloc_kit.services.geometry import quaternion_from_rotation, rotation_from_quaternion

PathLike = Union[str, Path]

# upper-triangular positions of the diagonal in a 6×6 g2o information block
_G2O_DIAGONAL = (0, 6, 11, 15, 18, 20)


def fmt(value: float) -> str:
    """Nine significant digits, the precision of every CSV artifact."""
    return f"{float(value):.9g}"


def fmt_exact(value: float) -> str:
    """Shortest repr that reads back to the same float."""
    return repr(float(value))


def _data_lines(path: Path) -> Iterator[Tuple[int, str]]:
    """(1-based line number, stripped text) for non-blank, non-comment lines."""
    with path.open("r", encoding="utf-8") as handle:
        for number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield number, line


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _floats(path: Path, number: int, fields: Sequence[str]) -> List[float]:
    try:
        values = [float(field) for field in fields]
    except ValueError as exc:
        raise ParseError(path, number, f"non-numeric field ({exc})") from exc
    if not all(np.isfinite(values)):
        raise ParseError(path, number, "non-finite value")
    return values


# Matrices -------------------------------------------------------------------


def write_matrix_csv(
    path: PathLike, values: np.ndarray, header: Optional[str] = None
) -> None:
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    lines = [f"# {header}"] if header else []
    lines.extend(",".join(fmt(x) for x in row) for row in values)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_matrix_csv(path: PathLike) -> np.ndarray:
    path = Path(path)
    rows = []
    for number, line in _data_lines(path):
        row = _floats(path, number, line.split(","))
        if rows and len(row) != len(rows[0]):
            raise ParseError(path, number, f"expected {len(rows[0])} columns, got {len(row)}")
        rows.append(row)
    if not rows:
        raise ParseError(path, 1, "empty matrix")
    return np.array(rows)


def write_indexed_rows(
    path: PathLike, header: Sequence[str], rows: Sequence[Sequence[float]]
) -> None:
    """CSV with a header row; integer columns are written without decimals."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(
            ",".join(str(x) if isinstance(x, (int, np.integer)) else fmt(x) for x in row)
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_indexed_rows(path: PathLike, columns: int) -> List[List[float]]:
    path = Path(path)
    rows = []
    for number, line in _data_lines(path):
        fields = line.split(",")
        if number == 1 and not _is_number(fields[0]):
            continue  # header
        if len(fields) != columns:
            raise ParseError(path, number, f"expected {columns} fields, got {len(fields)}")
        rows.append(_floats(path, number, fields))
    return rows


# Trajectories -------------------------------------------------------------------


def pose_fields(pose: Pose) -> List[str]:
    """tx ty tz qx qy qz qw."""
    quat = quaternion_from_rotation(pose.rotation)
    return [fmt_exact(x) for x in pose.translation] + [fmt_exact(x) for x in quat]


def pose_from_fields(values: Sequence[float]) -> Pose:
    return Pose(rotation_from_quaternion(np.asarray(values[3:7])), np.asarray(values[:3]))


def write_tum(path: PathLike, trajectory: Trajectory) -> None:
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    for stamp, pose in zip(trajectory.timestamps, trajectory.poses):
        lines.append(" ".join([fmt_exact(stamp)] + pose_fields(pose)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_tum(path: PathLike) -> Trajectory:
    path = Path(path)
    stamps, poses = [], []
    for number, line in _data_lines(path):
        fields = line.split()
        if len(fields) != 8:
            raise ParseError(path, number, f"expected 8 fields, got {len(fields)}")
        values = _floats(path, number, fields)
        quat = np.asarray(values[4:8])
        if np.linalg.norm(quat) < 1e-12:
            raise ParseError(path, number, "zero quaternion")
        stamps.append(values[0])
        poses.append(pose_from_fields(values[1:]))
    return Trajectory(np.array(stamps), tuple(poses))


# Intrinsics ---------------------------------------------------------------------


def write_intrinsics(path: PathLike, k: CameraIntrinsics) -> None:
    fields = [fmt_exact(k.fx), fmt_exact(k.fy), fmt_exact(k.cx), fmt_exact(k.cy)]
    Path(path).write_text(
        " ".join(fields + [str(k.width), str(k.height)]) + "\n", encoding="utf-8"
    )


def read_intrinsics(path: PathLike) -> CameraIntrinsics:
    """One line: fx fy cx cy width height."""
    path = Path(path)
    lines = list(_data_lines(path))
    if len(lines) != 1:
        raise ParseError(path, lines[1][0] if len(lines) > 1 else 1, "expected one line")
    number, line = lines[0]
    fields = line.split()
    if len(fields) != 6:
        raise ParseError(path, number, f"expected 6 fields, got {len(fields)}")
    values = _floats(path, number, fields)
    if not (values[4].is_integer() and values[5].is_integer()):
        raise ParseError(path, number, "width and height must be integers")
    try:
        return CameraIntrinsics(
            fx=values[0],
            fy=values[1],
            cx=values[2],
            cy=values[3],
            width=int(values[4]),
            height=int(values[5]),
        )
    except ValidationError as exc:
        raise ParseError(path, number, f"invalid intrinsics: {exc.errors()[0]['msg']}") from exc


# g2o pose graphs -----------------------------------------------------------------


def write_g2o(path: PathLike, problem: PoseGraphProblem) -> None:
    """VERTEX_SE3:QUAT / EDGE_SE3:QUAT lines plus FIX for the anchor."""
    lines = []
    for index, pose in enumerate(problem.poses):
        lines.append(" ".join(["VERTEX_SE3:QUAT", str(index)] + pose_fields(pose)))
    for edge in problem.edges:
        info = ["0"] * 21
        for position in _G2O_DIAGONAL:
            info[position] = fmt_exact(edge.info_scale)
        lines.append(
            " ".join(
                ["EDGE_SE3:QUAT", str(edge.i), str(edge.j)]
                + pose_fields(edge.measured)
                + info
            )
        )
    lines.append(f"FIX {problem.anchor}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_g2o(path: PathLike) -> PoseGraphProblem:
    """Parse a g2o SE3 graph; edges between consecutive vertices count as odometry.

    Only isotropic information blocks are representable; the mean of the six
    diagonal entries becomes the edge's info_scale.
    """
    path = Path(path)
    vertices: dict[int, Pose] = {}
    edges: List[PoseGraphEdge] = []
    anchor = 0
    for number, line in _data_lines(path):
        tag, *fields = line.split()
        if tag == "VERTEX_SE3:QUAT":
            if len(fields) != 8:
                raise ParseError(path, number, f"vertex needs 8 fields, got {len(fields)}")
            values = _floats(path, number, fields)
            vertices[int(values[0])] = pose_from_fields(values[1:])
        elif tag == "EDGE_SE3:QUAT":
            if len(fields) != 30:
                raise ParseError(path, number, f"edge needs 30 fields, got {len(fields)}")
            values = _floats(path, number, fields)
            i, j = int(values[0]), int(values[1])
            info = np.asarray(values[9:])
            edges.append(
                PoseGraphEdge(
                    i=i,
                    j=j,
                    measured=pose_from_fields(values[2:9]),
                    info_scale=float(np.mean(info[list(_G2O_DIAGONAL)])),
                    kind=EdgeKind.ODOMETRY if j == i + 1 else EdgeKind.LOOP,
                )
            )
        elif tag == "FIX":
            anchor = int(_floats(path, number, fields[:1])[0])
        else:
            raise ParseError(path, number, f"unknown record {tag!r}")
    ids = sorted(vertices)
    if ids != list(range(len(ids))):
        raise ParseError(path, 1, "vertex ids must be 0..n-1")
    return PoseGraphProblem(tuple(vertices[i] for i in ids), tuple(edges), anchor)
