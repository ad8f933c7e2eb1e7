import logging
import os
from pathlib import Path
from typing import Optional, Union

import numpy as np
import trimesh as tm
from stl import Mode
from stl import mesh as stl_mesh

from geometry import TriMesh

logger = logging.getLogger(__name__)

MESH_FORMATS = ("obj", "stl-ascii", "stl-binary")
OBJ_DIGITS = 17
STL_HEADER_SIZE = 80
STL_COUNT_SIZE = 4
STL_RECORD_SIZE = 50

PathLike = Union[str, os.PathLike]


class MeshParseError(ValueError):
    """메쉬 파일 파싱 실패. OBJ 는 line, 바이너리 STL 은 byte offset 을 담는다."""

    def __init__(self, message: str, line: Optional[int] = None, offset: Optional[int] = None):
        location = []
        if line is not None:
            location.append(f"line {line}")
        if offset is not None:
            location.append(f"offset {offset}")
        super().__init__(f"{message} ({', '.join(location)})" if location else message)
        self.line = line
        self.offset = offset


def _to_trimesh(mesh: TriMesh) -> tm.Trimesh:
    return tm.Trimesh(vertices=mesh.vertices, faces=mesh.faces, process=False)


def _from_trimesh(mesh: tm.Trimesh) -> TriMesh:
    return TriMesh(np.asarray(mesh.vertices, dtype=np.float64), np.asarray(mesh.faces, dtype=np.int64))


def _write_obj(mesh: TriMesh, path: Path) -> None:
    text = tm.exchange.obj.export_obj(
        _to_trimesh(mesh), include_normals=False, include_color=False, include_texture=False, digits=OBJ_DIGITS
    )
    path.write_text(text, encoding="utf-8")


def _write_stl(mesh: TriMesh, path: Path, mode: Mode) -> None:
    data = stl_mesh.Mesh(np.zeros(mesh.n_faces, dtype=stl_mesh.Mesh.dtype))
    data.vectors[:] = mesh.vertices[mesh.faces]
    data.save(str(path), mode=mode)


def export_mesh(mesh: TriMesh, fmt: str, path: PathLike) -> Path:
    """메쉬를 OBJ / STL(ascii|binary) 로 저장."""
    if fmt not in MESH_FORMATS:
        raise ValueError(f"unsupported mesh format '{fmt}', expected one of {MESH_FORMATS}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "obj":
        _write_obj(mesh, path)
    else:
        _write_stl(mesh, path, Mode.ASCII if fmt == "stl-ascii" else Mode.BINARY)
    logger.info(f"💾 메쉬 저장 완료: {path} ({fmt}, {mesh.n_faces} faces)")
    return path


def _check_obj_index(token: str, n_vertices: int, line_no: int) -> None:
    raw = token.split("/")[0]
    try:
        index = int(raw)
    except ValueError:
        raise MeshParseError(f"invalid face index '{token}'", line=line_no) from None
    # OBJ 는 1 부터 시작, 음수는 지금까지 나온 정점 기준 상대 인덱스
    resolved = index - 1 if index > 0 else n_vertices + index
    if index == 0 or not 0 <= resolved < n_vertices:
        raise MeshParseError(f"face index {index} out of range (have {n_vertices} vertices)", line=line_no)


def _check_obj(path: Path) -> None:
    """trimesh 에 넘기기 전에 v / f 레코드를 줄 단위로 검사한다."""
    n_vertices = 0
    n_faces = 0
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            tokens = line.split("#", 1)[0].split()
            if not tokens:
                continue
            record, args = tokens[0], tokens[1:]
            if record == "v":
                if len(args) < 3:
                    raise MeshParseError("vertex record needs 3 coordinates", line=line_no)
                try:
                    np.array(args[:3], dtype=float)
                except ValueError:
                    raise MeshParseError(f"invalid vertex coordinates {args[:3]}", line=line_no) from None
                n_vertices += 1
            elif record == "f":
                if len(args) < 3:
                    raise MeshParseError("face record needs at least 3 indices", line=line_no)
                for token in args:
                    _check_obj_index(token, n_vertices, line_no)
                n_faces += 1
    if not n_faces:
        raise MeshParseError("no faces found in OBJ file")


def _read_obj(path: Path) -> TriMesh:
    _check_obj(path)
    try:
        mesh = tm.load_mesh(str(path), file_type="obj", process=False, maintain_order=True)
    except Exception as e:
        raise MeshParseError(f"OBJ parse failed: {e}") from e
    if not isinstance(mesh, tm.Trimesh):
        mesh = mesh.dump().sum()
    return _from_trimesh(mesh)


def _weld(vectors: np.ndarray) -> TriMesh:
    """STL 삼각형 목록 -> 인덱스 메쉬 (같은 좌표의 정점을 하나로)."""
    points = vectors.reshape(-1, 3).astype(np.float64)
    soup = tm.Trimesh(vertices=points, faces=np.arange(len(points)).reshape(-1, 3), process=False)
    soup.merge_vertices()
    return _from_trimesh(soup)


def _check_binary_stl_size(path: Path) -> None:
    with open(path, "rb") as f:
        head = f.read(5)
        if head.lower().startswith(b"solid"):
            return
        f.seek(STL_HEADER_SIZE)
        count_bytes = f.read(STL_COUNT_SIZE)
    if len(count_bytes) != STL_COUNT_SIZE:
        raise MeshParseError("truncated binary STL header", offset=STL_HEADER_SIZE)
    count = int(np.frombuffer(count_bytes, dtype="<u4")[0])
    expected = STL_HEADER_SIZE + STL_COUNT_SIZE + STL_RECORD_SIZE * count
    actual = path.stat().st_size
    if actual < expected:
        raise MeshParseError(f"binary STL declares {count} triangles but file has {actual} bytes", offset=actual)


def _read_stl(path: Path) -> TriMesh:
    _check_binary_stl_size(path)
    try:
        data = stl_mesh.Mesh.from_file(str(path))
    except Exception as e:
        raise MeshParseError(f"STL parse failed: {e}") from e
    if len(data.vectors) == 0:
        raise MeshParseError("no triangles found in STL file")
    return _weld(np.asarray(data.vectors))


def import_mesh(path: PathLike) -> TriMesh:
    """확장자(.obj / .stl) 로 형식을 판단해 메쉬를 읽는다. STL 의 ascii/binary 는 자동 판별."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        mesh = _read_obj(path)
    elif suffix == ".stl":
        mesh = _read_stl(path)
    else:
        raise MeshParseError(f"unsupported mesh file extension '{path.suffix}'")
    logger.info(f"📂 메쉬 로드 완료: {path} ({mesh.n_vertices} vertices, {mesh.n_faces} faces)")
    return mesh
