"""Plain-text file formats: XYZ point lists, ASCII PLY and model checkpoints."""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError, ParseError
from .geometry import PointCloud
from .network import GradientFieldModel, ModelConfig
from .shapes import TriangleMesh

CHECKPOINT_MAGIC = "GFRS"
CHECKPOINT_VERSION = 1


def _fmt(values, digits):
    return " ".join(f"{v:.{digits}g}" for v in values)


# ---------------------------------------------------------------- XYZ


def read_xyz(path) -> PointCloud:
    """One ``x y z`` triple per line; blank lines and ``#`` comments are skipped."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            fields = text.split()
            if len(fields) != 3:
                raise ParseError(f"{path}: expected 3 values, got {len(fields)}", line=lineno)
            try:
                rows.append([float(f) for f in fields])
            except ValueError:
                raise ParseError(f"{path}: non-numeric value in {text!r}", line=lineno) from None
    if not rows:
        raise InvalidInputError(f"{path}: no points")
    return PointCloud(np.array(rows))


def write_xyz(path, cloud):
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    with open(path, "w") as fh:
        for p in pts:
            fh.write(_fmt(p, 9) + "\n")


# ---------------------------------------------------------------- PLY


class _Lines:
    """Line reader over raw bytes that remembers the byte offset of each line."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def next(self):
        if self.pos >= len(self.data):
            raise ParseError("unexpected end of file", offset=self.pos)
        start = self.pos
        end = self.data.find(b"\n", start)
        end = len(self.data) if end < 0 else end
        self.pos = end + 1
        return start, self.data[start:end].decode("ascii", errors="replace").strip()


def _parse_header(lines: _Lines):
    off, magic = lines.next()
    if magic != "ply":
        raise ParseError("missing 'ply' magic", offset=off)
    elements = []
    while True:
        off, line = lines.next()
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        tok = line.split()
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] != "ascii":
                if len(tok) >= 2 and tok[1].startswith("binary"):
                    raise ParseError("binary PLY unsupported", offset=off)
                raise ParseError(f"unsupported PLY format {line!r}", offset=off)
        elif tok[0] == "element":
            if len(tok) != 3:
                raise ParseError(f"malformed element line {line!r}", offset=off)
            try:
                count = int(tok[2])
            except ValueError:
                raise ParseError(f"bad element count {tok[2]!r}", offset=off) from None
            elements.append({"name": tok[1], "count": count, "props": [], "offset": off})
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before any element", offset=off)
            if tok[1] == "list":
                if len(tok) != 5:
                    raise ParseError(f"malformed list property {line!r}", offset=off)
                elements[-1]["props"].append(("list", tok[4]))
            else:
                if len(tok) != 3:
                    raise ParseError(f"malformed property {line!r}", offset=off)
                elements[-1]["props"].append((tok[1], tok[2]))
        elif tok[0] == "end_header":
            return elements
        else:
            raise ParseError(f"unknown header keyword {tok[0]!r}", offset=off)


def read_ply(path):
    """Load an ASCII PLY; returns a TriangleMesh when faces are present, else a PointCloud."""
    with open(path, "rb") as fh:
        lines = _Lines(fh.read())
    elements = _parse_header(lines)
    verts, faces = None, None
    for el in elements:
        names = [p[1] for p in el["props"]]
        if el["name"] == "vertex":
            try:
                cols = [names.index(a) for a in ("x", "y", "z")]
            except ValueError:
                raise ParseError("vertex element needs x, y, z properties", offset=el["offset"]) from None
            if any(p[0] == "list" for p in el["props"]):
                raise ParseError("list properties on vertices unsupported", offset=el["offset"])
            verts = np.empty((el["count"], 3))
            for i in range(el["count"]):
                off, line = lines.next()
                tok = line.split()
                if len(tok) != len(names):
                    raise ParseError(f"vertex {i}: expected {len(names)} values, got {len(tok)}", offset=off)
                try:
                    verts[i] = [float(tok[c]) for c in cols]
                except ValueError:
                    raise ParseError(f"vertex {i}: non-numeric value", offset=off) from None
        elif el["name"] == "face":
            if len(el["props"]) != 1 or el["props"][0][0] != "list":
                raise ParseError("face element must have a single vertex_indices list", offset=el["offset"])
            faces = np.empty((el["count"], 3), dtype=np.int64)
            for i in range(el["count"]):
                off, line = lines.next()
                try:
                    tok = [int(t) for t in line.split()]
                except ValueError:
                    raise ParseError(f"face {i}: non-integer value", offset=off) from None
                if not tok or tok[0] != 3 or len(tok) != 4:
                    raise ParseError(f"face {i}: only triangles are supported", offset=off)
                faces[i] = tok[1:]
        else:
            # skip rows of elements we do not interpret
            for _ in range(el["count"]):
                lines.next()
    if verts is None:
        raise ParseError("no vertex element", offset=0)
    if faces is not None:
        try:
            return TriangleMesh(verts, faces)
        except InvalidInputError as exc:
            raise InvalidInputError(f"{path}: {exc}") from None
    return PointCloud(verts)


def write_ply(path, obj):
    """Write a PointCloud, TriangleMesh or (N, 3) array as ASCII PLY."""
    if isinstance(obj, TriangleMesh):
        verts, faces = obj.vertices, obj.faces
    else:
        verts = obj.points if isinstance(obj, PointCloud) else np.asarray(obj, dtype=np.float64)
        faces = None
    head = ["ply", "format ascii 1.0", f"element vertex {len(verts)}",
            "property double x", "property double y", "property double z"]
    if faces is not None:
        head += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    head.append("end_header")
    with open(path, "w") as fh:
        fh.write("\n".join(head) + "\n")
        for v in verts:
            fh.write(_fmt(v, 17) + "\n")
        if faces is not None:
            for f in faces:
                fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


def read_points(path) -> PointCloud:
    """Read ``.ply`` or ``.xyz`` by extension; meshes contribute their vertices."""
    if str(path).lower().endswith(".ply"):
        obj = read_ply(path)
        return PointCloud(obj.vertices) if isinstance(obj, TriangleMesh) else obj
    return read_xyz(path)


def write_points(path, cloud):
    if str(path).lower().endswith(".ply"):
        write_ply(path, cloud)
    else:
        write_xyz(path, cloud)


# ---------------------------------------------------------------- checkpoints


def _config_line(cfg: ModelConfig):
    radius = "none" if cfg.radius is None else repr(float(cfg.radius))
    widths = ",".join(str(int(w)) for w in cfg.conv_widths)
    return (f"config k_feat={cfg.k_feat} conv_widths={widths} f_hidden={cfg.f_hidden} f_out={cfg.f_out} "
            f"m_hidden={cfg.m_hidden} k_max={cfg.k_max} radius={radius} radius_factor={cfg.radius_factor!r}")


def _parse_config(line, lineno):
    tok = line.split()
    if not tok or tok[0] != "config":
        raise ParseError("expected config line", line=lineno)
    kv = {}
    for item in tok[1:]:
        if "=" not in item:
            raise ParseError(f"malformed config entry {item!r}", line=lineno)
        k, v = item.split("=", 1)
        kv[k] = v
    try:
        return ModelConfig(
            k_feat=int(kv["k_feat"]),
            conv_widths=tuple(int(w) for w in kv["conv_widths"].split(",")),
            f_hidden=int(kv["f_hidden"]),
            f_out=int(kv["f_out"]),
            m_hidden=int(kv["m_hidden"]),
            k_max=int(kv["k_max"]),
            radius=None if kv["radius"] == "none" else float(kv["radius"]),
            radius_factor=float(kv["radius_factor"]),
        )
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad config: {exc}", line=lineno) from None


def save_checkpoint(path, model: GradientFieldModel):
    """Text checkpoint: header, config echo, then each tensor as name/rank/extents and rows."""
    state = model.state()
    with open(path, "w") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n")
        fh.write(_config_line(model.config) + "\n")
        fh.write(f"tensors {len(state)}\n")
        for name in sorted(state):
            arr = np.asarray(state[name], dtype=np.float64)
            fh.write(f"tensor {name} {arr.ndim} {' '.join(str(d) for d in arr.shape)}\n")
            rows = arr.reshape(arr.shape[0], -1) if arr.ndim >= 1 else arr.reshape(1, 1)
            for row in rows:
                fh.write(_fmt(row, 17) + "\n")


def load_checkpoint(path) -> GradientFieldModel:
    with open(path) as fh:
        lines = fh.read().split("\n")
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise ParseError("truncated checkpoint", line=pos + 1)
        pos += 1
        return lines[pos - 1]

    head = take().split()
    if len(head) != 2 or head[0] != CHECKPOINT_MAGIC:
        raise ParseError("not a checkpoint file (bad magic)", line=1)
    try:
        version = int(head[1])
    except ValueError:
        raise ParseError(f"bad checkpoint version {head[1]!r}", line=1) from None
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})", line=1)
    cfg = _parse_config(take(), pos)
    tok = take().split()
    if len(tok) != 2 or tok[0] != "tensors":
        raise ParseError("expected tensor count", line=pos)
    count = int(tok[1])
    state = {}
    for _ in range(count):
        tok = take().split()
        if len(tok) < 3 or tok[0] != "tensor":
            raise ParseError("expected tensor header", line=pos)
        name, rank = tok[1], int(tok[2])
        shape = tuple(int(d) for d in tok[3:])
        if len(shape) != rank:
            raise ParseError(f"tensor {name}: rank {rank} but {len(shape)} extents", line=pos)
        nrows = shape[0] if rank >= 1 else 1
        ncols = int(np.prod(shape[1:])) if rank >= 1 else 1
        data = np.empty((nrows, ncols))
        for r in range(nrows):
            vals = take().split()
            if len(vals) != ncols:
                raise ParseError(f"tensor {name}: expected {ncols} values, got {len(vals)}", line=pos)
            try:
                data[r] = [float(v) for v in vals]
            except ValueError:
                raise ParseError(f"tensor {name}: non-numeric value", line=pos) from None
        state[name] = data.reshape(shape)
    model = GradientFieldModel(cfg)
    expected = set(model.state())
    if set(state) != expected:
        missing = sorted(expected - set(state))
        extra = sorted(set(state) - expected)
        raise ParseError(f"checkpoint tensors do not match the config (missing {missing}, unexpected {extra})")
    model.load_state(state)
    return model
