"""On-disk clip bundle format.

A bundle is a directory holding ``manifest.json`` plus the files it names::

    manifest.json
    poses.json          {"poses": [[16 floats, row-major camera-to-world], ...]}
    fingertips.json     {"observations": [{"t", "thumb", "index", "middle", "contact"}, ...]}
    lines.json          {"segments": [{"frame", "p0", "p1", "corr_id"}, ...]}
    normals.json        {"frames": [...], "normals": [[x, y, z], ...]}
    depth/NNNNNN.bin    uint32 width, uint32 height, then float32 values (all little-endian)
    masks/NNNNNN.mask   same header, then one byte per pixel (0 or 255)
    cloud.ply           optional; vertices with x, y, z and an integer frame_id
    reasoner.json       optional; injected reasoner answers

Writers are canonical, so reading a bundle and writing it back reproduces
every file byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import BundleError, InvariantError
from .types import (CameraPose, ClipBundle, DepthMap, FingertipObservation, FrameRecord,
                    Intrinsics, LineSegment2D, Mask, NormalSampleSet, PointCloud)

MANIFEST = "manifest.json"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<II")


def dump_json(obj, path):
    text = json.dumps(obj, indent=1, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n")


def _load_json(path, what):
    path = Path(path)
    if not path.is_file():
        raise BundleError(f"missing file: {path} ({what})")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise BundleError(f"schema mismatch: {what} is not valid JSON ({exc})") from exc


def _field(d, key, where):
    try:
        return d[key]
    except (KeyError, TypeError):
        raise BundleError(f"schema mismatch: missing field {where}.{key}") from None


# raw images -----------------------------------------------------------------

def write_depth(path, depth: DepthMap):
    h, w = depth.values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(w, h))
        fh.write(depth.values.astype("<f4").tobytes())


def read_depth(path) -> DepthMap:
    data = _read_raw(path, "depth map")
    w, h = _HEADER.unpack_from(data)
    body = data[_HEADER.size:]
    if len(body) != 4 * w * h:
        raise BundleError(f"schema mismatch: depth map {path} has {len(body)} bytes for {w}x{h}")
    return DepthMap(np.frombuffer(body, dtype="<f4").reshape(h, w))


def write_mask(path, mask: Mask):
    h, w = mask.values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(w, h))
        fh.write(mask.values.tobytes())


def read_mask(path) -> Mask:
    data = _read_raw(path, "mask")
    w, h = _HEADER.unpack_from(data)
    body = data[_HEADER.size:]
    if len(body) != w * h:
        raise BundleError(f"schema mismatch: mask {path} has {len(body)} bytes for {w}x{h}")
    return Mask(np.frombuffer(body, dtype=np.uint8).reshape(h, w))


def _read_raw(path, what):
    path = Path(path)
    if not path.is_file():
        raise BundleError(f"missing file: {path} ({what})")
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise BundleError(f"schema mismatch: {what} {path} is truncated")
    return data


# PLY ------------------------------------------------------------------------

_PLY_TYPES = {"char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1", "short": "i2",
              "int16": "i2", "ushort": "u2", "uint16": "u2", "int": "i4", "int32": "i4",
              "uint": "u4", "uint32": "u4", "float": "f4", "float32": "f4",
              "double": "f8", "float64": "f8"}


def write_ply(path, cloud: PointCloud):
    n = len(cloud)
    header = ("ply\nformat binary_little_endian 1.0\n"
              f"element vertex {n}\n"
              "property double x\nproperty double y\nproperty double z\n"
              "property int frame_id\nend_header\n")
    rec = np.empty(n, dtype=[("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("frame_id", "<i4")])
    rec["x"], rec["y"], rec["z"] = cloud.points.T
    rec["frame_id"] = cloud.frame_ids
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(rec.tobytes())


def read_ply(path) -> PointCloud:
    """Read vertices with ``x, y, z`` and ``frame_id`` from ASCII or binary PLY."""
    path = Path(path)
    if not path.is_file():
        raise BundleError(f"missing file: {path} (point cloud)")
    data = path.read_bytes()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise BundleError(f"schema mismatch: {path} is not a PLY file")
    body_start = data.index(b"\n", end) + 1
    lines = data[:end].decode("ascii").splitlines()
    fmt, n_vertex, props, in_vertex = None, None, [], False
    for line in lines[1:]:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
            elif n_vertex is not None and not props:
                raise BundleError("schema mismatch: PLY vertex element has no properties")
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise BundleError("schema mismatch: list properties on vertices are unsupported")
            props.append((tok[2], _PLY_TYPES[tok[1]]))
    names = [p[0] for p in props]
    for need in ("x", "y", "z", "frame_id"):
        if need not in names:
            raise BundleError(f"schema mismatch: PLY vertex lacks property {need!r}")
    if fmt == "ascii":
        rows = data[body_start:].decode("ascii").split("\n")
        rows = [r for r in rows if r.strip()][:n_vertex]
        arr = np.array([[float(x) for x in r.split()[:len(names)]] for r in rows]).reshape(-1, len(names))
        cols = {name: arr[:, i] for i, name in enumerate(names)}
    elif fmt in ("binary_little_endian", "binary_big_endian"):
        order = "<" if fmt == "binary_little_endian" else ">"
        dt = np.dtype([(nm, order + t) for nm, t in props])
        rec = np.frombuffer(data, dtype=dt, count=n_vertex, offset=body_start)
        cols = {name: rec[name] for name in names}
    else:
        raise BundleError(f"schema mismatch: unsupported PLY format {fmt!r}")
    pts = np.stack([cols["x"], cols["y"], cols["z"]], axis=1).astype(np.float64)
    return PointCloud(pts, cols["frame_id"].astype(np.int64))


# bundle ---------------------------------------------------------------------

def write_clip_bundle(bundle: ClipBundle, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "depth").mkdir(exist_ok=True)
    has_masks = any(fr.mask is not None for fr in bundle.frames)
    if has_masks:
        (d / "masks").mkdir(exist_ok=True)

    frames = []
    for fr in bundle.frames:
        rec = {"index": fr.index, "timestamp": fr.timestamp, "depth": None, "mask": None}
        if fr.depth is not None:
            rec["depth"] = f"{fr.index:06d}.bin"
            write_depth(d / "depth" / rec["depth"], fr.depth)
        if fr.mask is not None:
            rec["mask"] = f"{fr.index:06d}.mask"
            write_mask(d / "masks" / rec["mask"], fr.mask)
        frames.append(rec)

    dump_json({"poses": [[float(x) for x in p.matrix().ravel()] for p in bundle.poses]},
              d / "poses.json")
    dump_json({"observations": [
        {"t": o.timestamp, "thumb": o.thumb.tolist(), "index": o.index.tolist(),
         "middle": o.middle.tolist(), "contact": o.contact} for o in bundle.fingertips]},
        d / "fingertips.json")
    dump_json({"segments": [
        {"frame": s.frame, "p0": list(s.p0), "p1": list(s.p1), "corr_id": s.corr_id}
        for s in bundle.lines]}, d / "lines.json")
    dump_json({"frames": bundle.normals.frames.tolist(),
               "normals": bundle.normals.normals.tolist()}, d / "normals.json")

    manifest = {
        "version": FORMAT_VERSION,
        "clip_id": bundle.clip_id,
        "scene_id": bundle.scene_id,
        "up_axis": bundle.up_axis,
        "intrinsics": bundle.intrinsics.to_dict(),
        "frames": frames,
        "poses_file": "poses.json",
        "fingertips_file": "fingertips.json",
        "lines_file": "lines.json",
        "normals_file": "normals.json",
        "depth_dir": "depth",
    }
    if has_masks:
        manifest["masks_dir"] = "masks"
    if bundle.cloud is not None:
        manifest["cloud_file"] = "cloud.ply"
        write_ply(d / "cloud.ply", bundle.cloud)
    if bundle.reasoner is not None:
        manifest["reasoner_file"] = "reasoner.json"
        dump_json(bundle.reasoner, d / "reasoner.json")
    dump_json(manifest, d / MANIFEST)
    return d


def load_clip_bundle(directory) -> ClipBundle:
    d = Path(directory)
    man = _load_json(d / MANIFEST, "manifest")
    if not isinstance(man, dict):
        raise BundleError("schema mismatch: manifest must be a JSON object")

    try:
        intr = Intrinsics.from_dict(_field(man, "intrinsics", "manifest"))
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"manifest.intrinsics: {exc}") from exc

    depth_dir = d / man.get("depth_dir", "depth")
    masks_dir = d / man.get("masks_dir", "masks")
    frames = []
    for i, rec in enumerate(_field(man, "frames", "manifest")):
        where = f"manifest.frames[{i}]"
        depth = mask = None
        if rec.get("depth"):
            depth = read_depth(depth_dir / rec["depth"])
        if rec.get("mask"):
            mask = read_mask(masks_dir / rec["mask"])
        try:
            frames.append(FrameRecord(int(_field(rec, "index", where)),
                                      float(_field(rec, "timestamp", where)), depth, mask))
        except InvariantError as exc:
            raise InvariantError(f"{where}: {exc}") from exc

    poses_doc = _load_json(d / _field(man, "poses_file", "manifest"), "poses")
    poses = []
    for i, m in enumerate(_field(poses_doc, "poses", "poses_file")):
        try:
            if len(m) != 16:
                raise BundleError(f"schema mismatch: poses[{i}] must have 16 entries")
            poses.append(CameraPose.from_matrix(m))
        except InvariantError as exc:
            raise InvariantError(f"poses[{i}]: {exc}") from exc

    tips_doc = _load_json(d / _field(man, "fingertips_file", "manifest"), "fingertips")
    tips = []
    for i, o in enumerate(_field(tips_doc, "observations", "fingertips_file")):
        where = f"fingertips[{i}]"
        try:
            tips.append(FingertipObservation(_field(o, "t", where), _field(o, "thumb", where),
                                             _field(o, "index", where), _field(o, "middle", where),
                                             _field(o, "contact", where)))
        except InvariantError as exc:
            raise InvariantError(f"{where}: {exc}") from exc

    lines = []
    if man.get("lines_file"):
        lines_doc = _load_json(d / man["lines_file"], "lines")
        for i, s in enumerate(_field(lines_doc, "segments", "lines_file")):
            where = f"lines[{i}]"
            try:
                lines.append(LineSegment2D(tuple(_field(s, "p0", where)), tuple(_field(s, "p1", where)),
                                           int(_field(s, "frame", where)), s.get("corr_id")))
            except InvariantError as exc:
                raise InvariantError(f"{where}: {exc}") from exc

    normals = NormalSampleSet(np.zeros((0, 3)), [])
    if man.get("normals_file"):
        ndoc = _load_json(d / man["normals_file"], "normals")
        try:
            normals = NormalSampleSet(np.array(_field(ndoc, "normals", "normals_file"),
                                               dtype=np.float64).reshape(-1, 3),
                                      _field(ndoc, "frames", "normals_file"))
        except InvariantError as exc:
            raise InvariantError(f"normals: {exc}") from exc

    cloud = read_ply(d / man["cloud_file"]) if man.get("cloud_file") else None
    reasoner = _load_json(d / man["reasoner_file"], "reasoner") if man.get("reasoner_file") else None

    try:
        return ClipBundle(clip_id=str(_field(man, "clip_id", "manifest")), intrinsics=intr,
                          frames=frames, poses=poses, fingertips=tips, lines=lines,
                          normals=normals, cloud=cloud, reasoner=reasoner,
                          scene_id=str(man.get("scene_id", "scene")), up_axis=man.get("up_axis"))
    except InvariantError as exc:
        raise InvariantError(f"bundle {d}: {exc}") from exc


def iter_bundle_dirs(root):
    """Bundle directories under ``root`` (``root`` itself if it is a bundle), sorted."""
    root = Path(root)
    if (root / MANIFEST).is_file():
        return [root]
    return sorted(p for p in root.iterdir() if (p / MANIFEST).is_file())

