"""Readers and writers for clouds, cameras, match matrices, images and scenes.

All loaders are fail-closed: malformed input raises :class:`FormatError`
with the offending location rather than being repaired.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

from vodgs.core_math import quaternion_to_matrix
from vodgs.losses import MatchMatrix
from vodgs.model import Camera, GaussianCloud

N_SH_REST = 45


class FormatError(ValueError):
    """A file did not parse; the message carries a byte offset or line number."""


# -- PLY ----------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
_DTYPE_NAMES = {np.dtype(np.float32): "float", np.dtype(np.float64): "double"}

S_HAT_PROPS = ("s_xx", "s_xy", "s_xz", "s_yy", "s_yz", "s_zz")
REQUIRED_PROPS = (
    ("x", "y", "z")
    + tuple(f"scale_{i}" for i in range(3))
    + tuple(f"rot_{i}" for i in range(4))
    + tuple(f"f_dc_{i}" for i in range(3))
    + tuple(f"f_rest_{i}" for i in range(N_SH_REST))
    + ("opacity",)
)
# present in files from common tools; read and discarded
IGNORED_PROPS = ("nx", "ny", "nz")


@dataclass
class PlyLoadResult:
    cloud: GaussianCloud
    legacy: bool  # no view-opacity matrix in the file; S_hat set to zero


def _pack_cloud(cloud: GaussianCloud) -> np.ndarray:
    dt = cloud.dtype
    if dt not in _DTYPE_NAMES:
        raise ValueError(f"cannot store a cloud of dtype {dt}")
    names = REQUIRED_PROPS + S_HAT_PROPS
    rec = np.empty(len(cloud), dtype=[(nm, dt.newbyteorder("<")) for nm in names])
    cols = np.concatenate(
        [
            cloud.means,
            cloud.log_scales,
            cloud.rotations,
            cloud.sh[:, 0, :],
            # rest coefficients are stored channel-major, as in common splat files
            cloud.sh[:, 1:, :].transpose(0, 2, 1).reshape(len(cloud), N_SH_REST),
            cloud.gamma[:, None],
            cloud.s_hat,
        ],
        axis=1,
    )
    for k, nm in enumerate(names):
        rec[nm] = cols[:, k]
    return rec


def save_cloud(path, cloud: GaussianCloud) -> None:
    """Write a binary little-endian PLY with the extended per-vertex layout."""
    rec = _pack_cloud(cloud)
    tname = _DTYPE_NAMES[cloud.dtype]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(cloud)}"]
    header += [f"property {tname} {nm}" for nm in rec.dtype.names]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())


def _parse_ply_header(data: bytes):
    if not data.startswith(b"ply\n"):
        raise FormatError("byte 0: missing 'ply' magic")
    pos = 4
    n_vertex = None
    props: list[tuple[str, str]] = []
    elements_after = False
    fmt_seen = False
    while True:
        end = data.find(b"\n", pos)
        if end < 0:
            raise FormatError(f"byte {pos}: header not terminated by end_header")
        try:
            line = data[pos:end].decode("ascii").strip()
        except UnicodeDecodeError:
            raise FormatError(f"byte {pos}: non-ASCII header line") from None
        tokens = line.split()
        where = f"byte {pos}"
        pos = end + 1
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        key = tokens[0]
        if key == "format":
            if tokens[1:] != ["binary_little_endian", "1.0"]:
                raise FormatError(f"{where}: unsupported format {' '.join(tokens[1:])!r}")
            fmt_seen = True
        elif key == "element":
            if len(tokens) != 3 or not tokens[2].isdigit():
                raise FormatError(f"{where}: malformed element line {line!r}")
            if tokens[1] == "vertex" and n_vertex is None:
                n_vertex = int(tokens[2])
            else:
                if int(tokens[2]) != 0:
                    raise FormatError(f"{where}: unsupported element {tokens[1]!r}")
                elements_after = True
        elif key == "property":
            if elements_after:
                raise FormatError(f"{where}: property of an unsupported element")
            if n_vertex is None:
                raise FormatError(f"{where}: property before element vertex")
            if len(tokens) != 3 or tokens[1] not in _PLY_TYPES:
                raise FormatError(f"{where}: malformed property line {line!r}")
            if any(tokens[2] == p for p, _ in props):
                raise FormatError(f"{where}: duplicate property {tokens[2]!r}")
            props.append((tokens[2], _PLY_TYPES[tokens[1]]))
        elif key == "end_header":
            break
        else:
            raise FormatError(f"{where}: unexpected header keyword {key!r}")
    if not fmt_seen:
        raise FormatError("header has no format line")
    if n_vertex is None:
        raise FormatError("header has no vertex element")
    return pos, n_vertex, props


def load_cloud_ex(path) -> PlyLoadResult:
    """Load a PLY cloud and report whether it lacked the view-opacity matrix."""
    with open(path, "rb") as fh:
        data = fh.read()
    body, n, props = _parse_ply_header(data)
    names = [p for p, _ in props]
    for p in names:
        if p not in REQUIRED_PROPS and p not in S_HAT_PROPS and p not in IGNORED_PROPS:
            raise FormatError(f"unknown vertex property {p!r}")
    missing = [p for p in REQUIRED_PROPS if p not in names]
    if missing:
        raise FormatError(f"missing vertex properties: {', '.join(missing[:5])}")
    has_s = [p in names for p in S_HAT_PROPS]
    if any(has_s) and not all(has_s):
        raise FormatError("partial view-opacity matrix: need all of " + ", ".join(S_HAT_PROPS))
    float_types = {t for p, t in props if p not in IGNORED_PROPS}
    if len(float_types) != 1 or next(iter(float_types)) not in ("f4", "f8"):
        raise FormatError(f"parameters must share one float type, found {sorted(float_types)}")
    dt = np.dtype(next(iter(float_types)))

    rec_dtype = np.dtype([(p, np.dtype(t).newbyteorder("<")) for p, t in props])
    need = n * rec_dtype.itemsize
    have = len(data) - body
    if have < need:
        raise FormatError(
            f"byte {len(data)}: truncated payload, vertex {have // max(rec_dtype.itemsize, 1)} of {n} "
            f"incomplete (expected {need} bytes from offset {body})"
        )
    if have > need:
        raise FormatError(f"byte {body + need}: {have - need} trailing bytes after vertex data")
    rec = np.frombuffer(data, dtype=rec_dtype, count=n, offset=body)

    def cols(keys):
        return np.stack([rec[k].astype(dt) for k in keys], axis=1) if n else np.zeros((0, len(keys)), dt)

    cloud = GaussianCloud.zeros(n, dt)
    cloud.means[:] = cols(("x", "y", "z"))
    cloud.log_scales[:] = cols([f"scale_{i}" for i in range(3)])
    cloud.rotations[:] = cols([f"rot_{i}" for i in range(4)])
    cloud.sh[:, 0, :] = cols([f"f_dc_{i}" for i in range(3)])
    rest = cols([f"f_rest_{i}" for i in range(N_SH_REST)]).reshape(n, 3, N_SH_REST // 3)
    cloud.sh[:, 1:, :] = rest.transpose(0, 2, 1)
    cloud.gamma[:] = rec["opacity"].astype(dt) if n else 0
    legacy = not all(has_s)
    if not legacy:
        cloud.s_hat[:] = cols(S_HAT_PROPS)
    return PlyLoadResult(cloud, legacy)


def load_cloud(path) -> GaussianCloud:
    return load_cloud_ex(path).cloud


def save_legacy_cloud(path, cloud: GaussianCloud) -> None:
    """Write the scalar-opacity layout (with zero normals) understood by older tools."""
    dt = cloud.dtype
    tname = _DTYPE_NAMES[dt]
    rec = _pack_cloud(cloud)
    names = ("x", "y", "z", "nx", "ny", "nz") + REQUIRED_PROPS[3:]
    out = np.zeros(len(cloud), dtype=[(nm, dt.newbyteorder("<")) for nm in names])
    for nm in names:
        if nm not in IGNORED_PROPS:
            out[nm] = rec[nm]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(cloud)}"]
    header += [f"property {tname} {nm}" for nm in names] + ["end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(out.tobytes())


# -- cameras ------------------------------------------------------------------

CAMERA_MAGIC = "# vodgs cameras v1"
CAMERA_COLUMNS = "id width height fx fy cx cy qw qx qy qz tx ty tz split"
QUAT_TOL = 1e-6


def save_cameras(path, cams) -> None:
    """One camera per line; rotation as a unit quaternion ``(w, x, y, z)``."""
    lines = [CAMERA_MAGIC, "# " + CAMERA_COLUMNS]
    for c in cams:
        vals = [c.fx, c.fy, c.cx, c.cy, *c.quaternion, *c.t]
        lines.append(f"{c.id} {c.width} {c.height} " + " ".join(repr(float(v)) for v in vals) + f" {c.split}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_cameras(path) -> list:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != CAMERA_MAGIC:
        raise FormatError(f"{path}:1: expected header {CAMERA_MAGIC!r}")
    cams = []
    seen = set()
    for lineno, line in enumerate(lines[1:], 2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        if len(tok) != 15:
            raise FormatError(f"{path}:{lineno}: expected 15 fields, got {len(tok)}")
        try:
            cid, w, h = int(tok[0]), int(tok[1]), int(tok[2])
            fx, fy, cx, cy = (float(v) for v in tok[3:7])
            q = np.array([float(v) for v in tok[7:11]])
            t = np.array([float(v) for v in tok[11:14]])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        split = tok[14]
        if split not in ("train", "test"):
            raise FormatError(f"{path}:{lineno}: split must be train or test, got {split!r}")
        if cid in seen:
            raise FormatError(f"{path}:{lineno}: duplicate camera id {cid}")
        if not (np.isfinite(q).all() and abs(np.linalg.norm(q) - 1.0) <= QUAT_TOL):
            raise FormatError(f"{path}:{lineno}: rotation is not a unit quaternion")
        seen.add(cid)
        try:
            cams.append(Camera(w, h, fx, fy, cx, cy, quaternion_to_matrix(q / np.linalg.norm(q)), t, cid, split))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    return cams


# -- match matrix ---------------------------------------------------------------

def save_match_matrix(path, matches: MatchMatrix) -> None:
    m = matches.counts
    if not np.array_equal(m, np.round(m)):
        raise ValueError("match counts must be integers to be written")
    rows = [str(len(m))] + [" ".join(str(int(v)) for v in row) for row in m]
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")


def load_match_matrix(path, n_views: int | None = None) -> MatchMatrix:
    """Read ``V`` followed by ``V`` rows of ``V`` nonnegative integers."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty file")
    try:
        v = int(lines[0])
    except ValueError:
        raise FormatError(f"{path}:1: expected the view count") from None
    if v < 0:
        raise FormatError(f"{path}:1: negative view count")
    if len(lines) != v + 1:
        raise FormatError(f"{path}: expected {v} rows, found {len(lines) - 1}")
    m = np.zeros((v, v), dtype=np.int64)
    for r, line in enumerate(lines[1:]):
        tok = line.split()
        if len(tok) != v:
            raise FormatError(f"{path}:{r + 2}: expected {v} entries, got {len(tok)}")
        for c, s in enumerate(tok):
            if not re.fullmatch(r"\d+", s):
                raise FormatError(f"{path}:{r + 2}: entry ({r}, {c}) is not a nonnegative integer: {s!r}")
            m[r, c] = int(s)
    if n_views is not None and v != n_views:
        raise FormatError(f"{path}: match matrix has {v} views, camera set has {n_views}")
    try:
        return MatchMatrix(m)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


# -- images -------------------------------------------------------------------

def save_image(path, img, bits: int = 16) -> None:
    """Write a binary PPM (RGB) or PGM (gray) with 8 or 16 bits per sample.

    Values are clipped to [0, 1] and rounded to the nearest code.  16-bit
    samples are big-endian, as the Netpbm format prescribes.
    """
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    if a.ndim == 2:
        magic = b"P5"
    elif a.ndim == 3 and a.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"unsupported image shape {a.shape}")
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = (1 << bits) - 1
    q = np.round(np.clip(a, 0.0, 1.0) * maxval)
    payload = q.astype(">u2" if bits == 16 else "u1").tobytes()
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{a.shape[1]} {a.shape[0]}\n{maxval}\n".encode("ascii"))
        fh.write(payload)


def _netpbm_tokens(data: bytes, n: int):
    """Read ``n`` whitespace-separated header tokens, skipping comments."""
    tokens = []
    pos = 0
    while len(tokens) < n:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise FormatError(f"byte {pos}: truncated header")
        if data[pos:pos + 1] == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append((start, data[start:pos]))
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def load_image(path) -> np.ndarray:
    """Read a binary PPM/PGM as linear floats in [0, 1]; gray images are ``(H, W)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, body = _netpbm_tokens(data, 4)
    magic = tokens[0][1]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"byte 0: unsupported image format {magic!r} (binary P5/P6 only)")
    try:
        w, h, maxval = (int(t) for _, t in tokens[1:])
    except ValueError:
        raise FormatError(f"byte {tokens[1][0]}: malformed image header") from None
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise FormatError(f"byte {tokens[1][0]}: invalid size or maxval")
    ch = 3 if magic == b"P6" else 1
    dt = np.dtype(">u2" if maxval > 255 else "u1")
    need = w * h * ch * dt.itemsize
    if len(data) - body < need:
        raise FormatError(f"byte {len(data)}: truncated raster, expected {need} bytes from offset {body}")
    raw = np.frombuffer(data, dtype=dt, count=w * h * ch, offset=body).astype(np.float64) / maxval
    return raw.reshape(h, w, 3) if ch == 3 else raw.reshape(h, w)


# -- scene directories ---------------------------------------------------------

def save_scene(root, scene, bits: int = 16) -> None:
    """Lay out a scene as ``cameras.txt``, ``matches.txt``, ``points.txt``,
    ``images/<id>.ppm`` and, when known, ``ground_truth.ply``."""
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    save_cameras(os.path.join(root, "cameras.txt"), list(scene.train_cams) + list(scene.test_cams))
    for cam, img in zip(list(scene.train_cams) + list(scene.test_cams), scene.train_images + scene.test_images):
        save_image(os.path.join(root, "images", f"{cam.id:04d}.ppm"), img, bits)
    if scene.matches is not None:
        save_match_matrix(os.path.join(root, "matches.txt"), scene.matches)
    pts = np.concatenate([scene.init_points, scene.init_colors], axis=1)
    np.savetxt(os.path.join(root, "points.txt"), pts, fmt="%.17g", header="x y z r g b")
    if scene.gt_cloud is not None:
        save_cloud(os.path.join(root, "ground_truth.ply"), scene.gt_cloud)


def load_scene(root):
    from vodgs.scene import SyntheticScene

    cams = load_cameras(os.path.join(root, "cameras.txt"))
    train = [c for c in cams if c.split == "train"]
    test = [c for c in cams if c.split == "test"]

    def images(cs):
        out = []
        for c in cs:
            img = load_image(os.path.join(root, "images", f"{c.id:04d}.ppm"))
            if img.shape[:2] != (c.height, c.width):
                raise FormatError(f"image for camera {c.id} is {img.shape[:2]}, camera expects {(c.height, c.width)}")
            out.append(img if img.ndim == 3 else np.repeat(img[..., None], 3, axis=2))
        return out

    mpath = os.path.join(root, "matches.txt")
    matches = load_match_matrix(mpath, len(train)) if os.path.exists(mpath) else None
    ppath = os.path.join(root, "points.txt")
    pts = np.loadtxt(ppath, ndmin=2) if os.path.exists(ppath) else np.zeros((0, 6))
    if pts.shape[1] != 6:
        raise FormatError(f"{ppath}: expected 6 columns, got {pts.shape[1]}")
    gpath = os.path.join(root, "ground_truth.ply")
    gt = load_cloud(gpath) if os.path.exists(gpath) else None
    return SyntheticScene(gt, train, test, images(train), images(test), matches, pts[:, :3], pts[:, 3:])
