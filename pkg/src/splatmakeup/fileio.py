"""File formats: avatar/pose containers, camera rigs, textures, images,
training logs, and the reproducibility stamp.

Binary containers use a structured-text header followed by little-endian
arrays in the declared field order; images are 8-bit PNG (values map as
v/255, no gamma handling) or float PFM for lossless tests.  The PNG
codec is self-contained so outputs stay byte-identical across
environments.
"""

import hashlib
import struct
import zlib
from pathlib import Path

import numpy as np

from .avatar import AvatarModel, GaussianKernels, MeshPose, TriangleMesh
from .camera import Camera
from .errors import MissingAsset
from .uvbake import UvTexture

AVATAR_MAGIC = "SPLATAVATAR"
POSE_MAGIC = "SPLATPOSE"
RIG_MAGIC = "SPLATRIG"
FORMAT_VERSION = 1

_AVATAR_FIELDS = (
    "vertices",
    "triangles",
    "uv_corners",
    "region_labels",
    "mu_local",
    "q_local",
    "s_local",
    "color",
    "opacity_logit",
    "binding",
)


# ---------------------------------------------------------------- avatars

def save_avatar(path, model: AvatarModel) -> None:
    if model.binding is None:
        raise ValueError("only bound avatars can be saved")
    mesh, kern = model.mesh, model.kernels
    header = "\n".join(
        [
            f"{AVATAR_MAGIC} {FORMAT_VERSION}",
            f"vertices {mesh.num_vertices}",
            f"triangles {mesh.num_triangles}",
            f"kernels {len(kern)}",
            "fields " + " ".join(_AVATAR_FIELDS),
            "end_header",
        ]
    )
    blobs = [
        mesh.vertices.astype("<f4").tobytes(),
        mesh.triangles.astype("<u4").tobytes(),
        mesh.uv_corners.astype("<f4").tobytes(),
        mesh.region_labels.astype("<u4").tobytes(),
        kern.mu_local.astype("<f4").tobytes(),
        kern.q_local.astype("<f4").tobytes(),
        kern.s_local.astype("<f4").tobytes(),
        kern.color.astype("<f4").tobytes(),
        kern.opacity_logit.astype("<f4").tobytes(),
        model.binding.astype("<u4").tobytes(),
    ]
    Path(path).write_bytes(header.encode() + b"\n" + b"".join(blobs))


def _read_header(data: bytes, magic: str) -> tuple[dict, int]:
    end = data.index(b"end_header\n")
    lines = data[:end].decode().splitlines()
    first = lines[0].split()
    if first[0] != magic:
        raise ValueError(f"not a {magic} file")
    fields = {}
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        fields[key] = rest
    return fields, end + len(b"end_header\n")


def load_avatar(path) -> AvatarModel:
    data = Path(path).read_bytes()
    head, offset = _read_header(data, AVATAR_MAGIC)
    nv = int(head["vertices"])
    nt = int(head["triangles"])
    nk = int(head["kernels"])

    def take(dtype, count, shape):
        nonlocal offset
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        offset += arr.nbytes
        return arr.reshape(shape)

    vertices = take("<f4", nv * 3, (nv, 3)).astype(np.float64)
    triangles = take("<u4", nt * 3, (nt, 3))
    uv_corners = take("<f4", nt * 6, (nt, 3, 2)).astype(np.float64)
    region_labels = take("<u4", nt, (nt,))
    mu = take("<f4", nk * 3, (nk, 3)).astype(np.float64)
    quat = take("<f4", nk * 4, (nk, 4)).astype(np.float64)
    scale = take("<f4", nk * 3, (nk, 3)).astype(np.float64)
    color = take("<f4", nk * 3, (nk, 3)).astype(np.float64)
    logit = take("<f4", nk, (nk,)).astype(np.float64)
    binding = take("<u4", nk, (nk,))

    mesh = TriangleMesh(vertices, triangles, np.clip(uv_corners, 0.0, 1.0), region_labels)
    kernels = GaussianKernels(mu, quat, scale, color, logit)
    return AvatarModel(mesh=mesh, kernels=kernels, binding=binding)


def save_pose(path, pose: MeshPose) -> None:
    header = "\n".join(
        [
            f"{POSE_MAGIC} {FORMAT_VERSION}",
            f"pose_id {pose.pose_id}",
            f"vertices {len(pose.vertex_positions)}",
            "end_header",
        ]
    )
    Path(path).write_bytes(
        header.encode() + b"\n" + pose.vertex_positions.astype("<f4").tobytes()
    )


def load_pose(path) -> MeshPose:
    data = Path(path).read_bytes()
    head, offset = _read_header(data, POSE_MAGIC)
    nv = int(head["vertices"])
    verts = np.frombuffer(data, dtype="<f4", count=nv * 3, offset=offset)
    return MeshPose(head["pose_id"], verts.reshape(nv, 3).astype(np.float64))


def load_pose_dir(path) -> list[MeshPose]:
    """All *.pose files in a directory, sorted by file name."""
    files = sorted(Path(path).glob("*.pose"))
    if not files:
        raise MissingAsset(f"no pose files under {path}")
    return [load_pose(f) for f in files]


# ------------------------------------------------------------------- rigs

def save_camera_rig(path, cameras: list[Camera]) -> None:
    lines = [f"{RIG_MAGIC} {FORMAT_VERSION}"]
    for cam in cameras:
        lines.append(f"camera {cam.camera_id}")
        lines.append(f"size {cam.width} {cam.height}")
        lines.append(
            "intrinsics "
            + " ".join(repr(float(v)) for v in (cam.fx, cam.fy, cam.cx, cam.cy))
        )
        lines.append(
            "extrinsics "
            + " ".join(repr(float(v)) for v in cam.world_to_camera.reshape(-1))
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_camera_rig(path) -> list[Camera]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(RIG_MAGIC):
        raise ValueError(f"not a {RIG_MAGIC} file")
    cams = []
    current: dict = {}

    def flush():
        if current:
            cams.append(
                Camera(
                    camera_id=current["id"],
                    width=current["w"],
                    height=current["h"],
                    fx=current["fx"],
                    fy=current["fy"],
                    cx=current["cx"],
                    cy=current["cy"],
                    world_to_camera=current["w2c"],
                )
            )

    for line in lines[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "camera":
            flush()
            current = {"id": parts[1]}
        elif parts[0] == "size":
            current["w"], current["h"] = int(parts[1]), int(parts[2])
        elif parts[0] == "intrinsics":
            current["fx"], current["fy"], current["cx"], current["cy"] = map(
                float, parts[1:5]
            )
        elif parts[0] == "extrinsics":
            current["w2c"] = np.array(list(map(float, parts[1:17]))).reshape(4, 4)
    flush()
    return cams


# ------------------------------------------------------------------ images

def write_png(path, image: np.ndarray) -> None:
    """8-bit RGB PNG; float input in [0, 1] or uint8."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    h, w = img.shape[:2]
    raw = b"".join(b"\x00" + img[y].tobytes() for y in range(h))

    def chunk(tag: bytes, payload: bytes) -> bytes:
        return (
            struct.pack(">I", len(payload))
            + tag
            + payload
            + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
        )

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    out = (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(raw, 6))
        + chunk(b"IEND", b"")
    )
    Path(path).write_bytes(out)


def load_png(path) -> np.ndarray:
    """Decode an 8-bit PNG to float64 (H, W, 3) via v/255."""
    data = Path(path).read_bytes()
    if data[:8] != b"\x89PNG\r\n\x1a\n":
        raise ValueError("not a PNG file")
    pos = 8
    width = height = None
    color_type = bit_depth = None
    idat = b""
    while pos < len(data):
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        tag = data[pos + 4 : pos + 8]
        payload = data[pos + 8 : pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            width, height, bit_depth, color_type = struct.unpack(">IIBB", payload[:10])
            interlace = payload[12]
            if bit_depth != 8 or interlace != 0:
                raise ValueError("only 8-bit non-interlaced PNGs are supported")
            if color_type not in (0, 2, 6):
                raise ValueError(f"unsupported PNG color type {color_type}")
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    channels = {0: 1, 2: 3, 6: 4}[color_type]
    raw = zlib.decompress(idat)
    stride = width * channels
    img = np.zeros((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.uint8)
    for y in range(height):
        f = raw[y * (stride + 1)]
        row = np.frombuffer(
            raw, dtype=np.uint8, count=stride, offset=y * (stride + 1) + 1
        ).copy()
        img[y] = _unfilter_row(f, row, prev, channels)
        prev = img[y]
    px = img.reshape(height, width, channels)
    if channels == 1:
        px = np.repeat(px, 3, axis=2)
    elif channels == 4:
        px = px[:, :, :3]
    return px.astype(np.float64) / 255.0


def _unfilter_row(ftype: int, row: np.ndarray, prev: np.ndarray, bpp: int) -> np.ndarray:
    if ftype == 0:
        return row
    if ftype == 2:
        return (row.astype(np.int32) + prev).astype(np.uint8)
    if ftype == 1:
        out = row.astype(np.int32)
        for x in range(bpp, len(row)):
            out[x] = (out[x] + out[x - bpp]) & 0xFF
        return out.astype(np.uint8)
    out = row.astype(np.int32)
    prev32 = prev.astype(np.int32)
    for x in range(len(row)):
        a = out[x - bpp] if x >= bpp else 0
        b = prev32[x]
        if ftype == 3:
            out[x] = (out[x] + (a + b) // 2) & 0xFF
        elif ftype == 4:
            c = prev32[x - bpp] if x >= bpp else 0
            p = a + b - c
            pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
            pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else c)
            out[x] = (out[x] + pred) & 0xFF
        else:
            raise ValueError(f"bad PNG filter type {ftype}")
    return out.astype(np.uint8)


def write_pfm(path, image: np.ndarray) -> None:
    """Float32 PFM, little-endian, rows bottom-to-top; 1 or 3 channels."""
    img = np.asarray(image, dtype=np.float32)
    color = img.ndim == 3 and img.shape[2] == 3
    header = f"{'PF' if color else 'Pf'}\n{img.shape[1]} {img.shape[0]}\n-1.0\n"
    Path(path).write_bytes(header.encode() + img[::-1].tobytes())


def load_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    kind = parts[0].decode()
    w, h = map(int, parts[1].split())
    scale = float(parts[2])
    channels = 3 if kind == "PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    px = np.frombuffer(parts[3], dtype=dtype, count=w * h * channels)
    img = px.reshape(h, w, channels) if channels == 3 else px.reshape(h, w)
    return np.asarray(img[::-1], dtype=np.float64)


# ---------------------------------------------------------------- textures

def save_texture(stem, texture: UvTexture) -> None:
    """<stem>.pfm holds the finalized texels (NaN where unfilled) and
    <stem>.count.pfm the per-texel view counts."""
    stem = Path(stem)
    finalized = texture.finalized.copy()
    finalized[~texture.filled] = np.nan
    write_pfm(stem.with_suffix(".pfm"), finalized)
    write_pfm(stem.with_suffix(".count.pfm"), texture.count.astype(np.float32))


def load_texture(stem) -> UvTexture:
    stem = Path(stem)
    finalized = load_pfm(stem.with_suffix(".pfm"))
    count = load_pfm(stem.with_suffix(".count.pfm")).astype(np.int64)
    filled = np.isfinite(finalized).all(axis=2)
    finalized = np.where(filled[..., None], finalized, 0.0)
    observed = count > 0
    tex = UvTexture(
        resolution=finalized.shape[0],
        rgb_sum=finalized * count[..., None] * observed[..., None],
        count=count,
        finalized=finalized,
        filled=filled,
    )
    return tex


# ------------------------------------------------------------- logs, stamps

def save_train_log(path, records) -> None:
    lines = ["iteration stage pose_id camera_id makeup res total"]
    for r in records:
        lines.append(
            f"{r.iteration} {r.stage} {r.pose_id} {r.camera_id} "
            f"{r.makeup!r} {r.res!r} {r.total!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_stamp(path, config_text: str, seed: int, command: str) -> None:
    digest = hashlib.sha256(config_text.encode()).hexdigest()
    Path(path).write_text(
        f"command {command}\nseed {seed}\nconfig_sha256 {digest}\n"
    )
