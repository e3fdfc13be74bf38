"""File formats: PFM float maps, PNG masks and previews, JSON metadata, OBJ meshes.

Float maps never contain NaN. Invalid depth is written as -1 and invalid
normals as the zero vector; a sidecar ``mask.png`` carries the mask.
"""

from __future__ import annotations

import json
import re
import struct
import zlib
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, DepthMap, NormalMap, TriangleMesh
from .lighting import LightSource
from .renderer import Material, NoiseConfig, Plane, Scene, Sinusoid, SphereCap, disk_mask

INVALID_DEPTH = -1.0


# -- PFM ----------------------------------------------------------------------


def write_pfm(path, data: np.ndarray) -> None:
    """Write an (H, W) or (H, W, 3) grid as little-endian float32 PFM."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError(f"PFM holds 1 or 3 channels, got shape {data.shape}")
    if np.isnan(data).any():
        raise ValueError("refusing to write NaN into a PFM file")
    h, w = data.shape[:2]
    body = np.ascontiguousarray(data[::-1]).astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n" + body)


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a float32 array with row 0 at the top."""
    with open(path, "rb") as f:
        raw = f.read()
    # header is three whitespace-terminated tokens: kind, "W H", scale
    m = re.match(rb"(P[Ff])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s", raw)
    if not m:
        raise ValueError(f"{path}: not a PFM file")
    channels = 3 if m.group(1) == b"PF" else 1
    w, h = int(m.group(2)), int(m.group(3))
    scale = float(m.group(4))
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=m.end())
    shape = (h, w, 3) if channels == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float32)


# -- PNG ----------------------------------------------------------------------


def _png_chunk(kind: bytes, payload: bytes) -> bytes:
    return struct.pack(">I", len(payload)) + kind + payload + struct.pack(">I", zlib.crc32(kind + payload) & 0xFFFFFFFF)


def write_png(path, data: np.ndarray) -> None:
    """Write uint8 or uint16 grey (H, W) or RGB (H, W, 3) data as PNG."""
    data = np.asarray(data)
    if data.dtype == np.uint8:
        depth = 8
    elif data.dtype == np.uint16:
        depth = 16
    else:
        raise TypeError("PNG data must be uint8 or uint16")
    if data.ndim == 2:
        color, channels = 0, 1
    elif data.ndim == 3 and data.shape[2] == 3:
        color, channels = 2, 3
    else:
        raise ValueError(f"unsupported PNG shape {data.shape}")
    h, w = data.shape[:2]
    rows = data.astype(">u2" if depth == 16 else "u1").reshape(h, w * channels)
    raw = b"".join(b"\x00" + row.tobytes() for row in rows)
    ihdr = struct.pack(">IIBBBBB", w, h, depth, color, 0, 0, 0)
    with open(path, "wb") as f:
        f.write(b"\x89PNG\r\n\x1a\n")
        f.write(_png_chunk(b"IHDR", ihdr))
        f.write(_png_chunk(b"IDAT", zlib.compress(raw, 9)))
        f.write(_png_chunk(b"IEND", b""))


def write_mask(path, mask: np.ndarray) -> None:
    write_png(path, np.where(mask, 255, 0).astype(np.uint8))


def read_mask(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.array(im)
    if arr.ndim == 3:
        arr = arr[..., :3].max(axis=-1)
    return arr > 0


def normals_preview(normals: NormalMap) -> np.ndarray:
    """16-bit RGB encoding ``normal * 0.5 + 0.5``; invalid pixels black."""
    enc = np.clip(normals.data * 0.5 + 0.5, 0.0, 1.0)
    enc = np.round(enc * 65535).astype(np.uint16)
    enc[~normals.mask] = 0
    return enc


# -- maps -----------------------------------------------------------------------


def write_depth(path, depth: DepthMap) -> None:
    write_pfm(path, np.where(depth.mask, depth.data, INVALID_DEPTH))


def read_depth(path, mask: np.ndarray | None = None) -> DepthMap:
    data = read_pfm(path).astype(np.float64)
    valid = data > 0
    if mask is not None:
        valid &= mask
    return DepthMap(np.where(valid, data, 0.0), valid)


def write_normals(path, normals: NormalMap) -> None:
    write_pfm(path, np.where(normals.mask[..., None], normals.data, 0.0))


def read_normals(path, mask: np.ndarray | None = None) -> NormalMap:
    data = read_pfm(path).astype(np.float64)
    norm = np.linalg.norm(data, axis=-1)
    valid = (norm > 0) & (data[..., 2] < 0)
    if mask is not None:
        valid &= mask
    data = data / np.where(norm > 0, norm, 1.0)[..., None]
    data[~valid] = 0.0
    return NormalMap(data, valid)


def write_obj(path, mesh: TriangleMesh) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    return np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


# -- JSON -----------------------------------------------------------------------


def _dump(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _reject_unknown(obj: dict, allowed: set, what: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ValueError(f"unknown {what} fields: {sorted(unknown)}")


def camera_from_dict(obj: dict) -> CameraIntrinsics:
    keys = {"fx", "fy", "cx", "cy", "width", "height"}
    _reject_unknown(obj, keys, "camera")
    missing = keys - set(obj)
    if missing:
        raise ValueError(f"camera is missing {sorted(missing)}")
    return CameraIntrinsics(
        float(obj["fx"]), float(obj["fy"]), float(obj["cx"]), float(obj["cy"]), int(obj["width"]), int(obj["height"])
    )


def write_camera(path, K: CameraIntrinsics) -> None:
    _dump(path, K.to_dict())


def read_camera(path) -> CameraIntrinsics:
    return camera_from_dict(json.loads(Path(path).read_text()))


def write_lights(path, lights) -> None:
    _dump(path, [l.to_dict() for l in lights])


def read_lights(path) -> list[LightSource]:
    obj = json.loads(Path(path).read_text())
    if not isinstance(obj, list):
        raise ValueError("lights file must hold a JSON array")
    return [LightSource.from_dict(o) for o in obj]


_SURFACE_FIELDS = {
    "plane": ({"a", "b", "c"}, lambda o: Plane(float(o.get("a", 0.0)), float(o.get("b", 0.0)), float(o["c"]))),
    "sphere_cap": (
        {"center", "radius", "max_angle_deg"},
        lambda o: SphereCap(tuple(float(x) for x in o["center"]), float(o["radius"]), float(o.get("max_angle_deg", 70.0))),
    ),
    "sinusoid": (
        {"amplitude", "frequency", "base"},
        lambda o: Sinusoid(float(o["amplitude"]), float(o["frequency"]), float(o.get("base", 1.0))),
    ),
}


def scene_from_dict(obj: dict) -> tuple[Scene, NoiseConfig]:
    """Parse a scene document; unknown fields anywhere are rejected."""
    _reject_unknown(obj, {"camera", "surface", "material", "lights", "noise", "seed", "mask"}, "scene")
    K = camera_from_dict(obj["camera"])
    surf = dict(obj["surface"])
    kind = surf.pop("type", None)
    if kind not in _SURFACE_FIELDS:
        raise ValueError(f"surface type must be one of {sorted(_SURFACE_FIELDS)}, got {kind!r}")
    allowed, build = _SURFACE_FIELDS[kind]
    _reject_unknown(surf, allowed, f"{kind} surface")
    surface = build(surf)
    mat = obj.get("material", {})
    _reject_unknown(mat, {"model", "albedo", "roughness"}, "material")
    material = Material(float(mat.get("albedo", 1.0)), float(mat.get("roughness", 0.5)), mat.get("model", "lambertian"))
    lights = [LightSource.from_dict(l) for l in obj["lights"]]
    noise = obj.get("noise", {})
    _reject_unknown(noise, {"sigma", "zero_patches", "patch_size"}, "noise")
    noise_cfg = NoiseConfig(
        float(noise.get("sigma", 0.0)),
        int(noise.get("zero_patches", 0)),
        int(noise.get("patch_size", 16)),
        int(obj.get("seed", 0)),
    )
    mask = None
    if "mask" in obj:
        _reject_unknown(obj["mask"], {"disk_radius"}, "mask")
        mask = disk_mask(K, float(obj["mask"]["disk_radius"]))
    return Scene(surface, material, tuple(lights), K, mask), noise_cfg


def read_scene(path) -> tuple[Scene, NoiseConfig]:
    return scene_from_dict(json.loads(Path(path).read_text()))


# -- directories ---------------------------------------------------------------


def write_image_stack(out_dir, stack, gt_depth: DepthMap, gt_normals: NormalMap) -> list[Path]:
    """Write images, metadata and ground truth in the fixture layout."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for j, img in enumerate(stack.images):
        p = out / f"image_{j:03d}.pfm"
        write_pfm(p, img)
        written.append(p)
    write_lights(out / "lights.json", stack.lights)
    write_camera(out / "camera.json", stack.K)
    write_depth(out / "gt_depth.pfm", gt_depth)
    write_normals(out / "gt_normals.pfm", gt_normals)
    write_mask(out / "mask.png", stack.mask)
    return written + [out / n for n in ("lights.json", "camera.json", "gt_depth.pfm", "gt_normals.pfm", "mask.png")]


def _first_existing(directory: Path, names) -> Path:
    for n in names:
        if (directory / n).exists():
            return directory / n
    raise FileNotFoundError(f"none of {list(names)} found in {directory}")


def read_maps(directory) -> tuple[NormalMap, DepthMap | None]:
    """Load normals and (if present) depth from a prediction or fixture directory."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"{d} is not a directory")
    mask = read_mask(d / "mask.png") if (d / "mask.png").exists() else None
    normals = read_normals(_first_existing(d, ("normals.pfm", "gt_normals.pfm")), mask)
    try:
        depth = read_depth(_first_existing(d, ("depth.pfm", "gt_depth.pfm")), mask)
    except FileNotFoundError:
        depth = None
    return normals, depth
