"""Image and raw-plane file codecs.

PNG carries 8-bit RGB; byte values map linearly to [0,1] by /255 in both
directions (no gamma transform anywhere in the package, a documented
simplification).  Raw planes store float32 little-endian row-major payloads
with a small text sidecar describing the extent, used for depth auxiliaries.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import SceneFormatError


def read_image(path) -> np.ndarray:
    """Decode an 8-bit image file to (H,W,3) float32 in [0,1]."""
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise SceneFormatError(str(path), None, f"unreadable image: {exc}") from exc
    return arr.astype(np.float32) / np.float32(255.0)


def encode_png(values: np.ndarray) -> bytes:
    """Encode (H,W,3) values in [0,1] as 8-bit PNG bytes; out-of-range clamps."""
    import io
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise SceneFormatError("<memory>", None, f"expected (H,W,3) image, got {arr.shape}")
    b = np.clip(np.rint(arr * 255.0), 0.0, 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(b, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def write_image(path, values: np.ndarray) -> None:
    """Encode (H,W,3) values in [0,1] as 8-bit PNG; out-of-range clamps."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise SceneFormatError(str(path), None, f"expected (H,W,3) image, got {arr.shape}")
    with open(path, "wb") as f:
        f.write(encode_png(arr))


def write_raw_plane(path, values: np.ndarray) -> None:
    """float32 little-endian row-major payload plus a `<path>.hdr` sidecar."""
    arr = np.ascontiguousarray(np.asarray(values, dtype=np.float32))
    if arr.ndim != 2:
        raise SceneFormatError(str(path), None, f"expected a 2-D plane, got shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(arr.astype("<f4").tobytes())
    with open(f"{path}.hdr", "w", encoding="ascii") as f:
        f.write(f"width {arr.shape[1]}\nheight {arr.shape[0]}\ndtype float32-le\norder row-major\n")


def read_raw_plane(path) -> np.ndarray:
    hdr_path = f"{path}.hdr"
    fields = {}
    try:
        with open(hdr_path, "r", encoding="ascii") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(maxsplit=1)
                if len(parts) != 2:
                    raise SceneFormatError(hdr_path, lineno, "expected `key value`")
                fields[parts[0]] = parts[1]
    except FileNotFoundError:
        raise SceneFormatError(hdr_path, None, "missing raw-plane sidecar") from None
    try:
        w, h = int(fields["width"]), int(fields["height"])
    except (KeyError, ValueError):
        raise SceneFormatError(hdr_path, None, "sidecar must carry integer width/height") from None
    if fields.get("dtype") != "float32-le":
        raise SceneFormatError(hdr_path, None, f"unsupported dtype {fields.get('dtype')!r}")
    with open(path, "rb") as f:
        payload = f.read()
    if len(payload) != 4 * w * h:
        raise SceneFormatError(str(path), None,
                               f"payload holds {len(payload)} bytes, expected {4 * w * h}")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float32)
