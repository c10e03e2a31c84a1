"""Image tensors, color conversions, and bit-exact codecs.

Images are float32 numpy arrays of shape (3, H, W) with values in [0, 1].
Grayscale/luminance maps are (H, W). YUV tensors share the (3, H, W) layout
but are exempt from the [0, 1] range (chroma channels are signed).

Color math uses Rec.601 luma weights and the matching full-range YUV
matrices. 8-bit quantization is round-half-away-from-zero so the PPM codec
and the base64 wire codec agree bit for bit.
"""

from __future__ import annotations

import base64

import numpy as np

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)

# Rec.601 full-range RGB -> YUV with U = 0.492 (B - Y), V = 0.877 (R - Y);
# built from the luma weights so the chroma rows sum to exactly zero and
# gray pixels map to U = V = 0. Inverse computed once in float64 so the
# round trip holds to ~1e-7.
_Y = LUMA_WEIGHTS
RGB_TO_YUV = np.array(
    [
        _Y,
        0.492 * (np.array([0.0, 0.0, 1.0]) - _Y),
        0.877 * (np.array([1.0, 0.0, 0.0]) - _Y),
    ],
    dtype=np.float64,
)
YUV_TO_RGB = np.linalg.inv(RGB_TO_YUV)


class CodecError(ValueError):
    """Malformed image file or wire payload."""


class PpmFormatError(CodecError):
    """PPM header is not a binary P6 / maxval-255 header."""


class PpmTruncatedError(CodecError):
    """PPM pixel payload is shorter than the header promises."""


def validate_image(image: np.ndarray) -> np.ndarray:
    """Check shape (3, H, W), finiteness, and [0, 1] range; return float32."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[0] != 3 or arr.shape[1] < 1 or arr.shape[2] < 1:
        raise ValueError(f"expected (3, H, W) image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image values outside [0, 1]")
    return arr


def clamp_unit(image: np.ndarray) -> np.ndarray:
    """Clamp every element into [0, 1]. Input must be finite."""
    arr = np.asarray(image, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot clamp non-finite values")
    return np.clip(arr, 0.0, 1.0)


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Rec.601 luminance, shape (H, W)."""
    arr = validate_image(image)
    w = LUMA_WEIGHTS.astype(np.float32)
    return (w[0] * arr[0] + w[1] * arr[1] + w[2] * arr[2]).astype(np.float32)


def rgb_to_yuv(image: np.ndarray) -> np.ndarray:
    """Full-range Rec.601 RGB -> YUV. Output channels may leave [0, 1]."""
    arr = np.asarray(image, dtype=np.float64)
    return np.einsum("ij,jhw->ihw", RGB_TO_YUV, arr).astype(np.float32)


def yuv_to_rgb(image: np.ndarray) -> np.ndarray:
    """Inverse of rgb_to_yuv. Result is NOT clamped."""
    arr = np.asarray(image, dtype=np.float64)
    return np.einsum("ij,jhw->ihw", YUV_TO_RGB, arr).astype(np.float32)


def quantize_u8(image: np.ndarray) -> np.ndarray:
    """8-bit quantization round(x*255), half away from zero (values are >= 0)."""
    arr = validate_image(image)
    return np.floor(arr.astype(np.float64) * 255.0 + 0.5).astype(np.uint8)


def _u8_to_unit(arr: np.ndarray) -> np.ndarray:
    return (arr.astype(np.float32) / np.float32(255.0)).astype(np.float32)


def write_ppm(image: np.ndarray, path: str) -> None:
    """Write a binary P6 PPM with maxval 255."""
    q = quantize_u8(image)  # (3, H, W)
    h, w = q.shape[1], q.shape[2]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    payload = np.transpose(q, (1, 2, 0)).tobytes()  # interleave to H x W x 3
    with open(path, "wb") as f:
        f.write(header + payload)


def read_ppm(path: str) -> np.ndarray:
    """Read a binary P6 PPM (maxval 255) into an image tensor (values k/255)."""
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(b"P6"):
        raise PpmFormatError("not a binary P6 PPM")
    # Header: magic, width, height, maxval, each followed by whitespace.
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PpmFormatError("truncated PPM header")
        fields.append(blob[start:pos])
    if pos >= len(blob):
        raise PpmFormatError("truncated PPM header")
    pos += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = (int(x) for x in fields)
    except ValueError as exc:
        raise PpmFormatError("non-numeric PPM header field") from exc
    if w < 1 or h < 1:
        raise PpmFormatError("non-positive PPM dimensions")
    if maxval != 255:
        raise PpmFormatError(f"unsupported maxval {maxval}, need 255")
    payload = blob[pos:]
    need = w * h * 3
    if len(payload) < need:
        raise PpmTruncatedError(f"payload has {len(payload)} bytes, need {need}")
    q = np.frombuffer(payload[:need], dtype=np.uint8).reshape(h, w, 3)
    return _u8_to_unit(np.transpose(q, (2, 0, 1)))


def encode_rgb8_base64(image: np.ndarray) -> str:
    """Base64 of raw interleaved RGB8, row-major H x W x 3."""
    q = quantize_u8(image)
    return base64.b64encode(np.transpose(q, (1, 2, 0)).tobytes()).decode("ascii")


def decode_rgb8_base64(text: str, height: int, width: int) -> np.ndarray:
    """Inverse of encode_rgb8_base64 for known dimensions."""
    try:
        raw = base64.b64decode(text, validate=True)
    except Exception as exc:
        raise CodecError("invalid base64 payload") from exc
    need = height * width * 3
    if len(raw) != need:
        raise CodecError(f"payload has {len(raw)} bytes, expected {need}")
    q = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)
    return _u8_to_unit(np.transpose(q, (2, 0, 1)))
