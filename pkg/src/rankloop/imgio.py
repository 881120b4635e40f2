"""8-bit PNG image I/O on unit-interval float arrays.

The interchange contract: pixels decode as v/255 into [0, 1] and encode as
round-half-up(v*255), so a save/load round trip moves any value by at most
1/510.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import ImageDecodeError, UnsupportedImageError
from .validation import check_image

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _png_bit_depth(path: Path) -> int:
    """Bit depth straight from the IHDR chunk; raises if the header is not PNG."""
    with open(path, "rb") as fh:
        head = fh.read(25)
    if len(head) < 25 or not head.startswith(_PNG_SIGNATURE):
        raise UnsupportedImageError(f"{path}: not a PNG file")
    length, chunk = struct.unpack(">I4s", head[8:16])
    if chunk != b"IHDR" or length < 13:
        raise ImageDecodeError(f"{path}: malformed PNG header")
    return head[24]


def load_image(path) -> np.ndarray:
    """Load an 8-bit RGB or grayscale PNG as an (H, W, C) float64 array in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    depth = _png_bit_depth(path)
    if depth != 8:
        raise UnsupportedImageError(f"{path}: unsupported bit depth {depth} (only 8-bit)")
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                raise UnsupportedImageError(
                    f"{path}: unsupported color mode {im.mode!r} (only L or RGB)"
                )
            raw = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise ImageDecodeError(f"{path}: cannot decode image: {exc}") from exc
    except OSError as exc:
        raise ImageDecodeError(f"{path}: truncated or corrupt image: {exc}") from exc
    arr = raw.astype(np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def save_image(img, path) -> None:
    """Write an (H, W, C) unit-interval image as an 8-bit PNG.

    Quantization is round-half-up of v*255, clamped to [0, 255].
    """
    arr = check_image(img, name="save_image input")
    quant = np.floor(arr * 255.0 + 0.5)
    quant = np.clip(quant, 0, 255).astype(np.uint8)
    if quant.shape[2] == 1:
        pil = Image.fromarray(quant[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(quant, mode="RGB")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pil.save(path, format="PNG")
