"""Frame and mask file I/O.

Frame sequences are directories of sequentially numbered image files
(``%06d.ppm`` / ``%06d.png``), sorted numerically. Binary PPM (P6,
maxval 255) is the native, bit-exact format; PNG works when pillow is
installed. Candidate-mask debug dumps are written as PBM (P4), one file
per frame, foreground bits set.
"""

import logging
import re
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .errors import DataError
from .imaging import ColorSpace, Frame

logger = logging.getLogger(__name__)

_NUM_RE = re.compile(r"(\d+)")


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 PPM with maxval 255 into a (h, w, 3) uint8 array."""
    data = Path(path).read_bytes()
    if not data.startswith(b"P6"):
        raise DataError(f"{path}: not a binary PPM (P6)")
    # Header: magic, width, height, maxval, separated by whitespace;
    # '#' starts a comment running to end of line.
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PPM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError:
        raise DataError(f"{path}: malformed PPM header {fields!r}") from None
    if maxval != 255:
        raise DataError(f"{path}: PPM maxval must be 255, got {maxval}")
    need = width * height * 3
    raw = data[pos : pos + need]
    if len(raw) != need:
        raise DataError(f"{path}: PPM payload short ({len(raw)} of {need} bytes)")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)


def write_ppm(path, pixels: np.ndarray) -> None:
    """Write (h, w, 3) pixel values as binary P6, rounding to uint8."""
    arr = np.asarray(pixels)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) pixels, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    h, w, _ = arr.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(arr.tobytes())


def write_pbm(path, mask: np.ndarray) -> None:
    """Write a boolean mask as binary P4; True pixels become set bits."""
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    packed = np.packbits(m, axis=1)
    with open(path, "wb") as f:
        f.write(b"P4\n%d %d\n" % (w, h))
        f.write(packed.tobytes())


def read_pbm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P4"):
        raise DataError(f"{path}: not a binary PBM (P4)")
    pos = 2
    fields = []
    while len(fields) < 2:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1
    w, h = (int(f) for f in fields)
    stride = (w + 7) // 8
    raw = np.frombuffer(data[pos : pos + stride * h], dtype=np.uint8)
    bits = np.unpackbits(raw.reshape(h, stride), axis=1)[:, :w]
    return bits.astype(bool)


def read_png(path) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError:
        raise DataError(
            f"{path}: PNG support requires pillow (pip install pyrovigil[png])"
        ) from None
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return read_ppm(path)
    if path.suffix.lower() == ".png":
        return read_png(path)
    raise DataError(f"{path}: unsupported image format")


def load_frame(path, index: Optional[int] = None) -> Frame:
    if index is None:
        m = _NUM_RE.search(Path(path).stem)
        index = int(m.group(1)) if m else 0
    return Frame(read_image(path).astype(np.float64), ColorSpace.RGB, index)


def list_frame_files(directory):
    """Image files in a frame directory, sorted by their numeric stem."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    entries = []
    for p in sorted(directory.iterdir()):
        if p.suffix.lower() not in (".ppm", ".png"):
            continue
        m = _NUM_RE.search(p.stem)
        if not m:
            raise DataError(f"{p}: frame filename carries no sequence number")
        entries.append((int(m.group(1)), p))
    entries.sort(key=lambda e: e[0])
    for (na, pa), (nb, pb) in zip(entries, entries[1:]):
        if nb == na:
            raise DataError(f"duplicate frame index {na}: {pa} and {pb}")
    return entries


def frame_dir_source(directory, skip_bad: bool = False) -> Iterator[Frame]:
    """Yield frames from a numbered image directory in index order.

    With `skip_bad` a frame that fails to decode is logged and skipped
    instead of aborting the stream.
    """
    for index, path in list_frame_files(directory):
        try:
            yield load_frame(path, index)
        except DataError:
            if not skip_bad:
                raise
            logger.warning("skipping undecodable frame %s", path)
