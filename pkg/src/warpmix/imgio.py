"""Grayscale image file IO.

Readers: PGM (P2 ascii / P5 binary, maxval up to 65535) and grayscale
PNG (8 or 16 bit, via Pillow). Pixel values are divided by the format's
maximum so observations land in [0, 1].

Writers: 8-bit PGM P5 for images in [0, 1] (values rounded and clamped),
and a raw little-endian float32 format for signed fields (predicted
intensity, residuals): a 16-byte header -- magic "WFR1", u32 m1, u32 m2,
u32 reserved (zero) -- followed by the row-major float32 payload.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import ImageFormatError
from .grid import Image, Lattice

_F32_MAGIC = b"WFR1"


def read_image(path) -> Image:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head in (b"P2", b"P5"):
        return _read_pgm(path)
    if head == b"\x89P":
        return _read_png(path)
    raise ImageFormatError(f"{path}: not a PGM or PNG file")


def _pgm_tokens(data: bytes):
    """Yield whitespace-separated header tokens, skipping '#' comments."""
    pos = 0
    while pos < len(data):
        c = data[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            yield pos, data[pos:end]
            pos = end


def _read_pgm(path: Path) -> Image:
    data = path.read_bytes()
    toks = []
    tok_end = 0
    for pos, tok in _pgm_tokens(data):
        toks.append(tok)
        tok_end = pos + len(tok)
        if len(toks) == 4:
            break
    if len(toks) < 4:
        raise ImageFormatError(f"{path}: truncated PGM header")
    magic = toks[0]
    try:
        width, height, maxval = (int(t) for t in toks[1:4])
    except ValueError:
        raise ImageFormatError(f"{path}: non-numeric PGM header fields") from None
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"{path}: zero or negative PGM dimensions")
    if not 0 < maxval <= 65535:
        raise ImageFormatError(f"{path}: PGM maxval {maxval} out of range")
    n = width * height
    if magic == b"P5":
        payload = data[tok_end + 1 :]  # single whitespace byte after maxval
        if maxval < 256:
            raw = np.frombuffer(payload, dtype=np.uint8, count=-1)
            if raw.size < n:
                raise ImageFormatError(f"{path}: PGM payload too short")
            vals = raw[:n].astype(np.float64)
        else:
            raw = np.frombuffer(payload, dtype=">u2", count=-1)
            if raw.size < n:
                raise ImageFormatError(f"{path}: PGM payload too short")
            vals = raw[:n].astype(np.float64)
    else:
        fields = data[tok_end:].split()
        if len(fields) < n:
            raise ImageFormatError(f"{path}: PGM payload too short")
        try:
            vals = np.array([int(f) for f in fields[:n]], dtype=np.float64)
        except ValueError:
            raise ImageFormatError(f"{path}: non-numeric P2 sample") from None
    return Image(Lattice(height, width), (vals / maxval).reshape(height, width))


def _read_png(path: Path) -> Image:
    from PIL import Image as PILImage

    try:
        with PILImage.open(path) as im:
            mode = im.mode
            if mode == "L":
                arr = np.asarray(im, dtype=np.float64)
                maxval = 255.0
            elif mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64)
                maxval = 65535.0
            else:
                raise ImageFormatError(
                    f"{path}: unsupported PNG mode {mode!r} (grayscale only)"
                )
    except ImageFormatError:
        raise
    except Exception as exc:
        raise ImageFormatError(f"{path}: corrupt PNG ({exc})") from exc
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ImageFormatError(f"{path}: degenerate PNG dimensions")
    return Image(Lattice(*arr.shape), arr / maxval)


def write_image(img: Image, path) -> None:
    """Write an 8-bit binary PGM; values are clamped to [0, 1] and rounded."""
    b = np.clip(np.rint(img.values * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{img.lattice.m2} {img.lattice.m1}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(b.tobytes())


def write_field_f32(img: Image, path) -> None:
    """Write a signed field in the raw float32 format (magic WFR1)."""
    header = _F32_MAGIC + struct.pack("<III", img.lattice.m1, img.lattice.m2, 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img.values.astype("<f4").tobytes())


def read_field_f32(path) -> Image:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != _F32_MAGIC:
        raise ImageFormatError(f"{path}: not a WFR1 float field")
    m1, m2, _ = struct.unpack("<III", data[4:16])
    if m1 < 2 or m2 < 2:
        raise ImageFormatError(f"{path}: degenerate field dimensions")
    vals = np.frombuffer(data[16:], dtype="<f4", count=-1)
    if vals.size < m1 * m2:
        raise ImageFormatError(f"{path}: float field payload too short")
    return Image(Lattice(m1, m2), vals[: m1 * m2].astype(np.float64).reshape(m1, m2))
