"""Dense 2D fields, FFT conventions, block averaging, noise streams and image I/O.

Images are plain ``float64`` numpy arrays of shape ``(rows, cols)``.
Most functions also accept leading batch axes.
"""
from pathlib import Path

import numpy as np


class GridError(ValueError):
    pass


def as_grid(x, name="image"):
    """Validate and return ``x`` as a finite 2D float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise GridError(f"{name} must be a non-empty 2D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise GridError(f"{name} contains non-finite values")
    return a


# --- FFT --------------------------------------------------------------------

def fft2(g):
    """Unnormalised forward 2D DFT over the last two axes."""
    return np.fft.fft2(np.asarray(g, dtype=np.float64), norm="backward")


def ifft2(s):
    """Inverse of :func:`fft2` (divides by rows*cols); returns the real part."""
    s = np.asarray(s)
    if not np.iscomplexobj(s):
        s = s.astype(np.complex128)
    return np.fft.ifft2(s, norm="backward").real


def spectrum_from_parts(re, im):
    re = np.asarray(re, dtype=np.float64)
    im = np.asarray(im, dtype=np.float64)
    if re.shape != im.shape:
        raise GridError(f"real/imaginary shape mismatch: {re.shape} vs {im.shape}")
    return re + 1j * im


# --- resampling -------------------------------------------------------------

def downsample_by_averaging(g, factor):
    """Mean over non-overlapping ``factor x factor`` blocks."""
    g = np.asarray(g, dtype=np.float64)
    factor = int(factor)
    if factor < 1:
        raise GridError("factor must be a positive integer")
    rows, cols = g.shape[-2:]
    if rows % factor or cols % factor:
        raise GridError(f"factor {factor} does not divide grid shape {(rows, cols)}")
    if factor == 1:
        return g.copy()
    lead = g.shape[:-2]
    blocks = g.reshape(lead + (rows // factor, factor, cols // factor, factor))
    return blocks.mean(axis=(-3, -1))


# --- noise ------------------------------------------------------------------

class NoiseSource:
    """Reproducible stream of standard-normal draws.

    Distinct ``stream`` ids under the same seed give statistically
    independent sequences (numpy ``SeedSequence`` spawn keys).
    """

    def __init__(self, seed, stream=0):
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self.rng = np.random.Generator(np.random.PCG64(ss))

    def normal(self, shape):
        return self.rng.standard_normal(shape)

    def field(self, rows, cols):
        return self.normal((int(rows), int(cols)))

    def substream(self, k):
        """A fresh, independent source derived from this one's seed."""
        return NoiseSource(self.seed, self.stream * 1_000_003 + 1 + int(k))

    def __repr__(self):
        return f"NoiseSource(seed={self.seed}, stream={self.stream})"


class ZeroNoise(NoiseSource):
    """Noise source pinned to zero; used to switch off injected randomness."""

    def __init__(self):
        self.seed = 0
        self.stream = -1
        self.rng = None

    def normal(self, shape):
        return np.zeros(shape)

    def substream(self, k):
        return ZeroNoise()

    def __repr__(self):
        return "ZeroNoise()"


def draw_standard_normal_field(n, rows, cols):
    return n.field(rows, cols)


# --- image I/O --------------------------------------------------------------

def read_image(path):
    """Read an 8-bit grayscale PGM (P5) or PNG into a float array in [0, 255]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix.lower() == ".pgm":
        return _read_pgm(path)
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64)


def write_image(path, g, vmin=None, vmax=None):
    """Write ``g`` as 8-bit grayscale, linearly mapping [vmin, vmax] to [0, 255].

    Returns the ``(vmin, vmax)`` actually used so callers can record it.
    """
    path = Path(path)
    g = np.asarray(g, dtype=np.float64)
    vmin = float(g.min()) if vmin is None else float(vmin)
    vmax = float(g.max()) if vmax is None else float(vmax)
    span = vmax - vmin
    scaled = np.zeros_like(g) if span <= 0 else (g - vmin) / span * 255.0
    data = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    if path.suffix.lower() == ".pgm":
        _write_pgm(path, data)
    else:
        from PIL import Image

        Image.fromarray(data, mode="L").save(path)
    return vmin, vmax


def _read_pgm(path):
    raw = path.read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while raw[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise GridError(f"{path}: only binary P5 PGM is supported")
    cols, rows, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise GridError(f"{path}: only 8-bit PGM is supported")
    pos += 1  # single whitespace after maxval
    data = np.frombuffer(raw, dtype=np.uint8, count=rows * cols, offset=pos)
    return data.reshape(rows, cols).astype(np.float64)


def _write_pgm(path, data):
    rows, cols = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data).tobytes())


def cameraman(size=256):
    """The scikit-image cameraman, block-averaged from 512x512 to ``size``.

    ``size`` must divide 512. Requires the optional ``scikit-image`` extra.
    """
    from skimage import data

    img = data.camera().astype(np.float64)
    if 512 % size:
        raise GridError("size must divide 512")
    return downsample_by_averaging(img, 512 // size)


def center_crop(g, rows, cols):
    g = np.asarray(g)
    r0 = (g.shape[0] - rows) // 2
    c0 = (g.shape[1] - cols) // 2
    if r0 < 0 or c0 < 0:
        raise GridError("crop larger than image")
    return g[r0:r0 + rows, c0:c0 + cols].copy()
