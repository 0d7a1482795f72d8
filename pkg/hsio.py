"""
SUDF Saliency - Hyperspectral I/O
Loads, normalizes and writes hyperspectral cubes (ENVI header + BSQ float32), binary masks and saliency maps.
"""
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, PngImagePlugin

from config import debug_log


class HsioError(ValueError):
    """Base error for cube, mask and saliency file handling."""


class HeaderError(HsioError):
    """Malformed or unsupported ENVI header."""


class CubeSizeError(HsioError):
    """Raw file size does not match the header dimensions."""


class MaskFormatError(HsioError):
    """Mask image is not an 8-bit grayscale PNG."""


# ENVI codes accepted by this reader
ENVI_FLOAT32 = 4
ENVI_BSQ = "bsq"
ENVI_LITTLE_ENDIAN = 0
RAW_DTYPE = np.dtype("<f4")
RAW_SUFFIXES = (".raw", ".dat", ".img", ".bin", "")


# ─── Domain Types ────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class CubeHeader:
    samples: int
    lines: int
    bands: int
    data_type: int = ENVI_FLOAT32
    interleave: str = ENVI_BSQ
    byte_order: int = ENVI_LITTLE_ENDIAN
    wavelengths: Optional[tuple[float, ...]] = None
    description: str = ""

    def __post_init__(self):
        for name in ("samples", "lines", "bands"):
            if getattr(self, name) < 1:
                raise HeaderError(f"Header field '{name}' must be >= 1, got {getattr(self, name)}")
        if self.data_type != ENVI_FLOAT32:
            raise HeaderError(f"Unsupported data type {self.data_type} (only 4 = 32-bit float)")
        if self.interleave != ENVI_BSQ:
            raise HeaderError(f"Unsupported interleave '{self.interleave}' (only bsq)")
        if self.byte_order != ENVI_LITTLE_ENDIAN:
            raise HeaderError(f"Unsupported byte order {self.byte_order} (only 0 = little-endian)")
        if self.wavelengths is not None and len(self.wavelengths) != self.bands:
            raise HeaderError(f"Header lists {len(self.wavelengths)} wavelengths for {self.bands} bands")

    @property
    def raw_size(self) -> int:
        return self.samples * self.lines * self.bands * RAW_DTYPE.itemsize


@dataclass(frozen=True, eq=False)
class HyperspectralCube:
    """Reflectance volume stored (band, row, col) as 32-bit floats."""

    data: np.ndarray
    wavelengths: Optional[np.ndarray] = None
    description: str = ""

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3 or data.size == 0:
            raise HsioError(f"Cube data must be a non-empty (bands, rows, cols) array, got shape {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        if self.wavelengths is not None:
            wl = np.asarray(self.wavelengths, dtype=np.float64)
            if wl.shape != (data.shape[0],):
                raise HsioError(f"Expected {data.shape[0]} wavelengths, got {wl.size}")
            if np.any(np.diff(wl) <= 0):
                raise HsioError("Wavelengths must be strictly increasing")
            wl.setflags(write=False)
            object.__setattr__(self, "wavelengths", wl)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class BinaryMask:
    values: np.ndarray = field()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=bool)
        if values.ndim != 2:
            raise MaskFormatError(f"Mask must be 2-D, got shape {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


# ─── ENVI Header ─────────────────────────────────────────────────────────────

_KEY_VALUE = re.compile(r"^\s*([^=]+?)\s*=\s*(.*)$")


def parse_header(text: str) -> CubeHeader:
    """Parse ENVI header text. Keys are case-insensitive; `{...}` values may span lines."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ENVI":
        raise HeaderError("Header must begin with the line 'ENVI'")

    fields: dict[str, str] = {}
    pending_key, pending_value = None, []
    for lineno, line in enumerate(lines[1:], start=2):
        if pending_key is not None:
            pending_value.append(line)
            if "}" in line:
                fields[pending_key] = " ".join(pending_value)
                pending_key, pending_value = None, []
            continue
        if not line.strip() or line.lstrip().startswith(";"):
            continue
        match = _KEY_VALUE.match(line)
        if not match:
            raise HeaderError(f"Malformed header line {lineno}: {line!r}")
        key, value = match.group(1).strip().lower(), match.group(2).strip()
        if value.startswith("{") and "}" not in value:
            pending_key, pending_value = key, [value]
            continue
        fields[key] = value
    if pending_key is not None:
        raise HeaderError(f"Unterminated '{{' for header key '{pending_key}'")

    for required in ("samples", "lines", "bands"):
        if required not in fields:
            raise HeaderError(f"Header is missing '{required}'")

    def as_int(key: str, default: Optional[int] = None) -> int:
        if key not in fields:
            if default is None:
                raise HeaderError(f"Header is missing '{key}'")
            return default
        try:
            return int(fields[key])
        except ValueError:
            raise HeaderError(f"Header value for '{key}' is not an integer: {fields[key]!r}") from None

    if as_int("header offset", 0) != 0:
        raise HeaderError("Non-zero 'header offset' is not supported")

    wavelengths = None
    if "wavelength" in fields:
        body = fields["wavelength"].strip().lstrip("{").rstrip("}")
        try:
            wavelengths = tuple(float(v) for v in body.replace("\n", " ").split(",") if v.strip())
        except ValueError:
            raise HeaderError(f"Unparsable wavelength list: {fields['wavelength']!r}") from None

    return CubeHeader(
        samples=as_int("samples"),
        lines=as_int("lines"),
        bands=as_int("bands"),
        data_type=as_int("data type", ENVI_FLOAT32),
        interleave=fields.get("interleave", ENVI_BSQ).strip().lower(),
        byte_order=as_int("byte order", ENVI_LITTLE_ENDIAN),
        wavelengths=wavelengths,
        description=fields.get("description", "").strip().lstrip("{").rstrip("}").strip(),
    )


def format_header(header: CubeHeader) -> str:
    lines = ["ENVI"]
    if header.description:
        lines.append(f"description = {{{header.description}}}")
    lines += [
        f"samples = {header.samples}",
        f"lines = {header.lines}",
        f"bands = {header.bands}",
        "header offset = 0",
        f"data type = {header.data_type}",
        f"interleave = {header.interleave}",
        f"byte order = {header.byte_order}",
    ]
    if header.wavelengths is not None:
        # repr() keeps the float exact on re-parse
        lines.append("wavelength = {" + ", ".join(repr(float(w)) for w in header.wavelengths) + "}")
    return "\n".join(lines) + "\n"


def read_header(header_path: Path) -> CubeHeader:
    header_path = Path(header_path)
    try:
        text = header_path.read_text(encoding="utf-8")
    except OSError as e:
        raise HeaderError(f"Cannot read header {header_path}: {e}") from None
    return parse_header(text)


def resolve_raw_path(header_path: Path) -> Path:
    """Find the raw payload next to a header; returns `<stem>.raw` when none exists."""
    header_path = Path(header_path)
    for suffix in RAW_SUFFIXES:
        candidate = header_path.with_suffix(suffix)
        if candidate != header_path and candidate.is_file():
            return candidate
    return header_path.with_suffix(".raw")


# ─── Cubes ───────────────────────────────────────────────────────────────────

def load_cube(header_path: Path, raw_path: Path) -> HyperspectralCube:
    """Read an ENVI float32 BSQ cube without normalizing it."""
    header = read_header(header_path)
    raw_path = Path(raw_path)
    if not raw_path.is_file():
        raise FileNotFoundError(f"Raw cube file not found: {raw_path}")
    size = raw_path.stat().st_size
    if size != header.raw_size:
        raise CubeSizeError(
            f"{raw_path} holds {size} bytes; header {header_path} requires "
            f"{header.samples}x{header.lines}x{header.bands}x4 = {header.raw_size}"
        )
    data = np.fromfile(raw_path, dtype=RAW_DTYPE).reshape(header.bands, header.lines, header.samples)
    debug_log("[hsio load_cube] %s: %d bands, %dx%d" % (raw_path.name, header.bands, header.lines, header.samples))
    wavelengths = np.array(header.wavelengths) if header.wavelengths is not None else None
    return HyperspectralCube(data=data, wavelengths=wavelengths, description=header.description)


def save_cube(cube: HyperspectralCube, header_path: Path, raw_path: Path) -> None:
    header = CubeHeader(
        samples=cube.width,
        lines=cube.height,
        bands=cube.bands,
        wavelengths=tuple(cube.wavelengths.tolist()) if cube.wavelengths is not None else None,
        description=cube.description,
    )
    Path(header_path).parent.mkdir(parents=True, exist_ok=True)
    Path(header_path).write_text(format_header(header), encoding="utf-8")
    cube.data.astype(RAW_DTYPE, copy=False).tofile(raw_path)


def normalize_cube(cube: HyperspectralCube) -> HyperspectralCube:
    """Global min-max scaling to [0, 1] over all bands jointly; a constant cube maps to zeros."""
    values = cube.data.astype(np.float64)
    lo, hi = values.min(), values.max()
    if hi == lo:
        debug_log("[hsio normalize_cube] constant cube (%g); mapping to zeros" % lo)
        scaled = np.zeros_like(values)
    else:
        scaled = np.clip((values - lo) / (hi - lo), 0.0, 1.0)
    return HyperspectralCube(data=scaled, wavelengths=cube.wavelengths, description=cube.description)


def render_pseudo_rgb(cube: HyperspectralCube) -> np.ndarray:
    """
    Band-binning preview: three contiguous thirds of the bands, each averaged into one channel
    (channel 0 = first third). Each channel gets its own min-max rescale to 0..255;
    a constant channel renders as 128, so a constant cube is mid-gray.
    """
    if cube.bands < 3:
        raise HsioError(f"Pseudo-RGB needs at least 3 bands, got {cube.bands}")
    thirds = np.array_split(np.arange(cube.bands), 3)
    values = cube.data.astype(np.float64)
    channels = np.stack([values[idx].mean(axis=0) for idx in thirds], axis=-1)
    lo, hi = channels.min(axis=(0, 1)), channels.max(axis=(0, 1))
    span = np.where(hi > lo, hi - lo, 1.0)
    scaled = np.floor((channels - lo) / span * 255.0 + 0.5)
    return np.where(hi > lo, scaled, 128.0).astype(np.uint8)


# ─── Masks ───────────────────────────────────────────────────────────────────

def load_mask(path: Path) -> BinaryMask:
    """8-bit grayscale PNG; pixels above 127 are salient."""
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                raise MaskFormatError(f"{path}: expected 8-bit grayscale (mode L), got mode {img.mode}")
            pixels = np.asarray(img, dtype=np.uint8)
    except OSError as e:
        raise MaskFormatError(f"Cannot read mask {path}: {e}") from None
    return BinaryMask(values=pixels > 127)


def save_mask(mask: BinaryMask, path: Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(mask.values, 255, 0).astype(np.uint8)).save(path)


# ─── Saliency Maps ───────────────────────────────────────────────────────────

def quantize_saliency(saliency: np.ndarray) -> np.ndarray:
    """round(value * 255) with halves rounded up, as uint8."""
    return np.floor(np.asarray(saliency, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)


def save_saliency(saliency: np.ndarray, png_path: Path, raw_path: Optional[Path] = None,
                  provenance: Optional[list[str]] = None) -> None:
    saliency = np.asarray(saliency, dtype=np.float64)
    if saliency.ndim != 2:
        raise HsioError(f"Saliency map must be 2-D, got shape {saliency.shape}")
    if not np.all(np.isfinite(saliency)) or saliency.min() < 0.0 or saliency.max() > 1.0:
        raise HsioError("Saliency values must lie in [0, 1]")
    png_info = None
    if provenance:
        png_info = PngImagePlugin.PngInfo()
        png_info.add_text("sudf:config", "; ".join(provenance))
    Path(png_path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(quantize_saliency(saliency)).save(png_path, pnginfo=png_info)
    if raw_path is not None:
        saliency.astype(RAW_DTYPE).tofile(raw_path)


def load_saliency_png(path: Path) -> np.ndarray:
    """Read a saliency PNG back as float64 values in [0, 1]."""
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                raise MaskFormatError(f"{path}: expected 8-bit grayscale saliency PNG, got mode {img.mode}")
            pixels = np.asarray(img, dtype=np.uint8)
    except OSError as e:
        raise HsioError(f"Cannot read saliency map {path}: {e}") from None
    return pixels.astype(np.float64) / 255.0


def load_saliency_raw(path: Path, height: int, width: int) -> np.ndarray:
    values = np.fromfile(path, dtype=RAW_DTYPE)
    if values.size != height * width:
        raise CubeSizeError(f"{path} holds {values.size} floats, expected {height}x{width}")
    return values.reshape(height, width)
