"""
SUDF Saliency - Synthetic Scenes
Two-material hyperspectral cubes with a centred salient square and its ground-truth mask.
"""
from pathlib import Path

import numpy as np

from config import SEED, debug_log
from hsio import BinaryMask, HyperspectralCube, save_cube, save_mask

DEFAULT_SIZE = 64
DEFAULT_BANDS = 8
DEFAULT_NOISE = 0.02


def material_spectra(bands: int) -> tuple[np.ndarray, np.ndarray]:
    """(background, object) reflectance spectra, well separated in every band."""
    t = np.linspace(0.0, 1.0, bands)
    background = 0.25 + 0.1 * np.sin(np.pi * t)
    foreground = 0.75 - 0.15 * t
    return background, foreground


def square_mask(size: int) -> np.ndarray:
    side = max(1, size // 4)
    start = (size - side) // 2
    mask = np.zeros((size, size), dtype=bool)
    mask[start:start + side, start:start + side] = True
    return mask


def make_scene(size: int = DEFAULT_SIZE, bands: int = DEFAULT_BANDS, seed: int = SEED,
               noise_sigma: float = DEFAULT_NOISE) -> tuple[HyperspectralCube, BinaryMask]:
    """Background material everywhere, object material in a centred square of side size/4, plus Gaussian noise."""
    if size < 4 or bands < 1:
        raise ValueError(f"Scene needs size >= 4 and bands >= 1, got size={size}, bands={bands}")
    mask = square_mask(size)
    background, foreground = material_spectra(bands)
    data = np.where(mask[None], foreground[:, None, None], background[:, None, None])
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        data = data + rng.normal(0.0, noise_sigma, size=data.shape)
    data = np.clip(data, 0.0, 1.0)
    debug_log("[synthetic make_scene] %dx%dx%d seed=%d noise=%g" % (size, size, bands, seed, noise_sigma))
    return HyperspectralCube(data=data, description=f"synthetic seed={seed}"), BinaryMask(values=mask)


def write_scene(out_dir: Path, stem: str, cube: HyperspectralCube, mask: BinaryMask) -> dict:
    """Lay a scene out as `cubes/<stem>.hdr|.raw` and `masks/<stem>.png` under out_dir."""
    out_dir = Path(out_dir)
    header_path = out_dir / "cubes" / f"{stem}.hdr"
    raw_path = out_dir / "cubes" / f"{stem}.raw"
    mask_path = out_dir / "masks" / f"{stem}.png"
    save_cube(cube, header_path, raw_path)
    save_mask(mask, mask_path)
    return {"header": header_path, "raw": raw_path, "mask": mask_path}
