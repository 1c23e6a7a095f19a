#!/usr/bin/env python3
"""
File formats
CSV arrays with 17 significant digits, data volumes with a JSON geometry
sidecar, grayscale images and palette label maps via Pillow, JSON and JSON
lines, and the provenance record written next to every run.
"""

import json
import logging
import os
import platform
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple

import numpy as np
from PIL import Image

from admm import LabelMap
from config import RunConfig, __version__
from operators import ConvolutionKernel, DataVolume, RadonGeometry, SphericalGeometry

logger = logging.getLogger(__name__)

CSV_FORMAT = "%.17g"
SIDECAR_SUFFIX = ".json"
RNG_ALGORITHM = "PCG64"


class VolumeFormatError(ValueError):
    """Missing or inconsistent data file or sidecar."""


def save_csv(path: Path, values: np.ndarray) -> Path:
    path = Path(path)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, np.newaxis]
    if values.ndim != 2:
        raise VolumeFormatError(f"CSV output needs a 1D or 2D array, got shape {values.shape}")
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, values, fmt=CSV_FORMAT, delimiter=",")
    return path


def load_csv(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise VolumeFormatError(f"File not found: {path}")
    return np.loadtxt(path, delimiter=",", ndmin=2)


def _sidecar(path: Path) -> Path:
    return Path(path).with_suffix(SIDECAR_SUFFIX)


def geometry_from_dict(data: Dict[str, Any]):
    kind = data.get("kind")
    try:
        if kind == "radon":
            return RadonGeometry(tuple(data["angles"]), tuple(data["offsets"]))
        if kind == "spherical":
            return SphericalGeometry(tuple(data["center_angles"]), tuple(data["radii"]))
    except KeyError as e:
        raise VolumeFormatError(f"Geometry sidecar lacks field {e}") from e
    raise VolumeFormatError(f"Unknown geometry kind '{kind}'")


def kernel_from_dict(data: Optional[Dict[str, Any]]) -> Optional[ConvolutionKernel]:
    if not data:
        return None
    if data["kind"] == "gaussian":
        return ConvolutionKernel.gaussian(data["parameter"])
    if data["kind"] == "motion":
        return ConvolutionKernel.motion(int(data["parameter"]))
    if data["kind"] == "delta":
        return ConvolutionKernel.delta()
    raise VolumeFormatError(f"Unknown kernel kind '{data['kind']}'")


def save_volume(path: Path, volume: DataVolume, kernel: Optional[ConvolutionKernel] = None,
                extra: Optional[Dict[str, Any]] = None) -> Tuple[Path, Path]:
    """
    Write a data volume as CSV plus a JSON sidecar holding its geometry.

    Args:
        path: CSV path; the sidecar uses the same stem with .json
        volume: data to write
        kernel: blur kernel for image-kind data
        extra: additional sidecar fields

    Returns:
        (csv path, sidecar path)
    """
    values = volume.values
    save_csv(path, values.reshape(values.shape[0], -1))
    sidecar = {
        "kind": volume.kind,
        "shape": list(values.shape),
        "geometry": volume.geometry.to_dict() if volume.geometry is not None else None,
        "kernel": kernel.to_dict() if kernel is not None else None,
    }
    sidecar.update(extra or {})
    write_json(_sidecar(path), sidecar)
    logger.info(f"Wrote {volume.kind} data {values.shape} to {path}")
    return Path(path), _sidecar(path)


def load_volume(path: Path) -> Tuple[DataVolume, Optional[ConvolutionKernel]]:
    """Read a data volume and its sidecar; a missing sidecar is an error."""
    path = Path(path)
    sidecar_path = _sidecar(path)
    if not sidecar_path.exists():
        raise VolumeFormatError(f"Geometry sidecar {sidecar_path} not found for {path}")
    with open(sidecar_path, "r", encoding="utf-8") as f:
        sidecar = json.load(f)
    values = load_csv(path)
    shape = tuple(sidecar.get("shape", values.shape))
    if int(np.prod(shape)) != values.size:
        raise VolumeFormatError(f"{path} holds {values.size} values but the sidecar declares shape {shape}")
    values = values.reshape(shape)
    kind = sidecar.get("kind")
    geometry = geometry_from_dict(sidecar["geometry"]) if kind in ("radon", "spherical") else None
    try:
        volume = DataVolume(kind, values, geometry)
    except ValueError as e:
        raise VolumeFormatError(f"Invalid data volume {path}: {e}") from e
    return volume, kernel_from_dict(sidecar.get("kernel"))


def save_image(path: Path, image: np.ndarray, value_range: Optional[Tuple[float, float]] = None) -> Path:
    """Write an image as 8-bit PGM/PNG (RGB for 3 channels), scaled to value_range."""
    path = Path(path)
    image = np.asarray(image, dtype=np.float64)
    low, high = value_range if value_range is not None else (float(image.min()), float(image.max()))
    scale = 255.0 / (high - low) if high > low else 0.0
    pixels = np.clip(np.rint((image - low) * scale), 0, 255).astype(np.uint8)
    if pixels.ndim == 3 and pixels.shape[2] == 1:
        pixels = pixels[:, :, 0]
    if pixels.ndim == 3 and pixels.shape[2] != 3:
        raise VolumeFormatError(f"Only 1- or 3-channel images can be written, got shape {image.shape}")
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path)
    return path


def load_image(path: Path) -> np.ndarray:
    """Read CSV (raw values) or an 8-bit image scaled to [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise VolumeFormatError(f"File not found: {path}")
    if path.suffix.lower() == ".csv":
        sidecar = _sidecar(path)
        values = load_csv(path)
        if sidecar.exists():
            with open(sidecar, "r", encoding="utf-8") as f:
                shape = tuple(json.load(f).get("shape", values.shape))
            values = values.reshape(shape)
        return values
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("L")
        return np.asarray(img, dtype=np.float64) / 255.0


def label_palette(count: int = 256) -> np.ndarray:
    """Fixed RGB palette keyed by label index; label 0 is black."""
    index = np.arange(count)
    palette = np.stack([(index * 97) % 256, (index * 57 + 80) % 256, (index * 173 + 160) % 256], axis=1)
    palette[0] = 0
    return palette.astype(np.uint8)


def save_labels(path: Path, labels: LabelMap) -> Tuple[Path, Path]:
    """
    Write a label map as a palette PNG and as a raw integer CSV.

    Labels above 255 wrap around in the PNG; the CSV keeps them exact.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.ascontiguousarray(labels.labels % 256, dtype=np.uint8)
    png = Image.frombytes("P", (pixels.shape[1], pixels.shape[0]), pixels.tobytes())
    png.putpalette(label_palette().ravel().tolist())
    png_path = path.with_suffix(".png")
    png.save(png_path)
    csv_path = path.with_suffix(".csv")
    np.savetxt(csv_path, labels.labels, fmt="%d", delimiter=",")
    return png_path, csv_path


def load_labels(path: Path) -> LabelMap:
    labels = load_csv(path).astype(np.int64)
    return LabelMap(labels, int(np.unique(labels).size))


def write_json(path: Path, data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, ensure_ascii=False)
    return path


def write_json_lines(path: Path, records: Iterable[Dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record) + "\n")
    return path


def provenance(command: str, config: RunConfig, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Everything needed to rerun a command bit-identically."""
    record = {
        "command": command,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "threads": config.threads,
        "cpu_count": os.cpu_count(),
        "rng": RNG_ALGORITHM,
        "seed": config.noise.seed,
        "config": config.to_dict(),
        "config_sha256": config.digest(),
    }
    record.update(extra or {})
    return record
