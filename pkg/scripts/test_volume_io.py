#!/usr/bin/env python3
"""
Tests for data files, image output and provenance records
"""

import json
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from admm import LabelMap
from config import RunConfig
from operators import ConvolutionKernel, DataVolume, RadonGeometry, SphericalGeometry
from volume_io import (
    VolumeFormatError, label_palette, load_csv, load_image, load_labels, load_volume,
    provenance, save_csv, save_image, save_labels, save_volume, write_json_lines,
)


def test_csv_keeps_full_precision(tmp_path):
    values = np.array([[1 / 3, np.pi], [1e-300, -2.5e17]])
    path = save_csv(tmp_path / "values.csv", values)
    assert np.array_equal(load_csv(path), values)


def test_radon_volume_file_pair(tmp_path):
    geometry = RadonGeometry.uniform(5, 16)
    rng = np.random.default_rng(0)
    volume = DataVolume("radon", rng.normal(size=geometry.shape), geometry)
    csv_path, sidecar_path = save_volume(tmp_path / "sino.csv", volume, extra={"image_shape": [16, 16]})
    assert sidecar_path.name == "sino.json"
    loaded, kernel = load_volume(csv_path)
    assert kernel is None
    assert loaded.geometry == geometry
    assert np.array_equal(loaded.values, volume.values)
    assert json.loads(sidecar_path.read_text())["image_shape"] == [16, 16]


def test_spherical_and_blur_volumes(tmp_path):
    geometry = SphericalGeometry.uniform(3, 8)
    save_volume(tmp_path / "sph.csv", DataVolume("spherical", np.ones(geometry.shape), geometry))
    assert load_volume(tmp_path / "sph.csv")[0].geometry == geometry

    kernel = ConvolutionKernel.motion(5)
    save_volume(tmp_path / "blur.csv", DataVolume("image", np.zeros((8, 8, 3))), kernel)
    loaded, loaded_kernel = load_volume(tmp_path / "blur.csv")
    assert loaded.values.shape == (8, 8, 3)
    assert loaded_kernel == kernel


def test_missing_sidecar_is_an_error(tmp_path):
    save_csv(tmp_path / "orphan.csv", np.zeros((3, 3)))
    with pytest.raises(VolumeFormatError):
        load_volume(tmp_path / "orphan.csv")


def test_sidecar_shape_mismatch_is_an_error(tmp_path):
    geometry = RadonGeometry.uniform(4, 16)
    csv_path, sidecar_path = save_volume(tmp_path / "sino.csv", DataVolume("radon", np.zeros(geometry.shape), geometry))
    sidecar = json.loads(sidecar_path.read_text())
    sidecar["shape"] = [3, 3]
    sidecar_path.write_text(json.dumps(sidecar))
    with pytest.raises(VolumeFormatError):
        load_volume(csv_path)


def test_image_output(tmp_path):
    image = np.linspace(0.0, 1.0, 64).reshape(8, 8)
    path = save_image(tmp_path / "image.png", image)
    loaded = load_image(path)
    assert loaded.shape == (8, 8)
    assert loaded[0, 0] == 0.0 and loaded[-1, -1] == 1.0
    assert not save_image(tmp_path / "flat.png", np.ones((4, 4))).stat().st_size == 0


def test_label_png_is_deterministic(tmp_path):
    labels = LabelMap(np.array([[0, 1, 1], [2, 2, 3]]), 4)
    png_a, csv_a = save_labels(tmp_path / "a" / "labels", labels)
    png_b, _ = save_labels(tmp_path / "b" / "labels", labels)
    assert png_a.read_bytes() == png_b.read_bytes()
    with Image.open(png_a) as img:
        assert img.mode == "P"
        assert np.asarray(img).tolist() == labels.labels.tolist()
    assert np.array_equal(load_labels(csv_a).labels, labels.labels)
    assert load_labels(csv_a).count == 4


def test_palette():
    palette = label_palette()
    assert palette.shape == (256, 3)
    assert palette[0].tolist() == [0, 0, 0]
    assert len({tuple(c) for c in palette[:16]}) == 16


def test_json_lines(tmp_path):
    path = write_json_lines(tmp_path / "log.jsonl", [{"iteration": 1}, {"iteration": 2}])
    lines = path.read_text().splitlines()
    assert [json.loads(line)["iteration"] for line in lines] == [1, 2]


def test_provenance_fields():
    config = RunConfig()
    record = provenance("reconstruct", config, {"wall_time": 1.5})
    assert record["command"] == "reconstruct"
    assert record["rng"] == "PCG64"
    assert record["config_sha256"] == config.digest()
    assert record["wall_time"] == 1.5
    json.dumps(record)
