#!/usr/bin/env python3
"""
Potts Reconstruction - Main Application
Command-line front end: phantom generation, forward simulation, joint
reconstruction and segmentation, FBP baseline, and evaluation.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import scipy.fft

from admm import DivergenceError, PottsAdmm, extract_labels
from config import ConfigError, RunConfig, apply_overrides, load_config
from metrics import psnr, rand_index, threshold_to_levels
from neighborhoods import NeighborhoodSystem, build_system, derive_weights, isotropy_ratio
from operators import Convolution, DataVolume, Identity, build_operator, radon_operator, spherical_operator
from phantoms import Phantom, add_noise, geometric_shapes, noise_sigma, shepp_logan
from potts1d import solve_potts_1d
from tikhonov import TikhonovProblem, filtered_backprojection, solve_cg, solve_deconv_frequency, solve_radon_filtered
import volume_io

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

CUTOFF_STEP = 0.01


def make_phantom(config: RunConfig) -> Phantom:
    if config.phantom == "geometric":
        return geometric_shapes(config.image_size)
    return shepp_logan(config.image_size, modified=config.phantom == "shepp-logan")


def _output_dir(config: RunConfig) -> Path:
    out = Path(config.paths.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_input(config: RunConfig, what: str) -> Path:
    if not config.paths.input:
        raise ConfigError(f"No {what} given; set --input or [paths] input")
    path = Path(config.paths.input)
    if not path.exists():
        raise ConfigError(f"{what.capitalize()} not found: {path}")
    return path


def cmd_phantom(config: RunConfig) -> List[Path]:
    """Write a phantom image and its ground-truth label map."""
    out = _output_dir(config)
    phantom = make_phantom(config)
    files = list(volume_io.save_volume(out / "phantom.csv", DataVolume("image", phantom.image)))
    files.append(volume_io.save_image(out / "phantom.png", phantom.image))
    files.extend(volume_io.save_labels(out / "ground_truth", phantom.ground_truth))
    files.append(volume_io.write_json(out / "provenance.json",
                                      volume_io.provenance("phantom", config, {"phantom": phantom.to_dict()})))
    return files


def cmd_forward(config: RunConfig) -> List[Path]:
    """
    Apply the configured operator to an image (or the configured phantom) and add noise.

    Writes data.csv with its geometry sidecar and a provenance record.
    """
    out = _output_dir(config)
    if config.paths.input:
        image = volume_io.load_image(_require_input(config, "input image"))
        source = str(config.paths.input)
    else:
        image = make_phantom(config).image
        source = config.phantom

    spec = config.operator
    kernel = spec.kernel()
    if spec.kind == "radon":
        operator = radon_operator(spec.geometry(image.shape[0]), image.shape)
    elif spec.kind == "spherical":
        operator = spherical_operator(spec.geometry(image.shape[0]), image.shape)
    elif spec.kind == "blur":
        operator = Convolution(kernel, image.shape)
    else:
        operator = Identity(image.shape)
    logger.info(f"Forward operator: {operator.describe()}")

    clean = operator.forward(image)
    noisy = add_noise(clean, config.noise.level, config.noise.seed)
    sigma = noise_sigma(clean.values, config.noise.level)
    noise = {"level": config.noise.level, "sigma": sigma, "seed": config.noise.seed, "rng": volume_io.RNG_ALGORITHM}
    files = list(volume_io.save_volume(out / "data.csv", noisy, kernel,
                                       {"image_shape": list(image.shape), "noise": noise}))
    files.append(volume_io.save_image(out / "data.png", noisy.values))
    files.append(volume_io.write_json(out / "provenance.json",
                                      volume_io.provenance("forward", config, {"source": source, "noise": noise})))
    return files


def _load_data(config: RunConfig):
    path = _require_input(config, "data volume")
    data, kernel = volume_io.load_volume(path)
    with open(path.with_suffix(".json"), "r", encoding="utf-8") as f:
        sidecar = json.load(f)
    if data.kind == "image":
        image_shape = tuple(data.values.shape)
    else:
        image_shape = tuple(sidecar.get("image_shape", (config.image_size, config.image_size)))
    return data, kernel, image_shape


def _ground_truth(config: RunConfig):
    """Ground-truth label map from [paths] ground_truth, if set."""
    if config.paths.ground_truth:
        return volume_io.load_labels(Path(config.paths.ground_truth))
    return None


def cmd_reconstruct(config: RunConfig) -> List[Path]:
    """Run Potts ADMM on a data volume; write image, labels, diagnostics and summary."""
    out = _output_dir(config)
    data, kernel, image_shape = _load_data(config)
    operator = build_operator(data, image_shape, kernel)
    admm = PottsAdmm(operator, data, config.potts_config(), config.coupling_schedule(),
                     config.solver.name, config.cg_config())

    diagnostics_path = out / "diagnostics.jsonl"
    try:
        result = admm.run()
    except DivergenceError as e:
        volume_io.write_json_lines(diagnostics_path, (r.to_dict() for r in e.diagnostics))
        raise

    files = [volume_io.write_json_lines(diagnostics_path, (r.to_dict() for r in result.diagnostics))]
    files.extend(volume_io.save_volume(out / "reconstruction.csv", DataVolume("image", result.image)))
    files.append(volume_io.save_image(out / "reconstruction.png", result.image))
    files.extend(volume_io.save_labels(out / "labels", result.labels))

    last = result.diagnostics[-1]
    summary: Dict[str, Any] = {
        "iterations": result.iterations,
        "converged": result.converged,
        "gamma": admm.gamma,
        "mu_scale": admm.coupling_scale,
        "stop_criterion": last.stop_criterion,
        "max_residual": last.max_residual,
        "multiplier_norms": last.multiplier_norms,
        "objective": last.objective,
        "segments": result.labels.count,
    }
    truth = _ground_truth(config)
    if truth is not None:
        summary["rand_index"] = rand_index(result.labels.labels, truth.labels)
    files.append(volume_io.write_json(out / "summary.json", summary))
    files.append(volume_io.write_json(out / "provenance.json",
                                      volume_io.provenance("reconstruct", config, {"wall_time": result.wall_time})))
    return files


def tune_cutoff(data: DataVolume, image_shape, reference: np.ndarray) -> float:
    """Hamming cutoff in steps of 0.01 maximizing PSNR against a reference image."""
    best_cutoff, best_psnr = 1.0, -np.inf
    for cutoff in np.arange(1, int(round(1 / CUTOFF_STEP)) + 1) * CUTOFF_STEP:
        image = filtered_backprojection(data, data.geometry, image_shape, window="hamming", cutoff=float(cutoff))
        value = psnr(image, reference)
        if value > best_psnr:
            best_cutoff, best_psnr = float(cutoff), value
    logger.info(f"Tuned Hamming cutoff {best_cutoff:.2f} (PSNR {best_psnr:.2f} dB)")
    return best_cutoff


def cmd_fbp(config: RunConfig, window: str = "ram-lak", cutoff: float = 1.0,
            tune: bool = False, reference: Optional[Path] = None) -> List[Path]:
    """
    Filtered backprojection baseline for Radon data.

    With a reference image the result is also quantized to its gray levels
    and segmented, giving the thresholded-FBP baseline.
    """
    out = _output_dir(config)
    data, _, image_shape = _load_data(config)
    if data.kind != "radon":
        raise ConfigError(f"FBP needs Radon data, got {data.kind}")
    truth_image = volume_io.load_image(reference) if reference else None
    if tune:
        if truth_image is None:
            raise ConfigError("--tune-cutoff needs a reference image")
        window = "hamming"
        cutoff = tune_cutoff(data, image_shape, truth_image)

    image = filtered_backprojection(data, data.geometry, image_shape, window=window, cutoff=cutoff)
    files = list(volume_io.save_volume(out / "fbp.csv", DataVolume("image", image)))
    files.append(volume_io.save_image(out / "fbp.png", image))
    summary: Dict[str, Any] = {"window": window, "cutoff": cutoff}
    if truth_image is not None:
        summary["psnr"] = psnr(image, truth_image)
        quantized = threshold_to_levels(image, np.unique(truth_image))
        labels = extract_labels(quantized, 0.0)
        files.extend(volume_io.save_labels(out / "fbp_labels", labels))
        summary["segments"] = labels.count
        truth = _ground_truth(config)
        if truth is not None:
            summary["rand_index"] = rand_index(labels.labels, truth.labels)
    files.append(volume_io.write_json(out / "fbp_summary.json", summary))
    files.append(volume_io.write_json(out / "provenance.json", volume_io.provenance("fbp", config, summary)))
    return files


def cmd_metrics(labels: Optional[Path] = None, labels_ref: Optional[Path] = None,
                image: Optional[Path] = None, image_ref: Optional[Path] = None) -> Dict[str, Any]:
    """Rand index of two label maps and PSNR of two images, whichever pairs are given."""
    result: Dict[str, Any] = {}
    if labels and labels_ref:
        result["rand_index"] = rand_index(volume_io.load_labels(labels).labels,
                                          volume_io.load_labels(labels_ref).labels)
    if image and image_ref:
        value = psnr(volume_io.load_image(image), volume_io.load_image(image_ref))
        result["psnr"] = value if np.isfinite(value) else "inf"
    if not result:
        raise ConfigError("metrics needs --labels/--labels-ref and/or --image/--image-ref")
    return result


def cmd_potts1d(input_path: Path, gamma: float, output: Path) -> Path:
    """Segment the CSV columns of input_path (one sample per row) and write the segments."""
    samples = volume_io.load_csv(input_path)
    solution = solve_potts_1d(samples, gamma)
    rows = [[start, stop, *value] for (start, stop), value in zip(solution.segments(), solution.segment_values)]
    path = volume_io.save_csv(output, np.array(rows, dtype=np.float64))
    logger.info(f"{solution.n_jumps} jumps, energy {solution.energy:.6g}")
    return path


def cmd_nbhd(level: Optional[int], displacements: Optional[str]) -> Dict[str, Any]:
    if displacements:
        vectors = [tuple(int(c) for c in item.split(",")) for item in displacements.split(";")]
        system = NeighborhoodSystem(tuple(vectors), tuple(derive_weights(vectors)))
    else:
        system = build_system(1 if level is None else level)
    report = system.to_dict()
    report["isotropy_ratio"] = isotropy_ratio(system)
    return report


def cmd_tikhonov(config: RunConfig, weight: float, anchor: Optional[Path] = None) -> List[Path]:
    """Solve one Tikhonov problem with the configured solver."""
    out = _output_dir(config)
    data, kernel, image_shape = _load_data(config)
    operator = build_operator(data, image_shape, kernel)
    z = volume_io.load_image(anchor) if anchor else np.zeros(image_shape)
    problem = TikhonovProblem(operator, data, z, weight)
    if config.solver.name == "frequency":
        if kernel is None:
            raise ConfigError("The frequency solver needs blurred image data")
        v = solve_deconv_frequency(kernel, data, z, weight)
        report = {"solver": "frequency"}
    elif config.solver.name == "radon-filter":
        if data.kind != "radon":
            raise ConfigError("The radon-filter solver needs Radon data")
        v = solve_radon_filtered(data, z, weight / 2.0, data.geometry)
        report = {"solver": "radon-filter"}
    else:
        result = solve_cg(problem, config.cg_config())
        v = result.image
        report = {"solver": "cg", "iterations": result.iterations, "converged": result.converged}
    report["relative_residual"] = problem.relative_residual(v)
    report["objective"] = problem.objective(v)
    report["anchor_objective"] = problem.objective(z)
    files = list(volume_io.save_volume(out / "tikhonov.csv", DataVolume("image", v)))
    files.append(volume_io.write_json(out / "tikhonov.json", report))
    return files


def _config_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("run configuration (overrides --config)")
    group.add_argument("--config", type=Path, help="TOML run configuration")
    group.add_argument("--input", dest="paths.input", help="input image or data volume")
    group.add_argument("--output", dest="paths.output", help="output directory")
    group.add_argument("--ground-truth", dest="paths.ground_truth", help="ground-truth label CSV")
    group.add_argument("--phantom", dest="phantom", choices=["shepp-logan", "shepp-logan-original", "geometric"])
    group.add_argument("--size", dest="image_size", type=int)
    group.add_argument("--operator", dest="operator.kind", choices=["radon", "spherical", "blur", "identity"])
    group.add_argument("--angles", dest="operator.angles", type=int)
    group.add_argument("--detectors", dest="operator.detectors", type=int)
    group.add_argument("--radii", dest="operator.radii", type=int)
    group.add_argument("--blur", dest="operator.blur", choices=["gaussian", "motion"])
    group.add_argument("--sigma", dest="operator.sigma", type=float)
    group.add_argument("--length", dest="operator.length", type=int)
    group.add_argument("--gamma", dest="potts.gamma", type=float)
    group.add_argument("--level", dest="potts.level", type=int, choices=[0, 1, 2])
    group.add_argument("--stop-tolerance", dest="potts.stop_tolerance", type=float)
    group.add_argument("--max-iterations", dest="potts.max_iterations", type=int)
    group.add_argument("--label-tolerance", dest="potts.label_tolerance", type=float)
    group.add_argument("--relative-gamma", dest="potts.relative_gamma", action="store_true", default=None,
                       help="take gamma relative to the data energy ||f||^2")
    group.add_argument("--mu0", dest="schedule.mu0", type=float)
    group.add_argument("--tau", dest="schedule.tau", type=float)
    group.add_argument("--nu-mode", dest="schedule.nu_mode", choices=["zero", "mu_over_S"])
    group.add_argument("--normalization", dest="schedule.normalization", choices=["data", "none"])
    group.add_argument("--solver", dest="solver.name", choices=["cg", "frequency", "radon-filter"])
    group.add_argument("--cg-tolerance", dest="solver.cg_tolerance", type=float)
    group.add_argument("--noise", dest="noise.level", type=float)
    group.add_argument("--seed", dest="noise.seed", type=int)
    group.add_argument("--threads", dest="threads", type=int)


CONFIG_KEYS = (
    "paths.input", "paths.output", "paths.ground_truth", "phantom", "image_size",
    "operator.kind", "operator.angles", "operator.detectors", "operator.radii", "operator.blur",
    "operator.sigma", "operator.length", "potts.gamma", "potts.level", "potts.stop_tolerance",
    "potts.max_iterations", "potts.label_tolerance", "potts.relative_gamma", "schedule.mu0",
    "schedule.tau", "schedule.nu_mode", "schedule.normalization", "solver.name", "solver.cg_tolerance",
    "noise.level", "noise.seed", "threads",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="potts-recon", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--verbose", action="store_true", help="log per-iteration diagnostics")
    commands = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (("phantom", "write a phantom and its ground truth"),
                            ("forward", "simulate data from an image or phantom"),
                            ("reconstruct", "joint reconstruction and segmentation"),
                            ("fbp", "filtered backprojection baseline"),
                            ("tikhonov", "solve one Tikhonov problem")):
        sub = commands.add_parser(name, help=help_text)
        _config_flags(sub)
        if name == "fbp":
            sub.add_argument("--window", choices=["ram-lak", "hamming"], default="ram-lak")
            sub.add_argument("--cutoff", type=float, default=1.0)
            sub.add_argument("--tune-cutoff", action="store_true")
            sub.add_argument("--reference", type=Path, help="ground-truth image for tuning and PSNR")
        if name == "tikhonov":
            sub.add_argument("--weight", type=float, default=1.0)
            sub.add_argument("--anchor", type=Path)

    sub = commands.add_parser("metrics", help="Rand index and PSNR")
    sub.add_argument("--labels", type=Path)
    sub.add_argument("--labels-ref", type=Path)
    sub.add_argument("--image", type=Path)
    sub.add_argument("--image-ref", type=Path)
    sub.add_argument("--output", type=Path)

    sub = commands.add_parser("potts1d", help="exact univariate Potts segmentation of a CSV signal")
    sub.add_argument("--input", type=Path, required=True)
    sub.add_argument("--gamma", type=float, required=True)
    sub.add_argument("--output", type=Path, default=Path("segments.csv"))

    sub = commands.add_parser("nbhd", help="neighborhood weights and isotropy ratio")
    sub.add_argument("--level", type=int, choices=[0, 1, 2])
    sub.add_argument("--displacements", help="e.g. '1,0;0,1;1,1;1,-1'")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config)
    overrides = {key: getattr(args, key, None) for key in CONFIG_KEYS}
    return apply_overrides(config, overrides)


def _write_error(output: Path, command: str, error: Exception):
    try:
        output.mkdir(parents=True, exist_ok=True)
        volume_io.write_json(output / f"{command}_error.json", {"command": command, "error": str(error)})
    except OSError as e:
        logger.error(f"Could not write error file: {e}")


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point."""
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    logger.info(f"Starting potts-recon {args.command}")

    output = Path(getattr(args, "paths.output", None) or "output")
    if args.command in ("metrics", "potts1d") and args.output is not None:
        output = args.output.parent
    try:
        if args.command in ("metrics", "potts1d", "nbhd"):
            if args.command == "metrics":
                result = cmd_metrics(args.labels, args.labels_ref, args.image, args.image_ref)
                if args.output:
                    volume_io.write_json(args.output, result)
                print(json.dumps(result, indent=2))
            elif args.command == "potts1d":
                cmd_potts1d(args.input, args.gamma, args.output)
            else:
                print(json.dumps(cmd_nbhd(args.level, args.displacements), indent=2))
            return 0

        config = resolve_config(args)
        output = Path(config.paths.output)
        with scipy.fft.set_workers(config.threads):
            if args.command == "phantom":
                files = cmd_phantom(config)
            elif args.command == "forward":
                files = cmd_forward(config)
            elif args.command == "reconstruct":
                files = cmd_reconstruct(config)
            elif args.command == "fbp":
                files = cmd_fbp(config, args.window, args.cutoff, args.tune_cutoff, args.reference)
            else:
                files = cmd_tikhonov(config, args.weight, args.anchor)
        logger.info(f"Wrote {len(files)} file(s) to {output}")
        return 0

    except Exception as e:
        logger.error(f"Error running {args.command}: {str(e)}")
        _write_error(output, args.command, e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
