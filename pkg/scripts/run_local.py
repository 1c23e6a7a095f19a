#!/usr/bin/env python3
"""
Local Potts Reconstruction - Pipeline Runner
Runs phantom, forward and reconstruct for every TOML configuration in the
input directory, one output directory per configuration.
"""

import json
import logging
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from main import main as cli

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

INPUT_DIR = Path("input")
OUTPUT_DIR = Path("output")


def run_pipeline(config_file: Path, output_dir: Path) -> bool:
    """phantom -> forward -> reconstruct for one configuration."""
    truth_dir = output_dir / "phantom"
    data_dir = output_dir / "data"
    run_dir = output_dir / "reconstruction"
    steps = [
        ["phantom", "--config", str(config_file), "--output", str(truth_dir)],
        ["forward", "--config", str(config_file), "--output", str(data_dir)],
        ["reconstruct", "--config", str(config_file), "--input", str(data_dir / "data.csv"),
         "--ground-truth", str(truth_dir / "ground_truth.csv"), "--output", str(run_dir)],
    ]
    for argv in steps:
        if cli(argv) != 0:
            logger.error(f"Step '{argv[0]}' failed for {config_file.name}")
            return False
    return True


def main():
    """Main application entry point."""
    logger.info("Starting Potts reconstruction pipeline (Local Version)")

    INPUT_DIR.mkdir(parents=True, exist_ok=True)
    OUTPUT_DIR.mkdir(parents=True, exist_ok=True)

    config_files = sorted(INPUT_DIR.glob("*.toml"))
    if not config_files:
        logger.warning(f"No TOML configurations found in {INPUT_DIR} directory")
        return

    logger.info(f"Found {len(config_files)} configuration(s) to run")

    for config_file in config_files:
        output_dir = OUTPUT_DIR / config_file.stem
        logger.info(f"Running: {config_file.name}")
        if not run_pipeline(config_file, output_dir):
            continue

        with open(output_dir / "reconstruction" / "summary.json", 'r', encoding='utf-8') as f:
            summary = json.load(f)

        print(f"\n{'='*60}")
        print(f"📄 RUN: {config_file.name}")
        print(f"{'='*60}")
        print(f"🔁 Iterations: {summary['iterations']} (converged: {summary['converged']})")
        print(f"🧩 Segments: {summary['segments']}")
        if "rand_index" in summary:
            print(f"🎯 Rand index: {summary['rand_index']:.4f}")
        print(f"💾 Output saved to: {output_dir}")
        print(f"{'='*60}\n")

    logger.info("Pipeline complete")


if __name__ == "__main__":
    main()
