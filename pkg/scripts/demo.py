#!/usr/bin/env python3
"""
Complete solution demonstration script
Builds the image, runs the pipeline on the bundled configurations and
validates the outputs.
"""

import json
import subprocess
from pathlib import Path

IMAGE = "potts-recon:v1.0"


def run_command(cmd, description):
    """Run a command and handle output."""
    print(f"🔧 {description}")
    print(f"   Command: {cmd}")

    try:
        result = subprocess.run(cmd, shell=True, capture_output=True, text=True)

        if result.returncode == 0:
            print(f"   ✅ Success")
        else:
            print(f"   ❌ Failed")
            if result.stderr:
                print(f"   Error: {result.stderr.strip()[-2000:]}")

        return result.returncode == 0

    except Exception as e:
        print(f"   ❌ Exception: {str(e)}")
        return False


def main():
    """Demonstrate the complete solution."""

    print("🚀 Potts Reconstruction - Complete Solution Demo")
    print("=" * 60)

    if not run_command("docker --version", "Checking Docker availability"):
        print("❌ Docker is not available. Please install Docker to run this demo.")
        return

    print("\n📦 Building Docker Image...")
    if not run_command(f"docker build --platform linux/amd64 -t {IMAGE} .", "Building Docker image"):
        print("❌ Failed to build Docker image")
        return

    configs = sorted(Path("input").glob("*.toml"))
    if not configs:
        print("\n📄 No TOML configurations found in input directory")
        print("   Copy one of the examples from EXAMPLES.md into 'input' and run this script again")
        return

    print(f"\n📄 Found {len(configs)} configuration(s):")
    for config in configs:
        print(f"   • {config.name}")

    print("\n🏃 Running pipeline...")
    run_cmd = f"docker run --rm -v {Path.cwd()}/input:/app/input -v {Path.cwd()}/output:/app/output --network none {IMAGE}"
    if not run_command(run_cmd, "Reconstructing"):
        print("❌ Pipeline failed")
        return

    for config in configs:
        summary_file = Path("output") / config.stem / "reconstruction" / "summary.json"
        try:
            with open(summary_file, 'r', encoding='utf-8') as f:
                summary = json.load(f)
            ri = summary.get("rand_index")
            print(f"   • {config.stem}: {summary['segments']} segments, {summary['iterations']} iterations"
                  + (f", RI {ri:.4f}" if ri is not None else ""))
        except Exception as e:
            print(f"   ❌ Error reading {summary_file}: {str(e)}")

    print("\n🔍 Running output validation...")
    if run_command("python scripts/validate.py output", "Validating run outputs"):
        print("✅ All outputs are valid!")
    else:
        print("⚠️  Some validation issues found - run scripts/validate.py for the full report")

    print("\n" + "=" * 60)
    print("🎉 Demo completed!")


if __name__ == "__main__":
    main()
