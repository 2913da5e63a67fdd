#!/usr/bin/env python3
"""
Regenerate the fixture files in Config/Presets.

Usage:
    python Tools/make_presets.py [--out <dir>]
"""
import argparse
import os
import sys

current_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if current_dir not in sys.path:
    sys.path.insert(0, current_dir)

from Core.geometry import box_polytope, icosphere_ball  # noqa: E402
from Core.measures import measure_to_dict, uniform_axis_measure  # noqa: E402
from Utils.log_utils import get_logger, DEBUG_L1  # noqa: E402
from Utils.save_utils import body_to_dict, write_json  # noqa: E402

logger = get_logger()

DEFAULT_OUT = os.path.join(current_dir, "Config", "Presets")


def presets():
    """File name -> JSON document for every fixture."""
    return {
        "axes.json": measure_to_dict(uniform_axis_measure(3)),
        "cube.json": body_to_dict(box_polytope([0.5, 0.5, 0.5])),
        "box112.json": body_to_dict(box_polytope([0.5, 0.5, 1.0])),
        "square.json": body_to_dict(box_polytope([0.5, 0.5])),
        "ball320.json": body_to_dict(icosphere_ball(1.0, subdivisions=2)),
    }


def write_presets(out_dir=DEFAULT_OUT):
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, document in presets().items():
        path = os.path.join(out_dir, name)
        write_json(path, document)
        logger.debug_at_level(DEBUG_L1, "Presets", f"Wrote {path}")
        written.append(path)
    return written


def parse_args():
    parser = argparse.ArgumentParser(description="Fixture preset generator")
    parser.add_argument("--out", default=DEFAULT_OUT, help="Output directory")
    return parser.parse_args()


if __name__ == "__main__":
    args = parse_args()
    paths = write_presets(args.out)
    logger.info("Presets", f"Wrote {len(paths)} preset files to {args.out}")
