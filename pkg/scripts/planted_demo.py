"""End-to-end demo on a planted cube: synth, train, eval, bands and maps in a temp dir."""

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import hstc_cli  # noqa: E402


def run_demo(work_dir: Path, model_type: str, seed: int) -> dict:
    stem = work_dir / "planted"
    out_dir = work_dir / "run"
    steps = [
        ["synth", "--out", str(stem), "--seed", str(seed)],
        ["train", "--cube", str(stem), "--model-type", model_type, "--samples-per-class", "20",
         "--seed", str(seed), "--out-dir", str(out_dir), "--max-sweeps", "50"],
        ["eval", "--model", str(out_dir / "model.json"), "--cube", str(stem), "--out-dir", str(out_dir)],
        ["map", "--model", str(out_dir / "model.json"), "--cube", str(stem), "--out-dir", str(out_dir)],
    ]
    if model_type == "tensor_lr":
        steps.append(["bands", "--model", str(out_dir / "model.json"), "-n", "4", "--out-dir", str(out_dir)])
    for argv in steps:
        print("$ hstc " + " ".join(argv))
        status = hstc_cli.main(argv)
        if status != 0:
            raise SystemExit(status)
    with open(out_dir / "report.json", encoding="utf-8") as f:
        return json.load(f)


def main():
    parser = argparse.ArgumentParser(description="Run the full pipeline on a planted cube")
    parser.add_argument("--model-type", default="tensor_lr", choices=hstc_cli.MODEL_TYPES)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--keep", help="write outputs here instead of a temporary directory")
    args = parser.parse_args()
    if args.keep:
        report = run_demo(Path(args.keep), args.model_type, args.seed)
    else:
        with tempfile.TemporaryDirectory() as tmpdir:
            report = run_demo(Path(tmpdir), args.model_type, args.seed)
    print("Final overall accuracy:", report["overall_accuracy"])


if __name__ == "__main__":
    main()
