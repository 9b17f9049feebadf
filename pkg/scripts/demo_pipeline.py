"""End to end on the mini corpus: filter, build, export targets, score perfect detections.

Everything goes through the CLI entry point so the run exercises the same
code paths as the command line.
"""

import argparse
import json
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from fixtures import write_corpus  # noqa: E402

from msi_forge.cli import main as cli  # noqa: E402


def run(*argv) -> None:
    code = cli([str(a) for a in argv])
    if code:
        sys.exit(code)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", type=Path, default=None)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    work = args.workdir or Path(tempfile.mkdtemp(prefix="msi-demo-"))
    c = write_corpus(work / "corpus")

    run("filter", "--instances", c["instances"], "--alpha", 2, "--out", work / "scenes.jsonl")
    ds = work / "dataset"
    run("build", "--instances", c["instances"], "--captions", c["captions"], "--images", c["images"],
        "--pool", c["pool"], "--out", ds, "--alpha", 2, "--seed", args.seed, "--min-pool-size", 1)
    run("targets", "--manifest", ds, "--out", work / "targets.jsonl")

    rows = [json.loads(line) for line in (work / "targets.jsonl").read_text().splitlines()]
    with open(work / "detections.jsonl", "w") as fh:
        for r in rows:
            dets = [{**t, "confidence": 0.9} for t in r["targets"]]
            fh.write(json.dumps({"sample_id": r["sample_id"], "detections": dets}) + "\n")
    run("score", "--targets", work / "targets.jsonl", "--detections", work / "detections.jsonl",
        "--out", work / "report.json")
    run("preview", "--manifest", ds, "--sample-id", rows[-1]["sample_id"], "--out", work / "preview.png", "--annotate")
    print(f"outputs in {work}")


if __name__ == "__main__":
    main()
