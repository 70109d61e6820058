#!/usr/bin/env python3
"""Drive the whole pipeline end to end on a fixture directory.

Builds the fixture if the directory is empty, then runs
ingest -> group -> distill -> query -> segment -> eval and prints the
reports. A quick way to eyeball every stage without remembering commands.
"""
import argparse
import sys
from pathlib import Path

from splatquery.cli import main as cli
from splatquery.fixture import write_fixture


def run(config: Path, *args: str) -> None:
    code = cli(["-c", str(config), *args])
    if code != 0:
        print(f"stage {' '.join(args)} failed with exit code {code}",
              file=sys.stderr)
        sys.exit(code)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("root", type=Path, help="fixture directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--halo", action="store_true")
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()

    config = args.root / "config.toml"
    if not config.exists():
        print(f"building fixture under {args.root}")
        write_fixture(args.root, seed=args.seed, halo=args.halo)

    extra = ["--threads", str(args.threads)]
    run(config, *extra, "ingest")
    run(config, *extra, "group")
    run(config, *extra, "distill")
    run(config, *extra, "query", "red blob", "--render")
    run(config, *extra, "query", "blue blob", "--render")
    run(config, *extra, "eval", "--mode", "selection")
    run(config, *extra, "segment", "red blob", "blue blob")
    run(config, *extra, "eval", "--mode", "segmentation")


if __name__ == "__main__":
    main()
