"""Regenerate data/breast-cancer and data/diabetes in sparse index:value format.

The raw tables come from the KEEL copies bundled in the ``keel_ds`` wheel
(``pip download --no-deps keel_ds``): ``wisconsin.dat`` is the 683-row
Wisconsin breast-cancer table with incomplete rows removed and the sample-id
column dropped; ``pima.dat`` is the 768-row Pima Indians diabetes table.
Values are written unscaled; scaling happens at load time.
"""

from __future__ import annotations

import argparse
import sys
import zipfile
from pathlib import Path

SOURCES = {
    "breast-cancer": ("keel_ds/data/balanced/raw/wisconsin.dat", {"4": 1, "2": -1}),
    "diabetes": (
        "keel_ds/data/balanced/raw/pima.dat",
        {"tested_positive": 1, "tested_negative": -1},
    ),
}


def convert(raw: str, labels: dict[str, int]) -> list[str]:
    out = []
    for line in raw.splitlines():
        line = line.strip()
        if not line or line.startswith("@"):
            continue
        *values, label = line.split(",")
        feats = " ".join(
            f"{i}:{v}" for i, v in enumerate(values, start=1) if float(v) != 0.0
        )
        out.append(f"{labels[label.strip()]:+d} {feats}".rstrip())
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("wheel", type=Path, help="path to a keel_ds wheel")
    parser.add_argument("--out", type=Path, default=Path(__file__).parent.parent / "data")
    args = parser.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(args.wheel) as zf:
        for name, (member, labels) in SOURCES.items():
            lines = convert(zf.read(member).decode(), labels)
            (args.out / name).write_text("\n".join(lines) + "\n")
            print(f"{name}: {len(lines)} rows", file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
