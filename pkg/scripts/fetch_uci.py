#!/usr/bin/env python3
"""Download the UCI regression benchmark datasets and normalize them into the
plain CSVs that data/manifest.json expects.

Usage:
    python scripts/fetch_uci.py [--data-dir data] [--only boston,concrete]

Needs network access plus pandas (and openpyxl/xlrd for the two Excel
sources). The library itself never fetches anything; run this once, then
`spikereg bench` works offline. Row counts and column widths are verified
against the manifest before anything is written.
"""

import argparse
import io
import json
import sys
import urllib.request
import zipfile
from pathlib import Path

UCI = "https://archive.ics.uci.edu"
# Fallback mirror hosting the same files for several of these datasets.
GAL_REPO = (
    "https://raw.githubusercontent.com/yaringal/DropoutUncertaintyExps/master/"
    "UCI_Datasets/{name}/data/data.txt"
)
GAL_NAMES = {
    "boston": "bostonHousing",
    "concrete": "concrete",
    "energy": "energy",
    "wine-red": "wine-quality-red",
    "kin8nm": "kin8nm",
    "naval": "naval-propulsion-plant",
    "power": "power-plant",
    "protein": "protein-tertiary-structure",
}


def fetch(url: str) -> bytes:
    print(f"  GET {url}")
    with urllib.request.urlopen(url, timeout=60) as resp:
        return resp.read()


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    print(f"  wrote {path}")


def from_gal_mirror(name: str, n_features: int, target: str) -> tuple[list[str], list]:
    """data.txt files: whitespace-separated, features then target, no header."""
    raw = fetch(GAL_REPO.format(name=GAL_NAMES[name])).decode("utf-8")
    rows = [
        [float(v) for v in line.split()]
        for line in raw.splitlines()
        if line.strip()
    ]
    if any(len(r) != n_features + 1 for r in rows):
        raise SystemExit(f"{name}: unexpected column count in mirror file")
    header = [f"x{i}" for i in range(n_features)] + [target]
    return header, rows


def build_boston():
    # original housing.data: 13 features + MEDV, fixed-width
    raw = fetch(f"{UCI}/ml/machine-learning-databases/housing/housing.data")
    rows = [[float(v) for v in line.split()] for line in raw.decode().splitlines() if line.strip()]
    header = ["CRIM", "ZN", "INDUS", "CHAS", "NOX", "RM", "AGE", "DIS", "RAD",
              "TAX", "PTRATIO", "B", "LSTAT", "MEDV"]
    return header, rows


def build_concrete():
    import pandas as pd

    blob = fetch(f"{UCI}/static/public/165/concrete+compressive+strength.zip")
    with zipfile.ZipFile(io.BytesIO(blob)) as zf:
        name = next(n for n in zf.namelist() if n.lower().endswith(".xls"))
        frame = pd.read_excel(io.BytesIO(zf.read(name)))
    header = [f"x{i}" for i in range(8)] + ["strength"]
    return header, frame.to_numpy().tolist()


def build_energy():
    import pandas as pd

    blob = fetch(f"{UCI}/static/public/242/energy+efficiency.zip")
    with zipfile.ZipFile(io.BytesIO(blob)) as zf:
        name = next(n for n in zf.namelist() if n.lower().endswith(".xlsx"))
        frame = pd.read_excel(io.BytesIO(zf.read(name)))
    frame = frame.dropna(axis=1, how="all").dropna(axis=0, how="any")
    # X1..X8 features, Y1 heating load (Y2 cooling load is dropped)
    header = [f"x{i}" for i in range(8)] + ["heating_load"]
    return header, frame.iloc[:, :9].to_numpy().tolist()


def build_wine_red():
    raw = fetch(f"{UCI}/ml/machine-learning-databases/wine-quality/winequality-red.csv")
    lines = raw.decode("utf-8").splitlines()
    header = [h.strip().strip('"').replace(" ", "_") for h in lines[0].split(";")]
    header[-1] = "quality"
    rows = [[float(v) for v in line.split(";")] for line in lines[1:] if line.strip()]
    return header, rows


BUILDERS = {
    "boston": build_boston,
    "concrete": build_concrete,
    "energy": build_energy,
    "wine-red": build_wine_red,
    # the remaining sets come straight from the mirror layout
    "kin8nm": lambda: from_gal_mirror("kin8nm", 8, "y"),
    "naval": lambda: from_gal_mirror("naval", 16, "gt_turbine_decay"),
    "power": lambda: from_gal_mirror("power", 4, "PE"),
    "protein": lambda: from_gal_mirror("protein", 9, "RMSD"),
}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-dir", default="data")
    parser.add_argument("--only", help="comma-separated subset of manifest names")
    args = parser.parse_args()

    data_dir = Path(args.data_dir)
    manifest = json.loads((data_dir / "manifest.json").read_text())
    names = args.only.split(",") if args.only else list(manifest)
    failures = []
    for name in names:
        entry = manifest[name]
        print(f"{name}:")
        try:
            try:
                header, rows = BUILDERS[name]()
            except Exception as exc:  # primary source down: try the mirror
                print(f"  primary source failed ({exc}); trying mirror")
                header, rows = from_gal_mirror(name, entry["q"], entry["target"])
            if len(rows) != entry["n"] or len(header) != entry["q"] + 1:
                raise SystemExit(
                    f"{name}: got {len(rows)} rows x {len(header)} cols, "
                    f"expected {entry['n']} x {entry['q'] + 1}"
                )
            if entry["target"] not in header:
                header[-1] = entry["target"]
            write_csv(data_dir / entry["file"], header, rows)
        except Exception as exc:
            print(f"  FAILED: {exc}")
            failures.append(name)
    if failures:
        print(f"failed: {failures}")
        return 1
    print("all datasets fetched")
    return 0


if __name__ == "__main__":
    sys.exit(main())
