"""Extract small UCR datasets bundled inside the pyts and aeon wheels.

Coffee and GunPoint come from pyts (whitespace-separated, float labels) and are
rewritten as canonical tab-separated files with integer labels.
ItalyPowerDemand comes from aeon as .ts and is copied verbatim.

    python scripts/fetch_ucr.py --out data/UCR
"""

import argparse
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

PYTS = "pyts/datasets/cached_datasets/UCR/{name}/{name}_{split}.txt"
AEON = "aeon/datasets/data/{name}/{name}_{split}.ts"


def download(pkg: str, dest: Path) -> Path:
    subprocess.run(
        [sys.executable, "-m", "pip", "download", pkg, "--no-deps", "-q", "-d", str(dest)],
        check=True,
    )
    return next(dest.glob(f"{pkg}-*.whl"))


def to_tsv(text: str) -> str:
    rows = []
    for line in text.splitlines():
        tokens = line.split()
        if tokens:
            rows.append("\t".join([str(int(float(tokens[0])))] + tokens[1:]))
    return "\n".join(rows) + "\n"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="data/UCR")
    args = ap.parse_args()
    out = Path(args.out)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        pyts = zipfile.ZipFile(download("pyts", tmp))
        aeon = zipfile.ZipFile(download("aeon", tmp))
        for name in ("Coffee", "GunPoint"):
            (out / name).mkdir(parents=True, exist_ok=True)
            for split in ("TRAIN", "TEST"):
                text = pyts.read(PYTS.format(name=name, split=split)).decode()
                (out / name / f"{name}_{split}.tsv").write_text(to_tsv(text))
        name = "ItalyPowerDemand"
        (out / name).mkdir(parents=True, exist_ok=True)
        for split in ("TRAIN", "TEST"):
            (out / name / f"{name}_{split}.ts").write_bytes(aeon.read(AEON.format(name=name, split=split)))
    print(f"wrote datasets under {out}")


if __name__ == "__main__":
    main()
