"""Write the 5,000-digit MNIST subset bundled with mlxtend as IDX files.

Usage: python scripts/make_mnist_subset.py [path/to/mlxtend.whl] [out_dir]

The rows ship sorted by class; they are shuffled with a fixed seed so that the
last 1,000 (used for validation) are class balanced. Without a wheel argument
the installed mlxtend package is used.
"""

import gzip
import io
import sys
import zipfile
from pathlib import Path

import numpy as np

from hypergen.data import write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_rows(wheel: str | None) -> np.ndarray:
    if wheel:
        raw = zipfile.ZipFile(wheel).read(MEMBER)
    else:
        import mlxtend

        raw = (Path(mlxtend.__file__).parent / "data" / "data" / "mnist_5k.csv.gz").read_bytes()
    return np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",").astype(np.uint8)


def main() -> None:
    wheel = sys.argv[1] if len(sys.argv) > 1 else None
    out = Path(sys.argv[2] if len(sys.argv) > 2 else "data/mnist5k")
    out.mkdir(parents=True, exist_ok=True)
    rows = read_rows(wheel)
    rows = rows[np.random.default_rng(0).permutation(len(rows))]
    write_idx(out / "train-images-idx3-ubyte.gz", rows[:, :-1].reshape(-1, 28, 28), 0x08)
    write_idx(out / "train-labels-idx1-ubyte.gz", rows[:, -1], 0x08)
    print(f"wrote {len(rows)} examples to {out}")


if __name__ == "__main__":
    main()
