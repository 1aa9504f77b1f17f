"""Writes a 2-image 3x4 IDX pair (raw and gzip) with known bytes.

Image 0 holds 0..11 scaled by 20; image 1 holds 255 - that. Labels 7, 61.
"""
import gzip
import struct
import sys
from pathlib import Path

ROWS, COLS = 3, 4


def images():
    a = bytes(20 * i for i in range(ROWS * COLS))
    b = bytes(255 - v for v in a)
    return [a, b]


def main(out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    imgs = images()
    img = struct.pack(">IIII", 0x803, len(imgs), ROWS, COLS) + b"".join(imgs)
    lab = struct.pack(">II", 0x801, 2) + bytes([7, 61])
    (out / "two-images-idx3-ubyte").write_bytes(img)
    (out / "two-labels-idx1-ubyte").write_bytes(lab)
    (out / "two-images-idx3-ubyte.gz").write_bytes(gzip.compress(img, mtime=0))
    (out / "two-labels-idx1-ubyte.gz").write_bytes(gzip.compress(lab, mtime=0))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent.parent / "fixtures")
