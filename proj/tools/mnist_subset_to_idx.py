#!/usr/bin/env python3
# Copyright 2026 The epk Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Converts the 5000-image MNIST sample shipped in the mlxtend wheel
(mlxtend/data/data/mnist_5k.csv.gz: 784 pixel columns then the label) into
an IDX image/label pair, keeping the first N images of each class."""

import argparse
import csv
import gzip
import io
import struct
import zipfile


def read_rows(source):
    if source.endswith(".whl") or source.endswith(".zip"):
        with zipfile.ZipFile(source) as whl:
            raw = whl.read("mlxtend/data/data/mnist_5k.csv.gz")
    else:
        with open(source, "rb") as f:
            raw = f.read()
    text = gzip.decompress(raw).decode("ascii")
    for row in csv.reader(io.StringIO(text)):
        if row:
            yield [int(float(v)) for v in row]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("source", help="mlxtend wheel or mnist_5k.csv.gz")
    ap.add_argument("--per-class", type=int, default=100)
    ap.add_argument("--images", required=True)
    ap.add_argument("--labels", required=True)
    args = ap.parse_args()

    counts = [0] * 10
    pixels, labels = bytearray(), bytearray()
    for row in read_rows(args.source):
        label = row[-1]
        if counts[label] >= args.per_class:
            continue
        counts[label] += 1
        pixels.extend(bytes(row[:784]))
        labels.append(label)

    n = len(labels)
    with open(args.images, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        f.write(pixels)
    with open(args.labels, "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(labels)
    print(f"wrote {n} images, per class {counts}")


if __name__ == "__main__":
    main()
