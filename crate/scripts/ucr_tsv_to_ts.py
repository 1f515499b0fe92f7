#!/usr/bin/env python3
"""Convert UCR-archive TSV files (label<TAB>v1<TAB>v2...) to the `.ts` layout.

usage: ucr_tsv_to_ts.py NAME TRAIN.tsv TEST.tsv OUTDIR [--max-train N] [--max-test N] [--seed S]

When a --max-* cap is given, a class-stratified random subset is kept
(deterministic under --seed) and rows keep their original relative order.
"""
import argparse
import random
from collections import defaultdict


def read_tsv(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            rows.append((parts[0], parts[1:]))
    return rows


def label_key(label):
    try:
        return (0, float(label))
    except ValueError:
        return (1, label)


def subset(rows, cap, rng):
    if cap is None or cap >= len(rows):
        return rows
    by_class = defaultdict(list)
    for i, (lab, _) in enumerate(rows):
        by_class[lab].append(i)
    keep = []
    for lab in sorted(by_class, key=label_key):
        idx = by_class[lab]
        k = max(1, round(cap * len(idx) / len(rows)))
        keep.extend(rng.sample(idx, min(k, len(idx))))
    keep.sort()
    return [rows[i] for i in keep]


def write_ts(path, name, rows, labels):
    length = len(rows[0][1])
    with open(path, "w", newline="\n") as fh:
        fh.write(f"@problemName {name}\n")
        fh.write("@timeStamps false\n")
        fh.write("@missing false\n")
        fh.write("@univariate true\n")
        fh.write("@equalLength true\n")
        fh.write(f"@seriesLength {length}\n")
        fh.write("@classLabel true " + " ".join(labels) + "\n")
        fh.write("@data\n")
        for lab, vals in rows:
            fh.write(",".join(vals) + ":" + lab + "\n")


def normalize_label(label):
    try:
        f = float(label)
        if f == int(f):
            return str(int(f))
    except ValueError:
        pass
    return label


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("name")
    ap.add_argument("train")
    ap.add_argument("test")
    ap.add_argument("outdir")
    ap.add_argument("--max-train", type=int)
    ap.add_argument("--max-test", type=int)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    train = [(normalize_label(l), v) for l, v in read_tsv(args.train)]
    test = [(normalize_label(l), v) for l, v in read_tsv(args.test)]
    labels = sorted({l for l, _ in train} | {l for l, _ in test}, key=label_key)
    train = subset(train, args.max_train, rng)
    test = subset(test, args.max_test, rng)
    write_ts(f"{args.outdir}/{args.name}_TRAIN.ts", args.name, train, labels)
    write_ts(f"{args.outdir}/{args.name}_TEST.ts", args.name, test, labels)
    print(args.name, len(train), len(test), len(train[0][1]), labels)


if __name__ == "__main__":
    main()
