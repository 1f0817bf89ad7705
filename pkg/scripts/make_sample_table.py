"""Regenerate the bundled synthetic benchmark table.

The accuracies are NOT measured results.  They follow a fixed toy rule that
rewards parametric operations:

    accuracy = 60 + 5*(#nor_conv_3x3) + 3*(#nor_conv_1x1) + 1*(#skip_connect) + 0.5*(#avg_pool_3x3)

over the six edges of a cell, so the table only exercises the correlation
harness plumbing.
"""
import sys

from dextr import archspace
from dextr.evaluation import BenchmarkTable, write_benchmark

WEIGHTS = {"nor_conv_3x3": 5.0, "nor_conv_1x1": 3.0, "skip_connect": 1.0, "avg_pool_3x3": 0.5, "none": 0.0}


def toy_accuracy(arch) -> float:
    return 60.0 + sum(WEIGHTS[op] for op in arch.edges)


def main(path="src/dextr/data/sample_benchmark.csv", rows=50):
    encs, seen, i = [], set(), 0
    while len(encs) < rows:
        a = archspace.sample(1000 + i)
        i += 1
        if a in seen:
            continue
        seen.add(a)
        encs.append(a)
    table = BenchmarkTable([a.encode() for a in encs], [toy_accuracy(a) for a in encs], "synthetic")
    write_benchmark(table, path)


if __name__ == "__main__":
    main(*sys.argv[1:])
