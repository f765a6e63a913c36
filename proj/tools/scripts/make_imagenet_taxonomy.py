#!/usr/bin/env python3
"""Build the ImageNet-1K is-a tree from WordNet 3.0 noun data.

Writes two files understood by `causex taxonomy-dist` / `causex batch`:

  edges:  "parent_wnid child_wnid" per line
  map:    "class_index wnid" per line (class index = position in the sorted
          synset list, which is the torchvision/timm ordering)

WordNet hypernymy is a DAG. Each synset keeps the hypernym (regular or
instance) closest to the root, ties broken by listing order, which yields a
tree rooted at entity (n00001740) whose depths equal WordNet's min_depth.
"""

import argparse
import sys
from pathlib import Path


def read_hypernyms(data_noun: Path) -> dict[str, list[str]]:
    hypernyms: dict[str, list[str]] = {}
    with data_noun.open(encoding="latin-1") as fh:
        for line in fh:
            if line.startswith("  "):
                continue  # license preamble
            fields = line.split(" | ")[0].split()
            offset = fields[0]
            word_count = int(fields[3], 16)
            pos = 4 + 2 * word_count
            pointer_count = int(fields[pos])
            pos += 1
            for _ in range(pointer_count):
                symbol, target, target_pos = fields[pos], fields[pos + 1], fields[pos + 2]
                pos += 4
                if symbol in ("@", "@i") and target_pos == "n":
                    hypernyms.setdefault("n" + offset, []).append("n" + target)
    return hypernyms


def choose_parents(hypernyms: dict[str, list[str]]) -> dict[str, str]:
    depth: dict[str, int] = {}

    def min_depth(node: str) -> int:
        if node not in depth:
            parents = hypernyms.get(node, [])
            depth[node] = 0 if not parents else 1 + min(min_depth(p) for p in parents)
        return depth[node]

    sys.setrecursionlimit(10000)
    return {node: min(parents, key=min_depth)
            for node, parents in hypernyms.items()}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--wordnet-dir", type=Path, required=True,
                        help="directory holding WordNet 3.0 data.noun")
    parser.add_argument("--synsets", type=Path, required=True,
                        help="1000 ImageNet wnids, one per line")
    parser.add_argument("--edges-out", type=Path, required=True)
    parser.add_argument("--map-out", type=Path, required=True)
    args = parser.parse_args()

    parents = choose_parents(read_hypernyms(args.wordnet_dir / "data.noun"))
    wnids = sorted(w.strip() for w in args.synsets.read_text().split() if w.strip())
    if len(wnids) != 1000:
        print(f"expected 1000 wnids, got {len(wnids)}", file=sys.stderr)
        return 1

    edges: set[tuple[str, str]] = set()
    for wnid in wnids:
        node = wnid
        seen = {node}
        while node in parents:
            parent = parents[node]
            if parent in seen:
                print(f"cycle through {parent}", file=sys.stderr)
                return 1
            edges.add((parent, node))
            seen.add(parent)
            node = parent
        if node != "n00001740":
            print(f"{wnid} does not reach entity (stopped at {node})", file=sys.stderr)
            return 1

    with args.edges_out.open("w") as fh:
        for parent, child in sorted(edges):
            fh.write(f"{parent} {child}\n")
    with args.map_out.open("w") as fh:
        for index, wnid in enumerate(wnids):
            fh.write(f"{index} {wnid}\n")
    print(f"{len(edges)} edges, {len(wnids)} classes")
    return 0


if __name__ == "__main__":
    sys.exit(main())
