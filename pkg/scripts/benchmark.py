"""Time backbone extraction, clustering and PageRank on planted-partition graphs."""

import argparse
import time

from healthnet.backbone import BackboneParams, noise_corrected_backbone
from healthnet.centrality import centrality
from healthnet.community import detect_communities
from healthnet.graph import giant_component
from healthnet.synthetic import planted_partition


def timed(fn, *args, **kw):
    start = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - start


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--edges", type=int, nargs="+", default=[10_000, 30_000, 88_000])
    ap.add_argument("--groups", type=int, default=40)
    ap.add_argument("--delta", type=float, default=1.0)
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    # compile the numba kernels once so the first row is not inflated
    detect_communities(giant_component(planted_partition(200, 600, 4))[0], trials=1)

    print("edges\tkept\tmodules\tbackbone_s\tcluster_s\tpagerank_s")
    for target in args.edges:
        g = planted_partition(max(200, target // 5), target, args.groups, seed=0)
        (bb, _), t_bb = timed(noise_corrected_backbone, g, BackboneParams(delta=args.delta))
        giant, _ = giant_component(bb)
        hp, t_cl = timed(detect_communities, giant, seed=0, trials=args.trials, threads=args.threads)
        _, t_pr = timed(centrality, giant)
        print(f"{g.n_edges}\t{giant.n_edges}\t{hp.n_modules}\t{t_bb:.2f}\t{t_cl:.2f}\t{t_pr:.2f}")


if __name__ == "__main__":
    main()
