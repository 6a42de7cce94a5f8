"""Write the synthetic demo corpus and its config, optionally run the pipeline.

Example::

    python3 scripts/make_synthetic.py /tmp/demo --run
"""

import argparse
import time
from dataclasses import replace

from healthnet.cli import main as cli_main
from healthnet.synthetic import CorpusParams, write_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("directory")
    ap.add_argument("--seed", type=int, default=CorpusParams.seed)
    ap.add_argument("--documents", type=int, default=CorpusParams.n_documents)
    ap.add_argument("--users", type=int, default=CorpusParams.n_users)
    ap.add_argument("--locations", type=int, default=CorpusParams.n_locations)
    ap.add_argument("--run", action="store_true", help="run every pipeline stage afterwards")
    args = ap.parse_args()

    params = replace(
        CorpusParams(), seed=args.seed, n_documents=args.documents, n_users=args.users, n_locations=args.locations
    )
    config = write_corpus(args.directory, params)
    print(f"wrote {config}")
    if args.run:
        start = time.perf_counter()
        code = cli_main(["--config", str(config), "all"])
        print(f"pipeline exit code {code} after {time.perf_counter() - start:.1f}s")
        print((config.parent / "out" / "table3.tsv").read_text())


if __name__ == "__main__":
    main()
