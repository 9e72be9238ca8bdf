"""Convert preprocessed UCI benchmark files to pymixloss CSV datasets.

Every dataset directory of the benchmark holds ``<name>_R.dat``: a
tab-separated table with a header line, a leading row-number column,
standardized features and the class label in the last column.

Usage:
    python scripts/convert_uci.py UCI_DIR OUTPUT_DIR [NAME ...]
"""
import argparse
import logging
import os
import sys

import pandas as pd

from pymixloss.data import load_csv
from pymixloss.exceptions import DatasetError

LOG = logging.getLogger(__name__)


def convert(source: str, target: str) -> int:
    """Convert one ``_R.dat`` file; return the number of samples."""
    frame = pd.read_csv(source, sep="\t", header=0, index_col=0)
    frame.columns = [str(c).strip() for c in frame.columns]
    frame.to_csv(target, header=False, index=False, float_format="%.17g")
    # Reading it back validates features and labels.
    dataset = load_csv(target)
    LOG.info("%s: %r", os.path.basename(source), dataset)
    return len(dataset)


def main(argv=None) -> int:
    """Convert every requested dataset directory."""
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("uci_dir")
    parser.add_argument("output_dir")
    parser.add_argument("names", nargs="*", help="default: every dataset")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO)

    names = args.names or sorted(
        entry
        for entry in os.listdir(args.uci_dir)
        if os.path.isdir(os.path.join(args.uci_dir, entry))
    )
    os.makedirs(args.output_dir, exist_ok=True)
    failures = 0
    for name in names:
        source = os.path.join(args.uci_dir, name, f"{name}_R.dat")
        if not os.path.exists(source):
            LOG.warning("Skipping %s: no %s", name, source)
            continue
        try:
            convert(source, os.path.join(args.output_dir, f"{name}.csv"))
        except (DatasetError, pd.errors.ParserError) as exc:
            LOG.error("Cannot convert %s: %s", name, exc)
            failures += 1
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
