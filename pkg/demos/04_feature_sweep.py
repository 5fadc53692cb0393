"""Rank single features by held-out accuracy, then show sweep resume.

Runs the sweep over all seven one-feature subsets with both recurrent
model kinds, prints the ranked table, and reruns to show the ledger
skipping every finished cell.
"""

import tempfile
import time
from pathlib import Path

from asvkit.train_eval import (
    TrainConfig,
    feature_sweep,
    make_synthetic_dataset,
)


def main() -> None:
    with tempfile.TemporaryDirectory() as root:
        root = Path(root)
        manifest = make_synthetic_dataset(root, n_videos=10, seed=0)
        csv_path = root / "sweep.csv"
        ledger = root / "ledger.jsonl"
        settings = TrainConfig(lr=0.01, batch_size=16, epochs=12, seed=0)

        start = time.time()
        rows = feature_sweep(manifest, csv_path, ledger,
                             sizes=(1,), train_config=settings, root=root)
        print(f"swept {len(rows)} cells in {time.time() - start:.1f}s\n")
        print(csv_path.read_text())

        # every cell is already in the ledger, so this pass trains nothing
        start = time.time()
        feature_sweep(manifest, csv_path, ledger,
                      sizes=(1,), train_config=settings, root=root)
        print(f"rerun with a warm ledger: {time.time() - start:.2f}s "
              f"({len(ledger.read_text().splitlines())} cells on record)")


if __name__ == "__main__":
    main()
