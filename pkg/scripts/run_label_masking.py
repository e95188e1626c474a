"""Test F2 as a growing share of training labels is hidden.

The masked nodes stay in the graphs, so GNNs still propagate their features; tabular
ensembles simply lose those rows.

    python3 scripts/run_label_masking.py --data-dir data/synthetic --kind cp-gcn --epochs 100
"""

import argparse

from amlgraph.elliptic import DatasetSplit, build_timestep_graphs, load_dataset_dir, parse_steps
from amlgraph.metrics import format_table
from amlgraph.pipeline import MODEL_KINDS, ExperimentConfig, run_experiment
from amlgraph.trainer import TrainConfig


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data-dir", required=True)
    p.add_argument("--kind", default="gcn", choices=MODEL_KINDS)
    p.add_argument("--fractions", default="0,0.25,0.5,0.75,0.9")
    p.add_argument("--seeds", default="0-2")
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--train-steps", default="1-29")
    p.add_argument("--val-steps", default="30-34")
    p.add_argument("--test-steps", default="35-49")
    a = p.parse_args()

    raw = load_dataset_dir(a.data_dir)
    graphs = build_timestep_graphs(raw)
    split = DatasetSplit.parse(a.train_steps, a.val_steps, a.test_steps)
    seeds = parse_steps(a.seeds)
    rows = []
    for frac in (float(f) for f in a.fractions.split(",")):
        cfg = ExperimentConfig(kind=a.kind, seeds=seeds, split=split, mask_fraction=frac,
                               train=TrainConfig(epochs=a.epochs, seeds=seeds))
        agg = run_experiment(cfg, raw, graphs)["aggregate"]
        rows.append({"fraction": f"{frac:.2f}", "f2": tuple(agg["f2"]), "precision": tuple(agg["precision"]),
                     "recall": tuple(agg["recall"])})
        print(f"mask {frac:.2f}: F2 {agg['f2'][0]:.3f}", flush=True)
    print(format_table(rows, [("fraction", "Masked"), ("f2", "F2"), ("precision", "Precision"),
                              ("recall", "Recall")]))


if __name__ == "__main__":
    main()
