"""Synthetic corpus -> datasets -> train MLP and GRNN -> test RMSE against the rule baseline.

Usage: python demos/pipeline_demo.py [n_matches]   (default 6; about a minute)
"""
import sys

from velcomp.ingest import SplitSpec, ingest_matches
from velcomp.models import ModelSpec, build_model
from velcomp.synth import SynthConfig, generate_corpus
from velcomp.train_eval import TrainConfig, evaluate_rmse, train


def main(n_matches=6):
    matches = generate_corpus(SynthConfig(n_matches=n_matches, seed=0))
    n_test = max(1, n_matches // 6)
    ds, manifest = ingest_matches(((m.match_id, m.tracking, m.events) for m in matches),
                                  split_spec=SplitSpec(n_matches - 2 * n_test, n_test, n_test))
    print("dataset sizes:", {f"{k}/{s}": len(v) for (k, s), v in sorted(ds.items())})

    rule = evaluate_rmse(build_model(ModelSpec(arch="rule_based")), ds[("D", "test")]).rmse
    mlp = train(ModelSpec(arch="mlp"), ds[("D", "train")], ds[("D", "val")],
                TrainConfig(batch_size=64, lr=1e-3, max_epochs=60, patience=10))
    grnn = train(ModelSpec(arch="grnn"), ds[("Dstar", "train")], ds[("Dstar", "val")],
                 TrainConfig(batch_size=32, lr=1e-3, max_epochs=4))
    print(f"rule-based {rule:.3f} m/s")
    print(f"mlp        {evaluate_rmse(mlp.model, ds[('D', 'test')]).rmse:.3f} m/s")
    print(f"grnn       {evaluate_rmse(grnn.model, ds[('Dstar', 'test')]).rmse:.3f} m/s")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 6)
