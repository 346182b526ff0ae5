"""Scratch harness for tuning the synthetic benchmark (not shipped)."""
import itertools
import sys
import time

import numpy as np

from dygad.config import ExperimentConfig
from dygad.synthetic import two_community_store
from dygad.inject import inject_anomalies
from dygad.trainer import fit
from dygad.evaluation import auc_of_split, evaluate


def run_once(store, tag, track_test=True, **kw):
    cfg = ExperimentConfig(dataset_format="synthetic", **kw)
    t0 = time.perf_counter()
    trace = []
    res = fit(store, cfg)
    rec = evaluate(res.model, store, res.splits.test_idx, eval_seed=cfg.eval_seed)
    dt = time.perf_counter() - t0
    vals = " ".join(f"{r.val_auc:.2f}" for r in res.log)
    print(f"{tag}: test {rec.auc:.3f} best_val {res.best_val_auc:.2f}@"
          f"ep{res.best_epoch} ({dt:.0f}s)\n  val {vals}", flush=True)
    return rec.auc, res


if __name__ == "__main__":
    mode = sys.argv[1] if len(sys.argv) > 1 else "proxy"
    if mode == "proxy":
        store = two_community_store(n_nodes=200, n_events=900, seed=11)
        store, _ = inject_anomalies(store, 0.03, 2, seed=1)
        print("anoms", int((store.labels == 1).sum()))
        grid = itertools.product(
            ("center-normals", "center-anomalies"),
            (False, True),            # conventional queries
            ((8, 4), (16, 8)),        # fanouts
        )
        for orient, conv, fan in grid:
            run_once(store,
                     f"{orient[:9]} conv={int(conv)} fan={fan}",
                     orientation=orient, conventional_local_queries=conv,
                     fanouts=fan, hidden=16, time_dim=16, heads=2, layers=2,
                     batch_size=64, epochs=12, learning_rate=1e-3,
                     degree_buckets=16)
