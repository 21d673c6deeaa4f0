"""Median CLEAR MOT metrics of ODAMOT, CIT and CFT on the synthetic shift scenario.

    python3 demos/compare_modes.py [n_seeds] [delta]
"""

import sys

import numpy as np

from odamot import ScenarioConfig, Tracker, TrackerConfig, batch_train, generate, make_pretrain_set
from odamot.linmodel import normalize_features
from odamot.metricsio import clear_mot, format_table
from odamot.tracker import MODES


def main(n_seeds=5, delta=2.0):
    rows = {m: [] for m in MODES}
    for seed in range(n_seeds):
        sc = ScenarioConfig(seed=seed, delta=delta)
        fn = TrackerConfig().feature_norm
        pos, neg = make_pretrain_set(sc, 2000, 8000)
        model = batch_train(normalize_features(pos, fn), normalize_features(neg, fn), lam=1e-4)
        bundles, gt = generate(sc)
        for mode in MODES:
            hyp = Tracker(model, TrackerConfig(mode=mode, seed=seed)).run(bundles)
            rows[mode].append(clear_mot(gt, hyp).row())
            print(f"seed {seed} {mode:6s} MOTA {rows[mode][-1]['MOTA']:7.2f}", flush=True)
    med = {m: {k: float(np.median([r[k] for r in rs])) for k in rs[0]} for m, rs in rows.items()}
    print(format_table(med))


if __name__ == "__main__":
    args = sys.argv[1:]
    main(int(args[0]) if args else 5, float(args[1]) if len(args) > 1 else 2.0)
