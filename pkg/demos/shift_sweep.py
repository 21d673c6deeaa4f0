"""How the pretrained detector and the adapted one score target-domain objects
as the domain shift grows.

    python3 demos/shift_sweep.py
"""

import numpy as np

from odamot import ScenarioConfig, Tracker, TrackerConfig, batch_train, generate, make_pretrain_set
from odamot.linmodel import normalize_features


def main(seed=0):
    fn = TrackerConfig().feature_norm
    src = ScenarioConfig(seed=seed)
    pos, neg = make_pretrain_set(src, 2000, 8000)
    model = batch_train(normalize_features(pos, fn), normalize_features(neg, fn), lam=1e-4)
    print("delta  recall(pretrained)  recall(adapted)")
    for delta in (0.0, 1.0, 2.0, 3.0, 4.0):
        sc = ScenarioConfig(seed=seed, delta=delta, n_frames=100)
        bundles, _ = generate(sc)
        tr = Tracker(model, TrackerConfig(seed=seed))
        tr.run(bundles)
        feats = normalize_features(np.array([b.provider(box) for b in bundles for _, box in b.gt]), fn)
        before = np.mean(model.prob(feats) >= 0.5)
        after = np.mean(tr.adapted_model.prob(feats) >= 0.5)
        print(f"{delta:5.1f}  {before:18.3f}  {after:15.3f}")


if __name__ == "__main__":
    main()
