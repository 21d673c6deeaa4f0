"""Mini Fisher vectors on a rendered raster: blobs versus background crops.

    python3 demos/minifv_features.py
"""

import numpy as np

from odamot.core import BBox
from odamot.linmodel import batch_train
from odamot.providers import MiniFVProvider, fit_gaussian, patch_descriptors


def render(rng, w=320, h=120, n=6):
    img = rng.normal(0, 0.05, (h, w))
    yy, xx = np.mgrid[0:h, 0:w]
    boxes = []
    for _ in range(n):
        bw, bh = rng.uniform(30, 50), rng.uniform(20, 30)
        x, y = rng.uniform(0, w - bw), rng.uniform(0, h - bh)
        cx, cy = x + bw / 2, y + bh / 2
        img += np.exp(-(((xx - cx) / (bw / 3)) ** 2 + ((yy - cy) / (bh / 3)) ** 2))
        boxes.append(BBox(x, y, bw, bh))
    return img, boxes


def main():
    rng = np.random.default_rng(0)
    img, objects = render(rng)
    g = fit_gaussian(np.vstack([patch_descriptors(img, BBox(x, 0, 40, 40)) for x in range(0, 280, 20)]))
    prov = MiniFVProvider(img, g)
    bg = [BBox(rng.uniform(0, 280), rng.uniform(0, 90), 40, 28) for _ in range(60)]
    pos = prov.features_at([b.to_array() for b in objects])[0]
    neg = prov.features_at([b.to_array() for b in bg])[0]
    m = batch_train(pos, neg, lam=1e-3)
    print("feature dim", prov.dim)
    print("mean score on objects   ", float(np.mean(m.prob(pos))))
    print("mean score on background", float(np.mean(m.prob(neg))))


if __name__ == "__main__":
    main()
