"""Writes the FSIM fixture pairs and their reference scores.

Reference scores come from `piq.fsim(..., chromatic=False)` in float64,
evaluated on the decoded 8-bit PNGs. Only square images are used.
"""
import json
from pathlib import Path

import numpy as np
import piq
import torch
from PIL import Image
from scipy.ndimage import gaussian_filter
from skimage import data, transform

HERE = Path(__file__).parent


def quantize(a):
    return np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)


def bicubic_roundtrip(a, scale):
    h, w = a.shape[:2]
    lr = transform.resize(a, (h // scale, w // scale), order=3, anti_aliasing=False)
    return transform.resize(lr, (h, w), order=3)


def square(img, top, left, size, out):
    crop = img[top:top + size, left:left + size] / 255.0
    return transform.resize(crop, (out, out), order=3, anti_aliasing=True)


def load(path):
    a = np.asarray(Image.open(path), dtype=np.float64) / 255.0
    return a[..., None] if a.ndim == 2 else a


def reference(a, b):
    ta = torch.tensor(a, dtype=torch.float64).permute(2, 0, 1)[None]
    tb = torch.tensor(b, dtype=torch.float64).permute(2, 0, 1)[None]
    return piq.fsim(ta, tb, data_range=1.0, reduction="none", chromatic=False).item()


def main():
    rng = np.random.default_rng(7)
    astro = square(data.astronaut(), 100, 150, 192, 64)
    camera = square(data.camera(), 40, 180, 256, 64)
    coffee = square(data.coffee(), 60, 180, 300, 48)
    cat = square(data.chelsea(), 20, 100, 280, 96)
    pairs = [
        (astro, bicubic_roundtrip(astro, 4)),
        (camera, bicubic_roundtrip(camera, 4)),
        (astro, astro + rng.normal(0.0, 0.05, astro.shape)),
        (coffee, gaussian_filter(coffee, sigma=(1.2, 1.2, 0))),
        (cat, 0.8 * np.roll(cat, 1, axis=1) + 0.1),
    ]
    expected = []
    for i, (a, b) in enumerate(pairs, start=1):
        names = (f"pair{i}_a.png", f"pair{i}_b.png")
        for name, img in zip(names, (a, b)):
            Image.fromarray(quantize(img)).save(HERE / name)
        da, db = load(HERE / names[0]), load(HERE / names[1])
        expected.append({"a": names[0], "b": names[1], "fsim": reference(da, db)})
    (HERE / "expected.json").write_text(json.dumps(expected, indent=2) + "\n")


if __name__ == "__main__":
    main()
