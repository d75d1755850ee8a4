"""Export a small never-compressed natural-image corpus bundled with scikit-image.

Used by the demos and the acceptance suite when no camera corpus is at hand.
Requires the optional ``scikit-image`` dependency (``pip install .[sample]``).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

# natural photographs at least 256 pixels on each side; synthetic graphics excluded
SAMPLE_IMAGES = (
    "astronaut", "brick", "camera", "cat", "chelsea", "clock", "coffee", "coins",
    "grass", "gravel", "hubble_deep_field", "immunohistochemistry", "moon",
    "retina", "rocket",
)


def export_sample_corpus(out_dir, names=SAMPLE_IMAGES) -> list:
    """Write the named images as lossless PNG files and return their paths."""
    import skimage.data
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in names:
        arr = np.asarray(getattr(skimage.data, name)())
        if arr.ndim == 3:
            arr = arr[..., :3]
        path = out_dir / f"{name}.png"
        if not path.exists():
            Image.fromarray(arr.astype(np.uint8)).save(path)
        paths.append(path)
    return paths
