"""Scene-directory I/O.

A scene on disk is a directory of 8-bit RGB PNGs, one per view, plus a
manifest::

    scene_name/
      meta.json            {"angular": [U, V], "bit_depth": 8}
      view_{u:02d}_{v:02d}.png

Indices are 0-based and zero-padded to two digits.  The loader validates
that the whole U x V grid is present.
"""

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .lightfield import LightField


def view_filename(u, v):
    return f"view_{u:02d}_{v:02d}.png"


def save_scene(lf, out_dir):
    """Write a light field as a scene directory (values quantized to 8 bit)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    uu, vv = lf.angular_shape
    meta = {"angular": [uu, vv], "bit_depth": 8}
    (out_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    for u in range(uu):
        for v in range(vv):
            img = np.rint(lf.data[u, v] * 255.0).clip(0, 255).astype(np.uint8)
            Image.fromarray(img, mode="RGB").save(out_dir / view_filename(u, v))
    return out_dir


def load_scene(scene_dir):
    """Load a scene directory into a LightField; fails on incomplete grids."""
    scene_dir = Path(scene_dir)
    meta_path = scene_dir / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"missing meta.json in {scene_dir}")
    meta = json.loads(meta_path.read_text())
    uu, vv = meta["angular"]
    if meta.get("bit_depth", 8) != 8:
        raise ValueError(f"unsupported bit_depth {meta.get('bit_depth')}")
    views = []
    for u in range(uu):
        row = []
        for v in range(vv):
            path = scene_dir / view_filename(u, v)
            if not path.exists():
                raise FileNotFoundError(f"scene {scene_dir} is missing view ({u}, {v})")
            img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
            row.append(img)
        views.append(np.stack(row))
    data = np.stack(views)
    return LightField(data, validate=False)
