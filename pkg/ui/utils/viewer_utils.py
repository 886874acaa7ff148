import json
import math
import os
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from ptyinr.container import MANIFEST


def discover_runs(root: str) -> List[Dict]:
    """
    Walk `root` for container directories (anything holding a manifest.json)
    and return one dict per run with its path, kind and method, sorted by path.
    Staging and checkpoint directories are skipped.
    """
    runs = []
    if not os.path.isdir(root):
        return runs
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = sorted(d for d in dirnames if ".tmp-" not in d and not d.endswith(".ckpt"))
        if MANIFEST not in filenames:
            continue
        with open(os.path.join(dirpath, MANIFEST)) as f:
            manifest = json.load(f)
        metadata = manifest.get("metadata", {})
        runs.append({
            "path": dirpath,
            "name": os.path.relpath(dirpath, root),
            "kind": metadata.get("kind", "unknown"),
            "method": metadata.get("method"),
            "arrays": sorted(manifest.get("arrays", {})),
            "provenance": manifest.get("provenance", {}),
        })
        dirnames[:] = []
    return sorted(runs, key=lambda r: r["name"])


def parse_report(text: str) -> Dict[str, object]:
    """Inverse of the `key = value` report format; numbers become floats, `inf` included."""
    report = {}
    for line in text.splitlines():
        key, sep, value = line.partition(" = ")
        if not sep:
            continue
        try:
            report[key] = float(value)
        except ValueError:
            report[key] = value
    return report


def find_reports(root: str) -> List[str]:
    """Report files are the `.txt` files written next to run directories."""
    found = []
    for dirpath, _, filenames in os.walk(root):
        found.extend(os.path.join(dirpath, f) for f in filenames if f.endswith(".txt"))
    return sorted(found)


def decimate(history: pd.DataFrame, max_points: int = 2000) -> pd.DataFrame:
    """Keep every k-th row so plots stay responsive; the last row is always kept."""
    if max_points < 2 or len(history) <= max_points:
        return history
    stride = math.ceil(len(history) / max_points)
    keep = np.zeros(len(history), dtype=bool)
    keep[::stride] = True
    keep[-1] = True
    return history[keep]


def load_loss_history(run_path: str) -> Optional[pd.DataFrame]:
    path = os.path.join(run_path, "loss_history.csv")
    if not os.path.isfile(path):
        return None
    return pd.read_csv(path)
