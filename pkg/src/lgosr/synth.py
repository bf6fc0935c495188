"""Synthetic benchmark generators with recorded ground truth.

Each kind writes a plain numeric CSV plus a ground-truth JSON recording the
true thresholds (natural units), step amplitudes, noise sigma, and feature
ranges, so recovery experiments can score themselves without re-deriving the
construction.

Feature ranges mimic clinical scales: x1 ~ U[40, 120] "mmHg" (threshold 65,
off-center so the z-space threshold is not trivially 0) and x2 ~ U[0.3, 8]
"mmol/L" (threshold 2.0).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

KINDS = ("step1d", "two_gate", "smooth", "and2")

X1_RANGE = (40.0, 120.0)
X2_RANGE = (0.3, 8.0)
X1_THRESHOLD = 65.0
X2_THRESHOLD = 2.0
X1_UNIT = "mmHg"
X2_UNIT = "mmol/L"


@dataclass
class SynthTruth:
    kind: str
    n: int
    noise_sigma: float
    seed: int
    feature_names: list[str]
    units: dict[str, str]
    ranges: dict[str, tuple[float, float]]
    thresholds: dict[str, float]   # empty for smooth
    amplitudes: dict[str, float]

    def to_json(self) -> str:
        payload = {
            "kind": self.kind,
            "n": self.n,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "feature_names": self.feature_names,
            "units": self.units,
            "ranges": {k: list(v) for k, v in self.ranges.items()},
            "thresholds": self.thresholds,
            "amplitudes": self.amplitudes,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def gen_synth(kind: str, n: int, noise: float, seed: int):
    """Return (feature_names, X, y, SynthTruth) for one synthetic kind."""
    if kind not in KINDS:
        raise ConfigError("unknown synthetic kind %r (expected one of %s)" % (kind, ", ".join(KINDS)))
    if n < 10:
        raise ConfigError("synthetic n must be >= 10, got %d" % (n,))
    if noise < 0:
        raise ConfigError("noise sigma must be >= 0, got %r" % (noise,))
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(*X1_RANGE, size=n)
    x2 = rng.uniform(*X2_RANGE, size=n)
    eps = noise * rng.standard_normal(n) if noise > 0 else np.zeros(n)
    feature_names = ["x1", "x2"]
    units = {"x1": X1_UNIT, "x2": X2_UNIT}
    ranges = {"x1": X1_RANGE, "x2": X2_RANGE}
    if kind == "step1d":
        y = 1.0 * (x1 > X1_THRESHOLD) + eps
        thresholds = {"x1": X1_THRESHOLD}
        amplitudes = {"x1": 1.0}
    elif kind == "two_gate":
        y = 1.0 * (x1 > X1_THRESHOLD) + 0.7 * (x2 > X2_THRESHOLD) + eps
        thresholds = {"x1": X1_THRESHOLD, "x2": X2_THRESHOLD}
        amplitudes = {"x1": 1.0, "x2": 0.7}
    elif kind == "and2":
        y = 1.0 * ((x1 > X1_THRESHOLD) & (x2 > X2_THRESHOLD)) + eps
        thresholds = {"x1": X1_THRESHOLD, "x2": X2_THRESHOLD}
        amplitudes = {"x1*x2": 1.0}
    else:  # smooth: polynomial response, no thresholds anywhere
        z1 = (x1 - 80.0) / 23.0
        z2 = (x2 - 4.15) / 2.2
        y = 0.6 * z1 + 0.5 * z2 * z2 - 0.3 * z1 * z2 + eps
        thresholds = {}
        amplitudes = {}
    X = np.column_stack([x1, x2])
    truth = SynthTruth(
        kind=kind, n=n, noise_sigma=noise, seed=seed,
        feature_names=feature_names, units=units, ranges=ranges,
        thresholds=thresholds, amplitudes=amplitudes,
    )
    return feature_names, X, y, truth


def write_synth(kind: str, n: int, noise: float, seed: int, out_prefix) -> tuple[str, str]:
    """Write <prefix>.csv and <prefix>_truth.json; byte-identical per seed."""
    feature_names, X, y, truth = gen_synth(kind, n, noise, seed)
    csv_path = "%s.csv" % (out_prefix,)
    truth_path = "%s_truth.json" % (out_prefix,)
    lines = [",".join(feature_names + ["y"])]
    for i in range(X.shape[0]):
        cells = [repr(float(v)) for v in X[i]] + [repr(float(y[i]))]
        lines.append(",".join(cells))
    with open(csv_path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(truth_path, "w") as fh:
        fh.write(truth.to_json())
    return csv_path, truth_path
