"""Seeded 2-D toy datasets: swiss roll and two concentric circles.

Every generator draws from numpy's PCG64 bit generator, whose stream is fixed
across platforms for a given seed. All constants are module-level so they can
be echoed into run manifests.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

PRNG_ID = "numpy.random.PCG64"
N_SAMPLES = 1000
N_TRAIN = 100
BOX = 4.0

SWISS = {
    "t_low": 1.5 * math.pi,
    "t_high": 4.5 * math.pi,
    "radial_scale": 0.35,
    "noise": 0.05,
    "extent": 3.8,
}
CIRCLES = {"radii": (1.5, 3.0), "noise": 0.08}


@dataclass(frozen=True, eq=False)
class Dataset2D:
    name: str
    points: np.ndarray
    seed: int
    split_seed: int

    def __post_init__(self):
        self.points.setflags(write=False)

    @property
    def train(self) -> np.ndarray:
        return split(self)[0]

    @property
    def test(self) -> np.ndarray:
        return split(self)[1]

    def constants(self) -> dict:
        c = SWISS if self.name == "swiss" else CIRCLES
        return {"name": self.name, "seed": self.seed, "split_seed": self.split_seed,
                "n": N_SAMPLES, "n_train": N_TRAIN, "prng": PRNG_ID, **c}


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def swiss_roll_curve(t: np.ndarray) -> np.ndarray:
    """Noise-free roll, already scaled into the box."""
    c = SWISS
    scale = c["extent"] / (c["radial_scale"] * c["t_high"])
    return scale * c["radial_scale"] * np.stack([t * np.cos(t), t * np.sin(t)], axis=1)


def gen_swiss_roll(seed: int = 0, split_seed: int | None = None) -> Dataset2D:
    c = SWISS
    rng = _rng(seed)
    t = rng.uniform(c["t_low"], c["t_high"], N_SAMPLES)
    raw = c["radial_scale"] * np.stack([t * np.cos(t), t * np.sin(t)], axis=1)
    raw = raw + c["noise"] * rng.standard_normal((N_SAMPLES, 2))
    pts = raw * (c["extent"] / (c["radial_scale"] * c["t_high"]))
    pts = np.clip(pts, -BOX, BOX)
    return Dataset2D("swiss", pts, seed, seed if split_seed is None else split_seed)


def gen_circles(seed: int = 0, split_seed: int | None = None) -> Dataset2D:
    c = CIRCLES
    rng = _rng(seed)
    half = N_SAMPLES // 2
    radii = np.repeat(np.asarray(c["radii"], dtype=np.float64), half)
    ang = rng.uniform(0.0, 2.0 * math.pi, N_SAMPLES)
    r = radii + c["noise"] * rng.standard_normal(N_SAMPLES)
    pts = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
    pts = np.clip(pts, -BOX, BOX)
    return Dataset2D("circles", pts, seed, seed if split_seed is None else split_seed)


GENERATORS = {"swiss": gen_swiss_roll, "circles": gen_circles}


def load(name: str, seed: int = 0, split_seed: int | None = None) -> Dataset2D:
    try:
        return GENERATORS[name](seed, split_seed)
    except KeyError:
        raise ValueError(f"unknown dataset {name!r}; choose from {sorted(GENERATORS)}") from None


def split_indices(ds: Dataset2D) -> tuple[np.ndarray, np.ndarray]:
    perm = _rng(ds.split_seed + 7919).permutation(len(ds.points))
    return perm[:N_TRAIN], perm[N_TRAIN:]


def split(ds: Dataset2D) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic shuffled split into 100 training and 900 test points."""
    tr, te = split_indices(ds)
    return ds.points[tr], ds.points[te]


def to_csv(ds: Dataset2D, path) -> None:
    tr, _ = split_indices(ds)
    is_train = np.zeros(len(ds.points), dtype=bool)
    is_train[tr] = True
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "split"])
        for (x, y), flag in zip(ds.points, is_train):
            w.writerow([repr(float(x)), repr(float(y)), "train" if flag else "test"])
