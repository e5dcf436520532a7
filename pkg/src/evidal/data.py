"""Synthetic class-imbalanced multi-label corpus.

Samples share a latent Gaussian factor z; each class thresholds its own
linear margin w_k . z + noise at the empirical quantile that realizes the
requested prevalence exactly, so rare classes stay rare by construction.
The class directions w_k share a common component (class_correlation), so
positives of different classes co-occur the way correlated findings do in
screening data; rare-class positives live in the same region of latent space
as the common ones rather than in isolated pockets.  Features are a random
linear mixing of z plus observation noise, which keeps the task learnable but
not trivial at small label budgets.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

SPLIT_TRAIN_POOL = "train_pool"
SPLIT_TEST = "test"

# prevalence profile spanning common to very rare, sums well under 1
DEFAULT_PREVALENCE = (
    0.18, 0.12, 0.10, 0.055, 0.05, 0.045, 0.04,
    0.03, 0.025, 0.022, 0.02, 0.015, 0.012, 0.002,
)


@dataclass
class SyntheticSpec:
    n_samples: int = 24000
    n_test: int = 4000
    n_features: int = 64
    n_classes: int = 14
    latent_dim: int = 16
    prevalence: tuple[float, ...] = DEFAULT_PREVALENCE
    label_noise: float = 0.0
    margin_noise: float = 0.05
    feature_noise: float = 0.5
    class_correlation: float = 0.6
    seed: int = 0

    def validate(self) -> None:
        if self.n_samples <= 0 or self.n_test < 0 or self.n_test >= self.n_samples:
            raise ValueError("need 0 <= n_test < n_samples")
        if self.n_features <= 0 or self.latent_dim <= 0 or self.n_classes <= 0:
            raise ValueError("dimensions must be positive")
        if len(self.prevalence) != self.n_classes:
            raise ValueError(
                f"prevalence has {len(self.prevalence)} entries for "
                f"{self.n_classes} classes")
        for k, p in enumerate(self.prevalence):
            if not 0.0 < p < 1.0:
                raise ValueError(f"prevalence[{k}]={p} outside (0, 1)")
        if not 0.0 <= self.label_noise < 0.5:
            raise ValueError("label_noise must be in [0, 0.5)")
        if not 0.0 <= self.class_correlation < 1.0:
            raise ValueError("class_correlation must be in [0, 1)")


@dataclass
class Dataset:
    features: np.ndarray            # (N, d) float64
    labels: np.ndarray              # (N, K) int {0, 1}
    split: np.ndarray               # (N,) str tags
    spec: SyntheticSpec | None = None

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return self.labels.shape[1]

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == split)

    def prevalence(self, split: str | None = None) -> np.ndarray:
        rows = slice(None) if split is None else self.indices(split)
        return self.labels[rows].mean(axis=0)


def generate(spec: SyntheticSpec) -> Dataset:
    """Draw a corpus under ``spec``; deterministic in ``spec.seed``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, k = spec.n_samples, spec.n_classes

    z = rng.standard_normal((n, spec.latent_dim))
    shared = rng.standard_normal(spec.latent_dim)
    shared /= np.linalg.norm(shared)
    resid = rng.standard_normal((k, spec.latent_dim))
    resid -= np.outer(resid @ shared, shared)
    resid /= np.linalg.norm(resid, axis=1, keepdims=True)
    # unit directions with cos(w_k, shared) = class_correlation exactly
    mu = spec.class_correlation
    class_dirs = mu * shared + np.sqrt(1.0 - mu * mu) * resid
    margins = z @ class_dirs.T + spec.margin_noise * rng.standard_normal((n, k))

    labels = np.zeros((n, k), dtype=np.int64)
    for j in range(k):
        want = int(round(spec.prevalence[j] * n))
        if want < 1:
            raise ValueError(
                f"class {j}: prevalence {spec.prevalence[j]} yields no "
                f"positives at n_samples={n}")
        # threshold at the order statistic that realizes the count exactly
        top = np.argsort(-margins[:, j], kind="stable")[:want]
        labels[top, j] = 1

    if spec.label_noise > 0.0:
        # dedicated stream so the noise setting never shifts feature draws
        flip_rng = np.random.default_rng((spec.seed, 0xF11B))
        flips = flip_rng.random((n, k)) < spec.label_noise
        labels = np.where(flips, 1 - labels, labels)

    mixing = rng.standard_normal((spec.latent_dim, spec.n_features))
    features = z @ mixing + spec.feature_noise * rng.standard_normal((n, spec.n_features))

    split = np.array([SPLIT_TRAIN_POOL] * (n - spec.n_test) + [SPLIT_TEST] * spec.n_test)
    return Dataset(features=features, labels=labels, split=split, spec=spec)


def augment(x: np.ndarray, strength: float, rng: np.random.Generator,
            feature_scale: np.ndarray | float = 1.0) -> np.ndarray:
    """Stochastic view of ``x``: additive Gaussian jitter scaled per feature,
    plus feature blanking with probability 0.1 * strength.

    ``strength`` 0 returns ``x`` unchanged (the identity view).
    """
    if strength < 0.0:
        raise ValueError("augment: strength must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    if strength == 0.0:
        return x.copy()
    jitter = rng.normal(0.0, 1.0, x.shape) * (strength * feature_scale)
    blank = rng.random(x.shape) < 0.1 * strength
    return np.where(blank, 0.0, x + jitter)


def save_csv(dataset: Dataset, path: str | Path) -> Path:
    """Write ``f0..f{d-1}, y0..y{K-1}, split`` rows; floats keep full
    precision (17 significant digits round-trip float64 exactly)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d, k = dataset.n_features, dataset.n_classes
    header = [f"f{i}" for i in range(d)] + [f"y{j}" for j in range(k)] + ["split"]
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in range(dataset.features.shape[0]):
            cells = [f"{v:.17g}" for v in dataset.features[row]]
            cells += [str(int(v)) for v in dataset.labels[row]]
            cells.append(str(dataset.split[row]))
            fh.write(",".join(cells) + "\n")
    if dataset.spec is not None:
        prov = path.with_suffix(path.suffix + ".provenance.json")
        prov.write_text(json.dumps(asdict(dataset.spec), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
    return path


def load_csv(path: str | Path) -> Dataset:
    """Read a corpus written by ``save_csv``; malformed rows are reported
    with their 1-based line number."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: no header") from None
        d = sum(1 for c in header if c.startswith("f"))
        k = sum(1 for c in header if c.startswith("y"))
        expected = [f"f{i}" for i in range(d)] + [f"y{j}" for j in range(k)] + ["split"]
        if header != expected or d == 0 or k == 0:
            raise ValueError(f"{path}: unexpected header {header[:6]}...")
        feats: list[list[float]] = []
        labs: list[list[int]] = []
        splits: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + k + 1:
                raise ValueError(f"{path}:{lineno}: expected {d + k + 1} cells, "
                                 f"got {len(row)}")
            try:
                feats.append([float(c) for c in row[:d]])
                lab = [int(c) for c in row[d:d + k]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if any(v not in (0, 1) for v in lab):
                raise ValueError(f"{path}:{lineno}: labels must be 0/1")
            if row[-1] not in (SPLIT_TRAIN_POOL, SPLIT_TEST):
                raise ValueError(f"{path}:{lineno}: unknown split {row[-1]!r}")
            labs.append(lab)
            splits.append(row[-1])
    if not feats:
        raise ValueError(f"{path}: no data rows")
    return Dataset(features=np.asarray(feats, dtype=np.float64),
                   labels=np.asarray(labs, dtype=np.int64),
                   split=np.asarray(splits))
