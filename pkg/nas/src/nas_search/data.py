"""Synthetic two-class image dataset for desk-scale search runs."""

from __future__ import annotations

import numpy as np
import torch

from .config import ConfigError


def toy_dataset(n: int = 512, seed: int = 0, noise: float = 0.3):
    """Class 0 carries a bright patch top-left, class 1 bottom-right."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    x = rng.normal(0.0, noise, size=(n, 1, 8, 8))
    for i in range(n):
        if y[i] == 0:
            x[i, 0, 1:4, 1:4] += 1.5
        else:
            x[i, 0, 4:7, 4:7] += 1.5
    return torch.tensor(x, dtype=torch.float32), torch.tensor(y, dtype=torch.long)


def load_dataset(path, n: int = 512, seed: int = 0):
    """An .npz with arrays x (N,C,H,W) and y (N,); the literal name
    "synthetic" generates the toy set instead."""
    if str(path) == "synthetic":
        return toy_dataset(n, seed)
    try:
        with np.load(path) as doc:
            x, y = doc["x"], doc["y"]
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read dataset: {exc}") from exc
    return torch.tensor(x, dtype=torch.float32), torch.tensor(y, dtype=torch.long)


def split_train_val(x, y):
    """Disjoint 50/50 split in given order (shuffle upstream if needed)."""
    half = x.shape[0] // 2
    return (x[:half], y[:half]), (x[half:], y[half:])


def batches(x, y, batch_size, generator=None):
    idx = torch.randperm(x.shape[0], generator=generator)
    for start in range(0, x.shape[0], batch_size):
        sel = idx[start : start + batch_size]
        yield x[sel], y[sel]
