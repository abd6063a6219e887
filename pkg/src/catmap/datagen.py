"""Seeded simulation of coefficients, designs, responses and synthetic data.

Randomness comes from numpy's PCG64 bit generator. A seed is a 64-bit integer,
or a tuple of integers naming a substream; ``spawn_seeds`` derives independent
child seeds with ``numpy.random.SeedSequence.spawn`` so replication streams do
not depend on execution order.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .glm import Dataset


def rng_for(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    if isinstance(seed, (tuple, list)):
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(seed))))
    if seed is None:
        raise ValueError("a seed is required")
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def spawn_seeds(seed: int, count: int) -> list[tuple[int, ...]]:
    """Child seeds (entropy, spawn key) for independent replication streams."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [(int(seed),) + tuple(int(k) for k in c.spawn_key) for c in children]


def substream(seed, *labels: int):
    """A deterministic named child of ``seed`` (used for e.g. the synthetic-data stream)."""
    base = list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]
    return tuple(base) + tuple(int(x) for x in labels)


def student_t(rng: np.random.Generator, df: float, size) -> np.ndarray:
    """Student-t draws as Z / sqrt(chi2_df / df)."""
    z = rng.standard_normal(size)
    c = rng.chisquare(df, size)
    return z / np.sqrt(c / df)


@dataclass(frozen=True)
class CoefficientSpec:
    p: int
    kappa1: float
    entry_law: str = "scaled_t3"  # scaled_t3 | gaussian | constant | custom
    custom: tuple | None = None
    exact_norm: bool = False  # rescale so that |beta0| = kappa1 exactly


@dataclass(frozen=True)
class DesignSpec:
    n: int
    p: int
    law: str = "standard_gaussian"  # standard_gaussian | gaussian_with_covariance | scaled_t
    covariance: np.ndarray | None = None
    df: int | None = None


@dataclass(frozen=True)
class AuxiliarySpec:
    M: int
    kind: str = "noninformative"  # noninformative | informative
    kappa2: float = 0.0
    xi: float = 0.0


def gen_coefficients(spec: CoefficientSpec, seed) -> np.ndarray:
    if spec.p <= 0:
        raise ValueError("p must be positive")
    if spec.entry_law == "scaled_t3":
        t = student_t(rng_for(seed), 3, spec.p)
        beta = spec.kappa1 * t / math.sqrt(3 * spec.p)
    elif spec.entry_law == "gaussian":
        beta = spec.kappa1 * rng_for(seed).standard_normal(spec.p) / math.sqrt(spec.p)
    elif spec.entry_law == "constant":
        beta = np.full(spec.p, spec.kappa1 / math.sqrt(spec.p))
    elif spec.entry_law == "custom":
        beta = np.asarray(spec.custom, dtype=float)
        if beta.shape != (spec.p,):
            raise ValueError("custom coefficients must have length p")
        beta = beta.copy()
    else:
        raise ValueError(f"unknown entry law {spec.entry_law!r}")
    if spec.exact_norm:
        norm = np.linalg.norm(beta)
        if norm == 0:
            raise ValueError("cannot rescale a zero vector")
        beta *= spec.kappa1 / norm
    return beta


def toeplitz_covariance(p: int, r: float) -> np.ndarray:
    idx = np.arange(p)
    return r ** np.abs(idx[:, None] - idx[None, :])


def gen_design(design: DesignSpec, rng: np.random.Generator) -> np.ndarray:
    n, p = design.n, design.p
    if design.law == "standard_gaussian":
        return rng.standard_normal((n, p))
    if design.law == "gaussian_with_covariance":
        if design.covariance is None:
            raise ValueError("covariance required")
        cov = np.asarray(design.covariance, dtype=float)
        if cov.shape != (p, p):
            raise ValueError("covariance must be p x p")
        try:
            L = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("covariance is not positive definite") from None
        return rng.standard_normal((n, p)) @ L.T
    if design.law == "scaled_t":
        df = design.df
        if df is None or df < 3:
            raise ValueError("scaled_t needs df >= 3")
        return student_t(rng, df, (n, p)) * math.sqrt((df - 2) / df)
    raise ValueError(f"unknown design law {design.law!r}")


def gen_logistic_data(design: DesignSpec, beta, seed) -> Dataset:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (design.p,):
        raise ValueError("beta length must equal design.p")
    rng = rng_for(seed)
    X = gen_design(design, rng)
    y = (rng.random(design.n) < expit(X @ beta)).astype(float)
    return Dataset(X, y, "observed")


def gen_beta_s(beta0, kappa2: float, xi: float, seed, kappa1: float | None = None) -> np.ndarray:
    """beta_s = xi (kappa2/kappa1) beta0 + kappa2 sqrt(1 - xi^2) e, e_j scaled t3 with variance 1/p.

    ``kappa1`` defaults to |beta0|.
    """
    beta0 = np.asarray(beta0, dtype=float)
    if not 0.0 <= xi <= 1.0:
        raise ValueError("xi must lie in [0, 1]")
    norm = float(np.linalg.norm(beta0)) if kappa1 is None else float(kappa1)
    if norm == 0 and xi > 0:
        raise ValueError("beta0 must be nonzero when xi > 0")
    p = beta0.shape[0]
    noise = student_t(rng_for(seed), 3, p) / math.sqrt(3 * p)
    shared = xi * (kappa2 / norm) * beta0 if xi > 0 else np.zeros(p)
    return shared + kappa2 * math.sqrt(1.0 - xi * xi) * noise


def gen_synthetic(aux: AuxiliarySpec, design: DesignSpec, beta_s=None, seed=0) -> Dataset:
    if aux.M <= 0:
        raise ValueError("M must be positive")
    rng = rng_for(seed)
    X = gen_design(DesignSpec(aux.M, design.p, design.law, design.covariance, design.df), rng)
    if aux.kind == "noninformative":
        y = (rng.random(aux.M) < 0.5).astype(float)
        return Dataset(X, y, "synthetic")
    if aux.kind == "informative":
        if beta_s is None:
            raise ValueError("informative auxiliary data needs beta_s")
        y = (rng.random(aux.M) < expit(X @ np.asarray(beta_s, dtype=float))).astype(float)
        return Dataset(X, y, "auxiliary")
    raise ValueError(f"unknown auxiliary kind {aux.kind!r}")


def resample_covariates(observed: Dataset, M: int, seed) -> Dataset:
    """Synthetic rows whose coordinates are independent resamples of the observed columns."""
    if M <= 0:
        raise ValueError("M must be positive")
    if observed.n == 0:
        raise ValueError("observed data is empty")
    rng = rng_for(seed)
    n, p = observed.X.shape
    idx = rng.integers(0, n, size=(M, p))
    X = np.take_along_axis(observed.X, idx, axis=0)
    y = (rng.random(M) < 0.5).astype(float)
    return Dataset(X, y, "synthetic")


def _fmt(v: float) -> str:
    # repr is the shortest round-trip form, never more than 17 significant digits
    return repr(float(v))


def write_dataset_csv(data: Dataset, path_or_buf) -> None:
    close = False
    if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
        fh = open(path_or_buf, "w", newline="")
        close = True
    else:
        fh = path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y"] + [f"x{j + 1}" for j in range(data.p)])
        for yi, row in zip(data.y, data.X):
            w.writerow([_fmt(yi)] + [_fmt(v) for v in row])
    finally:
        if close:
            fh.close()


def read_dataset_csv(path, role: str = "observed", family=None) -> Dataset:
    from .glm import LOGISTIC

    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if not header or header[0] != "y" or any(h != f"x{j + 1}" for j, h in enumerate(header[1:])):
        raise ValueError("CSV header must be y,x1,...,xp")
    return Dataset(arr[:, 1:], arr[:, 0], role, family=family or LOGISTIC)


def dataset_to_csv_string(data: Dataset) -> str:
    buf = io.StringIO()
    write_dataset_csv(data, buf)
    return buf.getvalue()
