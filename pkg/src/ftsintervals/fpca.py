"""Functional principal component models for one or two curve series.

Curves live on a regular grid, so the inner product is the plain dot
product and FPCA reduces to an eigendecomposition of the sample
covariance matrix (divisor ``n - 1``) of the centred rows.

Three model kinds are provided:

``ufts``
    one series, ``X_t = mean + sum_k score_{t,k} psi_k + e_t``.
``mfts``
    two series centred separately and stacked into one long vector; a
    single joint decomposition gives shared scores and stacked
    eigenfunctions.
``mlfts``
    two series decomposed into a common part, estimated from the average
    of the centred series, plus a series-specific part estimated from
    what the common part leaves over.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

UFTS, MFTS, MLFTS = "ufts", "mfts", "mlfts"
MODEL_KINDS = (UFTS, MFTS, MLFTS)

EIG_CLAMP = 1e-12


class FpcaError(ValueError):
    pass


# --------------------------------------------------------------------------
# component-count selection


def evr_terms(eigenvalues, n: int, indicator: str = "adjacent"):
    """Term table of the eigenvalue-ratio criterion and its threshold.

    With ``r_k = lam_{k+1} / lam_k`` and ``delta = 1 / ln(max(lam_1, n))``
    the term for ``k`` is ``r_k`` when the indicator condition holds and 1
    otherwise. ``indicator="adjacent"`` conditions on ``r_k >= delta``;
    ``indicator="leading"`` conditions on ``lam_k / lam_1 >= delta``.

    Only the leading run of strictly positive eigenvalues enters, and ``k``
    runs up to ``min(n - 1, len - 1)``.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.ndim != 1:
        raise FpcaError("eigenvalues must be a 1-d sequence")
    if np.any(lam < 0):
        raise FpcaError("eigenvalues must be nonnegative")
    if np.any(np.diff(lam) > 0):
        raise FpcaError("eigenvalues must be sorted in descending order")
    if indicator not in ("adjacent", "leading"):
        raise FpcaError(f"unknown EVR indicator {indicator!r}")
    positive = int(np.argmin(lam > 0)) if np.any(lam <= 0) else lam.size
    lam = lam[:positive]
    kmax = min(int(n) - 1, lam.size - 1)
    if kmax < 1:
        return np.empty(0), math.nan
    delta = 1.0 / math.log(max(lam[0], n))
    ratios = lam[1:kmax + 1] / lam[:kmax]
    if indicator == "adjacent":
        keep = ratios >= delta
    else:
        keep = lam[:kmax] / lam[0] >= delta
    return np.where(keep, ratios, 1.0), delta


def select_k_evr(eigenvalues, n: int, indicator: str = "adjacent") -> int:
    """Number of components minimising the eigenvalue-ratio criterion.

    Ties go to the smallest count; with fewer than two positive
    eigenvalues the answer is 1.

    >>> select_k_evr([10, 1, 0.5], n=100)
    2
    >>> select_k_evr([4, 2, 1], n=3)
    1
    """
    terms, _ = evr_terms(eigenvalues, n, indicator)
    if terms.size == 0:
        return 1
    return int(np.argmin(terms)) + 1


@dataclass(frozen=True)
class KRule:
    """How many components to keep: ``KRule.evr()`` or ``KRule.fixed(6)``."""

    kind: str = "evr"
    k: Optional[int] = None
    indicator: str = "leading"

    def __post_init__(self):
        if self.kind == "fixed":
            if self.k is None or self.k < 1:
                raise FpcaError("a fixed rule needs k >= 1")
        elif self.kind != "evr":
            raise FpcaError(f"unknown k rule {self.kind!r}")
        if self.indicator not in ("adjacent", "leading"):
            raise FpcaError(f"unknown EVR indicator {self.indicator!r}")

    @classmethod
    def evr(cls, indicator: str = "leading") -> "KRule":
        return cls("evr", None, indicator)

    @classmethod
    def fixed(cls, k: int) -> "KRule":
        return cls("fixed", int(k))

    @classmethod
    def parse(cls, text) -> "KRule":
        """``"evr"``, ``"evr-adjacent"``, ``"evr-leading"`` or an integer."""
        if isinstance(text, KRule):
            return text
        s = str(text).strip().lower()
        if s == "evr":
            return cls.evr()
        if s.startswith("evr-"):
            return cls.evr(s[4:])
        if s.startswith("k="):
            s = s[2:]
        try:
            return cls.fixed(int(s))
        except ValueError:
            raise FpcaError(f"cannot parse k rule {text!r}") from None

    @property
    def label(self) -> str:
        return f"K={self.k}" if self.kind == "fixed" else "EVR"

    def choose(self, eigenvalues, n: int, n_coords: int) -> int:
        if self.kind == "fixed":
            if self.k >= n or self.k >= n_coords:
                raise FpcaError(
                    f"fixed k={self.k} needs k < n_years ({n}) and k < n_coords ({n_coords})"
                )
            return self.k
        return select_k_evr(eigenvalues, n, self.indicator)


# --------------------------------------------------------------------------
# one decomposition


@dataclass(frozen=True)
class FpcaBlock:
    """One eigendecomposition: the retained components and all eigenvalues.

    ``eigenfunctions`` is ``[k, coords]`` with orthonormal rows and
    ``scores`` is ``[year, k]``.
    """

    mean: np.ndarray
    eigenfunctions: np.ndarray
    eigenvalues: np.ndarray
    scores: np.ndarray

    @property
    def k(self) -> int:
        return self.eigenfunctions.shape[0]

    def curves(self, scores) -> np.ndarray:
        return self.mean + np.asarray(scores, dtype=float) @ self.eigenfunctions


def _sign_fix(vecs):
    # rows: flip so that the largest-magnitude coordinate is positive
    idx = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(vecs.shape[0]), idx])
    signs[signs == 0] = 1.0
    return vecs * signs[:, None]


def eigen_decompose(x):
    """Mean, descending eigenvalues and eigenvectors (rows) of the sample covariance."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise FpcaError("need at least two curves")
    mean = x.mean(axis=0)
    centred = x - mean
    cov = centred.T @ centred / (n - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order].T
    scale = max(1.0, float(vals[0])) if vals.size else 1.0
    if vals.size and vals[-1] < -EIG_CLAMP * scale:
        raise FpcaError(f"covariance has a negative eigenvalue {vals[-1]:.3g}")
    vals = np.where(vals < 0, 0.0, vals)
    return mean, vals, _sign_fix(vecs)


def numerical_rank(eigenvalues, n_years: int) -> int:
    lam = np.asarray(eigenvalues)
    if lam.size == 0 or lam[0] <= 0:
        return 0
    tol = lam[0] * lam.size * np.finfo(float).eps * 10
    return int(min(np.sum(lam > tol), n_years - 1))


def fit_block(x, k_rule: KRule, center: bool = True) -> FpcaBlock:
    """Decompose the rows of ``x`` and keep the components chosen by ``k_rule``."""
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    mean, vals, vecs = eigen_decompose(x)
    if not center:
        mean = np.zeros(p)
    rank = numerical_rank(vals, n)
    k = k_rule.choose(vals[:rank], n, p)
    vecs = vecs[:k]
    scores = (x - mean) @ vecs.T
    return FpcaBlock(mean, vecs, vals, scores)


# --------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class FpcaModel:
    """Fitted UFTS / MFTS / MLFTS decomposition.

    ``means`` is ``[series, coords]``. ``common`` holds the shared
    decomposition: for MFTS its eigenfunctions are stacked across series
    (``series * coords`` long), otherwise they are ``coords`` long.
    ``specific`` holds one block per series (MLFTS only).
    ``residual_variance`` is ``[series, coords]``: the mean squared
    in-sample reconstruction residual with the retained components.
    """

    kind: str
    series: tuple
    means: np.ndarray
    common: FpcaBlock
    specific: tuple = ()
    residual_variance: np.ndarray = field(default=None, repr=False)
    n_years: int = 0

    @property
    def n_series(self) -> int:
        return len(self.series)

    @property
    def n_coords(self) -> int:
        return self.means.shape[1]

    @property
    def k_selected(self):
        """Retained component counts: ``(K,)`` or ``(K, V_1, V_2)`` for MLFTS."""
        return (self.common.k,) + tuple(b.k for b in self.specific)

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.common.eigenvalues

    def eigenfunctions_for(self, series: int = 0) -> np.ndarray:
        """Common eigenfunctions as seen by one series, ``[k, coords]``."""
        ef = self.common.eigenfunctions
        if self.kind == MFTS:
            p = self.n_coords
            return ef[:, series * p:(series + 1) * p]
        return ef

    def fitted(self) -> np.ndarray:
        """In-sample reconstructions, ``[series, year, coords]``."""
        return model_fitted(self)

    def reconstruct(self, common_scores, specific_scores=None) -> np.ndarray:
        """Curves ``[series, coords]`` from score vectors."""
        cs = np.asarray(common_scores, dtype=float)
        if cs.shape != (self.common.k,):
            raise FpcaError(f"expected {self.common.k} common scores, got shape {cs.shape}")
        common = cs @ self.common.eigenfunctions
        if self.kind == MFTS:
            return self.means + common.reshape(self.n_series, self.n_coords)
        out = self.means + common + (self.common.mean if self.kind == MLFTS else 0.0)
        if self.kind == MLFTS:
            if specific_scores is None or len(specific_scores) != self.n_series:
                raise FpcaError("MLFTS reconstruction needs one specific score vector per series")
            out = out.copy()
            for s, (blk, sc) in enumerate(zip(self.specific, specific_scores)):
                sc = np.asarray(sc, dtype=float)
                if sc.shape != (blk.k,):
                    raise FpcaError(f"expected {blk.k} specific scores, got shape {sc.shape}")
                out[s] += blk.curves(sc)
        return out

    def total_variance(self, common_var, specific_var=None) -> np.ndarray:
        """Pointwise forecast variance ``[series, coords]`` from independent score variances."""
        cv = np.asarray(common_var, dtype=float)
        out = np.empty((self.n_series, self.n_coords))
        for s in range(self.n_series):
            out[s] = cv @ self.eigenfunctions_for(s) ** 2 + self.residual_variance[s]
        if self.kind == MLFTS:
            if specific_var is None:
                raise FpcaError("MLFTS variance needs specific score variances")
            for s, (blk, v) in enumerate(zip(self.specific, specific_var)):
                out[s] += np.asarray(v, dtype=float) @ blk.eigenfunctions ** 2
        return out

    def to_dict(self) -> dict:
        def blk(b):
            return {
                "mean": b.mean.tolist(),
                "eigenfunctions": b.eigenfunctions.tolist(),
                "eigenvalues": b.eigenvalues.tolist(),
                "scores": b.scores.tolist(),
                "k": b.k,
            }

        return {
            "kind": self.kind,
            "series": list(self.series),
            "n_years": self.n_years,
            "k_selected": list(self.k_selected),
            "means": self.means.tolist(),
            "common": blk(self.common),
            "specific": [blk(b) for b in self.specific],
            "residual_variance": self.residual_variance.tolist(),
        }

    def to_json(self, path=None, **kw):
        text = json.dumps(self.to_dict(), **kw)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _as_matrix(x):
    vals = getattr(x, "values", x)
    vals = np.asarray(vals, dtype=float)
    if vals.ndim != 2:
        raise FpcaError("expected a [year, coordinate] matrix")
    return vals


def _name(x, default):
    return getattr(x, "sex", default)


def _residual_variance(data, fitted):
    return np.mean((data - fitted) ** 2, axis=1)


def _check_pair(xf, xm):
    if xf.shape != xm.shape:
        raise FpcaError(f"series shapes differ: {xf.shape} vs {xm.shape}")


def _check_years(a, b):
    ya, yb = getattr(a, "years", None), getattr(b, "years", None)
    if ya is not None and yb is not None and not np.array_equal(ya, yb):
        raise FpcaError("series cover different years")


def fit_ufts(x, k_rule: KRule = KRule.evr()) -> FpcaModel:
    """Univariate model for one series (``UnconstrainedSeries`` or matrix)."""
    vals = _as_matrix(x)
    if vals.shape[0] < 3:
        raise FpcaError("need at least 3 years")
    blk = fit_block(vals, k_rule)
    means = blk.mean[None, :]
    model = FpcaModel(UFTS, (_name(x, "series"),), means,
                      FpcaBlock(np.zeros_like(blk.mean), blk.eigenfunctions, blk.eigenvalues, blk.scores),
                      n_years=vals.shape[0])
    rv = _residual_variance(vals[None], model_fitted(model))
    return _with_rv(model, rv)


def _with_rv(model, rv):
    object.__setattr__(model, "residual_variance", rv)
    return model


def model_fitted(model: FpcaModel) -> np.ndarray:
    common = model.common.scores @ model.common.eigenfunctions  # [year, coords or stacked]
    if model.kind == MFTS:
        p = model.n_coords
        common = np.stack([common[:, s * p:(s + 1) * p] for s in range(model.n_series)])
    else:
        common = np.broadcast_to(common + model.common.mean, (model.n_series,) + common.shape)
    out = model.means[:, None, :] + common
    for s, blk in enumerate(model.specific):
        out[s] = out[s] + blk.mean + blk.scores @ blk.eigenfunctions
    return out


def fit_mfts(xf, xm, k_rule: KRule = KRule.evr(), standardize: bool = False) -> FpcaModel:
    """Joint decomposition of two stacked series.

    With ``standardize`` each series is divided by its overall standard
    deviation before stacking; eigenfunctions are mapped back to the
    original scale (and are then orthonormal only in the scaled metric).
    """
    a, b = _as_matrix(xf), _as_matrix(xm)
    _check_pair(a, b)
    _check_years(xf, xm)
    if a.shape[0] < 3:
        raise FpcaError("need at least 3 years")
    means = np.stack([a.mean(axis=0), b.mean(axis=0)])
    ca, cb = a - means[0], b - means[1]
    scale = np.ones(2)
    if standardize:
        scale = np.array([ca.std() or 1.0, cb.std() or 1.0])
    stacked = np.hstack([ca / scale[0], cb / scale[1]])
    blk = fit_block(stacked, k_rule, center=False)
    p = a.shape[1]
    ef = blk.eigenfunctions.copy()
    ef[:, :p] *= scale[0]
    ef[:, p:] *= scale[1]
    common = FpcaBlock(np.zeros(2 * p), ef, blk.eigenvalues, blk.scores)
    model = FpcaModel(MFTS, (_name(xf, "F"), _name(xm, "M")), means, common, n_years=a.shape[0])
    rv = _residual_variance(np.stack([a, b]), model_fitted(model))
    return _with_rv(model, rv)


def fit_mlfts(xf, xm, k_rule: KRule = KRule.evr()) -> FpcaModel:
    """Common-plus-specific decomposition of two series.

    The common block is the FPCA of ``((X_f - mu_f) + (X_m - mu_m)) / 2``;
    each specific block is the FPCA of that series' centred data minus the
    fitted common part. ``k_rule`` may be a ``(common, specific_1,
    specific_2)`` triple.
    """
    a, b = _as_matrix(xf), _as_matrix(xm)
    _check_pair(a, b)
    _check_years(xf, xm)
    if a.shape[0] < 3:
        raise FpcaError("need at least 3 years")
    rules = tuple(k_rule) if isinstance(k_rule, (tuple, list)) else (k_rule,) * 3
    means = np.stack([a.mean(axis=0), b.mean(axis=0)])
    centred = np.stack([a - means[0], b - means[1]])
    agg = centred.mean(axis=0)
    common = fit_block(agg, rules[0])
    fitted_common = common.mean + common.scores @ common.eigenfunctions
    specific = tuple(fit_block(c - fitted_common, r) for c, r in zip(centred, rules[1:]))
    model = FpcaModel(MLFTS, (_name(xf, "F"), _name(xm, "M")), means, common,
                      specific=specific, n_years=a.shape[0])
    rv = _residual_variance(np.stack([a, b]), model_fitted(model))
    return _with_rv(model, rv)


def fit_model(kind: str, series: Sequence, k_rule: KRule = KRule.evr(), **kw) -> FpcaModel:
    """Dispatch on ``kind``; ``series`` holds one (UFTS) or two inputs.

    ``k_rule`` may be a tuple of per-block rules as given by :func:`frozen_rules`.
    """
    if isinstance(k_rule, (tuple, list)) and kind != MLFTS:
        k_rule = k_rule[0]
    if kind == UFTS:
        if len(series) != 1:
            raise FpcaError("ufts takes exactly one series")
        return fit_ufts(series[0], k_rule)
    if len(series) != 2:
        raise FpcaError(f"{kind} takes exactly two series")
    if kind == MFTS:
        return fit_mfts(series[0], series[1], k_rule, **kw)
    if kind == MLFTS:
        return fit_mlfts(series[0], series[1], k_rule)
    raise FpcaError(f"unknown model kind {kind!r}")


def reconstruct(model: FpcaModel, common_scores, specific_scores=None) -> np.ndarray:
    """Curves from scores; a single curve for one-series models."""
    out = model.reconstruct(common_scores, specific_scores)
    return out[0] if model.n_series == 1 else out


def frozen_rules(model: FpcaModel) -> tuple:
    """Fixed rules reproducing ``model``'s retained component counts."""
    return tuple(KRule.fixed(k) if k > 0 else KRule.fixed(1) for k in model.k_selected)
