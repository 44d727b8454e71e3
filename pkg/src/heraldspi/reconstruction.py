"""Second-order correlation image reconstruction.

For patterns ``P_k`` and bucket counts ``I_k`` the image is the per-pixel
covariance over the N measurements::

    G2(i, j) = <P_k(i, j) I_k> - <P_k(i, j)> <I_k>

A constant offset added to every count cancels exactly, which is why the
mean of a stationary background drops out of the image. Its fluctuations
do not cancel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

from .netpbm import write_pgm
from .patterns import PatternSet
from .photon_model import CountBatch, CountRecord

SCHEMES = ("classical", "heralded")


@dataclass(frozen=True, eq=False)
class ImageResult:
    g2: np.ndarray = field(repr=False)
    scheme: str = "classical"
    mode: str = "expectation"
    pattern_count: int = 0
    degenerate: bool = False  # set by normalize() for constant input

    def __post_init__(self):
        g2 = np.asarray(self.g2, dtype=float)
        if g2.ndim != 2 or g2.shape[0] != g2.shape[1]:
            raise ValueError(f"g2 must be a square 2D matrix, got shape {g2.shape}")
        if not np.all(np.isfinite(g2)):
            raise ValueError("g2 has non-finite entries")
        object.__setattr__(self, "g2", g2)

    @property
    def side(self) -> int:
        return self.g2.shape[0]


def _counts_from(records, ps: PatternSet, scheme: str | None):
    if isinstance(records, CountBatch):
        if not np.array_equal(records.k, ps.active):
            raise ValueError("count batch does not cover the active patterns in order")
        return np.asarray(records.counts, dtype=float), records.scheme, records.mode

    records = list(records)
    if records and isinstance(records[0], CountRecord):
        if scheme is None:
            has_c = all(r.I_C is not None for r in records)
            has_q = all(r.I_Q is not None for r in records)
            if has_c == has_q:
                raise ValueError("records hold both or neither scheme; pass scheme=")
            scheme = "classical" if has_c else "heralded"
        attr = "I_C" if scheme == "classical" else "I_Q"
        by_k = {r.k: getattr(r, attr) for r in records}
        if len(by_k) != len(records) or set(by_k) != set(ps.active.tolist()):
            raise ValueError("need exactly one record per active pattern")
        if any(v is None for v in by_k.values()):
            raise ValueError(f"some records have no {attr}")
        return np.array([by_k[k] for k in ps.active], dtype=float), scheme, None

    counts = np.asarray(records, dtype=float)
    if counts.shape != (ps.subset_size,):
        raise ValueError(f"expected {ps.subset_size} counts, got shape {counts.shape}")
    return counts, scheme, None


def correlation_image(patterns: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Covariance of each pixel column of ``patterns`` (N, M) with ``counts`` (N,).

    Two-pass: means are removed from both factors first, then a single matrix
    product accumulates the centred cross moment in double precision.
    Centring the patterns too means a rounding error in the count mean
    multiplies a zero-sum column and drops out.
    """
    counts = np.asarray(counts, dtype=float)
    patterns = np.asarray(patterns, dtype=float)
    centred = counts - counts.mean()
    return centred @ (patterns - patterns.mean(axis=0)) / len(counts)


def reconstruct(
    ps: PatternSet,
    records,
    scheme: str | None = None,
    mode: str | None = None,
    pre_difference: bool = False,
) -> ImageResult:
    """Reconstruct ``G2`` from one count per active pattern.

    ``records`` may be a :class:`CountBatch`, a sequence of
    :class:`CountRecord`, or a plain array aligned with ``ps.active``.

    With ``pre_difference=True`` each original/complement pair is first
    reduced to a single difference measurement. For complete pairs this is
    algebraically identical to the direct estimator.
    """
    counts, found_scheme, found_mode = _counts_from(records, ps, scheme)
    scheme = scheme or found_scheme or "classical"
    mode = mode or found_mode or "expectation"
    N = ps.subset_size
    if pre_difference:
        K = ps.pairs
        originals, complements = ps.active[:K], ps.active[K:]
        if not np.array_equal(complements, originals + ps.M):
            raise ValueError("pre-differencing needs the active set laid out as originals then complements")
        diff = counts[:K] - counts[K:]
        signs = 2.0 * ps.patterns[originals - 1].reshape(K, ps.M) - 1.0
        flat = diff @ signs / (2.0 * N)
    else:
        flat = correlation_image(ps.active_matrix(), counts)
    return ImageResult(flat.reshape(ps.side, ps.side), scheme, mode, N)


def decompose(expectation_img: ImageResult, sampled_img: ImageResult):
    """Split a sampled image into the mean image and the fluctuation residual."""
    if expectation_img.g2.shape != sampled_img.g2.shape:
        raise ValueError("images have different shapes")
    if expectation_img.scheme != sampled_img.scheme:
        raise ValueError("images come from different schemes")
    if expectation_img.pattern_count != sampled_img.pattern_count:
        raise ValueError("images come from different pattern sets")
    residual = replace(sampled_img, g2=sampled_img.g2 - expectation_img.g2, mode="residual")
    return expectation_img, residual


def normalize(img: ImageResult) -> ImageResult:
    """Min-max rescale to [0, 1]; a constant image comes back mid-grey and flagged."""
    lo, hi = img.g2.min(), img.g2.max()
    if hi == lo:
        return replace(img, g2=np.full_like(img.g2, 0.5), degenerate=True)
    return replace(img, g2=(img.g2 - lo) / (hi - lo))


def write_image_pgm(path, img: ImageResult) -> None:
    """16-bit PGM of the min-max normalised image."""
    scaled = np.rint(normalize(img).g2 * 65535).astype(np.uint16)
    write_pgm(path, scaled, maxval=65535)


def write_image_csv(path, img: ImageResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in img.g2:
            writer.writerow([repr(float(v)) for v in row])


def read_image_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)])


class G2Imager(RegressorMixin, BaseEstimator):
    """Correlation imager with a scikit-learn estimator interface.

    ``fit(X, y)`` takes the displayed patterns as rows of ``X`` (flattened
    row-major, shape ``(N, M)``) and the bucket counts ``y``. It stores the
    correlation image in ``image_``.

    The image also defines a linear forward model. For a pattern set made of
    complete complementary Hadamard pairs, the covariance of two pixels over
    the set is ``M / (2 N)`` times an orthogonal projector. So

        y_hat = intercept_ + X @ coef_,   coef_ = (2 N / M) * image_

    reproduces noiseless linear counts exactly for patterns in the span of
    the measured basis. ``predict`` and ``score`` use that model.

    Parameters
    ----------
    side : int or None
        Image edge length; inferred as ``sqrt(M)`` when None.
    """

    def __init__(self, side=None):
        self.side = side

    def fit(self, X, y):
        X, y = check_X_y(np.asarray(X, dtype=float).reshape(len(X), -1), y, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        side = self.side or int(round(np.sqrt(X.shape[1])))
        if side * side != X.shape[1]:
            raise ValueError(f"{X.shape[1]} features do not form a {side}x{side} image")
        self.image_ = correlation_image(X, y).reshape(side, side)
        self.pattern_mean_ = X.mean(axis=0)
        self.count_mean_ = float(y.mean())
        self.n_patterns_ = X.shape[0]
        self.coef_ = 2.0 * self.n_patterns_ / X.shape[1] * self.image_.ravel()
        self.intercept_ = self.count_mean_ - float(self.pattern_mean_ @ self.coef_)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, np.asarray(X, dtype=float).reshape(len(X), -1), reset=False)
        return self.intercept_ + X @ self.coef_

    def to_image_result(self, scheme="classical", mode="expectation") -> ImageResult:
        check_is_fitted(self, "image_")
        return ImageResult(self.image_, scheme, mode, self.n_patterns_)
