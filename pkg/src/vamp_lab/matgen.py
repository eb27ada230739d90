"""Problem synthesis: Haar factors, geometric spectra, non-zero-mean matrices.

Every instance carries an exact economy SVD ``a = u_bar @ diag(s_bar) @ v_bar.T``
so the SVD-form solvers never refactor the matrix.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, NumericalFailure, UnsupportedShapeError

logger = logging.getLogger(__name__)

_ARRAY_FIELDS = ("a", "u_bar", "s_bar", "v_bar", "x0", "w", "y")
_RANK_RTOL = 1e-12


@dataclass(frozen=True)
class BgPrior:
    """Bernoulli-Gaussian law: zero w.p. ``1 - rho``, else N(0, sigma_x2)."""

    rho: float = 0.1
    sigma_x2: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.rho <= 1.0) or not math.isfinite(self.rho):
            raise InvalidInputError(f"rho must lie in (0, 1], got {self.rho}")
        if not (self.sigma_x2 > 0.0) or not math.isfinite(self.sigma_x2):
            raise InvalidInputError(f"sigma_x2 must be positive, got {self.sigma_x2}")

    @property
    def second_moment(self) -> float:
        return self.rho * self.sigma_x2


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """A linear model ``y = a @ x0 + w`` with its economy SVD.

    ``x0`` and ``w`` are ``None`` for user-supplied data where the truth is
    unknown; ``gamma_w0`` is then the postulated noise precision (or ``None``).
    """

    a: np.ndarray
    u_bar: np.ndarray
    s_bar: np.ndarray
    v_bar: np.ndarray
    y: np.ndarray
    x0: np.ndarray | None = None
    w: np.ndarray | None = None
    gamma_w0: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in _ARRAY_FIELDS:
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def n(self) -> int:
        return self.a.shape[1]

    @property
    def r(self) -> int:
        return self.s_bar.shape[0]

    @classmethod
    def from_matrix(cls, a, y, gamma_w0=None, x0=None, w=None, meta=None):
        """Wrap a dense matrix, computing its economy SVD and dropping null directions."""
        a = np.array(a, dtype=float)
        y = np.array(y, dtype=float)
        if a.ndim != 2 or y.shape != (a.shape[0],):
            raise InvalidInputError(f"shape mismatch: a {a.shape}, y {y.shape}")
        u, s, vt = economy_svd(a)
        return cls(
            a=a, u_bar=u, s_bar=s, v_bar=vt.T, y=y,
            x0=None if x0 is None else np.array(x0, dtype=float),
            w=None if w is None else np.array(w, dtype=float),
            gamma_w0=gamma_w0, meta=dict(meta or {}),
        )


def economy_svd(a):
    """Thin SVD with singular values below ``1e-12 * s_max`` truncated."""
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}") from exc
    if s.size == 0 or not np.all(np.isfinite(s)) or s[0] <= 0:
        raise NumericalFailure("matrix has no positive singular values")
    keep = s > _RANK_RTOL * s[0]
    return u[:, keep], s[keep], vt[keep]


def haar_orthogonal(n, rng, cols=None):
    """Draw a Haar-distributed orthogonal matrix via sign-corrected QR.

    With ``cols`` given, returns only the first ``cols`` columns (an n x cols
    matrix with orthonormal columns), which has the same law as slicing a full
    Haar draw but costs O(n cols^2).
    """
    if n < 1:
        raise InvalidInputError(f"dimension must be >= 1, got {n}")
    cols = n if cols is None else cols
    if not 1 <= cols <= n:
        raise InvalidInputError(f"cols must be in [1, {n}], got {cols}")
    z = rng.standard_normal((n, cols))
    q, r = np.linalg.qr(z)
    # absorbing sign(diag R) makes the factor Haar rather than merely orthogonal
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def geometric_spectrum(m, n, kappa):
    """Singular values with constant ratio, ``s[0]/s[-1] = kappa`` and ``sum(s**2) = n``."""
    if m < 1:
        raise InvalidInputError(f"m must be >= 1, got {m}")
    if not kappa >= 1.0 or not math.isfinite(kappa):
        raise InvalidInputError(f"kappa must be >= 1, got {kappa}")
    if m == 1:
        return np.array([math.sqrt(n)])
    # log-domain so that kappa = 1e6 keeps the exact end ratio
    exponents = -np.arange(m) / (m - 1) * math.log(kappa)
    shape = np.exp(exponents)
    return shape * math.sqrt(n / np.sum(shape**2))


def sample_bg_signal(n, prior, rng):
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    support = rng.random(n) < prior.rho
    return np.where(support, rng.standard_normal(n) * math.sqrt(prior.sigma_x2), 0.0)


def noise_precision(m, n, prior, snr_db):
    """Noise precision giving ``E||A x0||^2 / E||w||^2 = 10**(snr_db/10)`` when ``||A||_F^2 = n``."""
    if not math.isfinite(snr_db):
        raise InvalidInputError(f"snr_db must be finite, got {snr_db}")
    return m * 10.0 ** (snr_db / 10.0) / (prior.second_moment * n)


def trial_rng(seed, *key):
    """Independent generator for substream ``key`` of a master seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def _rotinv_matrix(m, n, kappa, rng):
    s = geometric_spectrum(m, n, kappa)
    u = haar_orthogonal(m, rng)
    v = haar_orthogonal(n, rng, cols=m)
    return (u * s) @ v.T, u, s, v


def _nonzero_mean_matrix(m, n, mu, rng):
    a = mu + rng.standard_normal((m, n)) / math.sqrt(m)
    a *= math.sqrt(n) / np.linalg.norm(a)
    u, s, vt = economy_svd(a)
    return a, u, s, vt.T


def synthesize_problem(ensemble, m, n, prior, snr_db, rng, seed=None, max_attempts=8):
    """Build one instance ``y = A x0 + w``.

    Parameters
    ----------
    ensemble : tuple
        ``("rotinv", kappa)`` for Haar factors with a geometric spectrum, or
        ``("nonzero_mean", mu)`` for an i.i.d. N(mu, 1/m) draw rescaled to
        ``||A||_F^2 = n``.
    rng : numpy.random.Generator or (seed, key) tuple
        A tuple lets a failed SVD retry on the next substream.
    """
    kind, param = ensemble
    if m > n:
        raise UnsupportedShapeError(f"tall matrices are not supported (m={m} > n={n})")
    if kind not in ("rotinv", "nonzero_mean"):
        raise InvalidInputError(f"unknown ensemble {kind!r}")
    gamma_w0 = noise_precision(m, n, prior, snr_db)

    if isinstance(rng, tuple):
        base_seed, key = rng
        streams = (trial_rng(base_seed, *key, attempt) for attempt in range(max_attempts))
    else:
        streams = iter([rng])

    for attempt, gen in enumerate(streams):
        try:
            if kind == "rotinv":
                a, u, s, v = _rotinv_matrix(m, n, float(param), gen)
            else:
                a, u, s, v = _nonzero_mean_matrix(m, n, float(param), gen)
        except NumericalFailure as exc:
            logger.warning("degenerate draw on attempt %d (%s); resampling", attempt, exc)
            continue
        x0 = sample_bg_signal(n, prior, gen)
        w = gen.standard_normal(m) / math.sqrt(gamma_w0)
        y = a @ x0 + w
        meta = {"ensemble": kind, "param": float(param), "snr_db": float(snr_db),
                "seed": seed, "rho": prior.rho, "sigma_x2": prior.sigma_x2}
        return ProblemInstance(a=a, u_bar=u, s_bar=s, v_bar=v, y=y, x0=x0, w=w,
                               gamma_w0=gamma_w0, meta=meta)
    raise NumericalFailure(f"no usable draw after {max_attempts} attempts")


def save_instance(problem, path):
    """Write ``<path>.json`` metadata plus ``<path>.bin`` little-endian float64 arrays."""
    path = Path(path)
    header = {"m": problem.m, "n": problem.n, "r": problem.r,
              "gamma_w0": problem.gamma_w0, "meta": problem.meta, "arrays": []}
    offset = 0
    with open(path.with_suffix(".bin"), "wb") as fh:
        for name in _ARRAY_FIELDS:
            arr = getattr(problem, name)
            if arr is None:
                continue
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            fh.write(raw)
            header["arrays"].append({"name": name, "shape": list(arr.shape),
                                     "offset": offset, "nbytes": len(raw)})
            offset += len(raw)
    header["sidecar"] = path.with_suffix(".bin").name
    path.with_suffix(".json").write_text(json.dumps(header, indent=2))
    return path.with_suffix(".json")


def load_instance(path):
    path = Path(path).with_suffix(".json")
    header = json.loads(path.read_text())
    blob = (path.parent / header["sidecar"]).read_bytes()
    arrays = {}
    for spec in header["arrays"]:
        chunk = blob[spec["offset"]:spec["offset"] + spec["nbytes"]]
        arrays[spec["name"]] = np.frombuffer(chunk, dtype="<f8").astype(float).reshape(spec["shape"])
    return ProblemInstance(gamma_w0=header["gamma_w0"], meta=header["meta"], **arrays)
