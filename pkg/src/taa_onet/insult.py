"""Insult profiles on the cylindrical node grid.

Two generators are provided:

* a closed-form double-exponential bump centred on an apex
  (:func:`evaluate_analytic`), and
* censored Gaussian random fields with a periodic squared-exponential
  covariance, conditioned to a low value on both vessel ends, CDF-matched to a
  target normal marginal and clamped to [0, 1] (:func:`generate_random_insult`).

Node ordering everywhere is row-major with the axial index outermost, so a
field of shape ``(n_z, n_theta)`` flattens to ``k = i * n_theta + j``.
"""
from __future__ import annotations

import enum
import functools
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from scipy import linalg, special

from . import binio
from .errors import DomainError, FormatError, NumericalError, ParameterError

PROFILE_MAGIC = b"TAAPROF1"

# Escalating diagonal jitter, as multiples of 1e-10 * variance.
JITTER_STEPS = (1.0, 10.0, 100.0, 1000.0)
JITTER_BASE = 1e-10


class InsultKind(str, enum.Enum):
    ELASTIC_FIBER = "elastic_fiber"
    MECHANOSENSING = "mechanosensing"


@dataclass(frozen=True)
class CylindricalGrid:
    """Axial-by-circumferential node lattice on the unloaded vessel (lengths in mm)."""

    n_z: int = 21
    n_theta: int = 20
    l_o: float = 15.0
    r_o: float = 0.647

    def __post_init__(self):
        if self.n_z < 3:
            raise ParameterError(f"n_z must be >= 3, got {self.n_z}")
        if self.n_theta < 4:
            raise ParameterError(f"n_theta must be >= 4, got {self.n_theta}")
        if not (self.l_o > 0 and self.r_o > 0):
            raise ParameterError("l_o and r_o must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_z, self.n_theta)

    @property
    def size(self) -> int:
        return self.n_z * self.n_theta

    @property
    def z(self) -> np.ndarray:
        return np.arange(self.n_z) * (self.l_o / (self.n_z - 1))

    @property
    def theta(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """``(Z, THETA)`` coordinate arrays of shape ``(n_z, n_theta)``."""
        return np.meshgrid(self.z, self.theta, indexing="ij")

    def boundary_indices(self) -> np.ndarray:
        """Flat indices of the first and last axial rows."""
        first = np.arange(self.n_theta)
        return np.concatenate([first, first + (self.n_z - 1) * self.n_theta])

    def interior_indices(self) -> np.ndarray:
        return np.arange(self.n_theta, (self.n_z - 1) * self.n_theta)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AnalyticInsultParams:
    """Parameters of the double-exponential insult (lengths in mm, angles in rad)."""

    theta_end: float = 0.0
    theta_apex: float = 1.0
    z_apex: float = 7.5
    z_od: float = 3.0
    angle_apex: float = np.pi
    angle_od: float = np.deg2rad(100.0)
    nu_z: float = 2.0
    nu_theta: float = 2.0

    def __post_init__(self):
        if not (0.0 <= self.theta_end <= self.theta_apex <= 1.0):
            raise ParameterError(
                f"need 0 <= theta_end <= theta_apex <= 1, got {self.theta_end}, {self.theta_apex}"
            )
        if not (self.z_od > 0 and self.angle_od > 0):
            raise ParameterError("characteristic widths z_od and angle_od must be positive")

    def to_dict(self) -> dict:
        return {"mode": "analytic", **asdict(self)}


@dataclass(frozen=True)
class RandomInsultParams:
    """Shape controls of a random insult.

    ``propensity`` is the fraction of latent values above 0.5, ``softness`` the
    slope of the latent CDF at 0.5, and ``k_boundary`` places the enforced end
    value that many standard deviations below the mean.
    """

    propensity: float = 0.35
    softness: float = 0.2
    length_theta: float = 2.0
    length_z: float = 2.0
    k_boundary: float = 2.0

    def __post_init__(self):
        if not (0.0 < self.propensity < 1.0):
            raise ParameterError(f"propensity must lie in (0, 1), got {self.propensity}")
        if not self.softness > 0:
            raise ParameterError(f"softness must be positive, got {self.softness}")
        if not (self.length_theta > 0 and self.length_z > 0):
            raise ParameterError("length scales must be positive")

    def to_dict(self) -> dict:
        return {"mode": "random", **asdict(self)}


@dataclass
class InsultProfile:
    grid: CylindricalGrid
    values: np.ndarray
    kind: InsultKind
    severity_max: float
    params: dict = field(default_factory=dict)
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = InsultKind(self.kind)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise ParameterError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("insult values must be finite")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ParameterError("insult values must lie in [0, 1]")
        if not (0.0 <= self.severity_max < 1.0):
            raise ParameterError(f"severity_max must lie in [0, 1), got {self.severity_max}")

    def header(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "kind": self.kind.value,
            "severity_max": float(self.severity_max),
            "params": self.params,
            "seed": self.seed,
            "meta": self.meta,
        }


# ----------------------------------------------------------------------------
# analytic profiles


def wrapped_angle(delta) -> np.ndarray:
    """Shortest angular separation, in [0, pi]."""
    d = np.mod(np.abs(delta), 2.0 * np.pi)
    return np.minimum(d, 2.0 * np.pi - d)


def analytic_value(z, angle, p: AnalyticInsultParams) -> np.ndarray:
    """Evaluate the double-exponential insult at arbitrary points."""
    rz = np.abs((np.asarray(z, dtype=float) - p.z_apex) / p.z_od)
    rt = wrapped_angle(np.asarray(angle, dtype=float) - p.angle_apex) / p.angle_od
    with np.errstate(over="ignore", invalid="ignore"):
        bump = np.exp(-(rz**p.nu_z)) * np.exp(-(rt**p.nu_theta))
        out = p.theta_end + (p.theta_apex - p.theta_end) * bump
    if not np.all(np.isfinite(out)):
        raise ParameterError("analytic insult produced non-finite values; check nu_z, nu_theta > 0")
    return out


def evaluate_analytic(
    grid: CylindricalGrid,
    p: AnalyticInsultParams,
    kind: InsultKind = InsultKind.ELASTIC_FIBER,
    severity_max: float = 0.0,
) -> InsultProfile:
    if not (p.nu_z > 0 and p.nu_theta > 0):
        raise ParameterError(f"softness exponents must be positive, got {p.nu_z}, {p.nu_theta}")
    zz, tt = grid.mesh()
    values = np.clip(analytic_value(zz, tt, p), p.theta_end, p.theta_apex)
    return InsultProfile(grid, values, kind, severity_max, params=p.to_dict())


# ----------------------------------------------------------------------------
# moments of the latent field


def inverse_erf(y):
    """Inverse error function on (-1, 1)."""
    arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(np.abs(arr) >= 1.0):
        raise DomainError(f"inverse_erf needs |y| < 1, got {y!r}")
    out = special.erfinv(arr)
    return float(out) if out.ndim == 0 else out


def grf_moments(propensity: float, softness: float) -> tuple[float, float]:
    """Mean and variance of the latent field for a target propensity and CDF slope.

    The mean places a fraction ``propensity`` of the normal mass above 0.5 and
    the variance makes the normal density at 0.5 equal to ``softness``.
    """
    if not (0.0 < propensity < 1.0):
        raise DomainError(f"propensity must lie strictly in (0, 1), got {propensity}")
    if not softness > 0:
        raise DomainError(f"softness must be positive, got {softness}")
    a = inverse_erf(1.0 - 2.0 * propensity)
    decay = math.exp(-a * a)
    mean = 0.5 - a * decay / (softness * math.sqrt(math.pi))
    var = decay * decay / (2.0 * math.pi * softness * softness)
    return mean, var


# ----------------------------------------------------------------------------
# covariance, conditioning, sampling


def chordal_distance(delta_angle, r_o: float) -> np.ndarray:
    return 2.0 * r_o * np.sin(0.5 * np.abs(delta_angle))


def covariance_matrix(grid: CylindricalGrid, length_theta: float, length_z: float, var: float) -> np.ndarray:
    """Periodic squared-exponential covariance over all grid nodes.

    Entries are looked up from a table indexed by ``|di|`` and the wrapped
    circumferential index offset, so rotating both nodes by whole grid steps
    reproduces the matrix bit for bit.
    """
    if not (length_theta > 0 and length_z > 0 and var > 0):
        raise ParameterError("length scales and variance must be positive")
    nz, nt = grid.shape
    di = np.arange(nz)
    dj = np.arange(nt)
    dj_wrapped = np.minimum(dj, nt - dj)
    d_theta = 2.0 * grid.r_o * np.sin(np.pi * dj_wrapped / nt)
    d_z = di * (grid.l_o / (nz - 1))
    table = var * np.exp(
        -0.5 * ((d_z[:, None] / length_z) ** 2 + (d_theta[None, :] / length_theta) ** 2)
    )
    ii, jj = np.divmod(np.arange(grid.size), nt)
    return table[np.abs(ii[:, None] - ii[None, :]), np.mod(jj[:, None] - jj[None, :], nt)]


def _cholesky_with_jitter(a: np.ndarray, scale: float, what: str) -> np.ndarray:
    """Lower Cholesky factor of ``a + jitter*I`` with escalating jitter."""
    eye = np.eye(a.shape[0])
    last = None
    for step in JITTER_STEPS:
        try:
            return linalg.cholesky(a + (JITTER_BASE * scale * step) * eye, lower=True)
        except linalg.LinAlgError as exc:
            last = exc
    raise NumericalError(
        f"{what}: Cholesky failed after jitter up to {JITTER_BASE * scale * JITTER_STEPS[-1]:.3e} "
        f"(size {a.shape[0]}, min diag {np.min(np.diag(a)):.3e}): {last}"
    )


def condition_on_boundary(mean, cov, boundary, value):
    """Condition a joint Gaussian on fixed values at the ``boundary`` nodes.

    Returns ``(mean', cov')`` over all nodes. Boundary entries of ``mean'`` equal
    ``value``; boundary rows and columns of ``cov'`` are exactly zero.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    n = mean.shape[0]
    b = np.unique(np.asarray(boundary, dtype=int))
    if b.size == 0 or b.size >= n:
        raise ParameterError("boundary set must be non-empty and strictly smaller than the node set")
    a = np.setdiff1d(np.arange(n), b)
    k_bb = cov[np.ix_(b, b)]
    k_ab = cov[np.ix_(a, b)]
    chol = _cholesky_with_jitter(k_bb, float(np.max(np.diag(cov))), "boundary block")
    target = np.broadcast_to(np.asarray(value, dtype=float), b.shape)
    gain = linalg.cho_solve((chol, True), k_ab.T).T  # K_ab K_bb^-1

    new_mean = mean.copy()
    new_mean[a] = mean[a] + gain @ (target - mean[b])
    new_mean[b] = target
    k_aa = cov[np.ix_(a, a)] - gain @ k_ab.T
    new_cov = np.zeros_like(cov)
    new_cov[np.ix_(a, a)] = 0.5 * (k_aa + k_aa.T)
    return new_mean, new_cov


def latent_factor(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cholesky factor of the non-degenerate part of ``cov``.

    Returns ``(support, L)``; nodes outside ``support`` have zero variance.
    """
    cov = np.asarray(cov, dtype=float)
    support = np.flatnonzero(np.diag(cov) > 0.0)
    if support.size == 0:
        return support, np.zeros((0, 0))
    block = cov[np.ix_(support, support)]
    return support, _cholesky_with_jitter(block, float(np.max(np.diag(block))), "latent covariance")


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_latent(mean, cov, rng, size: int | None = None, factor=None) -> np.ndarray:
    """Draw ``mean + L w`` with ``w`` standard normal; ``size`` adds a leading axis."""
    mean = np.asarray(mean, dtype=float)
    rng = _as_rng(rng)
    support, chol = factor if factor is not None else latent_factor(cov)
    n_draw = 1 if size is None else int(size)
    out = np.repeat(mean[None, :], n_draw, axis=0)
    if support.size:
        w = rng.standard_normal((n_draw, support.size))
        out[:, support] += w @ chol.T
    return out[0] if size is None else out


def kde_cdf(values: np.ndarray, at: np.ndarray | None = None, bandwidth: float | None = None) -> np.ndarray:
    """Gaussian-kernel CDF estimate of ``values`` evaluated at ``at``.

    Bandwidth defaults to Silverman's rule ``1.06 * std * n**(-1/5)``.
    """
    x = np.asarray(values, dtype=float).ravel()
    at = x if at is None else np.asarray(at, dtype=float)
    if bandwidth is None:
        bandwidth = 1.06 * np.std(x, ddof=1) * x.size ** (-0.2)
    z = (at.reshape(-1, 1) - x[None, :]) / bandwidth
    return special.ndtr(z).mean(axis=1).reshape(at.shape)


def cdf_match(values, mean: float, var: float) -> np.ndarray:
    """Map field values onto N(mean, var) quantiles through their own KDE CDF.

    Works on the last axis, so a stack of fields is transformed field by field.
    """
    x = np.asarray(values, dtype=float)
    if x.shape[-1] < 30:
        raise ParameterError(f"cdf_match needs at least 30 values per field, got {x.shape[-1]}")
    if not var > 0:
        raise ParameterError("target variance must be positive")
    flat = x.reshape(-1, x.shape[-1])
    out = np.empty_like(flat)
    sd = math.sqrt(var)
    for row, src in enumerate(flat):
        spread = np.std(src, ddof=1)
        if not spread > 1e-14 * max(1.0, float(np.max(np.abs(src)))):
            warnings.warn("cdf_match: field has zero variance; returning it unchanged", RuntimeWarning)
            out[row] = src
            continue
        out[row] = mean + sd * special.ndtri(kde_cdf(src))
    return out.reshape(x.shape)


def censor(values) -> np.ndarray:
    return np.clip(np.asarray(values, dtype=float), 0.0, 1.0)


# ----------------------------------------------------------------------------
# full random-insult pipeline


class RandomFieldSampler:
    """Conditioned latent Gaussian for one grid and parameter set.

    The covariance, conditioning and factorization are done once; fields are
    then drawn in batches.
    """

    def __init__(self, grid: CylindricalGrid, params: RandomInsultParams):
        self.grid = grid
        self.params = params
        self.mean, self.var = grf_moments(params.propensity, params.softness)
        self.sd = math.sqrt(self.var)
        self.boundary_value = self.mean - params.k_boundary * self.sd
        if self.boundary_value > 0.0:
            raise ParameterError(
                f"boundary latent value {self.boundary_value:.4g} is above 0, so censored ends "
                f"would not be zero; increase k_boundary (now {params.k_boundary})"
            )
        self.boundary = grid.boundary_indices()
        self.interior = grid.interior_indices()
        cov = covariance_matrix(grid, params.length_theta, params.length_z, self.var)
        self.cond_mean, self.cond_cov = condition_on_boundary(
            np.full(grid.size, self.mean), cov, self.boundary, self.boundary_value
        )
        self.factor = latent_factor(self.cond_cov)

    def latent(self, rng, size: int | None = None) -> np.ndarray:
        return sample_latent(self.cond_mean, None, rng, size=size, factor=self.factor)

    def match(self, latent: np.ndarray) -> np.ndarray:
        """CDF-match the random (interior) nodes; the enforced ends are left as is."""
        out = np.array(latent, dtype=float, copy=True)
        out[..., self.interior] = cdf_match(out[..., self.interior], self.mean, self.var)
        return out

    def insult(self, matched: np.ndarray) -> np.ndarray:
        vals = censor(matched)
        vals[..., self.boundary] = 0.0
        return vals

    def fields(self, rng, size: int | None = None) -> np.ndarray:
        flat = self.insult(self.match(self.latent(rng, size)))
        return flat.reshape((*flat.shape[:-1], *self.grid.shape))


@functools.lru_cache(maxsize=16)
def random_field_sampler(grid: CylindricalGrid, params: RandomInsultParams) -> RandomFieldSampler:
    return RandomFieldSampler(grid, params)


def generate_random_insult(
    grid: CylindricalGrid,
    params: RandomInsultParams,
    kind: InsultKind,
    severity_max: float,
    seed: int,
) -> InsultProfile:
    sampler = random_field_sampler(grid, params)
    values = sampler.fields(np.random.default_rng(seed))
    return InsultProfile(grid, values, kind, severity_max, params=params.to_dict(), seed=int(seed))


# ----------------------------------------------------------------------------
# serialization


def save_profile(path, profile: InsultProfile) -> None:
    binio.write_framed(path, PROFILE_MAGIC, profile.header(), {"values": profile.values}, dtype="<f4")


def load_profile(path) -> InsultProfile:
    header, arrays = binio.read_framed(path, PROFILE_MAGIC)
    try:
        grid = CylindricalGrid(**header["grid"])
        values = arrays["values"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: incomplete profile header ({exc})") from exc
    if values.shape != grid.shape:
        raise FormatError(f"{path}: values shape {values.shape} does not match grid {grid.shape}")
    return InsultProfile(
        grid,
        values.astype(np.float64),
        InsultKind(header["kind"]),
        header["severity_max"],
        params=header.get("params", {}),
        seed=header.get("seed"),
        meta=header.get("meta", {}),
    )


def profile_params(profile: InsultProfile) -> Any:
    """Rebuild the typed parameter object stored in a profile."""
    params = dict(profile.params)
    mode = params.pop("mode", None)
    if mode == "analytic":
        return AnalyticInsultParams(**params)
    if mode == "random":
        return RandomInsultParams(**params)
    return None
