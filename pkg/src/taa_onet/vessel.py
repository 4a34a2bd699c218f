"""Mechanobiologically equilibrated vessel wall, solved node by node.

Each grid node is treated as an independent thin-walled cylinder held at fixed
axial length. Elastin is neo-Hookean; collagen follows a four-fiber-family
exponential law and smooth muscle a single circumferential family. In the
equilibrated limit every fiber family sits at its deposition stretch, so the
evolved state is fixed by two unknowns per node: the circumferential stretch
``lam`` and the collagen/smooth-muscle mass growth factor ``g``. These satisfy
Laplace equilibrium at the G&R pressure and the stress-deviation balance.

After the G&R solve the wall is held at frozen composition and re-pressurized
to the diastolic and systolic pressures to obtain the dilatation maps.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Any

import numpy as np

from . import _kernels, binio
from ._kernels import _gr_py
from .errors import ConvergenceError, FormatError, NumericalError, ParameterError
from .insult import CylindricalGrid, InsultKind, InsultProfile

MAPS_MAGIC = b"TAAMAPS1"
MMHG_KPA = 0.133322387415

# mmHg ratios (G&R : diastolic : systolic) of the two pressure scenarios,
# normalized by the normotensive G&R pressure.
SCENARIO_MMHG = {
    "normotensive": (105.0, 99.0, 121.0),
    "hypertensive": (140.0, 129.0, 172.0),
}
BASELINE_MMHG = 105.0

# Search box of the equilibrium solve.
LAM_BOX = (0.8, 4.0)
GROWTH_BOX = (0.2, 20.0)

FIBER_FORMS = {"green": 0, "linear": 1}


@dataclass(frozen=True)
class MaterialParams:
    """Constituent parameters (stresses in kPa, lengths in mm, angles in radians).

    ``fiber_strain`` selects the strain measure inside the fiber exponential:
    ``"green"`` uses ``lam**2 - 1``, ``"linear"`` uses ``lam - 1``.
    """

    c_e: float = 89.71
    c1_m: float = 261.4
    c2_m: float = 0.24
    c1_c: float = 234.9
    c2_c: float = 4.08
    Ge_theta: float = 1.90
    Ge_z: float = 1.62
    G_m: float = 1.20
    G_c: float = 1.25
    phi_e: float = 0.34
    phi_m: float = 0.33
    phi_c: float = 0.33
    beta_theta: float = 0.056
    beta_z: float = 0.067
    beta_d: float = 0.877
    alpha0: float = math.radians(29.9)
    eta: float = 1.0
    k_ratio: float = 0.0
    r_o: float = 0.647
    h_o: float = 0.040
    l_o: float = 15.0
    fiber_strain: str = "green"

    def __post_init__(self):
        if abs(self.phi_e + self.phi_m + self.phi_c - 1.0) > 1e-9:
            raise ParameterError("mass fractions must sum to 1")
        if abs(self.beta_theta + self.beta_z + self.beta_d - 1.0) > 1e-9:
            raise ParameterError("collagen orientation fractions must sum to 1")
        for name in ("Ge_theta", "Ge_z", "G_m", "G_c", "r_o", "h_o", "l_o", "c_e"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if min(self.phi_e, self.phi_m, self.phi_c) < 0:
            raise ParameterError("mass fractions must be non-negative")
        if self.fiber_strain not in FIBER_FORMS:
            raise ParameterError(f"fiber_strain must be one of {sorted(FIBER_FORMS)}")
        if self.k_ratio != 0.0:
            raise ParameterError("wall-shear stimulus is not modelled; k_ratio must be 0")

    @property
    def Ge_r(self) -> float:
        """Radial elastin deposition stretch (isochoric deposition)."""
        return 1.0 / (self.Ge_theta * self.Ge_z)

    @property
    def a_o(self) -> float:
        """Mid-wall radius of the original homeostatic state."""
        return self.r_o + 0.5 * self.h_o

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class HomeostaticState:
    sigma_tt: float
    sigma_zz: float
    sigma_o: float
    p_o: float


@dataclass(frozen=True)
class PressureScenario:
    """Pressures in kPa."""

    label: str
    p_gr: float
    p_dia: float
    p_sys: float

    def __post_init__(self):
        if not (0 < self.p_dia < self.p_sys):
            raise ParameterError("need 0 < diastolic < systolic pressure")
        if self.p_gr <= 0:
            raise ParameterError("G&R pressure must be positive")

    @classmethod
    def from_baseline(cls, label: str, p_o: float) -> "PressureScenario":
        """Scale the tabulated mmHg values so that 105 mmHg maps onto ``p_o``."""
        label = str(label).lower()
        if label not in SCENARIO_MMHG:
            raise ParameterError(f"unknown scenario {label!r}")
        gr, dia, sys_ = (p_o * v / BASELINE_MMHG for v in SCENARIO_MMHG[label])
        return cls(label, gr, dia, sys_)

    @property
    def flag(self) -> int:
        return int(self.label == "hypertensive")


# ----------------------------------------------------------------------------
# constitutive relations


def fiber_energy(stretch, c1: float, c2: float, form: str = "green"):
    """Stored energy of one fiber family per unit reference volume."""
    lam = np.asarray(stretch, dtype=float)
    e = lam * lam - 1.0 if form == "green" else lam - 1.0
    e = np.where(lam > 1.0, e, 0.0)
    if c2 == 0.0:
        return 0.25 * c1 * e * e
    return 0.25 * c1 / c2 * np.expm1(c2 * e * e)


def fiber_stress(stretch, c1: float, c2: float, form: str = "green"):
    """Fiber Cauchy stress ``lam * dW/dlam``; zero in compression."""
    return _gr_py.fiber_stress(stretch, c1, c2, FIBER_FORMS[form])


def pack_constants(params: MaterialParams, sigma_o: float = 1.0, c_e: float | None = None) -> np.ndarray:
    """Flat constant vector consumed by the kernels."""
    k = np.empty(_gr_py.N_CONSTS)
    k[_gr_py.C_CE] = params.c_e if c_e is None else c_e
    k[_gr_py.C_C1M] = params.c1_m
    k[_gr_py.C_C2M] = params.c2_m
    k[_gr_py.C_C1C] = params.c1_c
    k[_gr_py.C_C2C] = params.c2_c
    k[_gr_py.C_GET] = params.Ge_theta
    k[_gr_py.C_GEZ] = params.Ge_z
    k[_gr_py.C_GER] = params.Ge_r
    k[_gr_py.C_GM] = params.G_m
    k[_gr_py.C_GC] = params.G_c
    k[_gr_py.C_PHIE] = params.phi_e
    k[_gr_py.C_PHIM] = params.phi_m
    k[_gr_py.C_PHIC] = params.phi_c
    k[_gr_py.C_BT] = params.beta_theta
    k[_gr_py.C_BZ] = params.beta_z
    k[_gr_py.C_BD] = params.beta_d
    # the diagonal angle is measured from the axial direction
    k[_gr_py.C_SIN2] = math.sin(params.alpha0) ** 2
    k[_gr_py.C_COS2] = math.cos(params.alpha0) ** 2
    k[_gr_py.C_AO] = params.a_o
    k[_gr_py.C_HO] = params.h_o
    k[_gr_py.C_SIGO] = sigma_o
    k[_gr_py.C_FORM] = FIBER_FORMS[params.fiber_strain]
    k[_gr_py.C_LAMLO], k[_gr_py.C_LAMHI] = LAM_BOX
    k[_gr_py.C_GLO], k[_gr_py.C_GHI] = GROWTH_BOX
    return k


def mixture_stress(
    lam_theta,
    lam_z,
    composition,
    ce_eff: float,
    params: MaterialParams,
    *,
    lam_r=None,
    inc_theta=1.0,
    inc_z=1.0,
    return_radial: bool = False,
):
    """Plane-stress Cauchy stresses ``(s_tt, s_zz)`` of the mixture in kPa.

    ``lam_*`` are total elastin stretches from the original in vivo state
    (``lam_r`` defaults to ``1/(lam_theta*lam_z)``), ``composition`` is the
    triple of mass fractions (elastin, muscle, collagen) and ``inc_*`` the
    fiber stretches relative to deposition. With ``return_radial`` the
    eliminated radial extra stress ``p`` is also returned.
    """
    lam_theta = np.asarray(lam_theta, dtype=float)
    lam_z = np.asarray(lam_z, dtype=float)
    if np.any(lam_theta <= 0) or np.any(lam_z <= 0):
        raise ParameterError("stretches must be positive")
    fe, fm, fc = (np.asarray(c, dtype=float) for c in composition)
    if np.any(np.abs(fe + fm + fc - 1.0) > 1e-9):
        raise ParameterError("composition must sum to 1")
    if lam_r is None:
        lam_r = 1.0 / (lam_theta * lam_z)
    k = pack_constants(params)
    with np.errstate(over="ignore", invalid="ignore"):
        s_tt, s_zz, p = _gr_py.stress(
            lam_theta, lam_z, np.asarray(lam_r, dtype=float), ce_eff, fe, fm, fc,
            np.asarray(inc_theta, dtype=float), np.asarray(inc_z, dtype=float), k,
        )
    if not (np.all(np.isfinite(s_tt)) and np.all(np.isfinite(s_zz))):
        raise NumericalError(
            f"fiber stress overflow at incremental stretches theta={inc_theta}, z={inc_z}"
        )
    if return_radial:
        return s_tt, s_zz, p
    return s_tt, s_zz


@lru_cache(maxsize=32)
def homeostatic_state(params: MaterialParams) -> HomeostaticState:
    """Original in vivo stresses, their stress measure ``sigma_o`` and the Laplace pressure ``p_o``."""
    comp = (params.phi_e, params.phi_m, params.phi_c)
    s_tt, s_zz = mixture_stress(1.0, 1.0, comp, params.c_e, params)
    s_tt, s_zz = float(s_tt), float(s_zz)
    if s_tt <= 0:
        raise ParameterError(f"non-physical material set: homeostatic hoop stress {s_tt} <= 0")
    return HomeostaticState(s_tt, s_zz, (s_tt + s_zz) / 3.0, s_tt * params.h_o / params.a_o)


def scenario(label: str, params: MaterialParams | None = None) -> PressureScenario:
    params = params or MaterialParams()
    return PressureScenario.from_baseline(label, homeostatic_state(params).p_o)


# ----------------------------------------------------------------------------
# equilibrium


def insult_modifiers(values, kind, severity_max: float, params: MaterialParams):
    """Effective elastin modulus and mechanosensing deficit for insult values."""
    values = np.asarray(values, dtype=float)
    if np.any(values < 0) or np.any(values > 1):
        raise ParameterError("insult values must lie in [0, 1]")
    loss = severity_max * values
    if InsultKind(kind) is InsultKind.ELASTIC_FIBER:
        return params.c_e * (1.0 - loss), np.zeros_like(loss)
    return np.full_like(loss, params.c_e), loss


@dataclass
class NodeEquilibriumState:
    """Evolved state at one or more nodes; every field has the input's shape."""

    lam: Any
    growth: Any
    jac: Any
    h_h: Any
    phi_e: Any
    phi_m: Any
    phi_c: Any
    sigma_tt: Any
    sigma_zz: Any
    p_h: Any
    ce_eff: Any
    delta: Any
    residual: Any
    status: Any
    params: MaterialParams = field(repr=False, default_factory=MaterialParams)

    @property
    def a_h(self):
        """Evolved mid-wall radius."""
        return self.params.a_o * np.asarray(self.lam)


def solve_equilibrium(
    theta,
    kind,
    severity_max: float,
    scen: PressureScenario,
    params: MaterialParams | None = None,
    *,
    backend: str | None = None,
    strict: bool = True,
) -> NodeEquilibriumState:
    """Evolved ``(lam, g)`` per node for insult values ``theta``.

    With ``strict`` a node whose residual stays above tolerance raises
    :class:`ConvergenceError`; otherwise its ``status`` is -1.
    """
    params = params or MaterialParams()
    home = homeostatic_state(params)
    shape = np.shape(theta)
    ce_eff, delta = insult_modifiers(np.ravel(theta), kind, severity_max, params)
    k = pack_constants(params, home.sigma_o)
    lam, g, r1, r2, status = _kernels.get_backend(backend).equilibrium(ce_eff, delta, scen.p_gr, k)
    res = np.maximum(np.abs(r1), np.abs(r2))
    failed = np.flatnonzero(status < 0)
    if strict and failed.size:
        raise ConvergenceError(
            f"no equilibrium in box lam {LAM_BOX}, g {GROWTH_BOX} at {failed.size} node(s)",
            {"nodes": failed.tolist(), "residual": res[failed].tolist(), "lam": lam[failed].tolist(),
             "growth": g[failed].tolist()},
        )
    jac = params.phi_e + g * (params.phi_m + params.phi_c)
    fe, fm, fc = params.phi_e / jac, g * params.phi_m / jac, g * params.phi_c / jac
    s_tt, s_zz, p = mixture_stress(lam, 1.0, (fe, fm, fc), ce_eff, params, lam_r=jac / lam, return_radial=True)
    out = dict(
        lam=lam, growth=g, jac=jac, h_h=jac * params.h_o / lam, phi_e=fe, phi_m=fm, phi_c=fc,
        sigma_tt=s_tt, sigma_zz=s_zz, p_h=p, ce_eff=ce_eff, delta=delta, residual=res, status=status,
    )
    if shape == ():
        out = {key: val.item() for key, val in out.items()}
    else:
        out = {key: val.reshape(shape) for key, val in out.items()}
    return NodeEquilibriumState(params=params, **out)


def incremental_stretch(state: NodeEquilibriumState, pressure: float, *, backend: str | None = None):
    """Circumferential stretch about the evolved state that balances ``pressure``."""
    params = state.params
    k = pack_constants(params, homeostatic_state(params).sigma_o)
    shape = np.shape(state.lam)
    x, status = _kernels.get_backend(backend).distension(
        np.ravel(state.lam), np.ravel(state.growth), np.ravel(state.ce_eff), float(pressure), k
    )
    bad = np.flatnonzero(status < 0)
    if bad.size:
        raise ConvergenceError(
            f"distension root not bracketed in [{_gr_py.DIST_LO}, {_gr_py.DIST_HI}] at {bad.size} node(s)",
            {"nodes": bad.tolist(), "pressure": float(pressure)},
        )
    return x.item() if shape == () else x.reshape(shape)


def inner_radius_ratio(state: NodeEquilibriumState, x):
    """Inner radius over the original inner radius at incremental stretch ``x``."""
    params = state.params
    x = np.asarray(x, dtype=float)
    h = np.asarray(state.h_h) / x
    return (params.a_o * np.asarray(state.lam) * x - 0.5 * h) / params.r_o


def distension(state: NodeEquilibriumState, pressure: float, *, backend: str | None = None):
    """Normalized inner radius ``r / r_o`` at ``pressure`` with frozen composition."""
    x = incremental_stretch(state, pressure, backend=backend)
    out = inner_radius_ratio(state, x)
    return float(out) if np.ndim(out) == 0 else out


# ----------------------------------------------------------------------------
# full maps


@dataclass
class FieldMaps:
    grid: CylindricalGrid
    lambda_d: np.ndarray
    lambda_s: np.ndarray
    distensibility: np.ndarray
    scenario: str
    source: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("lambda_d", "lambda_s", "distensibility"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != self.grid.shape:
                raise ParameterError(f"{name} shape {arr.shape} != grid {self.grid.shape}")
            setattr(self, name, arr)

    def header(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "scenario": self.scenario,
            "source": self.source,
            "meta": self.meta,
        }


def simulate(
    profile: InsultProfile,
    scen: PressureScenario,
    params: MaterialParams | None = None,
    *,
    backend: str | None = None,
) -> FieldMaps:
    """Nodewise G&R solve plus diastolic and systolic distension."""
    params = params or MaterialParams()
    grid = profile.grid
    try:
        state = solve_equilibrium(profile.values, profile.kind, profile.severity_max, scen, params, backend=backend)
        lam_d = distension(state, scen.p_dia, backend=backend)
        lam_s = distension(state, scen.p_sys, backend=backend)
    except ConvergenceError as exc:
        nodes = exc.diagnostics.get("nodes", [])
        zz, tt = grid.mesh()
        where = [
            {"i": n // grid.n_theta, "j": n % grid.n_theta, "z": float(zz.flat[n]), "theta": float(tt.flat[n])}
            for n in nodes
        ]
        diag = dict(exc.diagnostics, coordinates=where, scenario=scen.label)
        raise ConvergenceError(f"{exc} (first node {where[0] if where else '?'})", diag) from exc
    dist = (lam_s - lam_d) / lam_d
    source = {"kind": profile.kind.value, "severity_max": float(profile.severity_max),
              "params": profile.params, "seed": profile.seed}
    return FieldMaps(grid, lam_d, lam_s, dist, scen.label, source)


def save_maps(path, maps: FieldMaps) -> None:
    arrays = {"lambda_d": maps.lambda_d, "lambda_s": maps.lambda_s, "distensibility": maps.distensibility}
    binio.write_framed(path, MAPS_MAGIC, maps.header(), arrays, dtype="<f4")


def load_maps(path) -> FieldMaps:
    header, arrays = binio.read_framed(path, MAPS_MAGIC)
    try:
        grid = CylindricalGrid(**header["grid"])
        return FieldMaps(
            grid,
            arrays["lambda_d"].astype(np.float64),
            arrays["lambda_s"].astype(np.float64),
            arrays["distensibility"].astype(np.float64),
            header["scenario"],
            header.get("source", {}),
            header.get("meta", {}),
        )
    except (KeyError, TypeError, ParameterError) as exc:
        raise FormatError(f"{path}: malformed maps file ({exc})") from exc

