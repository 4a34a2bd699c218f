"""Experiment cases and the insult profiles that populate them."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..insult import (
    AnalyticInsultParams,
    InsultKind,
    InsultProfile,
    evaluate_analytic,
    random_field_sampler,
)
from .config import RunConfig

ELASTIC = InsultKind.ELASTIC_FIBER
MECHANO = InsultKind.MECHANOSENSING
KIND_TAGS = {ELASTIC: "ef", MECHANO: "ms"}
SCENARIO_TAGS = {"normotensive": "nt", "hypertensive": "ht"}
ARCHS = ("sensor25", "sensor9", "image")


@dataclass(frozen=True)
class ExperimentCase:
    id: int
    description: str
    kinds: tuple[InsultKind, ...]
    profile_mode: str
    scenarios: tuple[str, ...]


CASES = {
    1: ExperimentCase(1, "Analytic elastic fiber integrity (normotensive)", (ELASTIC,), "analytic", ("normotensive",)),
    2: ExperimentCase(2, "Analytic mechanosensing (normotensive)", (MECHANO,), "analytic", ("normotensive",)),
    3: ExperimentCase(3, "Analytic elastic fiber integrity or mechanosensing (normotensive)",
                      (ELASTIC, MECHANO), "analytic", ("normotensive",)),
    4: ExperimentCase(4, "Analytic mechanosensing (normotensive and hypertensive)",
                      (MECHANO,), "analytic", ("normotensive", "hypertensive")),
    5: ExperimentCase(5, "Analytic elastic fiber integrity or mechanosensing (normotensive and hypertensive)",
                      (ELASTIC, MECHANO), "analytic", ("normotensive", "hypertensive")),
    6: ExperimentCase(6, "Random elastic fiber integrity or mechanosensing (normotensive)",
                      (ELASTIC, MECHANO), "random", ("normotensive",)),
}


def get_case(case_id: int) -> ExperimentCase:
    try:
        return CASES[int(case_id)]
    except (KeyError, ValueError):
        raise ConfigError(f"unknown case {case_id!r}; choose 1-6") from None


@dataclass
class PlannedSample:
    """One profile to generate and simulate under one scenario."""

    id: str
    profile: InsultProfile
    scenario: str


def severity_levels(cfg: RunConfig, kind: InsultKind, scenario: str) -> np.ndarray:
    tag = "elastic" if kind is ELASTIC else "mechano"
    lo, hi = cfg[f"severity_{tag}_{scenario}"]
    return np.linspace(lo, hi, cfg["severity_levels"])


def analytic_shapes(cfg: RunConfig) -> list[AnalyticInsultParams]:
    """Cartesian product of the sweep table.

    The restricted axial width only uses the restricted apex positions, and a
    fully circumferential insult is generated once (apex at the first angle)
    since its shape no longer depends on the apex angle in a meaningful way.
    """
    z_pairs = [(od, ap) for od in cfg["z_od_mm"] if od != cfg["z_od_restricted_mm"] for ap in cfg["z_apex_mm"]]
    if cfg["z_od_restricted_mm"] in cfg["z_od_mm"]:
        z_pairs += [(cfg["z_od_restricted_mm"], ap) for ap in cfg["z_apex_restricted_mm"]]
    t_pairs = []
    for od in cfg["theta_od_deg"]:
        apexes = cfg["theta_apex_deg"][:1] if od >= 360.0 else cfg["theta_apex_deg"]
        t_pairs += [(od, ap) for ap in apexes]
    shapes = []
    for (z_od, z_ap), (t_od, t_ap) in itertools.product(z_pairs, t_pairs):
        shapes.append(AnalyticInsultParams(
            theta_end=cfg["theta_end"], theta_apex=cfg["theta_peak"], z_apex=z_ap, z_od=z_od,
            angle_apex=float(np.deg2rad(t_ap)), angle_od=float(np.deg2rad(t_od)),
            nu_z=cfg["nu_z"], nu_theta=cfg["nu_theta"],
        ))
    return shapes


def random_profile_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


def random_shapes(cfg: RunConfig, seed: int) -> list[tuple[int, np.ndarray]]:
    """``(seed, values)`` for every random profile; all share one set of shape controls."""
    grid = cfg.grid()
    sampler = random_field_sampler(grid, cfg.random_params())
    out = []
    for p in range(cfg["random_profiles"]):
        s = random_profile_seed(seed, p)
        out.append((s, sampler.fields(np.random.default_rng(s))))
    return out


def _sample_id(kind, scenario, shape_idx, level) -> str:
    return f"{KIND_TAGS[kind]}-{SCENARIO_TAGS[scenario]}-p{shape_idx:03d}-s{level}"


def plan_case(case: ExperimentCase, cfg: RunConfig, seed: int | None = None) -> list[PlannedSample]:
    """Every sample of a case, in a fixed order."""
    seed = cfg["seed"] if seed is None else seed
    grid = cfg.grid()
    plan = []
    if case.profile_mode == "analytic":
        shapes = analytic_shapes(cfg)
        for scen in case.scenarios:
            for kind in case.kinds:
                for lvl, sev in enumerate(severity_levels(cfg, kind, scen)):
                    for i, p in enumerate(shapes):
                        prof = evaluate_analytic(grid, p, kind, float(sev))
                        plan.append(PlannedSample(_sample_id(kind, scen, i, lvl), prof, scen))
        return plan
    shapes = random_shapes(cfg, seed)
    params = cfg.random_params().to_dict()
    n_lvl = cfg["random_levels_per_kind"]
    for scen in case.scenarios:
        for kind in case.kinds:
            tag = "elastic" if kind is ELASTIC else "mechano"
            lo, hi = cfg[f"random_severity_{tag}"]
            for lvl, sev in enumerate(np.linspace(lo, hi, n_lvl)):
                for i, (s, values) in enumerate(shapes):
                    prof = InsultProfile(grid, values, kind, float(sev), params=params, seed=s)
                    plan.append(PlannedSample(_sample_id(kind, scen, i, lvl), prof, scen))
    return plan
