"""Pipeline stages. Every file written here carries provenance in its metadata."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import binio
from ..dataset import assign_split, build_dataset, read_dataset, write_dataset
from ..deeponet import evaluate, save_model
from ..errors import ConvergenceError, FormatError, NumericalError
from ..insult import load_profile, save_profile
from ..vessel import load_maps, save_maps, scenario, simulate
from .cases import ExperimentCase, PlannedSample, plan_case
from .config import RunConfig

log = logging.getLogger("taa_onet")

# keys that change where or how fast things run but not what is computed
_NON_SEMANTIC = ("out_dir", "jobs", "log_every")


def config_digest(cfg: RunConfig) -> str:
    vals = {k: v for k, v in cfg.to_dict().items() if k not in _NON_SEMANTIC}
    return binio.config_hash(vals)


def provenance(cfg: RunConfig, stage: str, seed: int, **extra) -> dict:
    return {"config_hash": config_digest(cfg), "seed": int(seed), "stage": stage, **extra}


def case_dir(cfg: RunConfig, case: ExperimentCase, out=None) -> Path:
    return Path(out or cfg["out_dir"]) / f"case{case.id}"


# ----------------------------------------------------------------------------
# generation


def generate(case: ExperimentCase, cfg: RunConfig, out: Path, seed: int) -> list[PlannedSample]:
    """Write one profile file per planned sample; returns the plan."""
    plan = plan_case(case, cfg, seed)
    pdir = out / "profiles"
    pdir.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(plan):
        s.profile.meta = provenance(cfg, "generate", seed, case=case.id, scenario=s.scenario, sample=s.id,
                                    index=i)
        save_profile(pdir / f"{s.id}.prof", s.profile)
        # later stages see the stored single-precision values, so use them here too
        s.profile.values = s.profile.values.astype(np.float32).astype(np.float64)
    log.info("case %d: %d profiles generated", case.id, len(plan))
    return plan


def load_plan(out: Path) -> list[PlannedSample]:
    plan = []
    for path in sorted((out / "profiles").glob("*.prof")):
        prof = load_profile(path)
        plan.append(PlannedSample(path.stem, prof, prof.meta.get("scenario", "normotensive")))
    # restore generation order; files without an index keep name order after indexed ones
    plan.sort(key=lambda s: (s.profile.meta.get("index", len(plan)), s.id))
    return plan


# ----------------------------------------------------------------------------
# simulation


def _simulate_one(args):
    sample_id, profile, scen_label, params, backend = args
    try:
        maps = simulate(profile, scenario(scen_label, params), params, backend=backend)
        return sample_id, maps, None
    except (ConvergenceError, NumericalError) as exc:
        return sample_id, None, f"{type(exc).__name__}: {exc}"


@dataclass
class SimulationReport:
    written: list[str] = field(default_factory=list)
    reused: list[str] = field(default_factory=list)
    failed: dict[str, str] = field(default_factory=dict)


def _reusable(path: Path, meta: dict) -> bool:
    if not path.exists():
        return False
    try:
        old = load_maps(path).meta
    except FormatError:
        return False
    return all(old.get(k) == v for k, v in meta.items())


def simulate_all(plan: list[PlannedSample], cfg: RunConfig, out: Path, seed: int, jobs: int = 1) -> SimulationReport:
    """Simulate every planned sample; failures are isolated and reported, not fatal here."""
    mdir = out / "maps"
    mdir.mkdir(parents=True, exist_ok=True)
    params = cfg.material()
    report = SimulationReport()
    todo = []
    for s in plan:
        meta = provenance(cfg, "simulate", seed, sample=s.id, scenario=s.scenario)
        if _reusable(mdir / f"{s.id}.maps", meta):
            report.reused.append(s.id)
        else:
            todo.append(((s.id, s.profile, s.scenario, params, cfg.backend), meta))
    args = [a for a, _ in todo]
    metas = {a[0]: m for a, m in todo}
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_simulate_one, args, chunksize=8))
    else:
        results = [_simulate_one(a) for a in args]
    # the coordinating process does all writes, in plan order
    for sample_id, maps, err in results:
        if err is not None:
            report.failed[sample_id] = err
            log.error("sample %s failed: %s", sample_id, err)
            continue
        maps.meta = metas[sample_id]
        save_maps(mdir / f"{sample_id}.maps", maps)
        report.written.append(sample_id)
    log.info("simulated %d, reused %d, failed %d", len(report.written), len(report.reused), len(report.failed))
    return report


# ----------------------------------------------------------------------------
# datasets


def build(plan: list[PlannedSample], mode: str, cfg: RunConfig, out: Path, seed: int, skip=()) -> Path:
    """Assemble and split a dataset from the saved maps (never from in-memory doubles)."""
    skip = set(skip)
    items = []
    for s in plan:
        if s.id in skip:
            continue
        items.append((s.id, s.profile, load_maps(out / "maps" / f"{s.id}.maps")))
    ds = build_dataset(items, mode, encoding=cfg["location_encoding"],
                       meta=provenance(cfg, "build-dataset", seed, mode=mode))
    assign_split(ds, cfg["test_frac"], seed)
    ddir = out / "data" / mode
    write_dataset(ds, ddir)
    log.info("dataset %s: %d samples (%d test)", mode, len(ds), ds.test_idx.size)
    return ddir


# ----------------------------------------------------------------------------
# training and evaluation


def report_row(case_id, arch, rep, cfg: RunConfig, seed: int) -> dict:
    clean_m, clean_s = rep.clean
    noisy = rep.noisy or (None, None)
    return {
        "case": int(case_id),
        "arch": arch,
        "N": rep.n_train,
        "N_test": rep.n_test,
        "params": rep.n_params,
        "err_clean_mean": clean_m,
        "err_clean_std": clean_s,
        "err_noisy_mean": noisy[0],
        "err_noisy_std": noisy[1],
        "noise": rep.noise,
        # wall-clock time is logged, not stored, so reruns stay bit-identical
        "trials": [{k: v for k, v in t.__dict__.items() if k != "seconds"} for t in rep.trials],
        "provenance": provenance(cfg, "evaluate", seed, case=int(case_id), arch=arch),
    }


def train_eval(data_dir: Path, case_id: int, cfg: RunConfig, out: Path, seed: int, noise: float, trials: int) -> dict:
    ds = read_dataset(data_dir)
    tcfg = cfg.train_config()
    tcfg = type(tcfg)(tcfg.adam_iters, tcfg.lr, tcfg.lbfgs_iters, seed, trials, tcfg.log_every)
    rep, models = evaluate(ds.mode, ds, tcfg, noise=noise, arch=cfg.arch(), log=log.info, keep_models=True)
    mdir = out / "models" / ds.mode
    mdir.mkdir(parents=True, exist_ok=True)
    for k, (model, res) in enumerate(models):
        meta = provenance(cfg, "train", seed + k, case=int(case_id), trial=k, final_loss=res.history[-1])
        save_model(mdir / f"trial{k}.ckpt", model, res.theta, meta)
    row = report_row(case_id, ds.mode, rep, cfg, seed)
    rdir = out / "results"
    rdir.mkdir(parents=True, exist_ok=True)
    (rdir / f"{ds.mode}.json").write_text(json.dumps(row, indent=1, sort_keys=True, default=_plain) + "\n")
    return row


def _plain(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj).__name__}")


@dataclass
class CaseRun:
    plan: list[PlannedSample]
    sims: SimulationReport
    data_dir: Path
    row: dict | None


def run_case(case: ExperimentCase, arch: str, cfg: RunConfig, *, out=None, seed=None, noise=None,
             trials=None, jobs=None) -> CaseRun:
    seed = cfg["seed"] if seed is None else seed
    noise = cfg["noise"] if noise is None else noise
    trials = cfg["trials"] if trials is None else trials
    jobs = cfg["jobs"] if jobs is None else jobs
    root = case_dir(cfg, case, out)
    plan = generate(case, cfg, root, seed)
    sims = simulate_all(plan, cfg, root, seed, jobs)
    data_dir = build(plan, arch, cfg, root, seed, skip=sims.failed)
    row = train_eval(data_dir, case.id, cfg, root, seed, noise, trials) if trials > 0 else None
    return CaseRun(plan, sims, data_dir, row)
