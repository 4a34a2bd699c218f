"""Command line entry point: ``taa-onet <subcommand> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..dataset import MODES, read_dataset
from ..deeponet import DeepONet, save_model, train
from ..errors import ConfigError, FormatError, NumericalError, ParameterError, StructuralError
from . import pipeline
from .cases import get_case
from .config import RunConfig
from .report import collect_rows, render_table, write_report

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
PAPER_SIMULATIONS = 550

log = logging.getLogger("taa_onet")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML file overriding the built-in defaults")
    p.add_argument("--seed", type=int, help="master seed (default from config)")
    p.add_argument("--out", help="output root directory")
    p.add_argument("--noise", type=float, help="test-input noise level as a fraction")
    p.add_argument("--trials", type=int, help="number of training trials")
    p.add_argument("--jobs", type=int, help="worker processes for simulation")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="taa-onet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_, case_default=None, arch=False):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--case", type=int, default=case_default, required=case_default is None)
        if arch:
            p.add_argument("--arch", choices=MODES, required=True)
        return p

    add("gen-analytic", "write analytic insult profiles for a case", case_default=1)
    add("gen-random", "write random insult profiles (case 6)", case_default=6)
    add("simulate", "solve G&R equilibrium for every profile of a case")
    add("build-dataset", "assemble and split a dataset from simulated maps", arch=True)
    add("train", "train one model on a built dataset", arch=True)
    add("evaluate", "retrain over several trials and score the test split", arch=True)
    add("run-case", "generate, simulate, build, train and evaluate in one go", arch=True)
    rp = sub.add_parser("report", parents=[common], help="collect result rows into a table and JSON")
    rp.add_argument("--format", choices=("table", "json"), default="table")
    return parser


def _load_config(args) -> RunConfig:
    overrides = {}
    for key in ("seed", "noise", "trials", "jobs"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if args.out:
        overrides["out_dir"] = args.out
    return RunConfig.load(args.config, overrides)


def _run(args) -> int:
    cfg = _load_config(args)
    seed, out_root = cfg["seed"], Path(cfg["out_dir"])
    if args.command == "report":
        rows = collect_rows(out_root)
        txt, js = write_report(rows, out_root)
        print(render_table(rows) if args.format == "table" else js.read_text(), end="")
        return EXIT_OK

    case = get_case(args.case)
    root = pipeline.case_dir(cfg, case, out_root)

    if args.command in ("gen-analytic", "gen-random"):
        want = "random" if args.command == "gen-random" else "analytic"
        if case.profile_mode != want:
            raise ConfigError(f"case {case.id} uses {case.profile_mode} profiles; use gen-{case.profile_mode}")
        plan = pipeline.generate(case, cfg, root, seed)
        per = len(plan) // (len(case.scenarios) * len(case.kinds))
        msg = f"case {case.id}: {len(plan)} profiles ({per} per kind and pressure condition"
        msg += f"; reference total {PAPER_SIMULATIONS})" if want == "analytic" else ")"
        print(msg)
        return EXIT_OK

    if args.command == "simulate":
        plan = pipeline.load_plan(root)
        rep = pipeline.simulate_all(plan, cfg, root, seed, cfg["jobs"])
        print(f"simulated {len(rep.written)}, reused {len(rep.reused)}, failed {len(rep.failed)}")
        for sid, err in rep.failed.items():
            print(f"  {sid}: {err}", file=sys.stderr)
        return EXIT_NUMERIC if rep.failed else EXIT_OK

    if args.command == "build-dataset":
        plan = pipeline.load_plan(root)
        missing = [s.id for s in plan if not (root / "maps" / f"{s.id}.maps").exists()]
        if missing:
            log.warning("%d profile(s) without maps are left out", len(missing))
        ddir = pipeline.build(plan, args.arch, cfg, root, seed, skip=missing)
        print(ddir)
        return EXIT_OK

    data_dir = root / "data" / args.arch
    if args.command == "train":
        ds = read_dataset(data_dir).train()
        model = DeepONet(args.arch, cfg.arch(), ds.grid.shape)
        res = train(model, ds, cfg.train_config(), seed=seed, log=log.info)
        path = root / "models" / args.arch / f"seed{seed}.ckpt"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_model(path, model, res.theta, pipeline.provenance(cfg, "train", seed, case=case.id,
                                                               final_loss=res.history[-1]))
        print(f"final loss {res.history[-1]:.6g} in {res.seconds:.1f}s -> {path}")
        return EXIT_OK

    if args.command == "evaluate":
        row = pipeline.train_eval(data_dir, case.id, cfg, root, seed, cfg["noise"], cfg["trials"])
        print(render_table([row]), end="")
        return EXIT_OK

    if args.command == "run-case":
        run = pipeline.run_case(case, args.arch, cfg, out=out_root, seed=seed)
        if run.row is not None:
            print(render_table([run.row]), end="")
        if run.sims.failed:
            print(f"{len(run.sims.failed)} simulation(s) failed and were left out", file=sys.stderr)
            return EXIT_NUMERIC
        return EXIT_OK
    raise ConfigError(f"unknown command {args.command}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return _run(args)
    except (ConfigError, ParameterError, StructuralError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
