"""Command-line entry point: ``branchjump {evolve,simulate,verify,rates}``.

Exit codes: 0 ok, 2 bad input, 3 simulation failure, 4 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .branching import born_weights
from .evolution import EvolutionError, evolver_for
from .model import (
    BUILTINS,
    Model,
    ScenarioError,
    built_in_diagonal,
    built_in_measurement,
    built_in_rabi,
    dump_model,
    load_model_file,
    random_model,
)
from .rates import RateField
from .trajectory import RateCapError, run_ensemble
from .verify import MasterEquationError, default_grid, equivariance_report

EXIT_OK, EXIT_INPUT, EXIT_SIMULATION, EXIT_VERIFICATION = 0, 2, 3, 4

log = logging.getLogger("branchjump")


@dataclass
class RunConfig:
    command: str
    scenario: str | None = None
    builtin: str | None = None
    params: dict = field(default_factory=dict)
    n_trajectories: int = 1000
    seed: int = 0
    dt_base: float = 1e-3
    out: Path = Path(".")
    threads: int = 1
    points: int = 401
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise ValueError("--n must be at least 1")
        if not self.dt_base > 0:
            raise ValueError("--dt must be positive")
        if self.points < 2:
            raise ValueError("--points must be at least 2")


def _amplitudes(text: str) -> list:
    try:
        return [complex(s.strip().replace(" ", "")) for s in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse amplitudes {text!r}") from None


def _initial_branch(text: str):
    return text if text == "born" else int(text)


def build_model(cfg: RunConfig) -> Model:
    if cfg.scenario:
        model = load_model_file(cfg.scenario)
    else:
        p = cfg.params
        if cfg.builtin == "rabi":
            model = built_in_rabi(p.get("omega", 1.0), p.get("hbar", 1.0))
        elif cfg.builtin == "measurement":
            model = built_in_measurement(p.get("c") or [0.6, 0.8], p.get("g", 1.0), p.get("hbar", 1.0))
        else:
            model = built_in_diagonal()
    if cfg.extra.get("initial_branch") is not None:
        model = model.with_initial_branch(cfg.extra["initial_branch"])
    return model


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        out.writerows(rows)


def cmd_evolve(cfg: RunConfig, model: Model) -> int:
    grid = default_grid(model, cfg.points)
    w = born_weights(evolver_for(model).states(grid), model.basis)
    _write_rows(
        cfg.out / "weights.csv",
        ["t", "branch_label", "weight"],
        ([_fmt(t), label, _fmt(w[i, m])] for i, t in enumerate(grid) for m, label in enumerate(model.labels)),
    )
    return EXIT_OK


def cmd_rates(cfg: RunConfig, model: Model) -> int:
    grid = default_grid(model, cfg.points)
    J, T, _ = RateField(model).at(grid)
    n = model.n_branches
    _write_rows(
        cfg.out / "rates.csv",
        ["t", "to_label", "from_label", "J", "T"],
        (
            [_fmt(t), model.labels[a], model.labels[b], _fmt(J[i, a, b]), _fmt(T[i, a, b])]
            for i, t in enumerate(grid)
            for a in range(n)
            for b in range(n)
            if a != b
        ),
    )
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, model: Model) -> int:
    try:
        stats = run_ensemble(
            model, cfg.n_trajectories, cfg.seed, cfg.dt_base, threads=cfg.threads, keep_trajectories=True
        )
    except RateCapError as exc:
        print(f"simulation failed at t = {exc.time}: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    with open(cfg.out / "trajectories.jsonl", "w", encoding="utf-8") as fh:
        for traj in stats.trajectories:
            fh.write(json.dumps(traj.to_dict(model.labels)) + "\n")
    _write_rows(
        cfg.out / "occupation.csv",
        ["t", "branch_label", "frequency", "born_weight", "stderr"],
        (
            [_fmt(t), label, _fmt(stats.occupation[i, m]), _fmt(stats.born_weights[i, m]), _fmt(stats.standard_error[i, m])]
            for i, t in enumerate(stats.times)
            for m, label in enumerate(model.labels)
        ),
    )
    log.info("%d trajectories, %d jumps, %d diagnostics, %.4f of cells within 4 sigma",
             stats.n_trajectories, stats.n_jumps, stats.n_diagnostics, stats.pass_fraction())
    return EXIT_OK


def cmd_verify(cfg: RunConfig, model: Model | None) -> int:
    x = cfg.extra
    kwargs = dict(tolerance=x["tolerance"], steps_per_unit=x["steps_per_unit"], rectify=not x["no_rectify"],
                  catch_instability=True)
    if x["fuzz"]:
        rng = np.random.default_rng(cfg.seed)
        reports = []
        for i in range(x["fuzz"]):
            m = random_model(rng, max_dim=x["dim"], t_max=x["t_max"])
            r = equivariance_report(m, default_grid(m, cfg.points), **kwargs)
            r.model_id = f"fuzz-{i}:{m.name}"
            reports.append(r)
        ok = all(r.passed for r in reports)
        doc = {"pass": ok, "n_models": len(reports), "reports": [r.to_dict() for r in reports]}
        (cfg.out / "equivariance.json").write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
        for r in reports:
            log.info("%s max deviation %.3e %s", r.model_id, r.max_abs_deviation, "pass" if r.passed else "FAIL")
    else:
        r = equivariance_report(model, default_grid(model, cfg.points), **kwargs)
        r.write_json(cfg.out / "equivariance.json")
        r.write_csv(cfg.out / "equivariance.csv")
        ok = r.passed
        if r.error:
            print(f"integration unstable: {r.error}", file=sys.stderr)
        log.info("max deviation %.3e (tolerance %.1e): %s", r.max_abs_deviation, r.tolerance, "pass" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_VERIFICATION


COMMANDS = {"evolve": cmd_evolve, "simulate": cmd_simulate, "verify": cmd_verify, "rates": cmd_rates}


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--scenario", help="scenario JSON file")
    src.add_argument("--builtin", choices=sorted(BUILTINS), help="built-in scenario")
    common.add_argument("--omega", type=float, default=1.0, help="rabi: angular frequency")
    common.add_argument("--c", type=_amplitudes, default=None, help="measurement: comma-separated amplitudes")
    common.add_argument("--g", type=float, default=1.0, help="measurement: coupling")
    common.add_argument("--hbar", type=float, default=1.0)
    common.add_argument("--initial-branch", type=_initial_branch, default=None, help='index or "born"')
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--points", type=int, default=None, help="number of output grid points")
    common.add_argument("--dump-scenario", type=Path, default=None, help="write the scenario JSON here")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="branchjump", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("evolve", parents=[common], help="Born weights of each branch over time")
    sub.add_parser("rates", parents=[common], help="currents J and jump rates T over time")
    sim = sub.add_parser("simulate", parents=[common], help="Monte Carlo ensemble of branch trajectories")
    sim.add_argument("--n", type=int, default=1000)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--dt", type=float, default=1e-3, help="base time step")
    sim.add_argument("--threads", type=int, default=1)
    ver = sub.add_parser("verify", parents=[common], help="master equation vs Born weights")
    ver.add_argument("--tolerance", type=float, default=None)
    ver.add_argument("--steps-per-unit", type=float, default=2000)
    ver.add_argument("--no-rectify", action="store_true", help="debug: use J/w instead of max(J,0)/w")
    ver.add_argument("--fuzz", type=int, default=0, help="check this many random models instead")
    ver.add_argument("--dim", type=int, default=8, help="fuzz: maximum total dimension")
    ver.add_argument("--t-max", type=float, default=10.0, help="fuzz: model duration")
    ver.add_argument("--seed", type=int, default=0)
    return parser


def config_from_args(args) -> RunConfig:
    default_points = 201 if args.command == "verify" else 401
    extra = {"initial_branch": args.initial_branch}
    if args.command == "verify":
        extra.update(
            tolerance=args.tolerance if args.tolerance is not None else (1e-5 if args.fuzz else 1e-6),
            steps_per_unit=args.steps_per_unit, no_rectify=args.no_rectify,
            fuzz=args.fuzz, dim=args.dim, t_max=args.t_max,
        )
    return RunConfig(
        command=args.command,
        scenario=args.scenario,
        builtin=args.builtin or ("rabi" if not args.scenario else None),
        params={"omega": args.omega, "c": args.c, "g": args.g, "hbar": args.hbar},
        n_trajectories=getattr(args, "n", 1000),
        seed=getattr(args, "seed", 0),
        dt_base=getattr(args, "dt", 1e-3),
        out=args.out,
        threads=getattr(args, "threads", 1),
        points=args.points or default_points,
        extra=extra,
    )


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = config_from_args(args)
        model = None
        if not (cfg.command == "verify" and cfg.extra["fuzz"]):
            model = build_model(cfg)
        cfg.out.mkdir(parents=True, exist_ok=True)
        if args.dump_scenario and model is not None:
            args.dump_scenario.write_text(dump_model(model) + "\n", encoding="utf-8")
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return COMMANDS[cfg.command](cfg, model)
    except MasterEquationError as exc:
        print(f"integration unstable at t = {exc.time}: {exc}", file=sys.stderr)
        return EXIT_VERIFICATION
    except EvolutionError as exc:
        print(f"evolution failed: {exc}", file=sys.stderr)
        return EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
