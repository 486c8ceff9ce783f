"""Command-line front end.

Subcommands write CSV artifacts into ``--out-dir`` (which must exist) along
with ``config.txt``, the fully resolved ``key=value`` configuration of the run.
Settings come from built-in defaults, then an optional ``--config`` file of
``key=value`` lines, then command-line flags.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import analysis, duvo
from ._csv import write_csv
from .flow import DivergenceError, SolverConfig, estimate_mse_curve, euler_solve
from .numerics import RngStream
from .objective import SmoothLassoParams
from .problem import TRAIN_STREAM, TRIAL_STREAM, ProblemInstance, load_instance, sample_batch, save_instance
from .schedule import load_schedule, save_schedule

log = logging.getLogger("sparseflow")

PERTURB_STREAM = 3


class ConfigError(ValueError):
    pass


def _float_list(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]


def _optional_int(text):
    return None if text in (None, "", "none", "None") else int(text)


def _optional_path(text):
    return None if text in (None, "", "none", "None") else str(text)


# name -> (converter, help); the config-file key is the name, the flag is --name
OPTIONS = {
    "seed": (int, "experiment seed (sensing matrix and trials derive from it)"),
    "n": (int, "signal length"),
    "m": (int, "number of observations"),
    "p": (float, "probability that a signal entry is nonzero"),
    "sigma": (float, "noise standard deviation"),
    "alpha": (float, "proximity parameter of the tanh smoothing"),
    "lambda": (float, "regularization weight"),
    "T": (float, "integration horizon (target time for train)"),
    "N": (int, "number of Euler bins"),
    "trials": (int, "Monte Carlo trials per MSE estimate"),
    "instance": (_optional_path, "load the sensing matrix from an instance file instead of sampling it"),
    "stride": (_optional_int, "record every k-th Euler state (default max(1, N // 500))"),
    "schedule": (_optional_path, "RBF schedule file to use instead of a constant lambda"),
    "snapshots": (_float_list, "times at which to also write the state next to the signal (snapshots.csv)"),
    "lambdas": (_float_list, "comma-separated regularization weights"),
    "Ns": (_int_list, "comma-separated bin counts for the discretization table"),
    "table_trials": (int, "trials per cell of the discretization table"),
    "table_lambda": (float, "regularization weight of the discretization table"),
    "T_eq": (float, "horizon used to approximate the equilibrium"),
    "N_eq": (int, "Euler bins used to approximate the equilibrium"),
    "perturb": (float, "standard deviation of the start perturbation around x*"),
    "fit_window": (float, "fraction of samples (from the end) used for slope fits"),
    "sweep_lambdas": (_float_list, "lambda values for the equilibrium sweep (empty: skip)"),
    "sweep_alphas": (_float_list, "alpha values for the equilibrium sweep at --lambda (empty: skip)"),
    "batch_size": (int, "mini-batch size"),
    "iterations": (int, "training iterations"),
    "lr": (float, "Adam learning rate"),
    "adam_beta1": (float, "Adam first-moment decay"),
    "adam_beta2": (float, "Adam second-moment decay"),
    "adam_eps": (float, "Adam epsilon"),
    "rbf_spacing": (float, "spacing between RBF centers"),
    "rbf_offset": (float, "RBF center offset: c_i = spacing * i - offset"),
    "rbf_first_center": (float, "position of the first RBF center"),
    "rbf_count": (int, "number of RBF centers"),
    "rbf_beta": (float, "RBF width parameter"),
    "init_weight": (float, "initial value of every RBF weight"),
    "compare_lambdas": (_float_list, "constant lambdas to compare against at the target time"),
}

PROBLEM = {"seed": 0, "n": 128, "m": 64, "p": 0.1, "sigma": 0.1, "alpha": 50.0, "instance": None}

DEFAULTS = {
    "recover": {**PROBLEM, "lambda": 5.0, "T": 0.5, "N": 500, "stride": None, "schedule": None, "snapshots": []},
    "sweep": {
        **PROBLEM, "lambdas": [0.5, 1.5, 3.0], "T": 4.0, "N": 5000, "trials": 100, "stride": None,
        "Ns": [1000, 2000, 5000, 10000], "table_trials": 1000, "table_lambda": 5.0,
    },
    "analyze": {
        **PROBLEM, "lambdas": [1.5, 5.0], "T": 1.0, "N": 1250, "T_eq": 4.0, "N_eq": 5000, "perturb": 0.1,
        "fit_window": 0.5, "stride": None, "sweep_lambdas": [], "sweep_alphas": [], "lambda": 3.0,
        "trials": 100,
    },
    "train": {
        **PROBLEM, "T": 3.0, "N": 5000, "batch_size": 10, "iterations": 100, "lr": 1e-2,
        "adam_beta1": 0.9, "adam_beta2": 0.999, "adam_eps": 1e-8, "rbf_spacing": 0.25, "rbf_offset": 0.5,
        "rbf_count": 20, "rbf_beta": 20.0, "init_weight": 1.0, "trials": 100, "stride": None,
        "compare_lambdas": [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0],
    },
    "control-demo": {
        "T": 1.0, "N": 200, "iterations": 200, "lr": 0.1, "adam_beta1": 0.9, "adam_beta2": 0.999,
        "adam_eps": 1e-8, "rbf_spacing": 0.05, "rbf_first_center": -0.5, "rbf_count": 50, "rbf_beta": 20.0,
        "init_weight": 1.0, "seed": 0,
    },
}

HELP = {
    "recover": "integrate the recovery flow for one random instance and write its trajectory",
    "sweep": "MSE-versus-time curves per lambda and a discretization (bin count) table",
    "analyze": "equilibrium, linearization and error-norm ratio curves; optional lambda/alpha sweeps",
    "train": "train an RBF regularization schedule by unrolled Euler + adjoint gradients",
    "control-demo": "scalar optimal-control example with a known exact solution",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparseflow", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, defaults in DEFAULTS.items():
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", help="file of key=value lines")
        p.add_argument("--out-dir", default=".", help="existing directory for outputs (default: .)")
        p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
        for key in defaults:
            conv, text = OPTIONS[key]
            flag = "--" + key.replace("_", "-")
            p.add_argument(flag, dest=key, type=conv, default=argparse.SUPPRESS,
                           help=f"{text} (default: {_fmt(defaults[key])})")
    return parser


def _fmt(v) -> str:
    if isinstance(v, list):
        return ",".join(_fmt(x) for x in v)
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_config_file(path, command: str) -> dict:
    known = DEFAULTS[command]
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown setting {key!r} for {command}")
        try:
            out[key] = OPTIONS[key][0](value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


def resolve(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[args.command])
    if args.config:
        cfg.update(read_config_file(args.config, args.command))
    cfg.update({k: v for k, v in vars(args).items() if k in cfg})
    return cfg


def write_resolved(cfg: dict, out: Path, command: str) -> None:
    lines = [f"command={command}"] + [f"{k}={_fmt(cfg[k])}" for k in sorted(cfg)]
    (out / "config.txt").write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def _check(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _validate_problem(cfg) -> ProblemInstance:
    _check(cfg["alpha"] > 0, "alpha must be positive")
    if cfg["instance"]:
        inst = load_instance(cfg["instance"])
    else:
        _check(cfg["n"] >= 1 and cfg["m"] >= 1, "n and m must be positive")
        _check(cfg["sigma"] >= 0, "sigma must be non-negative")
        _check(0 <= cfg["p"] <= 1, "p must lie in [0, 1]")
        inst = ProblemInstance.generate(cfg["m"], cfg["n"], cfg["sigma"], cfg["p"], cfg["seed"])
    return inst


def _solver(T, N, stride) -> SolverConfig:
    try:
        return SolverConfig(T, N, stride)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _out_dir(path) -> Path:
    out = Path(path)
    if not out.is_dir():
        raise OSError(f"output directory {out} does not exist")
    return out


def _tag(v: float) -> str:
    return f"{v:g}"


def cmd_recover(cfg: dict, out: Path) -> int:
    inst = _validate_problem(cfg)
    solver = _solver(cfg["T"], cfg["N"], cfg["stride"])
    if cfg["schedule"]:
        schedule = load_schedule(cfg["schedule"])
    else:
        _check(cfg["lambda"] >= 0, "lambda must be non-negative")
        schedule = cfg["lambda"]
    snaps = cfg["snapshots"]
    _check(all(0 <= t <= solver.T for t in snaps), "snapshot times must lie in [0, T]")
    write_resolved(cfg, out, "recover")

    ob = sample_batch(inst, RngStream(cfg["seed"], TRIAL_STREAM), 1)
    if snaps:
        # record every step so snapshot times resolve to the nearest Euler state
        solver = SolverConfig(solver.T, solver.N, 1) if cfg["stride"] is None else solver
    traj = euler_solve(inst, ob.y[0], schedule, cfg["alpha"], solver)
    if snaps:
        idx = [int(np.argmin(np.abs(traj.times - t))) for t in snaps]
        header = ["i", "s"] + [f"x(t={traj.times[k]:g})" for k in idx]
        write_csv(out / "snapshots.csv", header,
                  [(i + 1, ob.s[0][i], *traj.states[idx, i]) for i in range(inst.n)])
    traj.to_csv(out / "trajectory.csv")
    write_csv(out / "signal.csv", ["i", "s", "x_T"],
              [(i + 1, s, x) for i, (s, x) in enumerate(zip(ob.s[0], traj.terminal))])
    save_instance(inst, out / "instance.txt")
    se = float(np.sum((traj.terminal - ob.s[0]) ** 2))
    print(f"terminal squared error at T={cfg['T']:g}: {se:.6g}", file=sys.stderr)
    return 0


def cmd_sweep(cfg: dict, out: Path) -> int:
    inst = _validate_problem(cfg)
    _check(cfg["trials"] >= 1 and cfg["table_trials"] >= 1, "trial counts must be positive")
    _check(all(v > 0 for v in cfg["lambdas"]) and cfg["table_lambda"] > 0, "lambdas must be positive")
    curve_cfg = _solver(cfg["T"], cfg["N"], cfg["stride"])
    table_cfgs = [_solver(cfg["T"], N, cfg["stride"]) for N in cfg["Ns"]]
    write_resolved(cfg, out, "sweep")

    rng = RngStream(cfg["seed"], TRIAL_STREAM)
    failures = 0
    if cfg["lambdas"]:
        print(f"{'lambda':>8} {'MSE(1)':>12} {'MSE(T)':>12}")
    for lam in cfg["lambdas"]:
        try:
            curve = estimate_mse_curve(inst, lam, cfg["alpha"], curve_cfg, cfg["trials"], rng)
        except (DivergenceError, FloatingPointError) as exc:
            failures += 1
            print(f"lambda={lam:g}: failed: {exc}", file=sys.stderr)
            continue
        curve.to_csv(out / f"mse_lambda_{_tag(lam)}.csv")
        print(f"{lam:8g} {curve.at(1.0):12.6f} {curve.mse[-1]:12.6f}")

    rows = []
    if table_cfgs:
        print(f"{'N':>8} {'MSE(T)':>12}")
    for solver in table_cfgs:
        try:
            curve = estimate_mse_curve(inst, cfg["table_lambda"], cfg["alpha"], solver, cfg["table_trials"], rng)
        except (DivergenceError, FloatingPointError) as exc:
            failures += 1
            print(f"N={solver.N}: failed: {exc}", file=sys.stderr)
            continue
        curve.to_csv(out / f"mse_N_{solver.N}.csv")
        rows.append((solver.N, curve.mse[-1]))
        print(f"{solver.N:8d} {curve.mse[-1]:12.6f}")
    if rows:
        write_csv(out / "table_N.csv", ["N", "mse"], rows)
    return 1 if failures else 0


def cmd_analyze(cfg: dict, out: Path) -> int:
    inst = _validate_problem(cfg)
    _check(all(v > 0 for v in cfg["lambdas"]), "lambdas must be positive")
    _check(cfg["perturb"] > 0, "perturb must be positive")
    _check(0 < cfg["fit_window"] <= 1, "fit_window must lie in (0, 1]")
    rho_cfg = _solver(cfg["T"], cfg["N"], cfg["stride"])
    eq_cfg = _solver(cfg["T_eq"], cfg["N_eq"], cfg["stride"])
    if cfg["sweep_lambdas"] or cfg["sweep_alphas"]:
        _check(cfg["trials"] >= 1, "trials must be positive")
        _check(all(v > 0 for v in cfg["sweep_lambdas"] + cfg["sweep_alphas"]) and cfg["lambda"] > 0,
               "sweep values must be positive")
    write_resolved(cfg, out, "analyze")

    ob = sample_batch(inst, RngStream(cfg["seed"], TRIAL_STREAM), 1)
    y = ob.y[0]
    eps = cfg["perturb"] * RngStream(cfg["seed"], PERTURB_STREAM).generator().standard_normal(inst.n)
    for lam in cfg["lambdas"]:
        params = SmoothLassoParams(lam, cfg["alpha"])
        zero = euler_solve(inst, y, lam, cfg["alpha"], eq_cfg)
        xstar = zero.terminal
        residual = analysis.equilibrium_residual(xstar, inst, y, params)
        report = analysis.linearize(inst, params, xstar)
        pert = euler_solve(inst, y, lam, cfg["alpha"], rho_cfg, x0=xstar + eps)
        rz = analysis.rho_curve(zero, xstar, report.omega1)
        rp = analysis.rho_curve(pert, xstar, report.omega1)
        rz.to_csv(out / f"rho_lambda_{_tag(lam)}_zero.csv")
        rp.to_csv(out / f"rho_lambda_{_tag(lam)}_perturbed.csv")
        sz = analysis.fit_log_slope(rz.times, rz.rho, cfg["fit_window"])
        sp = analysis.fit_log_slope(rp.times, rp.rho, cfg["fit_window"])
        if residual > analysis.RESIDUAL_WARN:
            print(f"warning: lambda={lam:g}: equilibrium residual {residual:.3g} after T_eq={cfg['T_eq']:g}",
                  file=sys.stderr)
        print(f"lambda={lam:g} omega1={report.omega1!r} lower_bound={report.omega1_lower_bound!r} "
              f"residual={residual:.3g} slope_zero={sz:.6g} slope_perturbed={sp:.6g}")

    rng = RngStream(cfg["seed"], TRIAL_STREAM)
    if cfg["sweep_lambdas"]:
        pts = analysis.lambda_sweep(inst, cfg["sweep_lambdas"], cfg["alpha"], eq_cfg, cfg["trials"], rng)
        analysis.write_sweep_csv(pts, out / "sweep_lambda.csv", by="lambda")
        for pt in pts:
            print(f"sweep lambda={pt.lam:g} mse_inf={pt.mse_inf:.6g} force={pt.force_norm:.6g} omega1={pt.omega1:.6g}")
    if cfg["sweep_alphas"]:
        pts = analysis.alpha_sweep(inst, cfg["lambda"], cfg["sweep_alphas"], eq_cfg, cfg["trials"], rng)
        analysis.write_sweep_csv(pts, out / "sweep_alpha.csv", by="alpha")
        for pt in pts:
            print(f"sweep alpha={pt.alpha:g} mse_inf={pt.mse_inf:.6g} force={pt.force_norm:.6g} omega1={pt.omega1:.6g}")
    return 0


def _train_config(cfg) -> duvo.TrainConfig:
    try:
        return duvo.TrainConfig(
            target_time=cfg["T"], N=cfg["N"], batch_size=cfg["batch_size"], iterations=cfg["iterations"],
            learning_rate=cfg["lr"], adam_beta1=cfg["adam_beta1"], adam_beta2=cfg["adam_beta2"],
            adam_eps=cfg["adam_eps"], alpha=cfg["alpha"], rbf_spacing=cfg["rbf_spacing"],
            rbf_offset=cfg["rbf_offset"], rbf_count=cfg["rbf_count"], rbf_beta=cfg["rbf_beta"],
            init_weight=cfg["init_weight"], seed=cfg["seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_train(cfg: dict, out: Path) -> int:
    inst = _validate_problem(cfg)
    tcfg = _train_config(cfg)
    _check(cfg["trials"] >= 1, "trials must be positive")
    _check(all(v > 0 for v in cfg["compare_lambdas"]), "compare_lambdas must be positive")
    solver = _solver(tcfg.target_time, tcfg.N, cfg["stride"])
    write_resolved(cfg, out, "train")

    def progress(i, loss, state):
        if (i + 1) % 10 == 0 or i == 0:
            log.info("iteration %d loss %.6g", i + 1, loss)

    try:
        state, sched = duvo.train_lambda_schedule(inst, tcfg, RngStream(cfg["seed"], TRAIN_STREAM), progress)
    except (DivergenceError, FloatingPointError) as exc:
        print(f"error: training failed: {exc}", file=sys.stderr)
        return 1
    state.to_csv(out / "loss.csv")
    save_schedule(sched, out / "schedule.txt")
    ts = solver.times(solver.record_steps())
    write_csv(out / "lambda.csv", ["t", "lambda"], np.column_stack([ts, sched.values(ts)]))

    rng = RngStream(cfg["seed"], TRIAL_STREAM)
    curve = estimate_mse_curve(inst, sched, tcfg.alpha, solver, cfg["trials"], rng)
    curve.to_csv(out / "mse_trained.csv")
    rows = [("trained", curve.mse[-1])]
    print(f"trained schedule: MSE({tcfg.target_time:g}) = {curve.mse[-1]:.6g}")
    for lam in cfg["compare_lambdas"]:
        c = estimate_mse_curve(inst, lam, tcfg.alpha, solver, cfg["trials"], rng)
        c.to_csv(out / f"mse_lambda_{_tag(lam)}.csv")
        rows.append((_tag(lam), c.mse[-1]))
        print(f"constant lambda={lam:g}: MSE({tcfg.target_time:g}) = {c.mse[-1]:.6g}")
    lines = ["lambda,mse"] + [f"{k},{float(v)!r}" for k, v in rows]
    (out / "mse_at_target.csv").write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    return 0


def cmd_control_demo(cfg: dict, out: Path) -> int:
    try:
        dcfg = duvo.ControlDemoConfig(
            T=cfg["T"], N=cfg["N"], iterations=cfg["iterations"], learning_rate=cfg["lr"],
            adam_beta1=cfg["adam_beta1"], adam_beta2=cfg["adam_beta2"], adam_eps=cfg["adam_eps"],
            rbf_spacing=cfg["rbf_spacing"], rbf_first_center=cfg["rbf_first_center"],
            rbf_count=cfg["rbf_count"], rbf_beta=cfg["rbf_beta"], init_weight=cfg["init_weight"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    write_resolved(cfg, out, "control-demo")
    result = duvo.control_demo(dcfg)
    result.to_csv(out / "control.csv")
    result.state.to_csv(out / "loss.csv")
    save_schedule(result.schedule, out / "schedule.txt")
    print(f"max |u_trained - u_exact| = {result.max_abs_error:.6g}")
    return 0


COMMANDS = {
    "recover": cmd_recover,
    "sweep": cmd_sweep,
    "analyze": cmd_analyze,
    "train": cmd_train,
    "control-demo": cmd_control_demo,
}


def _show_warning(message, category, *args, **kwargs):
    print(f"warning: {message}", file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve(args)
        out = _out_dir(args.out_dir)
        with warnings.catch_warnings():
            warnings.showwarning = _show_warning
            return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DivergenceError, FloatingPointError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
