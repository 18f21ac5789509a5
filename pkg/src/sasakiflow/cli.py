"""Command-line interface: ``sasakiflow {run,verify,mt-scan,c0,report}``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure (including
corrupt or truncated artifacts), 3 a verification assertion failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import flow as fl
from . import geometry as geo
from . import io as sio
from . import verification as ver
from .errors import ConfigError, NumericalFailure

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("sasakiflow")


def _load_config(path: str | None) -> sio.RunConfig:
    if path is None:
        return sio.RunConfig().validate()
    try:
        return sio.load_config(path)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None


def _out_dir(arg: str | None, default: str) -> Path:
    d = sio.resolve_output(arg or default)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _dump(obj) -> str:
    return json.dumps(ver._jsonable(obj), indent=2, sort_keys=True) + "\n"


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args.out, cfg.output.directory)
    log.info("resolved config:\n%s", _dump(cfg.as_dict()).rstrip())
    bg, traj = sio.run_config(cfg)
    sio.save_trajectory(traj, cfg, out)
    print(f"wrote {len(traj)} samples to {out} (final sup|h| = {np.max(np.abs(traj.h[-1])):.3e})")
    return EXIT_OK


def _companion(path: str | None):
    return None if path is None else sio.load_trajectory(path)[1]


def cmd_verify(args) -> int:
    cfg, traj = sio.load_trajectory(args.traj)
    ext, ref = _companion(args.extended), _companion(args.refined)
    spec = ver.EnsembleSpec(samples=args.ensemble_samples, min_samples=min(200, args.ensemble_samples))
    rep = ver.verify_trajectory(traj.bg, traj, extended=ext, refined=ref, ensemble_spec=spec, seed=args.seed)
    out = _out_dir(args.out, str(Path(args.traj) / "verification"))
    (out / "report.json").write_text(rep.to_json() + "\n", encoding="utf-8")
    text = rep.to_text()
    (out / "report.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK if rep.passed else EXIT_VERIFY


def cmd_mt_scan(args) -> int:
    cfg = _load_config(args.config)
    bg = geo.build_background(cfg.geometry)
    trajs = [sio.load_trajectory(d)[1] for d in args.traj or ()]
    spec = ver.EnsembleSpec(samples=args.samples, amplitude=args.amplitude)
    fit = ver.mt_scan(bg, spec, args.seed, trajectories=trajs)
    out = _out_dir(args.out, "mt_scan")
    summary = {"A": fit.A, "B": fit.B, "sample_count": fit.sample_count, "seed": args.seed,
               "min_margin": float(np.min(fit.margins)), "grid_size": fit.grid_size,
               "margin_quantiles": np.quantile(fit.margins, [0.0, 0.25, 0.5, 0.75, 1.0]).tolist()}
    (out / "mtfit.json").write_text(_dump(summary), encoding="utf-8")
    lines = ["J,F_b,F_a,margin"] + [",".join(format(v, ".17e") for v in row) for row in fit.scatter_rows()]
    (out / "mt_scatter.csv").write_text("\n".join(lines) + "\n", encoding="ascii")
    print(f"A = {fit.A:.6g}, B = {fit.B:.6g} over {fit.sample_count} samples")
    return EXIT_OK if fit.A > 0 and np.all(fit.margins >= -1e-12) else EXIT_VERIFY


def c0_experiment(traj: fl.Trajectory, offset: float = 0.1) -> dict:
    """Both initial constants, their difference and the bounded/offset gauge branches."""
    shoot = fl.c0_shoot(traj)
    paper = fl.c0_paper(traj)
    bounded = fl.alpha_solve(traj, None)
    off = fl.alpha_solve(traj, shoot.value + offset)
    return {
        "c0_shoot": shoot.value, "c0_shoot_tail_bound": shoot.tail_bound,
        "c0_paper": paper.value, "c0_paper_kappa": paper.value_kappa, "c0_paper_matched": paper.matched,
        "c0_paper_correction": paper.correction, "c0_paper_tail_bound": paper.tail_bound,
        "difference": paper.value - shoot.value, "matched_difference": paper.matched - shoot.value,
        "offset": offset, "sup_alpha_bounded": float(np.max(np.abs(bounded.alpha))),
        "t": bounded.t, "alpha_bounded": bounded.alpha, "alpha_offset": off.alpha,
        "witness": np.abs(off.alpha - bounded.alpha),
    }


def cmd_c0(args) -> int:
    cfg = _load_config(args.config)
    bg, traj = sio.run_config(cfg)
    res = c0_experiment(traj, args.offset)
    out = _out_dir(args.out, str(Path(cfg.output.directory) / "c0"))
    series = {k: res.pop(k) for k in ("t", "alpha_bounded", "alpha_offset", "witness")}
    (out / "c0.json").write_text(_dump(res), encoding="utf-8")
    stride = max(1, args.stride)
    rows = ["t,alpha_bounded,alpha_offset,witness"]
    for i in range(0, series["t"].size, stride):
        rows.append(",".join(format(series[k][i], ".17e") for k in series))
    (out / "c0_witness.csv").write_text("\n".join(rows) + "\n", encoding="ascii")
    print(_dump(res).rstrip())
    return EXIT_OK


def report_text(cfg: sio.RunConfig, traj: fl.Trajectory) -> str:
    f = traj.functionals
    hs = np.max(np.abs(traj.h), axis=1)
    rows = [
        f"normalization   {cfg.geometry.normalization} (c0 = {traj.bg.c0:g}, kappa = {traj.kappa:g})",
        f"grid / dt       {traj.bg.N} nodes, dt = {cfg.flow.dt:g}, t_max = {cfg.flow.t_max:g}",
        f"initial data    {cfg.init.kind}, seed {cfg.init.seed}, amplitude {cfg.init.amplitude:g}",
        f"samples         {len(traj)}",
        f"sup|h|          {hs[0]:.6e} -> {hs[-1]:.6e}",
        f"K               {f['K'][0]:.6e} -> {f['K'][-1]:.6e}",
        f"J               {f['J'][0]:.6e} -> {f['J'][-1]:.6e}",
        f"F_b             {f['F_b'][0]:.6e} -> {f['F_b'][-1]:.6e}",
        f"osc(phi)        {f['osc'][0]:.6e} -> {f['osc'][-1]:.6e}",
        f"alpha           {traj.alpha[0]:.6e} -> {traj.alpha[-1]:.6e}",
        f"Q drift         {np.max(np.abs(traj.lemma31_Q - traj.lemma31_Q[0])):.3e}",
    ]
    rates = ver.convergence_rates(traj)
    if "rate_h" in rates:
        rows.append(f"decay rate of h {rates['rate_h']:.6f} (R^2 = {rates['r2_h']:.6f})")
    return "\n".join(rows)


def cmd_report(args) -> int:
    cfg, traj = sio.load_trajectory(args.traj)
    print(report_text(cfg, traj))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sasakiflow", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log the resolved configuration")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="integrate a flow and write its trajectory directory")
    r.add_argument("--config")
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run every verification check on a trajectory")
    v.add_argument("--traj", required=True)
    v.add_argument("--out")
    v.add_argument("--extended", help="companion run with doubled t_max")
    v.add_argument("--refined", help="companion run on the refined grid")
    v.add_argument("--ensemble-samples", type=int, default=200)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    m = sub.add_parser("mt-scan", help="fit F >= A J - B over an ensemble")
    m.add_argument("--samples", type=int, default=200)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--amplitude", type=float, default=ver.EnsembleSpec.amplitude)
    m.add_argument("--config")
    m.add_argument("--traj", action="append", help="include the states of a trajectory (repeatable)")
    m.add_argument("--out")
    m.set_defaults(func=cmd_mt_scan)

    c = sub.add_parser("c0", help="compare the two initial constants on a fresh run")
    c.add_argument("--config")
    c.add_argument("--out")
    c.add_argument("--offset", type=float, default=0.1)
    c.add_argument("--stride", type=int, default=10, help="row stride of the witness CSV")
    c.set_defaults(func=cmd_c0)

    rp = sub.add_parser("report", help="human-readable summary of a trajectory directory")
    rp.add_argument("--traj", required=True)
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as e:
        print(f"numerical failure ({type(e).__name__}): {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
