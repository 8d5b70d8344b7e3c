"""Command-line entry point: ``scorelab {train,sample,analyze,run,validate}``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

import argparse
import json
import os
import sys

from scorelab import analysis, experiments, io
from scorelab.errors import ConfigError, NumericError, SingularDesignError
from scorelab.models import (
    LinearScoreModel,
    TimeMlp,
    load_model,
    parse_arch,
    save_model,
)
from scorelab.sample import SamplerConfig, reverse_sample, subsample_schedule
from scorelab.schedule import Schedule
from scorelab.targets import ScoreOracle, target_to_dict
from scorelab.train import NoiseToScore, train_bsm, train_bsm_shared, train_dsm

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _split_overrides(extra):
    """Turn ``--a.b=value`` / ``--a.b value`` leftovers into ``[(a.b, value)]``."""
    out, i = [], 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"override {tok} needs a value")
            i += 1
            value = extra[i]
        if "." not in key and key not in experiments.DEFAULTS:
            raise ConfigError(f"unknown option --{key}")
        out.append((key, value))
        i += 1
    return out


def _config(args, extra, require_name=True):
    overrides = _split_overrides(extra)
    if getattr(args, "preset", None):
        raw = experiments.load_preset(args.preset)
        for dotted, value in overrides:
            experiments.apply_override(raw, dotted, value)
        cfg, errors = experiments.validate_config(raw, None, f"preset:{args.preset}", require_name)
        if errors:
            raise ConfigError("\n".join(errors))
        return cfg
    if not args.config:
        raise ConfigError("need --config or --preset")
    return experiments.load_config(args.config, overrides, require_name)


def cmd_validate(args, extra):
    cfg = _config(args, extra)
    print(json.dumps(cfg, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_run(args, extra):
    cfg = _config(args, extra)
    summary = experiments.run_experiment(cfg, args.out)
    print(json.dumps(summary, indent=2, sort_keys=True, default=io._jsonable))
    return EXIT_OK


def cmd_train(args, extra):
    cfg = _config(args, extra, require_name=False)
    seed = cfg["seeds"][0]
    out = args.out or cfg["output"]
    os.makedirs(out, exist_ok=True)
    target = experiments.build_target(cfg["target"], seed)
    ds = experiments.build_dataset(cfg, target, seed)
    kind = cfg["model"]["kind"]
    if args.arch:
        cfg["model"]["widths"] = parse_arch(args.arch)
    if args.method == "dsm":
        if kind == "linear":
            init = LinearScoreModel(ds.schedule, d=ds.d)
        else:
            init = TimeMlp.initialized(experiments.mlp_widths(cfg, ds.d), ds.schedule, seed, cfg["model"]["activation"])
        result = train_dsm(init, ds, experiments.dsm_config(cfg, seed))
        rows = [list(r) for r in result.trace]
    else:
        bcfg = experiments.bsm_config(cfg, seed)
        if kind == "mlp" and cfg["bsm"].get("shared"):
            init = TimeMlp.initialized(experiments.mlp_widths(cfg, ds.d), ds.schedule, seed, cfg["model"]["activation"])
            result = train_bsm_shared(init, ds, bcfg)
            rows = [list(r) for r in result.trace]
        else:
            result = train_bsm(ds, bcfg, kind, experiments.mlp_widths(cfg, ds.d), cfg["model"]["activation"])
            rows = [[r[1], r[2], r[3]] for r in result.trace]
            _save_per_timestep(result.model, os.path.join(out, "checkpoints"))
    io.write_csv(os.path.join(out, "loss.csv"), ["step", "loss", "lr"], rows)
    save_model(os.path.join(out, "model.bin"), result.model)
    io.write_json(os.path.join(out, "target.json"), target_to_dict(target))
    print(f"wrote {out}/model.bin and {out}/loss.csv")
    return EXIT_OK


def _save_per_timestep(model, directory):
    """One checkpoint per timestep, each defined on a single-point grid."""
    os.makedirs(directory, exist_ok=True)
    sched = model.schedule
    for j, t in enumerate(sched.times):
        single = Schedule([t], [sched.weights[j]], "subsampled")
        if isinstance(model, LinearScoreModel):
            part = LinearScoreModel(single, model.A[j : j + 1], model.b[j : j + 1])
        else:
            net = model.models[j]
            part = TimeMlp(net.widths, sched, net.activation, net.theta)
        save_model(os.path.join(directory, f"step_{j + 1:04d}.bin"), part)


def cmd_sample(args, extra):
    model = load_model(args.checkpoint)
    sched = model.schedule
    if args.stride > 1 or args.offset != 1:
        sched = subsample_schedule(sched, args.stride, args.offset)
    cfg = SamplerConfig(sched, args.integrator, args.n, args.seed, zero_noise=args.zero_noise)
    samples = reverse_sample(model, cfg)
    out = args.out
    if out.endswith(".bin"):
        io.write_binary(out, {"type": "samples", "n": args.n, "d": samples.shape[1], "seed": args.seed}, {"x": samples})
    else:
        io.samples_to_csv(out, samples)
    print(f"wrote {samples.shape[0]} samples to {out}")
    return EXIT_OK


def cmd_analyze(args, extra):
    cfg = _config(args, extra, require_name=False)
    seed = cfg["seeds"][0]
    model = load_model(args.checkpoint)
    if args.noise:
        model = NoiseToScore(model)
    oracle = ScoreOracle(experiments.build_target(cfg["target"], seed))
    rep = analysis.expected_l2(model, oracle, model.schedule, args.n_mc, seed)
    if args.format == "json":
        text = json.dumps({**rep.summary(), "rows": rep.rows()}, indent=2, default=io._jsonable) + "\n"
    else:
        text = io.csv_text(rep.HEADER, rep.rows())
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="scorelab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    def with_config(sp):
        sp.add_argument("config", nargs="?", help="JSON config file")
        sp.add_argument("--config", dest="config_opt", help="JSON config file")
        sp.add_argument("--preset", help="shipped preset name")

    v = sub.add_parser("validate", help="print the normalized config or list its errors")
    with_config(v)
    r = sub.add_parser("run", help="run a named experiment")
    with_config(r)
    r.add_argument("--out", help="output directory (default: config 'output')")
    t = sub.add_parser("train", help="train a score model")
    with_config(t)
    t.add_argument("--method", choices=("dsm", "bsm"), default="dsm")
    t.add_argument("--arch", help="MLP widths as 'd,H,...,d'")
    t.add_argument("--out")
    s = sub.add_parser("sample", help="sample with a trained checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--offset", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--integrator", choices=("exponential", "euler-maruyama"), default="exponential")
    s.add_argument("--zero-noise", action="store_true")
    s.add_argument("--out", default="samples.csv")
    a = sub.add_parser("analyze", help="score error of a checkpoint against the true score")
    with_config(a)
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--n-mc", type=int, default=1000)
    a.add_argument("--noise", action="store_true", help="checkpoint predicts z / sigma")
    a.add_argument("--format", choices=("csv", "json"), default="csv")
    a.add_argument("--out")
    return p


COMMANDS = {"validate": cmd_validate, "run": cmd_run, "train": cmd_train, "sample": cmd_sample, "analyze": cmd_analyze}


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if hasattr(args, "config_opt") and args.config_opt:
        args.config = args.config_opt
    try:
        return COMMANDS[args.verb](args, extra)
    except ConfigError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, SingularDesignError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
