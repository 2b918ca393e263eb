"""Command-line front end: ``mpgpe {collect,fit,train,evaluate,sweep}``.

Every command takes ``--env``, ``--seed``, ``--out`` and ``--config``.  A
config file is flat ``key = value`` text whose keys are the long option names
(dashes or underscores); explicit flags win over config keys.

Seeds: ``--seed S`` builds ``numpy.random.default_rng(S)`` and splits it with
``spawn(6)`` into (data, fit, prior, model/env, eval, init) streams.
``collect`` uses stream 0, ``fit`` stream 1 and ``evaluate`` stream 4, so
``collect`` + ``fit`` + ``train`` with one seed consume the same streams that
a single ``train`` would.

Outputs are written to a temporary file and renamed into place once the
whole command has succeeded.  Every command also writes a
``<out>.manifest`` sidecar with the command, config hash, seed, timestamps
and output paths.
"""

from __future__ import annotations

import argparse
from dataclasses import asdict
import datetime as _dt
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
from typing import Optional

import numpy as np

from . import gp, lscde
from .env import ENV_KINDS, collect_uniform_dataset, make_env, read_dataset_csv, write_dataset_csv
from .policy import load_prior, save_prior
from .trainer import (
    ALGOS,
    STANDARD_SCHEDULES,
    TrainConfig,
    evaluate_policy,
    fit_model,
    parse_schedule,
    schedule_sweep,
    train,
    write_sweep_csv,
)

STREAM_DATA, STREAM_FIT, STREAM_EVAL = 0, 1, 4
_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


class UsageError(Exception):
    def __init__(self, errors):
        self.errors = [errors] if isinstance(errors, str) else list(errors)
        super().__init__("; ".join(self.errors))


# ---------------------------------------------------------------------------
# files


def atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _render(writer, obj) -> str:
    buf = io.StringIO()
    writer(obj, buf)
    return buf.getvalue()


def read_config(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            out[key.strip().replace("-", "_")] = val.strip()
    return out


def load_model(path: str):
    with open(path) as fh:
        head = fh.readline().strip()
        fh.seek(0)
        if head.startswith("M,d_s,d_a,d_out"):
            return gp.load(fh)
        if head == "M,d_s,d_a,kappa,lambda":
            return lscde.load(fh)
    raise ValueError(f"{path}: unrecognised model file")


def _streams(seed: int):
    return np.random.default_rng(seed).spawn(6)


def _write_manifest(out: str, command: str, config: dict, seed: int, started: str, outputs: list) -> None:
    blob = json.dumps(config, sort_keys=True, default=str)
    lines = [
        f"command = {command}",
        f"config_hash = {hashlib.sha256(blob.encode()).hexdigest()}",
        f"seed = {seed}",
        f"started = {started}",
        f"finished = {_now()}",
        f"outputs = {';'.join(outputs)}",
    ]
    lines += [f"config.{k} = {v}" for k, v in sorted(config.items())]
    atomic_write(out + ".manifest", "\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return "/".join(f"{x:.17g}" for x in v)
    return f"{v:.17g}"


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------
# argument handling


def _env_name(text: str) -> str:
    kind = text.replace("-", "_")
    if kind not in ENV_KINDS:
        raise argparse.ArgumentTypeError(f"unknown env {text!r}; choose from {', '.join(k.replace('_', '-') for k in ENV_KINDS)}")
    return kind


def _algo_name(text: str) -> str:
    algo = text.replace("-", "_")
    if algo not in ALGOS:
        raise argparse.ArgumentTypeError(f"unknown algo {text!r}; choose from {', '.join(a.replace('_', '-') for a in ALGOS)}")
    return algo


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    try:
        return _BOOL[str(text).lower()]
    except KeyError:
        raise argparse.ArgumentTypeError(f"not a boolean: {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--env", type=_env_name, default="chainwalk_gaussian")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--T", type=int, help="episode length override")
    p.add_argument("--gamma", type=float, help="discount override")


def _train_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--algo", type=_algo_name, default="mpgpe_lscde")
    p.add_argument("--budget", type=int, default=20, help="real episodes N")
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--synthetic", type=int, default=2000, help="synthetic rollouts per update")
    p.add_argument("--updates-per-batch", type=int, default=100)
    p.add_argument("--eval-episodes", type=int, default=100)
    p.add_argument("--normalize-step", type=_bool, default=None)
    p.add_argument("--max-step", type=float, default=0.3)
    p.add_argument("--max-centers", type=int, default=1000)
    p.add_argument("--tau-init", type=float, default=None)
    p.add_argument("--random-init", type=_bool, default=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mpgpe", description="Model-based PGPE experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="uniform-exploration transition dataset")
    _common(p)
    p.add_argument("--episodes", type=int, default=20)

    p = sub.add_parser("fit", help="fit an LSCDE or GP transition model")
    _common(p)
    p.add_argument("--model", choices=("lscde", "gp"), default="lscde")
    p.add_argument("--data")
    p.add_argument("--max-centers", type=int, default=1000)

    p = sub.add_parser("train", help="run M-PGPE, IW-PGPE or REINFORCE")
    _common(p)
    _train_opts(p)
    p.add_argument("--schedule", help="KxR, e.g. 5x4 (IW-PGPE / REINFORCE)")
    p.add_argument("--data", help="train the model on this dataset instead of collecting")
    p.add_argument("--model", dest="model_file", help="use this fitted model file")
    p.add_argument("--policy-out", help="defaults to <out>.policy")

    p = sub.add_parser("evaluate", help="real returns of the prior-mean policy")
    _common(p)
    p.add_argument("--policy")
    p.add_argument("--episodes", type=int, default=100)

    p = sub.add_parser("sweep", help="IW-PGPE final returns per sampling schedule")
    _common(p)
    _train_opts(p)
    p.add_argument("--schedules", default=",".join(f"{k}x{r}" for k, r in STANDARD_SCHEDULES))
    p.add_argument("--runs", type=int, default=50)
    return ap


REQUIRED = {"collect": ("out",), "fit": ("out", "data"), "train": ("out",), "evaluate": ("out", "policy"), "sweep": ("out",)}


def parse_args(argv) -> argparse.Namespace:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        cfg = read_config(args.config)
        sp = ap._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(cfg) - known - {"config"})
        if unknown:
            raise UsageError([f"unknown config key {k!r}" for k in unknown])
        sp.set_defaults(**{k: v for k, v in cfg.items() if k != "config"})
        # argparse converts string defaults through ``type``; flags still override
        args = ap.parse_args(argv)
    missing = [f"--{k.replace('_', '-')} is required" for k in REQUIRED[args.command] if not getattr(args, k)]
    if missing:
        raise UsageError(missing)
    return args


def _env(args):
    over = {k: getattr(args, k) for k in ("T", "gamma") if getattr(args, k, None) is not None}
    over["seed"] = args.seed
    return make_env(args.env, **over)


def train_config(args, schedule=None) -> TrainConfig:
    return TrainConfig(
        algo=getattr(args, "algo", "iwpgpe"),
        budget_episodes=args.budget,
        iterations=args.iters,
        synthetic_per_update=args.synthetic,
        learning_rate=args.lr,
        normalize_step=args.normalize_step,
        schedule=schedule,
        updates_per_batch=args.updates_per_batch,
        eval_episodes=args.eval_episodes,
        seed=args.seed,
        tau_init=args.tau_init,
        random_init=_bool(args.random_init),
        max_centers=args.max_centers,
        max_step=args.max_step,
    )


# ---------------------------------------------------------------------------
# commands


def cmd_collect(args) -> int:
    started = _now()
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    env = _env(args)
    data = collect_uniform_dataset(env, args.episodes, _streams(args.seed)[STREAM_DATA])
    atomic_write(args.out, _render(write_dataset_csv, data))
    _write_manifest(args.out, "collect", {"env": args.env, "episodes": args.episodes, "T": env.T, "gamma": env.gamma}, args.seed, started, [args.out])
    print(f"wrote {len(data)} transitions to {args.out}")
    return 0


def _read_data(path: str):
    try:
        with open(path, newline="") as fh:
            return read_dataset_csv(fh)
    except ValueError as err:
        raise UsageError(f"{path}: {err}") from None


def cmd_fit(args) -> int:
    started = _now()
    env = _env(args)
    data = _read_data(args.data)
    if data.d_s != env.state_dim or data.d_a != env.action_dim:
        raise UsageError(f"{args.data}: dimensions ({data.d_s}, {data.d_a}) do not match env {args.env}")
    cfg = TrainConfig(max_centers=args.max_centers)
    model, _, report = fit_model(env, args.model, data, cfg, _streams(args.seed)[STREAM_FIT])
    saver = lscde.save if args.model == "lscde" else gp.save
    text = _render(saver, model)
    scores = report.pop("cv_scores", {})
    rep = "".join(f"{k},{_fmt(v)}\n" for k, v in report.items())
    rep += "".join(f"cv[kappa={_fmt(k)};lambda={_fmt(l)}],{_fmt(s)}\n" for (k, l), s in sorted(scores.items()))
    atomic_write(args.out, text)
    atomic_write(args.out + ".report", "key,value\n" + rep)
    conf = {"env": args.env, "model": args.model, "data": args.data, "max_centers": args.max_centers}
    _write_manifest(args.out, "fit", conf, args.seed, started, [args.out, args.out + ".report"])
    for line in rep.splitlines():
        print(line.replace(",", " = ", 1))
    return 0


def cmd_train(args) -> int:
    started = _now()
    schedule = parse_schedule(args.schedule) if args.schedule else None
    cfg = train_config(args, schedule)
    errs = cfg.validate()
    if args.data and args.model_file:
        errs.append("--data and --model are mutually exclusive")
    if (args.data or args.model_file) and not cfg.algo.startswith("mpgpe"):
        errs.append("--data/--model only apply to M-PGPE")
    if errs:
        raise UsageError(errs)
    env = _env(args)
    inputs = {}
    if args.data:
        inputs["data"] = _read_data(args.data)
    if args.model_file:
        inputs["model"] = load_model(args.model_file)
    res = train(env, cfg, np.random.default_rng(args.seed), **inputs)
    policy_out = args.policy_out or args.out + ".policy"
    curve = _render(lambda c, fh: c.write_csv(fh), res.curve)
    pol = _render(save_prior, res.rho)
    atomic_write(args.out, curve)
    atomic_write(policy_out, pol)
    _write_manifest(args.out, "train", {**asdict(cfg), "env": args.env}, args.seed, started, [args.out, policy_out])
    last = res.curve.rows[-1] if len(res.curve) else None
    if last:
        print(f"{len(res.curve)} rows; final return {last.mean_return:.4f} +/- {last.std_error:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    started = _now()
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    env = _env(args)
    with open(args.policy) as fh:
        rho = load_prior(fh)
    mean, se = evaluate_policy(env, rho, args.episodes, _streams(args.seed)[STREAM_EVAL])
    atomic_write(args.out, f"mean_return,std_error,episodes\n{mean:.17g},{se:.17g},{args.episodes}\n")
    _write_manifest(args.out, "evaluate", {"env": args.env, "policy": args.policy, "episodes": args.episodes}, args.seed, started, [args.out])
    print(f"mean return {mean:.4f} +/- {se:.4f} over {args.episodes} episodes")
    return 0


def cmd_sweep(args) -> int:
    started = _now()
    errs = []
    schedules = []
    for tok in args.schedules.split(","):
        try:
            k, r = parse_schedule(tok.strip())
        except ValueError as err:
            errs.append(str(err))
            continue
        if k * r != args.budget:
            errs.append(f"schedule {k}x{r} uses {k * r} episodes, budget is {args.budget}")
        schedules.append((k, r))
    if args.runs < 1:
        errs.append("--runs must be >= 1")
    cfg = train_config(args)
    errs += [e for e in cfg.validate() if "algo" not in e]
    if errs:
        raise UsageError(errs)
    env = _env(args)
    rows = schedule_sweep(env, cfg, schedules, args.runs, seed=args.seed)
    atomic_write(args.out, _render(write_sweep_csv, rows))
    _write_manifest(args.out, "sweep", {**asdict(cfg), "env": args.env, "runs": args.runs, "schedules": args.schedules}, args.seed, started, [args.out])
    for r in rows:
        print(f"{r.schedule[0]}x{r.schedule[1]}: {r.mean_return:.4f} +/- {r.std_error:.4f}")
    return 0


COMMANDS = {"collect": cmd_collect, "fit": cmd_fit, "train": cmd_train, "evaluate": cmd_evaluate, "sweep": cmd_sweep}


def main(argv: Optional[list] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
    except UsageError as err:
        for e in err.errors:
            print(f"error: {e}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as err:
        for e in err.errors:
            print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
