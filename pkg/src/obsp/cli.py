"""Command-line harness: ``obsp generate|bench|train|eval|trace``.

Settings come from an optional ``key = value`` config file with sections
(``[experiment]``, ``[timing]``, ``[ppo]``, ``[bench]``, ``[eval]``) and can
be overridden by flags or by ``--set section.key=value``.  Every output file
carries the hash of the effective configuration and the root seed; every
output is written to a temporary name and renamed when complete.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import os
import subprocess
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .env import ObspEnv, InstanceStream
from .heuristics import BATCHING_RULES, SEQUENCING_RULES, run_heuristic
from .instance import (ResourceConfig, Scenario, dumps_instance, generate_instance, parse_setting)
from .nn import CheckpointError, dumps_checkpoint, loads_checkpoint
from .ppo import (EvalReport, PPOConfig, evaluate, format_log, initial_net, policy_action,
                  train)
from .routes import TimingConfig

DEFAULTS = {
    "experiment": {"scenario": "A", "setting": "330-5-8-1-1-1", "seed": "0", "count": "10",
                   "horizon": "3600", "workers": "1"},
    "timing": {},
    "ppo": {},
    "bench": {"settings": "300-3-10-1-1-1, 300-5-10-1-1-1", "seeds": "30",
              "batching": ",".join(BATCHING_RULES), "sequencing": ",".join(SEQUENCING_RULES)},
    "eval": {"episodes": "50", "greedy": "false", "hours": "", "policy": "checkpoint",
             "checkpoint": ""},
    "trace": {"batching": "LST+POSB", "sequencing": "LST"},
}


class CliError(Exception):
    pass


# ------------------------------------------------------------------- config
class Config:
    def __init__(self, parser: configparser.ConfigParser):
        self.cp = parser

    def get(self, section: str, key: str) -> str:
        return self.cp.get(section, key)

    def getint(self, section: str, key: str) -> int:
        try:
            return self.cp.getint(section, key)
        except ValueError:
            raise CliError(f"[{section}] {key} must be an integer") from None

    def getbool(self, section: str, key: str) -> bool:
        try:
            return self.cp.getboolean(section, key)
        except ValueError:
            raise CliError(f"[{section}] {key} must be true or false") from None

    def getlist(self, section: str, key: str) -> list[str]:
        return [x.strip() for x in self.get(section, key).split(",") if x.strip()]

    def canonical(self) -> str:
        lines = []
        for sec in sorted(self.cp.sections()):
            for key, value in sorted(self.cp.items(sec)):
                lines.append(f"{sec}.{key}={value}")
        return "\n".join(lines) + "\n"

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @property
    def seed(self) -> int:
        return self.getint("experiment", "seed")

    def timing(self) -> TimingConfig:
        names = {f.name: f.type for f in fields(TimingConfig)}
        kw = {}
        for key, value in self.cp.items("timing"):
            if key not in names:
                raise CliError(f"unknown timing field {key!r}")
            kw[key] = int(value) if key.endswith(("capacity", "slots")) else float(value)
        try:
            return TimingConfig(**kw)
        except ValueError as exc:
            raise CliError(str(exc)) from None

    def ppo(self) -> PPOConfig:
        kw = {"seed": substream_seed(self.seed, "policy")}
        for f in fields(PPOConfig):
            if not self.cp.has_option("ppo", f.name) or f.name == "seed":
                continue
            raw = self.get("ppo", f.name)
            if f.name == "max_grad_norm":
                kw[f.name] = None if raw.lower() in ("none", "") else float(raw)
            elif f.name == "standardize_advantages":
                kw[f.name] = self.getbool("ppo", f.name)
            elif f.name in ("total_steps", "rollout_steps", "epochs", "minibatch"):
                kw[f.name] = self.getint("ppo", f.name)
            else:
                kw[f.name] = float(raw)
        extra = set(self.cp.options("ppo")) - {f.name for f in fields(PPOConfig)}
        if extra:
            raise CliError(f"unknown ppo fields: {', '.join(sorted(extra))}")
        try:
            return PPOConfig(**kw)
        except ValueError as exc:
            raise CliError(str(exc)) from None

    def setting(self) -> tuple[int, ResourceConfig]:
        try:
            return parse_setting(self.get("experiment", "setting"))
        except ValueError as exc:
            raise CliError(str(exc)) from None

    def scenario(self) -> Scenario:
        try:
            return Scenario(self.get("experiment", "scenario").upper())
        except ValueError:
            raise CliError("scenario must be A or B") from None


def substream_seed(root: int, name: str, index: int = 0) -> int:
    """Seed of a named, indexed random substream of the root seed."""
    seq = np.random.SeedSequence(entropy=root, spawn_key=(zlib.crc32(name.encode()), index))
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def load_config(path: str | None, overrides: dict[str, dict[str, str]]) -> Config:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    if path:
        if not Path(path).is_file():
            raise CliError(f"config file {path} does not exist")
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except configparser.Error as exc:
            raise CliError(f"bad config file: {exc}") from None
    for sec, items in overrides.items():
        if not cp.has_section(sec):
            cp.add_section(sec)
        for k, v in items.items():
            cp.set(sec, k, v)
    return Config(cp)


# ------------------------------------------------------------------- output
def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def atomic_write(path: Path, data: bytes | str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, str):
        data = data.encode()
    tmp.write_bytes(data)
    os.replace(tmp, path)


def stamp(cfg: Config) -> str:
    return f"# config_sha256={cfg.hash} seed={cfg.seed}\n"


def write_manifest(out: Path, cfg: Config, command: str, files: list[str],
                   extra: tuple[str, ...] = ()) -> None:
    lines = [
        f"command = {command}",
        f"obsp_version = {__version__}",
        f"build = {git_describe()}",
        f"config_sha256 = {cfg.hash}",
        f"seed = {cfg.seed}",
        f"scenario = {cfg.get('experiment', 'scenario')}",
        f"setting = {cfg.get('experiment', 'setting')}",
        "files = " + ", ".join(files),
        *extra,
        "",
        "[config]",
        cfg.canonical(),
    ]
    atomic_write(out / "manifest.txt", "\n".join(lines))


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{x:.6f}"


# ----------------------------------------------------------------- commands
def cmd_generate(cfg: Config, out: Path) -> None:
    scenario = cfg.scenario()
    n, rc = cfg.setting()
    count = cfg.getint("experiment", "count")
    horizon = cfg.getint("experiment", "horizon")
    if count < 1:
        raise CliError("count must be at least 1")
    files = []
    for i in range(count):
        seed = substream_seed(cfg.seed, "instance", i)
        inst = generate_instance(scenario, n, rc, seed, horizon=horizon)
        name = f"instance_{i:04d}.csv"
        atomic_write(out / name, stamp(cfg) + dumps_instance(inst))
        files.append(name)
    write_manifest(out, cfg, "generate", files)


def _bench_cell(args):
    scenario, setting, batching, sequencing, seed, horizon, timing = args
    n, rc = parse_setting(setting)
    inst = generate_instance(scenario, n, rc, seed, horizon=horizon)
    res = run_heuristic(inst, batching, sequencing, timing=timing)
    return (scenario.value, setting, batching, sequencing, seed, _fmt(res.tardy_pct),
            res.n_shipped, res.n_tardy, res.m_unprocessed)


def cmd_bench(cfg: Config, out: Path) -> None:
    scenario = cfg.scenario()
    timing = cfg.timing()
    horizon = cfg.getint("experiment", "horizon")
    settings = cfg.getlist("bench", "settings")
    n_seeds = cfg.getint("bench", "seeds")
    batching = cfg.getlist("bench", "batching")
    sequencing = cfg.getlist("bench", "sequencing")
    for b in batching:
        if b not in BATCHING_RULES:
            raise CliError(f"unknown batching rule {b!r}")
    for s in sequencing:
        if s not in SEQUENCING_RULES:
            raise CliError(f"unknown sequencing rule {s!r}")
    for s in settings:
        try:
            parse_setting(s)
        except ValueError as exc:
            raise CliError(str(exc)) from None
    if n_seeds < 1:
        raise CliError("bench needs at least one seed")
    seeds = [substream_seed(cfg.seed, "instance", i) for i in range(n_seeds)]
    jobs = [(scenario, st, b, sq, sd, horizon, timing)
            for st in settings for b in batching for sq in sequencing for sd in seeds]
    workers = cfg.getint("experiment", "workers")
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(_bench_cell, jobs, chunksize=16))
    else:
        rows = [_bench_cell(j) for j in jobs]
    header = ("scenario", "setting", "batching", "sequencing", "seed", "tardy_pct", "n_shipped",
              "n_tardy", "m_unprocessed")
    atomic_write(out / "bench_runs.csv", stamp(cfg) + csv_text(header, rows))

    cells = {}
    for r in rows:
        cells.setdefault((r[1], r[2], r[3]), []).append(float(r[5]))
    summary = [(scenario.value, st, b, sq, len(cells[st, b, sq]), _fmt(np.mean(cells[st, b, sq])))
               for st in settings for b in batching for sq in sequencing]
    atomic_write(out / "bench_summary.csv", stamp(cfg) + csv_text(
        ("scenario", "setting", "batching", "sequencing", "runs", "mean_tardy_pct"), summary))
    write_manifest(out, cfg, "bench", ["bench_runs.csv", "bench_summary.csv"])


def cmd_train(cfg: Config, out: Path) -> None:
    scenario = cfg.scenario()
    n, rc = cfg.setting()
    ppo_cfg = cfg.ppo()
    stream = InstanceStream(scenario, n, rc, substream_seed(cfg.seed, "instance"),
                            horizon=cfg.getint("experiment", "horizon"))
    env = ObspEnv(stream, timing=cfg.timing())
    result = train(env, ppo_cfg)
    meta = (f"config_sha256={cfg.hash} seed={cfg.seed} setting={n}-{rc.label} "
            f"scenario={scenario.value}").encode()
    atomic_write(out / "checkpoint.bin", dumps_checkpoint(result.net, result.adam, meta))
    atomic_write(out / "train_log.csv", stamp(cfg) + format_log(result.log))
    write_manifest(out, cfg, "train", ["checkpoint.bin", "train_log.csv"])


def _load_policy(cfg: Config):
    """(network or None, policy kind, manifest lines) for eval and trace."""
    policy = cfg.get("eval", "policy")
    checkpoint = cfg.get("eval", "checkpoint")
    if policy == "random":
        return None, "random", ()
    if policy == "untrained":
        return initial_net(cfg.ppo()), "untrained", ()
    if policy != "checkpoint":
        raise CliError("eval policy must be checkpoint, random or untrained")
    if not checkpoint:
        raise CliError("eval needs --checkpoint (or policy = random|untrained)")
    path = Path(checkpoint)
    if not path.is_file():
        raise CliError(f"checkpoint {checkpoint} does not exist")
    data = path.read_bytes()
    try:
        net, _, _ = loads_checkpoint(data)
    except CheckpointError as exc:
        raise CliError(f"refusing checkpoint {checkpoint}: {exc}") from None
    return net, "checkpoint", (f"checkpoint_sha256 = {hashlib.sha256(data).hexdigest()}",)


def eval_instances(cfg: Config, episodes: int):
    """Seeded evaluation instances; ``hours`` lists per-hour order counts to draw sizes from."""
    scenario = cfg.scenario()
    n, rc = cfg.setting()
    horizon = cfg.getint("experiment", "horizon")
    hours = [int(h) for h in cfg.getlist("eval", "hours")]
    if any(h < 1 for h in hours):
        raise CliError("hour profiles must be positive order counts")
    hour_rng = np.random.default_rng(substream_seed(cfg.seed, "hours"))
    out = []
    for i in range(episodes):
        size = int(hour_rng.choice(hours)) if hours else n
        seed = substream_seed(cfg.seed, "eval_instance", i)
        out.append((seed, generate_instance(scenario, size, rc, seed, horizon=horizon)))
    return out


def cmd_eval(cfg: Config, out: Path) -> None:
    episodes = cfg.getint("eval", "episodes")
    if episodes < 1:
        raise CliError("eval needs at least one episode")
    net, kind, extra = _load_policy(cfg)
    pairs = eval_instances(cfg, episodes)
    env = ObspEnv(timing=cfg.timing())
    report: EvalReport = evaluate(net, [p[1] for p in pairs], env=env,
                                  greedy=cfg.getbool("eval", "greedy"),
                                  seed=substream_seed(cfg.seed, "rollout"))
    rows = [(i, s, inst.n_orders, _fmt(t), _fmt(r))
            for i, ((s, inst), t, r) in enumerate(zip(pairs, report.tardy_pct, report.returns))]
    atomic_write(out / "eval_episodes.csv", stamp(cfg) + csv_text(
        ("episode", "instance_seed", "n_orders", "tardy_pct", "return"), rows))
    summary = [(kind, episodes, _fmt(report.mean_tardy_pct), _fmt(report.std_tardy_pct),
                _fmt(report.mean_return))]
    atomic_write(out / "eval_summary.csv", stamp(cfg) + csv_text(
        ("policy", "episodes", "mean_tardy_pct", "std_tardy_pct", "mean_return"), summary))
    write_manifest(out, cfg, "eval", ["eval_episodes.csv", "eval_summary.csv"], extra)


def cmd_trace(cfg: Config, out: Path) -> None:
    scenario = cfg.scenario()
    n, rc = cfg.setting()
    inst = generate_instance(scenario, n, rc, substream_seed(cfg.seed, "instance"),
                             horizon=cfg.getint("experiment", "horizon"))
    timing = cfg.timing()
    extra: tuple[str, ...] = ()
    if cfg.get("eval", "checkpoint") or cfg.get("eval", "policy") != "checkpoint":
        net, _, extra = _load_policy(cfg)
        env = ObspEnv(timing=timing, record_trace=True)
        obs = env.reset(inst)
        rng = np.random.default_rng(substream_seed(cfg.seed, "rollout"))
        while not env.done:
            obs = env.step(policy_action(net, obs, env.mask, rng, cfg.getbool("eval", "greedy"),
                                         env.M)).next_state
        rows = env.sim.trace_rows()
    else:
        res = run_heuristic(inst, cfg.get("trace", "batching"), cfg.get("trace", "sequencing"),
                            timing=timing, record_trace=True)
        rows = list(res.trace)
    atomic_write(out / "trace.csv", stamp(cfg) + "\n".join(rows) + "\n")
    write_manifest(out, cfg, "trace", ["trace.csv"], extra)


# --------------------------------------------------------------------- main
FLAG_MAP = {
    "scenario": ("experiment", "scenario"),
    "setting": ("experiment", "setting"),
    "seed": ("experiment", "seed"),
    "count": ("experiment", "count"),
    "workers": ("experiment", "workers"),
    "steps": ("ppo", "total_steps"),
    "settings": ("bench", "settings"),
    "seeds": ("bench", "seeds"),
    "episodes": ("eval", "episodes"),
    "hours": ("eval", "hours"),
    "policy": ("eval", "policy"),
    "checkpoint": ("eval", "checkpoint"),
    "batching": ("trace", "batching"),
    "sequencing": ("trace", "sequencing"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="obsp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"obsp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "bench", "train", "eval", "trace"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override any config entry")
        p.add_argument("--scenario")
        p.add_argument("--setting", help="orders-pickers-shuttles-dto-sto-pack, e.g. 330-5-8-1-1-1")
        p.add_argument("--seed", type=int)
        if name == "generate":
            p.add_argument("--count", type=int)
        if name == "bench":
            p.add_argument("--settings", help="comma-separated setting labels")
            p.add_argument("--seeds", type=int, help="instances per setting")
            p.add_argument("--workers", type=int)
        if name == "train":
            p.add_argument("--steps", type=int)
        if name in ("eval", "trace"):
            p.add_argument("--checkpoint")
        if name == "eval":
            p.add_argument("--episodes", type=int)
            p.add_argument("--hours", help="comma-separated order counts per hour profile")
            p.add_argument("--policy", choices=("checkpoint", "random", "untrained"))
            p.add_argument("--greedy", action="store_true")
        if name == "trace":
            p.add_argument("--batching")
            p.add_argument("--sequencing")
    return parser


def _overrides(args) -> dict[str, dict[str, str]]:
    over: dict[str, dict[str, str]] = {}
    for flag, (sec, key) in FLAG_MAP.items():
        value = getattr(args, flag, None)
        if value is not None:
            over.setdefault(sec, {})[key] = str(value)
    if getattr(args, "greedy", False):
        over.setdefault("eval", {})["greedy"] = "true"
    for item in args.set:
        lhs, sep, value = item.partition("=")
        sec, dot, key = lhs.partition(".")
        if not sep or not dot or not sec or not key:
            raise CliError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        over.setdefault(sec.strip(), {})[key.strip()] = value.strip()
    return over


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        out = Path(args.out)
        if args.command == "generate":
            cmd_generate(cfg, out)
        elif args.command == "bench":
            cmd_bench(cfg, out)
        elif args.command == "train":
            cmd_train(cfg, out)
        elif args.command == "eval":
            cmd_eval(cfg, out)
        else:
            cmd_trace(cfg, out)
    except CliError as exc:
        print(f"obsp {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"obsp {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
