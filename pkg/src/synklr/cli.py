"""Command line entry point: ``synklr train | eval | serve | export-plots``.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime
failure, 3 file or network I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import shutil
import signal
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .convention_bots import BOT_CONVENTIONS, make_bot
from .evaluation import (
    ACTION_TYPES,
    action_type_trace,
    belief_cross_entropy,
    bombout_qvalue_audit,
    crossplay_matrix,
    evaluate_pairing,
    read_json,
    write_json,
    write_reports_csv,
    write_trace_csv,
)
from .hierarchy import HierarchySpec, SpecError, build_env, greedy_policy, run_hierarchy, snapshot_schedule
from .learner import ConfigError, LearnerConfig, Policy, UniformRandomPolicy
from .model_server import DEFAULT_RING, ModelServer

log = logging.getLogger("synklr")

CONFIG_SCHEMA_VERSION = 1
MANIFEST_SCHEMA_VERSION = 1
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3
SUITES = ("sp", "with_prev", "xp", "xp_prev", "adhoc", "bombout", "trace", "belief")
PRESET_NAMES = ("mini_klr_seq", "mini_klr_sync", "mini_ch_sync", "mini_syklrbr", "matrix_oracle")

_TOP_KEYS = {"schema_version", "name", "output_dir", "seeds", "env", "hierarchy", "learner", "eval", "server"}
_EVAL_KEYS = {"suites", "num_games", "bots", "belief_level", "belief_games", "trace_games", "seed"}
_SERVER_KEYS = {"mode", "address"}


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class EvalSettings:
    suites: tuple[str, ...] = ("sp", "with_prev")
    num_games: int = 2000
    bots: tuple[str, ...] = ("rank_bot", "color_bot")
    belief_level: int = 1
    belief_games: int = 2000
    trace_games: int = 200
    seed: int = 12345


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs. ``digest`` covers what determines the
    results of one seed: not the seed list, output location or server mode."""

    name: str
    spec: HierarchySpec
    eval: EvalSettings = field(default_factory=EvalSettings)
    output_dir: str = "runs"
    address: Optional[str] = None
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False)

    @property
    def seeds(self) -> tuple[int, ...]:
        return self.spec.seeds

    def digest(self) -> str:
        doc = {"name": self.name, "spec": self.spec.digest(), "eval": dataclasses.asdict(self.eval)}
        return hashlib.blake2b(json.dumps(doc, sort_keys=True).encode(), digest_size=8).hexdigest()

    def run_dir(self, seed: int) -> Path:
        return Path(self.output_dir) / self.name / str(seed)


def parse_config(doc: Mapping[str, Any], source: str = "<config>") -> ExperimentConfig:
    bad = sorted(set(doc) - _TOP_KEYS)
    if bad:
        raise ValidationError(f"{source}: unknown top-level keys {bad}")
    version = doc.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ValidationError(f"{source}: schema_version {version} unsupported (expected {CONFIG_SCHEMA_VERSION})")
    if "name" not in doc:
        raise ValidationError(f"{source}: missing key ['name']")
    env = dict(doc.get("env", {}))
    env_bad = sorted(set(env) - {"preset", "overrides"})
    if env_bad:
        raise ValidationError(f"{source}: unknown env keys {env_bad}")
    evald = dict(doc.get("eval", {}))
    eval_bad = sorted(set(evald) - _EVAL_KEYS)
    if eval_bad:
        raise ValidationError(f"{source}: unknown eval keys {eval_bad}")
    server = dict(doc.get("server", {}))
    server_bad = sorted(set(server) - _SERVER_KEYS)
    if server_bad:
        raise ValidationError(f"{source}: unknown server keys {server_bad}")
    try:
        learner = LearnerConfig.from_mapping(doc.get("learner", {}))
        hier = dict(doc.get("hierarchy", {}))
        hier["env"] = env.get("preset", "hanabi-mini")
        hier["env_overrides"] = env.get("overrides", {})
        hier["seeds"] = tuple(doc.get("seeds", (0,)))
        hier["mode"] = server.get("mode", "thread")
        spec = HierarchySpec.from_mapping(hier, learner=learner)
        build_env(spec.env, spec.env_overrides)
        ev = EvalSettings(**{k: tuple(v) if isinstance(v, list) else v for k, v in evald.items()})
    except (ConfigError, SpecError, TypeError, ValueError) as exc:
        raise ValidationError(f"{source}: {exc}") from exc
    bad_suites = sorted(set(ev.suites) - set(SUITES))
    if bad_suites:
        raise ValidationError(f"{source}: unknown eval suites {bad_suites}")
    bad_bots = sorted(set(ev.bots) - set(BOT_CONVENTIONS))
    if bad_bots:
        raise ValidationError(f"{source}: unknown bots {bad_bots}")
    return ExperimentConfig(
        name=str(doc["name"]), spec=spec, eval=ev, output_dir=str(doc.get("output_dir", "runs")),
        address=server.get("address"), raw=dict(doc),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a TOML config. A bare preset name (``mini_klr_sync``) loads the shipped file."""
    p = Path(path)
    stem = p.name.removesuffix(".toml")
    if not p.exists() and len(p.parts) == 1 and stem in PRESET_NAMES:
        text = resources.files("synklr.presets").joinpath(f"{stem}.toml").read_text()
        source = f"preset:{stem}"
    else:
        text = p.read_text()
        source = str(p)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{source}: {exc}") from exc
    return parse_config(doc, source)


# -- train ----------------------------------------------------------------------


def _hash(data: bytes) -> str:
    return hashlib.blake2b(data, digest_size=8).hexdigest()


def manifest_digest(manifest: Mapping[str, Any]) -> str:
    doc = {k: v for k, v in manifest.items() if k not in ("manifest_digest", "wall_seconds")}
    return _hash(json.dumps(doc, sort_keys=True).encode())


def train_one(cfg: ExperimentConfig, seed: int, force: bool = False) -> dict:
    out = cfg.run_dir(seed)
    manifest_path = out / "manifest.json"
    digest = cfg.digest()
    if manifest_path.exists() and not force:
        old = json.loads(manifest_path.read_text())
        if old.get("config_digest") == digest:
            log.info("%s already complete (digest %s); use --force to retrain", out, digest)
            return old
        raise ValidationError(f"{manifest_path} was produced by config digest {old.get('config_digest')}, "
                              f"not {digest}; use --force to overwrite")
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    state_dir = out / "state"
    if force and state_dir.exists():
        shutil.rmtree(state_dir)
    state_dir.mkdir(exist_ok=True)
    t0 = time.monotonic()
    address = None
    if cfg.address:
        host, port = cfg.address.rsplit(":", 1)
        address = (host, int(port))
    spec = cfg.spec
    kwargs: dict[str, Any] = {}
    if spec.mode == "thread" or spec.schema == "sequential":
        kwargs["checkpoint_dir"] = state_dir
    if address is not None:
        kwargs["address"] = address
    res = run_hierarchy(spec, seed, **kwargs)
    checkpoints = {}
    for lv, payload in sorted(res.policies.items()):
        path = out / "checkpoints" / f"level{lv}.qf"
        path.write_bytes(payload)
        checkpoints[str(lv)] = {"path": str(path.relative_to(out)), "digest": _hash(payload)}
    schedule = snapshot_schedule(spec)
    snapshots = {}
    for lv, payloads in sorted(res.snapshots.items()):
        steps = [t for level, t in schedule if level == lv][-len(payloads):] if payloads else []
        entries = []
        for t, payload in zip(steps, payloads):
            path = out / "snapshots" / f"level{lv}_step{t}.qf"
            path.write_bytes(payload)
            entries.append({"step": t, "path": str(path.relative_to(out)), "digest": _hash(payload)})
        snapshots[str(lv)] = entries
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "config_digest": digest,
        "spec_digest": spec.digest(),
        "name": cfg.name,
        "seed": seed,
        "spec": spec.to_dict() | {"seeds": [seed]},
        "eval": dataclasses.asdict(cfg.eval),
        "snapshot_schedule": [[lv, t] for lv, t in schedule],
        "checkpoints": checkpoints,
        "snapshots": snapshots,
        "partner_counts": {str(k): {str(a): b for a, b in v.items()} for k, v in res.partner_counts.items()},
        "wall_seconds": round(time.monotonic() - t0, 3),
    }
    manifest["manifest_digest"] = manifest_digest(manifest)
    tmp = manifest_path.with_suffix(".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    tmp.replace(manifest_path)
    return manifest


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.output_dir:
        cfg = dataclasses.replace(cfg, output_dir=args.output_dir)
    seeds = args.seed if args.seed else cfg.seeds
    for seed in seeds:
        m = train_one(cfg, seed, force=args.force)
        print(f"{cfg.run_dir(seed)}\tmanifest_digest={m['manifest_digest']}\tconfig_digest={m['config_digest']}")
    return EXIT_OK


# -- eval -----------------------------------------------------------------------


@dataclass
class LoadedRun:
    path: Path
    manifest: dict

    @property
    def seed(self) -> int:
        return self.manifest["seed"]

    @property
    def run_id(self) -> str:
        return f"{self.manifest['name']}/{self.seed}"

    @property
    def spec(self) -> HierarchySpec:
        d = dict(self.manifest["spec"])
        learner = LearnerConfig.from_mapping(d.pop("learner"))
        return HierarchySpec.from_mapping(d, learner=learner)

    def policy(self, level: int) -> Policy:
        if level == 0:
            return UniformRandomPolicy()
        entry = self.manifest["checkpoints"].get(str(level))
        if entry is None:
            raise FileNotFoundError(f"{self.path}: no checkpoint for level {level}")
        return greedy_policy((self.path / entry["path"]).read_bytes(), name=f"{self.run_id}/L{level}")

    def snapshot_policies(self, level: int) -> tuple[list[int], list[Policy]]:
        entries = self.manifest["snapshots"].get(str(level), [])
        return ([e["step"] for e in entries],
                [greedy_policy((self.path / e["path"]).read_bytes(), name=f"L{level}@{e['step']}") for e in entries])

    @property
    def top_level(self) -> int:
        return max(int(k) for k in self.manifest["checkpoints"])


def load_run(path: str | Path) -> LoadedRun:
    p = Path(path)
    mpath = p if p.name == "manifest.json" else p / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"missing manifest: {mpath}")
    manifest = json.loads(mpath.read_text())
    run = LoadedRun(mpath.parent, manifest)
    for entry in manifest["checkpoints"].values():
        if not (run.path / entry["path"]).exists():
            raise FileNotFoundError(f"missing checkpoint: {run.path / entry['path']}")
    return run


def _check_digests(runs: Sequence[LoadedRun], force: bool) -> str:
    digests = sorted({r.manifest["config_digest"] for r in runs})
    if len(digests) > 1 and not force:
        raise ValidationError(f"runs come from different configs {digests}; pass --force to mix them")
    return digests[0] if len(digests) == 1 else "mixed:" + "+".join(digests)


def run_suite(suite: str, runs: Sequence[LoadedRun], out_dir: Path, *, num_games: int, level: Optional[int],
              bots: Sequence[str], seed: int, belief_games: int, belief_level: int, trace_games: int,
              force: bool = False) -> list[Path]:
    digest = _check_digests(runs, force)
    env = build_env(runs[0].spec.env, runs[0].spec.env_overrides)
    top = runs[0].top_level
    k = level if level is not None else top
    written: list[Path] = []
    if suite in ("sp", "with_prev"):
        reports = []
        for run in runs:
            for lv in range(1, top + 1):
                partner = lv if suite == "sp" else lv - 1
                if run.spec.has_br and lv == run.spec.br_level and suite == "with_prev":
                    continue
                reports.append(evaluate_pairing(run.policy(lv), run.policy(partner), env, num_games, seed,
                                                f"{run.run_id}/L{lv}|{run.run_id}/L{partner}"))
        written.append(write_reports_csv(out_dir / f"{suite}.csv", reports, digest))
        written.append(write_json(out_dir / f"{suite}.json", suite, reports, digest))
    elif suite in ("xp", "xp_prev"):
        if len(runs) < 2:
            raise ValidationError("cross-play needs at least two runs")
        pols = [r.policy(k) for r in runs]
        partners = None if suite == "xp" else [r.policy(k - 1) for r in runs]
        ids = [r.run_id for r in runs]
        xp = crossplay_matrix(pols, env, num_games, partners=partners, seed=seed, run_ids=ids)
        flat = [rep for row in xp.reports for rep in row]
        written.append(write_reports_csv(out_dir / f"{suite}_L{k}.csv", flat, digest))
        summary = {"level": k, "sp_mean": xp.sp_mean, "xp_mean": xp.xp_mean, "sp_bombout": xp.sp_bombout,
                   "xp_bombout": xp.xp_bombout, "pairings": flat}
        written.append(write_json(out_dir / f"{suite}_L{k}.json", suite, summary, digest))
    elif suite == "adhoc":
        reports = [evaluate_pairing(run.policy(k), make_bot(b), env, num_games, seed, f"{run.run_id}/L{k}|{b}")
                   for run in runs for b in bots]
        written.append(write_reports_csv(out_dir / "adhoc.csv", reports, digest))
        written.append(write_json(out_dir / "adhoc.json", suite, reports, digest))
    elif suite == "bombout":
        audits = {}
        pairs = ([(i, j) for i in range(len(runs)) for j in range(len(runs)) if i != j]
                 if len(runs) > 1 else [(0, 0)])
        for i, j in pairs:
            audits[f"{runs[i].run_id}/L{k}|{runs[j].run_id}/L{k}"] = bombout_qvalue_audit(
                runs[i].policy(k), runs[j].policy(k), env, num_games, seed)
        written.append(write_json(out_dir / f"bombout_L{k}.json", suite, audits, digest))
    elif suite == "trace":
        for run in runs:
            steps, snaps = None, {}
            for lv in range(1, run.spec.num_levels + 1):
                s, p = run.snapshot_policies(lv)
                if p:
                    snaps[lv] = p
                    steps = s if steps is None else steps
            if not snaps:
                raise FileNotFoundError(f"{run.path}: no snapshots archived (set hierarchy.snapshot_interval)")
            n = min(len(v) for v in snaps.values())
            snaps = {lv: v[-n:] for lv, v in snaps.items()}
            rows = action_type_trace(snaps, steps[-n:], env, trace_games, seed)
            written.append(write_trace_csv(out_dir / f"trace_{run.seed}.csv", rows, digest))
            written.append(write_json(out_dir / f"trace_{run.seed}.json", suite, rows, digest))
    elif suite == "belief":
        results = {}
        for run in runs:
            _, snaps = run.snapshot_policies(belief_level)
            if not snaps:
                raise FileNotFoundError(f"{run.path}: no level-{belief_level} snapshots archived")
            final = run.policy(belief_level)
            results[run.run_id] = {
                "final": belief_cross_entropy([final], [final], env, belief_games, seed),
                "snapshot_set": belief_cross_entropy(snaps, [final], env, belief_games, seed),
            }
        written.append(write_json(out_dir / f"belief_L{belief_level}.json", suite, results, digest))
        for rid, r in results.items():
            print(f"{rid}\tCE_final={r['final'].cross_entropy:.4f}\tCE_snapshots={r['snapshot_set'].cross_entropy:.4f}")
    else:
        raise ValidationError(f"unknown suite {suite!r}")
    return written


def _expand_runs(items: Sequence[str]) -> list[Path]:
    out = []
    for item in items:
        p = Path(item)
        if (p / "manifest.json").exists() or p.name == "manifest.json":
            out.append(p)
        elif p.is_dir():
            found = sorted(p.glob("*/manifest.json"), key=lambda m: m.parent.name)
            if not found:
                raise FileNotFoundError(f"no manifest.json under {p}")
            out.extend(m.parent for m in found)
        else:
            raise FileNotFoundError(f"missing run directory: {p}")
    return out


def cmd_eval(args) -> int:
    runs = [load_run(p) for p in _expand_runs(args.runs)]
    suites = args.suite or list(runs[0].manifest["eval"]["suites"])
    ev = runs[0].manifest["eval"]
    out_dir = Path(args.out) if args.out else (runs[0].path / "reports" if len(runs) == 1
                                               else runs[0].path.parent / "reports")
    for suite in suites:
        for path in run_suite(
            suite, runs, out_dir,
            num_games=args.num_games or ev["num_games"],
            level=args.level,
            bots=args.bot or ev["bots"],
            seed=ev["seed"] if args.eval_seed is None else args.eval_seed,
            belief_games=args.num_games or ev["belief_games"],
            belief_level=args.level or ev["belief_level"],
            trace_games=args.num_games or ev["trace_games"],
            force=args.force,
        ):
            print(path)
    return EXIT_OK


# -- serve / export -------------------------------------------------------------


def cmd_serve(args) -> int:
    host, port = args.address.rsplit(":", 1)
    try:
        server = ModelServer((host, int(port)), levels=range(1, args.levels + 1), ring_size=args.ring_size)
    except OSError as exc:
        print(f"serve: cannot bind {args.address}: {exc}", file=sys.stderr)
        return EXIT_IO
    h, p = server.address
    print(f"serving on {h}:{p} levels=1..{args.levels} ring={args.ring_size}", flush=True)

    def stop(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, stop)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return EXIT_OK


def cmd_export_plots(args) -> int:
    """Long-format CSV (one row per step, level pair and action type) from trace reports."""
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows_written = 0
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["schema_version", "config_digest", "source", "step", "pair", "action_type", "fraction"])
        for src in args.traces:
            doc = read_json(src)
            if doc["kind"] != "trace":
                raise ValidationError(f"{src}: not a trace report (kind={doc['kind']!r})")
            for row in doc["data"]:
                for t, frac in zip(ACTION_TYPES, row["fractions"]):
                    w.writerow([doc["schema_version"], doc["config_digest"], Path(src).name, row["step"],
                                f"{row['lower_level']}->{row['upper_level']}", t, f"{frac:.6f}"])
                    rows_written += 1
    print(f"{out}\t{rows_written} rows")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors are validation errors, not argparse's default exit status 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="synklr", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a hierarchy for each configured seed")
    t.add_argument("--config", required=True, help="TOML file or shipped preset name")
    t.add_argument("--seed", type=int, action="append", help="override the config's seed list (repeatable)")
    t.add_argument("--output-dir", help="override output_dir")
    t.add_argument("--force", action="store_true", help="retrain even if a manifest exists")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate trained runs")
    e.add_argument("--runs", nargs="+", required=True, help="run dirs, manifests, or a parent of seed dirs")
    e.add_argument("--suite", action="append", choices=SUITES)
    e.add_argument("--bot", action="append", choices=sorted(BOT_CONVENTIONS))
    e.add_argument("--level", type=int)
    e.add_argument("--num-games", type=int)
    e.add_argument("--eval-seed", type=int)
    e.add_argument("--out", help="report directory")
    e.add_argument("--force", action="store_true", help="allow runs with different config digests")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("serve", help="run the policy store as a TCP server")
    s.add_argument("--address", default="127.0.0.1:7541")
    s.add_argument("--levels", type=int, default=6, help="register levels 1..N")
    s.add_argument("--ring-size", type=int, default=DEFAULT_RING)
    s.set_defaults(func=cmd_serve)

    x = sub.add_parser("export-plots", help="flatten action-type trace reports into plotting CSV")
    x.add_argument("traces", nargs="+", help="trace_*.json reports")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_plots)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help and usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValidationError, ConfigError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FileNotFoundError, PermissionError, IsADirectoryError, ConnectionError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
