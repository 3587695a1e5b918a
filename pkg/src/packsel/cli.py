"""Command line: gen | train | adapt | eval | oracle | analyze.

Every command accepts ``--config FILE`` (YAML or JSON, keys named like the
long flags with dashes turned into underscores); explicit flags win over
the file.  A manifest written by an earlier run is itself a valid config, so
``packsel gen --config out/manifest.json`` repeats that run.

Exit status: 0 ok, 1 usage error, 2 runtime error.  On failure a JSON error
record goes to stderr and no partial outputs are left behind.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .env import EnvConfig, random_chooser, run_episode
from .instances import SUBSETS, Dataset, ItemSet, build_dataset, dataset_filename
from .policy import Architecture, PolicyPair
from .spatial import HEURISTICS
from .training import FixedTasks, MetaConfig, TaskSampler, TrainSchedule, adapt_online, two_phase_train

MANIFEST_SCHEMA = "packsel.manifest/1"
REPORT_SCHEMA = "packsel.report/1"
WORKERS_ENV = "PACKSEL_WORKERS"

log = logging.getLogger("packsel")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def git_blob_digest(data: bytes) -> str:
    """Content digest computed the way git hashes a blob."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def file_digest(path) -> str:
    return git_blob_digest(Path(path).read_bytes())


class Outputs:
    """Collects outputs as temp files and moves them into place only on success."""

    def __init__(self):
        self.pending = {}

    def path(self, final) -> Path:
        final = Path(final)
        final.parent.mkdir(parents=True, exist_ok=True)
        tmp = final.with_name(f".{final.name}.partial")
        self.pending[final] = tmp
        return tmp

    def write_text(self, final, text: str) -> Path:
        p = self.path(final)
        p.write_text(text)
        return p

    def commit(self) -> dict:
        digests = {}
        for final, tmp in self.pending.items():
            if tmp.exists():
                os.replace(tmp, final)
                digests[str(final)] = file_digest(final)
        self.pending.clear()
        return digests

    def discard(self):
        for tmp in self.pending.values():
            if tmp.exists():
                tmp.unlink()
        self.pending.clear()


# -- reports -------------------------------------------------------------------


@dataclass
class EvalRow:
    subset: str
    n: int
    uti: float  # percent
    uti_hw: float  # 95% half-width, percent
    num: float
    num_hw: float
    seeds: int = 1
    uti_base: float | None = None
    delta_uti: float | None = None


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA, "config": self.config, "rows": [asdict(r) for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["subset", "n", "uti_pct", "uti_hw", "num", "num_hw", "seeds", "uti_base_pct", "delta_uti_pct"])
        for r in self.rows:
            w.writerow([r.subset, r.n, _pct(r.uti), _pct(r.uti_hw), f"{r.num:.1f}", f"{r.num_hw:.1f}", r.seeds,
                        "" if r.uti_base is None else _pct(r.uti_base), "" if r.delta_uti is None else _pct(r.delta_uti)])
        return buf.getvalue()

    def to_text(self) -> str:
        head = f"{'subset':<12} {'n':>6} {'Uti(%)':>14} {'Num':>12}"
        adapt = any(r.delta_uti is not None for r in self.rows)
        if adapt:
            head += f" {'base(%)':>8} {'dUti(%)':>8}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            line = f"{r.subset:<12} {r.n:>6} {_pct(r.uti) + ' +/- ' + _pct(r.uti_hw):>14} {f'{r.num:.1f} +/- {r.num_hw:.1f}':>12}"
            if adapt:
                line += f" {_pct(r.uti_base):>8} {_pct(r.delta_uti):>8}"
            lines.append(line)
        return "\n".join(lines) + "\n"


def _pct(x) -> str:
    return f"{x:.1f}"


def _half_width(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(1.96 * a.std(ddof=1) / np.sqrt(len(a))) if len(a) > 1 else 0.0


def eval_row(name, utis, nums, seeds=1) -> EvalRow:
    utis = np.asarray(utis) * 100.0
    return EvalRow(name, len(utis), float(utis.mean()), _half_width(utis), float(np.mean(nums)), _half_width(nums), seeds)


# -- episode fan-out -------------------------------------------------------------


def _episode_job(args):
    items, config, pair, policy, seed = args
    if pair is None:
        chooser = random_chooser(np.random.default_rng(seed)) if policy == "random" else (lambda s: (0, None))
    else:
        chooser = pair.chooser("argmax")
    r = run_episode(items, config, chooser, keep_trajectory=False)
    return r.uti, r.num_packed


def workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{WORKERS_ENV} must be at least 1")
    return n


def run_episodes(instances, config, pair=None, policy="checkpoint", seed=0):
    """Mean-able per-episode (uti, num) in instance order, on a bounded worker pool."""
    jobs = [(np.asarray(i.items), config, pair, policy, [seed, j]) for j, i in enumerate(instances)]
    n = workers()
    if n == 1:
        res = [_episode_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as ex:
            res = list(ex.map(_episode_job, jobs, chunksize=max(1, len(jobs) // (4 * n))))
    return np.array([r[0] for r in res]), np.array([r[1] for r in res])


# -- config --------------------------------------------------------------------


def load_config(path) -> dict:
    if not Path(path).is_file():
        raise UsageError(f"config file {path} not found")
    text = Path(path).read_text()
    data = yaml.safe_load(text) if str(path).endswith((".yaml", ".yml")) else json.loads(text)
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a mapping")
    if data.get("schema") == MANIFEST_SCHEMA:
        data = data["config"]
    data = {k.replace("-", "_"): v for k, v in data.items()}
    for key in ("command", "config", "verbose"):
        data.pop(key, None)
    return data


def _env_config(a) -> EnvConfig:
    return EnvConfig(
        container=tuple(a.container),
        mode=a.mode,
        heuristics=tuple(a.heuristics),
        max_candidates=a.max_candidates,
        allow_rotation=a.allow_rotation,
        require_support=a.require_support,
    )


def _item_set(a) -> ItemSet:
    if a.values:
        return ItemSet("custom", tuple(a.values))
    return ItemSet.named(a.subset)


def _write_manifest(path, command, a, inputs, outputs_digests):
    cfg = {k: v for k, v in vars(a).items() if k not in ("func",)}
    cfg["command"] = command
    man = {
        "schema": MANIFEST_SCHEMA,
        "version": __version__,
        "command": command,
        "seed": getattr(a, "seed", None),
        "config": cfg,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": outputs_digests,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")


# -- commands ------------------------------------------------------------------


def cmd_gen(a, outs: Outputs):
    subsets = SUBSETS if a.subset == "all" else (a.subset,)
    modes = ("discrete", "continuous") if a.mode == "both" else (a.mode,)
    out_dir = Path(a.out)
    for s in subsets:
        iset = ItemSet("custom", tuple(a.values)) if a.values else None
        for m in modes:
            ds = build_dataset(s, m, a.seed, a.n_dists, a.n_instances, a.episode_len, iset, a.axis_independent)
            outs.write_text(out_dir / dataset_filename(s, m), ds.to_jsonl())
            log.info("generated %s/%s: %d instances", s, m, len(ds))
    return [], out_dir / "manifest.json"


def _trainer_log(outs, path):
    if not path:
        return None, None
    fh = open(outs.path(path), "w")

    def cb(entry):
        d = entry.to_dict() if hasattr(entry, "to_dict") else dict(entry)
        fh.write(json.dumps(d, sort_keys=True) + "\n")
        fh.flush()
        log.info("%s", d)

    return fh, cb


def cmd_train(a, outs: Outputs):
    config = _env_config(a)
    sch = replace(TrainSchedule.profile(a.profile), post_lr=a.lr, adapt_lr=a.lr, episode_len=a.episode_len)
    over = {k: getattr(a, k) for k in ("pre_epochs", "post_epochs", "batches_per_epoch", "batch_size") if getattr(a, k) is not None}
    sch = replace(sch, **over)
    meta = MetaConfig(a.lr, a.lr, a.tasks_per_batch, a.instances_per_task)
    sampler = TaskSampler(_item_set(a), config.mode, a.episode_len)
    k = None if a.k == 0 else a.k
    fh, cb = _trainer_log(outs, a.log)
    try:
        pair = two_phase_train(sampler, sch, config, meta, k, Architecture(hidden=a.hidden, layers=a.layers),
                               a.seed, not a.no_maml, not a.no_post_meta, cb)
    finally:
        if fh:
            fh.close()
    pair.save(outs.path(a.out), {"env": config.to_dict(), "schedule": asdict(sch), "seed": a.seed})
    return [], Path(a.out).with_suffix(".manifest.json")


def _load_dataset(path) -> Dataset:
    return Dataset.load(path)


def _report_outputs(outs, report: EvalReport, out):
    out = Path(out)
    outs.write_text(out.with_suffix(".json"), report.to_json())
    outs.write_text(out.with_suffix(".csv"), report.to_csv())
    outs.write_text(out.with_suffix(".txt"), report.to_text())
    sys.stdout.write(report.to_text())


def cmd_eval(a, outs: Outputs):
    pair = PolicyPair.load(a.checkpoint) if a.checkpoint else None
    rows = []
    for path in a.dataset:
        ds = _load_dataset(path)
        config = replace(_env_config(a), mode=ds.mode)
        utis, nums = run_episodes(list(ds), config, pair, a.policy, a.seed)
        rows.append(eval_row(ds.subset, utis, nums))
    report = EvalReport(rows, {"checkpoint": a.checkpoint, "policy": a.policy if pair is None else "checkpoint"})
    _report_outputs(outs, report, a.out)
    return [*a.dataset] + ([a.checkpoint] if a.checkpoint else []), Path(a.out).with_suffix(".manifest.json")


def cmd_adapt(a, outs: Outputs):
    pair = PolicyPair.load(a.checkpoint)
    ds = _load_dataset(a.dataset)
    config = replace(_env_config(a), mode=ds.mode)
    sampler = FixedTasks(ds.distributions, ds.mode, ds.episode_len)
    sel = adapt_online(pair, sampler, a.batches, a.batch_size, a.lr, config, a.seed)
    adapted = replace(pair, selection=sel)
    base_u, base_n = run_episodes(list(ds), config, pair)
    new_u, new_n = run_episodes(list(ds), config, adapted)
    row = eval_row(ds.subset, new_u, new_n)
    row.uti_base = float(np.mean(base_u) * 100)
    row.delta_uti = float(np.mean(new_u - base_u) * 100)
    out = Path(a.out)
    pair.save(outs.path(out.with_name(out.stem + ".before.json")))
    adapted.save(outs.path(out.with_name(out.stem + ".after.json")), {"adapted_on": str(a.dataset), "batches": a.batches})
    _report_outputs(outs, EvalReport([row], {"checkpoint": a.checkpoint, "batches": a.batches}), out)
    return [a.checkpoint, a.dataset], out.with_suffix(".manifest.json")


def _mcts_config(a, rollout=None):
    from .oracle import MctsConfig, lowest_top_chooser

    return MctsConfig(a.sims, a.c, a.futures, rollout or lowest_top_chooser, a.seed)


def _slice(ds: Dataset, n: int):
    pairs = [(inst, ds.distributions[inst.dist_index]) for inst in ds]
    return pairs[:n] if n else pairs


def cmd_oracle(a, outs: Outputs):
    from .oracle import distribution_sampler, mcts_episode

    ds = _load_dataset(a.dataset)
    config = replace(_env_config(a), mode=ds.mode)
    pair = PolicyPair.load(a.checkpoint) if a.checkpoint else None
    cfg = _mcts_config(a, pair.chooser("argmax") if pair is not None and a.policy_rollout else None)
    rows = []
    variants = [("mcts", None)]
    if pair is not None and pair.k is not None:
        variants.append((f"mcts-top{pair.k}", pair.proposal))
    for name, prop in variants:
        res = [mcts_episode(inst, config, distribution_sampler(d, ds.mode), cfg, prop, pair.k if pair else 3)
               for inst, d in _slice(ds, a.instances)]
        rows.append(eval_row(f"{ds.subset}:{name}", [r.uti for r in res], [r.num_packed for r in res]))
    _report_outputs(outs, EvalReport(rows, {"sims": a.sims, "futures": a.futures}), a.out)
    return [a.dataset] + ([a.checkpoint] if a.checkpoint else []), Path(a.out).with_suffix(".manifest.json")


def cmd_analyze(a, outs: Outputs):
    from .oracle import collect_decisions, distribution_sampler, inclusion_rate, mcts_decide, policy_induced_vs_optimal
    from .oracle import write_inclusion_csv, write_rank_curves_csv

    ds = _load_dataset(a.dataset)
    config = replace(_env_config(a), mode=ds.mode)
    pair = PolicyPair.load(a.checkpoint)
    sl = _slice(ds, a.instances)
    decisions = collect_decisions(pair, [i for i, _ in sl], config, [distribution_sampler(d, ds.mode) for _, d in sl], a.every)
    if a.decisions:
        decisions = decisions[: a.decisions]
    cfg = _mcts_config(a)
    ks = [None if k == "all" else int(k) for k in a.ks]
    rates = inclusion_rate(pair.proposal, decisions, ks, cfg)
    tables = [mcts_decide(d.state, d.sampler, cfg)[1] for d in decisions]
    pc, oc = policy_induced_vs_optimal(pair.proposal, decisions, cfg, tables)
    out = Path(a.out)
    write_inclusion_csv(outs.path(out / "inclusion.csv"), rates, ds.subset)
    write_rank_curves_csv(outs.path(out / "rank_curves.csv"), pc, oc)
    for k, v in rates.items():
        print(f"k={'all' if k is None else k}: {v:.3f}")
    return [a.dataset, a.checkpoint], out / "manifest.json"


# -- parser --------------------------------------------------------------------


def _env_flags(p):
    p.add_argument("--container", type=float, nargs=3, default=[20.0, 20.0, 20.0])
    p.add_argument("--mode", default="discrete", choices=["discrete", "continuous"])
    p.add_argument("--heuristics", nargs="+", default=["ems"], choices=list(HEURISTICS))
    p.add_argument("--max-candidates", type=int, default=None)
    p.add_argument("--allow-rotation", action="store_true")
    p.add_argument("--require-support", type=float, default=0.0)


def _oracle_flags(p):
    p.add_argument("--sims", type=int, default=2000)
    p.add_argument("--c", type=float, default=2.0**0.5)
    p.add_argument("--futures", type=int, default=64)
    p.add_argument("--instances", type=int, default=0, help="first N instances only (0 = all)")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="packsel", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate datasets")
    g.add_argument("--subset", default="Default", choices=[*SUBSETS, "all"])
    g.add_argument("--values", type=float, nargs="+", help="custom per-axis item sizes instead of a named set")
    g.add_argument("--mode", default="discrete", choices=["discrete", "continuous", "both"])
    g.add_argument("--n-dists", type=int, default=100)
    g.add_argument("--n-instances", type=int, default=64)
    g.add_argument("--episode-len", type=int, default=70)
    g.add_argument("--axis-independent", action="store_true")
    g.add_argument("--out", default="data")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="two-phase training of a proposal/selection pair")
    _env_flags(t)
    t.add_argument("--subset", default="Default", choices=list(SUBSETS))
    t.add_argument("--values", type=float, nargs="+")
    t.add_argument("--profile", default="desk", choices=["desk", "full"])
    t.add_argument("--k", type=int, default=3, help="proposal size; 0 trains the coupled policy")
    t.add_argument("--hidden", type=int, default=32)
    t.add_argument("--layers", type=int, default=1, choices=[0, 1])
    t.add_argument("--lr", type=float, default=0.3)
    t.add_argument("--pre-epochs", type=int)
    t.add_argument("--post-epochs", type=int)
    t.add_argument("--batches-per-epoch", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--tasks-per-batch", type=int, default=4)
    t.add_argument("--instances-per-task", type=int, default=4)
    t.add_argument("--episode-len", type=int, default=70)
    t.add_argument("--no-maml", action="store_true")
    t.add_argument("--no-post-meta", action="store_true")
    t.add_argument("--log", default=None, help="JSON-lines training log")
    t.add_argument("--out", default="checkpoint.json")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    ad = sub.add_parser("adapt", help="fine-tune the selection policy on a dataset's distributions")
    _env_flags(ad)
    ad.add_argument("--checkpoint", required=True)
    ad.add_argument("--dataset", required=True)
    ad.add_argument("--batches", type=int, default=50)
    ad.add_argument("--batch-size", type=int, default=16)
    ad.add_argument("--lr", type=float, default=0.3)
    ad.add_argument("--out", default="adapt")
    ad.add_argument("--seed", type=int, default=0)
    ad.set_defaults(func=cmd_adapt)

    e = sub.add_parser("eval", help="evaluate a checkpoint (argmax) or a baseline")
    _env_flags(e)
    e.add_argument("--checkpoint")
    e.add_argument("--policy", default="random", choices=["random", "first"], help="baseline when no checkpoint is given")
    e.add_argument("--dataset", nargs="+", required=True)
    e.add_argument("--out", default="report")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("oracle", help="play episodes with tree search, unrestricted and top-k restricted")
    _env_flags(o)
    _oracle_flags(o)
    o.add_argument("--dataset", required=True)
    o.add_argument("--checkpoint")
    o.add_argument("--policy-rollout", action="store_true", help="roll out with the checkpoint instead of the heuristic")
    o.add_argument("--out", default="oracle")
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_oracle)

    an = sub.add_parser("analyze", help="inclusion rates and rank curves against the search oracle")
    _env_flags(an)
    _oracle_flags(an)
    an.add_argument("--dataset", required=True)
    an.add_argument("--checkpoint", required=True)
    an.add_argument("--ks", nargs="+", default=["1", "2", "3", "5", "all"])
    an.add_argument("--decisions", type=int, default=0, help="cap on decision points (0 = all)")
    an.add_argument("--every", type=int, default=1)
    an.add_argument("--out", default="analysis")
    an.add_argument("--seed", type=int, default=0)
    an.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    outs = Outputs()
    command = None
    try:
        argv_wo = []
        cfg_path = None
        i = 0
        while i < len(argv):
            if argv[i] == "--config" and i + 1 < len(argv):
                cfg_path = argv[i + 1]
                i += 2
                continue
            if argv[i].startswith("--config="):
                cfg_path = argv[i].split("=", 1)[1]
                i += 1
                continue
            argv_wo.append(argv[i])
            i += 1
        p = build_parser()
        if cfg_path:
            cfg = load_config(cfg_path)
            choices = p._subparsers._group_actions[0].choices
            name = next((x for x in argv_wo if x in choices), None)
            if name is None:
                raise UsageError("a command is required before --config")
            sp = choices[name]
            valid = {act.dest for act in sp._actions}
            unknown = sorted(set(cfg) - valid)
            if unknown:
                raise UsageError(f"unknown config keys: {', '.join(unknown)}")
            for act in sp._actions:
                if act.dest in cfg:
                    act.required = False
            sp.set_defaults(**cfg)
        a = p.parse_args(argv_wo)
        command = a.command
        logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        workers()
        inputs, manifest = a.func(a, outs)
        for path in inputs:
            if not Path(path).exists():
                raise FileNotFoundError(path)
        digests = outs.commit()
        _write_manifest(manifest, command, a, inputs, digests)
        return 0
    except UsageError as exc:
        outs.discard()
        _error_record("usage", exc, command)
        return 1
    except SystemExit as exc:  # --help / --version
        outs.discard()
        return int(exc.code or 0)
    except BaseException as exc:  # noqa: BLE001 - every failure must leave a record and no partial files
        outs.discard()
        _error_record("runtime", exc, command)
        return 2


def _error_record(kind, exc, command):
    rec = {"error": kind, "type": type(exc).__name__, "message": str(exc), "command": command}
    sys.stderr.write(json.dumps(rec) + "\n")


if __name__ == "__main__":
    sys.exit(main())
