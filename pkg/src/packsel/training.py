"""Policy-gradient training: baselines, first-order MAML pre-training,
decoupled post-training of the proposal/selection pair, and selection-only
online adaptation.

All losses are the usual surrogate ``-mean_episodes sum_t A_t log pi(a_t|s_t)``;
the functions here return gradients of that loss, so every update is a
descent step ``theta <- theta - lr * grad``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .env import EnvConfig, run_episode
from .instances import DistributionSpec, ItemSet, sample_distribution
from .policy import LogProbRecord, PolicyPair, PolicyParams, log_prob_grad

log = logging.getLogger(__name__)

ROLES = ("proposal", "selection")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class MetaConfig:
    inner_lr: float = 0.3
    outer_lr: float = 0.3
    tasks_per_batch: int = 4
    instances_per_task: int = 4
    inner_steps: int = 1

    def __post_init__(self):
        if self.inner_lr < 0 or self.outer_lr < 0:
            raise ValueError("step sizes must be non-negative")


@dataclass(frozen=True)
class TrainSchedule:
    pre_epochs: int = 25
    post_epochs: int = 5
    batches_per_epoch: int = 20
    batch_size: int = 16
    adaptation_batches: int = 50
    post_lr: float = 0.3
    adapt_lr: float = 0.3
    episode_len: int = 70

    def __post_init__(self):
        for name in ("pre_epochs", "post_epochs", "batches_per_epoch", "batch_size", "adaptation_batches"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def profile(cls, name: str) -> "TrainSchedule":
        if name == "desk":
            return cls()
        if name == "full":
            return cls(pre_epochs=250, post_epochs=50, batches_per_epoch=200, batch_size=64, adaptation_batches=200)
        raise ValueError(f"unknown schedule profile {name!r}")


@dataclass
class Trajectory:
    records: list  # LogProbRecord per step
    step_returns: np.ndarray  # return-to-go at each step
    uti: float
    num_packed: int
    advantages: np.ndarray = None

    @property
    def ret(self) -> float:
        return self.uti


class EMABaseline:
    """Exponential moving average of returns, updated once per episode.

    With ``per_step`` a separate average is kept for every step index, which
    is what dense (reward-to-go) returns need.
    """

    def __init__(self, decay: float = 0.99, per_step: bool = False):
        self.decay = decay
        self.per_step = per_step
        self.value = None

    def __call__(self, traj: Trajectory) -> np.ndarray:
        n = len(traj.step_returns)
        if self.value is None:
            return np.zeros(n)
        if not self.per_step:
            return np.full(n, self.value)
        v = self.value
        return v[np.minimum(np.arange(n), len(v) - 1)]

    def update(self, traj: Trajectory):
        r = traj.step_returns
        if not self.per_step:
            x = float(r[0]) if len(r) else traj.uti
            self.value = x if self.value is None else self.decay * self.value + (1 - self.decay) * x
            return
        if self.value is None:
            self.value = np.array(r, dtype=float) if len(r) else np.zeros(1)
            return
        if len(r) > len(self.value):
            self.value = np.concatenate([self.value, np.full(len(r) - len(self.value), self.value[-1])])
        self.value[: len(r)] = self.decay * self.value[: len(r)] + (1 - self.decay) * r


class BatchMeanBaseline:
    """Mean return of the current batch (leave-nothing-out); stateless."""

    def fit(self, trajs):
        self.value = float(np.mean([t.uti for t in trajs])) if trajs else 0.0

    def __call__(self, traj):
        return np.full(len(traj.step_returns), self.value)

    def update(self, traj):
        pass


def assign_advantages(trajs: Sequence[Trajectory], baseline) -> None:
    """Set ``traj.advantages`` from the current baseline, then fold the batch into it."""
    if hasattr(baseline, "fit"):
        baseline.fit(trajs)
    elif getattr(baseline, "value", 0) is None and trajs:
        # first batch seeds the average so early advantages are centred
        first = Trajectory([], np.array([np.mean([t.step_returns[0] if len(t.step_returns) else t.uti for t in trajs])]), 0.0, 0)
        baseline.update(first)
    for t in trajs:
        t.advantages = t.step_returns - baseline(t)
    for t in trajs:
        baseline.update(t)


def rollout_batch(
    pair: PolicyPair,
    instances: Sequence,
    config: EnvConfig,
    seed: int,
    mode: str = "sample",
) -> list[Trajectory]:
    """One episode per instance; each episode draws from its own ``(seed, index)`` stream."""
    out = []
    for i, inst in enumerate(instances):
        chooser = pair.chooser(mode, np.random.default_rng([seed, i]))
        res = run_episode(inst, config, chooser)
        recs = [s.info for s in res.trajectory]
        if config.dense_reward:
            before = np.array([s.summary["uti"] for s in res.trajectory])
            rets = res.uti - before
        else:
            rets = np.full(len(recs), res.uti)
        out.append(Trajectory(recs, rets, res.uti, res.num_packed))
    return out


def _role_grad_terms(rec: LogProbRecord, role: str, proposal_support: str):
    if role == "proposal":
        if proposal_support == "full":
            return rec.feats, rec.chosen
        return rec.feats[rec.proposal], rec.pick
    if role == "selection":
        return rec.feats[rec.proposal], rec.pick
    raise ValueError(f"unknown role {role!r}")


def policy_gradient(params: PolicyParams, trajs: Sequence[Trajectory], role: str, proposal_support: str = "full") -> np.ndarray:
    """Gradient of the surrogate loss ``-mean sum_t A_t log pi(a_t)`` for one role."""
    g = np.zeros(params.arch.size)
    if not trajs:
        return g
    for traj in trajs:
        if traj.advantages is None:
            raise ValueError("trajectory has no advantages; call assign_advantages first")
        for rec, adv in zip(traj.records, traj.advantages):
            if adv == 0.0:
                continue
            feats, idx = _role_grad_terms(rec, role, proposal_support)
            if len(feats) < 2:
                continue
            g -= adv * log_prob_grad(params, feats, idx)
    g /= len(trajs)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError(f"non-finite {role} gradient (norm {np.linalg.norm(g)})")
    return g


def policy_gradient_update(
    params: PolicyParams,
    trajs: Sequence[Trajectory],
    role: str,
    lr: float,
    baseline=None,
    proposal_support: str = "full",
) -> PolicyParams:
    """One descent step on the role's surrogate loss.

    If ``baseline`` is given, advantages are (re)computed from it first.
    """
    if baseline is not None:
        assign_advantages(trajs, baseline)
    g = policy_gradient(params, trajs, role, proposal_support)
    return params.replace(params.theta - lr * g)


# -- task sampling -------------------------------------------------------------


class TaskSampler:
    """Fresh item distributions from an item set and fresh instances from a distribution."""

    def __init__(self, item_set: ItemSet, mode: str = "discrete", episode_len: int = 70, axis_independent: bool = False):
        self.item_set = item_set
        self.mode = mode
        self.episode_len = episode_len
        self.axis_independent = axis_independent

    def tasks(self, rng: np.random.Generator, n: int) -> list[DistributionSpec]:
        seeds = rng.integers(0, 2**31 - 1, size=n)
        return [sample_distribution(self.item_set, int(s), 0, self.axis_independent) for s in seeds]

    def instances(self, task: DistributionSpec, rng: np.random.Generator, n: int) -> list[np.ndarray]:
        return [task.sample_items(rng, self.episode_len, self.mode) for _ in range(n)]


class FixedTasks(TaskSampler):
    """Sampler cycling over a fixed list of distributions (e.g. a test subset)."""

    def __init__(self, tasks: Sequence[DistributionSpec], mode: str = "discrete", episode_len: int = 70):
        super().__init__(tasks[0].item_set, mode, episode_len)
        self.pool = list(tasks)

    def tasks(self, rng, n):
        return [self.pool[i] for i in rng.integers(0, len(self.pool), size=n)]


# -- MAML ----------------------------------------------------------------------


def inner_step(theta: np.ndarray, grad: np.ndarray, alpha: float) -> np.ndarray:
    """``theta' = theta - alpha * grad``."""
    return theta - alpha * grad


def fomaml_step(theta: np.ndarray, tasks: Sequence, task_grad: Callable, alpha: float, beta: float, inner_steps: int = 1):
    """One first-order MAML meta-iteration.

    ``task_grad(theta, task, phase)`` returns ``(loss gradient, stats)`` with
    ``phase`` in ``{"inner", "outer"}``.  The outer gradient is evaluated at
    the adapted parameters and applied to ``theta`` without differentiating
    through the inner step.
    """
    outer = np.zeros_like(theta)
    stats = []
    for task in tasks:
        th = theta
        for _ in range(inner_steps):
            g, _ = task_grad(th, task, "inner")
            th = inner_step(th, g, alpha)
        g, st = task_grad(th, task, "outer")
        outer += g
        stats.append(st)
    return theta - beta * outer, stats


@dataclass
class EpochLog:
    phase: str
    epoch: int
    mean_uti: float
    mean_num: float
    loss: float
    grad_norm: float
    wall: float
    role: str = ""

    def to_dict(self):
        return asdict(self)


class _PackingTask:
    """Rollouts + gradient for one role of a policy pair on a sampled distribution."""

    def __init__(self, pair, role, config, sampler, rng, batch, baseline=None, proposal_support="full"):
        self.pair, self.role, self.config = pair, role, config
        self.sampler, self.rng, self.batch = sampler, rng, batch
        self.baseline = baseline
        self.proposal_support = proposal_support
        self.task_baselines = {}

    def baseline_for(self, task):
        """The shared baseline if one was given, else a separate EMA per task.

        Returns of different item distributions sit at different levels, so a
        shared average would mostly measure which task was drawn.
        """
        if self.baseline is not None:
            return self.baseline
        key = (task.item_set, task.seed, task.index, task.probs.tobytes())
        if key not in self.task_baselines:
            self.task_baselines[key] = EMABaseline(per_step=self.config.dense_reward)
        return self.task_baselines[key]

    def pair_with(self, theta):
        if self.role == "proposal":
            return replace(self.pair, proposal=self.pair.proposal.replace(theta))
        return replace(self.pair, selection=self.pair.selection.replace(theta))

    def __call__(self, theta, task, phase):
        pair = self.pair_with(theta)
        insts = self.sampler.instances(task, self.rng, self.batch)
        trajs = rollout_batch(pair, insts, self.config, int(self.rng.integers(2**31 - 1)))
        assign_advantages(trajs, self.baseline_for(task))
        params = pair.proposal if self.role == "proposal" else pair.selection
        g = policy_gradient(params, trajs, self.role, self.proposal_support)
        uti = [t.uti for t in trajs]
        stats = {
            "uti": float(np.mean(uti)),
            "num": float(np.mean([t.num_packed for t in trajs])),
            "loss": float(-np.mean([np.sum(t.advantages) for t in trajs])),
            "grad_norm": float(np.linalg.norm(g)),
        }
        return g, stats


class _DivergenceGuard:
    def __init__(self, ratio=0.1, patience=20):
        self.ratio, self.patience = ratio, patience
        self.peak = -np.inf
        self.bad = 0

    def __call__(self, value):
        self.peak = max(self.peak, value)
        self.bad = self.bad + 1 if value < self.ratio * self.peak else 0
        if self.bad >= self.patience:
            raise TrainingDiverged(
                f"mean return {value:.4f} below {self.ratio:.0%} of peak {self.peak:.4f} for {self.bad} iterations"
            )


def _summarise(phase, epoch, stats, t0, role=""):
    return EpochLog(
        phase,
        epoch,
        float(np.mean([s["uti"] for s in stats])) if stats else 0.0,
        float(np.mean([s["num"] for s in stats])) if stats else 0.0,
        float(np.mean([s["loss"] for s in stats])) if stats else 0.0,
        float(np.mean([s["grad_norm"] for s in stats])) if stats else 0.0,
        time.time() - t0,
        role,
    )


def maml_pretrain(
    init: PolicyParams,
    sampler: TaskSampler,
    meta: MetaConfig,
    schedule: TrainSchedule,
    config: EnvConfig,
    seed: int = 0,
    callback: Callable[[EpochLog], None] | None = None,
    baseline=None,
) -> PolicyParams:
    """Meta-train a single policy over all candidates, each item distribution being a task."""
    rng = np.random.default_rng([seed, 1])
    pair = PolicyPair(init, init, k=None)
    task = _PackingTask(pair, "selection", config, sampler, rng, meta.instances_per_task, baseline)
    theta = init.theta.copy()
    guard = _DivergenceGuard()
    for epoch in range(schedule.pre_epochs):
        t0 = time.time()
        stats = []
        for _ in range(schedule.batches_per_epoch):
            tasks = sampler.tasks(rng, meta.tasks_per_batch)
            theta, st = fomaml_step(theta, tasks, task, meta.inner_lr, meta.outer_lr, meta.inner_steps)
            if not np.all(np.isfinite(theta)):
                raise FloatingPointError("non-finite parameters after meta update")
            stats.extend(st)
            guard(np.mean([s["uti"] for s in st]))
        entry = _summarise("pretrain", epoch, stats, t0)
        log.info("pretrain epoch %d: uti %.4f", epoch, entry.mean_uti)
        if callback:
            callback(entry)
    return init.replace(theta)


def plain_pretrain(
    init: PolicyParams,
    sampler: TaskSampler,
    meta: MetaConfig,
    schedule: TrainSchedule,
    config: EnvConfig,
    seed: int = 0,
    callback=None,
    baseline=None,
) -> PolicyParams:
    """Non-meta pre-training on the same budget as :func:`maml_pretrain`.

    Each batch uses as many episodes per task as one meta-iteration does
    (inner plus outer rollouts) and makes a single update with step size
    ``meta.outer_lr``, so both runs see equal episodes and equal updates.
    """
    rng = np.random.default_rng([seed, 1])
    pair = PolicyPair(init, init, k=None)
    per_task = meta.instances_per_task * (meta.inner_steps + 1)
    task = _PackingTask(pair, "selection", config, sampler, rng, per_task, baseline)
    theta = init.theta.copy()
    for epoch in range(schedule.pre_epochs):
        t0 = time.time()
        stats = []
        for _ in range(schedule.batches_per_epoch):
            g = np.zeros_like(theta)
            for tk in sampler.tasks(rng, meta.tasks_per_batch):
                gi, st = task(theta, tk, "outer")
                g += gi
                stats.append(st)
            theta = theta - meta.outer_lr * g
        if callback:
            callback(_summarise("pretrain-plain", epoch, stats, t0))
    return init.replace(theta)


def post_train(
    pair: PolicyPair,
    sampler: TaskSampler,
    schedule: TrainSchedule,
    config: EnvConfig,
    seed: int = 0,
    meta: MetaConfig | None = None,
    callback=None,
) -> PolicyPair:
    """Decoupled fine-tuning; batches alternate between the proposal and the selection role.

    The proposal role learns from actions the selection policy picked inside
    the proposal set; the selection role only ever explores that set.  With
    ``meta`` the same first-order MAML wrapper runs around each role update.
    """
    rng = np.random.default_rng([seed, 2])
    baselines = {r: EMABaseline(per_step=config.dense_reward) for r in ROLES}
    b = 0
    for epoch in range(schedule.post_epochs):
        t0 = time.time()
        stats = []
        for _ in range(schedule.batches_per_epoch):
            role = ROLES[b % 2]
            b += 1
            params = pair.proposal if role == "proposal" else pair.selection
            if meta is not None:
                task = _PackingTask(pair, role, config, sampler, rng, meta.instances_per_task, baselines[role], pair.proposal_support)
                tasks = sampler.tasks(rng, meta.tasks_per_batch)
                theta, st = fomaml_step(params.theta, tasks, task, meta.inner_lr, schedule.post_lr, meta.inner_steps)
            else:
                per = max(schedule.batch_size // 4, 1)
                task = _PackingTask(pair, role, config, sampler, rng, per, baselines[role], pair.proposal_support)
                g = np.zeros(params.arch.size)
                st = []
                for tk in sampler.tasks(rng, max(schedule.batch_size // per, 1)):
                    gi, s = task(params.theta, tk, "outer")
                    g += gi
                    st.append(s)
                theta = params.theta - schedule.post_lr * g
            stats.extend(st)
            new = params.replace(theta)
            pair = replace(pair, proposal=new) if role == "proposal" else replace(pair, selection=new)
        if callback:
            callback(_summarise("posttrain", epoch, stats, t0))
    return pair


def adapt_online(
    pair: PolicyPair,
    sampler: TaskSampler,
    n_batches: int,
    batch_size: int,
    lr: float,
    config: EnvConfig,
    seed: int = 0,
    callback=None,
) -> PolicyParams:
    """Fine-tune only the selection policy on instances from the test distributions.

    Exactly ``n_batches`` updates are applied; the proposal parameters are
    never touched.
    """
    rng = np.random.default_rng([seed, 3])
    baseline = EMABaseline(per_step=config.dense_reward)
    sel = pair.selection
    for b in range(n_batches):
        cur = replace(pair, selection=sel)
        tasks = sampler.tasks(rng, batch_size)
        insts = [sampler.instances(t, rng, 1)[0] for t in tasks]
        trajs = rollout_batch(cur, insts, config, int(rng.integers(2**31 - 1)))
        sel = policy_gradient_update(sel, trajs, "selection", lr, baseline)
        if callback:
            callback({"batch": b, "mean_uti": float(np.mean([t.uti for t in trajs]))})
    return sel


def evaluate(pair: PolicyPair, instances: Sequence, config: EnvConfig) -> dict:
    """Greedy (argmax) episodes; mean utilisation and packed count."""
    utis, nums = [], []
    chooser = pair.chooser("argmax")
    for inst in instances:
        r = run_episode(inst, config, chooser, keep_trajectory=False)
        utis.append(r.uti)
        nums.append(r.num_packed)
    return {"uti": float(np.mean(utis)), "num": float(np.mean(nums)), "utis": np.array(utis), "nums": np.array(nums)}


def two_phase_train(
    sampler: TaskSampler,
    schedule: TrainSchedule,
    config: EnvConfig,
    meta: MetaConfig = MetaConfig(),
    k: int | None = 3,
    arch=None,
    seed: int = 0,
    use_maml: bool = True,
    post_meta: bool = True,
    callback=None,
) -> PolicyPair:
    """Pre-train one policy, copy it into both roles, then post-train the pair."""
    from .policy import Architecture, init_params

    init = init_params(arch or Architecture(), np.random.default_rng([seed, 0]))
    pre = maml_pretrain if use_maml else plain_pretrain
    theta = pre(init, sampler, meta, schedule, config, seed, callback)
    pair = PolicyPair(theta, theta, k)
    return post_train(pair, sampler, schedule, config, seed, meta if post_meta else None, callback)
