"""Scikit-learn style front end: fit a proposal/selection pair, pack streams, adapt."""
from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .env import EnvConfig, run_episode
from .policy import Architecture, PolicyPair
from .training import FixedTasks, MetaConfig, TrainSchedule, adapt_online, two_phase_train
from .validation import check_container, check_heuristics, check_instances, check_k, check_mode, check_tasks


class ProposalSelectionPacker(BaseEstimator):
    """Online packer with a top-k proposal policy and a selection policy.

    ``fit`` takes the training distributions (a Dataset, a list of
    DistributionSpec, an ItemSet or item sizes); ``predict`` and ``score``
    take item streams.  ``adapt`` fine-tunes only the selection policy.
    """

    def __init__(
        self,
        container=(10, 10, 10),
        mode="discrete",
        k=3,
        heuristics=("ems",),
        max_candidates=None,
        hidden=32,
        layers=1,
        schedule="desk",
        pre_epochs=None,
        post_epochs=None,
        batches_per_epoch=None,
        batch_size=None,
        lr=0.3,
        tasks_per_batch=4,
        instances_per_task=4,
        adaptation_batches=None,
        use_maml=True,
        post_meta=True,
        episode_len=70,
        random_state=0,
    ):
        self.container = container
        self.mode = mode
        self.k = k
        self.heuristics = heuristics
        self.max_candidates = max_candidates
        self.hidden = hidden
        self.layers = layers
        self.schedule = schedule
        self.pre_epochs = pre_epochs
        self.post_epochs = post_epochs
        self.batches_per_epoch = batches_per_epoch
        self.batch_size = batch_size
        self.lr = lr
        self.tasks_per_batch = tasks_per_batch
        self.instances_per_task = instances_per_task
        self.adaptation_batches = adaptation_batches
        self.use_maml = use_maml
        self.post_meta = post_meta
        self.episode_len = episode_len
        self.random_state = random_state

    def _env_config(self) -> EnvConfig:
        return EnvConfig(
            container=check_container(self.container),
            mode=check_mode(self.mode),
            heuristics=check_heuristics(self.heuristics),
            max_candidates=self.max_candidates,
        )

    def _schedule(self) -> TrainSchedule:
        s = TrainSchedule.profile(self.schedule)
        over = {
            name: getattr(self, name)
            for name in ("pre_epochs", "post_epochs", "batches_per_epoch", "batch_size", "adaptation_batches")
            if getattr(self, name) is not None
        }
        return replace(s, post_lr=self.lr, adapt_lr=self.lr, episode_len=self.episode_len, **over)

    def fit(self, X, y=None, callback=None):
        config = self._env_config()
        k = check_k(self.k)
        tasks = check_tasks(X, seed=int(self.random_state))
        sampler = FixedTasks(tasks, config.mode, self.episode_len)
        meta = MetaConfig(self.lr, self.lr, self.tasks_per_batch, self.instances_per_task)
        arch = Architecture(hidden=self.hidden, layers=self.layers)
        self.pair_ = two_phase_train(
            sampler, self._schedule(), config, meta, k, arch, int(self.random_state),
            self.use_maml, self.post_meta, callback,
        )
        self.config_ = config
        self.n_tasks_ = len(tasks)
        return self

    @classmethod
    def from_pair(cls, pair: PolicyPair, **params) -> "ProposalSelectionPacker":
        est = cls(k=pair.k, **params)
        est.pair_ = pair
        est.config_ = est._env_config()
        return est

    def pack(self, X) -> list:
        """Greedy (argmax) episodes; one :class:`EpisodeResult` per stream."""
        check_is_fitted(self, "pair_")
        chooser = self.pair_.chooser("argmax")
        return [run_episode(x, self.config_, chooser, keep_trajectory=False) for x in check_instances(X)]

    def predict(self, X) -> list:
        """Packed box bounds ``(n_packed, 6)`` per stream."""
        return [r.packed for r in self.pack(X)]

    def score(self, X, y=None) -> float:
        """Mean utilisation over the streams."""
        return float(np.mean([r.uti for r in self.pack(X)]))

    def adapt(self, X, n_batches=None, batch_size=None, callback=None):
        """Fine-tune the selection policy on distributions ``X``; the proposal policy stays frozen."""
        check_is_fitted(self, "pair_")
        sch = self._schedule()
        n = sch.adaptation_batches if n_batches is None else int(n_batches)
        bs = sch.batch_size if batch_size is None else int(batch_size)
        tasks = check_tasks(X, seed=int(self.random_state))
        sampler = FixedTasks(tasks, self.config_.mode, self.episode_len)
        sel = adapt_online(self.pair_, sampler, n, bs, sch.adapt_lr, self.config_, int(self.random_state))
        self.pair_ = replace(self.pair_, selection=sel)
        return self
