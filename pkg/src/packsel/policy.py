"""Candidate features, the differentiable scorer, and the proposal/selection pair.

Both policies share one architecture: every candidate's feature vector goes
through the same scorer to a scalar logit and a softmax runs across
candidates.  The proposal policy keeps its top-k candidates; the selection
policy picks one of those.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._kernels import ems_after_stats_kernel, footprint_stats_kernel
from .geometry import EPS
from .spatial import support_fraction

FEATURES = (
    "x",
    "y",
    "z",
    "item_l",
    "item_w",
    "item_h",
    "fill_after",
    "support",
    "wasted_height",
    "max_height_after",
    "ems_count_after",
    "ems_volume_after",
    "bumpiness_delta",
)
N_FEATURES = len(FEATURES)
EMS_COUNT_SCALE = 100.0
CHECKPOINT_SCHEMA = "packsel.checkpoint/1"


def featurize_all(state, cands=None) -> np.ndarray:
    """Feature matrix ``(n_candidates, N_FEATURES)`` for the state's candidates.

    Lengths are divided by the matching container edge and volumes by the
    container volume.  ``wasted_height`` is the mean empty gap between the
    item's base and the heightmap under its footprint.
    """
    cands = state.candidates if cands is None else cands
    L, W, H = state.config.container
    V = state.config.volume
    pos, dims = cands.positions, cands.dims
    n = len(pos)
    f = np.empty((n, N_FEATURES))
    if n == 0:
        return f
    scale = np.array([L, W, H])
    f[:, 0:3] = pos / scale
    f[:, 3:6] = dims / scale
    vols = dims.prod(axis=1)
    f[:, 6] = (state.packed_volume + vols) / V
    f[:, 7] = support_fraction(state.packed, pos, dims)
    hm = state.heightmap
    tops = pos[:, 2] + dims[:, 2]
    gaps, bump = footprint_stats_kernel(hm.heights, hm.cell_ranges(pos, dims), tops, pos[:, 2].copy())
    f[:, 8] = gaps / H
    f[:, 9] = np.maximum(hm.max_height, tops) / H
    counts, ems_vol = ems_after_stats_kernel(np.ascontiguousarray(state.spaces), np.concatenate([pos, pos + dims], axis=1), EPS)
    f[:, 10] = counts / EMS_COUNT_SCALE
    f[:, 11] = ems_vol / V
    f[:, 12] = bump / (H * np.sqrt(hm.rx * hm.ry))
    return f


def featurize(state, cand) -> np.ndarray:
    """Feature vector of a single candidate (an index or a :class:`CandidateAction`)."""
    idx = cand if isinstance(cand, (int, np.integer)) else state.candidates.index(cand)
    return featurize_all(state)[idx]


# -- scorer -------------------------------------------------------------------


@dataclass(frozen=True)
class Architecture:
    """``layers=0`` is a linear scorer; ``layers=1`` one tanh hidden layer of ``hidden`` units."""

    n_features: int = N_FEATURES
    hidden: int = 32
    layers: int = 1

    def __post_init__(self):
        if self.layers not in (0, 1):
            raise ValueError("only linear (0) and one-hidden-layer (1) scorers are supported")

    @property
    def size(self) -> int:
        F, Hd = self.n_features, self.hidden
        if self.layers == 0:
            return F + 1
        return Hd * F + Hd + Hd + 1


@dataclass(frozen=True)
class PolicyParams:
    arch: Architecture
    theta: np.ndarray = field(compare=False)
    version: str = "v1"

    def __post_init__(self):
        th = np.array(self.theta, dtype=float).ravel()
        if len(th) != self.arch.size:
            raise ValueError(f"parameter vector has {len(th)} entries, architecture needs {self.arch.size}")
        if not np.all(np.isfinite(th)):
            raise ValueError("parameters must be finite")
        th.flags.writeable = False
        object.__setattr__(self, "theta", th)

    def replace(self, theta) -> "PolicyParams":
        return PolicyParams(self.arch, theta, self.version)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([self.arch.n_features, self.arch.hidden, self.arch.layers, self.version]).encode())
        h.update(np.ascontiguousarray(self.theta, dtype="<f8").tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "arch": {"n_features": self.arch.n_features, "hidden": self.arch.hidden, "layers": self.arch.layers},
            "version": self.version,
            "theta": self.theta.tolist(),
            "digest": self.digest(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyParams":
        p = cls(Architecture(**d["arch"]), np.array(d["theta"], dtype=float), d.get("version", "v1"))
        if "digest" in d and d["digest"] != p.digest():
            raise ValueError("checkpoint digest mismatch")
        return p


def init_params(arch: Architecture = Architecture(), rng=None, scale: float = 0.5) -> PolicyParams:
    """Random hidden layer, zero output layer: the initial policy is uniform."""
    if arch.layers == 0:
        return PolicyParams(arch, np.zeros(arch.size))
    rng = np.random.default_rng(rng)
    F, Hd = arch.n_features, arch.hidden
    W1 = rng.normal(0.0, scale / np.sqrt(F), size=(Hd, F))
    b1 = rng.normal(0.0, scale, size=Hd)
    return PolicyParams(arch, np.concatenate([W1.ravel(), b1, np.zeros(Hd), np.zeros(1)]))


def _unpack(params: PolicyParams):
    a, th = params.arch, params.theta
    F, Hd = a.n_features, a.hidden
    if a.layers == 0:
        return th[:F], th[F]
    W1 = th[: Hd * F].reshape(Hd, F)
    o = Hd * F
    return W1, th[o : o + Hd], th[o + Hd : o + 2 * Hd], th[o + 2 * Hd]


def logits(params: PolicyParams, feats: np.ndarray) -> np.ndarray:
    feats = np.atleast_2d(feats)
    if params.arch.layers == 0:
        w, b = _unpack(params)
        return feats @ w + b
    W1, b1, w2, b2 = _unpack(params)
    return np.tanh(feats @ W1.T + b1) @ w2 + b2


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max())
    return e / e.sum()


def score_and_softmax(params: PolicyParams, feats: np.ndarray) -> np.ndarray:
    if len(feats) == 0:
        raise ValueError("need at least one candidate")
    return softmax(logits(params, feats))


def log_prob(params: PolicyParams, feats: np.ndarray, chosen: int) -> float:
    z = logits(params, feats)
    m = z.max()
    return float(z[chosen] - m - np.log(np.exp(z - m).sum()))


def log_prob_grad(params: PolicyParams, feats: np.ndarray, chosen: int) -> np.ndarray:
    """Gradient of ``log softmax(logits)[chosen]`` with respect to ``params.theta``."""
    feats = np.atleast_2d(feats)
    n = len(feats)
    coef = -score_and_softmax(params, feats)
    coef[chosen] += 1.0  # d logp / d logit_i
    if n == 1:
        return np.zeros(params.arch.size)
    if params.arch.layers == 0:
        return np.concatenate([coef @ feats, [0.0]])
    W1, b1, w2, _ = _unpack(params)
    hid = np.tanh(feats @ W1.T + b1)  # (n, Hd)
    g_w2 = coef @ hid
    back = (coef[:, None] * w2[None, :]) * (1.0 - hid**2)  # (n, Hd)
    g_W1 = back.T @ feats
    g_b1 = back.sum(axis=0)
    return np.concatenate([g_W1.ravel(), g_b1, g_w2, [0.0]])


# -- proposal / selection -------------------------------------------------------


@dataclass
class ProposalSet:
    indices: np.ndarray  # into the candidate set, best first
    proposal_probs: np.ndarray  # proposal-policy probabilities over the full candidate set
    selection_probs: np.ndarray = None  # selection-policy probabilities over ``indices``

    def __len__(self):
        return len(self.indices)


def top_k(probs: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest probabilities; ties go to the earlier candidate."""
    k = max(1, min(int(k), len(probs)))
    return np.argsort(-np.asarray(probs), kind="stable")[:k]


def propose(params_p: PolicyParams, feats: np.ndarray, k: int) -> ProposalSet:
    probs = score_and_softmax(params_p, feats)
    return ProposalSet(top_k(probs, k), probs)


@dataclass
class LogProbRecord:
    """What a policy-gradient update needs about one decision.

    ``proposal_logp`` is the proposal policy's log-probability of the chosen
    candidate over the full candidate set (or over the proposal set when
    ``proposal_support == "proposal"``); ``selection_logp`` is the selection
    policy's log-probability within the proposal set.
    """

    feats: np.ndarray = field(repr=False)
    proposal: np.ndarray
    pick: int  # position inside ``proposal``
    proposal_logp: float
    selection_logp: float

    @property
    def chosen(self) -> int:
        return int(self.proposal[self.pick])

    def to_dict(self) -> dict:
        return {
            "proposal": [int(i) for i in self.proposal],
            "pick": self.pick,
            "chosen": self.chosen,
            "proposal_logp": self.proposal_logp,
            "selection_logp": self.selection_logp,
        }


def select(
    params_s: PolicyParams,
    feats: np.ndarray,
    proposal: ProposalSet,
    mode: str = "argmax",
    rng=None,
    proposal_support: str = "full",
) -> LogProbRecord:
    """Pick one candidate from the proposal set."""
    sub = feats[proposal.indices]
    probs = score_and_softmax(params_s, sub)
    proposal.selection_probs = probs
    if mode == "argmax":
        pick = int(np.argmax(probs))
    elif mode == "sample":
        rng = np.random.default_rng(rng)
        pick = int(min(np.searchsorted(np.cumsum(probs), rng.random(), side="right"), len(probs) - 1))
    else:
        raise ValueError(f"unknown selection mode {mode!r}")
    chosen = int(proposal.indices[pick])
    if proposal_support == "full":
        p_logp = float(np.log(proposal.proposal_probs[chosen]))
    else:
        pp = proposal.proposal_probs[proposal.indices]
        p_logp = float(np.log(pp[pick] / pp.sum()))
    return LogProbRecord(feats, proposal.indices, pick, p_logp, float(np.log(probs[pick])))


@dataclass
class PolicyPair:
    """Proposal and selection parameters; ``k=None`` lets selection see every candidate."""

    proposal: PolicyParams
    selection: PolicyParams
    k: int | None = 3
    proposal_support: str = "full"

    def chooser(self, mode: str = "argmax", rng=None):
        rng = np.random.default_rng(rng) if mode == "sample" else None

        def choose(state):
            feats = featurize_all(state)
            if self.k is None:
                # coupled policy: no proposal step, selection sees every candidate
                prop = ProposalSet(np.arange(len(feats)), np.full(len(feats), 1.0 / len(feats)))
            else:
                prop = propose(self.proposal, feats, self.k)
            rec = select(self.selection, feats, prop, mode, rng, self.proposal_support)
            return rec.chosen, rec

        return choose

    def save(self, path, extra: dict | None = None) -> str:
        payload = {
            "schema": CHECKPOINT_SCHEMA,
            "k": self.k,
            "proposal_support": self.proposal_support,
            "proposal": self.proposal.to_dict(),
            "selection": self.selection.to_dict(),
        }
        if extra:
            payload["meta"] = extra
        text = json.dumps(payload, sort_keys=True)
        Path(path).write_text(text)
        return hashlib.sha256(text.encode()).hexdigest()

    @classmethod
    def load(cls, path) -> "PolicyPair":
        d = json.loads(Path(path).read_text())
        if d.get("schema") != CHECKPOINT_SCHEMA:
            raise ValueError(f"unsupported checkpoint schema {d.get('schema')!r}")
        return cls(PolicyParams.from_dict(d["proposal"]), PolicyParams.from_dict(d["selection"]), d["k"], d.get("proposal_support", "full"))
