"""Training a whole reasoning hierarchy: sequential KLR, synchronous KLR / CH,
and synchronous KLR with a co-trained best response (SyKLRBR).

Synchronous training runs in lockstep rounds. Round ``r`` (1-based) has every
client fetch its partner set at exactly version ``r``, train ``server_update``
gradient steps, then push version ``r + 1``. Version 1 is each client's
initial policy. Exact-version fetches make the run a pure function of the
spec and seed, whether clients are threads or processes on the socket server.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import multiprocessing
import pickle
import random
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from .env_core import EnvInterface
from .hanabi import PRESETS, HanabiConfig, HanabiEnv
from .learner import (
    GreedyQPolicy,
    LearnerConfig,
    Policy,
    QFunction,
    QLearner,
    UniformRandomPolicy,
    qfunction_from_bytes,
)
from .matrix_games import MatrixGameEnv, lever_game, load_matrix_game, verification_suite
from .model_server import VIRTUAL_LEVEL, ModelServer, ModelStore, RemoteStore
from .partners import (
    DEFAULT_LAMBDA,
    KLR,
    PARTNER_RULES,
    SYKLRBR,
    PartnerDistribution,
    partner_levels,
    poisson_partner_weights,
)

log = logging.getLogger(__name__)

SEQUENTIAL, SYNCHRONOUS = "sequential", "synchronous"
SCHEMAS = (SEQUENTIAL, SYNCHRONOUS)
THREAD, SOCKET = "thread", "socket"

__all__ = [
    "HierarchySpec", "HierarchyResult", "LevelClient", "SpecError", "build_env", "entropy",
    "greedy_policy", "load_policy", "mixture_entropy_gap", "poisson_partner_weights",
    "policy_distribution", "run_hierarchy", "snapshot_schedule", "train_sequential",
    "train_synchronous",
]


class SpecError(ValueError):
    pass


def _derive_seed(*parts: int) -> int:
    h = hashlib.blake2b(struct.pack(f"<{len(parts)}q", *parts), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


@dataclass(frozen=True)
class HierarchySpec:
    num_levels: int
    schema: str = SYNCHRONOUS
    partner_rule: str = KLR
    lam: Optional[float] = None
    budget: int = 1000
    server_update: int = 50
    seeds: tuple[int, ...] = (0,)
    env: str = "hanabi-mini"
    env_overrides: Mapping[str, Any] = field(default_factory=dict)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    snapshot_interval: int = 0
    mode: str = THREAD

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "env_overrides", dict(self.env_overrides))
        if self.num_levels < 1:
            raise SpecError("num_levels must be >= 1")
        if self.schema not in SCHEMAS:
            raise SpecError(f"schema must be one of {SCHEMAS}, got {self.schema!r}")
        if self.partner_rule not in PARTNER_RULES:
            raise SpecError(f"partner_rule must be one of {PARTNER_RULES}, got {self.partner_rule!r}")
        if self.schema == SEQUENTIAL and self.partner_rule == SYKLRBR:
            raise SpecError("syklrbr requires the synchronous schema: its best response is co-trained with the levels")
        if self.lam is None and self.partner_rule in DEFAULT_LAMBDA:
            object.__setattr__(self, "lam", DEFAULT_LAMBDA[self.partner_rule])
        if self.lam is not None and self.lam <= 0:
            raise SpecError("lam must be positive")
        if self.budget < 0:
            raise SpecError("budget must be >= 0")
        if self.server_update < 1:
            raise SpecError("server_update must be >= 1")
        if self.schema == SYNCHRONOUS and self.budget % self.server_update:
            raise SpecError("synchronous budget must be a multiple of server_update")
        if self.snapshot_interval < 0:
            raise SpecError("snapshot_interval must be >= 0")
        if self.mode not in (THREAD, SOCKET):
            raise SpecError(f"mode must be {THREAD!r} or {SOCKET!r}")
        if not self.seeds:
            raise SpecError("at least one seed is required")

    @property
    def has_br(self) -> bool:
        return self.partner_rule == SYKLRBR

    @property
    def br_level(self) -> int:
        return self.num_levels + 1

    @property
    def trained_levels(self) -> list[int]:
        levels = list(range(1, self.num_levels + 1))
        return levels + [self.br_level] if self.has_br else levels

    def partner_distribution(self, level: int) -> PartnerDistribution:
        if self.has_br and level == self.br_level:
            return poisson_partner_weights(SYKLRBR, level, self.num_levels, self.lam)
        rule = KLR if self.partner_rule == SYKLRBR else self.partner_rule
        return poisson_partner_weights(rule, level, self.num_levels, self.lam)

    def partner_set(self, level: int) -> list[int]:
        return partner_levels(self.partner_rule, level, self.num_levels)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        d["learner"] = self.learner.to_dict()
        return d

    def digest(self, exclude_seeds: bool = True) -> str:
        d = self.to_dict()
        d.pop("mode")
        if exclude_seeds:
            d.pop("seeds")
        return hashlib.blake2b(json.dumps(d, sort_keys=True).encode(), digest_size=8).hexdigest()

    @classmethod
    def from_mapping(cls, cfg: Mapping[str, Any], learner: Optional[LearnerConfig] = None) -> "HierarchySpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(cfg) - names)
        if unknown:
            raise SpecError(f"unknown hierarchy keys: {unknown}")
        cfg = dict(cfg)
        if learner is not None:
            cfg["learner"] = learner
        elif isinstance(cfg.get("learner"), Mapping):
            cfg["learner"] = LearnerConfig.from_mapping(cfg["learner"])
        return cls(**cfg)

    def replace(self, **changes) -> "HierarchySpec":
        return dataclasses.replace(self, **changes)


def build_env(name: str, overrides: Optional[Mapping[str, Any]] = None) -> EnvInterface:
    """``hanabi-mini`` / ``hanabi-full`` (plus rule overrides), ``matrix:lever``,
    ``matrix:suite:<index>`` (a game of the seeded verification suite; the
    ``seed``/``size``/``n`` overrides select the suite) or
    ``matrix:<path to a whitespace matrix file>``."""
    overrides = dict(overrides or {})
    if name in PRESETS:
        return HanabiEnv(HanabiConfig.from_mapping(overrides, base=PRESETS[name]))
    if name.startswith("matrix:"):
        target = name.split(":", 1)[1]
        if target == "lever":
            return MatrixGameEnv(lever_game(**overrides))
        if target.startswith("suite:"):
            index = int(target.split(":", 1)[1])
            suite = verification_suite(**overrides)
            if not 0 <= index < len(suite):
                raise SpecError(f"suite index {index} outside [0, {len(suite)})")
            return MatrixGameEnv(suite[index])
        return MatrixGameEnv(load_matrix_game(target))
    raise SpecError(f"unknown environment {name!r}")


def load_policy(payload: bytes) -> QFunction:
    return qfunction_from_bytes(payload)


def greedy_policy(payload_or_q, name: str = "greedy") -> Policy:
    q = payload_or_q if isinstance(payload_or_q, QFunction) else load_policy(payload_or_q)
    return GreedyQPolicy(q, name=name)


def snapshot_schedule(spec: HierarchySpec, interval: Optional[int] = None) -> list[tuple[int, int]]:
    """(level, gradient step) pairs at which snapshots are archived.

    Every ``interval`` steps up to the budget; when the interval exceeds the
    budget only the final policy is archived. The ring keeps the newest M
    entries per level, so a schedule longer than M loses its oldest points.
    """
    interval = spec.snapshot_interval if interval is None else interval
    if interval <= 0 or spec.budget == 0:
        return []
    steps = list(range(interval, spec.budget + 1, interval)) or [spec.budget]
    return [(lv, t) for lv in spec.trained_levels for t in steps]


class LevelClient:
    """One level's learner plus its current partner policies."""

    def __init__(self, spec: HierarchySpec, level: int, seed: int,
                 env_factory: Optional[Callable[[], EnvInterface]] = None):
        self.spec = spec
        self.level = level
        self.env = env_factory() if env_factory is not None else build_env(spec.env, spec.env_overrides)
        self.learner = QLearner(
            spec.learner, self.env.action_space_size, self.env.observation_encoding_size,
            seed=_derive_seed(seed, level),
        )
        self.rng = random.Random(_derive_seed(seed, level, 1))
        self.distribution = spec.partner_distribution(level)
        self.partners: dict[int, Policy] = {}
        self.partner_versions: dict[int, int] = {}
        self.partner_counts: dict[int, int] = {lv: 0 for lv in self.distribution.levels}
        self.snapshot_steps = {t for lv, t in snapshot_schedule(spec) if lv == level}
        self.pending_snapshots: list[bytes] = []
        self._digest = spec.learner.digest()

    def payload(self) -> bytes:
        return self.learner.online.to_bytes(self._digest)

    def set_partners(self, snapshots) -> None:
        for snap in snapshots:
            if snap.level_id == VIRTUAL_LEVEL:
                self.partners[VIRTUAL_LEVEL] = UniformRandomPolicy()
            elif self.partner_versions.get(snap.level_id) != snap.version or snap.level_id not in self.partners:
                self.partners[snap.level_id] = greedy_policy(snap.payload, name=f"level{snap.level_id}")
            self.partner_versions[snap.level_id] = snap.version

    def set_partner_policies(self, policies: Mapping[int, Policy]) -> None:
        self.partners.update(policies)

    def run_episode(self) -> None:
        partner_level = self.distribution.sample(self.rng)
        self.partner_counts[partner_level] += 1
        seat = self.learner.episodes % 2
        policies: list[Policy] = [self.partners[partner_level]] * 2
        policies[seat] = self.learner.actor_policy()
        epsilons = [0.0, 0.0]
        epsilons[seat] = self.learner.next_epsilon()
        self.learner.collect(self.env, policies, epsilons, seats=[seat])

    def train(self, steps: int) -> None:
        """Collect experience and take ``steps`` gradient steps (burn-in episodes are free)."""
        goal = self.learner.grad_steps + steps
        eps_per_step = self.spec.learner.episodes_per_step
        while self.learner.grad_steps < goal:
            for _ in range(eps_per_step):
                self.run_episode()
            if self.learner.ready:
                self.learner.train_step()
                if self.learner.grad_steps in self.snapshot_steps:
                    self.pending_snapshots.append(self.payload())

    def state_dict(self) -> dict:
        return {
            "learner": self.learner.state_dict(),
            "rng": self.rng.getstate(),
            "partner_counts": dict(self.partner_counts),
            "pending": list(self.pending_snapshots),
        }

    def load_state_dict(self, state: dict) -> None:
        self.learner.load_state_dict(state["learner"])
        self.rng.setstate(state["rng"])
        self.partner_counts = dict(state["partner_counts"])
        self.pending_snapshots = list(state["pending"])


@dataclass
class HierarchyResult:
    spec: HierarchySpec
    seed: int
    policies: dict[int, bytes]
    snapshots: dict[int, list[bytes]] = field(default_factory=dict)
    partner_counts: dict[int, dict[int, int]] = field(default_factory=dict)
    partner_versions: dict[int, list[dict[int, int]]] = field(default_factory=dict)

    def policy(self, level: int) -> QFunction:
        return load_policy(self.policies[level])

    @property
    def br(self) -> Optional[bytes]:
        return self.policies.get(self.spec.br_level) if self.spec.has_br else None

    def digests(self) -> dict[int, str]:
        return {lv: hashlib.blake2b(p, digest_size=8).hexdigest() for lv, p in sorted(self.policies.items())}


def _flush_snapshots(client: LevelClient, store) -> None:
    for payload in client.pending_snapshots:
        store.archive(client.level, payload)
    client.pending_snapshots = []


# -- sequential -----------------------------------------------------------------


def train_sequential(spec: HierarchySpec, seed: Optional[int] = None,
                     env_factory: Optional[Callable[[], EnvInterface]] = None,
                     checkpoint_dir: Optional[Path] = None) -> HierarchyResult:
    """Train level 1 against uniform random, freeze it, train level 2 against it, and so on.

    With ``checkpoint_dir`` each finished level is written there and a rerun
    resumes after the last completed level.
    """
    if spec.schema != SEQUENTIAL:
        raise SpecError("train_sequential needs schema='sequential'")
    seed = spec.seeds[0] if seed is None else seed
    store = ModelStore(spec.trained_levels)
    frozen: dict[int, Policy] = {VIRTUAL_LEVEL: UniformRandomPolicy()}
    policies: dict[int, bytes] = {}
    counts: dict[int, dict[int, int]] = {}
    for level in spec.trained_levels:
        ckpt = checkpoint_dir / f"level{level}.seq.pkl" if checkpoint_dir is not None else None
        if ckpt is not None and ckpt.exists():
            saved = pickle.loads(ckpt.read_bytes())
            policies[level], counts[level] = saved["payload"], saved["counts"]
            for p in saved["snapshots"]:
                store.archive(level, p)
            frozen[level] = greedy_policy(policies[level], name=f"level{level}")
            log.info("level %d restored from %s", level, ckpt)
            continue
        client = LevelClient(spec, level, seed, env_factory)
        client.set_partner_policies({lv: frozen[lv] for lv in spec.partner_set(level)})
        client.train(spec.budget)
        snaps = list(client.pending_snapshots)
        _flush_snapshots(client, store)
        policies[level] = client.payload()
        counts[level] = client.partner_counts
        frozen[level] = greedy_policy(policies[level], name=f"level{level}")
        if ckpt is not None:
            tmp = ckpt.with_suffix(".tmp")
            tmp.write_bytes(pickle.dumps({"payload": policies[level], "counts": counts[level], "snapshots": snaps}))
            tmp.replace(ckpt)
        log.info("level %d trained: %d steps, %d episodes", level, client.learner.grad_steps, client.learner.episodes)
    snapshots = {lv: [s.payload for s in store.snapshot_ring(lv)] for lv in spec.trained_levels}
    return HierarchyResult(spec, seed, policies, snapshots, counts)


# -- synchronous ----------------------------------------------------------------


def _round_fetch(client: LevelClient, store, version: int) -> None:
    spec = client.spec
    snaps = store.fetch_partner_set(client.level, spec.partner_rule, spec.num_levels, version)
    client.set_partners(snaps)


def train_synchronous(spec: HierarchySpec, seed: Optional[int] = None,
                      env_factory: Optional[Callable[[], EnvInterface]] = None,
                      checkpoint_dir: Optional[Path] = None,
                      address: Optional[tuple[str, int]] = None,
                      record_versions: bool = False, checkpoint_every: int = 20) -> HierarchyResult:
    """All levels train at once and exchange policies every ``server_update`` steps.

    ``spec.mode == 'thread'`` runs clients on a thread pool against an
    in-process store, one round at a time; the orchestrator checkpoints
    between rounds when ``checkpoint_dir`` is set. ``'socket'`` runs one
    process per client against a ModelServer (started here unless
    ``address`` points at a running one). Thread-mode checkpoints are taken
    every ``checkpoint_every`` rounds.
    """
    if spec.schema != SYNCHRONOUS:
        raise SpecError("train_synchronous needs schema='synchronous'")
    seed = spec.seeds[0] if seed is None else seed
    if spec.mode == SOCKET:
        return _train_socket(spec, seed, env_factory, address)
    return _train_threads(spec, seed, env_factory, checkpoint_dir, record_versions, checkpoint_every)


def _train_threads(spec, seed, env_factory, checkpoint_dir, record_versions, checkpoint_every) -> HierarchyResult:
    store = ModelStore(spec.trained_levels)
    clients = [LevelClient(spec, lv, seed, env_factory) for lv in spec.trained_levels]
    rounds = spec.budget // spec.server_update
    start_round = 1
    versions_seen: dict[int, list[dict[int, int]]] = {c.level: [] for c in clients}
    ckpt = checkpoint_dir / "sync.pkl" if checkpoint_dir is not None else None
    if ckpt is not None and ckpt.exists():
        saved = pickle.loads(ckpt.read_bytes())
        for c in clients:
            c.load_state_dict(saved["clients"][c.level])
        store.load_state_dict(saved["store"])
        start_round = saved["round"] + 1
        versions_seen = saved["versions_seen"]
        log.info("resuming synchronous run at round %d", start_round)
    else:
        for c in clients:
            store.push(c.level, c.payload())

    def one_round(client: LevelClient, r: int) -> None:
        _round_fetch(client, store, r)
        client.train(spec.server_update)
        _flush_snapshots(client, store)

    with ThreadPoolExecutor(max_workers=len(clients)) as pool:
        for r in range(start_round, rounds + 1):
            list(pool.map(lambda c: one_round(c, r), clients))
            # push only after every client has fetched: version r+1 is the round's output
            for c in clients:
                store.push(c.level, c.payload())
                if record_versions:
                    versions_seen[c.level].append(dict(c.partner_versions))
            if ckpt is not None and (r % checkpoint_every == 0 or r == rounds):
                _checkpoint_threads(ckpt, clients, store, r, versions_seen)
    policies = {c.level: store.fetch(c.level).payload for c in clients}
    snapshots = {c.level: [s.payload for s in store.snapshot_ring(c.level)] for c in clients}
    counts = {c.level: c.partner_counts for c in clients}
    return HierarchyResult(spec, seed, policies, snapshots, counts, versions_seen)


def _checkpoint_threads(path: Path, clients, store: ModelStore, r: int, versions_seen) -> None:
    state = {
        "round": r,
        "clients": {c.level: c.state_dict() for c in clients},
        "store": store.state_dict(),
        "versions_seen": versions_seen,
    }
    tmp = path.with_suffix(".tmp")
    tmp.write_bytes(pickle.dumps(state))
    tmp.replace(path)


def _socket_worker(spec: HierarchySpec, level: int, seed: int, env_factory, address, queue) -> None:
    try:
        client = LevelClient(spec, level, seed, env_factory)
        with RemoteStore(address) as store:
            store.register(level)
            store.push(level, client.payload())
            rounds = spec.budget // spec.server_update
            for r in range(1, rounds + 1):
                # every level, not only partners, so nobody runs ahead of the ring
                store.wait_for_version(spec.trained_levels, r, timeout=3600)
                _round_fetch(client, store, r)
                client.train(spec.server_update)
                _flush_snapshots(client, store)
                store.push(level, client.payload())
        queue.put((level, None, client.partner_counts))
    except Exception as exc:  # reported to the orchestrator with context
        queue.put((level, f"{type(exc).__name__}: {exc}", None))


def _train_socket(spec, seed, env_factory, address) -> HierarchyResult:
    server = None
    if address is None:
        server = ModelServer(levels=spec.trained_levels).start()
        address = server.address
    ctx = multiprocessing.get_context("fork")
    queue = ctx.Queue()
    procs = [
        ctx.Process(target=_socket_worker, args=(spec, lv, seed, env_factory, address, queue), daemon=True)
        for lv in spec.trained_levels
    ]
    try:
        for p in procs:
            p.start()
        counts, errors = {}, []
        for _ in procs:
            level, err, c = queue.get()
            if err is not None:
                errors.append(f"level {level}: {err}")
            else:
                counts[level] = c
        for p in procs:
            p.join()
        if errors:
            raise RuntimeError("synchronous clients failed: " + "; ".join(errors))
        with RemoteStore(address) as store:
            policies = {lv: store.fetch(lv).payload for lv in spec.trained_levels}
            snapshots = {lv: [s.payload for s in store.snapshot_ring(lv)] for lv in spec.trained_levels}
    finally:
        for p in procs:
            if p.is_alive():
                p.terminate()
        if server is not None:
            server.close()
    return HierarchyResult(spec, seed, policies, snapshots, counts)


def run_hierarchy(spec: HierarchySpec, seed: Optional[int] = None, **kwargs) -> HierarchyResult:
    if spec.schema == SEQUENTIAL:
        kwargs.pop("address", None)
        kwargs.pop("record_versions", None)
        kwargs.pop("checkpoint_every", None)
        return train_sequential(spec, seed, **kwargs)
    return train_synchronous(spec, seed, **kwargs)


# -- policy entropy -------------------------------------------------------------


def policy_distribution(q: QFunction, key: bytes, legal: Sequence[int], temperature: float = 1.0) -> np.ndarray:
    """Softmax of Q/temperature over ``legal`` (zero mass elsewhere)."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    vals = np.asarray(q.values(key), dtype=np.float64)[list(legal)] / temperature
    vals -= vals.max()
    w = np.exp(vals)
    out = np.zeros(q.num_actions)
    out[list(legal)] = w / w.sum()
    return out


def entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def mixture_entropy_gap(dists: Sequence[np.ndarray]) -> float:
    """H(mean of dists) - mean of H(dist); non-negative by concavity."""
    if not dists:
        raise ValueError("need at least one distribution")
    stack = np.asarray(dists, dtype=np.float64)
    return entropy(stack.mean(axis=0)) - float(np.mean([entropy(d) for d in stack]))
