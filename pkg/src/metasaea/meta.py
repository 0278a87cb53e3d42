"""Region-selection meta-policy: MDP pieces and Double-DQN learning.

Ten discrete actions map to region-level intervals: five upper tails
[tau_k, 1] with tau in {0, 0.45, 0.70, 0.90, 1} and five fifth-width bands
[(k-1)/5, k/5]. A state is the archive embedding plus the consumed budget
fraction; the reward combines the increment of the best region level with the
relative improvement of the feasible-front distance metric. Training is
off-policy Double DQN with soft target updates over a centralized replay
buffer, and the state encoder is co-trained end-to-end through the Q-loss at
its own learning rate.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field

import numpy as np

from . import neurocompute as nc
from .ela import ELAConfig, StateEncoder, StateVector

logger = logging.getLogger(__name__)

ACTION_COUNT = 10
TAU_THRESHOLDS = (0.0, 0.45, 0.70, 0.90, 1.0)


def action_interval(action: int) -> tuple[float, float]:
    """Region-level interval controlled by the action id (0..9)."""
    if not 0 <= action < ACTION_COUNT:
        raise ValueError(f"action id must lie in [0, {ACTION_COUNT})")
    if action < 5:
        return (TAU_THRESHOLDS[action], 1.0)
    k = action - 5 + 1
    return ((k - 1) / 5.0, k / 5.0)


def select_region(levels: np.ndarray, interval: tuple[float, float],
                  min_count: int = 20) -> np.ndarray:
    """Archive indices whose levels fall in the closed interval, expanded to
    at least `min_count` members by pulling in the nearest-by-level solutions
    (ties toward higher level, then insertion order)."""
    levels = np.asarray(levels, dtype=float)
    if levels.size == 0:
        raise ValueError("empty archive")
    lo, hi = interval
    inside = np.flatnonzero((levels >= lo) & (levels <= hi))
    target = min(min_count, levels.size)
    if inside.size >= target:
        return inside
    outside = np.setdiff1d(np.arange(levels.size), inside, assume_unique=True)
    dist = np.maximum(np.maximum(lo - levels[outside], levels[outside] - hi), 0.0)
    order = np.lexsort((outside, -levels[outside], dist))
    extra = outside[order[: target - inside.size]]
    return np.sort(np.concatenate([inside, extra]))


@dataclass(frozen=True)
class ArchiveStats:
    """Cycle summary feeding the reward: best level and feasible-front IGD."""

    max_level: float
    igd: float | None


class RewardError(RuntimeError):
    pass


def reward(prev: ArchiveStats, curr: ArchiveStats) -> float:
    """Best-level increment plus the relative IGD improvement.

    The IGD term is zero whenever the previous IGD is absent (no feasible
    solutions yet) or zero. A previously available IGD cannot become absent
    because the feasible archive only grows.
    """
    r = curr.max_level - prev.max_level
    if prev.igd is not None and prev.igd > 0.0:
        if curr.igd is None:
            raise RewardError("IGD became absent although the feasible archive is monotone")
        r += (prev.igd - curr.igd) / prev.igd
    return r


@dataclass
class Transition:
    state: StateVector
    action: int
    reward: float
    next_state: StateVector
    terminal: bool


class ReplayBuffer:
    """Ring buffer of transitions with uniform sampling."""

    def __init__(self, capacity: int = 50_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._pos = 0

    def __len__(self) -> int:
        return len(self._items)

    def append(self, tr: Transition):
        if len(self._items) < self.capacity:
            self._items.append(tr)
        else:
            self._items[self._pos] = tr
        self._pos = (self._pos + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        if len(self._items) < batch_size:
            raise ValueError("buffer holds fewer transitions than the batch size")
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


@dataclass(frozen=True)
class DQNConfig:
    gamma: float = 0.99
    tau: float = 1e-4
    batch_size: int = 64
    lr_backbone: float = 1e-4
    lr_ela: float = 1e-5
    hidden: int = 64
    replay_capacity: int = 50_000
    warmup: int = 1_000
    updates_per_step: float = 1.0  # Q updates per environment decision step
    eps_start: float = 1.0
    eps_final: float = 0.05
    eps_fraction: float = 0.5  # fraction of episodes over which epsilon anneals

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")
        if not (0.0 < self.tau < 1.0):
            raise ValueError("tau must lie in (0, 1)")


def epsilon_schedule(episode: int, episodes: int, config: DQNConfig) -> float:
    """Linear anneal from eps_start to eps_final over the first eps_fraction
    of training episodes, then constant."""
    horizon = max(1, int(round(episodes * config.eps_fraction)))
    frac = min(1.0, episode / horizon)
    return config.eps_start + frac * (config.eps_final - config.eps_start)


def soft_update(target: nc.ParameterSet, online: nc.ParameterSet, tau: float = 1e-4):
    """Polyak step: theta_target <- tau * theta_online + (1 - tau) * theta_target."""
    for name, p_t in target.items():
        p_o = online[name]
        if p_o.data.shape != p_t.data.shape:
            raise ValueError(f"shape mismatch for {name}")
        p_t.data *= 1.0 - tau
        p_t.data += tau * p_o.data


class MetaPolicy:
    """State encoder plus online/target Q-networks and their optimizers."""

    def __init__(self, ela_config: ELAConfig, dqn_config: DQNConfig,
                 rng: np.random.Generator):
        self.ela_config = ela_config
        self.dqn_config = dqn_config
        self.encoder = StateEncoder(ela_config, rng)
        in_dim = ela_config.hidden + 1
        self.q_params = nc.ParameterSet()
        self.q_net = nc.MLP(self.q_params, "q",
                            [in_dim, dqn_config.hidden, dqn_config.hidden, ACTION_COUNT], rng)
        self.q_target_params = self.q_params.clone()
        self.adam_backbone = nc.adam_init(self.q_params, dqn_config.lr_backbone)
        self.adam_ela = nc.adam_init(self.encoder.params, dqn_config.lr_ela)

    # -- acting ---------------------------------------------------------
    def encode_state(self, Y: np.ndarray, levels: np.ndarray,
                     evals_used: int, fe_max: int) -> StateVector:
        return self.encoder.encode(Y, levels, evals_used, fe_max)

    def _q_forward(self, states: np.ndarray, params: nc.ParameterSet) -> np.ndarray:
        net = nc.MLP.__new__(nc.MLP)
        net.layers = [_linear_view(params, f"q.l{i}") for i in range(3)]
        with nc.no_grad():
            return net(nc.constant(np.atleast_2d(states))).data

    def q_values(self, state: StateVector) -> np.ndarray:
        return self._q_forward(state.vector()[None, :], self.q_params)[0]

    # -- learning ---------------------------------------------------------
    def double_dqn_update(self, batch: list[Transition]) -> float:
        return double_dqn_update(batch, self, self.dqn_config)

    def soft_update_target(self):
        soft_update(self.q_target_params, self.q_params, self.dqn_config.tau)

    # -- snapshots / persistence -----------------------------------------
    def snapshot(self) -> "MetaPolicy":
        """Frozen copy for rollout workers (online weights + encoder)."""
        rng = np.random.default_rng(0)  # immediately overwritten
        twin = MetaPolicy(self.ela_config, self.dqn_config, rng)
        twin.encoder.params.load_state(self.encoder.params.state())
        twin.q_params.load_state(self.q_params.state())
        twin.q_target_params.load_state(self.q_target_params.state())
        return twin

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = self.encoder.params.state()
        arrays.update(self.q_params.state())
        return arrays

    def save(self, path, extra_metadata: dict | None = None):
        metadata = {
            "kind": "meta-policy",
            "ela": {"hidden": self.ela_config.hidden, "heads": self.ela_config.heads,
                    "ff_mult": self.ela_config.ff_mult},
            "dqn": {"gamma": self.dqn_config.gamma, "tau": self.dqn_config.tau,
                    "batch_size": self.dqn_config.batch_size,
                    "lr_backbone": self.dqn_config.lr_backbone,
                    "lr_ela": self.dqn_config.lr_ela,
                    "hidden": self.dqn_config.hidden},
        }
        if extra_metadata:
            metadata.update(extra_metadata)
        nc.save_checkpoint(path, self.state_arrays(), metadata)

    @classmethod
    def load(cls, path) -> "MetaPolicy":
        arrays, metadata = nc.load_checkpoint(path)
        if metadata.get("kind") != "meta-policy":
            raise nc.CheckpointError(f"{path}: not a meta-policy checkpoint")
        ela_cfg = ELAConfig(hidden=int(metadata["ela"]["hidden"]),
                            heads=int(metadata["ela"]["heads"]),
                            ff_mult=int(metadata["ela"]["ff_mult"]))
        dqn_meta = metadata["dqn"]
        dqn_cfg = DQNConfig(gamma=dqn_meta["gamma"], tau=dqn_meta["tau"],
                            batch_size=int(dqn_meta["batch_size"]),
                            lr_backbone=dqn_meta["lr_backbone"],
                            lr_ela=dqn_meta["lr_ela"], hidden=int(dqn_meta["hidden"]))
        policy = cls(ela_cfg, dqn_cfg, np.random.default_rng(0))
        policy.encoder.params.load_state(
            {k: v for k, v in arrays.items() if k.startswith("ela.")})
        policy.q_params.load_state(
            {k: v for k, v in arrays.items() if k.startswith("q.")})
        policy.q_target_params.load_state(
            {k: v for k, v in arrays.items() if k.startswith("q.")})
        return policy


def _linear_view(params: nc.ParameterSet, prefix: str):
    layer = nc.Linear.__new__(nc.Linear)
    layer.w = params[f"{prefix}.w"]
    layer.b = params[f"{prefix}.b"]
    return layer


def act(policy: MetaPolicy, state: StateVector, epsilon: float,
        rng: np.random.Generator) -> int:
    """Epsilon-greedy action with lowest-index tie-break on the greedy branch."""
    if rng.random() < epsilon:
        return int(rng.integers(ACTION_COUNT))
    return int(np.argmax(policy.q_values(state)))


def double_dqn_update(batch: list[Transition], policy: MetaPolicy,
                      config: DQNConfig) -> float:
    """One decoupled-target Q update with gradients through the encoder.

    Targets use the online net to pick the next action and the target net to
    evaluate it; terminal transitions keep only the reward. Current states are
    re-encoded from their raw archive snapshots under the current encoder
    parameters so the Q-loss trains the encoder end-to-end; next-state values
    use the embeddings stored at rollout time (the target side tolerates that
    staleness by construction).
    """
    if len(batch) == 0:
        raise ValueError("empty update batch")
    gamma = config.gamma
    actions = np.array([tr.action for tr in batch])
    rewards = np.array([tr.reward for tr in batch])
    terminal = np.array([tr.terminal for tr in batch], dtype=float)

    next_states = np.stack([tr.next_state.vector() for tr in batch])
    q_next_online = policy._q_forward(next_states, policy.q_params)
    best_next = np.argmax(q_next_online, axis=1)
    q_next_target = policy._q_forward(next_states, policy.q_target_params)
    targets = rewards + gamma * (1.0 - terminal) * q_next_target[np.arange(len(batch)), best_next]

    policy.q_params.zero_grads()
    policy.encoder.params.zero_grads()
    # Group states by archive shape so each group re-encodes in one graph.
    groups: dict[tuple[int, int], list[int]] = {}
    for i, tr in enumerate(batch):
        st = tr.state
        if st.objectives is None:
            raise ValueError("transition state lacks its raw archive snapshot")
        groups.setdefault(st.objectives.shape, []).append(i)
    order: list[int] = []
    parts = []
    for shape, members in groups.items():
        order.extend(members)
        Ys = np.stack([batch[i].state.objectives for i in members])
        lvls = np.stack([batch[i].state.levels for i in members])
        emb = policy.encoder.embed_graph_batch(Ys, lvls)      # (Bg, h)
        frac = np.array([[batch[i].state.budget_fraction] for i in members])
        parts.append(nc.concat([emb, nc.constant(frac)], axis=1))
    S = parts[0] if len(parts) == 1 else nc.concat(parts, axis=0)  # (B, h+1)
    Q = policy.q_net(S)                                            # (B, actions)
    q_taken = nc.take_per_row(Q, actions[order])
    loss = nc.mse(q_taken, nc.constant(targets[order]))
    nc.backward(loss)
    nc.adam_step(policy.q_params, policy.adam_backbone)
    nc.adam_step(policy.encoder.params, policy.adam_ela)
    return loss.item()


# ---------------------------------------------------------------------------
# Episode policies (how the harness asks for actions)
# ---------------------------------------------------------------------------

class EpisodePolicy:
    """Maps archive snapshots to states and states to actions."""

    def make_state(self, Y: np.ndarray, levels: np.ndarray,
                   evals_used: int, fe_max: int) -> StateVector:
        return StateVector(embedding=None, budget_fraction=evals_used / fe_max,
                           objectives=np.array(Y, dtype=float, copy=True),
                           levels=np.array(levels, dtype=float, copy=True))

    def select_action(self, state: StateVector, rng: np.random.Generator) -> int:
        raise NotImplementedError


class RandomPolicy(EpisodePolicy):
    def select_action(self, state: StateVector, rng: np.random.Generator) -> int:
        return int(rng.integers(ACTION_COUNT))


class FixedActionPolicy(EpisodePolicy):
    def __init__(self, action: int):
        action_interval(action)  # validates the id
        self.action = action

    def select_action(self, state: StateVector, rng: np.random.Generator) -> int:
        return self.action


class NetworkPolicy(EpisodePolicy):
    def __init__(self, policy: MetaPolicy, epsilon: float = 0.0):
        self.policy = policy
        self.epsilon = epsilon

    def make_state(self, Y, levels, evals_used, fe_max) -> StateVector:
        return self.policy.encode_state(Y, levels, evals_used, fe_max)

    def select_action(self, state: StateVector, rng: np.random.Generator) -> int:
        return act(self.policy, state, self.epsilon, rng)


# ---------------------------------------------------------------------------
# Meta-training: rollout workers plus a centralized trainer
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    policy: MetaPolicy
    rewards: list[float]
    sliding_avg: list[float]
    episode_problems: list[str]
    losses: list[float] = field(default_factory=list)
    discarded_episodes: int = 0


def sliding_window_average(values: list[float], window: int = 10) -> list[float]:
    out = []
    for i in range(len(values)):
        chunk = [v for v in values[max(0, i - window + 1): i + 1] if np.isfinite(v)]
        out.append(float(np.mean(chunk)) if chunk else float("nan"))
    return out


def train_meta(problems, episodes: int, workers: int, seed: int,
               episode_config, ela_config: ELAConfig | None = None,
               dqn_config: DQNConfig | None = None,
               progress: bool = False) -> TrainResult:
    """Train the meta-policy with rollout workers and a centralized trainer.

    Episodes are assigned round-robin over the training problems, each with a
    seed derived from (seed, episode index) and the annealed exploration rate
    for that episode. Workers push transitions into the shared replay buffer;
    after the warm-up the trainer performs `updates_per_step` Q updates (each
    followed by a soft target update) per environment decision step. With one
    worker everything runs serially and is bit-reproducible; with more, worker
    threads roll out episodes against immutable policy snapshots taken at
    episode start. Every training problem must ship a reference front since
    the reward needs the feasible-front metric online.
    """
    from . import harness  # local import: harness drives episodes

    if not problems:
        raise ValueError("need at least one training problem")
    if workers < 1:
        raise ValueError("need at least one worker")
    ela_config = ela_config or ELAConfig()
    dqn_config = dqn_config or DQNConfig()
    for problem in problems:
        if problem.front is None:
            raise ValueError(
                f"{problem.name}: training problems must ship a reference front")

    root = np.random.SeedSequence(seed)
    policy_ss, trainer_ss = root.spawn(2)
    policy = MetaPolicy(ela_config, dqn_config,
                        np.random.default_rng(policy_ss))
    trainer_rng = np.random.default_rng(trainer_ss)
    buffer = ReplayBuffer(dqn_config.replay_capacity)
    lock = threading.Lock()

    rewards: list[float] = [float("nan")] * episodes
    episode_problems: list[str] = ["" for _ in range(episodes)]
    losses: list[float] = []
    discarded = 0
    steps_seen = 0
    updates_done = 0

    def episode_seed(i: int) -> int:
        return int(np.random.SeedSequence([seed, i]).generate_state(1)[0])

    def do_updates(param_lock: threading.Lock | None = None):
        # Only the trainer thread runs this; `lock` guards buffer access and
        # `param_lock` (threaded mode) keeps snapshots out of half-written
        # parameters, one update at a time so workers never stall for long.
        nonlocal updates_done
        while True:
            with lock:
                ready = (len(buffer) >= max(dqn_config.warmup, dqn_config.batch_size)
                         and updates_done < steps_seen * dqn_config.updates_per_step)
                batch = buffer.sample(dqn_config.batch_size, trainer_rng) if ready else None
            if batch is None:
                return
            if param_lock is not None:
                with param_lock:
                    losses.append(policy.double_dqn_update(batch))
                    policy.soft_update_target()
            else:
                losses.append(policy.double_dqn_update(batch))
                policy.soft_update_target()
            updates_done += 1

    def run_one(i: int, rollout_policy: MetaPolicy) -> float:
        nonlocal steps_seen
        problem = problems[i % len(problems)]
        episode_problems[i] = problem.name
        eps = epsilon_schedule(i, episodes, dqn_config)
        config = episode_config.with_seed(episode_seed(i))
        total = 0.0

        if workers == 1:
            def on_transition(tr: Transition):
                nonlocal steps_seen, total
                total += tr.reward
                with lock:
                    buffer.append(tr)
                    steps_seen += 1
                do_updates()
        else:
            def on_transition(tr: Transition):
                nonlocal steps_seen, total
                total += tr.reward
                with lock:
                    buffer.append(tr)
                    steps_seen += 1

        harness.run_episode(problem, config, NetworkPolicy(rollout_policy, eps),
                            on_transition=on_transition)
        return total

    if workers == 1:
        for i in range(episodes):
            try:
                rewards[i] = run_one(i, policy)
            except Exception:
                logger.exception("episode %d failed; discarding", i)
                discarded += 1
            if progress and (i + 1) % 10 == 0:
                logger.info("episode %d/%d sliding reward %.4f", i + 1, episodes,
                            np.nanmean(rewards[max(0, i - 9): i + 1]))
    else:
        import time
        from concurrent.futures import ThreadPoolExecutor

        snapshot_lock = threading.Lock()  # params are read while the trainer writes

        def worker_task(i: int):
            with snapshot_lock:
                snap = policy.snapshot()
            try:
                r = run_one(i, snap)
            except Exception:
                logger.exception("episode %d failed; discarding", i)
                return i, None
            return i, r

        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(worker_task, i) for i in range(episodes)]
            remaining = set(futures)
            finished = 0
            while remaining:
                do_updates(snapshot_lock)
                done = {f for f in remaining if f.done()}
                if not done:
                    time.sleep(0.002)
                    continue
                for f in done:
                    i, r = f.result()
                    if r is None:
                        discarded += 1
                    else:
                        rewards[i] = r
                    finished += 1
                    if progress and finished % 10 == 0:
                        logger.info("episodes finished: %d/%d", finished, episodes)
                remaining -= done
        do_updates(snapshot_lock)

    return TrainResult(policy=policy, rewards=rewards,
                       sliding_avg=sliding_window_average(rewards),
                       episode_problems=episode_problems,
                       losses=losses, discarded_episodes=discarded)
