"""Round loop: client sampling, local training, defended aggregation and the
momentum server optimizer."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from fedrare import attack as atk
from fedrare import defense as dfn
from fedrare.errors import AggregationEmptyError, ConfigError, NumericError, UnsupportedScheduleError
from fedrare.metrics import RoundRecord, accuracy
from fedrare.model import Batch, ModelParams
from fedrare.training import Residual, sgd

log = logging.getLogger(__name__)

# stream tags for per-purpose rng derivation
_SAMPLE, _SCHEDULE, _CLIENT, _NOISE = 11, 12, 13, 14


def stream(seed, *keys):
    return np.random.default_rng([int(seed), *map(int, keys)])


@dataclass(frozen=True)
class FederationConfig:
    num_clients: int = 100
    clients_per_round: int = 10
    rounds: int = 100
    server_lr: float = 1.0
    server_momentum: float = 0.9
    client_lr: float = 0.5
    client_steps: int = 30
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigError("N must be >= 1", "federation.num_clients")
        if not 1 <= self.clients_per_round <= self.num_clients:
            raise ConfigError("clients per round must satisfy 1 <= m <= N", "federation.clients_per_round")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0", "federation.rounds")
        if self.server_lr <= 0:
            raise ConfigError("server learning rate must be positive", "federation.server_lr")
        if not 0 <= self.server_momentum < 1:
            raise ConfigError("server momentum must lie in [0, 1)", "federation.server_momentum")
        if self.client_lr <= 0:
            raise ConfigError("client learning rate must be positive", "federation.client_lr")
        if self.client_steps < 0:
            raise ConfigError("client_steps must be >= 0", "federation.client_steps")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1", "federation.batch_size")


@dataclass(frozen=True)
class AdversarySchedule:
    """Resolved adversary placement: round -> indices into the sorted sampled set."""

    mode: str
    epsilon: float
    interval: int | None
    slots: dict = field(default_factory=dict)

    @property
    def rounds(self):
        return sorted(self.slots)


def sample_clients(t, config: FederationConfig, rng=None) -> list:
    """Uniform sample of m client ids without replacement, ascending."""
    rng = rng if rng is not None else stream(config.seed, _SAMPLE, t)
    picked = rng.choice(config.num_clients, size=config.clients_per_round, replace=False)
    return sorted(int(c) for c in picked)


def fixed_interval(epsilon, m):
    return max(1, int(round(1.0 / (epsilon * m))))


def schedule_adversary(mode, epsilon, m, rounds, rng) -> AdversarySchedule:
    if not 0 <= epsilon <= 1:
        raise ConfigError("epsilon must lie in [0, 1]", "attack.epsilon")
    if mode not in ("fixed", "random"):
        raise ConfigError(f"unknown schedule {mode!r}", "attack.schedule")
    if epsilon == 0:
        return AdversarySchedule(mode, epsilon, None, {})
    if mode == "fixed":
        if epsilon * m > 1 + 1e-12:
            raise UnsupportedScheduleError(
                f"fixed-frequency sampling places one adversary per round; epsilon*m = {epsilon * m:g} > 1"
            )
        f = fixed_interval(epsilon, m)
        slots = {t: (int(rng.integers(m)),) for t in range(f, rounds + 1, f)}
        return AdversarySchedule(mode, epsilon, f, slots)
    flags = rng.random((rounds, m)) < epsilon
    slots = {t + 1: tuple(int(s) for s in np.flatnonzero(row)) for t, row in enumerate(flags) if row.any()}
    return AdversarySchedule(mode, epsilon, None, slots)


def local_train_benign(global_params: ModelParams, data, config: FederationConfig, rng) -> Residual:
    if len(data) == 0:
        log.warning("client %s has no data; sending a zero residual", data.client_id)
        return Residual(global_params.zeros_like(), data.client_id, empty=True)
    local = sgd(global_params, data.batch, config.client_steps, config.client_lr, config.batch_size, rng)
    return Residual(local - global_params, data.client_id)


def aggregate(global_params, residuals, defense: dfn.DefenseConfig, val=None, seed=0, round_index=0):
    """Filter/clip residuals per the defense, then combine them.

    Returns ``(pseudo_gradient, rejected_client_ids)``. Raises
    ``AggregationEmptyError`` when nothing survives.
    """
    residuals = sorted(residuals, key=lambda r: r.client_id)
    rejected = []
    kept = []
    if defense.kind == "accuracy_check":
        if val is None:
            raise ConfigError("accuracy checking needs a validation set", "defense.kind")
        g_acc = accuracy(global_params, val)
        for r in residuals:
            if dfn.accuracy_check(global_params + r.delta, global_params, val, defense.acc_slack, g_acc):
                kept.append(r)
            else:
                rejected.append(r.client_id)
    else:
        kept = list(residuals)
    if not kept:
        raise AggregationEmptyError("all residuals rejected")
    deltas = []
    for r in kept:
        d = r.delta
        if defense.kind == "norm_clip":
            d = dfn.norm_clip(d, defense.clip_bound, defense.literal_clip)
        elif defense.kind == "weak_dp":
            d = dfn.weak_dp(d, defense.clip_bound, defense.noise_std, stream(seed, _NOISE, round_index, r.client_id), defense.literal_clip)
        deltas.append(d)
    if defense.kind == "coord_median":
        return dfn.coord_median(deltas, defense.embedding_only), rejected
    if defense.kind == "multi_krum":
        out, chosen = dfn.multi_krum(deltas, defense.krum_f, defense.krum_k, return_selected=True)
        rejected += [kept[i].client_id for i in range(len(kept)) if i not in chosen]
        return out, sorted(rejected)
    return dfn.mean_aggregate(deltas), rejected


@dataclass
class ServerState:
    momentum: ModelParams | None = None


def server_step(global_params, pseudo_gradient, state: ServerState, lr=1.0, momentum=0.9):
    """``v <- mu*v + pg; G <- G + lr*v``; returns the new global and state."""
    if not global_params.same_shape(pseudo_gradient):
        raise ValueError("pseudo-gradient shape does not match the global model")
    buf = pseudo_gradient if state.momentum is None else state.momentum.scale(momentum) + pseudo_gradient
    return global_params + buf.scale(lr), ServerState(buf)


@dataclass
class EvalSets:
    clean: Batch
    backdoor: Batch | None = None
    val: Batch | None = None


@dataclass
class FederationResult:
    records: list
    final: ModelParams
    schedule: AdversarySchedule
    adversary_log: list = field(default_factory=list)


def _adversary_update(global_params, data, attack_cfg, queue, rng, config, dba_specs, adv_index):
    strategy = attack_cfg.strategy
    if strategy in atk.POISON_STRATEGIES:
        return atk.adversary_local_train(global_params, data, attack_cfg, queue, rng, config)
    if strategy == "dba":
        spec = dba_specs[adv_index % len(dba_specs)]
        return atk.adversary_local_train(global_params, data, attack_cfg, None, rng, config, spec=spec)
    res = atk.data_poison_train(global_params, data, attack_cfg, rng, config)
    if strategy == "model_replacement":
        gamma = attack_cfg.scale if attack_cfg.scale is not None else config.clients_per_round
        res = atk.model_replacement(res, gamma)
    return res


def run_federation(
    init: ModelParams,
    clients,
    config: FederationConfig,
    evals: EvalSets,
    schedule: AdversarySchedule | None = None,
    attack_cfg: atk.AttackConfig | None = None,
    defense: dfn.DefenseConfig | None = None,
    dba_specs=None,
    threads=1,
    on_round=None,
) -> FederationResult:
    defense = defense or dfn.DefenseConfig()
    defense.check_round_size(config.clients_per_round)
    schedule = schedule or AdversarySchedule("fixed", 0.0, None, {})
    if schedule.slots and attack_cfg is None:
        raise ConfigError("adversary rounds scheduled without an attack config", "attack.strategy")
    if len(clients) != config.num_clients:
        raise ConfigError(f"expected {config.num_clients} client datasets, got {len(clients)}", "federation.num_clients")
    queue = atk.ModelQueue(max(attack_cfg.ensemble_size - 2, 0)) if attack_cfg else None
    glob = init.copy()
    state = ServerState()
    records, adv_log = [], []
    adv_count = 0
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for t in range(1, config.rounds + 1):
            ids = sample_clients(t, config)
            adv_ids = {ids[s] for s in schedule.slots.get(t, ())}
            benign = [c for c in ids if c not in adv_ids]

            def train(cid, g=glob, t=t):
                return local_train_benign(g, clients[cid], config, stream(config.seed, _CLIENT, t, cid))

            residuals = list(pool.map(train, benign)) if pool else [train(c) for c in benign]
            if adv_ids and queue is not None:
                queue.push(glob)
            for cid in sorted(adv_ids):
                rng = stream(config.seed, _CLIENT, t, cid)
                res = _adversary_update(glob, clients[cid], attack_cfg, queue, rng, config, dba_specs, adv_count)
                res.info["round"] = t
                res.info["adversary"] = True
                if evals.val is not None:
                    res.info["local_val_acc"] = accuracy(glob + res.delta, evals.val)
                    res.info["global_val_acc"] = accuracy(glob, evals.val)
                adv_count += 1
                residuals.append(res)

            try:
                pg, rejected = aggregate(glob, residuals, defense, evals.val, config.seed, t)
            except AggregationEmptyError:
                rejected = sorted(r.client_id for r in residuals)
                log.info("round %d: every residual rejected; global unchanged", t)
            else:
                glob, state = server_step(glob, pg, state, config.server_lr, config.server_momentum)
            if not glob.is_finite():
                raise NumericError(t)

            accepted = None
            if adv_ids:
                accepted = not any(c in adv_ids for c in rejected)
                for r in residuals:
                    if r.info.get("adversary"):
                        adv_log.append({
                            "round": t,
                            "client_id": r.client_id,
                            "accepted": r.client_id not in rejected,
                            "backdoor_steps": r.info.get("backdoor_steps"),
                            "trigger_acc": r.info.get("trigger_acc"),
                            "delta_norm": r.delta.norm(),
                            "local_val_acc": r.info.get("local_val_acc"),
                            "global_val_acc": r.info.get("global_val_acc"),
                        })
            rec = RoundRecord(
                round=t,
                clean_acc=accuracy(glob, evals.clean),
                backdoor_acc=accuracy(glob, evals.backdoor) if evals.backdoor is not None else 0.0,
                adversary_round=bool(adv_ids),
                defense_rejections=len(rejected),
                adversary_accepted=accepted,
            )
            records.append(rec)
            if on_round is not None:
                on_round(rec, glob)
    finally:
        if pool:
            pool.shutdown()
    return FederationResult(records, glob, schedule, adv_log)
