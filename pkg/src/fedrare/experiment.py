"""Assemble data, model and schedule from section settings and run one seed."""
from __future__ import annotations

from dataclasses import dataclass, field, fields

from fedrare import attack as atk
from fedrare import data as dat
from fedrare import defense as dfn
from fedrare.errors import ConfigError
from fedrare.federation import (
    EvalSets,
    FederationConfig,
    run_federation,
    schedule_adversary,
    stream,
)
from fedrare.metrics import DEFAULT_THRESHOLDS, summarize
from fedrare.model import encode, init_params

_SPLIT, _INIT, _BACKDOOR, _ADV = 21, 22, 23, 24


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    path: str = ""
    vocab_size: int = 500
    num_classes: int = 4
    num_examples: int = 4000
    seq_len: int = 16
    skew: float = 0.2
    zipf_exponent: float = 1.5
    alpha: float = 1.0
    test_fraction: float = 0.2
    val_fraction: float = 0.05

    def __post_init__(self):
        if self.source not in ("synthetic", "file"):
            raise ConfigError(f"unknown data source {self.source!r}", "data.source")
        if self.source == "file" and not self.path:
            raise ConfigError("file source needs data.path", "data.path")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive", "data.alpha")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes", "data.num_classes")
        if self.source == "synthetic":
            if self.vocab_size < 10 * self.num_classes:
                raise ConfigError("vocab_size must be at least 10 * num_classes", "data.vocab_size")
            if not 0 < self.skew <= 1:
                raise ConfigError("skew must lie in (0, 1]", "data.skew")
            if self.num_examples < 1:
                raise ConfigError("num_examples must be >= 1", "data.num_examples")
            if self.seq_len < 1:
                raise ConfigError("seq_len must be >= 1", "data.seq_len")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)", "data.test_fraction")
        if not 0 <= self.val_fraction < 1 - self.test_fraction:
            raise ConfigError("val_fraction must lie in [0, 1 - test_fraction)", "data.val_fraction")


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 16
    pooling: str = "mean"

    def __post_init__(self):
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1", "model.embed_dim")
        if self.pooling not in ("mean", "decay"):
            raise ConfigError(f"unknown pooling {self.pooling!r}", "model.pooling")


@dataclass(frozen=True)
class ThreatConfig:
    """Adversary settings that sit outside ``AttackConfig``: who attacks and with which triggers."""

    strategy: str = "none"
    epsilon: float = 0.0
    schedule: str = "fixed"
    num_triggers: int = 3
    insert_count: int = 3
    range_lo: int = 0
    range_hi: int = 30
    position: str = "uniform"
    start_index: int = 0
    norm_bound: float | None = None
    target_label: int = 0
    backdoor_steps: int = 400
    backdoor_lr: float = 1.0
    ensemble_size: int = 3
    decay: float = 0.5
    early_stop_acc: float = 0.99
    mix_ratio: float = 0.5
    scale: float | None = None
    dba_adversaries: int = 3

    def __post_init__(self):
        if self.strategy != "none" and self.strategy not in atk.STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}", "attack.strategy")
        if not 0 <= self.epsilon <= 1:
            raise ConfigError("epsilon must lie in [0, 1]", "attack.epsilon")
        if self.schedule not in ("fixed", "random"):
            raise ConfigError(f"unknown schedule {self.schedule!r}", "attack.schedule")
        if self.num_triggers < 1:
            raise ConfigError("num_triggers must be >= 1", "attack.num_triggers")
        if self.target_label < 0:
            raise ConfigError("target_label must be >= 0", "attack.target_label")
        # AttackConfig / TriggerSpec carry the remaining invariants
        self.attack_config((0,))

    def trigger_spec(self, trigger_ids):
        return dat.TriggerSpec(
            tuple(trigger_ids), self.target_label, self.insert_count, self.range_lo,
            self.range_hi, self.position, self.start_index, self.norm_bound,
        )

    def attack_config(self, trigger_ids):
        return atk.AttackConfig(
            trigger=self.trigger_spec(trigger_ids),
            strategy=self.strategy if self.strategy != "none" else "rare_embedding",
            backdoor_steps=self.backdoor_steps,
            backdoor_lr=self.backdoor_lr,
            ensemble_size=self.ensemble_size,
            decay=self.decay,
            early_stop_acc=self.early_stop_acc,
            mix_ratio=self.mix_ratio,
            scale=self.scale,
            dba_adversaries=self.dba_adversaries,
        )


@dataclass(frozen=True)
class Settings:
    federation: FederationConfig = field(default_factory=FederationConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    attack: ThreatConfig = field(default_factory=ThreatConfig)
    defense: dfn.DefenseConfig = field(default_factory=dfn.DefenseConfig)
    thresholds: tuple = DEFAULT_THRESHOLDS

    def __post_init__(self):
        self.defense.check_round_size(self.federation.clients_per_round)
        if self.attack.strategy != "none" and self.attack.schedule == "fixed":
            if self.attack.epsilon * self.federation.clients_per_round > 1 + 1e-12:
                raise ConfigError("fixed-frequency schedule supports epsilon * m <= 1", "attack.epsilon")


@dataclass
class Prepared:
    clients: list
    evals: EvalSets
    init: object
    trigger_ids: list
    eval_spec: dat.TriggerSpec
    dba_specs: list | None
    vocab: dat.Vocabulary
    test: list


def _with_seed(fed: FederationConfig, seed):
    vals = {f.name: getattr(fed, f.name) for f in fields(fed)}
    vals["seed"] = seed
    return FederationConfig(**vals)


def prepare(settings: Settings, seed: int) -> Prepared:
    d = settings.data
    if d.source == "synthetic":
        vocab, examples = dat.synth_corpus(
            d.vocab_size, d.num_classes, d.num_examples, d.seq_len, d.skew, seed, d.zipf_exponent
        )
    else:
        vocab, examples = dat.load_corpus(d.path, d.vocab_size, d.num_classes)
    if settings.attack.target_label >= d.num_classes:
        raise ConfigError("target_label must be < num_classes", "attack.target_label")
    order = stream(seed, _SPLIT).permutation(len(examples))
    n_test = max(1, int(round(d.test_fraction * len(examples))))
    n_val = int(round(d.val_fraction * len(examples)))
    test = [examples[i] for i in order[:n_test]]
    val = [examples[i] for i in order[n_test : n_test + n_val]]
    train = [examples[i] for i in order[n_test + n_val :]]
    fed = settings.federation
    clients = dat.dirichlet_partition(train, fed.num_clients, d.alpha, seed)

    threat = settings.attack
    dba_specs = None
    if threat.strategy == "dba":
        per = threat.num_triggers
        pool = dat.select_rare_tokens(vocab, per * threat.dba_adversaries)
        assigned = atk.dba_assign(range(threat.dba_adversaries), pool, per)
        dba_specs = [threat.trigger_spec(assigned[a]).with_triggers(assigned[a]) for a in range(threat.dba_adversaries)]
        dba_specs = [
            dat.TriggerSpec(s.trigger_ids, s.target_label, min(s.count, len(s.trigger_ids)), s.lo, s.hi, s.position, s.start, s.norm_bound)
            for s in dba_specs
        ]
        trigger_ids = pool
        union = threat.trigger_spec(pool)
        eval_spec = dat.TriggerSpec(
            union.trigger_ids, union.target_label, min(len(pool), union.hi - union.lo),
            union.lo, union.hi, union.position, union.start, union.norm_bound,
        )
    else:
        trigger_ids = dat.select_rare_tokens(vocab, threat.num_triggers)
        eval_spec = threat.trigger_spec(trigger_ids)
    backdoor = dat.make_backdoor_testset(test, eval_spec, stream(seed, _BACKDOOR))
    init = init_params(
        vocab.size, settings.model.embed_dim, d.num_classes, stream(seed, _INIT), settings.model.pooling
    )
    evals = EvalSets(encode(test), encode(backdoor), encode(val) if val else None)
    return Prepared(clients, evals, init, trigger_ids, eval_spec, dba_specs, vocab, test)


def run_seed(settings: Settings, seed: int, threads=1, prepared=None, on_round=None):
    """Run one seeded federation; returns ``(FederationResult, summary dict)``."""
    prep = prepared or prepare(settings, seed)
    fed = _with_seed(settings.federation, seed)
    threat = settings.attack
    attack_cfg = None
    schedule = None
    if threat.strategy != "none" and threat.epsilon > 0:
        attack_cfg = threat.attack_config(prep.trigger_ids)
        schedule = schedule_adversary(
            threat.schedule, threat.epsilon, fed.clients_per_round, fed.rounds, stream(seed, _ADV)
        )
    result = run_federation(
        prep.init, prep.clients, fed, prep.evals, schedule, attack_cfg, settings.defense,
        prep.dba_specs, threads, on_round,
    )
    return result, summarize(result.records, settings.thresholds)
