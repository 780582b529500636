"""Truncation-selection neuroevolution loop.

Each generation runs three stages over a population of agents:

- variation: perturb every weight and bias with N(0, sigma^2) noise and,
  for dynamic populations, apply exactly one architectural mutation;
- evaluation: score every agent on the same generation-derived episode
  seeds (seed = generation * episodes_per_eval + episode);
- selection: keep the top 50% by fitness and duplicate them.

All randomness is derived per (master_seed, generation, slot, purpose),
so results are a pure function of the config and independent of worker
count and scheduling. Evaluation is data-parallel across agents via a
process pool.
"""

from __future__ import annotations

import copy
import json
import math
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

from . import netgraph
from .envs import EnvSpec, RunningStandardizer, get_spec, run_episode_set
from .netgraph import DynamicNet
from .rng import PURPOSE_MUTATE, PURPOSE_PERTURB, derive_stream

CHECKPOINT_MAGIC = b"DYNEVO-CKPT"
CHECKPOINT_VERSION = 1

# Held-out environment seeds for elite testing: 2**31 - 10 .. 2**31 - 1.
TEST_SEEDS = tuple(range(2**31 - 10, 2**31))


class CheckpointFormatError(ValueError):
    """Raised when checkpoint bytes fail to decode."""


@dataclass
class EvolutionConfig:
    task: str
    population_size: int = 64
    generations: int = 100
    perturb_sigma: float = 0.1
    init_sigma: float = 1.0
    mode: str = "dynamic"
    master_seed: int = 0
    workers: int = 1
    checkpoint_every: int = 0

    def validate(self) -> None:
        get_spec(self.task)
        if self.population_size < 2 or self.population_size % 2:
            raise ValueError("population_size must be a positive even integer")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if self.mode not in ("dynamic", "static"):
            raise ValueError("mode must be 'dynamic' or 'static'")
        if self.perturb_sigma <= 0 or self.init_sigma <= 0:
            raise ValueError("sigmas must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")


@dataclass
class Agent:
    genome: DynamicNet
    standardizer: RunningStandardizer
    fitness: float = math.nan
    slot: int = 0

    def clone(self) -> "Agent":
        return Agent(
            copy.deepcopy(self.genome),
            copy.deepcopy(self.standardizer),
            self.fitness,
            self.slot,
        )


@dataclass
class Population:
    agents: list
    generation: int
    master_seed: int


@dataclass
class RunRecord:
    generation: int
    best_fitness: float
    mean_fitness: float
    median_fitness: float
    elite_params: int
    elite_nodes: int
    elite_connections: int
    elapsed_seconds: float

    CSV_HEADER = (
        "generation,best_fitness,mean_fitness,median_fitness,"
        "elite_params,elite_nodes,elite_connections,elapsed_seconds"
    )

    def csv_row(self) -> str:
        return (
            f"{self.generation},{self.best_fitness!r},{self.mean_fitness!r},"
            f"{self.median_fitness!r},{self.elite_params},{self.elite_nodes},"
            f"{self.elite_connections},{self.elapsed_seconds!r}"
        )


# ----------------------------------------------------------------------
# stages


def init_population(cfg: EvolutionConfig, spec: EnvSpec) -> Population:
    cfg.validate()
    build = netgraph.new_minimal if cfg.mode == "dynamic" else netgraph.build_static
    agents = [
        Agent(
            build(spec.obs_dim, spec.action_space.arity),
            RunningStandardizer(spec.obs_dim),
            slot=i,
        )
        for i in range(cfg.population_size)
    ]
    return Population(agents, 0, cfg.master_seed)


def variation(pop: Population, cfg: EvolutionConfig) -> None:
    g = pop.generation
    for agent in pop.agents:
        agent.genome.perturb_parameters(
            derive_stream(pop.master_seed, g, agent.slot, PURPOSE_PERTURB),
            cfg.perturb_sigma,
        )
        if cfg.mode == "dynamic":
            agent.genome.mutate(
                derive_stream(pop.master_seed, g, agent.slot, PURPOSE_MUTATE),
                cfg.init_sigma,
            )


def episode_seeds_for(generation: int, spec: EnvSpec) -> list[int]:
    e = spec.episodes_per_eval
    return [generation * e + i for i in range(e)]


def _evaluate_one(payload):
    genome, standardizer, task, seeds = payload
    spec = get_spec(task)
    fitness = run_episode_set(genome, spec, standardizer, seeds)
    return fitness, standardizer


def evaluate(pop: Population, cfg: EvolutionConfig, spec: EnvSpec, pool=None) -> None:
    """Score every agent on this generation's shared episode seeds."""
    seeds = episode_seeds_for(pop.generation, spec)
    payloads = [
        (a.genome, a.standardizer, cfg.task, seeds) for a in pop.agents
    ]
    if pool is not None:
        chunk = max(1, len(payloads) // (cfg.workers * 4))
        results = list(pool.map(_evaluate_one, payloads, chunksize=chunk))
    else:
        results = [_evaluate_one(p) for p in payloads]
    for agent, (fitness, standardizer) in zip(pop.agents, results):
        if not math.isfinite(fitness):
            raise RuntimeError(
                f"non-finite fitness {fitness} for agent slot {agent.slot}"
            )
        agent.fitness = fitness
        agent.standardizer = standardizer


def select(pop: Population) -> None:
    """Keep the top half (ties: lower slot), duplicate it, advance a generation."""
    order = sorted(
        pop.agents, key=lambda a: (-a.fitness, a.slot)
    )
    survivors = order[: len(pop.agents) // 2]
    pop.agents = survivors + [a.clone() for a in survivors]
    for i, agent in enumerate(pop.agents):
        agent.slot = i
    pop.generation += 1


def elite_of(pop: Population) -> Agent:
    return min(pop.agents, key=lambda a: (-a.fitness, a.slot))


def _record_for(pop: Population, generation: int, elapsed: float) -> RunRecord:
    fits = sorted(a.fitness for a in pop.agents)
    n = len(fits)
    median = (
        fits[n // 2] if n % 2 else 0.5 * (fits[n // 2 - 1] + fits[n // 2])
    )
    elite = elite_of(pop)
    return RunRecord(
        generation=generation,
        best_fitness=elite.fitness,
        mean_fitness=sum(fits) / n,
        median_fitness=median,
        elite_params=elite.genome.param_count(),
        elite_nodes=elite.genome.node_count(),
        elite_connections=elite.genome.connection_count(),
        elapsed_seconds=elapsed,
    )


def run_evolution(
    cfg: EvolutionConfig,
    out_dir=None,
    resume: tuple[Population, list] | None = None,
    on_generation=None,
):
    """Run the variation/evaluation/selection loop for ``cfg.generations`` generations.

    Returns ``(population, records)``. When ``out_dir`` is given, appends
    to ``metrics.csv`` and writes ``ckpt_<generation>.bin`` every
    ``checkpoint_every`` generations plus a final checkpoint. ``resume``
    continues a loaded run; the continuation is identical to an
    uninterrupted one because all randomness is generation-keyed.
    """
    cfg.validate()
    spec = get_spec(cfg.task)
    if resume is not None:
        pop, records = resume
        records = list(records)
    else:
        pop, records = init_population(cfg, spec), []

    metrics_path = None
    if out_dir is not None:
        from pathlib import Path

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.csv"
        if not metrics_path.exists():
            metrics_path.write_text(RunRecord.CSV_HEADER + "\n")

    pool = None
    if cfg.workers > 1:
        pool = ProcessPoolExecutor(max_workers=cfg.workers)
    try:
        while pop.generation < cfg.generations:
            start = time.perf_counter()
            g = pop.generation
            variation(pop, cfg)
            evaluate(pop, cfg, spec, pool)
            record = _record_for(pop, g, time.perf_counter() - start)
            records.append(record)
            select(pop)
            if metrics_path is not None:
                with metrics_path.open("a") as fh:
                    fh.write(record.csv_row() + "\n")
            if (
                out_dir is not None
                and cfg.checkpoint_every
                and pop.generation % cfg.checkpoint_every == 0
            ):
                _write_checkpoint(out_dir, pop, cfg, records)
            if on_generation is not None and on_generation(pop, record) is False:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    if out_dir is not None:
        _write_checkpoint(out_dir, pop, cfg, records)
    return pop, records


def _write_checkpoint(out_dir, pop, cfg, records) -> None:
    path = out_dir / f"ckpt_{pop.generation}.bin"
    try:
        path.write_bytes(save_checkpoint(pop, cfg, records))
    except OSError as exc:
        raise RuntimeError(f"checkpoint write failed at {path}: {exc}") from exc


# ----------------------------------------------------------------------
# elite testing


def test_elite(pop: Population, spec: EnvSpec):
    """Score the elite on the ten held-out test seeds.

    Run ``r`` uses episode seeds ``TEST_SEEDS[r] + e`` for episode ``e``.
    The elite's standardizer is copied per run, never shared or written
    back. Returns ``(mean_score, per_seed_scores)``.
    """
    elite = elite_of(pop)
    scores = []
    for seed in TEST_SEEDS:
        standardizer = copy.deepcopy(elite.standardizer)
        seeds = [seed + e for e in range(spec.episodes_per_eval)]
        scores.append(run_episode_set(elite.genome, spec, standardizer, seeds))
    return sum(scores) / len(scores), scores


# ----------------------------------------------------------------------
# checkpointing


def _standardizer_to_obj(s: RunningStandardizer) -> dict:
    return {"dim": s.dim, "count": s.count, "mean": list(s.mean), "m2": list(s.m2)}


def _standardizer_from_obj(obj: dict) -> RunningStandardizer:
    s = RunningStandardizer(int(obj["dim"]))
    s.count = int(obj["count"])
    s.mean = [float(x) for x in obj["mean"]]
    s.m2 = [float(x) for x in obj["m2"]]
    return s


def save_checkpoint(pop: Population, cfg: EvolutionConfig, records) -> bytes:
    obj = {
        "config": asdict(cfg),
        "generation": pop.generation,
        "master_seed": pop.master_seed,
        "agents": [
            {
                "slot": a.slot,
                "fitness": None if math.isnan(a.fitness) else a.fitness,
                "genome": a.genome.to_obj(),
                "standardizer": _standardizer_to_obj(a.standardizer),
            }
            for a in pop.agents
        ],
        "records": [asdict(r) for r in records],
    }
    payload = json.dumps(obj, separators=(",", ":")).encode()
    return CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION) + payload


def load_checkpoint(data: bytes):
    """Decode checkpoint bytes into ``(population, config, records)``."""
    if len(data) < len(CHECKPOINT_MAGIC) + 4 or not data.startswith(
        CHECKPOINT_MAGIC
    ):
        raise CheckpointFormatError("not a DYNEVO checkpoint (bad magic header)")
    off = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", data, off)
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(
            f"unsupported checkpoint format version {version}"
        )
    try:
        obj = json.loads(data[off + 4 :].decode())
        cfg = EvolutionConfig(**obj["config"])
        agents = [
            Agent(
                DynamicNet.from_obj(rec["genome"]),
                _standardizer_from_obj(rec["standardizer"]),
                math.nan if rec["fitness"] is None else float(rec["fitness"]),
                int(rec["slot"]),
            )
            for rec in obj["agents"]
        ]
        pop = Population(agents, int(obj["generation"]), int(obj["master_seed"]))
        records = [RunRecord(**r) for r in obj["records"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"corrupt checkpoint: {exc}") from exc
    return pop, cfg, records
