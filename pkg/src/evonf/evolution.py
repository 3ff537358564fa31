"""Evolutionary search over chromosomes with gradient refinement of every offspring.

One generation keeps the ``ceil(elitism_fraction * N)`` best individuals unchanged and fills
the remaining slots with children bred by linear rank selection, whole-arithmetic/uniform
crossover and non-uniform mutation. Each child is decoded, refined by a few epochs of local
search with its own learning genes, and written back into its chromosome before it competes.

Every child slot draws from its own random stream, derived from ``(rng_seed, generation,
slot)``, so the outcome does not depend on how many worker threads evaluate a generation.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Final, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from evonf.common.exceptions import (
    ConfigError,
    DatasetEmptyError,
    EmptyPopulationError,
    InvalidParameterError,
    LayoutMismatchError,
    TrainingDivergedError,
)
from evonf.dataset import Dataset
from evonf.fuzzy import GAUSSIAN, MF_PARAMS
from evonf.genome import (
    Chromosome,
    EvoNFCandidate,
    GeneBounds,
    ModelTemplate,
    decode,
    encode,
    grid_chromosome,
    initial_chromosome,
    repair_selection,
)
from evonf.inference import count_active
from evonf.local_search import LocalSearchConfig, loss, refine

logger = logging.getLogger(__name__)

GENERATION_LOG_COLUMNS: Final = (
    "generation",
    "best_train_rmse",
    "mean_train_rmse",
    "best_test_rmse",
    "active_rules",
)


@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 40
    max_generations: int = 35
    selection_pressure: float = 0.50
    elitism_fraction: float = 0.05
    mutation_rate_start: float = 0.50
    mutation_rate_end: float = 0.05
    mutation_shape_b: float = 5.0
    gd_epochs_per_eval: int = 10
    rng_seed: int = 0
    mf_kind: str = GAUSSIAN
    mf_per_input: int = 2
    target_rmse: Optional[float] = None
    workers: int = 1
    evolve_consequents: bool = True
    init_angle: float = 45.0

    def __post_init__(self) -> None:
        problems = []
        if self.population_size < 2:
            problems.append("population_size must be >= 2")
        if self.max_generations < 0:
            problems.append("max_generations must be >= 0")
        if not 0.0 <= self.selection_pressure <= 1.0:
            problems.append("selection_pressure must lie in [0, 1]")
        if not 0.0 < self.elitism_fraction < 1.0:
            problems.append("elitism_fraction must lie in (0, 1)")
        if not 0.0 < self.mutation_rate_start <= 1.0:
            problems.append("mutation_rate_start must lie in (0, 1]")
        if not 0.0 <= self.mutation_rate_end <= 1.0:
            problems.append("mutation_rate_end must lie in [0, 1]")
        if not self.mutation_shape_b > 0.0:
            problems.append("mutation_shape_b must be > 0")
        if self.gd_epochs_per_eval < 0:
            problems.append("gd_epochs_per_eval must be >= 0")
        if self.mf_kind not in MF_PARAMS:
            problems.append(f"mf_kind must be one of {sorted(MF_PARAMS)}")
        if self.mf_per_input < 1:
            problems.append("mf_per_input must be >= 1")
        if self.target_rmse is not None and not self.target_rmse >= 0.0:
            problems.append("target_rmse must be >= 0")
        if self.workers < 1:
            problems.append("workers must be >= 1")
        if not 0.0 < self.init_angle < 90.0:
            problems.append("init_angle must lie in (0, 90)")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def n_elite(self) -> int:
        return min(math.ceil(self.elitism_fraction * self.population_size), self.population_size)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MutationSchedule:
    t: int
    t_max: int
    b: float = 5.0

    def __post_init__(self) -> None:
        if not 0 <= self.t <= self.t_max:
            raise InvalidParameterError(f"Generation {self.t} outside [0, {self.t_max}]")
        if not self.b > 0:
            raise InvalidParameterError(f"Mutation shape b must be > 0, got {self.b}")

    @property
    def decay(self) -> float:
        """``(1 - t / t_max) ^ b``; 0 once the last generation is reached."""
        if self.t_max == 0:
            return 0.0
        return (1.0 - self.t / self.t_max) ** self.b


@dataclass(frozen=True)
class GenerationLog:
    generation: int
    best_train_rmse: float
    mean_train_rmse: float
    best_test_rmse: float
    active_rules: int

    def __str__(self) -> str:
        return (
            f"generation {self.generation}: best train rmse {self.best_train_rmse:.6g},"
            f" mean {self.mean_train_rmse:.6g}, test {self.best_test_rmse:.6g},"
            f" {self.active_rules} active rules"
        )


class HasFitness(Protocol):
    @property
    def fitness(self) -> Optional[float]: ...


@dataclass
class Individual:
    chromosome: Chromosome
    fitness: float


def mutation_step(x: float, gamma: float, sched: MutationSchedule) -> float:
    """``x * (1 - gamma ^ ((1 - t / t_max) ^ b))``, the size of a non-uniform mutation."""
    return x * (1.0 - gamma**sched.decay)


def mutation_rate(t: int, t_max: int, start: float = 0.5, end: float = 0.05) -> float:
    """Per-gene mutation probability, decaying linearly from ``start`` to ``end``."""
    if t_max == 0:
        return start
    return start + (end - start) * t / t_max


def nonuniform_mutate(
    gene: float, bounds: GeneBounds, sched: MutationSchedule, rng: np.random.Generator
) -> float:
    """Move ``gene`` towards one of its bounds by a schedule dependent random fraction."""
    omega = rng.random() < 0.5
    gamma = rng.random()
    if omega:
        mutated = gene - mutation_step(gene - bounds.lo, gamma, sched)
    else:
        mutated = gene + mutation_step(bounds.hi - gene, gamma, sched)
    return min(max(mutated, bounds.lo), bounds.hi)


def mutate(
    chrom: Chromosome,
    sched: MutationSchedule,
    rate: float,
    rng: np.random.Generator,
    frozen: Optional[np.ndarray] = None,
) -> Chromosome:
    """Mutate each real gene with probability ``rate`` and flip each rule bit likewise.

    Genes marked in ``frozen`` are left alone.
    """
    layout = chrom.layout
    real = chrom.real
    n = real.size
    chosen = rng.random(n) < rate
    if frozen is not None:
        chosen &= ~frozen
    down = rng.random(n) < 0.5
    gamma = rng.random(n)
    shrink = 1.0 - gamma**sched.decay
    mutated = np.where(
        down,
        real - (real - layout.lower) * shrink,
        real + (layout.upper - real) * shrink,
    )
    real = np.clip(np.where(chosen, mutated, real), layout.lower, layout.upper)
    flips = rng.random(layout.n_rules) < rate
    return Chromosome(real, repair_selection(chrom.bits ^ flips), layout)


def rank_probabilities(n: int, pressure: float = 0.5) -> np.ndarray:
    """Selection probabilities by rank, best first.

    They fall linearly from ``(2 - pressure) / n`` for the best to ``pressure / n`` for the
    worst individual.
    """
    if n < 1:
        raise EmptyPopulationError("Cannot rank an empty population.")
    if n == 1:
        return np.ones(1)
    best, worst = (2.0 - pressure) / n, pressure / n
    return np.linspace(best, worst, n)


def rank_select(
    population: Sequence[HasFitness], pressure: float, rng: np.random.Generator
) -> int:
    """Index of a parent chosen by linear ranking on fitness (lower is better).

    Ties are ranked in random order.
    """
    n = len(population)
    if n == 0:
        raise EmptyPopulationError("Cannot select from an empty population.")
    fitness = np.array(
        [np.inf if ind.fitness is None else ind.fitness for ind in population], dtype=float
    )
    order = np.lexsort((rng.random(n), fitness))
    rank = rng.choice(n, p=rank_probabilities(n, pressure))
    return int(order[rank])


def crossover(
    a: Chromosome,
    b: Chromosome,
    rng: np.random.Generator,
    frozen: Optional[np.ndarray] = None,
    lam: Optional[float] = None,
) -> Tuple[Chromosome, Chromosome]:
    """Blend real genes with one random weight and mix rule bits uniformly.

    The first child is ``lam * a + (1 - lam) * b`` on real genes and the second the mirror
    image, so every child gene lies between its parents' genes. Frozen genes are inherited
    unchanged from ``a`` (first child) and ``b`` (second child).
    """
    if not a.layout.same_as(b.layout):
        raise LayoutMismatchError("Parents have different chromosome layouts.")
    if lam is None:
        lam = float(rng.random())
    low, high = np.minimum(a.real, b.real), np.maximum(a.real, b.real)
    first = np.clip(lam * a.real + (1.0 - lam) * b.real, low, high)
    second = np.clip((1.0 - lam) * a.real + lam * b.real, low, high)
    if frozen is not None:
        first = np.where(frozen, a.real, first)
        second = np.where(frozen, b.real, second)
    mask = rng.random(a.bits.size) < 0.5
    return (
        Chromosome(first, repair_selection(np.where(mask, a.bits, b.bits)), a.layout),
        Chromosome(second, repair_selection(np.where(mask, b.bits, a.bits)), a.layout),
    )


def evaluate_fitness(
    chrom: Chromosome,
    template: ModelTemplate,
    train: Dataset,
    gd_epochs: int,
    config: LocalSearchConfig = LocalSearchConfig(),
) -> Tuple[float, Chromosome]:
    """Refine the decoded model and write the refined parameters back.

    Returns:
        training RMSE after refinement (``inf`` when refinement diverged) and the refined
        chromosome, clamped into its bounds
    """
    candidate = decode(chrom, template)
    mf_lower, mf_upper = template.mf_bounds()
    try:
        model, history = refine(
            candidate.model, train, candidate.learn, gd_epochs, config, mf_lower, mf_upper
        )
        fitness = history[-1]
    except TrainingDivergedError as e:
        logger.warning("Candidate diverged during local search: %s", e)
        return math.inf, Chromosome(
            np.clip(chrom.real, chrom.layout.lower, chrom.layout.upper),
            candidate.model.rulebase.active.copy(),
            chrom.layout,
        )
    refined = encode(EvoNFCandidate(model, candidate.learn), template)
    clamped = np.clip(refined.real, refined.layout.lower, refined.layout.upper)
    if not np.array_equal(clamped, refined.real):
        refined = Chromosome(clamped, refined.bits, refined.layout)
        fitness = loss(decode(refined, template).model, train)
    if not math.isfinite(fitness):
        logger.warning("Non-finite fitness replaced by inf.")
        fitness = math.inf
    return fitness, refined


def _child_rng(seed: int, generation: int, slot: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(generation, slot)))


def _by_fitness(individual: Individual) -> float:
    return individual.fitness


def evolve(
    config: EvolutionConfig,
    train: Dataset,
    test: Dataset,
    template: Optional[ModelTemplate] = None,
    local_search: LocalSearchConfig = LocalSearchConfig(),
    on_generation: Optional[Callable[[GenerationLog], None]] = None,
) -> Tuple[EvoNFCandidate, List[GenerationLog]]:
    """Run the evolutionary search.

    Args:
        config: population, schedule and topology settings
        train: data used for fitness and local search
        test: held-out data, only reported in the log
        template: topology; grid partitioned over the training inputs when None
        local_search: parameter groups refined by gradient descent
        on_generation: called with every log entry as soon as it is available

    Returns:
        the best candidate ever evaluated and one log entry per generation, starting with the
        initial population as generation 0
    """
    if len(train) == 0 or len(test) == 0:
        raise DatasetEmptyError("Training and test data must both be non-empty.")
    topology = (
        template
        if template is not None
        else ModelTemplate.from_dataset(train, config.mf_kind, config.mf_per_input)
    )
    layout = topology.layout()
    frozen: Optional[np.ndarray] = None
    if not config.evolve_consequents:
        frozen = np.zeros(layout.n_real, dtype=bool)
        frozen[layout.consequent] = True

    def evaluate_all(chromosomes: List[Chromosome]) -> List[Individual]:
        def run(chrom: Chromosome) -> Individual:
            fitness, refined = evaluate_fitness(
                chrom, topology, train, config.gd_epochs_per_eval, local_search
            )
            return Individual(refined, fitness)

        if config.workers == 1:
            return [run(c) for c in chromosomes]
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(run, chromosomes))

    def record(generation: int, population: List[Individual]) -> GenerationLog:
        scores = np.array([ind.fitness for ind in population], dtype=float)
        leader = population[int(np.argmin(scores))]
        finite = scores[np.isfinite(scores)]
        model = decode(leader.chromosome, topology).model
        entry = GenerationLog(
            generation=generation,
            best_train_rmse=float(scores.min()),
            mean_train_rmse=float(finite.mean()) if finite.size else math.inf,
            best_test_rmse=loss(model, test),
            active_rules=count_active(model.rulebase),
        )
        logger.info("%s", entry)
        if on_generation is not None:
            on_generation(entry)
        return entry

    logger.info(
        "Evolving %d individuals for %d generations over %d rules (seed %d)",
        config.population_size,
        config.max_generations,
        topology.n_rules,
        config.rng_seed,
    )
    initial = [grid_chromosome(topology)] + [
        initial_chromosome(topology, _child_rng(config.rng_seed, 0, slot), config.init_angle)
        for slot in range(1, config.population_size)
    ]
    population = evaluate_all(initial)
    log = [record(0, population)]
    best = min(population, key=_by_fitness)

    for generation in range(1, config.max_generations + 1):
        if config.target_rmse is not None and best.fitness <= config.target_rmse:
            logger.info("Required error %g reached, stopping early.", config.target_rmse)
            break
        t = generation - 1
        sched = MutationSchedule(t, config.max_generations, config.mutation_shape_b)
        rate = mutation_rate(
            t, config.max_generations, config.mutation_rate_start, config.mutation_rate_end
        )
        ranked = sorted(population, key=_by_fitness)
        elites = ranked[: config.n_elite]
        children = []
        for slot in range(config.n_elite, config.population_size):
            rng = _child_rng(config.rng_seed, generation, slot)
            mother = population[rank_select(population, config.selection_pressure, rng)]
            father = population[rank_select(population, config.selection_pressure, rng)]
            child, _ = crossover(mother.chromosome, father.chromosome, rng, frozen)
            children.append(mutate(child, sched, rate, rng, frozen))
        population = elites + evaluate_all(children)
        log.append(record(generation, population))
        leader = min(population, key=_by_fitness)
        if leader.fitness < best.fitness:
            best = leader

    candidate = decode(best.chromosome, topology).with_fitness(best.fitness)
    logger.info(
        "Best candidate: train rmse %.6g with %d active rules",
        candidate.fitness,
        count_active(candidate.model.rulebase),
    )
    return candidate, log
