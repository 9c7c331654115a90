"""Model-space exploration: fuzzing, NSGA-II search, and random sampling.

A point in the physician-device model space is a genome: the parameter
vector (alpha, beta, lambda) plus a presence mask over the removable
physician edges. Two mutation operators realize the domain variations:
a bounded multiplicative perturbation of one parameter (factor drawn
uniformly from [1/k, k], clamped to bounds) and the removal of one
present removable edge (a physician who stops responding to an event).

All three strategies spend exactly `budget` SMC evaluations and share
the 0.8/0.2 parametric/structural operator mix where applicable.
Fuzzing keeps an archive of mutants that raised the maximum observed
violation likelihood for at least one requirement and mutates parents
drawn uniformly from it; NSGA-II minimizes the per-requirement
satisfaction probabilities; random search resamples the seed blindly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BadFactor,
    BadPopulation,
    BudgetZero,
    NothingToRemove,
    RaggedInput,
)
from .sha import ShaNetwork
from .smc import Estimate, Requirement, evaluate_requirements


@dataclass(frozen=True)
class Genome:
    params: tuple[tuple[str, float], ...]  # name -> value, fixed order
    edge_mask: tuple[bool, ...]  # removable physician edges, declaration order
    bounds: tuple[tuple[str, float, float], ...]
    edge_ids: tuple[str, ...]

    def param_dict(self) -> dict[str, float]:
        return dict(self.params)

    def bounds_dict(self) -> dict[str, tuple[float, float]]:
        return {name: (lo, hi) for name, lo, hi in self.bounds}

    def removed_edges(self) -> set[str]:
        return {eid for eid, present in zip(self.edge_ids, self.edge_mask) if not present}

    def with_params(self, params: dict[str, float]) -> "Genome":
        return replace(self, params=tuple((n, params[n]) for n, _ in self.params))

    def with_mask(self, mask: tuple[bool, ...]) -> "Genome":
        return replace(self, edge_mask=mask)


@dataclass
class EvaluatedMutant:
    genome: Genome
    estimates: dict[str, Estimate]
    scores: dict[str, float]  # distance past the threshold, 0 if passing
    is_failure: bool
    index: int = 0  # evaluation order within the campaign


@dataclass
class Archive:
    members: list[EvaluatedMutant] = field(default_factory=list)
    max_violation: dict[str, float] = field(default_factory=dict)

    def consider(self, mutant: EvaluatedMutant, requirements: list[Requirement]) -> bool:
        """Admit iff some violation likelihood strictly exceeds its running max."""
        likelihoods = {
            r.name: r.violation_likelihood(mutant.estimates[r.name].p_hat)
            for r in requirements
        }
        admit = any(
            likelihoods[name] > self.max_violation.get(name, 0.0) for name in likelihoods
        )
        for name, value in likelihoods.items():
            self.max_violation[name] = max(self.max_violation.get(name, 0.0), value)
        if admit:
            self.members.append(mutant)
        return admit


class ModelSpace:
    """Binds the seed network to the genome encoding and SMC settings."""

    def __init__(
        self,
        seed_network: ShaNetwork,
        requirements: list[Requirement],
        epsilon: float = 0.05,
        delta: float = 0.05,
    ):
        self.network = seed_network
        self.requirements = requirements
        self.epsilon = epsilon
        self.delta = delta
        idx = seed_network.controller_index()
        if idx is None:
            raise ValueError("seed network has no controller automaton")
        self.controller = seed_network.automata[idx].name
        self.removable = tuple(
            e.edge_id for e in seed_network.automata[idx].edges if e.removable
        )
        self.timings: dict[str, float] = {"mutation": 0.0, "smc": 0.0}
        self.evaluations = 0

    def seed_genome(self) -> Genome:
        params = tuple(sorted(self.network.params.items()))
        bounds = tuple(
            (name, *self.network.param_bounds[name]) for name, _ in params
        )
        return Genome(params, (True,) * len(self.removable), bounds, self.removable)

    def instantiate(self, genome: Genome) -> ShaNetwork:
        net = self.network.with_params(genome.param_dict())
        removed = genome.removed_edges()
        if removed:
            net = net.without_edges(removed, automaton=self.controller)
        return net

    def evaluate(self, genome: Genome, smc_seed: int) -> EvaluatedMutant:
        t0 = time.perf_counter()
        estimates = evaluate_requirements(
            self.instantiate(genome), self.requirements, self.epsilon, self.delta, smc_seed
        )
        self.timings["smc"] += time.perf_counter() - t0
        scores = {
            r.name: r.violation_score(estimates[r.name].p_hat) for r in self.requirements
        }
        mutant = EvaluatedMutant(
            genome, estimates, scores, any(s > 0 for s in scores.values()), self.evaluations
        )
        self.evaluations += 1
        return mutant


def _smc_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# mutation operators


def mutate_parameter(genome: Genome, rng: np.random.Generator, k: float = 1.5) -> Genome:
    """Scale one uniformly chosen parameter by a factor in [1/k, k], clamped."""
    if k <= 1:
        raise BadFactor(f"mutation factor must exceed 1, got {k}")
    params = genome.param_dict()
    bounds = genome.bounds_dict()
    name = list(params)[rng.integers(len(params))]
    factor = rng.uniform(1.0 / k, k)
    lo, hi = bounds[name]
    params[name] = min(max(params[name] * factor, lo), hi)
    return genome.with_params(params)


def mutate_structure(genome: Genome, rng: np.random.Generator) -> Genome:
    """Remove one present removable edge."""
    present = [i for i, bit in enumerate(genome.edge_mask) if bit]
    if not present:
        raise NothingToRemove("every removable edge is already absent")
    victim = present[rng.integers(len(present))]
    mask = list(genome.edge_mask)
    mask[victim] = False
    return genome.with_mask(tuple(mask))


def _mutate_mixed(genome: Genome, rng: np.random.Generator, k: float,
                  p_param: float = 0.8) -> Genome:
    """One operator application: parametric with probability p_param.

    Falls back to a parameter mutation when no removable edge is left.
    """
    if rng.random() < p_param:
        return mutate_parameter(genome, rng, k)
    try:
        return mutate_structure(genome, rng)
    except NothingToRemove:
        return mutate_parameter(genome, rng, k)


# ---------------------------------------------------------------------------
# strategies


def fuzz(
    space: ModelSpace,
    budget: int,
    master_seed: int = 0,
    k: float = 1.5,
) -> tuple[list[EvaluatedMutant], Archive]:
    """Archive-guided mutational fuzzing; returns (failures, archive)."""
    if budget < 1:
        raise BudgetZero("fuzzing needs a budget of at least 1 evaluation")
    rng = np.random.default_rng(master_seed)
    archive = Archive()
    failures: list[EvaluatedMutant] = []
    seed = space.seed_genome()

    def record(mutant: EvaluatedMutant):
        archive.consider(mutant, space.requirements)
        if mutant.is_failure:
            failures.append(mutant)

    record(space.evaluate(seed, _smc_seed(master_seed, 0)))
    for i in range(1, budget):
        parent = (
            archive.members[rng.integers(len(archive.members))].genome
            if archive.members
            else seed
        )
        t0 = time.perf_counter()
        child = _mutate_mixed(parent, rng, k)
        space.timings["mutation"] += time.perf_counter() - t0
        record(space.evaluate(child, _smc_seed(master_seed, i)))
    return failures, archive


def nondominated_sort(points: list[tuple[float, ...]]) -> list[list[int]]:
    """Pareto fronts (minimization); returns index lists, best front first."""
    if not points:
        return []
    m = len(points[0])
    if any(len(p) != m for p in points):
        raise RaggedInput("objective vectors must share a length")

    def dominates(p, q):
        return all(a <= b for a, b in zip(p, q)) and any(a < b for a, b in zip(p, q))

    remaining = list(range(len(points)))
    fronts: list[list[int]] = []
    while remaining:
        front = [
            i
            for i in remaining
            if not any(dominates(points[j], points[i]) for j in remaining if j != i)
        ]
        fronts.append(front)
        remaining = [i for i in remaining if i not in front]
    return fronts


def _crowding(points: list[tuple[float, ...]], front: list[int]) -> dict[int, float]:
    distance = {i: 0.0 for i in front}
    if len(front) <= 2:
        return {i: float("inf") for i in front}
    m = len(points[front[0]])
    for obj in range(m):
        ordered = sorted(front, key=lambda i: points[i][obj])
        lo, hi = points[ordered[0]][obj], points[ordered[-1]][obj]
        distance[ordered[0]] = distance[ordered[-1]] = float("inf")
        if hi == lo:
            continue
        for pos in range(1, len(ordered) - 1):
            gap = points[ordered[pos + 1]][obj] - points[ordered[pos - 1]][obj]
            distance[ordered[pos]] += gap / (hi - lo)
    return distance


def nsga2(
    space: ModelSpace,
    pop: int = 10,
    gens: int = 50,
    master_seed: int = 0,
    k: float = 1.5,
) -> list[EvaluatedMutant]:
    """NSGA-II minimizing each requirement's satisfaction probability.

    Performs exactly pop * gens evaluations; every failing evaluation
    (in any generation) lands in the returned failure set.
    """
    if pop < 4 or pop % 2:
        raise BadPopulation("population must be even and at least 4")
    rng = np.random.default_rng(master_seed)
    seed = space.seed_genome()
    failures: list[EvaluatedMutant] = []
    eval_count = 0

    def evaluate(genome: Genome) -> EvaluatedMutant:
        nonlocal eval_count
        mutant = space.evaluate(genome, _smc_seed(master_seed, eval_count))
        eval_count += 1
        if mutant.is_failure:
            failures.append(mutant)
        return mutant

    def objectives(mutant: EvaluatedMutant) -> tuple[float, ...]:
        return tuple(
            1.0 - r.violation_likelihood(mutant.estimates[r.name].p_hat)
            for r in space.requirements
        )

    population = [evaluate(_mutate_mixed(seed, rng, k)) for _ in range(pop)]

    def rank_and_crowd(members: list[EvaluatedMutant]):
        pts = [objectives(m) for m in members]
        fronts = nondominated_sort(pts)
        rank = {}
        crowd = {}
        for fi, front in enumerate(fronts):
            dist = _crowding(pts, front)
            for i in front:
                rank[i] = fi
                crowd[i] = dist[i]
        return rank, crowd

    def tournament(rank, crowd, n) -> int:
        a, b = rng.integers(n), rng.integers(n)
        if rank[a] != rank[b]:
            return a if rank[a] < rank[b] else b
        if crowd[a] != crowd[b]:
            return a if crowd[a] > crowd[b] else b
        return min(a, b)

    def crossover(g1: Genome, g2: Genome) -> Genome:
        params = {}
        for (name, v1), (_, v2) in zip(g1.params, g2.params):
            params[name] = v1 if rng.random() < 0.5 else v2
        mask = tuple(
            b1 if rng.random() < 0.5 else b2 for b1, b2 in zip(g1.edge_mask, g2.edge_mask)
        )
        return g1.with_params(params).with_mask(mask)

    for _ in range(gens - 1):
        rank, crowd = rank_and_crowd(population)
        offspring = []
        for _ in range(pop):
            p1 = population[tournament(rank, crowd, pop)].genome
            p2 = population[tournament(rank, crowd, pop)].genome
            t0 = time.perf_counter()
            child = _mutate_mixed(crossover(p1, p2), rng, k)
            space.timings["mutation"] += time.perf_counter() - t0
            offspring.append(evaluate(child))
        merged = population + offspring
        rank, crowd = rank_and_crowd(merged)
        order = sorted(range(len(merged)), key=lambda i: (rank[i], -crowd[i], i))
        population = [merged[i] for i in order[:pop]]
    return failures


def random_search(
    space: ModelSpace,
    budget: int,
    master_seed: int = 0,
) -> list[EvaluatedMutant]:
    """Uniform random mutations of the original seed, one per evaluation."""
    if budget < 1:
        raise BudgetZero("random search needs a budget of at least 1 evaluation")
    rng = np.random.default_rng(master_seed)
    seed = space.seed_genome()
    failures = []
    for i in range(budget):
        t0 = time.perf_counter()
        if rng.random() < 0.5:
            params = {
                name: rng.uniform(lo, hi) for name, lo, hi in seed.bounds
            }
            genome = seed.with_params(params)
        else:
            mask = tuple(bool(rng.integers(2)) for _ in seed.edge_mask)
            genome = seed.with_mask(mask)
        space.timings["mutation"] += time.perf_counter() - t0
        mutant = space.evaluate(genome, _smc_seed(master_seed, i))
        if mutant.is_failure:
            failures.append(mutant)
    return failures
