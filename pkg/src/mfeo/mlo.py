"""Modified Lion Optimization: the lion optimizer with a PSO position update.

Everything here *maximises*. The population is stored as parallel numpy
arrays (structure of arrays); :class:`Lion` is only a read-only snapshot.

One iteration runs, in order: hunting, moving to a safe place, roaming
(resident males and nomads), mating, the PSO velocity/position update with
re-evaluation, and population maintenance (migration, vacancy filling and
culling the weakest nomads back to ``pop_size``). Personal and global
bests are refreshed on every evaluation, so ``pbest >= fitness`` holds at
all times and the recorded best never decreases.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

PHASES = ("hunt", "safe_place", "roam", "mate", "velocity", "maintenance")


class EvaluationError(ValueError):
    """The fitness function returned a non-finite value or raised."""


@dataclass(frozen=True)
class MloConfig:
    dim: int
    lo: float | np.ndarray = 0.0
    hi: float | np.ndarray = 1.0
    pop_size: int = 50
    prides: int = 4
    nomad_fraction: float = 0.2
    female_fraction: float = 0.8
    roaming_fraction: float = 0.2
    mating_prob: float = 0.3
    immigration_rate: float = 0.4
    mutation_prob: float = 0.05
    phi1: float = 1.5
    phi2: float = 1.5
    velocity_clamp: float = 0.2
    max_iters: int = 100
    seed: int = 0

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.broadcast_to(np.asarray(self.lo, dtype=np.float64), (self.dim,)).copy()
        hi = np.broadcast_to(np.asarray(self.hi, dtype=np.float64), (self.dim,)).copy()
        return lo, hi

    def validate(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        lo, hi = self.bounds()
        if not np.all(lo < hi):
            raise ValueError("every lower bound must be below its upper bound")
        if self.pop_size < 4:
            raise ValueError("pop_size must be >= 4")
        if self.prides < 1:
            raise ValueError("prides must be >= 1")
        for name in ("nomad_fraction", "female_fraction", "roaming_fraction",
                     "mating_prob", "immigration_rate"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError("mutation_prob must lie in [0, 1]")
        if self.phi1 <= 0 or self.phi2 <= 0:
            raise ValueError("phi1 and phi2 must be positive")
        if self.velocity_clamp <= 0:
            raise ValueError("velocity_clamp must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        n_nomads = _nomad_count(self)
        if self.pop_size - n_nomads < 2 * self.prides:
            raise ValueError(
                f"{self.pop_size - n_nomads} residents cannot fill {self.prides} prides "
                "with at least one female and one male each"
            )


@dataclass(frozen=True)
class Lion:
    position: np.ndarray
    velocity: np.ndarray
    fitness: float
    pbest_position: np.ndarray
    pbest_fitness: float
    female: bool
    pride: int  # -1 for nomads

    @property
    def nomad(self) -> bool:
        return self.pride < 0


@dataclass
class BestHistory:
    best_fitness: list[float] = field(default_factory=list)
    best_position: list[np.ndarray] = field(default_factory=list)
    mean_fitness: list[float] = field(default_factory=list)
    mask_size: list[int | None] = field(default_factory=list)
    evaluations: int = 0

    @property
    def gbest_fitness(self) -> float:
        return self.best_fitness[-1]

    @property
    def gbest_position(self) -> np.ndarray:
        return self.best_position[-1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "best_fitness", "mean_fitness", "mask_size"])
            for it, (b, m, s) in enumerate(zip(self.best_fitness, self.mean_fitness, self.mask_size)):
                w.writerow([it, "%.17g" % b, "%.17g" % m, "" if s is None else s])


def evaluate(position, evaluator: Callable[[np.ndarray], float]) -> float:
    try:
        value = float(evaluator(position))
    except EvaluationError:
        raise
    except Exception as exc:
        raise EvaluationError(f"evaluator raised at position {position!r}: {exc}") from exc
    if not math.isfinite(value):
        raise EvaluationError(f"evaluator returned {value} at position {position!r}")
    return value


# -- operators -------------------------------------------------------------

def hunter_move(hunter, prey, rng, lo=None, hi=None) -> np.ndarray:
    """Uniform point between hunter and prey, drawn per coordinate."""
    hunter = np.asarray(hunter, dtype=np.float64)
    prey = np.asarray(prey, dtype=np.float64)
    a, b = np.minimum(hunter, prey), np.maximum(hunter, prey)
    new = a + rng.random(hunter.shape) * (b - a)
    new = np.where(a == b, hunter, new)
    return new if lo is None else np.clip(new, lo, hi)


def prey_escape(prey, hunter, improvement: float, rng, lo=None, hi=None) -> np.ndarray:
    """The prey flees from a hunter that improved by ``improvement``."""
    prey = np.asarray(prey, dtype=np.float64)
    new = prey + rng.random() * improvement * (prey - np.asarray(hunter))
    return new if lo is None else np.clip(new, lo, hi)


def improvement_ratio(old: float, new: float) -> float:
    """Relative fitness improvement; the raw difference when ``old`` is 0."""
    return (new - old) / abs(old) if old != 0 else new - old


def hunt(positions, fitness, prey, evaluator, rng, lo, hi):
    """Cooperative hunt of one group of hunters.

    Hunters are split at random into three groups; the group with the
    highest summed fitness is the centre. Every hunter steps to a random
    point between itself and the prey, and each one that improves makes
    the prey escape. Returns ``(positions, fitness, prey, groups, centre)``.
    """
    positions = np.array(positions, dtype=np.float64, copy=True)
    fitness = np.array(fitness, dtype=np.float64, copy=True)
    prey = np.array(prey, dtype=np.float64, copy=True)
    groups = rng.integers(0, 3, len(positions))
    totals = [fitness[groups == g].sum() if np.any(groups == g) else -np.inf for g in range(3)]
    centre = int(np.argmax(totals))
    for i in range(len(positions)):
        new = hunter_move(positions[i], prey, rng, lo, hi)
        f = evaluate(new, evaluator)
        if f > fitness[i]:
            prey = prey_escape(prey, new, improvement_ratio(fitness[i], f), rng, lo, hi)
        positions[i], fitness[i] = new, f
    return positions, fitness, prey, groups, centre


def tournament_size(success_counts):
    """``max(2, ceil(T/2))`` per pride."""
    counts = np.asarray(success_counts)
    if np.any(counts < 0):
        raise ValueError("success counts must be non-negative")
    return np.maximum(2, np.ceil(counts / 2.0)).astype(np.int64)


def tournament_select(candidate_ids, candidate_fitness, size: int, rng) -> int:
    """Best of ``size`` distinct random candidates; ties go to the lower id."""
    candidate_ids = np.asarray(candidate_ids)
    size = int(min(size, len(candidate_ids)))
    pick = np.sort(rng.choice(len(candidate_ids), size, replace=False))
    fit = np.asarray(candidate_fitness)[pick]
    return int(candidate_ids[pick[int(np.argmax(fit))]])


def orthogonal_unit(direction, rng) -> np.ndarray:
    """Random unit vector perpendicular to ``direction`` (zero in 1-D)."""
    direction = np.asarray(direction, dtype=np.float64)
    if direction.size < 2:
        return np.zeros_like(direction)
    while True:
        v = rng.standard_normal(direction.shape)
        v -= np.dot(v, direction) * direction
        n = np.linalg.norm(v)
        if n > 1e-12:
            return v / n


def safe_place_move(female, selected, rng, lo=None, hi=None) -> np.ndarray:
    """Move a female toward the tournament-selected territory point.

    ``F' = F + 2D r SP1 + u tan(theta) D SP2`` with ``D`` the distance to
    the selected point, ``SP1`` the unit vector toward it, ``SP2`` a random
    unit vector perpendicular to ``SP1``, ``r ~ U(0,1)``, ``u ~ U(-1,1)``
    and ``theta ~ U(-pi/6, pi/6)``. Draw order: r, u, theta, then SP2.
    """
    female = np.asarray(female, dtype=np.float64)
    delta = np.asarray(selected, dtype=np.float64) - female
    dist = float(np.linalg.norm(delta))
    if dist == 0.0:
        return female.copy()
    sp1 = delta / dist
    r = rng.random()
    u = rng.uniform(-1.0, 1.0)
    theta = rng.uniform(-np.pi / 6, np.pi / 6)
    sp2 = orthogonal_unit(sp1, rng)
    new = female + 2.0 * dist * r * sp1 + u * math.tan(theta) * dist * sp2
    return new if lo is None else np.clip(new, lo, hi)


def roam_step(male, target, rng, lo=None, hi=None) -> np.ndarray:
    """Step ``n ~ U(0, 2D)`` from ``male`` toward ``target``."""
    male = np.asarray(male, dtype=np.float64)
    delta = np.asarray(target, dtype=np.float64) - male
    dist = float(np.linalg.norm(delta))
    if dist == 0.0:
        return male.copy()
    n = rng.uniform(0.0, 2.0 * dist)
    new = male + n * delta / dist
    return new if lo is None else np.clip(new, lo, hi)


def nomad_probability(costs) -> np.ndarray:
    """Per-nomad redraw probability ``0.1 + min(0.5, (c - best)/|best|)``.

    ``costs`` are minimisation values (negated fitness). A best cost of
    exactly zero pins every probability at the 0.6 cap.
    """
    costs = np.asarray(costs, dtype=np.float64)
    best = costs.min()
    if best == 0.0:
        return np.full(costs.shape, 0.6)
    return 0.1 + np.minimum(0.5, (costs - best) / abs(best))


def nomad_move(position, prob: float, rng, lo, hi) -> np.ndarray:
    """Redraw each coordinate uniformly in bounds with probability ``prob``."""
    position = np.asarray(position, dtype=np.float64)
    keep = rng.random(position.shape) > prob
    fresh = rng.uniform(lo, hi)
    return np.where(keep, position, fresh)


def mate(female, males, selected, chi: float, rng=None, lo=None, hi=None, mutation_prob: float = 0.0):
    """Blend a female with the selected resident males into two offspring.

    ``off1 = chi F + sum_i (1-chi)/S M_i SU_i`` and ``off2`` with ``chi``
    and ``1-chi`` swapped, where ``S`` is the number of selected males.
    Each gene is then redrawn uniformly in bounds with ``mutation_prob``.
    """
    female = np.asarray(female, dtype=np.float64)
    males = np.atleast_2d(np.asarray(males, dtype=np.float64))
    su = np.asarray(selected, dtype=np.float64)
    n_sel = su.sum()
    if n_sel < 1:
        raise ValueError("at least one male must be selected for mating")
    male_part = (su[:, None] * males).sum(axis=0) / n_sel
    off1 = chi * female + (1.0 - chi) * male_part
    off2 = (1.0 - chi) * female + chi * male_part
    if mutation_prob > 0.0:
        for off in (off1, off2):
            hit = rng.random(off.shape) < mutation_prob
            off[hit] = rng.uniform(lo, hi)[hit]
    return off1, off2


def velocity_update(position, velocity, pbest, gbest, phi1, phi2, rng=None,
                    vmax=None, lo=None, hi=None, r1=None, r2=None):
    """PSO step ``V' = V + phi1 r1 (pbest - x) + phi2 r2 (gbest - x)``, ``x' = x + V'``.

    ``r1`` and ``r2`` are drawn from ``rng`` (in that order) unless given.
    Velocity is clamped to ``+-vmax`` and position to the bounds.
    """
    position = np.asarray(position, dtype=np.float64)
    if r1 is None:
        r1 = rng.random()
    if r2 is None:
        r2 = rng.random()
    v = (np.asarray(velocity, dtype=np.float64)
         + phi1 * r1 * (np.asarray(pbest) - position)
         + phi2 * r2 * (np.asarray(gbest) - position))
    if vmax is not None:
        v = np.clip(v, -vmax, vmax)
    x = position + v
    if lo is not None:
        x = np.clip(x, lo, hi)
    return x, v


# -- population ------------------------------------------------------------

def _nomad_count(cfg: MloConfig) -> int:
    return max(1, int(round(cfg.nomad_fraction * cfg.pop_size)))


class Population:
    """Parallel arrays describing every lion, plus the global best."""

    def __init__(self, cfg: MloConfig, evaluator, rng):
        self.cfg = cfg
        self.evaluator = evaluator
        self.rng = rng
        self.lo, self.hi = cfg.bounds()
        self.vmax = cfg.velocity_clamp * (self.hi - self.lo)
        self.evaluations = 0
        N, d = cfg.pop_size, cfg.dim

        self.pos = rng.uniform(self.lo, self.hi, (N, d))
        self.vel = np.zeros((N, d))
        self.female = np.zeros(N, dtype=bool)
        self.pride = np.full(N, -1, dtype=np.int64)

        n_nomads = _nomad_count(cfg)
        order = rng.permutation(N)
        nomads, residents = order[:n_nomads], order[n_nomads:]
        self.female_quota = np.zeros(cfg.prides, dtype=np.int64)
        self.male_quota = np.zeros(cfg.prides, dtype=np.int64)
        for j, members in enumerate(np.array_split(residents, cfg.prides)):
            members = np.sort(members)
            n_f = min(max(1, int(round(cfg.female_fraction * len(members)))), len(members) - 1)
            self.pride[members] = j
            self.female[rng.choice(members, n_f, replace=False)] = True
            self.female_quota[j] = n_f
            self.male_quota[j] = len(members) - n_f
        n_nf = int(round((1.0 - cfg.female_fraction) * n_nomads))
        if n_nf:
            self.female[rng.choice(np.sort(nomads), n_nf, replace=False)] = True
        self.nomad_quota = n_nomads

        self.fit = np.array([self._eval(p) for p in self.pos])
        self.pbest_pos = self.pos.copy()
        self.pbest_fit = self.fit.copy()
        self.success = np.zeros(N, dtype=bool)
        g = int(np.argmax(self.fit))
        self.gbest_pos = self.pos[g].copy()
        self.gbest_fit = float(self.fit[g])

    def __len__(self):
        return len(self.pos)

    def _eval(self, position):
        self.evaluations += 1
        return evaluate(position, self.evaluator)

    def assess(self, i: int, position):
        """Move lion ``i`` to ``position``, evaluate, refresh bests."""
        f = self._eval(position)
        self.pos[i] = position
        self.fit[i] = f
        self._refresh(i)
        return f

    def _refresh(self, i):
        if self.fit[i] > self.pbest_fit[i]:
            self.pbest_fit[i] = self.fit[i]
            self.pbest_pos[i] = self.pos[i]
            self.success[i] = True
        if self.fit[i] > self.gbest_fit:
            self.gbest_fit = float(self.fit[i])
            self.gbest_pos = self.pos[i].copy()

    def lion(self, i: int) -> Lion:
        return Lion(self.pos[i].copy(), self.vel[i].copy(), float(self.fit[i]),
                    self.pbest_pos[i].copy(), float(self.pbest_fit[i]),
                    bool(self.female[i]), int(self.pride[i]))

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.pride == j)

    def append(self, position, female: bool, pride: int, fitness: float):
        self.pos = np.vstack([self.pos, position])
        self.vel = np.vstack([self.vel, np.zeros_like(position)])
        self.fit = np.append(self.fit, fitness)
        self.pbest_pos = np.vstack([self.pbest_pos, position])
        self.pbest_fit = np.append(self.pbest_fit, fitness)
        self.female = np.append(self.female, female)
        self.pride = np.append(self.pride, pride)
        self.success = np.append(self.success, False)
        i = len(self.pos) - 1
        if fitness > self.gbest_fit:
            self.gbest_fit = float(fitness)
            self.gbest_pos = np.array(position, copy=True)
        return i

    def remove(self, idx):
        keep = np.ones(len(self.pos), dtype=bool)
        keep[np.asarray(idx, dtype=np.int64)] = False
        for name in ("pos", "vel", "fit", "pbest_pos", "pbest_fit", "female", "pride", "success"):
            setattr(self, name, getattr(self, name)[keep])


def _weakest_first(ids, fitness):
    """Order ``ids`` from weakest to strongest; among equals the later id is weaker."""
    ids = np.asarray(ids)
    return ids[np.lexsort((-ids, fitness[ids]))]


def _strongest_first(ids, fitness):
    ids = np.asarray(ids)
    return ids[np.lexsort((ids, -fitness[ids]))]


# -- phases ----------------------------------------------------------------

def _phase_hunt(pop: Population, rng):
    hunters_by_pride = {}
    for j in range(pop.cfg.prides):
        females = pop.members(j)[pop.female[pop.members(j)]]
        if len(females) == 0:
            hunters_by_pride[j] = np.array([], dtype=np.int64)
            continue
        chosen = females[rng.random(len(females)) < 0.5]
        if len(chosen) == 0:
            chosen = females[[rng.integers(len(females))]]
        hunters_by_pride[j] = chosen
        prey = pop.pos[chosen].mean(axis=0)
        new_pos, new_fit, _, _, _ = hunt(pop.pos[chosen], pop.fit[chosen], prey,
                                         pop.evaluator, rng, pop.lo, pop.hi)
        pop.evaluations += len(chosen)
        for k, i in enumerate(chosen):
            pop.pos[i], pop.fit[i] = new_pos[k], new_fit[k]
            pop._refresh(i)
    return hunters_by_pride


def _phase_safe_place(pop: Population, rng, hunters_by_pride, sizes):
    for j in range(pop.cfg.prides):
        members = pop.members(j)
        females = members[pop.female[members]]
        for i in females[~np.isin(females, hunters_by_pride.get(j, []))]:
            winner = tournament_select(members, pop.pbest_fit[members], sizes[j], rng)
            new = safe_place_move(pop.pos[i], pop.pbest_pos[winner], rng, pop.lo, pop.hi)
            pop.assess(i, new)


def _phase_roam(pop: Population, rng):
    cfg = pop.cfg
    for j in range(cfg.prides):
        members = pop.members(j)
        n_visit = max(1, math.ceil(cfg.roaming_fraction * len(members)))
        for i in members[~pop.female[members]]:
            targets = np.sort(rng.choice(members, n_visit, replace=False))
            for t in targets:
                pop.assess(i, roam_step(pop.pos[i], pop.pbest_pos[t], rng, pop.lo, pop.hi))
    nomads = np.flatnonzero(pop.pride < 0)
    if len(nomads):
        probs = nomad_probability(-pop.fit[nomads])
        for i, p in zip(nomads, probs):
            pop.assess(i, nomad_move(pop.pos[i], p, rng, pop.lo, pop.hi))


def _phase_mate(pop: Population, rng):
    cfg = pop.cfg
    offspring = []
    for j in range(cfg.prides):
        members = pop.members(j)
        females = members[pop.female[members]]
        males = members[~pop.female[members]]
        if len(males) == 0:
            continue
        for i in females:
            if rng.random() >= cfg.mating_prob:
                continue
            su = rng.random(len(males)) < 0.5
            if not su.any():
                su[rng.integers(len(males))] = True
            chi = float(np.clip(rng.normal(0.5, 0.1), 0.0, 1.0))
            o1, o2 = mate(pop.pos[i], pop.pos[males], su, chi, rng, pop.lo, pop.hi, cfg.mutation_prob)
            first_female = bool(rng.random() < 0.5)
            offspring.append((o1, first_female, j))
            offspring.append((o2, not first_female, j))
    for position, female, j in offspring:
        pop.append(position, female, j, pop._eval(position))


def _phase_velocity(pop: Population, rng):
    cfg = pop.cfg
    for i in range(len(pop)):
        x, v = velocity_update(pop.pos[i], pop.vel[i], pop.pbest_pos[i], pop.gbest_pos,
                               cfg.phi1, cfg.phi2, rng, pop.vmax, pop.lo, pop.hi)
        pop.vel[i] = v
        pop.assess(i, x)


def _phase_maintenance(pop: Population, rng):
    cfg = pop.cfg
    for j in range(cfg.prides):
        members = pop.members(j)
        females = members[pop.female[members]]
        surplus = max(0, len(females) - int(pop.female_quota[j]))
        n_leave = min(len(females), surplus + int(cfg.immigration_rate * pop.female_quota[j]))
        if n_leave:
            pop.pride[np.sort(rng.choice(females, n_leave, replace=False))] = -1
        males = members[~pop.female[members]]
        extra = len(males) - int(pop.male_quota[j])
        if extra > 0:
            pop.pride[_weakest_first(males, pop.fit)[:extra]] = -1

    for j in range(cfg.prides):
        members = pop.members(j)
        vacancies = int(pop.female_quota[j]) - int(pop.female[members].sum())
        if vacancies <= 0:
            continue
        nomad_f = np.flatnonzero((pop.pride < 0) & pop.female)
        pick = _strongest_first(nomad_f, pop.fit)[:vacancies]
        if len(pick) < vacancies:
            nomad_m = np.flatnonzero((pop.pride < 0) & ~pop.female)
            more = _strongest_first(nomad_m, pop.fit)[:vacancies - len(pick)]
            pop.female[more] = True
            pick = np.concatenate([pick, more])
        pop.pride[pick] = j

    nomads = np.flatnonzero(pop.pride < 0)
    excess = len(pop) - cfg.pop_size
    if excess > 0:
        pop.remove(_weakest_first(nomads, pop.fit)[:excess])


def run(cfg: MloConfig, evaluator, observer=None, mask_size=None) -> BestHistory:
    """Maximise ``evaluator`` over the box ``[lo, hi]^dim``.

    ``observer(phase, population)`` is called after every phase of every
    iteration and ``mask_size(position)`` (optional) is logged for the best
    position of each iteration. Entry 0 of the history describes the
    initial population.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    pop = Population(cfg, evaluator, rng)
    hist = BestHistory()

    def record():
        hist.best_fitness.append(pop.gbest_fit)
        hist.best_position.append(pop.gbest_pos.copy())
        hist.mean_fitness.append(float(pop.fit.mean()))
        hist.mask_size.append(None if mask_size is None else int(mask_size(pop.gbest_pos)))

    def notify(phase):
        if observer is not None:
            observer(phase, pop)

    record()
    notify("init")
    for it in range(1, cfg.max_iters + 1):
        try:
            sizes = tournament_size([pop.success[pop.members(j)].sum() for j in range(cfg.prides)])
            pop.success[:] = False
            hunters = _phase_hunt(pop, rng)
            notify("hunt")
            _phase_safe_place(pop, rng, hunters, sizes)
            notify("safe_place")
            _phase_roam(pop, rng)
            notify("roam")
            _phase_mate(pop, rng)
            notify("mate")
            _phase_velocity(pop, rng)
            notify("velocity")
            _phase_maintenance(pop, rng)
            notify("maintenance")
        except EvaluationError as exc:
            raise EvaluationError(f"iteration {it}: {exc}") from exc
        record()
    hist.evaluations = pop.evaluations
    return hist
