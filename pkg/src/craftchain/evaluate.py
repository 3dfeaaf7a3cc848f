"""End-to-end evaluation: hierarchical rollouts and the success-rate table.

Episodes run on the sparse full-chain environment with seeds
`seed_base .. seed_base + N - 1`. Evaluation never touches the training
frame budget: learning is over by now, and the cap governs only training
interaction.

The summary table buckets each episode by its terminal score, which always
lands on the cumulative milestone ladder (every milestone's reward is fixed
and its prerequisites force the achievable subsets). Per-phase success is
score-based: phase i counts as completed when the terminal score reaches
that phase's completion entry, Rate_i is the fraction of episodes doing so,
and Cond_i = Rate_i / Rate_{i-1} (with Rate_0 = 1, and 0 when the previous
phase was never completed).
"""

from __future__ import annotations

import copy
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .agents import AgentKind, Policy
from .env import MILESTONE_REWARDS, CraftWorld, EnvConfig, EnvVariant, ItemId
from .errors import ConfigError, FormatError
from .scheduler import Scheduler

# Terminal-score ladder: cumulative milestone rewards in chain order.
LADDER_ITEMS: tuple[ItemId, ...] = tuple(ItemId)
SCORE_LADDER: tuple[float, ...] = tuple(
    float(sum(MILESTONE_REWARDS[i] for i in LADDER_ITEMS[:k + 1]))
    for k in range(len(LADDER_ITEMS))
)
N_BUCKETS = len(LADDER_ITEMS) + 1  # the no-milestone bucket, then one per item

# The score at which each phase counts as completed.
PHASE_COMPLETION: dict[AgentKind, ItemId] = {
    AgentKind.CHOP_TREE: ItemId.LOG,
    AgentKind.CRAFT_WOODEN_PICKAXE: ItemId.WOODEN_PICKAXE,
    AgentKind.DIG_STONE: ItemId.COBBLESTONE,
    AgentKind.CRAFT_STONE_PICKAXE: ItemId.STONE_PICKAXE,
    AgentKind.RANDOM_SEARCH: ItemId.IRON_ORE,
}

# Which subtask agent is responsible for each milestone row of the table.
# Everything past the iron ore happens while the search agent is active.
AGENT_OF_ITEM: dict[ItemId, AgentKind] = {
    ItemId.LOG: AgentKind.CHOP_TREE,
    ItemId.PLANK: AgentKind.CRAFT_WOODEN_PICKAXE,
    ItemId.STICK: AgentKind.CRAFT_WOODEN_PICKAXE,
    ItemId.CRAFTING_TABLE: AgentKind.CRAFT_WOODEN_PICKAXE,
    ItemId.WOODEN_PICKAXE: AgentKind.CRAFT_WOODEN_PICKAXE,
    ItemId.COBBLESTONE: AgentKind.DIG_STONE,
    ItemId.STONE_PICKAXE: AgentKind.CRAFT_STONE_PICKAXE,
    ItemId.FURNACE: AgentKind.CRAFT_STONE_PICKAXE,
    ItemId.IRON_ORE: AgentKind.RANDOM_SEARCH,
    ItemId.IRON_INGOT: AgentKind.RANDOM_SEARCH,
    ItemId.IRON_PICKAXE: AgentKind.RANDOM_SEARCH,
    ItemId.DIAMOND: AgentKind.RANDOM_SEARCH,
}

AGENT_NAMES: dict[AgentKind, str] = {
    AgentKind.CHOP_TREE: "ChopTree",
    AgentKind.CRAFT_WOODEN_PICKAXE: "CraftWoodenPickaxe",
    AgentKind.DIG_STONE: "DigStone",
    AgentKind.CRAFT_STONE_PICKAXE: "CraftStonePickaxe",
    AgentKind.RANDOM_SEARCH: "RandomSearch",
}


def bucket_of_score(score: float) -> int:
    """Ladder bucket for a terminal score: 0 = no milestone, k = item k-1.

    Scores land exactly on ladder entries; anything between two entries is
    attributed to the highest entry not exceeding it.
    """
    if score < SCORE_LADDER[0]:
        return 0
    return int(np.searchsorted(np.asarray(SCORE_LADDER), score, side="right"))


@dataclass(frozen=True)
class MilestoneReport:
    """Per-phase success rates over one evaluation batch.

    bucket_counts[0] counts episodes that reached no milestone;
    bucket_counts[k] counts episodes whose terminal score equals ladder
    entry k-1. rates/cond are fractions in [0, 1], indexed by phase 1..5
    at positions 0..4.
    """
    n_episodes: int
    bucket_counts: tuple[int, ...]
    rates: tuple[float, ...]
    cond: tuple[float, ...]
    mean_score: float


def compute_rates(bucket_counts, n_episodes: int) -> MilestoneReport:
    """Success-rate arithmetic from terminal-score bucket counts.

    Accepts up to N_BUCKETS counts, zero-padding the tail (trailing empty
    buckets may be omitted). The counts may sum to less than n_episodes;
    the difference is treated as unbucketed zero-score episodes for the
    rate denominators, but only listed counts enter the table.
    """
    counts = [int(c) for c in bucket_counts]
    if len(counts) > N_BUCKETS:
        raise ValueError(
            f"got {len(counts)} bucket counts; the ladder has {N_BUCKETS}")
    if any(c < 0 for c in counts):
        raise ValueError("bucket counts must be nonnegative")
    counts += [0] * (N_BUCKETS - len(counts))
    if n_episodes <= 0:
        raise ValueError("need at least one episode to compute rates")
    if sum(counts) > n_episodes:
        raise ValueError(
            f"bucket counts sum to {sum(counts)} > {n_episodes} episodes")

    # suffix[k] = episodes whose terminal score reached ladder entry k-1
    suffix = np.concatenate([np.cumsum(counts[::-1])[::-1], [0]])
    rates = []
    for kind in AgentKind:
        item = PHASE_COMPLETION[kind]
        rates.append(float(suffix[int(item) + 1]) / n_episodes)
    cond = []
    prev = 1.0
    for r in rates:
        cond.append(r / prev if prev > 0 else 0.0)
        prev = r
    mean = float(
        sum(c * s for c, s in zip(counts[1:], SCORE_LADDER))) / n_episodes
    return MilestoneReport(
        n_episodes=int(n_episodes),
        bucket_counts=tuple(counts),
        rates=tuple(rates),
        cond=tuple(cond),
        mean_score=mean,
    )


# ---------------------------------------------------------------------------
# the composed policy

class HierarchicalPolicy(Policy):
    """Every step: classify the phase from the obfuscated inventory, then act
    with that phase's subtask agent. A newly selected agent is told it just
    entered its phase so per-phase state (exploration ramps) restarts."""

    def __init__(self, scheduler: Scheduler, agents: dict[AgentKind, Policy]):
        missing = [AGENT_NAMES[k] for k in AgentKind if k not in agents]
        if missing:
            raise ConfigError(
                f"hierarchical policy is missing agents: {', '.join(missing)}")
        self.scheduler = scheduler
        self.agents = dict(agents)
        self._active: AgentKind | None = None

    def enter_phase(self) -> None:
        # called at episode start; the first act() re-triggers the selected
        # agent's own enter_phase
        self._active = None

    def act(self, obs, rng: np.random.Generator) -> np.ndarray:
        kind = self.scheduler.select_agent(obs.inv_obf)
        if kind != self._active:
            self._active = kind
            self.agents[kind].enter_phase()
        return self.agents[kind].act(obs, rng)


# ---------------------------------------------------------------------------
# episode runner

@dataclass(frozen=True)
class EvalResult:
    scores: tuple[float, ...]
    report: MilestoneReport


def _run_episode(env: CraftWorld, policy: Policy, seed: int,
                 variant: EnvVariant) -> float:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 131))))
    obs = env.reset(seed, variant)
    policy.enter_phase()
    while True:
        res = env.step(policy.act(obs, rng))
        obs = res.obs
        if res.done:
            return env.score()


def evaluate(policy: Policy, env_config: EnvConfig, episodes: int,
             seed_base: int, variant: EnvVariant = EnvVariant.OBTAIN_CHAIN_SPARSE,
             workers: int = 1) -> EvalResult:
    """Roll out `episodes` evaluation episodes and summarize them.

    Episode i is fully determined by seed_base + i: the world seed and the
    policy's RNG stream both derive from it, so results are identical no
    matter how episodes are spread across workers. Each worker gets its own
    environment and policy copy (the nets keep forward caches, so a policy
    instance must not be shared across threads).
    """
    if episodes < 1:
        raise ValueError("need at least one evaluation episode")
    seeds = [seed_base + i for i in range(episodes)]

    if workers <= 1 or episodes == 1:
        env = CraftWorld(env_config)
        scores = [_run_episode(env, policy, s, variant) for s in seeds]
    else:
        workers = min(workers, episodes)

        def run_chunk(chunk: list[int]) -> list[float]:
            env = CraftWorld(env_config)
            own_policy = copy.deepcopy(policy)
            return [_run_episode(env, own_policy, s, variant) for s in chunk]

        chunks = [seeds[w::workers] for w in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_chunk, chunks))
        by_seed = {s: v for chunk, vals in zip(chunks, results)
                   for s, v in zip(chunk, vals)}
        scores = [by_seed[s] for s in seeds]

    counts = [0] * N_BUCKETS
    for s in scores:
        counts[bucket_of_score(s)] += 1
    return EvalResult(scores=tuple(scores),
                      report=compute_rates(counts, episodes))


# ---------------------------------------------------------------------------
# report rendering

def _pct(x: float) -> str:
    return f"{100.0 * x:.1f}"


def _rows(report: MilestoneReport):
    """(agent, item, score, episodes, cond_str, rate_str) per table row."""
    completion_of = {int(PHASE_COMPLETION[k]): k for k in AgentKind}
    yield ("-", "none", "0", str(report.bucket_counts[0]), "", "")
    for idx, item in enumerate(LADDER_ITEMS):
        kind = completion_of.get(int(item))
        cond = _pct(report.cond[int(kind) - 1]) if kind else ""
        rate = _pct(report.rates[int(kind) - 1]) if kind else ""
        yield (
            AGENT_NAMES[AGENT_OF_ITEM[item]],
            item.name.lower(),
            f"{SCORE_LADDER[idx]:g}",
            str(report.bucket_counts[idx + 1]),
            cond,
            rate,
        )


def render_markdown(report: MilestoneReport) -> str:
    lines = [
        "| Agent | Item | Score | #Episode | Cond.Rate | Rate |",
        "| --- | --- | --- | --- | --- | --- |",
    ]
    for agent, item, score, count, cond, rate in _rows(report):
        cond = f"{cond}%" if cond else "-"
        rate = f"{rate}%" if rate else "-"
        lines.append(f"| {agent} | {item} | {score} | {count} | {cond} | {rate} |")
    lines.append("")
    lines.append(f"Mean score: {report.mean_score:.2f} over "
                 f"{report.n_episodes} episodes.")
    return "\n".join(lines) + "\n"


def render_csv(report: MilestoneReport) -> str:
    lines = ["agent,item,score,episodes,cond_rate_pct,rate_pct"]
    for agent, item, score, count, cond, rate in _rows(report):
        lines.append(f"{agent},{item},{score},{count},{cond},{rate}")
    lines.append(f"mean,,{report.mean_score:.2f},{report.n_episodes},,")
    return "\n".join(lines) + "\n"


def parse_csv(text: str) -> MilestoneReport:
    """Rebuild a report from its CSV rendering.

    Bucket counts and the episode total fully determine the report, so the
    parsed result is exact; the printed rate and mean cells are verified
    against the recomputation rather than trusted.
    """
    lines = [ln for ln in text.strip().splitlines() if ln]
    header = "agent,item,score,episodes,cond_rate_pct,rate_pct"
    if not lines or lines[0] != header:
        raise FormatError("not a report CSV: bad header")
    body, tail = lines[1:-1], lines[-1]
    if len(body) != N_BUCKETS:
        raise FormatError(f"expected {N_BUCKETS} bucket rows, got {len(body)}")
    counts = []
    printed = []
    try:
        for line in body:
            agent, item, score, count, cond, rate = line.split(",")
            counts.append(int(count))
            printed.append((cond, rate))
        mean_cell, n_cell = tail.split(",")[2], tail.split(",")[3]
        report = compute_rates(counts, int(n_cell))
    except ValueError as exc:
        raise FormatError(f"malformed report CSV: {exc}") from None
    if f"{report.mean_score:.2f}" != mean_cell:
        raise FormatError(
            f"mean cell {mean_cell} disagrees with recomputed "
            f"{report.mean_score:.2f}")
    for row, (cond, rate) in zip(_rows(report), printed):
        if (cond, rate) != (row[4], row[5]):
            raise FormatError(f"rate cells {cond},{rate} disagree with "
                             f"recomputed {row[4]},{row[5]}")
    return report
