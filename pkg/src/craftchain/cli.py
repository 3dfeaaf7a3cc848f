"""Command-line pipeline: demos -> actions -> agents -> scheduler -> evaluation.

Every subcommand reads one settings file and works inside one artifacts
directory:

    artifacts/
      demos/demos_v1.bin          recorded expert trajectories
      models/action_table_v1.bin  shared discrete action set
      models/phase_setup_v1.ckpt  phase thresholds + per-phase action clusters
      models/<agent>_v1.ckpt      trained policy checkpoints
      models/scheduler_v1.ckpt    trained phase classifier
      budget.json                 online-training frame account
      reports/                    evaluation scores and rate tables

Checkpoints are stamped with the digest of the resolved configuration, so a
stage refuses artifacts produced under different settings. Stages that need
an artifact that does not exist yet fail with the missing path and the
subcommand that produces it.

Frame accounting: only ChopTree training interacts with the environment, and
it does so through the shared budget in budget.json. The other trainers are
demo-only and never touch the account. Evaluation episodes are intentionally
not counted: the budget caps training interaction, not measurement.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .agents import (
    AgentKind,
    ChopTreeAgent,
    CraftStoneAgent,
    CraftWoodenAgent,
    DigStoneAgent,
    FlatBCAgent,
    FlatBCNet,
    PixelQNet,
    RandomSearchAgent,
    train_choptree,
    train_craft_wooden,
    train_digstone,
    train_flat_bc,
)
from .budget import BudgetedEnv, FrameBudget
from .config import RunConfig, config_digest, load_config
from .demos import (
    Dataset,
    extract_critical_steps,
    generate_demos,
    load_dataset,
    save_dataset,
    truncate_before_plank,
)
from .discretize import (
    ActionTable,
    DPClusterResult,
    build_action_table,
    default_dp_penalty,
    dp_cluster_fit,
    load_action_table,
    save_action_table,
)
from .env import CraftWorld, env_config_digest
from .errors import CraftChainError, DependencyError
from .evaluate import (
    AGENT_NAMES,
    HierarchicalPolicy,
    bucket_of_score,
    compute_rates,
    evaluate,
    render_csv,
    render_markdown,
)
from .nn import (
    Dense,
    ReLU,
    Sequential,
    load_checkpoint,
    load_net_arrays,
    net_arrays,
    save_checkpoint,
)
from .scheduler import (
    PhaseThresholds,
    Scheduler,
    compute_thresholds,
    phase_transitions,
    train_scheduler,
)

AGENT_KINDS = ("choptree", "craftwood", "digstone", "craftstone", "flatbc")


class Artifacts:
    """Path layout of one pipeline run."""

    def __init__(self, root) -> None:
        self.root = Path(root)
        self.demos = self.root / "demos" / "demos_v1.bin"
        self.action_table = self.root / "models" / "action_table_v1.bin"
        self.phase_setup = self.root / "models" / "phase_setup_v1.ckpt"
        self.scheduler = self.root / "models" / "scheduler_v1.ckpt"
        self.budget = self.root / "budget.json"
        self.reports = self.root / "reports"

    def agent_ckpt(self, kind: str) -> Path:
        return self.root / "models" / f"{kind}_v1.ckpt"

    def scores(self, policy: str) -> Path:
        return self.reports / f"{policy}_scores_v1.json"

    def report_file(self, policy: str, fmt: str) -> Path:
        ext = {"markdown": "md", "csv": "csv"}[fmt]
        return self.reports / f"{policy}_report_v1.{ext}"


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise DependencyError(
            f"missing artifact {path}; run `craftchain {producer}` first")
    return path


def _load_demos(arts: Artifacts, rc: RunConfig) -> Dataset:
    ds = load_dataset(_require(arts.demos, "gen-demos"))
    if ds.env_digest != env_config_digest(rc.env):
        raise DependencyError(
            f"{arts.demos} was generated under different [env] settings; "
            "re-run `craftchain gen-demos`")
    return ds


def _load_table(arts: Artifacts) -> ActionTable:
    return load_action_table(_require(arts.action_table, "fit-actions"))


def _load_phase_setup(arts: Artifacts, digest: bytes):
    arrays, meta, _ = load_checkpoint(
        _require(arts.phase_setup, "fit-actions"), expected_digest=digest)
    thresholds = PhaseThresholds(log_count=int(meta["log_count"]),
                                 cobble_count=int(meta["cobble_count"]))
    return thresholds, arrays["phase2_centroids"], arrays["phase4_centroids"]


def _mlp(in_dim: int, hidden: int, out_dim: int) -> Sequential:
    """The two-hidden-layer stack used by the inventory classifiers."""
    rng = np.random.Generator(np.random.PCG64(0))  # overwritten by checkpoint
    return Sequential([
        Dense(in_dim, hidden, rng=rng),
        ReLU(),
        Dense(hidden, hidden, rng=rng),
        ReLU(),
        Dense(hidden, out_dim, rng=rng),
    ])


def _budget_account(arts: Artifacts, rc: RunConfig) -> FrameBudget:
    if arts.budget.exists():
        budget = FrameBudget.from_dict(json.loads(arts.budget.read_text()))
        if budget.cap != rc.budget.cap:
            raise DependencyError(
                f"{arts.budget} tracks cap {budget.cap}, but the config says "
                f"{rc.budget.cap}; use a fresh artifacts directory")
        return budget
    return FrameBudget(rc.budget.cap)


def _save_budget(arts: Artifacts, budget: FrameBudget) -> None:
    arts.budget.write_text(json.dumps(budget.to_dict(), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_demos(rc: RunConfig, arts: Artifacts) -> None:
    ds = generate_demos(rc.demos.count, rc.demos.seed, rc.demos.noise_level,
                        env_config=rc.env)
    arts.demos.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, arts.demos)
    mean = float(np.mean([t.final_score for t in ds.trajectories]))
    print(f"wrote {arts.demos}: {len(ds)} trajectories, "
          f"{ds.n_transitions()} steps, mean demo score {mean:.2f}")


def cmd_fit_actions(rc: RunConfig, arts: Artifacts) -> None:
    ds = _load_demos(arts, rc)
    table = build_action_table(ds, seed=rc.actions.seed,
                               n_movement=rc.actions.n_movement,
                               n_interaction=rc.actions.n_interaction)
    arts.action_table.parent.mkdir(parents=True, exist_ok=True)
    save_action_table(table, arts.action_table)

    thresholds = compute_thresholds(ds)
    # Penalty convention: estimate the cluster-spawn distance once from the
    # pooled inventory-changing actions. A single phase can hold as few as
    # two distinct actions in balanced counts, where its own median pairwise
    # distance equals the inter-action distance and the spawn test ties.
    pooled = np.stack([a for _, a in extract_critical_steps(ds)])
    penalty = default_dp_penalty(pooled)
    dp2 = dp_cluster_fit(
        np.stack([a for _, a in extract_critical_steps(
            ds, phase_filter=2, thresholds=thresholds)]),
        penalty=penalty)
    dp4 = dp_cluster_fit(
        np.stack([a for _, a in extract_critical_steps(
            ds, phase_filter=4, thresholds=thresholds)]),
        penalty=penalty)
    save_checkpoint(
        arts.phase_setup,
        arrays={"phase2_centroids": dp2.centroids,
                "phase4_centroids": dp4.centroids},
        meta={"log_count": thresholds.log_count,
              "cobble_count": thresholds.cobble_count,
              "penalty": penalty},
        spec_digest=config_digest(rc))
    print(f"wrote {arts.action_table}: {table.n_entries} actions "
          f"({table.n_movement} movement)")
    print(f"wrote {arts.phase_setup}: thresholds ({thresholds.log_count} logs, "
          f"{thresholds.cobble_count} cobblestone), "
          f"{dp2.centroids.shape[0]} wood-phase and "
          f"{dp4.centroids.shape[0]} stone-phase action clusters")


def _train_choptree(rc: RunConfig, arts: Artifacts, ds, table) -> None:
    budget = _budget_account(arts, rc)
    env = BudgetedEnv(CraftWorld(rc.env), budget)
    truncated = [truncate_before_plank(t) for t in ds.trajectories]
    agent = train_choptree(env, env, truncated, table, rc.choptree)
    save_checkpoint(
        arts.agent_ckpt("choptree"),
        arrays=net_arrays(agent.net),
        meta={"n_actions": table.n_entries, "alpha": rc.choptree.alpha,
              "frames_used": budget.used},
        spec_digest=config_digest(rc))
    _save_budget(arts, budget)
    print(f"wrote {arts.agent_ckpt('choptree')}; budget {budget.used}/"
          f"{budget.cap} frames used")


def _train_craftwood(rc: RunConfig, arts: Artifacts, ds, thresholds,
                     centroids) -> None:
    pairs = extract_critical_steps(ds, phase_filter=2, thresholds=thresholds)
    dp_model = DPClusterResult(centroids=centroids,
                               labels=np.zeros(0, dtype=np.int64),
                               penalty=0.0)
    agent, metrics = train_craft_wooden(pairs, dp_model, rc.craftwood)
    arrays = net_arrays(agent.net)
    arrays["centroids"] = agent.centroids
    save_checkpoint(
        arts.agent_ckpt("craftwood"),
        arrays=arrays,
        meta={"in_dim": int(pairs[0][0].shape[0]), "hidden": rc.craftwood.hidden,
              "n_classes": int(agent.centroids.shape[0]),
              "holdout_accuracy": metrics["holdout_accuracy"]},
        spec_digest=config_digest(rc))
    print(f"wrote {arts.agent_ckpt('craftwood')}; holdout accuracy "
          f"{metrics['holdout_accuracy']:.3f}")


def _train_digstone(rc: RunConfig, arts: Artifacts, ds, thresholds,
                    table) -> None:
    transitions = phase_transitions(ds, 3, thresholds)
    agent, metrics = train_digstone(transitions, table, rc.digstone)
    save_checkpoint(
        arts.agent_ckpt("digstone"),
        arrays=net_arrays(agent.net),
        meta={"n_actions": table.n_entries,
              "argmax_agreement": metrics["argmax_agreement"],
              "margin_satisfied": metrics["margin_satisfied"]},
        spec_digest=config_digest(rc))
    print(f"wrote {arts.agent_ckpt('digstone')}; demo-action agreement "
          f"{metrics['argmax_agreement']:.3f}")


def _train_craftstone(rc: RunConfig, arts: Artifacts, centroids) -> None:
    save_checkpoint(
        arts.agent_ckpt("craftstone"),
        arrays={"centroids": np.asarray(centroids, dtype=np.float64)},
        meta={"n_actions": int(centroids.shape[0])},
        spec_digest=config_digest(rc))
    print(f"wrote {arts.agent_ckpt('craftstone')}; uniform over "
          f"{centroids.shape[0]} stone-phase actions")


def _train_flatbc(rc: RunConfig, arts: Artifacts, ds, table) -> None:
    agent = train_flat_bc(ds, table, rc.flatbc)
    save_checkpoint(
        arts.agent_ckpt("flatbc"),
        arrays=net_arrays(agent.net),
        meta={"n_actions": table.n_entries,
              "inv_dim": int(ds.trajectories[0].transitions[0].inv_obf.shape[0])},
        spec_digest=config_digest(rc))
    print(f"wrote {arts.agent_ckpt('flatbc')}")


def cmd_train_agent(rc: RunConfig, arts: Artifacts, kind: str) -> None:
    ds = _load_demos(arts, rc)
    table = _load_table(arts)
    if kind == "choptree":
        _train_choptree(rc, arts, ds, table)
        return
    digest = config_digest(rc)
    thresholds, phase2, phase4 = _load_phase_setup(arts, digest)
    if kind == "craftwood":
        _train_craftwood(rc, arts, ds, thresholds, phase2)
    elif kind == "digstone":
        _train_digstone(rc, arts, ds, thresholds, table)
    elif kind == "craftstone":
        _train_craftstone(rc, arts, phase4)
    elif kind == "flatbc":
        _train_flatbc(rc, arts, ds, table)
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(f"unknown agent kind {kind!r}")


def cmd_train_scheduler(rc: RunConfig, arts: Artifacts) -> None:
    ds = _load_demos(arts, rc)
    digest = config_digest(rc)
    thresholds, _, _ = _load_phase_setup(arts, digest)
    scheduler, metrics = train_scheduler(ds, thresholds, rc.scheduler)
    save_checkpoint(
        arts.scheduler,
        arrays=net_arrays(scheduler.net),
        meta={"log_count": thresholds.log_count,
              "cobble_count": thresholds.cobble_count,
              "hidden": rc.scheduler.hidden,
              "in_dim": int(ds.trajectories[0].transitions[0].inv_obf.shape[0]),
              "holdout_accuracy": metrics["holdout_accuracy"]},
        spec_digest=config_digest(rc))
    print(f"wrote {arts.scheduler}; holdout accuracy "
          f"{metrics['holdout_accuracy']:.3f}")


# ---------------------------------------------------------------------------
# policy assembly

def _load_choptree(arts: Artifacts, digest: bytes, table) -> ChopTreeAgent:
    arrays, meta, _ = load_checkpoint(
        _require(arts.agent_ckpt("choptree"), "train-agent --kind choptree"),
        expected_digest=digest)
    net = PixelQNet(int(meta["n_actions"]), seed=0, with_decoder=True)
    load_net_arrays(net, arrays)
    return ChopTreeAgent(net, table, alpha=float(meta["alpha"]))


def _load_craftwood(arts: Artifacts, digest: bytes) -> CraftWoodenAgent:
    arrays, meta, _ = load_checkpoint(
        _require(arts.agent_ckpt("craftwood"), "train-agent --kind craftwood"),
        expected_digest=digest)
    net = _mlp(int(meta["in_dim"]), int(meta["hidden"]), int(meta["n_classes"]))
    load_net_arrays(net, arrays)
    return CraftWoodenAgent(net, arrays["centroids"].astype(np.float64))


def _load_digstone(arts: Artifacts, digest: bytes, table) -> DigStoneAgent:
    arrays, meta, _ = load_checkpoint(
        _require(arts.agent_ckpt("digstone"), "train-agent --kind digstone"),
        expected_digest=digest)
    net = PixelQNet(int(meta["n_actions"]), seed=0)
    load_net_arrays(net, arrays)
    return DigStoneAgent(net, table)


def _load_craftstone(arts: Artifacts, digest: bytes) -> CraftStoneAgent:
    arrays, _, _ = load_checkpoint(
        _require(arts.agent_ckpt("craftstone"), "train-agent --kind craftstone"),
        expected_digest=digest)
    return CraftStoneAgent(arrays["centroids"].astype(np.float64))


def _load_scheduler(arts: Artifacts, digest: bytes) -> Scheduler:
    arrays, meta, _ = load_checkpoint(
        _require(arts.scheduler, "train-scheduler"), expected_digest=digest)
    from .scheduler import N_PHASES

    net = _mlp(int(meta["in_dim"]), int(meta["hidden"]), N_PHASES)
    load_net_arrays(net, arrays)
    thresholds = PhaseThresholds(log_count=int(meta["log_count"]),
                                 cobble_count=int(meta["cobble_count"]))
    return Scheduler(net, thresholds)


def build_hierarchical_policy(rc: RunConfig, arts: Artifacts) -> HierarchicalPolicy:
    digest = config_digest(rc)
    table = _load_table(arts)
    digstone = _load_digstone(arts, digest, table)
    agents = {
        AgentKind.CHOP_TREE: _load_choptree(arts, digest, table),
        AgentKind.CRAFT_WOODEN_PICKAXE: _load_craftwood(arts, digest),
        AgentKind.DIG_STONE: digstone,
        AgentKind.CRAFT_STONE_PICKAXE: _load_craftstone(arts, digest),
        AgentKind.RANDOM_SEARCH: RandomSearchAgent(
            digstone, table, rc.randomsearch),
    }
    return HierarchicalPolicy(_load_scheduler(arts, digest), agents)


def build_flatbc_policy(rc: RunConfig, arts: Artifacts) -> FlatBCAgent:
    digest = config_digest(rc)
    table = _load_table(arts)
    arrays, meta, _ = load_checkpoint(
        _require(arts.agent_ckpt("flatbc"), "train-agent --kind flatbc"),
        expected_digest=digest)
    net = FlatBCNet(int(meta["n_actions"]), int(meta["inv_dim"]), seed=0)
    load_net_arrays(net, arrays)
    return FlatBCAgent(net, table)


# ---------------------------------------------------------------------------
# evaluation and reporting

def cmd_evaluate(rc: RunConfig, arts: Artifacts, policy_name: str) -> None:
    if policy_name == "hierarchical":
        policy = build_hierarchical_policy(rc, arts)
    else:
        policy = build_flatbc_policy(rc, arts)
    result = evaluate(policy, rc.env, episodes=rc.eval.episodes,
                      seed_base=rc.eval.seed_base, workers=rc.eval.workers)
    arts.reports.mkdir(parents=True, exist_ok=True)
    payload = {
        "config_digest": config_digest(rc).hex(),
        "policy": policy_name,
        "n_episodes": result.report.n_episodes,
        "seed_base": rc.eval.seed_base,
        "bucket_counts": list(result.report.bucket_counts),
        "mean_score": result.report.mean_score,
        "scores": list(result.scores),
    }
    arts.scores(policy_name).write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n")
    arts.report_file(policy_name, "markdown").write_text(
        render_markdown(result.report))
    arts.report_file(policy_name, "csv").write_text(render_csv(result.report))
    print(f"wrote {arts.scores(policy_name)} and rate tables")
    rates = ", ".join(
        f"{AGENT_NAMES[k]} {100 * result.report.rates[int(k) - 1]:.1f}%"
        for k in AgentKind)
    print(f"mean score {result.report.mean_score:.2f} over "
          f"{result.report.n_episodes} episodes; rates: {rates}")


def cmd_report(rc: RunConfig, arts: Artifacts, policy_name: str,
               fmt: str) -> None:
    path = _require(arts.scores(policy_name),
                    f"evaluate --policy {policy_name}")
    payload = json.loads(path.read_text())
    if payload["config_digest"] != config_digest(rc).hex():
        raise DependencyError(
            f"{path} was produced under a different configuration; "
            "re-run `craftchain evaluate`")
    counts = [int(c) for c in payload["bucket_counts"]]
    report = compute_rates(counts, int(payload["n_episodes"]))
    formats = ("markdown", "csv") if fmt == "both" else (fmt,)
    for f in formats:
        text = render_markdown(report) if f == "markdown" else render_csv(report)
        arts.report_file(policy_name, f).write_text(text)
        print(f"wrote {arts.report_file(policy_name, f)}")


# ---------------------------------------------------------------------------
# entry point

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="craftchain",
        description="Hierarchical imitation pipeline for the crafting-chain "
                    "gridworld. Stages: gen-demos, fit-actions, train-agent "
                    "(one per subtask), train-scheduler, evaluate, report.",
        epilog="Evaluation episodes are never charged against the training "
               "frame budget; the [budget] cap limits online training only.")
    parser.add_argument("--config", required=True,
                        help="path to the run settings file")
    parser.add_argument("--artifacts", default="artifacts",
                        help="directory for datasets, checkpoints, reports "
                             "(default: ./artifacts)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-demos", help="record scripted expert demonstrations")
    sub.add_parser("fit-actions",
                   help="cluster demo actions into the shared table and fit "
                        "phase thresholds")
    p = sub.add_parser("train-agent", help="train one subtask agent")
    p.add_argument("--kind", required=True, choices=AGENT_KINDS)
    sub.add_parser("train-scheduler", help="train the phase classifier")
    p = sub.add_parser("evaluate",
                       help="roll out evaluation episodes and write reports")
    p.add_argument("--policy", choices=("hierarchical", "flatbc"),
                   default="hierarchical")
    p = sub.add_parser("report", help="re-render reports from saved scores")
    p.add_argument("--policy", choices=("hierarchical", "flatbc"),
                   default="hierarchical")
    p.add_argument("--format", choices=("markdown", "csv", "both"),
                   default="both")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        rc = load_config(args.config)
        arts = Artifacts(args.artifacts)
        if args.command == "gen-demos":
            cmd_gen_demos(rc, arts)
        elif args.command == "fit-actions":
            cmd_fit_actions(rc, arts)
        elif args.command == "train-agent":
            cmd_train_agent(rc, arts, args.kind)
        elif args.command == "train-scheduler":
            cmd_train_scheduler(rc, arts)
        elif args.command == "evaluate":
            cmd_evaluate(rc, arts, args.policy)
        elif args.command == "report":
            cmd_report(rc, arts, args.policy, args.format)
    except CraftChainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
