"""Subcommand handlers. Each takes a RunContext and returns the result payload."""

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from src.analytic import solve_drift_1d, solve_singular_1d
from src.errors import ArtifactMissing, ConfigInvalid
from src.experiments.config import ExperimentConfig
from src.mca import McaGrid, build_mca, mca_solve
from src.mdp import TabularPolicy, TruncatedMdp, build_crisscross_mdp, build_tandem_mdp, export_tables, value_iteration
from src.problems import ControlProblem
from src.simulation import (
    DiffusionChainPolicy,
    DiffusionCrissCrossPolicy,
    DiffusionSimConfig,
    DiffusionTandemPolicy,
    LinearBoundaryPolicy,
    MdpQueuePolicy,
    NeverIdlePolicy,
    QueueModel,
    QueuePolicy,
    StaticPriorityPolicy,
    crisscross_model,
    lbp_grid_search,
    mm1_model,
    pooled_stderr,
    series_model,
    simulate_discounted,
    simulate_policy_value,
    tandem_model,
    tune_safety_stock,
)
from src.simulation.lbp import EVEN_RANGE, ODD_RANGE, SAFETY_STOCKS
from src.simulation.queueing import DEFAULT_HORIZON
from src.solver import (
    ControlPolicy,
    Mlp,
    NoControlPolicy,
    RegionPolicy,
    SolverConfig,
    ThresholdPolicy,
    ThresholdRule,
    agreement_fraction,
    export_heatmap,
    extract_policy,
    heatmap_grid,
    load_checkpoint,
    region_labels,
    save_checkpoint,
    train,
)

logger = logging.getLogger(__name__)

# Reference 1-D instance: h = 2, unit variance, c = 1, r = 0.1
ONED_DEFAULTS = {"h": 2.0, "a": 1.0, "c": 1.0, "r": 0.1}
DECIMALS = 6


@dataclass
class RunContext:
    """Everything a handler needs; artifacts are registered through ``path``."""

    config: ExperimentConfig
    out_dir: Path
    seed: int
    workers: int | None = 1
    artifacts: list[str] = field(default_factory=list)

    def path(self, name: str) -> Path:
        """Register and return an artifact path inside the run directory."""
        if name not in self.artifacts:
            self.artifacts.append(name)
        return self.out_dir / name


Handler = Callable[[RunContext], dict[str, Any]]


def _round(value: float) -> float:
    return round(float(value), DECIMALS)


# Resolution of config sections


def _heatmap_args(config: ExperimentConfig, problem: ControlProblem) -> dict[str, Any]:
    section = config.heatmap
    axes = tuple(section.get("axes", (0, 1)))
    if "ranges" in section:
        ranges = [tuple(float(v) for v in r) for r in section["ranges"]]
    else:
        box = problem.init_box if problem.init_box is not None else np.full(problem.d, 1.0)
        ranges = [(0.0, float(box[axis])) for axis in axes[: min(2, problem.d)]]
    anchor = section.get("anchor")
    return {
        "ranges": ranges,
        "resolution": int(section.get("resolution", 101)),
        "anchor": None if anchor is None else np.asarray(anchor, dtype=float),
        "axes": axes,
    }


def _load_gradient_net(path: str | Path) -> Mlp:
    _, g_net, _ = load_checkpoint(path)
    return g_net


def _load_regions(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if path.is_dir():
        path = path / "regions.npz"
    if not path.exists():
        raise ArtifactMissing(f"region file not found: {path}", path=str(path))
    with np.load(path) as data:
        return {key: data[key] for key in data.files}


def diffusion_policy(spec: dict[str, Any], problem: ControlProblem) -> ControlPolicy:
    """Build a diffusion-level policy from its config spec."""
    kind = spec.get("kind", "none")
    if kind == "none":
        return NoControlPolicy(problem)
    if kind == "gradient":
        if "checkpoint" not in spec:
            raise ArtifactMissing("gradient policy needs a checkpoint")
        return extract_policy(_load_gradient_net(spec["checkpoint"]), problem)
    if kind == "threshold":
        if "rules" in spec:
            return ThresholdPolicy(problem, [ThresholdRule(**rule) for rule in spec["rules"]])
        return ThresholdPolicy.parallel(problem, float(spec["level"]))
    if kind == "regions":
        if "artifact" not in spec:
            raise ArtifactMissing("region policy needs an artifact")
        regions = _load_regions(spec["artifact"])
        return RegionPolicy(problem, regions["xs"], regions["ys"], regions["labels"])
    raise ConfigInvalid(f"unknown policy kind: {kind}")


def build_queue_model(section: dict[str, Any]) -> QueueModel:
    name = section.get("model")
    r = float(section.get("r", 0.01))
    if name == "mm1":
        return mm1_model(
            lam=float(section.get("lam", 0.5)), m=float(section.get("m", 1.0)), h=float(section.get("h", 1.0)), r=r
        )
    if name == "tandem":
        return tandem_model(
            lam=float(section.get("lam", 0.95)),
            m=float(section.get("m", 1.0)),
            h=tuple(section.get("h", (1.0, 2.0))),
            r=r,
        )
    if name == "crisscross":
        return crisscross_model(case=str(section.get("case", "IIA")), r=r)
    if name == "manyqueues":
        h = section.get("h")
        return series_model(
            d=int(section.get("d", 6)),
            h=None if h is None else tuple(h),
            lam=float(section.get("lam", 0.95)),
            m=float(section.get("m", 1.0)),
            r=r,
        )
    raise ConfigInvalid(f"unknown queue model: {name}")


def build_mdp(section: dict[str, Any]) -> TruncatedMdp:
    name = section.get("model", "tandem")
    r = float(section.get("r", 0.01))
    if name == "tandem":
        return build_tandem_mdp(
            lam=float(section.get("lam", 0.95)),
            m=float(section.get("m", 1.0)),
            h=tuple(section.get("h", (1.0, 2.0))),
            r=r,
            cap=int(section.get("cap", 1000)),
        )
    if name == "crisscross":
        caps = section.get("caps", section.get("cap", 300))
        return build_crisscross_mdp(
            case=str(section.get("case", "IIA")), caps=caps if isinstance(caps, int) else tuple(caps), r=r
        )
    raise ConfigInvalid(f"unknown MDP model: {name}")


def queue_policy(spec: dict[str, Any], model: QueueModel, config: ExperimentConfig) -> QueuePolicy:
    """Build a pre-limit scheduling policy from its config spec."""
    kind = spec.get("kind", "never_idle")
    if kind == "never_idle":
        return NeverIdlePolicy(model)
    if kind == "static_priority":
        order = spec.get("order")
        return StaticPriorityPolicy(model, None if order is None else [c - 1 for c in order])
    if kind == "lbp":
        return LinearBoundaryPolicy(model, spec["beta"], spec.get("active"))
    if kind == "mdp":
        path = Path(spec.get("artifact", ""))
        table_path = path / "policy.npy" if path.is_dir() else path
        if not table_path.is_file():
            raise ArtifactMissing(f"MDP policy table not found: {table_path}", path=str(table_path))
        mdp = build_mdp(config.mdp or {"model": model.name.split("-")[0], "case": spec.get("case", "IIA")})
        return MdpQueuePolicy(model, TabularPolicy.from_mdp(mdp, np.load(table_path).ravel()))
    if kind == "diffusion":
        if "checkpoint" not in spec:
            raise ArtifactMissing("diffusion policy needs a checkpoint")
        g_net = _load_gradient_net(spec["checkpoint"])
        if model.name.startswith("crisscross"):
            return DiffusionCrissCrossPolicy(model, g_net, int(spec.get("safety_stock", 0)))
        if model.name == "tandem":
            return DiffusionTandemPolicy(model, g_net)
        return DiffusionChainPolicy(model, g_net)
    raise ConfigInvalid(f"unknown queue policy kind: {kind}")


def _diffusion_sim_config(ctx: RunContext, problem: ControlProblem) -> DiffusionSimConfig:
    section = dict(ctx.config.simulation)
    section["seed"] = ctx.seed
    return DiffusionSimConfig.for_problem(problem, **section)


# Handlers


def solve_1d(ctx: RunContext) -> dict[str, Any]:
    params = {**ONED_DEFAULTS, **{k: v for k, v in ctx.config.analytic.items() if k in ONED_DEFAULTS}}
    solution = solve_singular_1d(**params)
    result: dict[str, Any] = {
        "params": params,
        "w_star": _round(solution.w_star),
        "C": _round(solution.C),
        "v0": _round(solution.value(0.0)),
    }
    grid = np.linspace(0.0, 2.0 * solution.w_star, 201)
    with ctx.path("value.csv").open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("w", "value", "derivative"))
        for w, v, dv in zip(grid, solution.value(grid), solution.derivative(grid)):
            writer.writerow([f"{w:.6f}", f"{v:.6f}", f"{dv:.6f}"])

    if "b" in ctx.config.analytic:
        drift = solve_drift_1d(**params, b=float(ctx.config.analytic["b"]), mesh=ctx.config.analytic.get("mesh"))
        result["drift"] = {
            "b": float(ctx.config.analytic["b"]),
            "threshold": _round(drift.threshold),
            "v0": _round(drift.v0),
        }
    logger.info(f"1-D threshold w*={result['w_star']}")
    return result


def solve_nn(ctx: RunContext) -> dict[str, Any]:
    problem = ctx.config.build_problem()
    overrides = dict(ctx.config.nn)
    overrides["seed"] = ctx.seed
    solver_config = SolverConfig.for_problem(problem, **overrides)
    outcome = train(problem, solver_config)

    save_checkpoint(
        ctx.path("model.ckpt"),
        outcome.v_net,
        outcome.g_net,
        meta={"problem": ctx.config.problem, "seed": ctx.seed},
    )
    with ctx.path("loss_history.csv").open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("step", "loss"))
        for step, loss in enumerate(outcome.loss_history):
            writer.writerow([step, f"{loss:.8e}"])
    if problem.d <= 2 or ctx.config.heatmap:
        policy = extract_policy(outcome.g_net, problem)
        export_heatmap(policy, ctx.path("heatmap.csv"), **_heatmap_args(ctx.config, problem))

    v0 = outcome.v_net.evaluate(np.zeros((1, problem.d)))
    return {
        "problem": problem.describe(),
        "solver": solver_config.to_dict(),
        "final_loss": float(outcome.loss_history[-1]),
        "steps": len(outcome.loss_history),
        "v0": float(np.ravel(v0)[0]),
    }


def solve_mdp(ctx: RunContext) -> dict[str, Any]:
    section = ctx.config.mdp
    mdp = build_mdp(section)
    history: list[float] = []
    values, policy = value_iteration(mdp, eps=float(section.get("eps", 0.1)), history=history)
    paths = export_tables(
        values, policy, ctx.out_dir, axis=int(section.get("slice_axis", 0)), index=int(section.get("slice_index", 0))
    )
    for path in paths.values():
        ctx.path(Path(path).name)
    origin = (0,) * values.ndim
    return {
        "model": mdp.describe(),
        "sweeps": len(history),
        "value_at_origin": float(values[origin]),
        "action_at_origin": policy.action_names[int(policy.actions[origin])],
    }


def solve_mca(ctx: RunContext) -> dict[str, Any]:
    problem = ctx.config.build_problem()
    section = ctx.config.mca
    box = problem.init_box if problem.init_box is not None else np.ones(problem.d)
    h1 = float(section.get("h1", 0.1))
    h2 = float(section.get("h2", h1 * box[-1] / box[0]))
    grid = McaGrid.from_truncation(
        h1, h2, float(section.get("upper1", box[0])), float(section.get("upper2", box[-1]))
    )
    chain = build_mca(problem, grid)
    solution = mca_solve(
        chain,
        eps=float(section.get("eps", 1e-6)),
        method=section.get("method", "policy"),
        max_iterations=section.get("max_iterations"),
    )
    solution.export_labels(ctx.path("regions.csv"))
    np.savez(ctx.path("regions.npz"), xs=grid.xs, ys=grid.ys, labels=solution.labels, values=solution.values)
    return {
        "problem": problem.describe(),
        "grid": asdict(grid),
        "states": chain.num_states,
        "method": solution.method,
        "iterations": solution.iterations,
        "value_at_origin": float(solution.values[0, 0]),
    }


def simulate_diffusion(ctx: RunContext) -> dict[str, Any]:
    problem = ctx.config.build_problem()
    spec = ctx.config.policy or {"kind": "none"}
    policy = diffusion_policy(spec, problem)
    estimate = simulate_policy_value(problem, policy, _diffusion_sim_config(ctx, problem), ctx.workers)
    return {"problem": problem.describe(), "policy": spec, "estimate": estimate.to_dict()}


def simulate_queue(ctx: RunContext) -> dict[str, Any]:
    section = ctx.config.queue
    model = build_queue_model(section)
    policy = queue_policy(section.get("policy", {}), model, ctx.config)
    sim = ctx.config.simulation
    kwargs: dict[str, Any] = {}
    if "block_size" in sim:
        kwargs["block_size"] = int(sim["block_size"])
    if sim.get("initial") is not None:
        kwargs["initial"] = tuple(sim["initial"])
    estimate = simulate_discounted(
        model,
        policy,
        horizon=float(sim.get("horizon", DEFAULT_HORIZON)),
        reps=int(sim.get("reps", 1000)),
        seed=ctx.seed,
        workers=ctx.workers,
        **kwargs,
    )
    return {"model": model.name, "policy": policy.describe(), "estimate": estimate.to_dict()}


def tune_lbp(ctx: RunContext) -> dict[str, Any]:
    model = build_queue_model(ctx.config.queue)
    section = ctx.config.lbp
    sim = ctx.config.simulation
    reps = int(sim.get("reps", 10_000))
    horizon = float(sim.get("horizon", DEFAULT_HORIZON))
    if section.get("tune", "beta") == "safety_stock":
        spec = ctx.config.queue.get("policy", {})
        if "checkpoint" not in spec:
            raise ArtifactMissing("safety-stock tuning needs queue.policy.checkpoint")
        best, estimates = tune_safety_stock(
            model,
            _load_gradient_net(spec["checkpoint"]),
            candidates=tuple(section.get("safety_stocks", SAFETY_STOCKS)),
            reps=reps,
            seed=ctx.seed,
            horizon=horizon,
            workers=ctx.workers,
        )
        return {
            "model": model.name,
            "safety_stock": best,
            "estimates": {str(s): e.to_dict() for s, e in estimates.items()},
        }
    search = lbp_grid_search(
        model,
        reps=reps,
        seed=ctx.seed,
        odd_range=tuple(section.get("odd_range", ODD_RANGE)),
        even_range=tuple(section.get("even_range", EVEN_RANGE)),
        horizon=horizon,
        workers=ctx.workers,
    )
    return {"model": model.name, **search.to_dict()}


def compare(ctx: RunContext) -> dict[str, Any]:
    problem = ctx.config.build_problem()
    specs = ctx.config.compare.get("policies", [])
    if len(specs) != 2:
        raise ArtifactMissing("compare needs exactly two policies", given=len(specs))
    policies = [diffusion_policy(spec, problem) for spec in specs]
    args = _heatmap_args(ctx.config, problem)
    _, _, points = heatmap_grid(problem, args["ranges"], args["resolution"], args["anchor"], args["axes"])
    labels = [region_labels(policy, points) for policy in policies]
    np.savez(ctx.path("labels.npz"), a=labels[0], b=labels[1])
    result: dict[str, Any] = {"policies": specs, "agreement": agreement_fraction(*labels)}
    if ctx.config.compare.get("simulate", False):
        sim_config = _diffusion_sim_config(ctx, problem)
        # both runs share the seed; pooled_stderr treats them as independent, so it overstates the paired error
        estimates = [simulate_policy_value(problem, policy, sim_config, ctx.workers) for policy in policies]
        result["estimates"] = [e.to_dict() for e in estimates]
        result["difference"] = {
            "mean": estimates[0].mean - estimates[1].mean,
            "stderr": pooled_stderr(*estimates),
        }
    logger.info(f"Policy agreement: {result['agreement']:.4f}")
    return result


def export_heatmap_cmd(ctx: RunContext) -> dict[str, Any]:
    problem = ctx.config.build_problem()
    spec = ctx.config.policy
    if not spec:
        raise ArtifactMissing("export-heatmap needs a 'policy' section")
    policy = diffusion_policy(spec, problem)
    args = _heatmap_args(ctx.config, problem)
    export_heatmap(policy, ctx.path("heatmap.csv"), **args)
    return {"policy": spec, "ranges": [list(r) for r in args["ranges"]], "resolution": args["resolution"]}


HANDLERS: dict[str, Handler] = {
    "solve-nn": solve_nn,
    "solve-mdp": solve_mdp,
    "solve-mca": solve_mca,
    "solve-1d": solve_1d,
    "simulate-queue": simulate_queue,
    "simulate-diffusion": simulate_diffusion,
    "tune-lbp": tune_lbp,
    "compare": compare,
    "export-heatmap": export_heatmap_cmd,
}
