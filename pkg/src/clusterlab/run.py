"""Experiment orchestration: configs, the training loop, evaluation, reports.

A run directory is self-describing: it holds the resolved config, the dataset,
the checkpoint, per-step loss and controller traces, per-clustering labels,
consensus labelings, and a ``report.json`` whose values match the printed
summary because both come from the same computation.
"""

from __future__ import annotations

import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import base_loss, consensus, controller, data, diversity, metrics, model
from .graph import Graph

WORKERS_ENV = "CLUSTERLAB_MAX_WORKERS"

# SeedSequence stream tags for the training loop (data.py owns tags 1 and 2).
_BATCH_STREAM = 3
_STEP_NOISE_STREAM = 4
_EVAL_NOISE_STREAM = 5


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, term: str):
        self.step = step
        self.term = term
        super().__init__(f"non-finite loss at step {step} in term '{term}'")


@dataclass
class ExperimentConfig:
    """Everything a run needs; defaults follow the package-wide conventions."""

    # dataset: a CSV path wins over the synthetic blob parameters
    data_csv: str = ""
    n_samples: int = 2000
    classes: int = 5
    dim: int = 16
    centroid_scale: float = 2.0
    blob_sigma: float = 1.1
    # model
    hidden_dim: int = 32
    feature_dim: int = 16
    clusterings: int = 20
    clusters: int = 5
    # diversity control
    similarity_target: float = 1.0
    momentum: float = 0.01
    bank_capacity: int = 10_000
    update_interval: int = 20
    # optimization
    learning_rate: float = 0.05
    steps: int = 3000
    batch_size: int = 256
    noise_sigma: float = 0.6
    seed: int = 0
    out_dir: str = "run"

    def validate(self) -> "ExperimentConfig":
        if self.clusterings < 1:
            raise ValueError("clusterings must be >= 1")
        if self.clusters < 2:
            raise ValueError("clusters must be >= 2")
        if not 0.0 <= self.similarity_target <= 1.0:
            raise ValueError("similarity_target must lie in [0, 1]")
        if not 0.0 < self.momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        if min(self.bank_capacity, self.update_interval, self.steps,
               self.batch_size, self.learning_rate) <= 0:
            raise ValueError("bank_capacity, update_interval, steps, batch_size "
                             "and learning_rate must be positive")
        return self


def parse_config_text(text: str, path: str = "<config>") -> ExperimentConfig:
    """key = value lines; '#' starts a comment; unknown keys are rejected."""
    fields = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    types = {f.name: type(getattr(ExperimentConfig(), f.name))
             for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}: line {line_number}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in fields:
            raise ValueError(f"{path}: line {line_number}: unknown key '{key}'")
        caster = types[key]
        try:
            values[key] = value if caster is str else caster(value)
        except ValueError:
            raise ValueError(
                f"{path}: line {line_number}: cannot parse '{value}' as {caster.__name__}"
            ) from None
    return ExperimentConfig(**values).validate()


def load_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(), str(path))


def save_config(config: ExperimentConfig, path) -> None:
    lines = [f"{f.name} = {getattr(config, f.name)}"
             for f in dataclasses.fields(ExperimentConfig)]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class RunReport:
    similarity_target: float
    measured_similarity: float | None     # mean pairwise NMI of the final labelings
    cnf: float
    per_clustering: list[dict]
    acc_mean: float | None
    acc_max: float | None
    consensus: dict[str, dict]
    files: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# -- training graph -----------------------------------------------------------

@dataclass
class TrainingGraph:
    graph: Graph
    batch_size: int
    view1_heads: list[int]
    view2_heads: list[int]
    main_nodes: list[int]
    info: diversity.DiversityGraphInfo


def build_training_graph(params: model.ModelParams, batch_size: int) -> TrainingGraph:
    g = Graph()
    leaves = model.declare_parameter_leaves(g, params)
    x1 = g.leaf("view1", (params.input_dim, batch_size), differentiable=False)
    x2 = g.leaf("view2", (params.input_dim, batch_size), differentiable=False)
    bound = g.leaf("similarity_bound", (1,), differentiable=False)
    heads1 = model.assignment_nodes(g, leaves, x1, params.n_clusterings, tag="_v1")
    heads2 = model.assignment_nodes(g, leaves, x2, params.n_clusterings, tag="_v2")
    main_nodes = []
    for k in range(params.n_clusterings):
        joint = base_loss.joint_distribution_nodes(g, heads1[k], heads2[k])
        main_nodes.append(base_loss.mi_loss_nodes(g, joint, tag=f"[{k}]"))
    info = diversity.total_loss_nodes(g, main_nodes, heads1, bound)
    g.set_output(info.total_node)
    return TrainingGraph(g, batch_size, heads1, heads2, main_nodes, info)


# -- training loop ------------------------------------------------------------

def train(config: ExperimentConfig) -> RunReport:
    """Run the full pipeline and populate ``config.out_dir`` with artifacts."""
    config.validate()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if config.data_csv:
        dataset = data.load_csv(config.data_csv)
    else:
        dataset = data.gen_blobs(config.seed, config.n_samples, config.classes,
                                 config.dim, config.centroid_scale, config.blob_sigma)
    if dataset.dim != config.dim:
        config = dataclasses.replace(config, dim=dataset.dim)
    save_config(config, out / "config.txt")
    data.save_dataset_csv(out / "dataset.csv", dataset)

    params = model.init(config.seed, config.dim, config.hidden_dim,
                        config.feature_dim, config.clusterings, config.clusters)
    batch_size = min(config.batch_size, dataset.n_samples)
    tg = build_training_graph(params, batch_size)
    watch = tg.main_nodes + tg.info.diversity_term_nodes + tg.view1_heads

    bank = controller.MemoryBank(
        config.clusterings, config.clusters, capacity=config.bank_capacity,
        ready_min=min(config.bank_capacity, dataset.n_samples, 1000))
    state = controller.ThresholdState(
        d=1.0, m=config.momentum, interval=config.update_interval)

    batch_rng = np.random.default_rng(
        np.random.SeedSequence([config.seed & 0xFFFFFFFF, _BATCH_STREAM]))
    step_noise_seeds = np.random.SeedSequence(
        [config.seed & 0xFFFFFFFF, _STEP_NOISE_STREAM]).generate_state(config.steps)

    k = config.clusterings
    loss_rows = []
    trace_rows = []
    for step in range(1, config.steps + 1):
        idx = batch_rng.choice(dataset.n_samples, size=batch_size, replace=False)
        batch = dataset.features[idx]
        batch2 = data.augment(batch, config.noise_sigma,
                              int(step_noise_seeds[step - 1]))
        bindings = dict(params.tensors)
        bindings["view1"] = batch.T
        bindings["view2"] = batch2.T
        bindings["similarity_bound"] = np.array([state.d])
        total, grads, watched = tg.graph.forward_backward(bindings, watch)
        total_value = float(total[0])
        if not np.isfinite(total_value):
            _raise_divergence(tg, step, watch, watched)
        params.apply_gradient(grads, config.learning_rate)

        main_values = [float(v[0]) for v in watched[:k]]
        div_values = [float(v[0]) for v in watched[k: 2 * k]]
        head_values = watched[2 * k:]
        loss_rows.append((step, total_value,
                          float(np.mean(main_values)), float(np.mean(div_values))))

        hard = np.stack([v.argmax(axis=0) for v in head_values])
        controller.push(bank, hard)
        should_measure = (step % state.interval == 0 and bank.ready
                          and config.clusterings >= 2)
        state = controller.maybe_update(state, bank, config.similarity_target, step)
        if should_measure:
            trace_rows.append((step, state.d, state.last_measured,
                               config.similarity_target))

    _write_loss_curve(out / "loss_curve.csv", loss_rows)
    _write_trace(out / "controller_trace.csv", trace_rows)
    model.save_checkpoint(params, out / "checkpoint.txt")
    return compute_report(out)


def _raise_divergence(tg: TrainingGraph, step: int, watch, watched):
    for node_id, value in zip(watch, watched):
        if not np.all(np.isfinite(value)):
            raise TrainingDiverged(step, tg.graph.nodes[node_id].name())
    raise TrainingDiverged(step, "total_loss")


def _write_loss_curve(path, rows) -> None:
    lines = ["step,total,main_mean,div_mean"]
    lines += [f"{s},{t:.17g},{m:.17g},{d:.17g}" for s, t, m, d in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def _write_trace(path, rows) -> None:
    lines = ["step,d,D_R,D_T"]
    lines += [f"{s},{d:.17g},{dr:.17g},{dt:.17g}" for s, d, dr, dt in rows]
    Path(path).write_text("\n".join(lines) + "\n")


# -- evaluation ---------------------------------------------------------------

@dataclass
class EvaluationResult:
    labels: np.ndarray        # (K, N) hard labels, argmax with lowest-index ties
    main_losses: np.ndarray   # (K,) base loss per clustering over the full pass
    cnf: float


def evaluate_model(params: model.ModelParams, features: np.ndarray,
                   noise_sigma: float, chunk: int = 1024) -> EvaluationResult:
    """One deterministic no-gradient pass over the dataset.

    The base loss is recomputed against a noise view drawn from the
    checkpoint seed, so repeated evaluations agree exactly.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    view2 = data.augment(features, noise_sigma,
                         int(np.random.SeedSequence(
                             [params.seed & 0xFFFFFFFF, _EVAL_NOISE_STREAM]
                         ).generate_state(1)[0]))
    k, c = params.n_clusterings, params.n_clusters
    joints = np.zeros((k, c, c))
    labels = np.empty((k, n), dtype=np.int64)
    top = np.empty((k, n))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        p1 = model.forward(params, features[start:stop])
        p2 = model.forward(params, view2[start:stop])
        for head in range(k):
            joints[head] += p1[head].values @ p2[head].values.T
            labels[head, start:stop] = p1[head].hard_labels()
            top[head, start:stop] = p1[head].values.max(axis=0)
    joints /= n
    main_losses = np.array([
        base_loss.mi_loss(base_loss.JointDistribution((j + j.T) / 2.0))
        for j in joints
    ])
    return EvaluationResult(labels, main_losses, float(top.mean()))


# -- reporting ----------------------------------------------------------------

def _truth_metrics(labels: np.ndarray, truth: np.ndarray | None) -> dict:
    if truth is None:
        return {"acc": None, "nmi": None, "ari": None}
    return {"acc": metrics.accuracy(labels, truth),
            "nmi": metrics.nmi(labels, truth),
            "ari": metrics.ari(labels, truth)}


def compute_report(run_dir, print_table: bool = False) -> RunReport:
    """Evaluate a finished run directory and (re)write its derived artifacts.

    Writes per-clustering labels, per-clustering losses, the pairwise-NMI
    matrix, the three consensus labelings, and ``report.json``. The returned
    report and the JSON hold identical values.
    """
    run_dir = Path(run_dir)
    for required in ("config.txt", "dataset.csv", "checkpoint.txt"):
        if not (run_dir / required).exists():
            raise FileNotFoundError(f"{run_dir} is not a completed run: missing {required}")
    config = load_config(run_dir / "config.txt")
    dataset = data.load_csv(run_dir / "dataset.csv")
    params = model.load_checkpoint(run_dir / "checkpoint.txt")

    evaluation = evaluate_model(params, dataset.features, config.noise_sigma)
    for head in range(params.n_clusterings):
        data.save_labels_csv(run_dir / f"labels_k{head}.csv", evaluation.labels[head])
    _write_eval_losses(run_dir / "eval_losses.csv", evaluation.main_losses)

    nmi_matrix = metrics.pairwise_nmi_matrix(list(evaluation.labels))
    data.save_matrix_csv(run_dir / "pairwise_nmi.csv", nmi_matrix)
    if params.n_clusterings >= 2:
        iu = np.triu_indices(params.n_clusterings, 1)
        measured = float(nmi_matrix[iu].mean())
    else:
        measured = None

    per_clustering = []
    for head in range(params.n_clusterings):
        entry = {"clustering": head,
                 "main_loss": float(evaluation.main_losses[head])}
        entry.update(_truth_metrics(evaluation.labels[head], dataset.labels))
        per_clustering.append(entry)
    accs = [e["acc"] for e in per_clustering]
    have_truth = dataset.labels is not None

    ensemble = consensus.Ensemble(evaluation.labels, evaluation.main_losses,
                                  config.clusters)
    consensus_metrics = {}
    for strategy in consensus.STRATEGIES:
        labels = consensus.consensus_for_strategy(ensemble, strategy)
        data.save_labels_csv(run_dir / f"consensus_{strategy}.csv", labels)
        consensus_metrics[strategy] = _truth_metrics(labels, dataset.labels)

    report = RunReport(
        similarity_target=config.similarity_target,
        measured_similarity=measured,
        cnf=evaluation.cnf,
        per_clustering=per_clustering,
        acc_mean=float(np.mean(accs)) if have_truth else None,
        acc_max=float(np.max(accs)) if have_truth else None,
        consensus=consensus_metrics,
        files={name: str(run_dir / name) for name in
               ("controller_trace.csv", "loss_curve.csv", "pairwise_nmi.csv")},
    )
    (run_dir / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    if print_table:
        print(render_table(report))
    return report


def _write_eval_losses(path, losses) -> None:
    lines = ["clustering,main_loss"]
    lines += [f"{k},{v:.17g}" for k, v in enumerate(losses)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_eval_losses(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "clustering,main_loss":
        raise ValueError(f"{path}: expected header clustering,main_loss")
    return np.array([float(line.split(",")[1]) for line in lines[1:]])


def _cell(value) -> str:
    return "-" if value is None else f"{value:.4f}"


def render_table(report: RunReport) -> str:
    lines = [
        f"target similarity (D_T):    {_cell(report.similarity_target)}",
        f"measured similarity (D_R):  {_cell(report.measured_similarity)}",
        f"assignment confidence:      {_cell(report.cnf)}",
        f"mean ACC: {_cell(report.acc_mean)}   max ACC: {_cell(report.acc_max)}",
        "consensus: " + "  ".join(
            f"{s}: ACC={_cell(v['acc'])} NMI={_cell(v['nmi'])} ARI={_cell(v['ari'])}"
            for s, v in report.consensus.items()),
        "per clustering:",
        "  k    ACC     NMI     ARI     main_loss",
    ]
    for entry in report.per_clustering:
        lines.append(
            f"  {entry['clustering']:<4} {_cell(entry['acc']):<7} "
            f"{_cell(entry['nmi']):<7} {_cell(entry['ari']):<7} {entry['main_loss']:.6f}")
    return "\n".join(lines)


# -- multi-run helper ---------------------------------------------------------

def run_many(configs: list[ExperimentConfig]) -> list[RunReport]:
    """Train several configs in separate processes.

    Worker count is capped by the ``CLUSTERLAB_MAX_WORKERS`` environment
    variable (default: the CPU count).
    """
    workers = int(os.environ.get(WORKERS_ENV, os.cpu_count() or 1))
    workers = max(1, min(workers, len(configs)))
    if workers == 1:
        return [train(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(train, configs))
