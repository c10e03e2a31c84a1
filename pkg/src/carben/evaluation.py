"""Robust-accuracy benchmarking, rank correlation, and the leaderboard.

Threat specifications: clean (no attack), single-component, linf-only,
semantic composite (the five semantic components), and the full composite
(all six). Robust accuracy is post-attack correctness over the dataset.

Leaderboard entries are ranked by full-composite robust accuracy,
descending; ties break on semantic accuracy, then clean accuracy, then
model name. The JSON file is written atomically (temp file + rename).
"""

from __future__ import annotations

import json
import os
import tempfile
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import classifier
from .attack import AttackConfig, order_search
from .classifier import LabeledDataset, ModelWeights
from .transforms import CANONICAL_ORDER, SEMANTIC_KINDS, Kind

LEADERBOARD_VERSION = 1
THREAT_NAMES = ("clean", "linf", "semantic", "full")


class LeaderboardError(ValueError):
    """Malformed or out-of-range leaderboard document."""


class LeaderboardVersionError(LeaderboardError):
    pass


class LeaderboardRangeError(LeaderboardError):
    pass


@dataclass(frozen=True)
class ThreatSpec:
    """What to attack with: a named threat plus config overrides."""

    name: str  # clean | single:<kind> | linf | semantic | full
    strategy: str = "fixed"
    config: AttackConfig | None = None

    def enabled_kinds(self) -> tuple[Kind, ...]:
        if self.name == "clean":
            return ()
        if self.name == "linf":
            return (Kind.LINF,)
        if self.name == "semantic":
            return tuple(SEMANTIC_KINDS)
        if self.name == "full":
            return tuple(CANONICAL_ORDER)
        if self.name.startswith("single:"):
            return (Kind[self.name.split(":", 1)[1].upper()],)
        raise ValueError(f"unknown threat {self.name!r}")


@dataclass
class EvaluationReport:
    model_id: str
    dataset_id: str
    dataset_size: int
    robust_accuracy: dict[str, float]
    success_counts: dict[str, int]
    config_digest: str
    wall_seconds: float


_WORKER_STATE: dict = {}


def _init_worker(weights, base_config):
    _WORKER_STATE["weights"] = weights
    _WORKER_STATE["config"] = base_config


def _eval_task(args):
    image, label, spec = args
    return _attack_sample(_WORKER_STATE["weights"], image, label, spec, _WORKER_STATE["config"])


def _attack_sample(weights, image, label, spec: ThreatSpec, base: AttackConfig):
    cfg = replace(spec.config or base, enabled=spec.enabled_kinds())
    if not cfg.enabled:
        pred = classifier.forward(weights, image, true_label=label)
        return bool(pred.correct)
    _, result = order_search(weights, image, label, cfg, spec.strategy)
    return bool(result.final_prediction.correct)


def evaluate(
    weights: ModelWeights,
    dataset: LabeledDataset,
    threats: list[ThreatSpec],
    config: AttackConfig,
    model_id: str = "model",
    workers: int = 1,
) -> EvaluationReport:
    """Attack every sample under every threat and count surviving correctness.

    With workers > 1, per-sample attacks fan out to a process pool; the
    aggregation is a pure count, so results match the sequential run.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    start = time.monotonic()
    accs, successes = {}, {}
    n = len(dataset)
    pool = None
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        pool = ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(weights, config))
    try:
        for spec in threats:
            if pool is not None:
                tasks = [(image, label, spec) for image, label in zip(dataset.images, dataset.labels)]
                outcomes = list(pool.map(_eval_task, tasks, chunksize=max(1, n // (4 * workers))))
            else:
                outcomes = [
                    _attack_sample(weights, image, label, spec, config)
                    for image, label in zip(dataset.images, dataset.labels)
                ]
            correct = sum(outcomes)
            accs[spec.name] = correct / n
            successes[spec.name] = n - correct
    finally:
        if pool is not None:
            pool.shutdown()
    digest = f"T={config.steps},S={config.sweeps},af={config.step_fraction},eps={config.epsilon},seed={config.seed}"
    return EvaluationReport(
        model_id=model_id,
        dataset_id=dataset.provenance or "dataset",
        dataset_size=n,
        robust_accuracy=accs,
        success_counts=successes,
        config_digest=digest,
        wall_seconds=time.monotonic() - start,
    )


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Descending ranks (1 = largest), average rank for ties."""
    order = np.argsort(-values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    pos = 1
    sorted_vals = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        avg = (pos + pos + (j - i)) / 2.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        pos += j - i + 1
        i = j + 1
    return ranks


def spearman_rank_corr(scores_a, scores_b) -> float:
    """Pearson correlation of average-tie rank vectors; in [-1, 1]."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("score vectors must be 1-D and equal length")
    if len(a) < 2:
        raise ValueError("need at least 2 scores")
    ra, rb = _average_ranks(a), _average_ranks(b)
    da, db = ra - ra.mean(), rb - rb.mean()
    va, vb = float((da * da).sum()), float((db * db).sum())
    if va == 0.0 or vb == 0.0:
        raise ZeroDivisionError("zero rank variance (all values tied)")
    rho = float((da * db).sum() / np.sqrt(va * vb))
    return max(-1.0, min(1.0, rho))


# ---------------------------------------------------------------------------
# Leaderboard
# ---------------------------------------------------------------------------

_ENTRY_FIELDS = (
    "model_name",
    "architecture",
    "reference",
    "clean_accuracy",
    "linf_accuracy",
    "semantic_accuracy",
    "full_accuracy",
    "submitted_at",
)
_ACC_FIELDS = ("clean_accuracy", "linf_accuracy", "semantic_accuracy", "full_accuracy")


@dataclass(frozen=True)
class LeaderboardEntry:
    model_name: str
    architecture: str = ""
    reference: str = ""
    clean_accuracy: float = 0.0
    linf_accuracy: float = 0.0
    semantic_accuracy: float = 0.0
    full_accuracy: float = 0.0
    submitted_at: str = ""

    def __post_init__(self):
        for f in _ACC_FIELDS:
            v = getattr(self, f)
            if not 0.0 <= v <= 1.0:
                raise LeaderboardRangeError(f"{f} = {v} outside [0, 1]")


def leaderboard_rank(entries) -> list[LeaderboardEntry]:
    """Full accuracy desc, ties by semantic, clean, then model name."""
    return sorted(
        entries,
        key=lambda e: (-e.full_accuracy, -e.semantic_accuracy, -e.clean_accuracy, e.model_name),
    )


def leaderboard_save(entries, path: str) -> None:
    doc = {
        "version": LEADERBOARD_VERSION,
        "entries": [{f: getattr(e, f) for f in _ENTRY_FIELDS} for e in entries],
    }
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2)
            f.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def leaderboard_load(path: str) -> list[LeaderboardEntry]:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise LeaderboardError("malformed leaderboard JSON") from exc
    if not isinstance(doc, dict) or doc.get("version") != LEADERBOARD_VERSION:
        raise LeaderboardVersionError(f"expected version {LEADERBOARD_VERSION}")
    entries = []
    for rec in doc.get("entries", []):
        unknown = set(rec) - set(_ENTRY_FIELDS)
        if unknown:
            raise LeaderboardError(f"unknown entry fields: {sorted(unknown)}")
        entries.append(LeaderboardEntry(**rec))
    return entries


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------

_COLUMNS = ("rank", "name", "architecture", "clean", "linf", "semantic", "full")


def _entry_row(rank: int, e: LeaderboardEntry) -> list[str]:
    return [
        str(rank),
        e.model_name,
        e.architecture,
        f"{e.clean_accuracy:.4f}",
        f"{e.linf_accuracy:.4f}",
        f"{e.semantic_accuracy:.4f}",
        f"{e.full_accuracy:.4f}",
    ]


def render_entries(entries, fmt: str = "markdown") -> str:
    """Render ranked leaderboard entries as a markdown or CSV table."""
    rows = [_entry_row(i + 1, e) for i, e in enumerate(entries)]
    if fmt == "csv":
        def esc(v):
            return f'"{v.replace(chr(34), chr(34) * 2)}"' if any(c in v for c in ',"\n') else v
        lines = [",".join(_COLUMNS)] + [",".join(esc(c) for c in row) for row in rows]
        return "\n".join(lines) + "\n"
    if fmt == "markdown":
        lines = ["| " + " | ".join(_COLUMNS) + " |", "|" + "---|" * len(_COLUMNS)]
        lines += ["| " + " | ".join(row) + " |" for row in rows]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def render_report(report: EvaluationReport, fmt: str = "markdown") -> str:
    """Render a single evaluation report as a small accuracy table."""
    names = list(report.robust_accuracy)
    values = [f"{report.robust_accuracy[n]:.4f}" for n in names]
    if fmt == "csv":
        return ",".join(["model"] + names) + "\n" + ",".join([report.model_id] + values) + "\n"
    if fmt == "markdown":
        lines = [
            "| " + " | ".join(["model"] + names) + " |",
            "|" + "---|" * (len(names) + 1),
            "| " + " | ".join([report.model_id] + values) + " |",
        ]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def report_to_entry(report: EvaluationReport, name: str, architecture: str = "", reference: str = "") -> LeaderboardEntry:
    acc = report.robust_accuracy
    return LeaderboardEntry(
        model_name=name,
        architecture=architecture,
        reference=reference,
        clean_accuracy=acc.get("clean", 0.0),
        linf_accuracy=acc.get("linf", 0.0),
        semantic_accuracy=acc.get("semantic", 0.0),
        full_accuracy=acc.get("full", 0.0),
        submitted_at=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    )
