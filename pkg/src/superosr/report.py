"""Artifact serialization and report emission.

Run artifacts are line-oriented text with explicit shape headers so they are
human-diffable and round-trip exactly.  Reports are CSVs with fixed schemas:

* ``metrics.csv``      -- run,seed,method,set,group,precision,recall,f1,accuracy
* ``summary.csv``      -- one row per (set, method) with per-group metric means
* ``cumulative_f1.csv`` -- method,run_count,cumulative_f1 (stability-vs-runs series)
* ``openness.csv``     -- c_train,c_test,c_target,openness,method,f1_mean,f1_median
* ``manifest.json``    -- config snapshot, per-run summary, Welch p-values per
                          method pair on overall F1

Nothing time-dependent is written, so identical inputs emit identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .evaluation import GROUPS, GroupMetrics, RunMetrics, aggregate, welch_t_test
from .experiment import OpennessLevel, RunArtifact
from .openmax import WeibullModel
from .predictor import ThresholdTable
from .representation import MeanActivationVector

METRICS_HEADER = "run,seed,method,set,group,precision,recall,f1,accuracy"


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def _fmt_exact(x: float) -> str:
    return format(float(x), ".17g")


def _vector_line(vec: np.ndarray, exact: bool = True) -> str:
    fmt = _fmt_exact if exact else _fmt
    return " ".join(fmt(v) for v in np.asarray(vec).ravel())


def artifact_name(artifact: RunArtifact) -> str:
    method = artifact.method.replace("+", "-")
    return f"run_{artifact.set_name}_{method}_{artifact.run_index:03d}.txt"


def write_run_artifact(artifact: RunArtifact, path) -> None:
    lines = [
        "[run]",
        f"method = {artifact.method}",
        f"set = {artifact.set_name}",
        f"run_index = {artifact.run_index}",
        f"seed = {artifact.seed}",
        "known_classes = " + ",".join(str(c) for c in artifact.known_classes),
        "[config]",
        *artifact.config_lines,
        "[mavs]",
        f"shape = {len(artifact.mavs)} {artifact.mavs[0].vector.shape[0]}",
        "counts = " + " ".join(str(m.count) for m in artifact.mavs),
    ]
    for m in artifact.mavs:
        lines.append(_vector_line(m.vector))
    lines += [
        "[thresholds]",
        f"percentile = {_fmt(artifact.thresholds.percentile)}",
        f"distance_kind = {artifact.thresholds.distance_kind}",
        "values = " + _vector_line(artifact.thresholds.thresholds),
    ]
    if artifact.weibulls is not None:
        lines.append("[weibulls]")
        for w in artifact.weibulls:
            lines.append(
                f"{w.class_id} {_fmt_exact(w.shape)} {_fmt_exact(w.scale)} "
                f"{_fmt_exact(w.shift)} {w.tail_size}"
            )
    lines.append("[metrics]")
    for group in GROUPS:
        g = artifact.metrics.groups[group]
        lines.append(
            f"{group} {_fmt_exact(g.precision)} {_fmt_exact(g.recall)} "
            f"{_fmt_exact(g.f1)} {_fmt_exact(g.accuracy)}"
        )
    lines.append("per_class_precision = " + _vector_line(artifact.metrics.per_class_precision))
    lines.append("per_class_recall = " + _vector_line(artifact.metrics.per_class_recall))
    lines.append("per_class_f1 = " + _vector_line(artifact.metrics.per_class_f1))
    lines.append("[loss_trace]")
    lines.append(f"length = {artifact.loss_trace.shape[0]}")
    for v in artifact.loss_trace:
        lines.append(format(float(v), ".9g"))
    Path(path).write_text("\n".join(lines) + "\n")


def _split_sections(text: str, path) -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {}
    current = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif current is None:
            raise DataFormatError(f"{path}: content before first section")
        else:
            sections[current].append(line)
    return sections


def _kv(lines: list[str]) -> dict[str, str]:
    out = {}
    for line in lines:
        if "=" in line:
            key, value = (part.strip() for part in line.split("=", 1))
            out[key] = value
    return out


def load_run_artifact(path) -> RunArtifact:
    path = Path(path)
    sections = _split_sections(path.read_text(), path)
    for needed in ("run", "config", "mavs", "thresholds", "metrics", "loss_trace"):
        if needed not in sections:
            raise DataFormatError(f"{path}: missing [{needed}] section")
    run = _kv(sections["run"])
    mav_lines = sections["mavs"]
    head = _kv(mav_lines[:2])
    k, dim = (int(tok) for tok in head["shape"].split())
    counts = [int(tok) for tok in head["counts"].split()]
    vectors = []
    for row in mav_lines[2 : 2 + k]:
        vec = np.array([float(tok) for tok in row.split()])
        if vec.shape[0] != dim:
            raise DataFormatError(f"{path}: mean vector width {vec.shape[0]} != header {dim}")
        vectors.append(vec)
    mavs = [MeanActivationVector(i, vectors[i], counts[i]) for i in range(k)]

    thr = _kv(sections["thresholds"])
    table = ThresholdTable(
        thresholds=np.array([float(tok) for tok in thr["values"].split()]),
        percentile=float(thr["percentile"]),
        distance_kind=thr["distance_kind"],
    )

    weibulls = None
    if "weibulls" in sections:
        weibulls = []
        for line in sections["weibulls"]:
            cls, shape, scale, shift, tail = line.split()
            weibulls.append(
                WeibullModel(int(cls), float(shape), float(scale), float(shift), int(tail))
            )

    groups = {}
    per_class = {}
    for line in sections["metrics"]:
        if line.startswith("per_class_"):
            key, value = (part.strip() for part in line.split("=", 1))
            per_class[key] = np.array([float(tok) for tok in value.split()])
        else:
            name, p, r, f1, acc = line.split()
            groups[name] = GroupMetrics(float(p), float(r), float(f1), float(acc))
    run_metrics = RunMetrics(
        per_class_precision=per_class["per_class_precision"],
        per_class_recall=per_class["per_class_recall"],
        per_class_f1=per_class["per_class_f1"],
        groups=groups,
        seed=int(run["seed"]),
        method=run["method"],
        set_name=run["set"],
    )
    trace_lines = sections["loss_trace"]
    length = int(_kv(trace_lines[:1])["length"])
    trace = np.array([float(tok) for tok in trace_lines[1 : 1 + length]])
    return RunArtifact(
        method=run["method"],
        set_name=run["set"],
        run_index=int(run["run_index"]),
        seed=int(run["seed"]),
        known_classes=[int(tok) for tok in run["known_classes"].split(",")],
        config_lines=sections["config"],
        mavs=mavs,
        thresholds=table,
        weibulls=weibulls,
        metrics=run_metrics,
        loss_trace=trace,
        wall_clock=0.0,
    )


def write_artifacts(artifacts: list[RunArtifact], out_dir) -> list[Path]:
    run_dir = Path(out_dir) / "runs"
    run_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for artifact in artifacts:
        path = run_dir / artifact_name(artifact)
        write_run_artifact(artifact, path)
        paths.append(path)
    return paths


def load_artifacts(out_dir) -> list[RunArtifact]:
    run_dir = Path(out_dir) / "runs"
    paths = sorted(run_dir.glob("run_*.txt"))
    if not paths:
        raise DataFormatError(f"no run artifacts under {run_dir}")
    return [load_run_artifact(p) for p in paths]


def _method_order(artifacts: list[RunArtifact]) -> list[str]:
    seen = []
    for a in artifacts:
        if a.method not in seen:
            seen.append(a.method)
    return seen


def _set_order(artifacts: list[RunArtifact]) -> list[str]:
    seen = []
    for a in artifacts:
        if a.set_name not in seen:
            seen.append(a.set_name)
    return seen


def emit_report(artifacts: list[RunArtifact], out_dir) -> dict[str, Path]:
    """Write the fixed-schema report files; returns name -> path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}

    rows = [METRICS_HEADER]
    for a in artifacts:
        for group in GROUPS:
            g = a.metrics.groups[group]
            rows.append(
                f"{a.run_index},{a.seed},{a.method},{a.set_name},{group},"
                f"{_fmt(g.precision)},{_fmt(g.recall)},{_fmt(g.f1)},{_fmt(g.accuracy)}"
            )
    files["metrics"] = out_dir / "metrics.csv"
    files["metrics"].write_text("\n".join(rows) + "\n")

    header = ["set", "method", "runs"]
    for metric in ("precision", "recall", "f1", "accuracy"):
        for group in GROUPS:
            header.append(f"{metric}_{group}")
    rows = [",".join(header)]
    for set_name in _set_order(artifacts):
        for method in _method_order(artifacts):
            group_runs = [
                a.metrics for a in artifacts if a.method == method and a.set_name == set_name
            ]
            if not group_runs:
                continue
            summary = aggregate(group_runs)
            row = [set_name, method, str(len(group_runs))]
            for metric in ("precision", "recall", "f1", "accuracy"):
                for group in GROUPS:
                    row.append(_fmt(summary.stats[group][metric][0]))
            rows.append(",".join(row))
    files["summary"] = out_dir / "summary.csv"
    files["summary"].write_text("\n".join(rows) + "\n")

    rows = ["method,run_count,cumulative_f1"]
    for method in _method_order(artifacts):
        runs = [a.metrics for a in artifacts if a.method == method]
        series = aggregate(runs).cumulative_f1
        for i, value in enumerate(series, start=1):
            rows.append(f"{method},{i},{_fmt(value)}")
    files["cumulative_f1"] = out_dir / "cumulative_f1.csv"
    files["cumulative_f1"].write_text("\n".join(rows) + "\n")

    manifest = {
        "config": artifacts[0].config_lines,
        "runs": [
            {
                "set": a.set_name,
                "method": a.method,
                "run_index": a.run_index,
                "seed": a.seed,
                "f1_overall": round(a.metrics.groups["overall"].f1, 12),
                "accuracy_overall": round(a.metrics.groups["overall"].accuracy, 12),
            }
            for a in artifacts
        ],
        "p_values_overall_f1": {},
    }
    methods = _method_order(artifacts)
    for i, ma in enumerate(methods):
        for mb in methods[i + 1 :]:
            fa = [a.metrics.groups["overall"].f1 for a in artifacts if a.method == ma]
            fb = [a.metrics.groups["overall"].f1 for a in artifacts if a.method == mb]
            if len(fa) >= 2 and len(fb) >= 2:
                manifest["p_values_overall_f1"][f"{ma} vs {mb}"] = round(
                    welch_t_test(fa, fb), 12
                )
    files["manifest"] = out_dir / "manifest.json"
    files["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return files


def emit_openness_report(levels: list[OpennessLevel], out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = ["c_train,c_test,c_target,openness,method,f1_mean,f1_median"]
    for level in levels:
        rows.append(
            f"{level.c_train},{level.c_test},{level.c_target},{_fmt(level.openness)},"
            f"{level.method},{_fmt(level.f1_mean)},{_fmt(level.f1_median)}"
        )
    path = out_dir / "openness.csv"
    path.write_text("\n".join(rows) + "\n")
    return path
