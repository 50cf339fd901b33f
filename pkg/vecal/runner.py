"""Experiment orchestration behind the CLI subcommands.

Each subcommand reads its inputs from files and writes its outputs through
one :class:`~vecal.artifacts.ArtifactStore`, so the stages can run as
separate processes: ``synth`` -> ``process`` -> ``fit`` / ``eval`` /
``crossval`` -> ``report``.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import pandas as pd

from .artifacts import ArtifactStore, Provenance, read_json, read_samples_csv
from .calibration import fit_model, split
from .config import RunConfig
from .consumption import deserialize, serialize
from .energy import process_series, sort_samples, summarize, summary_table
from .errors import ArtifactIOError, ValidationError, VecalError
from .evaluation import (
    CROSS_TESTS,
    cell_density_frame,
    cross_matrix,
    matrix_frame,
    prediction_trace,
    residual_metrics,
    residuals,
)
from .logger import get_logger
from .models import CleaningReport, EnergySample, EvalMatrix, FitReport, ModelCoefficients, ModelKind, VehicleMode
from .plugin import PluginManager
from .synth import SynthConfig, make_dataset, write_dataset
from .trajectory import load_dataset, resample
from .utils import run_parallel

SAMPLES_FILE = "samples.csv"
TABLE_FILES = {"test1": "crossval_test1.csv", "test2": "crossval_test2.csv", "test3": "crossval_test3.csv"}


def model_file(mode: VehicleMode, kind: ModelKind) -> str:
    return f"models/{mode.value}_{kind.cli_name}.json"


class ExperimentRunner:
    """Run vecal stages against one output directory."""

    def __init__(
        self,
        config: RunConfig,
        out_dir: Path,
        plugins: Optional[PluginManager] = None,
        progress: Optional[bool] = None,
    ):
        self.config = config
        self.out_dir = Path(out_dir)
        self.store = ArtifactStore(
            self.out_dir,
            Provenance(config=config.echo(), seeds=config.seeds(), metric_mode=config.metric_mode.value),
        )
        self.plugin_manager = plugins if plugins is not None else PluginManager()
        self.progress = progress
        self.logger = get_logger()

        self.series_count = 0
        self.samples_count = 0
        self.cleaning: Optional[CleaningReport] = None
        self.fit_reports: Dict[Tuple[VehicleMode, ModelKind], FitReport] = {}
        self.matrices: Dict[str, EvalMatrix] = {}

    def _log(self, event: str, **fields: Any) -> None:
        self.logger.info(json.dumps({"event": event, **fields}, default=str))

    def _parallel(self, tasks, desc: str):
        return run_parallel(tasks, self.config.workers, desc=desc, progress=self.progress)

    # -- synth -------------------------------------------------------------
    def synthesize(self, synth_config: SynthConfig) -> List[str]:
        dataset = make_dataset(synth_config)
        written = write_dataset(dataset, self.store)
        self.series_count = len(dataset.runs)
        self._log("synth_completed", runs=len(dataset.runs), files=len(written))
        return written

    # -- process -----------------------------------------------------------
    def process(self, inputs: Sequence[Path], allow_unsorted: bool = False
                ) -> Tuple[List[EnergySample], CleaningReport]:
        """Ingest, resample, convert and clean every run; write samples and reports."""
        runs = load_dataset(inputs, allow_unsorted=allow_unsorted)
        if not runs:
            raise ValidationError("no runs found in the inputs")
        cfg = self.config

        def pipeline(key, records):
            try:
                series = resample(records, cfg.dt)
                return process_series(series, cfg.powertrain, cfg.min_speed, cfg.zero_accel_energy_floor)
            except VecalError as e:
                self.logger.error(json.dumps({"event": "run_failed", "mode": key[0].value,
                                              "run_id": key[1], "error": str(e)}))
                raise

        results = self._parallel(
            {key: (lambda key=key, records=records: pipeline(key, records)) for key, records in runs.items()},
            "process runs",
        )

        samples: List[EnergySample] = []
        total = CleaningReport()
        per_run = []
        for (mode, run_id), (kept, report) in results.items():
            samples.extend(kept)
            total = total + report
            per_run.append({"mode": mode.value, "run_id": run_id, **report.to_dict()})
        samples = sort_samples(samples)
        if not samples:
            raise ValidationError("cleaning removed every sample")

        self.store.write_samples_csv(SAMPLES_FILE, samples)
        self.store.write_json("cleaning_report.json", {"total": total.to_dict(), "runs": per_run})
        summary = summarize(samples)
        self.store.write_json("data_summary.json", {"summary": summary})
        self.store.write_csv("data_summary.csv", summary_table(summary))

        self.series_count = len(runs)
        self.samples_count = len(samples)
        self.cleaning = total
        self._log("process_completed", runs=len(runs), **total.to_dict())
        self.plugin_manager.dispatch("after_process", len(runs), total)
        return samples, total

    # -- fit ---------------------------------------------------------------
    def fit(self, samples: Sequence[EnergySample], kinds: Iterable[ModelKind],
            modes: Iterable[VehicleMode]) -> Dict[Tuple[VehicleMode, ModelKind], FitReport]:
        """Split each mode's samples and fit every requested model on the training part."""
        kinds = list(kinds)
        tasks = {}
        for mode in modes:
            data = [s for s in samples if s.vehicle_mode == mode]
            if not data:
                raise ValidationError(f"no {mode.value} samples to fit")
            train, test = split(data, self.config.split)
            for kind in kinds:
                tasks[(mode, kind)] = (lambda kind=kind, train=train, test=test:
                                       fit_model(kind, train, test, self.config.solver))

        reports = self._parallel(tasks, "fit models")
        for (mode, kind), report in reports.items():
            self.store.write_json(model_file(mode, kind), serialize(report.coefficients))
            self.store.write_json(f"fits/{mode.value}_{kind.cli_name}.json", {
                "mode": mode.value,
                **report.to_dict(),
                "sse_history": list(report.sse_history),
                "model_file": model_file(mode, kind),
            })
            self.plugin_manager.dispatch("after_fit", report, mode=mode.value)
        self.fit_reports.update(reports)
        self._log("fit_completed", fits=len(reports),
                  converged=all(r.converged for r in reports.values()))
        return reports

    # -- eval --------------------------------------------------------------
    def load_models(self, model_paths: Optional[Sequence[Path]] = None
                    ) -> Dict[VehicleMode, Dict[ModelKind, ModelCoefficients]]:
        """Models keyed by the vehicle mode they were trained on.

        Without explicit paths every ``models/<mode>_<kind>.json`` in the
        output directory is used.
        """
        if model_paths:
            paths = [Path(p) for p in model_paths]
        else:
            paths = sorted((self.out_dir / "models").glob("*.json"))
        if not paths:
            raise ArtifactIOError(self.out_dir / "models", "no model files found; run `fit` first")

        models: Dict[VehicleMode, Dict[ModelKind, ModelCoefficients]] = {}
        for path in paths:
            coeffs = deserialize(read_json(path))
            span = coeffs.fit_meta.get("train_span")
            targets = [VehicleMode.parse(span[0][0])] if span else list(VehicleMode)
            for mode in targets:
                models.setdefault(mode, {})[coeffs.kind] = coeffs
        return models

    def evaluate(self, samples: Sequence[EnergySample], model_paths: Optional[Sequence[Path]] = None,
                 runs: Optional[Sequence[int]] = None) -> Dict[str, Any]:
        """Prediction traces for selected runs and residual metrics per model."""
        models = self.load_models(model_paths)
        runs = list(runs or self.config.eval_runs)
        mode_value = self.config.metric_mode
        metrics: Dict[str, Dict[str, Any]] = {}
        traces: List[Dict[str, Any]] = []

        for mode in VehicleMode:
            mode_models = models.get(mode)
            data = [s for s in samples if s.vehicle_mode == mode]
            if not mode_models or not data:
                continue
            metrics[mode.value] = {
                kind.cli_name: residual_metrics(residuals(coeffs, data), mode_value)
                for kind, coeffs in sorted(mode_models.items(), key=lambda kv: list(ModelKind).index(kv[0]))
            }
            for run_id in runs:
                run_data = [s for s in data if s.run_id == run_id]
                if not run_data:
                    self._log("trace_skipped", mode=mode.value, run_id=run_id, reason="no samples")
                    continue
                name = f"trace_{mode.value}_run{run_id}.csv"
                self.store.write_csv(name, prediction_trace(run_data, mode_models))
                traces.append({"mode": mode.value, "run_id": run_id, "file": name, "samples": len(run_data)})

        if not metrics:
            raise ValidationError("no samples match the vehicle modes of the given models")
        result = {"metric_mode": mode_value.value, "metrics": metrics, "traces": traces}
        self.store.write_json("eval.json", result)
        self._log("eval_completed", modes=list(metrics), traces=len(traces))
        return result

    # -- crossval ----------------------------------------------------------
    def crossval(self, samples: Sequence[EnergySample], tests: Optional[Sequence[str]] = None
                 ) -> Dict[str, EvalMatrix]:
        cfg = self.config
        matrices: Dict[str, EvalMatrix] = {}
        for name in tests or cfg.tests:
            fit_on, eval_on = CROSS_TESTS[name]

            def on_cell(j: int, k: int, value: float, name=name) -> None:
                self.plugin_manager.dispatch("on_cell_evaluated", name, j, k, value)

            matrix = cross_matrix(cfg.groups, fit_on, eval_on, samples, solver=cfg.solver,
                                  metric_mode=cfg.metric_mode, bins=cfg.bins, test_name=name,
                                  workers=cfg.workers, on_cell=on_cell, progress=self.progress)
            self._write_matrix(matrix)
            matrices[name] = matrix
        self.matrices.update(matrices)
        self._log("crossval_completed", tests=list(matrices))
        self.plugin_manager.dispatch("after_crossval", matrices)
        return matrices

    def _write_matrix(self, matrix: EvalMatrix) -> None:
        name = matrix.test_name
        self.store.write_json(f"crossval/{name}.json", {
            **matrix.to_dict(),
            "models": {str(j): serialize(m) for j, m in matrix.models.items()},
        })
        self.store.write_csv(f"crossval/{name}_matrix.csv", matrix_frame(matrix), index=True)
        for j in matrix.row_groups:
            for k in matrix.col_groups:
                self.store.write_csv(f"crossval/{name}/rss_model{j}_data{k}.csv",
                                     cell_density_frame(matrix, j, k))

    # -- report ------------------------------------------------------------
    def report(self) -> Dict[str, Any]:
        """Assemble the fit table and the cross-application tables from earlier outputs."""
        fits = [read_json(p) for p in sorted((self.out_dir / "fits").glob("*.json"))]
        crossvals = {p.stem: read_json(p) for p in sorted((self.out_dir / "crossval").glob("*.json"))}
        if not fits and not crossvals:
            raise ArtifactIOError(self.out_dir, "nothing to report; run `fit` or `crossval` first")

        order = {kind.value: i for i, kind in enumerate(ModelKind)}
        rows = sorted(fits, key=lambda f: (f["mode"] != VehicleMode.ACC.value, order[f["kind"]]))
        fit_table = pd.DataFrame(
            [(ModelKind(f["kind"]).cli_name, f["mode"], f["r2_adj_train"], f["r2_adj_test"], f["r2_adj_all"])
             for f in rows],
            columns=["model", "mode", "calibration", "verification", "total"],
        )
        if fits:
            self.store.write_csv("fit_table.csv", fit_table)

        tables = {}
        for name, doc in crossvals.items():
            frame = pd.DataFrame(doc["values"], index=doc["rows"], columns=doc["cols"])
            frame.index = [label.capitalize() for label in frame.index]
            frame.columns = [label.capitalize() for label in frame.columns]
            table_name = TABLE_FILES.get(name, f"crossval_{name}.csv")
            self.store.write_csv(table_name, frame, index=True)
            tables[name] = {"file": table_name, "metric": doc["metric"], "metric_mode": doc["metric_mode"],
                            "rows": list(frame.index), "cols": list(frame.columns), "values": doc["values"]}

        bundle = {
            "fits": [
                {"model": m, "mode": mode, "calibration": c, "verification": v, "total": t}
                for m, mode, c, v, t in fit_table.itertuples(index=False)
            ],
            "crossval": tables,
        }
        self.store.write_json("report.json", bundle)
        self._log("report_completed", fits=len(fits), tables=len(tables))
        return bundle

    # -- shared ------------------------------------------------------------
    def load_samples(self, path: Optional[Path] = None) -> List[EnergySample]:
        samples = read_samples_csv(Path(path) if path else self.out_dir / SAMPLES_FILE)
        if not samples:
            raise ValidationError("the samples file holds no samples")
        self.samples_count = len(samples)
        return samples

    def generate_summary_report(self) -> Dict[str, Any]:
        """Summary of what this runner did, written as ``summary.json``."""
        report = {
            "summary": {
                "runs": self.series_count,
                "samples": self.samples_count,
                "cleaning": self.cleaning.to_dict() if self.cleaning else None,
                "fits": [
                    {"mode": mode.value, "kind": kind.cli_name, "converged": r.converged,
                     "r2_adj_train": r.r2_adj_train, "r2_adj_test": r.r2_adj_test}
                    for (mode, kind), r in sorted(
                        self.fit_reports.items(),
                        key=lambda kv: (kv[0][0] != VehicleMode.ACC, list(ModelKind).index(kv[0][1])))
                ],
                "crossval": {name: m.values for name, m in sorted(self.matrices.items())},
            }
        }
        self.store.write_json("summary.json", report)
        self.plugin_manager.dispatch("on_event", name="session_completed", summary=report)
        return report
