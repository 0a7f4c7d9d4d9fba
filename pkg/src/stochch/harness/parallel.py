"""Worker-pool execution of experiment samples and the persisted RunRecord."""
from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .. import __version__
from ..analysis import _json_default
from ..dynamics import BlowUpError
from .config import ExperimentConfig
from .experiments import KIND_TABLE

FORMAT_VERSION = 1


@dataclass
class RunRecord:
    config: dict
    samples: list[dict]
    aggregates: dict
    rate_fits: dict
    checks: list[dict]
    wall_clock: float
    code_version: str = __version__
    format_version: int = FORMAT_VERSION
    failures: int = 0

    @property
    def all_hold(self) -> bool:
        return all(c["holds"] for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "code_version": self.code_version,
            "config": self.config,
            "samples": self.samples,
            "aggregates": self.aggregates,
            "rate_fits": self.rate_fits,
            "checks": self.checks,
            "wall_clock": self.wall_clock,
            "failures": self.failures,
        }

    def write(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=_json_default)

    @classmethod
    def read(cls, path: str | Path) -> "RunRecord":
        with open(path) as fh:
            d = json.load(fh)
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported run record format {d.get('format_version')!r}")
        return cls(
            config=d["config"], samples=d["samples"], aggregates=d["aggregates"], rate_fits=d["rate_fits"],
            checks=d["checks"], wall_clock=d["wall_clock"], code_version=d["code_version"],
            format_version=d["format_version"], failures=d.get("failures", 0),
        )


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        env = os.environ.get("SCH_WORKERS")
        workers = int(env) if env else 1
    if workers < 1:
        raise ValueError("workers must be >= 1")
    return workers


def _execute(config_dict: dict, i: int, s: int, out_dir: str | None) -> dict:
    cfg = ExperimentConfig.from_dict(config_dict)
    run_task = KIND_TABLE[cfg.kind][1]
    try:
        result = run_task(cfg, i, s, out_dir)
        return {"eps_index": i, "sample": s, "status": "ok", "result": result}
    except BlowUpError as exc:
        return {"eps_index": i, "sample": s, "status": "blow-up", "step": exc.step, "result": None}


def run_parallel(config: ExperimentConfig, workers: int | None = None, write_outputs: bool = True) -> RunRecord:
    """Run every sample of ``config`` and aggregate after a stable sort by (ladder index, sample)."""
    workers = resolve_workers(workers)
    tasks_fn, _, aggregate = KIND_TABLE[config.kind]
    tasks = tasks_fn(config)
    out_dir = None
    if write_outputs:
        Path(config.output_dir).mkdir(parents=True, exist_ok=True)
        out_dir = str(config.output_dir)
    cfg_dict = config.to_dict()
    start = time.perf_counter()
    if workers == 1 or len(tasks) <= 1:
        outcomes = [_execute(cfg_dict, i, s, out_dir) for i, s in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_execute, cfg_dict, i, s, out_dir) for i, s in tasks]
            outcomes = [f.result() for f in futures]
    outcomes.sort(key=lambda o: (o["eps_index"], o["sample"]))
    aggs, fits, recs = aggregate(config, outcomes)
    record = RunRecord(
        config=cfg_dict,
        samples=outcomes,
        aggregates=aggs,
        rate_fits=fits,
        checks=[r.as_dict() for r in recs],
        wall_clock=time.perf_counter() - start,
        failures=sum(o["status"] != "ok" for o in outcomes),
    )
    if write_outputs:
        record.write(Path(out_dir) / "run_record.json")
    return record
