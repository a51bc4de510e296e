"""On-disk run store.

Layout::

    out_dir/
      config.json          settings snapshot
      metadata.json        wall-clock timestamps (the only non-deterministic file)
      run.json             run id, topic, progress, abort reason
      warmstart/           output.json, bank.json
      layers/NN/           snapshot.json, records.json, transcripts.json
      report/              stage artifacts
      cache/               model and search responses (record/replay)
      report.md, citations.json

Everything except metadata.json is a pure function of the run's inputs and
cached responses, so replayed runs produce identical trees.
"""

from __future__ import annotations

import datetime as dt
import json
import os
from pathlib import Path
from typing import Any

from pydantic import BaseModel

from .models import (
    ExecutorTranscript,
    InsightBank,
    LayerSnapshot,
    QueryRecord,
    RunRecord,
    WarmStartOutput,
)


def _dump(value: Any) -> str:
    if isinstance(value, BaseModel):
        value = value.model_dump(mode="json")
    elif isinstance(value, (list, tuple)):
        value = [v.model_dump(mode="json") if isinstance(v, BaseModel) else v for v in value]
    return json.dumps(value, indent=2, ensure_ascii=False, sort_keys=True) + "\n"


def write_text(path: Path, text: str) -> None:
    """Atomic write; skips the write when content is unchanged."""
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.exists() and path.read_text() == text:
        return
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


class RunStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    @property
    def cache_dir(self) -> Path:
        return self.root / "cache"

    @property
    def report_dir(self) -> Path:
        return self.root / "report"

    def write_json(self, relpath: str, value: Any) -> Path:
        path = self.root / relpath
        write_text(path, _dump(value))
        return path

    def read_json(self, relpath: str) -> Any:
        path = self.root / relpath
        return json.loads(path.read_text()) if path.exists() else None

    def touch_metadata(self, **fields: Any) -> None:
        meta = self.read_json("metadata.json") or {}
        now = dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")
        meta.setdefault("started", now)
        meta["updated"] = now
        meta.update(fields)
        self.write_json("metadata.json", meta)

    # ---- run record -----------------------------------------------------

    def save_config(self, config: dict) -> None:
        self.write_json("config.json", config)

    def save_run(self, record: RunRecord) -> None:
        if record.warm_start is not None:
            self.write_json("warmstart/output.json", record.warm_start)
        if record.banks:
            self.write_json("warmstart/bank.json", record.banks[0])
            self.write_json("bank.json", record.banks[-1])  # latest bank, for `eval --predicted`
        by_layer: dict[int, list[QueryRecord]] = {}
        for rec in record.records:
            by_layer.setdefault(rec.layer, []).append(rec)
        layer_of = {rec.id: rec.layer for rec in record.records}
        transcripts: dict[int, list[ExecutorTranscript]] = {}
        for t in record.transcripts:
            transcripts.setdefault(layer_of.get(t.record_id, 0), []).append(t)
        for snap in record.layers:
            base = f"layers/{snap.layer:02d}"
            self.write_json(f"{base}/snapshot.json", snap)
            self.write_json(f"{base}/records.json", by_layer.get(snap.layer, []))
            self.write_json(f"{base}/transcripts.json", transcripts.get(snap.layer, []))
        self.write_json("run.json", {
            "run_id": record.run_id,
            "topic": record.topic,
            "config": record.config,
            "layers_completed": len(record.layers),
            "aborted": record.aborted,
        })
        self.touch_metadata()

    def load_run(self) -> RunRecord | None:
        """Rebuild a RunRecord from disk; ``None`` when no run has been saved."""
        head = self.read_json("run.json")
        if head is None:
            return None
        ws = self.read_json("warmstart/output.json")
        bank0 = self.read_json("warmstart/bank.json")
        layers, records, transcripts = [], [], []
        for n in range(1, head["layers_completed"] + 1):
            base = f"layers/{n:02d}"
            layers.append(LayerSnapshot.model_validate(self.read_json(f"{base}/snapshot.json")))
            records += [QueryRecord.model_validate(r) for r in self.read_json(f"{base}/records.json")]
            transcripts += [ExecutorTranscript.model_validate(t) for t in self.read_json(f"{base}/transcripts.json")]
        banks = ([InsightBank.model_validate(bank0)] if bank0 else []) + [s.bank_after for s in layers]
        theses = []
        for snap in layers:
            if snap.thesis is not None and (not theses or theses[-1] != snap.thesis):
                theses.append(snap.thesis)
        return RunRecord(
            run_id=head["run_id"],
            topic=head["topic"],
            config=head["config"],
            warm_start=WarmStartOutput.model_validate(ws) if ws else None,
            banks=tuple(banks),
            layers=tuple(layers),
            theses=tuple(theses),
            records=tuple(records),
            transcripts=tuple(transcripts),
            aborted=head.get("aborted"),
        )
