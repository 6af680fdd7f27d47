"""Run records and the append-only JSONL sink."""

from __future__ import annotations

import json
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path

from pmdg.errors import ConfigError, DataError

SCHEMA_VERSION = 1


@dataclass
class RunRecord:
    record_id: str
    config_digest: str
    config: dict
    trial: int
    seed: int
    mode: str
    algorithm: str
    transforms: list[str]
    requested_transforms: list[str]
    K: int
    source: list[str]
    targets: list[str]
    accuracies: dict[str, float]
    val_accuracy: float | None
    selected_step: int | None
    sample_counts: dict[str, int]
    train_counts: dict[str, int]
    val_counts: dict[str, int]
    steps: int
    steps_per_epoch: int
    final_loss: float | None
    wall_time: float
    log_ref: str | None = None
    protocol: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise DataError(f"record schema version {version} unsupported (want {SCHEMA_VERSION})")
        return cls(**d)

    def mean_accuracy(self) -> float:
        return sum(self.accuracies.values()) / len(self.accuracies)

    def comparable(self) -> dict:
        """Everything except wall time; equal for repeated identical runs."""
        d = asdict(self)
        d.pop("wall_time")
        return d


def read_records(path: str | Path) -> list[RunRecord]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"records file not found: {path}", key="--records")
    out = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(RunRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, TypeError) as exc:
            raise DataError(f"{path}:{n}: malformed record ({exc})") from None
    return out


class RecordSink:
    """Single writer for a JSONL file keyed by ``record_id``.

    ``policy="skip"`` leaves existing records alone (resumable sweeps);
    ``policy="overwrite"`` replaces them. Writes are serialized by a lock so
    concurrent sweep cells can share one sink.
    """

    def __init__(self, path: str | Path | None, policy: str = "skip"):
        if policy not in ("skip", "overwrite"):
            raise ConfigError("must be 'skip' or 'overwrite'", key="policy")
        self.path = Path(path) if path is not None else None
        self.policy = policy
        self._lock = threading.Lock()
        self._records: dict[str, RunRecord] = {}
        if self.path is not None and self.path.exists():
            for rec in read_records(self.path):
                self._records[rec.record_id] = rec

    def get(self, record_id: str) -> RunRecord | None:
        if self.policy == "overwrite":
            return None
        return self._records.get(record_id)

    def write(self, record: RunRecord) -> None:
        with self._lock:
            replacing = record.record_id in self._records
            self._records[record.record_id] = record
            if self.path is None:
                return
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if replacing:
                tmp = self.path.with_suffix(self.path.suffix + ".tmp")
                tmp.write_text("".join(r.to_json() + "\n" for r in self._records.values()))
                tmp.replace(self.path)
            else:
                with self.path.open("a") as fh:
                    fh.write(record.to_json() + "\n")

    def records(self) -> list[RunRecord]:
        return list(self._records.values())
