"""JSON-lines metrics with a two-column summary CSV of the final record."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path


def _scalar(v) -> bool:
    return isinstance(v, (bool, int, float, str)) or v is None


def _format(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return json.dumps(v) if not isinstance(v, str) else v


def summary_csv_text(records: list[dict]) -> str:
    """``metric,value`` rows for every scalar field of the last record."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    if records:
        for k, v in records[-1].items():
            if _scalar(v):
                w.writerow([k, _format(v)])
    return buf.getvalue()


def dumps(record: dict) -> str:
    return json.dumps(record, allow_nan=True, separators=(", ", ": "))


class MetricsWriter:
    """Appends one JSON object per record (flushed immediately); writes the summary on close."""

    def __init__(self, jsonl_path, csv_path=None):
        self.jsonl_path = Path(jsonl_path)
        self.csv_path = Path(csv_path) if csv_path else self.jsonl_path.with_suffix(".csv")
        self.records: list[dict] = []
        try:
            self.jsonl_path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.jsonl_path, "w", encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot open metrics file {self.jsonl_path}: {exc}") from exc

    def write(self, record: dict) -> None:
        if self.records and "epoch" in record and "epoch" in self.records[-1]:
            if record["epoch"] < self.records[-1]["epoch"]:
                raise ValueError("epoch must not decrease")
        self.records.append(record)
        self._fh.write(dumps(record) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if self._fh.closed:
            return
        self._fh.close()
        try:
            self.csv_path.write_text(summary_csv_text(self.records), encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write summary {self.csv_path}: {exc}") from exc

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def summary_csv_from_jsonl(path) -> str:
    return summary_csv_text(read_jsonl(path))
