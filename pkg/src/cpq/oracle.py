"""Sources of candidate labels for an input.

Three oracle kinds share one interface (``next_sample`` / ``reset`` /
``available``):

* :class:`SyntheticOracle` draws from a known distribution per input, using a
  substream seeded from ``(master_seed, input_id)``.
* :class:`ReplayOracle` replays pre-recorded, pre-clustered generations from a
  JSONL log (one record per line: ``{"id", "truth", "samples"}``).
* :class:`ExternalOracle` speaks a line-delimited JSON protocol with a child
  process: request ``{"id": str, "n": 1}``, response ``{"label": int}``.

``reset(input_id)`` starts a fresh session for an input. Synthetic and replay
sessions restart the same sample stream, so repeated query loops over one
input see common random numbers.
"""

from __future__ import annotations

import json
import os
import queue
import subprocess
import threading
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._rng import derive_rng
from .distributions import DiscreteDistribution, sample, sample_many
from .errors import BudgetExhausted, DuplicateIdError, InvalidInput, OracleIOError, ParseError

SYNTHETIC = "synthetic"
REPLAY = "replay"
EXTERNAL = "external"


@dataclass(frozen=True)
class QueryRecord:
    id: str
    truth: int | None
    samples: tuple[int, ...]

    @property
    def max_length(self) -> int:
        return len(self.samples)

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "truth": self.truth, "samples": list(self.samples)})


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def parse_record(line: str, lineno: int | None = None) -> QueryRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
    if not isinstance(obj, dict):
        raise ParseError("record must be a JSON object", lineno)
    rid = obj.get("id")
    if not isinstance(rid, str) or not rid:
        raise ParseError("'id' must be a non-empty string", lineno)
    truth = obj.get("truth")
    if truth is not None and not _is_int(truth):
        raise ParseError("'truth' must be an integer", lineno)
    samples = obj.get("samples")
    if not isinstance(samples, list) or not samples:
        raise ParseError("'samples' must be a non-empty list", lineno)
    if not all(_is_int(s) for s in samples):
        raise ParseError("'samples' must contain integers only", lineno)
    return QueryRecord(rid, truth, tuple(samples))


def load_records(path: str | os.PathLike) -> list[QueryRecord]:
    """Read a replay log; blank lines are skipped, unknown fields ignored."""
    records: list[QueryRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = parse_record(line, lineno)
            if rec.id in seen:
                raise DuplicateIdError(f"duplicate id {rec.id!r}", lineno)
            seen.add(rec.id)
            records.append(rec)
    return records


def dump_records(records: Iterable[QueryRecord]) -> str:
    return "".join(rec.to_json() + "\n" for rec in records)


class ReplayOracle:
    kind = REPLAY

    def __init__(self, records: Iterable[QueryRecord]):
        self._samples: dict[str, tuple[int, ...]] = {}
        for rec in records:
            if rec.id in self._samples:
                raise DuplicateIdError(f"duplicate id {rec.id!r}")
            self._samples[rec.id] = rec.samples
        self._cursor: dict[str, int] = {}

    def available(self, input_id: str) -> int:
        return len(self._samples[input_id])

    def reset(self, input_id: str | None = None) -> None:
        if input_id is None:
            self._cursor.clear()
        else:
            self._cursor.pop(input_id, None)

    def next_sample(self, input_id: str) -> int:
        stream = self._samples[input_id]
        k = self._cursor.get(input_id, 0)
        if k >= len(stream):
            raise BudgetExhausted(f"replay log for {input_id!r} holds only {len(stream)} samples")
        self._cursor[input_id] = k + 1
        return stream[k]

    def prefix(self, input_id: str, length: int) -> np.ndarray:
        return np.asarray(self._samples[input_id][:length], dtype=np.int64)


class SyntheticOracle:
    kind = SYNTHETIC

    def __init__(self, dists: Mapping[str, DiscreteDistribution], seed: int):
        self.dists = dict(dists)
        self.seed = int(seed)
        self._rngs: dict[str, np.random.Generator] = {}

    def available(self, input_id: str) -> float:
        return float("inf")

    def _stream(self, input_id: str) -> np.random.Generator:
        rng = self._rngs.get(input_id)
        if rng is None:
            rng = self._rngs[input_id] = derive_rng(self.seed, "oracle:" + input_id)
        return rng

    def reset(self, input_id: str | None = None) -> None:
        if input_id is None:
            self._rngs.clear()
        else:
            self._rngs.pop(input_id, None)

    def next_sample(self, input_id: str) -> int:
        return sample(self.dists[input_id], self._stream(input_id))

    def prefix(self, input_id: str, length: int) -> np.ndarray:
        """First ``length`` draws of a fresh session, without disturbing live sessions."""
        rng = derive_rng(self.seed, "oracle:" + input_id)
        return sample_many(self.dists[input_id], rng, int(length)).astype(np.int64)


class ExternalOracle:
    """Bridge to a child process answering one JSON request per line."""

    kind = EXTERNAL

    def __init__(self, command: Sequence[str] | str, timeout: float = 30.0, env: Mapping[str, str] | None = None):
        if isinstance(command, str):
            import shlex

            command = shlex.split(command)
        if not command:
            raise InvalidInput("external oracle command is empty")
        self.timeout = float(timeout)
        self._proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            encoding="utf-8",
            bufsize=1,
            env=None if env is None else dict(env),
        )
        self._lines: queue.Queue = queue.Queue()
        self._lock = threading.Lock()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def available(self, input_id: str) -> float:
        return float("inf")

    def reset(self, input_id: str | None = None) -> None:
        """Live oracles have no replayable state."""

    def next_sample(self, input_id: str) -> int:
        with self._lock:
            try:
                assert self._proc.stdin is not None
                self._proc.stdin.write(json.dumps({"id": input_id, "n": 1}) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise OracleIOError(f"external oracle closed its input: {exc}") from None
            try:
                line = self._lines.get(timeout=self.timeout)
            except queue.Empty:
                # a late reply would desynchronize every later request
                self._proc.kill()
                raise OracleIOError(f"external oracle timed out after {self.timeout:g} s") from None
        if line is None:
            raise OracleIOError("external oracle exited")
        try:
            label = json.loads(line)["label"]
        except (json.JSONDecodeError, KeyError, TypeError):
            raise OracleIOError(f"malformed oracle response: {line.strip()!r}") from None
        if not _is_int(label):
            raise OracleIOError(f"oracle label must be an integer, got {label!r}")
        return label

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                if self._proc.stdin:
                    self._proc.stdin.close()
                self._proc.wait(timeout=2)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "ExternalOracle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def next_sample(oracle, input_id: str) -> int:
    return oracle.next_sample(input_id)
