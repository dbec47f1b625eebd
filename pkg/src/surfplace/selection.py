"""Batched tournament selection driven by a color-naming judge."""

from __future__ import annotations

import hashlib
import json
import math
import random
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Protocol, Sequence

from .raster import palette


class JudgeAbstained(RuntimeError):
    pass


@dataclass(frozen=True)
class Candidate:
    id: str
    payload: Any = None


class Judge(Protocol):
    def choose(self, objective: str, batch: Sequence[Candidate], colors: Sequence[str],
               image: Optional[bytes]) -> Optional[str]:
        """Return one of ``colors`` or None when nothing in the batch fits."""


@dataclass
class TranscriptEntry:
    stage: str
    digest: str
    offered: list
    colors: list
    answer: Optional[str]

    def to_json(self) -> dict:
        return {"stage": self.stage, "digest": self.digest, "offered": list(self.offered),
                "colors": list(self.colors), "answer": self.answer}


@dataclass
class JudgeTranscript:
    mode: str = "live"
    entries: list = field(default_factory=list)

    def __post_init__(self) -> None:
        self._lock = threading.Lock()

    def append(self, entry: TranscriptEntry) -> None:
        with self._lock:
            self.entries.append(entry)

    def stages(self) -> list[str]:
        return [e.stage for e in self.entries]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_json(), sort_keys=True) + "\n" for e in self.entries)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())


def request_digest(objective: str, offered: Sequence[str], colors: Sequence[str],
                   image: Optional[bytes]) -> str:
    h = hashlib.sha256()
    h.update(json.dumps([objective, list(offered), list(colors)]).encode())
    h.update(image or b"")
    return h.hexdigest()


def query_count_bound(k: int, m: int) -> int:
    """Most judge queries a run over ``k`` candidates can take without abstentions."""
    if k < 1 or m < 2:
        raise ValueError("need k >= 1 and m >= 2")
    return math.ceil((k - 1) / (m - 1))


def select(candidates: Sequence[Candidate], objective: str, m: int, judge: Judge, *,
           render: Optional[Callable[[Sequence[Candidate], Sequence[str]], bytes]] = None,
           seed: int = 0, transcript: Optional[JudgeTranscript] = None,
           stage: str = "select") -> Candidate:
    """Return the single candidate the judge prefers.

    Each round shuffles the pool, sends every full batch of ``m`` to the
    judge and keeps the batch winners. The ragged remainder skips the
    round and is carried into the next one, which keeps the total number
    of queries at ``query_count_bound(k, m)``.
    """
    if m < 2:
        raise ValueError("batch size must be >= 2")
    pool = list(candidates)
    if not pool:
        raise ValueError("no candidates to select from")
    if len({c.id for c in pool}) != len(pool):
        raise ValueError("candidate ids must be unique")
    rng = random.Random(seed)
    abstained = False

    def ask(batch: list[Candidate]) -> Optional[Candidate]:
        colors = palette(len(batch))
        image = render(batch, colors) if render is not None else None
        answer = judge.choose(objective, batch, colors, image)
        if answer is not None and answer not in colors:
            raise ValueError(f"judge answered {answer!r}, offered {colors}")
        if transcript is not None:
            transcript.append(TranscriptEntry(stage, request_digest(objective, [c.id for c in batch], colors, image),
                                              [c.id for c in batch], colors, answer))
        return None if answer is None else batch[colors.index(answer)]

    while len(pool) > 1:
        rng.shuffle(pool)
        if len(pool) <= m:
            winner = ask(pool)
            if winner is not None:
                return winner
            winners, rest = [], []
        else:
            full = len(pool) // m
            winners = [w for w in (ask(pool[i * m:(i + 1) * m]) for i in range(full)) if w is not None]
            rest = pool[full * m:]
        if not winners:
            if abstained:
                raise JudgeAbstained("judge abstained")
            abstained = True
            continue
        pool = winners + rest
    return pool[0]
