"""Chat-with-images model clients: live HTTP, record/replay cache, scripted."""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
import time
import urllib.request
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

API_KEY_ENV = "SURFPLACE_API_KEY"
API_URL_ENV = "SURFPLACE_API_URL"


class ReplayMiss(LookupError):
    """A replay-mode request had no cached reply."""


class ModelClient:
    """``send(prompt, images, tag)`` returns the model's reply text.

    ``tag`` carries structured request context. Live models ignore it; the
    scripted client answers from it. It never enters the request digest.
    """

    def send(self, prompt: str, images: Sequence[bytes] = (), tag: Optional[dict] = None) -> str:
        raise NotImplementedError


def request_key(prompt: str, images: Sequence[bytes]) -> str:
    h = hashlib.sha256(prompt.encode())
    for img in images:
        h.update(hashlib.sha256(img).digest())
    return h.hexdigest()


class HttpClient(ModelClient):
    """POSTs ``{model, messages}`` JSON to a chat endpoint."""

    def __init__(self, url: Optional[str] = None, api_key: Optional[str] = None,
                 model: str = "default", requests_per_minute: float = 30.0, timeout: float = 120.0):
        self.url = url or os.environ.get(API_URL_ENV)
        if not self.url:
            raise RuntimeError(f"no endpoint configured; set {API_URL_ENV}")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.model = model
        self.timeout = timeout
        self._interval = 60.0 / requests_per_minute if requests_per_minute > 0 else 0.0
        self._lock = threading.Lock()
        self._last = 0.0

    def _throttle(self) -> None:
        with self._lock:
            wait = self._last + self._interval - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            self._last = time.monotonic()

    def send(self, prompt, images=(), tag=None):
        body = {
            "model": self.model,
            "messages": [{"role": "user", "text": prompt,
                          "images": [base64.b64encode(i).decode("ascii") for i in images]}],
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        self._throttle()
        req = urllib.request.Request(self.url, json.dumps(body).encode(), headers, method="POST")
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            data = json.loads(resp.read().decode())
        return _reply_text(data)


def _reply_text(data) -> str:
    if isinstance(data, str):
        return data
    for key in ("text", "reply", "content"):
        if isinstance(data.get(key), str):
            return data[key]
    try:
        return data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise ValueError("unrecognised reply payload from model endpoint") from None


class CachedClient(ModelClient):
    """Record/replay wrapper around another client.

    ``record`` reads through the cache and stores misses; ``replay`` serves
    only cached replies and never touches ``inner``.
    """

    def __init__(self, cache_dir, mode: str = "replay", inner: Optional[ModelClient] = None):
        if mode not in ("record", "replay"):
            raise ValueError("mode must be 'record' or 'replay'")
        if mode == "record" and inner is None:
            raise ValueError("record mode needs an inner client")
        self.cache_dir = Path(cache_dir)
        self.mode = mode
        self.inner = inner if mode == "record" else None
        self._lock = threading.Lock()
        if mode == "record":
            self.cache_dir.mkdir(parents=True, exist_ok=True)

    def send(self, prompt, images=(), tag=None):
        key = request_key(prompt, images)
        path = self.cache_dir / f"{key}.json"
        if path.exists():
            return json.loads(path.read_text())["reply"]
        if self.mode == "replay":
            raise ReplayMiss(f"no cached reply for request {key[:12]}")
        reply = self.inner.send(prompt, images, tag)
        with self._lock:
            path.write_text(json.dumps({"prompt": prompt, "reply": reply}, indent=1) + "\n")
        return reply


def fenced(obj) -> str:
    return "```json\n" + json.dumps(obj) + "\n```"


class ScriptedClient(ModelClient):
    """Deterministic stand-in judge answering from a fixture script.

    Script keys: ``outline`` (list of records), ``anchors`` (description ->
    object id), ``directions`` (description -> label), ``surfaces``
    (description -> point in the owning object's canonical frame),
    ``params`` (description of the distance relation -> centimeters) and
    ``groundtruth`` (placement translation) for pruning and grading.
    """

    def __init__(self, script: dict):
        self.script = script
        gt = script.get("groundtruth", {}).get("translation")
        self._gt = None if gt is None else np.asarray(gt, float)

    @classmethod
    def load(cls, path) -> "ScriptedClient":
        with open(path) as fh:
            return cls(json.load(fh))

    def send(self, prompt, images=(), tag=None):
        tag = tag or {}
        stage = tag.get("stage")
        answer = getattr(self, f"_{stage}", None)
        if answer is None:
            raise ValueError(f"scripted client cannot answer stage {stage!r}")
        return "Scripted reply.\n" + fenced(answer(tag))

    def _outline(self, tag):
        return self.script["outline"]

    def _anchor(self, tag):
        want = self.script["anchors"].get(tag["desc"])
        for color, oid in tag["options"].items():
            if oid == want:
                return {"final_answer": color}
        return {"final_answer": next(iter(tag["options"]))}

    def _direction(self, tag):
        return {"final_answer": self.script["directions"][tag["desc"]]}

    def _nearest(self, options: dict, point) -> str:
        p = np.asarray(point, float)
        return min(options, key=lambda c: float(np.linalg.norm(np.asarray(options[c]) - p)))

    def _surface(self, tag):
        return {"final_answer": self._nearest(tag["options"], self.script["surfaces"][tag["desc"]])}

    def _params(self, tag):
        return {"const": self.script["params"][tag["desc"]]}

    def _prune(self, tag):
        return {"final_answer": self._nearest(tag["options"], self._gt)}

    def _plausibility(self, tag):
        d = float(np.linalg.norm(np.asarray(tag["translation"]) - self._gt))
        grade = 4 if d < 0.15 else 3 if d < 0.5 else 2 if d < 1.0 else 1
        return {"final_answer": grade}
