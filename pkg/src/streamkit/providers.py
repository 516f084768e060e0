"""Embedding and generation providers for the trace quality pipeline.

Two transports: small HTTP clients (JSON in, JSON out, bounded retries) and a
deterministic local embedder for offline runs and tests. The local embedder is
not a semantic model; it is a hashed bag of word n-grams, unit-normalized, so
identical texts score cosine 1 and texts with disjoint vocabulary score 0.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import requests


class ProviderError(RuntimeError):
    """Remote call failed after all retries (or a stub ran out of answers)."""

    def __init__(self, message: str, attempts: int = 1) -> None:
        super().__init__(message)
        self.attempts = attempts


class EmbeddingProvider(Protocol):
    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


@dataclass(frozen=True)
class LocalHashEmbedder:
    """Word unigram + bigram counts hashed into a fixed-width vector, then
    L2-normalized. Case-folded. An empty text maps to the zero vector."""

    dim: int = 256

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for row, text in enumerate(texts):
            words = text.lower().split()
            grams = words + [f"{a} {b}" for a, b in zip(words, words[1:])]
            for g in grams:
                h = hashlib.blake2b(g.encode("utf-8"), digest_size=8).digest()
                out[row, int.from_bytes(h, "big") % self.dim] += 1.0
            norm = np.linalg.norm(out[row])
            if norm > 0:
                out[row] /= norm
        return out


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine between row i of a and row i of b; zero vectors give 0."""
    num = np.sum(a * b, axis=-1)
    den = np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


# ---------------------------------------------------------------------------
# HTTP clients
# ---------------------------------------------------------------------------

@dataclass
class RemoteEmbeddingClient:
    """POST {base_url}/embed with {"texts": [...]}, expecting {"vectors":
    [[...], ...]} of equal length. Retries transport errors and 5xx responses;
    raises ProviderError when the budget is exhausted."""

    base_url: str
    timeout_s: float = 10.0
    retries: int = 2

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        payload = {"texts": list(texts)}
        body = _post_json(f"{self.base_url.rstrip('/')}/embed", payload, self.timeout_s, self.retries)
        vectors = body.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise ProviderError(
                f"embedding response malformed: expected {len(texts)} vectors", attempts=1
            )
        arr = np.asarray(vectors, dtype=np.float64)
        if arr.ndim != 2:
            raise ProviderError("embedding response malformed: vectors are not rows", attempts=1)
        return arr


@dataclass
class RemoteGenerationClient:
    """POST {base_url}/generate with {"prompt": ..., "params": {...}},
    expecting {"text": ...}."""

    base_url: str
    timeout_s: float = 30.0
    retries: int = 2

    def generate(self, prompt: str, params: dict | None = None) -> str:
        payload = {"prompt": prompt, "params": params or {}}
        body = _post_json(f"{self.base_url.rstrip('/')}/generate", payload, self.timeout_s, self.retries)
        text = body.get("text")
        if not isinstance(text, str):
            raise ProviderError("generation response malformed: no text field", attempts=1)
        return text


def _post_json(url: str, payload: dict, timeout_s: float, retries: int) -> dict:
    attempts = retries + 1
    last = "no attempt made"
    for _ in range(attempts):
        try:
            resp = requests.post(url, json=payload, timeout=timeout_s)
        except requests.RequestException as e:
            last = f"transport error: {e}"
            continue
        if resp.status_code >= 500:
            last = f"server error {resp.status_code}"
            continue
        if resp.status_code != 200:
            raise ProviderError(f"{url} answered {resp.status_code}", attempts=1)
        try:
            return resp.json()
        except ValueError:
            raise ProviderError(f"{url} answered non-JSON body", attempts=1)
    raise ProviderError(f"{url} unreachable after {attempts} attempts: {last}", attempts=attempts)


# ---------------------------------------------------------------------------
# canned generation for offline runs
# ---------------------------------------------------------------------------

class StubGenerationClient:
    """Replays canned responses in order, either from a list or from the
    sorted *.txt files of a directory. Raises ProviderError when exhausted."""

    def __init__(self, responses: Sequence[str] | None = None, directory: str | Path | None = None):
        if (responses is None) == (directory is None):
            raise ValueError("give exactly one of responses or directory")
        if directory is not None:
            files = sorted(Path(directory).glob("*.txt"))
            responses = [f.read_text(encoding="utf-8") for f in files]
        self._responses = list(responses or [])
        self.calls = 0

    def generate(self, prompt: str, params: dict | None = None) -> str:
        if self.calls >= len(self._responses):
            raise ProviderError(
                f"stub exhausted after {len(self._responses)} responses", attempts=1
            )
        text = self._responses[self.calls]
        self.calls += 1
        return text
