from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ..tensor import Rng

HOLDOUT_FRACTION = 0.1


@dataclass(frozen=True)
class CharVocab:
    chars: str

    @classmethod
    def from_text(cls, text: str) -> "CharVocab":
        return cls("".join(sorted(set(text))))

    @property
    def size(self) -> int:
        return len(self.chars)

    def encode(self, text: str) -> np.ndarray:
        index = {c: i for i, c in enumerate(self.chars)}
        try:
            return np.array([index[c] for c in text], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"character {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids) -> str:
        return "".join(self.chars[int(i)] for i in ids)


class Corpus:
    """Plain text plus its char vocabulary; the last 10% is held out."""

    def __init__(self, text: str, vocab: CharVocab | None = None):
        if not text:
            raise ValueError("corpus is empty")
        self.text = text
        self.vocab = vocab or CharVocab.from_text(text)
        self.ids = self.vocab.encode(text)
        self.split = int(len(text) * (1 - HOLDOUT_FRACTION))

    @classmethod
    def embedded(cls) -> "Corpus":
        text = resources.files("batchleak").joinpath("data/corpus.txt").read_text(encoding="ascii")
        return cls(text)

    @classmethod
    def load(cls, source: str | Path | None) -> "Corpus":
        if source in (None, "", "embedded"):
            return cls.embedded()
        return cls(Path(source).read_text(encoding="utf-8"))

    @property
    def train_ids(self) -> np.ndarray:
        return self.ids[: self.split]

    @property
    def heldout_ids(self) -> np.ndarray:
        return self.ids[self.split:]

    def sentence_starts(self, region: str = "train") -> np.ndarray:
        lo, hi = (0, self.split) if region == "train" else (self.split, len(self.text))
        t = self.text
        starts = [
            p for p in range(lo, hi)
            if p == 0 or t[p - 1] == "\n" or (p >= 2 and t[p - 1] == " " and t[p - 2] in ".!?")
        ]
        return np.array(starts, dtype=np.int64)

    def initial_distribution(self) -> np.ndarray:
        """Empirical distribution of sentence-initial symbols in the training part."""
        counts = np.bincount(self.ids[self.sentence_starts("train")], minlength=self.vocab.size)
        return counts / counts.sum()

    def sample_secrets(self, n: int, length: int, rng: Rng, region: str = "heldout") -> list[list[int]]:
        """``n`` windows of ``length`` symbols, each starting at a sentence start."""
        starts = self.sentence_starts(region)
        limit = self.split if region == "train" else len(self.text)
        starts = starts[starts + length <= limit]
        picks = starts[rng.integers(0, len(starts), size=n)]
        return [self.ids[p: p + length].tolist() for p in picks]
