"""Scaled uniform quantization of real series into a token vocabulary and a
smoothed n-gram categorical sequence model over those tokens.

A series is divided by the mean absolute value of its context, clipped to
[-L, L] and binned uniformly (left-inclusive bins, final bin right-closed).
Ids 0 and 1 are the PAD and EOS specials; value bins follow. The n-gram
model stores additive-smoothed conditional counts, is scored by mean
negative log likelihood, and forecasts by autoregressive sampling followed
by de-quantization with the context scale.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np

from .errors import ConfigError, DataError, DomainError, FitError
from .forecasting import Forecast, ForecastRequest

PAD = 0
EOS = 1
N_SPECIALS = 2


@dataclass(frozen=True)
class TokenVocab:
    """Uniform value bins over [-clip, clip] plus the two special tokens."""

    n_bins: int = 256
    clip: float = 4.0

    def __post_init__(self):
        if self.n_bins < 2:
            raise ConfigError("vocabulary needs at least 2 value bins")
        if self.clip <= 0:
            raise ConfigError("clip limit must be positive")

    @property
    def size(self) -> int:
        return self.n_bins + N_SPECIALS

    @cached_property
    def edges(self) -> np.ndarray:
        return np.linspace(-self.clip, self.clip, self.n_bins + 1)

    @cached_property
    def centers(self) -> np.ndarray:
        e = self.edges
        return (e[:-1] + e[1:]) / 2.0

    @property
    def bin_width(self) -> float:
        return 2.0 * self.clip / self.n_bins

    def is_special(self, token_id) -> np.ndarray:
        return np.asarray(token_id) < N_SPECIALS


@dataclass
class TokenSeries:
    """Token ids of one quantized series (EOS terminator optional)."""

    ids: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.ids)


def mean_scale(values: np.ndarray) -> float:
    """Mean absolute value of the context; 1.0 for an all-zero series."""
    s = float(np.mean(np.abs(values)))
    return s if s > 0.0 else 1.0


def tokenize(context, vocab: TokenVocab) -> tuple[TokenSeries, float]:
    """Scale by the context's mean |value|, clip, and bin.

    Bins are left-inclusive with the final bin right-closed, so a value on
    an interior edge belongs to the bin to its right and the top edge to the
    last bin.
    """
    values = np.asarray(context, dtype=float)
    if values.ndim != 1 or len(values) == 0:
        raise DomainError("context must be a non-empty 1-D series")
    scale = mean_scale(values)
    scaled = np.clip(values / scale, -vocab.clip, vocab.clip)
    bins = np.searchsorted(vocab.edges, scaled, side="right") - 1
    bins = np.clip(bins, 0, vocab.n_bins - 1)
    return TokenSeries(bins + N_SPECIALS), scale


def detokenize(tokens, scale: float, vocab: TokenVocab) -> np.ndarray:
    """Map value tokens back to bin centers times the scale."""
    ids = tokens.ids if isinstance(tokens, TokenSeries) else np.asarray(tokens, dtype=np.int64)
    if np.any(ids < N_SPECIALS) or np.any(ids >= vocab.size):
        raise DomainError("detokenize expects value tokens only (no PAD/EOS)")
    return vocab.centers[ids - N_SPECIALS] * scale


@dataclass
class NgramModel:
    """Additive-smoothed conditional count model over token histories.

    ``counts[history][token]`` holds raw transition counts for each observed
    (order-1)-token history; conditionals are (count + smoothing) /
    (total + smoothing * vocab size), which keeps every probability positive
    and every distribution normalized.
    """

    order: int
    vocab: TokenVocab
    smoothing: float
    counts: dict[tuple[int, ...], Counter] = field(default_factory=dict)
    totals: dict[tuple[int, ...], int] = field(default_factory=dict)

    @classmethod
    def uniform(cls, vocab: TokenVocab, order: int = 1, smoothing: float = 1.0) -> "NgramModel":
        """Model with no observations: every conditional is uniform."""
        return cls(order=order, vocab=vocab, smoothing=smoothing)

    def log_prob(self, history: tuple[int, ...], token: int) -> float:
        count = self.counts.get(history, _EMPTY).get(token, 0)
        total = self.totals.get(history, 0)
        return math.log((count + self.smoothing) / (total + self.smoothing * self.vocab.size))

    def conditional(self, history: tuple[int, ...]) -> np.ndarray:
        """Dense probability vector over the full vocabulary."""
        probs = np.full(self.vocab.size, self.smoothing)
        for token, count in self.counts.get(history, _EMPTY).items():
            probs[token] += count
        return probs / (self.totals.get(history, 0) + self.smoothing * self.vocab.size)


_EMPTY: Counter = Counter()


def _history_at(ids: np.ndarray, pos: int, order: int) -> tuple[int, ...]:
    return tuple(int(x) for x in ids[pos - order + 1 : pos])


def fit_ngram(
    corpus: Iterable[TokenSeries | np.ndarray],
    vocab: TokenVocab,
    order: int = 4,
    smoothing: float = 0.1,
) -> NgramModel:
    """Count transitions at every position with a full (order-1) history."""
    if order < 1:
        raise ConfigError("order must be >= 1")
    if smoothing <= 0:
        raise ConfigError("smoothing must be positive")
    counts: dict[tuple[int, ...], Counter] = defaultdict(Counter)
    totals: dict[tuple[int, ...], int] = defaultdict(int)
    n_series = 0
    for series in corpus:
        ids = series.ids if isinstance(series, TokenSeries) else np.asarray(series, dtype=np.int64)
        if np.any(ids < 0) or np.any(ids >= vocab.size):
            raise DataError("token id outside vocabulary")
        n_series += 1
        for pos in range(order - 1, len(ids)):
            history = _history_at(ids, pos, order)
            counts[history][int(ids[pos])] += 1
            totals[history] += 1
    if n_series == 0:
        raise FitError("cannot fit an n-gram model on an empty corpus")
    return NgramModel(
        order=order, vocab=vocab, smoothing=smoothing, counts=dict(counts), totals=dict(totals)
    )


def cross_entropy(model: NgramModel, tokens: TokenSeries | np.ndarray) -> float:
    """Mean negative log likelihood (nats/token) over full-history positions."""
    ids = tokens.ids if isinstance(tokens, TokenSeries) else np.asarray(tokens, dtype=np.int64)
    if len(ids) < model.order:
        raise DomainError(f"need at least {model.order} tokens")
    total = 0.0
    n = 0
    for pos in range(model.order - 1, len(ids)):
        total -= model.log_prob(_history_at(ids, pos, model.order), int(ids[pos]))
        n += 1
    return total / n


def corpus_cross_entropy(model: NgramModel, corpus: Iterable[TokenSeries | np.ndarray]) -> float:
    losses, weights = [], []
    for series in corpus:
        ids = series.ids if isinstance(series, TokenSeries) else np.asarray(series)
        n = len(ids) - model.order + 1
        if n > 0:
            losses.append(cross_entropy(model, series))
            weights.append(n)
    if not losses:
        raise DomainError("corpus has no scorable series")
    return float(np.average(losses, weights=weights))


def sample_forecast(
    model: NgramModel,
    req: ForecastRequest,
    rng: np.random.Generator,
    vocab: TokenVocab | None = None,
) -> Forecast:
    """Tokenize the context, sample token paths autoregressively, de-quantize.

    Sampling is restricted to value tokens (the smoothed conditionals give
    PAD/EOS mass that makes no sense mid-series), renormalized over the value
    range. The context scale carries over to the sampled horizon.
    """
    vocab = vocab or model.vocab
    tokens, scale = tokenize(req.context, vocab)
    ctx_ids = tokens.ids
    hist_len = model.order - 1
    paths = np.empty((req.n_samples, req.horizon))
    for s in range(req.n_samples):
        ids = list(ctx_ids[-hist_len:]) if hist_len else []
        sampled = np.empty(req.horizon, dtype=np.int64)
        for h in range(req.horizon):
            history = tuple(int(x) for x in ids[-hist_len:]) if hist_len else ()
            probs = model.conditional(history)[N_SPECIALS:]
            probs = probs / probs.sum()
            token = int(rng.choice(vocab.n_bins, p=probs)) + N_SPECIALS
            sampled[h] = token
            ids.append(token)
        paths[s] = detokenize(sampled, scale, vocab)
    return Forecast.from_samples(paths)


class TokenForecaster:
    """Forecaster-protocol wrapper around a fitted n-gram model."""

    def __init__(self, model: NgramModel, name: str = "ngram"):
        self.model = model
        self.name = name

    def forecast(self, req: ForecastRequest, rng: np.random.Generator) -> Forecast:
        return sample_forecast(self.model, req, rng)


FORMAT_HEADER = "cfbench-ngram v1"


def save_ngram(model: NgramModel, path) -> None:
    """Versioned flat text: header, metadata, then history/token/count triples."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(FORMAT_HEADER + "\n")
        fh.write(
            f"order={model.order} n_bins={model.vocab.n_bins} "
            f"clip={repr(model.vocab.clip)} smoothing={repr(model.smoothing)}\n"
        )
        for history in sorted(model.counts):
            row = model.counts[history]
            for token in sorted(row):
                hist_text = ",".join(str(h) for h in history) if history else "-"
                fh.write(f"{hist_text} {token} {row[token]}\n")


def load_ngram(path) -> NgramModel:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != FORMAT_HEADER:
            raise DataError(f"unsupported model file header {header!r}")
        meta = dict(item.split("=", 1) for item in fh.readline().split())
        vocab = TokenVocab(n_bins=int(meta["n_bins"]), clip=float(meta["clip"]))
        model = NgramModel(
            order=int(meta["order"]), vocab=vocab, smoothing=float(meta["smoothing"])
        )
        counts: dict[tuple[int, ...], Counter] = defaultdict(Counter)
        totals: dict[tuple[int, ...], int] = defaultdict(int)
        for line in fh:
            hist_text, token, count = line.split()
            history = () if hist_text == "-" else tuple(int(h) for h in hist_text.split(","))
            counts[history][int(token)] += int(count)
            totals[history] += int(count)
        model.counts = dict(counts)
        model.totals = dict(totals)
    return model
