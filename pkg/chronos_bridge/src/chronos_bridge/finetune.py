"""Fine-tuning entry point: adapt a pretrained checkpoint to trajectory data.

The training CSV uses the harness's canonical schema (traj_id, time_s, ...,
a_follower, ...); each trajectory's follower-acceleration series becomes
context/horizon training windows. Data validation happens before any model
import so an undersized dataset fails fast even without the torch stack.
"""

from __future__ import annotations

import csv
import os
import sys
from dataclasses import dataclass

import numpy as np

from .backends import BridgeConfig, StartupError


@dataclass
class FinetuneSettings:
    context: int = 60
    horizon: int = 30
    steps: int = 200
    learning_rate: float = 1e-4
    batch_size: int = 8
    seed: int = 0


class DataError(RuntimeError):
    pass


def load_target_series(csv_path: str, column: str = "a_follower") -> list[np.ndarray]:
    """Follower-acceleration series per trajectory, in file order."""
    if not os.path.exists(csv_path):
        raise DataError(f"training CSV not found: {csv_path}")
    series: dict[str, list[float]] = {}
    order: list[str] = []
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise DataError(f"training CSV lacks the {column!r} column")
        id_col = "traj_id" if "traj_id" in reader.fieldnames else reader.fieldnames[0]
        for row in reader:
            tid = row[id_col]
            if tid not in series:
                series[tid] = []
                order.append(tid)
            series[tid].append(float(row[column]))
    return [np.asarray(series[tid]) for tid in order]


def make_windows(series: list[np.ndarray], settings: FinetuneSettings):
    size = settings.context + settings.horizon
    contexts, targets = [], []
    for x in series:
        for start in range(0, len(x) - size + 1, settings.horizon):
            contexts.append(x[start : start + settings.context])
            targets.append(x[start + settings.context : start + size])
    return contexts, targets


def finetune(
    config: BridgeConfig,
    csv_path: str,
    out_dir: str,
    settings: FinetuneSettings = FinetuneSettings(),
) -> str:
    """Run gradient updates on the tokenized windows; returns the new
    checkpoint path, loadable by ``serve --checkpoint <path>``."""
    series = load_target_series(csv_path)
    contexts, targets = make_windows(series, settings)
    if not contexts:
        raise DataError(
            f"training data has no context+horizon window "
            f"({settings.context}+{settings.horizon} samples)"
        )

    try:
        import torch
        from chronos import ChronosPipeline
    except ImportError as exc:
        raise StartupError(f"fine-tuning needs the chronos/torch stack: {exc}") from None

    from .backends import CHECKPOINT_SIZES

    ref = (
        f"amazon/chronos-t5-{config.checkpoint}"
        if config.checkpoint in CHECKPOINT_SIZES
        else config.checkpoint
    )
    pipeline = ChronosPipeline.from_pretrained(ref, device_map=config.device)
    tokenizer = pipeline.tokenizer
    model = pipeline.model
    model.train()
    device = next(model.parameters()).device
    optimizer = torch.optim.AdamW(model.parameters(), lr=settings.learning_rate)
    rng = np.random.default_rng(settings.seed)
    torch.manual_seed(settings.seed)

    def batch(step: int):
        idx = rng.integers(0, len(contexts), size=min(settings.batch_size, len(contexts)))
        ctx = torch.tensor(np.stack([contexts[i] for i in idx]), dtype=torch.float32)
        fut = torch.tensor(np.stack([targets[i] for i in idx]), dtype=torch.float32)
        input_ids, attention_mask, scale = tokenizer.context_input_transform(ctx)
        label_ids, label_mask = tokenizer.label_input_transform(fut, scale)
        label_ids[label_mask == 0] = -100
        return (
            input_ids.to(device),
            attention_mask.to(device),
            label_ids.to(device),
        )

    for step in range(settings.steps):
        input_ids, attention_mask, labels = batch(step)
        loss = model(
            input_ids=input_ids, attention_mask=attention_mask, labels=labels
        ).loss
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        print(f"step {step}: loss {float(loss):.4f}", file=sys.stderr)

    os.makedirs(out_dir, exist_ok=True)
    model.eval()
    inner = getattr(model, "model", model)  # unwrap to the HF seq2seq module
    inner.save_pretrained(out_dir)
    print(f"saved fine-tuned checkpoint to {out_dir}", file=sys.stderr)
    return out_dir
