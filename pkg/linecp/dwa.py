"""Dynamic Weight Averaging of multi-task loss weights.

At epoch t each task gets

    w_i(t) = K * exp(r_i / T) / sum_j exp(r_j / T),   r_i = L_i(t-2) / L_i(t-1)

so tasks whose loss falls slowly get more weight. During warm-up, or while
fewer than two epochs of losses exist, every task gets K / num_tasks. The
losses are used as given; smoothing, if wanted, belongs to whoever writes the
history.
"""
import io
import logging
from typing import List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator, model_validator

from linecp.dataio import check_row_widths
from linecp.exceptions import InputError

logger = logging.getLogger(__name__)


class DwaConfig(BaseModel):
    num_tasks: int = Field(default=3, ge=1)
    k_norm: Optional[float] = Field(default=None, gt=0.0,
                                    description="Normalization constant K; defaults to num_tasks")
    temperature: float = Field(default=2.0, gt=0.0)
    warmup_epochs: int = Field(default=10, ge=0)

    @property
    def k(self) -> float:
        return float(self.num_tasks) if self.k_norm is None else self.k_norm


class LossHistory(BaseModel):
    """Per-epoch losses; row t holds every task's loss at epoch t."""

    task_ids: List[str]
    losses: List[List[float]]

    @field_validator("task_ids")
    @classmethod
    def validate_task_ids(cls, v):
        if not v or len(set(v)) != len(v):
            raise ValueError("task ids must be non-empty and unique")
        return v

    @model_validator(mode="after")
    def check_losses(self):
        for epoch, row in enumerate(self.losses):
            if len(row) != len(self.task_ids):
                raise ValueError(f"epoch {epoch}: {len(row)} losses for {len(self.task_ids)} tasks")
            for task, loss in zip(self.task_ids, row):
                if not loss > 0.0 or not np.isfinite(loss):
                    raise ValueError(f"epoch {epoch}, task {task}: loss must be positive, got {loss}")
        return self

    @property
    def num_epochs(self) -> int:
        return len(self.losses)

    @property
    def num_tasks(self) -> int:
        return len(self.task_ids)


def dwa_weights(history: LossHistory, t: int, config: DwaConfig) -> np.ndarray:
    """
    Task weights for epoch t. Always sums to K.

    Raises:
        InputError: t < 0, task count differs from config, or a history of two or
            more epochs ends before epoch t-1
    """
    if t < 0:
        raise InputError(f"epoch must be non-negative, got {t}")
    if history.num_tasks != config.num_tasks:
        raise InputError(f"history has {history.num_tasks} tasks, config expects {config.num_tasks}")

    k = config.k
    if t < config.warmup_epochs or t < 2 or history.num_epochs < 2:
        return np.full(config.num_tasks, k / config.num_tasks)
    if t - 1 >= history.num_epochs:
        raise InputError(f"epoch {t} needs losses for epoch {t - 1}; history has {history.num_epochs} epochs")

    losses = np.asarray(history.losses, dtype=np.float64)
    ratio = losses[t - 2] / losses[t - 1]
    logits = ratio / config.temperature
    e = np.exp(logits - logits.max())
    return k * e / e.sum()


def replay(history: LossHistory, config: DwaConfig) -> pd.DataFrame:
    """Weights for every recorded epoch plus the next one."""
    rows = []
    for t in range(history.num_epochs + 1):
        rows.append([t] + dwa_weights(history, t, config).tolist())
    return pd.DataFrame(rows, columns=["epoch"] + history.task_ids)


def read_loss_history(text: str) -> LossHistory:
    """
    Parse a loss-history CSV: ``epoch`` then one column per task. Epochs must
    run 0, 1, 2, ... without gaps.
    """
    check_row_widths(text, "loss history")
    try:
        df = pd.read_csv(io.StringIO(text), index_col=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InputError(f"unreadable loss history: {e}") from e

    if list(df.columns[:1]) != ["epoch"] or len(df.columns) < 2:
        raise InputError("loss history must have an epoch column followed by task columns")
    epochs = pd.to_numeric(df["epoch"], errors="coerce")
    if epochs.isna().any() or (epochs != epochs.round()).any():
        raise InputError("loss history epochs must be integers")
    if list(epochs.astype(int)) != list(range(len(df))):
        raise InputError("loss history epochs must be 0, 1, 2, ... in order")

    tasks = [str(c) for c in df.columns[1:]]
    values = df[df.columns[1:]].apply(pd.to_numeric, errors="coerce")
    if values.isna().to_numpy().any():
        raise InputError("loss history has non-numeric losses")
    try:
        return LossHistory(task_ids=tasks, losses=values.to_numpy(dtype=np.float64).tolist())
    except ValueError as e:
        raise InputError(f"invalid loss history: {e}") from e


def write_weights(weights: pd.DataFrame) -> str:
    return weights.to_csv(index=False, lineterminator="\n")
