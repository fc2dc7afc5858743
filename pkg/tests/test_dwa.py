import math

import numpy as np
import pytest

from linecp.dwa import DwaConfig, LossHistory, dwa_weights, read_loss_history, replay, write_weights
from linecp.exceptions import InputError


def _history(losses, tasks=("cls", "seg", "land")):
    return LossHistory(task_ids=list(tasks), losses=[list(row) for row in losses])


def test_defaults():
    config = DwaConfig()
    assert config.k == 3.0
    assert config.temperature == 2.0
    assert config.warmup_epochs == 10


def test_hand_derived_weights():
    # r = L(t-2) / L(t-1) = (2, 1, 1), so w_0 = 3 sqrt(e) / (sqrt(e) + 2)
    history = _history([[2.0, 1.0, 1.0], [1.0, 1.0, 1.0]])
    w = dwa_weights(history, 2, DwaConfig(num_tasks=3, k_norm=3.0, temperature=2.0, warmup_epochs=0))
    root_e = math.sqrt(math.e)
    assert w[0] == pytest.approx(3 * root_e / (root_e + 2), abs=1e-12)
    assert w == pytest.approx([1.355588, 0.822206, 0.822206], abs=1e-6)
    assert w.sum() == pytest.approx(3.0, abs=1e-9)


def test_identical_histories_give_ones():
    history = _history([[1.0, 1.0, 1.0]] * 12)
    w = dwa_weights(history, 12, DwaConfig(num_tasks=3))
    assert w == pytest.approx([1.0, 1.0, 1.0])


@pytest.mark.parametrize("t", range(10))
def test_warmup_is_equal_weights(t):
    rng = np.random.default_rng(t)
    history = _history(rng.uniform(0.1, 5.0, size=(12, 3)))
    w = dwa_weights(history, t, DwaConfig(num_tasks=3))
    assert w.tolist() == [1.0, 1.0, 1.0]


def test_cold_history_is_equal_weights():
    history = _history([[3.0, 1.0, 2.0]])
    config = DwaConfig(num_tasks=3, warmup_epochs=0)
    for t in (0, 1, 2, 5):
        assert dwa_weights(history, t, config).tolist() == [1.0, 1.0, 1.0]
    assert dwa_weights(_history([]), 4, config).tolist() == [1.0, 1.0, 1.0]


def test_k_defaults_to_task_count():
    history = _history([[1.0, 2.0]] * 3, tasks=("a", "b"))
    w = dwa_weights(history, 0, DwaConfig(num_tasks=2))
    assert w.tolist() == [1.0, 1.0]


def test_weights_sum_to_k():
    rng = np.random.default_rng(2024)
    config = DwaConfig(num_tasks=3, warmup_epochs=0)
    for _ in range(1000):
        history = _history(rng.uniform(0.01, 10.0, size=(3, 3)))
        assert dwa_weights(history, 2, config).sum() == pytest.approx(3.0, abs=1e-9)


def test_scale_invariance():
    rng = np.random.default_rng(6)
    losses = rng.uniform(0.1, 2.0, size=(15, 3))
    scaled = losses.copy()
    scaled[:, 1] *= 37.5
    config = DwaConfig(num_tasks=3)
    for t in range(16):
        assert dwa_weights(_history(scaled), t, config) == pytest.approx(dwa_weights(_history(losses), t, config))


def test_permutation_equivariance():
    losses = np.array([[3.0, 2.0, 1.5], [2.0, 1.9, 0.5]])
    config = DwaConfig(num_tasks=3, warmup_epochs=0)
    w = dwa_weights(_history(losses), 2, config)
    permuted = dwa_weights(_history(losses[:, [2, 0, 1]]), 2, config)
    assert permuted == pytest.approx(w[[2, 0, 1]])


def test_slower_learner_gets_more_weight():
    # task 0 barely improves (r=1.0), task 1 halves its loss (r=2.0)
    history = _history([[1.0, 2.0, 1.0], [1.0, 1.0, 1.0]])
    w = dwa_weights(history, 2, DwaConfig(num_tasks=3, warmup_epochs=0))
    assert w[1] > w[0]


def test_non_positive_loss_rejected():
    with pytest.raises(ValueError):
        _history([[1.0, 0.0, 1.0]])
    with pytest.raises(ValueError):
        _history([[1.0, -2.0, 1.0]])


def test_task_count_mismatch():
    with pytest.raises(InputError):
        dwa_weights(_history([[1.0, 1.0, 1.0]]), 0, DwaConfig(num_tasks=2))


def test_history_ending_early_is_rejected():
    with pytest.raises(InputError):
        dwa_weights(_history([[1.0, 1.0, 1.0]] * 3), 12, DwaConfig(num_tasks=3))


def test_read_loss_history():
    history = read_loss_history("epoch,cls,seg\n0,1.5,2.0\n1,1.2,1.9\n")
    assert history.task_ids == ["cls", "seg"]
    assert history.losses == [[1.5, 2.0], [1.2, 1.9]]


@pytest.mark.parametrize("text", [
    "epoch,cls\n0,1.0\n2,1.0\n",
    "step,cls\n0,1.0\n",
    "epoch,cls\n0,abc\n",
    "epoch,cls\n0,0\n",
    "epoch,cls\n0.5,1.0\n1.9,1.0\n",
    "epoch,cls\n0,1.0,2.0\n1,1.0,2.0\n",
    "epoch,cls,seg\n0,1.0\n",
    "epoch\n0\n",
    "",
])
def test_read_loss_history_rejects(text):
    with pytest.raises(InputError):
        read_loss_history(text)


def test_replay_equal_losses():
    history = _history([[0.7, 0.7, 0.7]] * 12)
    table = replay(history, DwaConfig(num_tasks=3))
    assert list(table.columns) == ["epoch", "cls", "seg", "land"]
    assert table["epoch"].tolist() == list(range(13))
    assert table[["cls", "seg", "land"]].to_numpy().tolist() == [[1.0, 1.0, 1.0]] * 13
    text = write_weights(table)
    assert text.splitlines()[0] == "epoch,cls,seg,land"
    assert text.endswith("\n")
