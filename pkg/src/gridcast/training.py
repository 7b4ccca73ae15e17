"""End-to-end teacher-forced training of the encoder-decoder.

The loss is the negative log likelihood of the ground-truth grid classes
under the decoder's per-step softmax,

    L = - sum_j sum_delta ln z[j, delta, label(j, delta)],

reported and optimized as the mean over (example, step) pairs so traces are
comparable across batch sizes. Training decodes with teacher forcing: the
input at step delta is the true label of step delta-1 (the dummy start input
at step 1); beam feedback is inference-only.

Gradients are exact backpropagation through time across the decoder, both
LSTM stacks, the dense layers, and the embedding matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn, ogm
from .seq2seq import (
    ModelConfig,
    ModelParams,
    decoder_initial_state,
    decode_core,
    embed_tokens,
    encode_core,
    init_model_params,
    start_input,
    token_embed_columns,
)

__all__ = [
    "TrainConfig",
    "TrainingExample",
    "AdamState",
    "TrainingDiverged",
    "crop_windows",
    "fit_normalizer",
    "nll_loss",
    "adam_step",
    "clip_gradients",
    "lr_on_plateau",
    "train",
    "TrainResult",
    "get_flat_params",
    "set_flat_params",
    "flatten_grads",
    "make_loss_fn",
]

# labels are taken every 2nd frame: observations tick at 100 ms, the decoder
# emits at 0.2 s
LABEL_STRIDE = 2


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.0008
    batch_size: int = 256
    max_epochs: int = 100
    plateau_patience: int = 3
    plateau_min_delta: float = 1e-3  # relative improvement threshold
    early_stop_patience: int = 5
    grad_clip_norm: float = 5.0
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # optional stop once validation NLL reaches this (memorization runs)
    target_val_nll: float | None = None

    def __post_init__(self) -> None:
        if self.lr0 <= 0 or self.batch_size < 1:
            raise ValueError("lr0 must be positive and batch_size >= 1")


@dataclass
class TrainingExample:
    """One training window: obs_len frames of inputs at 100 ms, horizon flat
    class labels at 200 ms."""

    inputs: np.ndarray  # (obs_len, 6)
    labels: np.ndarray  # (horizon,) int, 1..num_classes


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; .best_params/.trace hold the last good state."""

    def __init__(self, message: str, best_params: ModelParams | None, trace: list):
        super().__init__(message)
        self.best_params = best_params
        self.trace = trace


def crop_windows(records, obs_len: int, horizon: int, grid: ogm.GridSpec) -> tuple[list[TrainingExample], int]:
    """Every stride-1 window of obs_len frames plus horizon labels from each
    record (anything with a .frames (F, 6) array, or the array itself).

    Labels are the quantized positions of every 2nd subsequent frame; targets
    outside sensor validity become the out-of-map class and are kept. Returns
    (examples, count of records too short for a single window).
    """
    need = obs_len + LABEL_STRIDE * horizon
    examples: list[TrainingExample] = []
    skipped = 0
    for rec in records:
        frames = np.asarray(getattr(rec, "frames", rec), dtype=np.float64)
        if frames.shape[0] < need:
            skipped += 1
            continue
        for s in range(frames.shape[0] - need + 1):
            labels = np.empty(horizon, dtype=np.int64)
            for j in range(horizon):
                fx, fy = frames[s + obs_len + LABEL_STRIDE * (j + 1) - 1, 2:4]
                labels[j] = ogm.flatten(ogm.quantize(float(fx), float(fy), grid), grid)
            examples.append(TrainingExample(inputs=frames[s : s + obs_len], labels=labels))
    return examples, skipped


def fit_normalizer(params: ModelParams, examples: list[TrainingExample]) -> None:
    """Set the per-feature standardization stats from the training inputs."""
    stacked = np.concatenate([ex.inputs for ex in examples], axis=0)
    params.feat_mean[...] = stacked.mean(axis=0)
    params.feat_std[...] = np.maximum(stacked.std(axis=0), 1e-8)


def _batch_arrays(examples: list[TrainingExample]) -> tuple[np.ndarray, np.ndarray]:
    inputs = np.stack([ex.inputs for ex in examples])
    labels = np.stack([ex.labels for ex in examples])
    return inputs, labels


def nll_loss(
    params: ModelParams, examples: list[TrainingExample], with_grads: bool = True
) -> tuple[float, dict[str, np.ndarray] | None]:
    """Mean per-(example, step) NLL of the labels under teacher forcing,
    with exact gradients for every trainable tensor."""
    cfg = params.config
    inputs, labels = _batch_arrays(examples)
    batch, horizon = labels.shape
    if inputs.shape[1] != cfg.obs_len or horizon != cfg.horizon:
        raise ValueError("examples do not match the model's obs_len/horizon")
    if np.any((labels < 1) | (labels > cfg.num_classes)):
        raise ValueError(f"labels must lie in 1..{cfg.num_classes}")

    summary, enc_tapes = encode_core(params, inputs, with_tapes=with_grads)
    state = decoder_initial_state(params, summary)

    dec_tapes = []
    log_probs = []  # per step, (B, Q) log-softmax
    loss_sum = 0.0
    denom = batch * horizon
    for step in range(horizon):
        if step == 0:
            u = start_input(params, batch)
            tokens = None
        else:
            tokens = labels[:, step - 1]
            u = embed_tokens(params, tokens)
        logits, state, tapes = decode_core(params, state, u, with_tapes=with_grads)
        lp = nn.log_softmax(logits)
        loss_sum -= float(lp[np.arange(batch), labels[:, step] - 1].sum())
        if with_grads:
            tapes.tokens = tokens
            dec_tapes.append(tapes)
            log_probs.append(lp)
    loss = loss_sum / denom
    if not with_grads:
        return loss, None
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite training loss")

    grads = params.zero_grads()

    # decoder backward, newest step first
    depth = len(params.dec_lstm)
    dstate = [(np.zeros_like(s.c), np.zeros_like(s.h)) for s in state]
    for step in range(horizon - 1, -1, -1):
        dlogits = np.exp(log_probs[step])
        dlogits[np.arange(batch), labels[:, step] - 1] -= 1.0
        dlogits /= denom
        g = dlogits
        for k in range(len(params.dec_fc) - 1, -1, -1):
            fc_grads, g = nn.dense_backward(params.dec_fc[k], dec_tapes[step].fc[k], g)
            grads[f"dec_fc{k}.weight"] += fc_grads["weight"]
            grads[f"dec_fc{k}.bias"] += fc_grads["bias"]
        # g is now the gradient wrt the top decoder LSTM's h at this step
        for k in range(depth - 1, -1, -1):
            dc, dh = dstate[k]
            dh = dh + g
            cell_grads, grad_prev, grad_u = nn.lstm_backward(
                params.dec_lstm[k], dec_tapes[step].lstm[k], dc, dh
            )
            grads[f"dec_lstm{k}.w_u"] += cell_grads["w_u"]
            grads[f"dec_lstm{k}.w_h"] += cell_grads["w_h"]
            grads[f"dec_lstm{k}.b"] += cell_grads["b"]
            dstate[k] = (grad_prev.c, grad_prev.h)
            g = grad_u  # feeds layer below (same step), or the embedding
        tokens = dec_tapes[step].tokens
        if tokens is not None:
            half = cfg.embed_dim_per_axis
            wc, lc = token_embed_columns(tokens, cfg)
            np.add.at(grads["embed_w"].T, wc, g[:, :half])
            np.add.at(grads["embed_l"].T, lc, g[:, half:])

    # decoder initial states came from the encoder summary
    estate = []
    for k in range(depth):
        dc, dh = dstate[k]
        if not cfg.copy_hidden_state:
            dh = np.zeros_like(dh)
        estate.append((dc, dh))

    # encoder backward across the observation window
    for t in range(cfg.obs_len - 1, -1, -1):
        g = None  # gradient flowing into layer k's h from layer k+1's input
        for k in range(len(params.enc_lstm) - 1, -1, -1):
            dc, dh = estate[k]
            if g is not None:
                dh = dh + g
            cell_grads, grad_prev, grad_u = nn.lstm_backward(
                params.enc_lstm[k], enc_tapes.lstm[t][k], dc, dh
            )
            grads[f"enc_lstm{k}.w_u"] += cell_grads["w_u"]
            grads[f"enc_lstm{k}.w_h"] += cell_grads["w_h"]
            grads[f"enc_lstm{k}.b"] += cell_grads["b"]
            estate[k] = (grad_prev.c, grad_prev.h)
            g = grad_u
        for k in range(len(params.enc_fc) - 1, -1, -1):
            fc_grads, g = nn.dense_backward(params.enc_fc[k], enc_tapes.fc[t][k], g)
            grads[f"enc_fc{k}.weight"] += fc_grads["weight"]
            grads[f"enc_fc{k}.bias"] += fc_grads["bias"]
        # gradient wrt normalized inputs is discarded (normalizer is frozen)
    return loss, grads


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Per-tensor first/second moment estimates and the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={name: np.zeros_like(a) for name, a in params.param_items()},
            v={name: np.zeros_like(a) for name, a in params.param_items()},
        )


def adam_step(
    state: AdamState,
    params: ModelParams,
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ModelParams, AdamState]:
    """Bias-corrected moment update, applied in place."""
    state.t += 1
    t = state.t
    for name, p in params.param_items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so the global L2 norm is <= max_norm;
    returns the pre-clip norm."""
    total = 0.0
    for name in sorted(grads):
        total += float(np.sum(grads[name] ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for name in grads:
            grads[name] *= scale
    return norm


def lr_on_plateau(history: list[float], lr: float, config: TrainConfig) -> float:
    """Halve the rate when the newest evaluation completes a run of
    plateau_patience evaluations without a relative improvement over the
    running best exceeding plateau_min_delta."""
    if not history:
        raise ValueError("history must be nonempty")
    best = history[0]
    streak = 0
    halved_at = -1
    for idx, value in enumerate(history[1:], start=1):
        if value < best * (1.0 - config.plateau_min_delta):
            best = value
            streak = 0
        else:
            streak += 1
            if streak == config.plateau_patience:
                halved_at = idx
                streak = 0
    return lr / 2.0 if halved_at == len(history) - 1 else lr


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParams  # best-validation parameters
    trace: list[tuple[int, float, float, float]] = field(default_factory=list)
    best_val_nll: float = np.inf
    stop_reason: str = ""

    def trace_csv(self) -> str:
        lines = ["epoch,train_nll,val_nll,lr"]
        for epoch, train_nll, val_nll, lr in self.trace:
            lines.append(f"{epoch},{train_nll!r},{val_nll!r},{lr!r}")
        return "\n".join(lines) + "\n"


def _dataset_nll(params: ModelParams, examples: list[TrainingExample], batch_size: int) -> float:
    total = 0.0
    count = 0
    for s in range(0, len(examples), batch_size):
        chunk = examples[s : s + batch_size]
        loss, _ = nll_loss(params, chunk, with_grads=False)
        total += loss * len(chunk)
        count += len(chunk)
    return total / count


def train(
    config: ModelConfig,
    train_set: list[TrainingExample],
    val_set: list[TrainingExample],
    tconfig: TrainConfig = TrainConfig(),
    on_epoch=None,
) -> TrainResult:
    """Seeded mini-batch training with gradient clipping, plateau LR halving,
    and early stopping on the validation NLL; returns the best-validation
    parameters and the per-epoch (epoch, train_nll, val_nll, lr) trace.

    on_epoch, when given, is called after every evaluation as
    on_epoch(epoch, train_nll, val_nll, lr, params, is_best)."""
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be nonempty")
    rng = np.random.default_rng(tconfig.seed)
    params = init_model_params(config, rng)
    fit_normalizer(params, train_set)
    adam = AdamState.for_params(params)
    lr = tconfig.lr0

    val_history: list[float] = []
    trace: list[tuple[int, float, float, float]] = []
    best_val = np.inf
    best_params = params.copy()
    evals_since_improvement = 0

    train_nll0 = _dataset_nll(params, train_set, tconfig.batch_size)
    val_nll = _dataset_nll(params, val_set, tconfig.batch_size)
    val_history.append(val_nll)
    trace.append((0, train_nll0, val_nll, lr))
    if val_nll < best_val:
        best_val = val_nll
        best_params = params.copy()
    if on_epoch is not None:
        on_epoch(0, train_nll0, val_nll, lr, params, True)

    stop_reason = "max_epochs"
    for epoch in range(1, tconfig.max_epochs + 1):
        order = rng.permutation(len(train_set))
        epoch_loss = 0.0
        seen = 0
        for s in range(0, len(order), tconfig.batch_size):
            batch = [train_set[i] for i in order[s : s + tconfig.batch_size]]
            try:
                loss, grads = nll_loss(params, batch)
            except FloatingPointError as exc:
                raise TrainingDiverged(str(exc), best_params, trace) from exc
            clip_gradients(grads, tconfig.grad_clip_norm)
            adam_step(adam, params, grads, lr, tconfig.adam_beta1, tconfig.adam_beta2, tconfig.adam_eps)
            epoch_loss += loss * len(batch)
            seen += len(batch)

        val_nll = _dataset_nll(params, val_set, tconfig.batch_size)
        if not np.isfinite(val_nll):
            raise TrainingDiverged("non-finite validation loss", best_params, trace)
        val_history.append(val_nll)
        trace.append((epoch, epoch_loss / seen, val_nll, lr))

        is_best = val_nll < best_val
        if is_best:
            best_params = params.copy()
        if val_nll < best_val * (1.0 - tconfig.plateau_min_delta):
            evals_since_improvement = 0
        else:
            evals_since_improvement += 1
        best_val = min(best_val, val_nll)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss / seen, val_nll, lr, params, is_best)

        lr = lr_on_plateau(val_history, lr, tconfig)
        if tconfig.target_val_nll is not None and val_nll <= tconfig.target_val_nll:
            stop_reason = "target_reached"
            break
        if evals_since_improvement >= tconfig.early_stop_patience:
            stop_reason = "early_stop"
            break

    return TrainResult(params=best_params, trace=trace, best_val_nll=best_val, stop_reason=stop_reason)


# ---------------------------------------------------------------------------
# flat-parameter plumbing (optimizer- and verification-facing)
# ---------------------------------------------------------------------------


def get_flat_params(params: ModelParams) -> np.ndarray:
    return np.concatenate([a.ravel() for _, a in params.param_items()])


def set_flat_params(params: ModelParams, vec: np.ndarray) -> None:
    offset = 0
    for _, a in params.param_items():
        a[...] = vec[offset : offset + a.size].reshape(a.shape)
        offset += a.size
    if offset != vec.size:
        raise ValueError(f"flat vector has {vec.size} entries, params need {offset}")


def flatten_grads(params: ModelParams, grads: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([grads[name].ravel() for name, _ in params.param_items()])


def make_loss_fn(params: ModelParams, examples: list[TrainingExample]):
    """Flat-vector views of the NLL for the finite-difference gradient
    checker: (loss-and-gradient function, cheaper value-only function)."""

    def f(vec: np.ndarray) -> tuple[float, np.ndarray]:
        set_flat_params(params, vec)
        loss, grads = nll_loss(params, examples)
        return loss, flatten_grads(params, grads)

    def f_value(vec: np.ndarray) -> float:
        set_flat_params(params, vec)
        loss, _ = nll_loss(params, examples, with_grads=False)
        return loss

    return f, f_value
