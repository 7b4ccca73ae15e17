"""LSTM encoder-decoder over occupancy-grid classes, with beam-search decoding.

Encoder: per time step the 6 observation features are normalized, lifted by a
stack of ReLU dense layers to the cell dimension, then run through a stack of
LSTMs (output of each feeds the next). After the observation window the final
cell states of the encoder LSTMs seed the decoder LSTMs.

Decoder: at each future step the previous grid class (a dummy zero vector at
the first step) is embedded by concatenating one column from each of two
per-axis embedding matrices, run through the LSTM stack and dense layers, and
a softmax gives the occupancy probability over all grid classes plus
out-of-map. Beam search keeps the highest cumulative-log-probability
hypotheses; width 1 is greedy decoding.

Inference decodes hypotheses one at a time so a returned cumulative log
probability is bit-reproducible by replaying its token sequence.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .nn import DenseParams, LstmParams, LstmState

__all__ = [
    "ModelConfig",
    "ModelParams",
    "Observation",
    "EncoderSummary",
    "BeamHypothesis",
    "TrajectoryPrediction",
    "CheckpointError",
    "init_model_params",
    "observations_to_array",
    "encode",
    "decoder_initial_state",
    "decode_step",
    "greedy_decode",
    "beam_search_decode",
    "predict_scene",
    "save_checkpoint",
    "load_checkpoint",
]

NUM_FEATURES = 6


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and decoding hyperparameters.

    Defaults: 256-dim cells, 3 dense layers on each side, 2-deep LSTM stacks,
    observation window 30 frames (3 s at 100 ms), 10 decode steps (2 s at
    0.2 s), beam width 10, over the default 36 x 21 grid (757 classes).
    """

    input_dim: int = NUM_FEATURES
    cell_dim: int = 256
    fc_depth: int = 3
    lstm_stack_depth: int = 2
    q_w: int = 36
    q_l: int = 21
    obs_len: int = 30
    horizon: int = 10
    beam_width: int = 10
    # the encoder hands its cell states to the decoder; whether its hidden
    # outputs are copied too is configurable (zeros otherwise)
    copy_hidden_state: bool = True

    def __post_init__(self) -> None:
        if self.cell_dim < 2 or self.cell_dim % 2 != 0:
            raise ValueError("cell_dim must be even (two embedding halves)")
        if self.fc_depth < 1 or self.lstm_stack_depth < 1:
            raise ValueError("layer depths must be >= 1")
        if min(self.q_w, self.q_l, self.obs_len, self.horizon, self.beam_width) < 1:
            raise ValueError("grid dims, obs_len, horizon, beam_width must be >= 1")

    @property
    def num_classes(self) -> int:
        return self.q_w * self.q_l + 1

    @property
    def out_of_map_class(self) -> int:
        return self.num_classes

    @property
    def embed_dim_per_axis(self) -> int:
        return self.cell_dim // 2

    @property
    def embed_cols_w(self) -> int:
        # one column per longitudinal index plus the out-of-map state
        return self.q_w + 1

    @property
    def embed_cols_l(self) -> int:
        return self.q_l + 1


@dataclass
class Observation:
    """One 100 ms sensor frame for one surrounding vehicle: ego speed and yaw
    rate, relative position, relative velocity."""

    v: float
    yaw_rate: float
    x: float
    y: float
    vx: float
    vy: float

    def to_array(self) -> np.ndarray:
        return np.array([self.v, self.yaw_rate, self.x, self.y, self.vx, self.vy])

    @classmethod
    def from_array(cls, a) -> "Observation":
        v, yaw_rate, x, y, vx, vy = (float(z) for z in a)
        return cls(v, yaw_rate, x, y, vx, vy)


def observations_to_array(obs) -> np.ndarray:
    """A sequence of Observation (or rows of 6 floats) as an (M, 6) array."""
    rows = [o.to_array() if isinstance(o, Observation) else np.asarray(o, dtype=np.float64) for o in obs]
    out = np.stack(rows)
    if out.shape[-1] != NUM_FEATURES:
        raise ValueError(f"observations need {NUM_FEATURES} features, got {out.shape[-1]}")
    return out


@dataclass
class ModelParams:
    """All learned weights plus the feature normalizer statistics.

    The checkpoint/optimizer ordering is the order of `checkpoint_items`:
    encoder dense layers, encoder LSTMs, decoder LSTMs, decoder dense layers,
    the two embedding matrices, then the (non-trainable) normalizer stats.
    """

    config: ModelConfig
    enc_fc: list[DenseParams]
    enc_lstm: list[LstmParams]
    dec_lstm: list[LstmParams]
    dec_fc: list[DenseParams]
    embed_w: np.ndarray  # (cell_dim/2, q_w+1)
    embed_l: np.ndarray  # (cell_dim/2, q_l+1)
    feat_mean: np.ndarray  # (6,)
    feat_std: np.ndarray  # (6,)

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        """Trainable tensors as (name, array), in the canonical order."""
        items: list[tuple[str, np.ndarray]] = []
        for i, fc in enumerate(self.enc_fc):
            items += [(f"enc_fc{i}.weight", fc.weight), (f"enc_fc{i}.bias", fc.bias)]
        for i, p in enumerate(self.enc_lstm):
            items += [(f"enc_lstm{i}.w_u", p.w_u), (f"enc_lstm{i}.w_h", p.w_h), (f"enc_lstm{i}.b", p.b)]
        for i, p in enumerate(self.dec_lstm):
            items += [(f"dec_lstm{i}.w_u", p.w_u), (f"dec_lstm{i}.w_h", p.w_h), (f"dec_lstm{i}.b", p.b)]
        for i, fc in enumerate(self.dec_fc):
            items += [(f"dec_fc{i}.weight", fc.weight), (f"dec_fc{i}.bias", fc.bias)]
        items += [("embed_w", self.embed_w), ("embed_l", self.embed_l)]
        return items

    def checkpoint_items(self) -> list[tuple[str, np.ndarray]]:
        return self.param_items() + [("feat_mean", self.feat_mean), ("feat_std", self.feat_std)]

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(a) for name, a in self.param_items()}

    def copy(self) -> "ModelParams":
        other = init_model_params(self.config, seed=0)
        for (_, dst), (_, src) in zip(other.checkpoint_items(), self.checkpoint_items()):
            dst[...] = src
        return other


def init_model_params(config: ModelConfig, seed: int | np.random.Generator = 0) -> ModelParams:
    """Fresh parameters: Glorot-uniform matrices, zero biases except LSTM
    forget gates at 1.0, normalizer at identity (mean 0, std 1)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    c = config.cell_dim
    enc_fc = []
    in_dim = config.input_dim
    for _ in range(config.fc_depth):
        enc_fc.append(nn.init_dense(rng, c, in_dim))
        in_dim = c
    enc_lstm = [nn.init_lstm(rng, c, c) for _ in range(config.lstm_stack_depth)]
    dec_lstm = [nn.init_lstm(rng, c, c) for _ in range(config.lstm_stack_depth)]
    dec_fc = []
    for k in range(config.fc_depth):
        out_dim = config.num_classes if k == config.fc_depth - 1 else c
        dec_fc.append(nn.init_dense(rng, out_dim, c))
    embed_w = nn.glorot_uniform(rng, config.embed_dim_per_axis, config.embed_cols_w)
    embed_l = nn.glorot_uniform(rng, config.embed_dim_per_axis, config.embed_cols_l)
    return ModelParams(
        config=config,
        enc_fc=enc_fc,
        enc_lstm=enc_lstm,
        dec_lstm=dec_lstm,
        dec_fc=dec_fc,
        embed_w=embed_w,
        embed_l=embed_l,
        feat_mean=np.zeros(NUM_FEATURES),
        feat_std=np.ones(NUM_FEATURES),
    )


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------


@dataclass
class EncoderSummary:
    """Final (cell, hidden) state of every encoder LSTM after the window."""

    states: list[LstmState]


@dataclass
class EncoderTapes:
    fc: list[list[nn.DenseTape]]  # [step][fc layer]
    lstm: list[list[nn.LstmTape]]  # [step][lstm layer]


def normalize_features(params: ModelParams, obs: np.ndarray) -> np.ndarray:
    return (obs - params.feat_mean) / params.feat_std


def encode(params: ModelParams, obs) -> EncoderSummary:
    """Run the encoder over exactly obs_len observations (oldest first)."""
    arr = obs if isinstance(obs, np.ndarray) else observations_to_array(obs)
    if arr.ndim != 2 or arr.shape[0] != params.config.obs_len:
        raise ValueError(
            f"encode expects ({params.config.obs_len}, {NUM_FEATURES}) observations, got {arr.shape}"
        )
    summary, _ = encode_core(params, arr, with_tapes=False)
    return summary


def encode_core(
    params: ModelParams, obs: np.ndarray, with_tapes: bool
) -> tuple[EncoderSummary, EncoderTapes | None]:
    """Encoder forward over (M, 6) or batched (B, M, 6) observations."""
    obs = np.asarray(obs, dtype=np.float64)
    batch = obs.shape[0] if obs.ndim == 3 else None
    steps = obs.shape[-2]
    cdim = params.config.cell_dim
    states = [LstmState.zeros(cdim, batch) for _ in params.enc_lstm]
    tapes = EncoderTapes(fc=[], lstm=[]) if with_tapes else None
    for t in range(steps):
        u = normalize_features(params, obs[..., t, :])
        fc_tapes = []
        for fc in params.enc_fc:
            u, tape = nn.dense_forward_cached(fc, u, "relu")
            fc_tapes.append(tape)
        lstm_tapes = []
        for k, cell in enumerate(params.enc_lstm):
            states[k], tape = nn.lstm_forward(cell, u, states[k])
            lstm_tapes.append(tape)
            u = states[k].h
        if with_tapes:
            tapes.fc.append(fc_tapes)
            tapes.lstm.append(lstm_tapes)
    return EncoderSummary(states=states), tapes


# ---------------------------------------------------------------------------
# decoder
# ---------------------------------------------------------------------------


@dataclass
class DecodeTapes:
    lstm: list[nn.LstmTape]
    fc: list[nn.DenseTape]
    tokens: np.ndarray | None  # embedded token ids, None for the start step


def decoder_initial_state(params: ModelParams, summary: EncoderSummary) -> list[LstmState]:
    """Decoder LSTM states seeded from the encoder: cell states always, hidden
    outputs copied or zeroed per config."""
    init = []
    for st in summary.states:
        h = st.h.copy() if params.config.copy_hidden_state else np.zeros_like(st.h)
        init.append(LstmState(c=st.c.copy(), h=h))
    return init


def token_embed_columns(tokens: np.ndarray, config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Column indices into the two embedding matrices for flat class ids;
    the out-of-map class selects the extra final column of each."""
    q = np.asarray(tokens)
    if np.any((q < 1) | (q > config.num_classes)):
        raise ValueError("token outside 1..num_classes")
    oom = q == config.out_of_map_class
    wc = np.where(oom, config.q_w, (q - 1) // config.q_l)
    lc = np.where(oom, config.q_l, (q - 1) % config.q_l)
    return wc, lc


def embed_tokens(params: ModelParams, tokens: np.ndarray) -> np.ndarray:
    """Decoder input vectors: per token, concat of one column from each
    embedding matrix. tokens is a scalar or (B,) of flat class ids."""
    wc, lc = token_embed_columns(tokens, params.config)
    if np.ndim(tokens) == 0:
        return np.concatenate([params.embed_w[:, wc], params.embed_l[:, lc]])
    return np.concatenate([params.embed_w[:, wc].T, params.embed_l[:, lc].T], axis=1)


def start_input(params: ModelParams, batch: int | None = None) -> np.ndarray:
    """The dummy decode-start input: a zero vector in place of an embedding."""
    shape = (params.config.cell_dim,) if batch is None else (batch, params.config.cell_dim)
    return np.zeros(shape)


def decode_core(
    params: ModelParams, state: list[LstmState], u: np.ndarray, with_tapes: bool
) -> tuple[np.ndarray, list[LstmState], DecodeTapes | None]:
    """One decoder step from an already-embedded input; returns logits."""
    new_state = list(state)
    lstm_tapes = []
    for k, cell in enumerate(params.dec_lstm):
        new_state[k], tape = nn.lstm_forward(cell, u, new_state[k])
        lstm_tapes.append(tape)
        u = new_state[k].h
    fc_tapes = []
    last = len(params.dec_fc) - 1
    for k, fc in enumerate(params.dec_fc):
        u, tape = nn.dense_forward_cached(fc, u, "none" if k == last else "relu")
        fc_tapes.append(tape)
    if not np.all(np.isfinite(u)):
        raise FloatingPointError("non-finite decoder logits")
    tapes = DecodeTapes(lstm=lstm_tapes, fc=fc_tapes, tokens=None) if with_tapes else None
    return u, new_state, tapes


def decode_step(
    params: ModelParams, state: list[LstmState], prev: int | None
) -> tuple[np.ndarray, list[LstmState]]:
    """One public decode step: probability map over all classes and the
    advanced decoder state. prev is the previous flat class id, or None for
    the decode-start token."""
    u = start_input(params) if prev is None else embed_tokens(params, np.asarray(prev))
    logits, new_state, _ = decode_core(params, state, u, with_tapes=False)
    return nn.softmax(logits), new_state


@dataclass
class BeamHypothesis:
    """A (partial) predicted class sequence with its cumulative natural-log
    probability and the decoder state ready to consume its last token."""

    sequence: list[int]
    log_prob: float
    state: list[LstmState] = field(repr=False)


@dataclass
class TrajectoryPrediction:
    """K complete hypotheses for one vehicle, sorted by descending log_prob
    (ties: lower class id, then lower parent hypothesis index)."""

    hypotheses: list[BeamHypothesis]
    # per decode step, the probability maps the surviving hypotheses emitted
    # (populated on request; one row per hypothesis alive at that step)
    probability_maps: list[np.ndarray] | None = None


def greedy_decode(params: ModelParams, summary: EncoderSummary, horizon: int | None = None) -> BeamHypothesis:
    """Pick the argmax class at every step and feed it back."""
    steps = params.config.horizon if horizon is None else horizon
    state = decoder_initial_state(params, summary)
    seq: list[int] = []
    log_prob = 0.0
    prev: int | None = None
    for _ in range(steps):
        u = start_input(params) if prev is None else embed_tokens(params, np.asarray(prev))
        logits, state, _ = decode_core(params, state, u, with_tapes=False)
        lp = nn.log_softmax(logits)
        q = int(np.argmax(lp)) + 1  # first max <=> lowest class id on ties
        log_prob += float(lp[q - 1])
        seq.append(q)
        prev = q
    return BeamHypothesis(sequence=seq, log_prob=log_prob, state=state)


def beam_search_decode(
    params: ModelParams,
    summary: EncoderSummary,
    beam_width: int | None = None,
    horizon: int | None = None,
    collect_probability_maps: bool = False,
) -> TrajectoryPrediction:
    """Keep the beam_width most probable hypotheses at every decode step.

    Step 1 expands the start token once; every later step scores all
    (hypothesis, class) extensions by cumulative log probability and keeps
    the top beam_width, each carrying its parent's advanced decoder state.
    """
    k = params.config.beam_width if beam_width is None else beam_width
    steps = params.config.horizon if horizon is None else horizon
    if k < 1 or steps < 1:
        raise ValueError("beam width and horizon must be >= 1")
    num_classes = params.config.num_classes

    state0 = decoder_initial_state(params, summary)
    logits, state_after_start, _ = decode_core(params, state0, start_input(params), False)
    lp0 = nn.log_softmax(logits)
    maps: list[np.ndarray] | None = [np.exp(lp0)[None, :]] if collect_probability_maps else None

    take = min(k, num_classes)
    order = np.lexsort((np.arange(num_classes), -lp0))[:take]
    beam = [
        BeamHypothesis(sequence=[int(q) + 1], log_prob=float(lp0[q]), state=state_after_start)
        for q in order
    ]

    for _ in range(1, steps):
        step_lps = []
        next_states = []
        for hyp in beam:
            u = embed_tokens(params, np.asarray(hyp.sequence[-1]))
            logits, new_state, _ = decode_core(params, hyp.state, u, False)
            step_lps.append(nn.log_softmax(logits))
            next_states.append(new_state)
        if maps is not None:
            maps.append(np.exp(np.stack(step_lps)))
        scores = np.array([h.log_prob for h in beam])[:, None] + np.stack(step_lps)
        flat = scores.ravel()
        classes = np.tile(np.arange(num_classes), len(beam))
        parents = np.repeat(np.arange(len(beam)), num_classes)
        take = min(k, flat.size)
        # primary: score desc; ties: class id asc, then parent index asc
        order = np.lexsort((parents, classes, -flat))[:take]
        beam = [
            BeamHypothesis(
                sequence=beam[p].sequence + [int(q) + 1],
                log_prob=float(flat[idx]),
                state=next_states[p],
            )
            for idx, p, q in zip(order, parents[order], classes[order])
        ]
    return TrajectoryPrediction(hypotheses=beam, probability_maps=maps)


def predict_scene(params: ModelParams, scenes, beam_width: int | None = None, horizon: int | None = None) -> list[TrajectoryPrediction]:
    """Encode + beam-decode each vehicle's observation window independently
    with the shared parameters; output order matches input order."""
    if len(scenes) < 1:
        raise ValueError("predict_scene needs at least one vehicle")
    out = []
    for n, obs in enumerate(scenes):
        try:
            summary = encode(params, obs)
            out.append(beam_search_decode(params, summary, beam_width, horizon))
        except Exception as exc:
            raise type(exc)(f"vehicle {n}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = "GRIDCAST-CHECKPOINT"
CHECKPOINT_VERSION = 1
_BLOB_SEPARATOR = b"\n#BLOBS\n"


class CheckpointError(RuntimeError):
    """Checkpoint file rejected; the message carries the diagnosis."""


def save_checkpoint(params: ModelParams, path: str) -> None:
    """Text manifest (version, config, tensor order/shapes) + little-endian
    float64 blobs in manifest order. Written atomically (temp + rename)."""
    items = params.checkpoint_items()
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "tensors": [{"name": name, "shape": list(a.shape)} for name, a in items],
    }
    header = f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}\n" + json.dumps(manifest)
    payload = header.encode("utf-8") + _BLOB_SEPARATOR
    blobs = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in items)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload + blobs)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> ModelParams:
    with open(path, "rb") as f:
        raw = f.read()
    sep = raw.find(_BLOB_SEPARATOR)
    if sep < 0:
        raise CheckpointError(f"{path}: no blob separator; truncated or not a checkpoint")
    try:
        header = raw[:sep].decode("utf-8")
        first_line, manifest_json = header.split("\n", 1)
        manifest = json.loads(manifest_json)
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"{path}: corrupted manifest ({exc})") from exc
    if not first_line.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: bad magic {first_line!r}")
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {CHECKPOINT_VERSION}")
    try:
        config = ModelConfig(**manifest["config"])
        tensors = manifest["tensors"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid manifest contents ({exc})") from exc

    params = init_model_params(config, seed=0)
    expected = params.checkpoint_items()
    if [t["name"] for t in tensors] != [name for name, _ in expected]:
        raise CheckpointError(f"{path}: tensor ordering does not match this architecture")
    blob = raw[sep + len(_BLOB_SEPARATOR) :]
    offset = 0
    for spec, (name, dst) in zip(tensors, expected):
        shape = tuple(spec["shape"])
        if shape != dst.shape:
            raise CheckpointError(f"{path}: tensor {name} shape {shape}, expected {dst.shape}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        chunk = blob[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated blob for tensor {name}")
        dst[...] = np.frombuffer(chunk, dtype="<f8").reshape(shape)
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes after last tensor")
    return params
