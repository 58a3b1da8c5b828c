"""Model assembly: configuration, parameter registry, dialog forward pass,
ablation variants, and checkpoint files.

The classifier consumes one dialog at a time. Each utterance becomes a text
vector (token-embedding mean or hierarchical attention) and an audio vector
(frame convolution or hierarchical attention over frames); per-modality
LSTMs walk the dialog, optional windowed dialog attention adds context, an
optional gate filters each modality by the cross-modal view, and per-task
sigmoid heads score every utterance.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .context_attention import DialogAttentionTrace, contextualize_dialog
from .data import MFCC_COLUMNS, Dialog, EmbeddingTable, embed_utterance
from .encoders import (
    GATE_NAMES,
    AcousticEncoderParams,
    LstmParams,
    acoustic_encode,
    glorot_uniform,
    init_acoustic,
    init_lstm,
    lstm_encode_dialog,
)
from .fusion import filter_modality, fuse_representation, init_filter_gate
from .hier_attention import LevelTrace, hier_attend, init_projection
from .tensor import Tensor, add, concat, dropout, matmul, relu, sigmoid

MODALITIES = ("audio", "text", "both")
TEXT_REPRS = ("mean", "hier")
AUDIO_REPRS = ("conv", "hier")
TASK_MODES = ("sarcasm", "humor", "joint")
TASKS = ("sarcasm", "humor")

CHECKPOINT_MAGIC = b"MSHC1\n"
# reserved checkpoint header key carrying the model configuration
META_KEY = "__meta__"


class ConfigError(ValueError):
    """Invalid model configuration or unknown variant name."""


class ModalityError(ValueError):
    """Input data lacks a modality the configuration requires."""


class CheckpointError(ValueError):
    """Unreadable, mislabeled, or truncated checkpoint file."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture switches and dimensions; validated on construction."""

    modality: str = "both"
    text_repr: str = "hier"
    audio_repr: str = "conv"
    use_context_attn: bool = True
    use_filter: bool = True
    task_mode: str = "joint"
    d_text_in: int = 300
    d_hidden: int = 128
    d_audio: int = 128
    attn_width_tokens: int = 3
    attn_width_dialog: int = 5
    dropout: float = 0.4
    head_hidden: int = 128

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ConfigError(f"modality must be one of {MODALITIES}, "
                              f"got {self.modality!r}")
        if self.text_repr not in TEXT_REPRS:
            raise ConfigError(f"text_repr must be one of {TEXT_REPRS}, "
                              f"got {self.text_repr!r}")
        if self.audio_repr not in AUDIO_REPRS:
            raise ConfigError(f"audio_repr must be one of {AUDIO_REPRS}, "
                              f"got {self.audio_repr!r}")
        if self.task_mode not in TASK_MODES:
            raise ConfigError(f"task_mode must be one of {TASK_MODES}, "
                              f"got {self.task_mode!r}")
        if self.use_filter and not (self.use_context_attn
                                    and self.modality == "both"):
            raise ConfigError("use_filter requires use_context_attn "
                              "and modality='both'")
        for name in ("d_text_in", "d_hidden", "d_audio", "head_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, "
                                  f"got {getattr(self, name)}")
        if self.attn_width_tokens < 2:
            raise ConfigError(f"attn_width_tokens must be at least 2, "
                              f"got {self.attn_width_tokens}")
        if self.attn_width_dialog < 1:
            raise ConfigError(f"attn_width_dialog must be at least 1, "
                              f"got {self.attn_width_dialog}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.uses_audio and self.audio_repr == "hier" \
                and self.d_audio != MFCC_COLUMNS:
            # hierarchical frame attention preserves the frame width
            raise ConfigError(f"audio_repr='hier' fixes d_audio to "
                              f"{MFCC_COLUMNS}, got {self.d_audio}")

    @property
    def uses_text(self) -> bool:
        return self.modality in ("text", "both")

    @property
    def uses_audio(self) -> bool:
        return self.modality in ("audio", "both")

    @property
    def tasks(self) -> tuple[str, ...]:
        if self.task_mode == "joint":
            return TASKS
        return (self.task_mode,)

    @property
    def trunk_dim(self) -> int:
        """Width of the vector the task heads consume, per utterance."""
        d = self.d_hidden
        if self.modality == "both":
            # attended: audio 2d + text 2d + cross 3d (filtering keeps widths)
            return 7 * d if self.use_context_attn else 2 * d
        return 2 * d if self.use_context_attn else d


class ParameterSet:
    """Insertion-ordered registry of uniquely named trainable tensors."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def register(self, name: str, tensor: Tensor) -> None:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        if name == META_KEY:
            raise ValueError(f"{META_KEY!r} is reserved")
        self._tensors[name] = tensor

    def register_all(self, named: dict[str, Tensor]) -> None:
        for name, tensor in named.items():
            self.register(name, tensor)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def as_dict(self) -> dict[str, Tensor]:
        return dict(self._tensors)

    @property
    def total_scalars(self) -> int:
        return sum(t.size for t in self._tensors.values())


def _head_param_count(config: ModelConfig) -> int:
    hh = config.head_hidden
    return hh * config.trunk_dim + hh + hh + 1


def init_parameters(config: ModelConfig,
                    rng: np.random.Generator) -> ParameterSet:
    """Fresh parameters for a configuration; draw order is fixed."""
    params = ParameterSet()
    d = config.d_hidden
    if config.uses_text:
        if config.text_repr == "hier":
            proj_w, proj_b = init_projection(config.d_text_in, rng)
            params.register("text_attn.proj_w", proj_w)
            params.register("text_attn.proj_b", proj_b)
        params.register_all(
            init_lstm(config.d_text_in, d, rng).named("lstm_text"))
    if config.uses_audio:
        if config.audio_repr == "conv":
            params.register_all(
                init_acoustic(config.d_audio, MFCC_COLUMNS, rng).named("acoustic"))
        else:
            proj_w, proj_b = init_projection(MFCC_COLUMNS, rng)
            params.register("audio_attn.proj_w", proj_w)
            params.register("audio_attn.proj_b", proj_b)
        params.register_all(
            init_lstm(config.d_audio, d, rng).named("lstm_audio"))
    if config.use_filter:
        for branch in ("filter_audio", "filter_text"):
            gate_w, gate_b = init_filter_gate(2 * d, 3 * d, rng)
            params.register(f"{branch}.gate_w", gate_w)
            params.register(f"{branch}.gate_b", gate_b)
    trunk = config.trunk_dim
    hh = config.head_hidden
    for task in config.tasks:
        params.register(
            f"head_{task}.w1",
            Tensor(glorot_uniform(rng, trunk, hh, (hh, trunk)),
                   requires_grad=True))
        params.register(f"head_{task}.b1",
                        Tensor(np.zeros(hh), requires_grad=True))
        params.register(
            f"head_{task}.w2",
            Tensor(glorot_uniform(rng, hh, 1, (1, hh)), requires_grad=True))
        params.register(f"head_{task}.b2",
                        Tensor(np.zeros(1), requires_grad=True))
    return params


def parameter_count(config: ModelConfig) -> int:
    """Exact trainable-scalar total for a configuration."""
    return init_parameters(config, np.random.default_rng(0)).total_scalars


def _lstm_view(params: ParameterSet, prefix: str) -> LstmParams:
    return LstmParams(
        w={g: params[f"{prefix}.w_{g}"] for g in GATE_NAMES},
        u={g: params[f"{prefix}.u_{g}"] for g in GATE_NAMES},
        b={g: params[f"{prefix}.b_{g}"] for g in GATE_NAMES},
    )


@dataclass
class DialogPrediction:
    """Per-utterance probabilities per task, plus attention traces.

    ``probabilities[task][k]`` is a shape-(1,) tensor for utterance k, kept
    as a tensor so training can backpropagate through it. The trace fields
    are None for configurations that skip the corresponding module.
    """

    probabilities: dict[str, list[Tensor]]
    dialog_trace: DialogAttentionTrace | None
    text_traces: list[LevelTrace] | None
    audio_traces: list[LevelTrace] | None


def forward_dialog(config: ModelConfig, params: ParameterSet, dialog: Dialog,
                   embeddings: EmbeddingTable | None = None,
                   training: bool = False,
                   rng: np.random.Generator | None = None) -> DialogPrediction:
    """Score every utterance of one dialog under every active task.

    Eval mode (training=False) is deterministic; training mode applies
    dropout to utterance representations and head hidden layers and needs
    an rng when the dropout rate is nonzero.
    """
    if config.uses_text and embeddings is None:
        raise ValueError("text modality requires an embedding table")
    if training and config.dropout > 0.0 and rng is None:
        raise ValueError("training-mode forward needs an rng for dropout")
    if config.uses_audio:
        for utt in dialog.utterances:
            if utt.acoustic is None:
                raise ModalityError(
                    f"dialog {dialog.dialog_id!r}, utterance {utt.uid!r}: "
                    f"acoustic frames required by modality="
                    f"{config.modality!r}")

    rate = config.dropout
    text_traces = [] if config.uses_text and config.text_repr == "hier" else None
    audio_traces = [] if config.uses_audio and config.audio_repr == "hier" else None
    reps_text: list[Tensor] | None = [] if config.uses_text else None
    reps_audio: list[Tensor] | None = [] if config.uses_audio else None

    for utt in dialog.utterances:
        if config.uses_text:
            matrix = embed_utterance(utt.tokens, embeddings).matrix
            if config.text_repr == "mean":
                rep = Tensor(matrix.mean(axis=0))
            else:
                rep, trace = hier_attend(
                    [Tensor(row) for row in matrix],
                    params["text_attn.proj_w"], params["text_attn.proj_b"],
                    config.attn_width_tokens)
                text_traces.append(trace)
            reps_text.append(dropout(rep, rate, training, rng))
        if config.uses_audio:
            if config.audio_repr == "conv":
                encoder = AcousticEncoderParams(
                    kernels=params["acoustic.kernels"],
                    bias=params["acoustic.bias"])
                rep = acoustic_encode(encoder, utt.acoustic)
            else:
                rep, trace = hier_attend(
                    [Tensor(row) for row in utt.acoustic],
                    params["audio_attn.proj_w"], params["audio_attn.proj_b"],
                    config.attn_width_tokens)
                audio_traces.append(trace)
            reps_audio.append(dropout(rep, rate, training, rng))

    h_text = (lstm_encode_dialog(_lstm_view(params, "lstm_text"), reps_text)
              if config.uses_text else None)
    h_audio = (lstm_encode_dialog(_lstm_view(params, "lstm_audio"), reps_audio)
               if config.uses_audio else None)

    n = len(dialog.utterances)
    dialog_trace = None
    if config.use_context_attn:
        out_audio, out_text, out_cross, dialog_trace = contextualize_dialog(
            h_audio, h_text, config.attn_width_dialog)
        if config.modality == "both":
            if config.use_filter:
                trunks = [
                    fuse_representation(
                        filter_modality(out_audio[k], out_cross[k],
                                        params["filter_audio.gate_w"],
                                        params["filter_audio.gate_b"]),
                        filter_modality(out_text[k], out_cross[k],
                                        params["filter_text.gate_w"],
                                        params["filter_text.gate_b"]),
                        out_cross[k])
                    for k in range(n)
                ]
            else:
                trunks = [
                    concat([out_audio[k], out_text[k], out_cross[k]], axis=0)
                    for k in range(n)
                ]
        else:
            trunks = out_audio if out_audio is not None else out_text
    elif config.modality == "both":
        trunks = [concat([h_audio[k], h_text[k]], axis=0) for k in range(n)]
    else:
        trunks = h_audio if h_audio is not None else h_text

    probabilities: dict[str, list[Tensor]] = {}
    for task in config.tasks:
        w1 = params[f"head_{task}.w1"]
        b1 = params[f"head_{task}.b1"]
        w2 = params[f"head_{task}.w2"]
        b2 = params[f"head_{task}.b2"]
        scores = []
        for trunk in trunks:
            hidden = relu(add(matmul(w1, trunk), b1))
            hidden = dropout(hidden, rate, training, rng)
            scores.append(sigmoid(add(matmul(w2, hidden), b2)))
        probabilities[task] = scores
    return DialogPrediction(probabilities=probabilities,
                            dialog_trace=dialog_trace,
                            text_traces=text_traces,
                            audio_traces=audio_traces)


# Ablation grid: audio-only, text-only, and bimodal rows, plus the "full"
# alias for the complete model. Lookup ignores spaces around the + signs.
_VARIANT_ROWS: dict[str, dict] = {
    "LSTM(A)": dict(modality="audio", audio_repr="conv",
                    use_context_attn=False, use_filter=False),
    "LSTM(H-ATN^A)": dict(modality="audio", audio_repr="hier",
                          use_context_attn=False, use_filter=False),
    "LSTM(A)+C-ATN^D": dict(modality="audio", audio_repr="conv",
                            use_context_attn=True, use_filter=False),
    "LSTM(H-ATN^A)+C-ATN^D": dict(modality="audio", audio_repr="hier",
                                  use_context_attn=True, use_filter=False),
    "LSTM(T_avg)": dict(modality="text", text_repr="mean",
                        use_context_attn=False, use_filter=False),
    "LSTM(H-ATN^U)": dict(modality="text", text_repr="hier",
                          use_context_attn=False, use_filter=False),
    "LSTM(H-ATN^U)+C-ATN^D": dict(modality="text", text_repr="hier",
                                  use_context_attn=True, use_filter=False),
    "LSTM(A)+LSTM(T_avg)": dict(modality="both", text_repr="mean",
                                audio_repr="conv", use_context_attn=False,
                                use_filter=False),
    "LSTM(A)+LSTM(H-ATN^U)": dict(modality="both", text_repr="hier",
                                  audio_repr="conv", use_context_attn=False,
                                  use_filter=False),
    "LSTM(A)+LSTM(H-ATN^U)+C-ATN^D": dict(modality="both", text_repr="hier",
                                          audio_repr="conv",
                                          use_context_attn=True,
                                          use_filter=False),
    "LSTM(A)+LSTM(H-ATN^U)+C-ATN^D+Filter": dict(modality="both",
                                                 text_repr="hier",
                                                 audio_repr="conv",
                                                 use_context_attn=True,
                                                 use_filter=True),
}

FULL_VARIANT = "LSTM(A)+LSTM(H-ATN^U)+C-ATN^D+Filter"


def variant_names() -> list[str]:
    return list(_VARIANT_ROWS)


def build_variant(row_name: str, task_mode: str = "joint",
                  **overrides) -> ModelConfig:
    """Configuration for a named ablation row; "full" is the complete model.

    Extra keyword arguments override dimension fields (not the switches the
    row itself pins down).
    """
    key = row_name.replace(" ", "")
    if key.lower() == "full":
        key = FULL_VARIANT
    row = _VARIANT_ROWS.get(key)
    if row is None:
        known = ", ".join(list(_VARIANT_ROWS) + ["full"])
        raise ConfigError(f"unknown variant {row_name!r}; known: {known}")
    clash = set(overrides) & set(row)
    if clash:
        raise ConfigError(f"variant {key!r} already fixes {sorted(clash)}")
    return ModelConfig(task_mode=task_mode, **row, **overrides)


def variant_label(config: ModelConfig) -> str:
    """The ablation-row name describing a configuration's switches."""
    parts = []
    if config.uses_audio:
        parts.append("LSTM(A)" if config.audio_repr == "conv"
                     else "LSTM(H-ATN^A)")
    if config.uses_text:
        parts.append("LSTM(T_avg)" if config.text_repr == "mean"
                     else "LSTM(H-ATN^U)")
    if config.use_context_attn:
        parts.append("C-ATN^D")
    if config.use_filter:
        parts.append("Filter")
    return "+".join(parts)


def save_checkpoint(params: ParameterSet, path, config: ModelConfig) -> None:
    """Write all parameters as little-endian f32 with a JSON name header."""
    header: dict[str, dict] = {}
    blob = bytearray()
    for name, tensor in params.items():
        header[name] = {"shape": list(tensor.shape), "dtype": "f32",
                        "offset": len(blob)}
        blob += np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
    header[META_KEY] = asdict(config)
    head_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(head_bytes).to_bytes(8, "little"))
        fh.write(head_bytes)
        fh.write(bytes(blob))


def load_checkpoint(path) -> tuple[ParameterSet, ModelConfig]:
    """Read a checkpoint; bit-exact inverse of save at f32 precision."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(
            f"{path}: bad magic {raw[:len(CHECKPOINT_MAGIC)]!r}, "
            f"expected {CHECKPOINT_MAGIC!r}")
    cursor = len(CHECKPOINT_MAGIC)
    if len(raw) < cursor + 8:
        raise CheckpointError(f"{path}: truncated header length")
    head_len = int.from_bytes(raw[cursor:cursor + 8], "little")
    cursor += 8
    if len(raw) < cursor + head_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[cursor:cursor + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    blob = raw[cursor + head_len:]
    meta = header.pop(META_KEY, None)
    if meta is None:
        raise CheckpointError(f"{path}: header missing {META_KEY!r}")
    known_fields = {f.name for f in fields(ModelConfig)}
    unknown = set(meta) - known_fields
    if unknown:
        raise CheckpointError(f"{path}: unknown config fields {sorted(unknown)}")
    try:
        config = ModelConfig(**meta)
    except ConfigError as exc:
        raise CheckpointError(f"{path}: bad stored config: {exc}") from None
    params = ParameterSet()
    for name, entry in header.items():
        shape = tuple(int(s) for s in entry["shape"])
        if entry.get("dtype") != "f32":
            raise CheckpointError(
                f"{path}: parameter {name!r} has unsupported dtype "
                f"{entry.get('dtype')!r}")
        count = int(np.prod(shape)) if shape else 1
        offset = int(entry["offset"])
        end = offset + 4 * count
        if offset < 0 or end > len(blob):
            raise CheckpointError(f"{path}: truncated blob at parameter "
                                  f"{name!r}")
        values = np.frombuffer(blob, dtype="<f4", count=count,
                               offset=offset).reshape(shape)
        params.register(name, Tensor(values, requires_grad=True))
    return params, config
