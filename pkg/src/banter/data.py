"""Dialog corpus loading, word-vector tables, and corpus statistics.

Corpora are UTF-8 JSON-lines: one dialog object per line, each holding an
ordered utterance list. Acoustic frames ride inline as nested arrays or in a
sidecar CSV referenced by relative path. Word vectors use the plain-text
format with a "<count> <dim>" header line.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Fixed acoustic feature width: every frame carries this many coefficients.
MFCC_COLUMNS = 128


class CorpusError(ValueError):
    """Malformed corpus file or invariant violation, with location info."""


@dataclass
class UtteranceRecord:
    """One speaker turn: tokens, optional F x 128 frame matrix, two labels."""

    uid: str
    speaker: str
    tokens: list[str]
    acoustic: np.ndarray | None
    sarcasm: int
    humor: int


@dataclass
class Dialog:
    """An ordered conversation; the context boundary for all attention."""

    dialog_id: str
    utterances: list[UtteranceRecord]


@dataclass
class CorpusStats:
    dialogs: int
    utterances: int
    sarcastic: int
    humorous: int
    max_utterance_len: int
    avg_utterance_len: float
    vocabulary: int


class EmbeddingTable:
    """Token to vector map with a fixed dimension and zero-vector OOV policy."""

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ValueError(f"embedding dimension must be positive, got {dimension}")
        self.dimension = dimension
        self._vectors: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, token: str) -> bool:
        return token in self._vectors

    def add(self, token: str, vector: np.ndarray) -> None:
        vec = np.asarray(vector, dtype=np.float64)
        if vec.shape != (self.dimension,):
            raise ValueError(
                f"vector for {token!r} has shape {vec.shape}, "
                f"expected ({self.dimension},)")
        # duplicate tokens keep the first occurrence
        self._vectors.setdefault(token, vec)

    def lookup(self, token: str) -> np.ndarray:
        vec = self._vectors.get(token)
        if vec is None:
            return np.zeros(self.dimension)
        return vec


@dataclass
class EmbeddedUtterance:
    """Token embedding matrix plus how many rows fell back to zero."""

    matrix: np.ndarray
    oov_count: int

    @property
    def oov_rate(self) -> float:
        return self.oov_count / self.matrix.shape[0]


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise CorpusError(message)


def _parse_label(raw, field: str, where: str) -> int:
    _require(raw in (0, 1), f"{where}: {field} must be 0 or 1, got {raw!r}")
    return int(raw)


def _load_frames(raw_mfcc, mfcc_path, base_dir: Path, where: str) -> np.ndarray | None:
    if raw_mfcc is not None and mfcc_path is not None:
        raise CorpusError(f"{where}: both inline mfcc and mfcc_path given")
    if raw_mfcc is not None:
        try:
            frames = np.asarray(raw_mfcc, dtype=np.float64)
        except ValueError as exc:
            raise CorpusError(f"{where}: ragged or non-numeric mfcc ({exc})") from None
    elif mfcc_path is not None:
        sidecar = base_dir / mfcc_path
        if not sidecar.is_file():
            raise CorpusError(f"{where}: mfcc sidecar not found: {sidecar}")
        with open(sidecar, newline="", encoding="utf-8") as fh:
            try:
                rows = [[float(cell) for cell in row] for row in csv.reader(fh) if row]
            except ValueError as exc:
                raise CorpusError(f"{where}: bad value in {sidecar}: {exc}") from None
        _require(len(rows) > 0, f"{where}: empty mfcc sidecar {sidecar}")
        widths = {len(r) for r in rows}
        _require(len(widths) == 1,
                 f"{where}: ragged rows in {sidecar} (widths {sorted(widths)})")
        frames = np.asarray(rows, dtype=np.float64)
    else:
        return None
    _require(frames.ndim == 2 and frames.shape[1] == MFCC_COLUMNS,
             f"{where}: acoustic frames must be F x {MFCC_COLUMNS}, "
             f"got shape {frames.shape}")
    _require(frames.shape[0] >= 1, f"{where}: empty frame matrix")
    _require(bool(np.all(np.isfinite(frames))), f"{where}: non-finite frame values")
    return frames


def _parse_utterance(raw: dict, dialog_id: str, base_dir: Path) -> UtteranceRecord:
    _require(isinstance(raw, dict), f"dialog {dialog_id!r}: utterance is not an object")
    uid = raw.get("id")
    _require(isinstance(uid, str) and uid != "",
             f"dialog {dialog_id!r}: utterance missing string id")
    where = f"dialog {dialog_id!r}, utterance {uid!r}"

    tokens = raw.get("tokens")
    _require(isinstance(tokens, list) and len(tokens) > 0,
             f"{where}: tokens must be a non-empty list")
    _require(all(isinstance(t, str) for t in tokens),
             f"{where}: tokens must all be strings")

    speaker = raw.get("speaker", "")
    _require(isinstance(speaker, str), f"{where}: speaker must be a string")

    frames = _load_frames(raw.get("mfcc"), raw.get("mfcc_path"), base_dir, where)

    known = {"id", "speaker", "tokens", "sarcasm", "humor", "mfcc", "mfcc_path"}
    unknown = set(raw) - known
    _require(not unknown, f"{where}: unknown fields {sorted(unknown)}")

    return UtteranceRecord(
        uid=uid,
        speaker=speaker,
        tokens=list(tokens),
        acoustic=frames,
        sarcasm=_parse_label(raw.get("sarcasm"), "sarcasm", where),
        humor=_parse_label(raw.get("humor"), "humor", where),
    )


def load_corpus(path) -> list[Dialog]:
    """Read a JSON-lines dialog corpus, validating every invariant.

    Parse failures report the 1-based line number; validation failures name
    the offending dialog and utterance ids.
    """
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"corpus file not found: {path}")
    base_dir = path.parent
    dialogs: list[Dialog] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from None
            _require(isinstance(obj, dict), f"{path}:{lineno}: line is not an object")
            dialog_id = obj.get("dialog_id")
            _require(isinstance(dialog_id, str) and dialog_id != "",
                     f"{path}:{lineno}: missing string dialog_id")
            _require(dialog_id not in seen_ids,
                     f"{path}:{lineno}: duplicate dialog_id {dialog_id!r}")
            seen_ids.add(dialog_id)
            raw_utts = obj.get("utterances")
            _require(isinstance(raw_utts, list) and len(raw_utts) > 0,
                     f"dialog {dialog_id!r}: needs at least one utterance")
            utts = [_parse_utterance(u, dialog_id, base_dir) for u in raw_utts]
            dialogs.append(Dialog(dialog_id=dialog_id, utterances=utts))
    _require(len(dialogs) > 0, f"{path}: corpus is empty")
    return dialogs


def load_embeddings(path) -> EmbeddingTable:
    """Read a "<count> <dim>" headed text vector table.

    Duplicate tokens keep their first occurrence. Rows whose float count
    disagrees with the header are rejected naming the row.
    """
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"embedding file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise CorpusError(f"{path}:1: header must be '<count> <dim>'")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise CorpusError(f"{path}:1: non-integer header fields") from None
        if dim < 1:
            raise CorpusError(f"{path}:1: dimension must be positive, got {dim}")
        table = EmbeddingTable(dim)
        rows = 0
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(" ")
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise CorpusError(
                    f"{path}:{lineno}: token {token!r} has {len(values)} values, "
                    f"header declared {dim}")
            try:
                vec = np.array([float(v) for v in values])
            except ValueError:
                raise CorpusError(f"{path}:{lineno}: non-numeric value") from None
            table.add(token, vec)
            rows += 1
    if rows != count:
        raise CorpusError(
            f"{path}: header declared {count} vectors, file has {rows} rows")
    return table


def embed_utterance(tokens: list[str], table: EmbeddingTable) -> EmbeddedUtterance:
    """Stack per-token vectors into an N x d matrix; OOV rows are zero."""
    if len(tokens) == 0:
        raise ValueError("cannot embed an empty token list")
    matrix = np.zeros((len(tokens), table.dimension))
    oov = 0
    for k, token in enumerate(tokens):
        if token in table:
            matrix[k] = table.lookup(token)
        else:
            oov += 1
    return EmbeddedUtterance(matrix=matrix, oov_count=oov)


def corpus_stats(dialogs: list[Dialog]) -> CorpusStats:
    """Exact corpus counts: sizes, positive labels, lengths, vocabulary."""
    if len(dialogs) == 0:
        raise ValueError("corpus_stats needs a non-empty corpus")
    lengths = []
    sarcastic = humorous = 0
    vocab: set[str] = set()
    for dialog in dialogs:
        for utt in dialog.utterances:
            lengths.append(len(utt.tokens))
            sarcastic += utt.sarcasm
            humorous += utt.humor
            vocab.update(utt.tokens)
    return CorpusStats(
        dialogs=len(dialogs),
        utterances=len(lengths),
        sarcastic=sarcastic,
        humorous=humorous,
        max_utterance_len=max(lengths),
        avg_utterance_len=float(np.mean(lengths)),
        vocabulary=len(vocab),
    )


def split_train_val(dialogs: list[Dialog], fraction: float = 0.10,
                    seed: int = 0) -> tuple[list[Dialog], list[Dialog]]:
    """Deterministic dialog-level split; validation gets round(fraction * n).

    Utterances never cross the boundary: whole dialogs land on one side.
    Both splits keep the original corpus order.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    n = len(dialogs)
    n_val = int(round(fraction * n))
    if n_val < 1 or n_val >= n:
        raise CorpusError(
            f"corpus of {n} dialogs is too small for a {fraction:.2f} split")
    rng = np.random.default_rng(seed)
    chosen = set(rng.permutation(n)[:n_val].tolist())
    val = [d for k, d in enumerate(dialogs) if k in chosen]
    train = [d for k, d in enumerate(dialogs) if k not in chosen]
    return train, val
