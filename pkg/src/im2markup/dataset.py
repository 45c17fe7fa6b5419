"""Manifests, vocabulary, corpus filtering and length-bucketed batching."""

import json
import logging
import math
import os
from collections import Counter
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ContractError

log = logging.getLogger(__name__)

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
PAD_ID, BOS_ID, EOS_ID = 0, 1, 2
SPECIALS = (PAD, BOS, EOS)


class Vocab:
    """Bidirectional token/id map; ids 0, 1, 2 are <pad>, <bos>, <eos>."""

    def __init__(self, tokens):
        tokens = [t for t in tokens if t not in SPECIALS]
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.itos = list(SPECIALS) + list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    @property
    def size(self):
        return len(self.itos)

    @property
    def K(self):
        """Number of non-pad entries (the softmax support)."""
        return len(self.itos) - 1

    @property
    def tokens(self):
        return self.itos[len(SPECIALS):]

    def encode(self, tokens):
        if isinstance(tokens, str):
            tokens = tokens.split()
        try:
            return [self.stoi[t] for t in tokens]
        except KeyError as exc:
            raise ContractError(f"token {exc.args[0]!r} is not in the vocabulary") from None

    def encode_target(self, token_string):
        """Token string -> target ids terminated by <eos>."""
        return self.encode(token_string) + [EOS_ID]

    def decode(self, ids):
        return [self.itos[int(i)] for i in ids]

    def to_text(self, ids):
        """Ids -> space-joined markup, stopping at <eos> and dropping <bos>/<pad>."""
        out = []
        for i in ids:
            i = int(i)
            if i == EOS_ID:
                break
            if i in (PAD_ID, BOS_ID):
                continue
            out.append(self.itos[i])
        return " ".join(out)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.itos) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            itos = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        if tuple(itos[:3]) != SPECIALS:
            raise ValueError(f"{path}: first three entries must be {SPECIALS}")
        return cls(itos[3:])


@dataclass
class Record:
    image: str
    tokens: str
    split: str = "train"
    width: int = 0
    height: int = 0

    @property
    def length(self):
        """Target length tau, counting the terminating <eos>."""
        return len(self.tokens.split()) + 1


def read_manifest(path):
    """Read a lines-of-JSON manifest; image paths resolve against its directory."""
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            try:
                image, tokens = obj["image"], obj["tokens"]
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: missing field {exc.args[0]}") from None
            if not tokens.strip():
                raise ValueError(f"{path}:{lineno}: empty token string")
            if not os.path.isabs(image):
                image = os.path.join(base, image)
            records.append(Record(image, tokens, obj.get("split", "train"),
                                  obj.get("width", 0), obj.get("height", 0)))
    return records


def write_manifest(path, records):
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            image = os.path.relpath(os.path.abspath(r.image), base)
            obj = {"image": image, "tokens": r.tokens, "split": r.split}
            if r.width and r.height:
                obj["width"], obj["height"] = r.width, r.height
            fh.write(json.dumps(obj) + "\n")


def load_image(path):
    """8-bit grayscale image (PNG or PGM) as a uint8 array, white = 255."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8).copy()


def save_image(path, array):
    Image.fromarray(np.asarray(array, dtype=np.uint8), mode="L").save(path)


def image_size(record):
    """(width, height) of a record's image, reading only the header if needed."""
    if record.width and record.height:
        return record.width, record.height
    with Image.open(record.image) as im:
        return im.size


def build_vocab(records, freq_threshold=1):
    """Vocabulary of tokens occurring at least ``freq_threshold`` times."""
    if not records:
        raise ContractError("build_vocab needs a non-empty manifest")
    counts = Counter(tok for r in records for tok in r.tokens.split())
    kept = sorted(t for t, c in counts.items() if c >= freq_threshold and t not in SPECIALS)
    if not kept:
        raise ValueError(f"no token reaches frequency threshold {freq_threshold}")
    return Vocab(kept)


def filter_dataset(records, vocab, max_w=1086, max_h=126, max_len=150):
    """Drop duplicates, out-of-vocabulary formulas, oversize images, long formulas.

    Returns ``(kept, report)`` where ``report`` counts removals per rule.
    """
    if max_w <= 0 or max_h <= 0 or max_len <= 0:
        raise ContractError("filter limits must be positive")
    report = {"input": len(records), "duplicates": 0, "out_of_vocab": 0,
              "too_large": 0, "too_long": 0}
    seen = set()
    kept = []
    for r in records:
        if r.tokens in seen:
            report["duplicates"] += 1
            continue
        seen.add(r.tokens)
        toks = r.tokens.split()
        if any(t not in vocab for t in toks):
            report["out_of_vocab"] += 1
            continue
        w, h = image_size(r)
        if w > max_w or h > max_h:
            report["too_large"] += 1
            continue
        if len(toks) > max_len:
            report["too_long"] += 1
            continue
        kept.append(r)
    report["kept"] = len(kept)
    if not kept:
        log.warning("filter_dataset removed every record: %s", report)
    return kept, report


def split_validation(records, fraction, rng):
    """Hold out ``fraction`` of the training records as a validation set."""
    n_valid = int(round(len(records) * fraction))
    order = rng.permutation(len(records))
    valid_idx = set(order[:n_valid].tolist())
    train = [r for i, r in enumerate(records) if i not in valid_idx]
    valid = [r for i, r in enumerate(records) if i in valid_idx]
    return train, valid


def bucket_key(length, width=8):
    return math.ceil(length / width)


def make_buckets(lengths, batch_size, rng, bucket_width=8):
    """Group sample indices into same-bucket batches in a seeded random order.

    A bucket holds the samples whose target lengths share ``ceil(tau / width)``.
    """
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    groups = {}
    for i, n in enumerate(lengths):
        groups.setdefault(bucket_key(n, bucket_width), []).append(i)
    batches = []
    for key in sorted(groups):
        idx = np.asarray(groups[key])
        idx = idx[rng.permutation(idx.size)]
        batches.extend(idx[s:s + batch_size] for s in range(0, idx.size, batch_size))
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


@dataclass
class Batch:
    images: np.ndarray
    targets: np.ndarray
    lengths: np.ndarray
    index: np.ndarray


def collate(images, targets, index):
    """Stack pre-standardized canvases and pad targets with <pad> after <eos>."""
    seqs = [targets[i] for i in index]
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), lengths.max()), PAD_ID, dtype=np.int64)
    for row, s in enumerate(seqs):
        out[row, :len(s)] = s
    return Batch(images=images[index], targets=out, lengths=lengths, index=np.asarray(index))
