"""Monolingual word embeddings: loading, normalization, and text-format IO.

The on-disk format is word2vec text: a "<count> <dim>" header line followed by
one "<word> <v1> ... <vd>" line per word, single-space separated, UTF-8.
File order is frequency order (rank 0 = most frequent).
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError

# Applied before every aligner unless overridden in config.
DEFAULT_NORMALIZE_SCHEME = ("unit", "center", "unit")


class EmbeddingMatrix:
    """A language's vocabulary plus its n x d embedding matrix.

    Immutable after construction: the vector array is marked read-only and
    instances are safe to share across worker threads.
    """

    def __init__(self, lang_id, vocab, vectors, dup_skipped=0):
        vectors = np.ascontiguousarray(vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise ValueError("vectors must be a 2-D array")
        vocab = list(vocab)
        if len(vocab) != vectors.shape[0]:
            raise ValueError(
                f"vocab size {len(vocab)} does not match row count {vectors.shape[0]}"
            )
        if len(set(vocab)) != len(vocab):
            raise ValueError("vocabulary contains duplicate words")
        if not np.isfinite(vectors).all():
            raise ValueError("embedding matrix contains non-finite entries")
        vectors.setflags(write=False)
        self.lang_id = lang_id
        self.vocab = vocab
        self.vectors = vectors
        self.dup_skipped = dup_skipped
        self._word_index = None

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.vocab)

    def __repr__(self):
        return f"EmbeddingMatrix({self.lang_id!r}, {len(self)} x {self.dim})"

    @property
    def word_index(self):
        """word -> row index, built lazily."""
        if self._word_index is None:
            self._word_index = {w: i for i, w in enumerate(self.vocab)}
        return self._word_index

    def top(self, n):
        """The first n rows (most frequent words) as a new EmbeddingMatrix."""
        if n >= len(self):
            return self
        return EmbeddingMatrix(
            self.lang_id, self.vocab[:n], self.vectors[:n], self.dup_skipped
        )


def load_embeddings(path, max_vocab, lang_id=None):
    """Read at most min(header count, max_vocab) words from a text embedding file.

    Duplicate words keep their first (most frequent) occurrence; later ones are
    skipped without consuming the max_vocab budget, and the number skipped is
    recorded on the result as ``dup_skipped``.
    """
    if max_vocab < 1:
        raise ValueError("max_vocab must be a positive integer")
    if lang_id is None:
        lang_id = str(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(f"{path}: malformed header {header!r}")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise FormatError(f"{path}: malformed header {header!r}") from None
        if count < 0 or dim < 1:
            raise FormatError(f"{path}: malformed header {header!r}")
        limit = min(count, max_vocab)
        vocab = []
        rows = []
        seen = set()
        dup_skipped = 0
        for lineno, line in enumerate(fh, start=2):
            if len(vocab) >= limit:
                break
            tokens = line.split()
            if not tokens:
                continue
            word = tokens[0]
            if len(tokens) - 1 != dim:
                raise FormatError(
                    f"{path}:{lineno}: expected {dim} values, got {len(tokens) - 1}"
                )
            try:
                vec = np.array(tokens[1:], dtype=np.float64)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: unparseable float") from None
            if not np.isfinite(vec).all():
                raise FormatError(f"{path}:{lineno}: non-finite value for {word!r}")
            if word in seen:
                dup_skipped += 1
                continue
            seen.add(word)
            vocab.append(word)
            rows.append(vec)
    if not vocab:
        raise FormatError(f"{path}: no embeddings loaded")
    return EmbeddingMatrix(lang_id, vocab, np.vstack(rows), dup_skipped)


def normalize(emb, scheme=DEFAULT_NORMALIZE_SCHEME):
    """Apply normalization steps in order; ``unit`` divides each row by its
    Euclidean norm, ``center`` subtracts the column mean."""
    vec = emb.vectors.copy()
    for step in scheme:
        if step == "unit":
            norms = np.linalg.norm(vec, axis=1)
            if (norms == 0.0).any():
                word = emb.vocab[int(np.argmax(norms == 0.0))]
                raise ValueError(f"zero-norm row for word {word!r}; cannot unit-normalize")
            vec /= norms[:, None]
        elif step == "center":
            vec -= vec.mean(axis=0)
        else:
            raise ValueError(f"unknown normalization step {step!r}")
    return EmbeddingMatrix(emb.lang_id, emb.vocab, vec, emb.dup_skipped)


def save_embeddings(emb, path):
    """Write the text format ``load_embeddings`` reads.

    Values are serialized with 10 significant digits so a round trip agrees
    within 1e-6 per entry.
    """
    if len(emb) == 0:
        raise ValueError("refusing to write an empty embedding matrix")
    for word in emb.vocab:
        if word == "" or any(ch.isspace() for ch in word):
            raise FormatError(
                f"word {word!r} contains whitespace; the text format cannot represent it"
            )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(emb)} {emb.dim}\n")
        for word, row in zip(emb.vocab, emb.vectors):
            fh.write(word + " " + " ".join(f"{v:.10g}" for v in row) + "\n")
