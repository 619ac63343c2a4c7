"""Segmented-corpus ingestion, BMES tagging, vocabularies, embedding files.

The on-disk corpus format is one sentence per line, words separated by ASCII
whitespace, UTF-8 encoded.  In memory a segmented sentence is a plain list of
word strings; a tagged sentence pairs a character sequence with one BMES tag
per character.
"""

from __future__ import annotations

import hashlib
import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass

import numpy as np

PAD = "⟨PAD⟩"
UNK = "⟨UNK⟩"
NUM = "⟨NUM⟩"
LATIN = "⟨LATIN⟩"

RESERVED = (PAD, UNK, NUM, LATIN)
PAD_ID, UNK_ID, NUM_ID, LATIN_ID = 0, 1, 2, 3

TAGS = ("B", "M", "E", "S")
TAG_TO_ID = {t: i for i, t in enumerate(TAGS)}

# ASCII whitespace only; U+3000 and other Unicode spaces are corpus text.
_FIELD_SEP = re.compile(r"[ \t\f\v\r]+")
_SYMBOL = re.compile(r"⟨(?:PAD|UNK|NUM|LATIN)⟩")


class FormatError(ValueError):
    """Malformed corpus, embedding, or config input (1-based line number)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = "line %d: %s" % (line, message)
        super().__init__(message)
        self.line = line


def read_bakeoff(doc):
    """Parse a segmented corpus document into a list of word lists.

    `doc` is a str or UTF-8 bytes.  Blank lines are skipped, repeated
    separators collapse.  Invalid UTF-8 raises FormatError with the line.
    """
    if isinstance(doc, bytes):
        raw_lines = doc.split(b"\n")
        lines = []
        for i, raw in enumerate(raw_lines, start=1):
            try:
                lines.append(raw.decode("utf-8"))
            except UnicodeDecodeError as exc:
                raise FormatError("invalid UTF-8 (%s)" % exc.reason, line=i) from exc
    else:
        lines = doc.split("\n")
    sentences = []
    for line in lines:
        words = [w for w in _FIELD_SEP.split(line) if w]
        if words:
            sentences.append(words)
    return sentences


def read_bakeoff_path(path):
    with open(path, "rb") as f:
        return read_bakeoff(f.read())


def word_tokens(word):
    """Split a word string into model tokens.

    A token is a single code point, except the reserved symbols which stay
    atomic.  Words produced by `normalize` round-trip through this.
    """
    tokens = []
    i = 0
    while i < len(word):
        m = _SYMBOL.match(word, i)
        if m:
            tokens.append(m.group())
            i = m.end()
        else:
            tokens.append(word[i])
            i += 1
    return tokens


def _char_kind(token):
    if len(token) != 1:
        return None
    if unicodedata.category(token) == "Nd":
        return "num"
    if "a" <= token <= "z" or "A" <= token <= "Z":
        return "latin"
    if "Ａ" <= token <= "Ｚ" or "ａ" <= token <= "ｚ":
        return "latin"
    return None


def _collapse_runs(tokens):
    """Collapse maximal digit / Latin runs into (symbol, raw_text) pairs."""
    out = []
    run_kind = None
    run_text = []
    for tok in tokens:
        kind = _char_kind(tok)
        if run_kind is not None and kind != run_kind:
            out.append((NUM if run_kind == "num" else LATIN, "".join(run_text)))
            run_kind, run_text = None, []
        if kind is None:
            out.append((tok, tok))
        else:
            run_kind = kind
            run_text.append(tok)
    if run_kind is not None:
        out.append((NUM if run_kind == "num" else LATIN, "".join(run_text)))
    return out


def normalize(sentence):
    """Replace maximal digit runs with the NUM symbol and Latin-letter runs
    with the LATIN symbol, per word.  Idempotent; word count is preserved.
    """
    out = []
    for word in sentence:
        pairs = _collapse_runs(word_tokens(word))
        out.append("".join(tok for tok, _ in pairs))
    return out


def tokenize_raw(text):
    """Tokenize an unsegmented string for prediction.

    Returns (tokens, raw_pieces): `tokens` are normalized model tokens,
    `raw_pieces[i]` is the original text the i-th token covers, so predicted
    words can be emitted over the original characters.
    """
    pairs = _collapse_runs(word_tokens(text))
    return [t for t, _ in pairs], [r for _, r in pairs]


@dataclass
class TaggedSentence:
    """A character sequence with one BMES tag per character."""

    chars: list
    tags: list

    def __post_init__(self):
        if len(self.chars) != len(self.tags):
            raise ValueError(
                "chars/tags length mismatch: %d vs %d" % (len(self.chars), len(self.tags))
            )

    def __len__(self):
        return len(self.chars)

    def structurally_valid(self):
        """True when the tag sequence is a legal BMES path."""
        prev = None
        for tag in self.tags:
            if tag not in TAG_TO_ID:
                return False
            if prev is None:
                if tag not in ("B", "S"):
                    return False
            else:
                allowed = ("M", "E") if prev in ("B", "M") else ("B", "S")
                if tag not in allowed:
                    return False
            prev = tag
        return prev is None or prev in ("E", "S")


def to_bmes(sentence):
    """Convert a segmented sentence to a tagged one.

    Single-token words map to S, longer words to B M* E.  Empty words are
    rejected.
    """
    chars, tags = [], []
    for word in sentence:
        tokens = word_tokens(word)
        if not tokens:
            raise ValueError("empty word in sentence")
        chars.extend(tokens)
        if len(tokens) == 1:
            tags.append("S")
        else:
            tags.extend(["B"] + ["M"] * (len(tokens) - 2) + ["E"])
    return TaggedSentence(chars, tags)


def from_bmes(tagged):
    """Convert a tagged sentence back to a word list.

    Accepts structurally invalid tag sequences (raw tagger output) and
    repairs them: S and well-formed B..E close words, unattached M/E extend
    the open span, a dangling span at the end closes as a word.  Every input
    character appears in exactly one output word.
    """
    words = []
    span = []
    for char, tag in zip(tagged.chars, tagged.tags):
        if tag == "B":
            if span:
                words.append(span)
            span = [char]
        elif tag == "M":
            span.append(char)
        elif tag == "E":
            span.append(char)
            words.append(span)
            span = []
        elif tag == "S":
            if span:
                words.append(span)
                span = []
            words.append([char])
        else:
            raise ValueError("unknown tag %r" % tag)
    if span:
        words.append(span)
    return ["".join(w) for w in words]


def _sentence_bigrams(chars):
    """Position-aligned bigrams: position i pairs with (c[i], c[i+1]), the
    final position pairing with PAD."""
    padded = list(chars) + [PAD]
    return list(zip(padded, padded[1:]))


class Vocab:
    """Character and bigram id maps with fixed reserved entries.

    Character ids: PAD=0, UNK=1, NUM=2, LATIN=3, then corpus characters in
    first-occurrence order.  Bigram ids: 0 is the padding bigram, 1 the
    unknown bigram, then corpus bigrams that met the count cutoff, in
    first-occurrence order.
    """

    BIGRAM_PAD_ID = 0
    BIGRAM_UNK_ID = 1

    def __init__(self, char_to_id, bigram_to_id):
        self.char_to_id = dict(char_to_id)
        self.bigram_to_id = dict(bigram_to_id)
        for i, sym in enumerate(RESERVED):
            if self.char_to_id.get(sym) != i:
                raise ValueError("reserved symbol %r must have id %d" % (sym, i))

    @property
    def size(self):
        return len(self.char_to_id)

    @property
    def bigram_size(self):
        return len(self.bigram_to_id) + 2

    def char_id(self, char):
        return self.char_to_id.get(char, UNK_ID)

    def bigram_id(self, pair):
        return self.bigram_to_id.get(tuple(pair), self.BIGRAM_UNK_ID)

    def to_json_dict(self):
        chars = [None] * len(self.char_to_id)
        for c, i in self.char_to_id.items():
            chars[i] = c
        bigrams = [None] * len(self.bigram_to_id)
        for (a, b), i in self.bigram_to_id.items():
            bigrams[i - 2] = [a, b]
        return {"chars": chars, "bigrams": bigrams}

    @classmethod
    def from_json_dict(cls, d):
        char_to_id = {c: i for i, c in enumerate(d["chars"])}
        bigram_to_id = {tuple(p): i + 2 for i, p in enumerate(d["bigrams"])}
        return cls(char_to_id, bigram_to_id)

    def content_hash(self):
        blob = json.dumps(self.to_json_dict(), sort_keys=True, ensure_ascii=True)
        return hashlib.sha256(blob.encode("ascii")).hexdigest()

    def __eq__(self, other):
        return (
            isinstance(other, Vocab)
            and self.char_to_id == other.char_to_id
            and self.bigram_to_id == other.bigram_to_id
        )


def build_vocab(corpus, bigram_min_count=3):
    """Build a Vocab from tagged sentences.

    Characters are always included; bigrams only when their corpus count
    reaches `bigram_min_count`.  Ordering is first occurrence, so the result
    is deterministic for a fixed corpus.
    """
    if bigram_min_count < 1:
        raise ValueError("bigram_min_count must be >= 1")
    char_to_id = {sym: i for i, sym in enumerate(RESERVED)}
    counts = Counter()
    for ts in corpus:
        for c in ts.chars:
            if c not in char_to_id:
                char_to_id[c] = len(char_to_id)
        counts.update(_sentence_bigrams(ts.chars))
    bigram_to_id = {}
    for ts in corpus:
        for pair in _sentence_bigrams(ts.chars):
            if counts[pair] >= bigram_min_count and pair not in bigram_to_id:
                bigram_to_id[pair] = len(bigram_to_id) + 2
    return Vocab(char_to_id, bigram_to_id)


def load_embeddings(doc, vocab, dim, rng):
    """Load word2vec-text embeddings into a (vocab.size, dim) float array.

    `doc` is a str or UTF-8 bytes: an optional `count dim` header line, then
    one `token v1 .. v_dim` row per line.  Vocabulary entries found in the
    file take the file vector.  Absent entries take the file's UNK-symbol
    vector when one exists, otherwise an independent uniform draw from
    [-0.05, 0.05) using `rng`.  Wrong row width or a bad float raises
    FormatError with the line number.
    """
    if isinstance(doc, bytes):
        doc = doc.decode("utf-8")
    vectors = {}
    lines = doc.split("\n")
    start = 0
    if lines:
        fields = [f for f in _FIELD_SEP.split(lines[0]) if f]
        if len(fields) == 2:
            try:
                declared = (int(fields[0]), int(fields[1]))
            except ValueError:
                declared = None
            if declared is not None:
                if declared[1] != dim:
                    raise FormatError(
                        "header dimension %d does not match expected %d" % (declared[1], dim),
                        line=1,
                    )
                start = 1
    for lineno, line in enumerate(lines[start:], start=start + 1):
        fields = [f for f in _FIELD_SEP.split(line) if f]
        if not fields:
            continue
        token, values = fields[0], fields[1:]
        if len(values) != dim:
            raise FormatError(
                "expected %d values for %r, found %d" % (dim, token, len(values)),
                line=lineno,
            )
        try:
            vec = np.array([float(v) for v in values], dtype=np.float64)
        except ValueError as exc:
            raise FormatError("bad float for %r: %s" % (token, exc), line=lineno) from exc
        if token not in vectors:
            vectors[token] = vec
    table = np.empty((vocab.size, dim), dtype=np.float64)
    unk_vec = vectors.get(UNK)
    for token, idx in vocab.char_to_id.items():
        if token in vectors:
            table[idx] = vectors[token]
        elif unk_vec is not None:
            table[idx] = unk_vec
        else:
            table[idx] = rng.uniform(-0.05, 0.05, size=dim)
    return table


def load_embeddings_path(path, vocab, dim, rng):
    with open(path, "rb") as f:
        return load_embeddings(f.read(), vocab, dim, rng)
