"""Tokenization, rule-based POS tagging, and noun-phrase chunking.

A deterministic, dependency-free replacement for an off-the-shelf
constituency parser, adequate for synthetic and desk-scale corpora. The
chunk grammar is deliberately shallow:

    NP := (DET|NUM)? ADJ* NOUN+
    NP := NP (PREP NP)+          one parent per prepositional chain

A conjunction never joins noun phrases; it separates siblings. Possessives
and pronouns are tagged DET / OTHER and never head a phrase, so degenerate
one-word concepts like "it" cannot appear.
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ContractError

__all__ = [
    "Token",
    "TokenizedText",
    "NPNode",
    "NPTree",
    "NPSpan",
    "tokenize",
    "pos_tag",
    "chunk_nps",
    "extract_nps",
    "parse_noun_phrases",
    "load_lexicon",
    "DEFAULT_VOCAB_BUCKETS",
]

TAGS = ("DET", "ADJ", "NOUN", "VERB", "PREP", "CONJ", "NUM", "OTHER")

BOS_ID = 0
EOS_ID = 1
DEFAULT_VOCAB_BUCKETS = 512

_WORD_RE = re.compile(r"[A-Za-z0-9]+|[^\sA-Za-z0-9]")


@dataclass(frozen=True)
class Token:
    surface: str  # lowercased form
    start: int
    end: int
    vocab_id: int


@dataclass
class TokenizedText:
    """Raw text plus ordered, non-overlapping token spans.

    The encoder adds one BOS and one EOS row around the tokens, so the
    encoded sequence has ``len(tokens) + 2`` rows. ``raw[start:end].lower()``
    reproduces each surface.
    """

    raw: str
    tokens: list[Token]
    has_bos: bool = True
    has_eos: bool = True

    @property
    def n_rows(self) -> int:
        return len(self.tokens) + int(self.has_bos) + int(self.has_eos)

    def vocab_ids(self) -> list[int]:
        ids = [t.vocab_id for t in self.tokens]
        if self.has_bos:
            ids.insert(0, BOS_ID)
        if self.has_eos:
            ids.append(EOS_ID)
        return ids


def _bucket_id(surface: str, buckets: int) -> int:
    return 2 + zlib.crc32(surface.encode("utf-8")) % buckets


def tokenize(raw: str, vocab_buckets: int = DEFAULT_VOCAB_BUCKETS) -> TokenizedText:
    """Lowercased whitespace/punctuation tokenization with stable hash ids.

    Every word maps into one of ``vocab_buckets`` hash buckets (ids 0 and 1
    are reserved for BOS/EOS), so unknown words are handled uniformly.
    Empty text yields no tokens; the encoder still emits the two special
    rows.
    """
    if vocab_buckets < 1:
        raise ContractError("vocab_buckets must be positive")
    tokens = []
    for m in _WORD_RE.finditer(raw):
        surface = m.group(0).lower()
        tokens.append(Token(surface, m.start(), m.end(), _bucket_id(surface, vocab_buckets)))
    return TokenizedText(raw=raw, tokens=tokens)


_LEXICON_CACHE: dict[str, dict[str, str]] = {}


def load_lexicon(path: str | Path | None = None) -> dict[str, str]:
    """Load the word -> tag table, embedded by default, overridable by path."""
    key = str(path) if path is not None else "<embedded>"
    cached = _LEXICON_CACHE.get(key)
    if cached is not None:
        return cached
    if path is None:
        text = resources.files("cirkit").joinpath("lexicon.tsv").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    table = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        word, tag = line.split("\t")
        if tag not in TAGS:
            raise ContractError(f"lexicon tag {tag!r} for {word!r} is not one of {TAGS}")
        table[word] = tag
    _LEXICON_CACHE[key] = table
    return table


def pos_tag(t: TokenizedText, lexicon: dict[str, str] | None = None) -> list[str]:
    """One tag per token: lexicon lookup, then suffix rules, default NOUN.

    Suffix rules for out-of-vocabulary words: -ing/-ed verbs, -y/-ful/-ous
    adjectives, trailing -s nouns (plural heuristic). Pure digit tokens are
    NUM, punctuation is OTHER.
    """
    lex = lexicon if lexicon is not None else load_lexicon()
    tags = []
    for tok in t.tokens:
        w = tok.surface
        tag = lex.get(w)
        if tag is None:
            if not w[0].isalnum():
                tag = "OTHER"
            elif w.isdigit():
                tag = "NUM"
            elif (w.endswith("ing") and len(w) > 4) or (w.endswith("ed") and len(w) > 3):
                tag = "VERB"
            elif w.endswith(("y", "ful", "ous")) and len(w) > 2:
                tag = "ADJ"
            elif w.endswith("s") and len(w) > 3:
                tag = "NOUN"
            else:
                tag = "NOUN"
        tags.append(tag)
    return tags


@dataclass
class NPNode:
    """One noun phrase: token index range [tok_start, tok_end) plus children."""

    tok_start: int
    tok_end: int
    char_start: int
    char_end: int
    children: list["NPNode"] = field(default_factory=list)

    def span_text(self, raw: str) -> str:
        return raw[self.char_start : self.char_end]


@dataclass
class NPTree:
    """Roots in textual order; children strictly inside their parent."""

    roots: list[NPNode]

    def count(self) -> int:
        return sum(1 + len(r.children) for r in self.roots)


@dataclass(frozen=True)
class NPSpan:
    """A noun phrase pinned to the full text's token sequence.

    ``token_rows`` are indices into the token list (not counting BOS), a
    contiguous strictly increasing run. ``depth`` 0 marks branch-level
    (topmost) phrases.
    """

    char_start: int
    char_end: int
    token_rows: tuple[int, ...]
    depth: int

    def text(self, raw: str) -> str:
        return raw[self.char_start : self.char_end]


def _base_chunks(tags: list[str]) -> list[tuple[int, int]]:
    """Maximal (DET|NUM)? ADJ* NOUN+ runs as [start, end) token ranges."""
    out = []
    i, n = 0, len(tags)
    while i < n:
        j = i
        if tags[j] in ("DET", "NUM"):
            j += 1
        while j < n and tags[j] == "ADJ":
            j += 1
        k = j
        while k < n and tags[k] == "NOUN":
            k += 1
        if k > j:
            out.append((i, k))
            i = k
        else:
            i += 1
    return out


def chunk_nps(t: TokenizedText, tags: list[str]) -> NPTree:
    """Chunk base noun phrases, then attach prepositional chains.

    A run ``NP PREP NP (PREP NP)*`` becomes one parent node spanning the
    whole chain with the base phrases as children (a single level of
    nesting). Text with no NOUN-tagged token yields an empty tree.
    """
    if len(tags) != len(t.tokens):
        raise ContractError(f"{len(tags)} tags for {len(t.tokens)} tokens")
    bases = _base_chunks(tags)
    nodes = [
        NPNode(s, e, t.tokens[s].start, t.tokens[e - 1].end) for s, e in bases
    ]
    roots: list[NPNode] = []
    i = 0
    while i < len(nodes):
        chain = [nodes[i]]
        while (
            i + 1 < len(nodes)
            and nodes[i + 1].tok_start == chain[-1].tok_end + 1
            and tags[chain[-1].tok_end] == "PREP"
        ):
            chain.append(nodes[i + 1])
            i += 1
        if len(chain) == 1:
            roots.append(chain[0])
        else:
            parent = NPNode(
                chain[0].tok_start,
                chain[-1].tok_end,
                chain[0].char_start,
                chain[-1].char_end,
                children=chain,
            )
            roots.append(parent)
        i += 1
    return NPTree(roots=roots)


def extract_nps(tree: NPTree, limit: int = 10, leaf_only: bool = False) -> list[NPSpan]:
    """Breadth-first extraction: all depth-0 phrases in textual order, then
    depth-1, truncated at ``limit``. ``leaf_only`` keeps childless phrases
    only (still breadth-first, still truncated).
    """
    if limit < 1:
        raise ContractError("limit must be at least 1")
    levels: list[list[tuple[NPNode, int]]] = [[(r, 0) for r in tree.roots]]
    while levels[-1]:
        nxt = [(c, d + 1) for node, d in levels[-1] for c in node.children]
        levels.append(nxt)
    ordered = [pair for level in levels for pair in level]
    spans = []
    for node, depth in ordered:
        if leaf_only and node.children:
            continue
        spans.append(
            NPSpan(
                char_start=node.char_start,
                char_end=node.char_end,
                token_rows=tuple(range(node.tok_start, node.tok_end)),
                depth=depth,
            )
        )
        if len(spans) == limit:
            break
    return spans


def parse_noun_phrases(
    raw: str,
    limit: int = 10,
    leaf_only: bool = False,
    lexicon: dict[str, str] | None = None,
    vocab_buckets: int = DEFAULT_VOCAB_BUCKETS,
) -> tuple[TokenizedText, list[NPSpan]]:
    """Convenience pipeline: tokenize, tag, chunk, extract."""
    t = tokenize(raw, vocab_buckets=vocab_buckets)
    tags = pos_tag(t, lexicon=lexicon)
    tree = chunk_nps(t, tags)
    return t, extract_nps(tree, limit=limit, leaf_only=leaf_only)
