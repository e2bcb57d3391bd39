"""Tokenizer, tagger, and NP chunker behavior."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cirkit.nlp import (
    NPTree,
    chunk_nps,
    extract_nps,
    load_lexicon,
    parse_noun_phrases,
    pos_tag,
    tokenize,
)


def spans_of(raw, limit=10, leaf_only=False):
    _, spans = parse_noun_phrases(raw, limit=limit, leaf_only=leaf_only)
    return [s.text(raw).lower() for s in spans]


class TestTokenize:
    def test_empty_text(self):
        t = tokenize("")
        assert t.tokens == []
        assert t.has_bos and t.has_eos
        assert t.n_rows == 2

    def test_simple_sentence_spans(self):
        t = tokenize("Add a red ball")
        assert [tok.surface for tok in t.tokens] == ["add", "a", "red", "ball"]
        assert [(tok.start, tok.end) for tok in t.tokens] == [(0, 3), (4, 5), (6, 9), (10, 14)]

    def test_punctuation_is_its_own_token(self):
        t = tokenize("red, blue")
        assert [tok.surface for tok in t.tokens] == ["red", ",", "blue"]

    def test_vocab_ids_are_stable_and_in_range(self):
        a = tokenize("a red ball")
        b = tokenize("a red ball")
        assert [t.vocab_id for t in a.tokens] == [t.vocab_id for t in b.tokens]
        assert all(2 <= t.vocab_id < 2 + 512 for t in a.tokens)

    words = st.text(alphabet="abcdefghijklmnopqrstuvwxyzRSTU0123456789", min_size=1, max_size=8)

    @given(st.lists(words, min_size=0, max_size=12), st.sampled_from([" ", "  ", ", ", ". "]))
    def test_spans_reslice_to_surfaces(self, ws, sep):
        raw = sep.join(ws)
        t = tokenize(raw)
        for tok in t.tokens:
            assert raw[tok.start : tok.end].lower() == tok.surface
        starts = [tok.start for tok in t.tokens]
        assert starts == sorted(starts)
        for prev, cur in zip(t.tokens, t.tokens[1:]):
            assert prev.end <= cur.start


class TestPosTag:
    @pytest.mark.parametrize(
        "word,tag",
        [("the", "DET"), ("on", "PREP"), ("red", "ADJ"), ("remove", "VERB"), ("and", "CONJ")],
    )
    def test_lexicon_entries(self, word, tag):
        t = tokenize(word)
        assert pos_tag(t) == [tag]

    def test_oov_defaults_to_noun(self):
        t = tokenize("lorikeet")
        assert "lorikeet" not in load_lexicon()
        assert pos_tag(t) == ["NOUN"]

    @pytest.mark.parametrize(
        "word,tag",
        [
            ("glistening", "VERB"),
            ("varnished", "VERB"),
            ("grassy", "ADJ"),
            ("colorful", "ADJ"),
            ("luminous", "ADJ"),
            ("zelkovas", "NOUN"),
            ("42", "NUM"),
            (";", "OTHER"),
        ],
    )
    def test_suffix_and_fallback_rules(self, word, tag):
        t = tokenize(word)
        assert pos_tag(t) == [tag]


class TestChunkNps:
    def test_single_np_no_children(self):
        assert spans_of("the hand") == ["the hand"]
        t = tokenize("the hand")
        tree = chunk_nps(t, pos_tag(t))
        assert len(tree.roots) == 1 and tree.roots[0].children == []

    def test_pp_attachment_makes_one_parent(self):
        raw = "another lorikeet on the branch"
        t = tokenize(raw)
        tree = chunk_nps(t, pos_tag(t))
        assert len(tree.roots) == 1
        root = tree.roots[0]
        assert root.span_text(raw) == "another lorikeet on the branch"
        assert [c.span_text(raw) for c in root.children] == ["another lorikeet", "the branch"]

    def test_greenery_in_background(self):
        raw = "the greenery in the background"
        t = tokenize(raw)
        tree = chunk_nps(t, pos_tag(t))
        assert len(tree.roots) == 1
        assert [c.span_text(raw) for c in tree.roots[0].children] == [
            "the greenery",
            "the background",
        ]

    def test_conjunction_splits_siblings(self):
        raw = "the red ball and the blue box"
        t = tokenize(raw)
        tree = chunk_nps(t, pos_tag(t))
        assert [r.span_text(raw) for r in tree.roots] == ["the red ball", "the blue box"]
        assert all(not r.children for r in tree.roots)

    def test_pp_chain_stays_one_level(self):
        raw = "the lamp on the table in the corner"
        t = tokenize(raw)
        tree = chunk_nps(t, pos_tag(t))
        assert len(tree.roots) == 1
        root = tree.roots[0]
        assert len(root.children) == 3
        assert all(not c.children for c in root.children)

    def test_no_noun_yields_empty_tree(self):
        t = tokenize("remove and replace")
        tree = chunk_nps(t, pos_tag(t))
        assert tree.roots == [] and tree.count() == 0

    def test_children_strictly_inside_parent(self):
        raw = "a small green box on the left side"
        t = tokenize(raw)
        tree = chunk_nps(t, pos_tag(t))
        for root in tree.roots:
            for c in root.children:
                assert root.tok_start <= c.tok_start and c.tok_end <= root.tok_end
                assert (c.tok_start, c.tok_end) != (root.tok_start, root.tok_end)


class TestExtractNps:
    def test_small_tree_parent_first(self):
        raw = "another lorikeet on the branch"
        spans = spans_of(raw)
        assert spans == ["another lorikeet on the branch", "another lorikeet", "the branch"]

    def test_truncation_at_limit(self):
        # six chains of parent+2 children = 18 phrases total
        raw = " and ".join("the cat on the mat" for _ in range(6))
        _, spans = parse_noun_phrases(raw, limit=10)
        assert len(spans) == 10
        assert [s.depth for s in spans] == [0] * 6 + [1] * 4

    def test_leaf_only_keeps_childless(self):
        assert spans_of("another lorikeet on the branch", leaf_only=True) == [
            "another lorikeet",
            "the branch",
        ]

    def test_exactly_min_of_limit_and_count(self):
        raw = "the red ball and the blue box"
        for limit in (1, 2, 3, 10):
            _, spans = parse_noun_phrases(raw, limit=limit)
            assert len(spans) == min(limit, 2)

    def test_parent_precedes_descendants(self):
        raw = "add a red ball on the left and remove the greenery in the background"
        t, spans = parse_noun_phrases(raw)
        by_depth = [s.depth for s in spans]
        assert by_depth == sorted(by_depth)

    def test_token_rows_are_contiguous_and_cover_text(self):
        raw = "remove the small green box on the left"
        t, spans = parse_noun_phrases(raw)
        for s in spans:
            rows = list(s.token_rows)
            assert rows == list(range(rows[0], rows[-1] + 1))
            covered = " ".join(t.tokens[i].surface for i in rows)
            assert covered == s.text(raw).lower()

    @given(st.integers(0, 2**32 - 1))
    def test_extract_never_exceeds_limit(self, seed):
        import random

        rng = random.Random(seed)
        nouns = ["ball", "box", "star", "lamp", "chair", "rug"]
        parts = []
        for _ in range(rng.randint(1, 6)):
            np = f"the {rng.choice(['red', 'blue', 'green'])} {rng.choice(nouns)}"
            if rng.random() < 0.5:
                np += f" on the {rng.choice(nouns)}"
            parts.append(np)
        raw = " and ".join(parts)
        _, spans = parse_noun_phrases(raw, limit=4)
        assert len(spans) <= 4
