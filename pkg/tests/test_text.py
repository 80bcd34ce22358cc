import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tweetdid.text import (
    EMOTICONS,
    ClassifiedTweet,
    LabelFileClassifier,
    NormalizedTweet,
    TopicDictionary,
    binary_entropy,
    load_dictionary,
    normalize,
    rank_by_entropy,
    tag_topics,
)

# 30-digit evaluations of -p log2 p - (1-p) log2 (1-p), frozen
ENTROPY_ORACLE = {0.25: 0.811278124459132863909695792039, 0.1: 0.468995593589281221253589330383,
                  0.37: 0.950672092687065900133099574032}


def test_normalize_examples():
    assert normalize("Visita http://x.co #covid!").tokens == ("visita", "<URL>", "covid")
    t = normalize("@user ,,, !!!")
    assert t.tokens == ("<MENTION>",) and t.drop
    assert normalize("").drop and normalize(None).tokens == ()


def test_normalize_special_tokens():
    t = normalize("Chiamare +39 333 1234567 il 23/02/2020, costa 12,50 euro :) www.salute.it @Min")
    assert t.tokens == ("chiamare", "<PHONE>", "il", "<DATE>", "costa", "<NUMBER>", "euro", "<EMOTICON>", "<URL>", "<MENTION>")
    assert t.words == ("chiamare", "il", "costa", "euro")


def test_hashtag_marker_optional():
    t = normalize("#ZonaRossa oggi", mark_hashtags=True)
    assert t.tokens == ("<HASHTAG:zonarossa>", "zonarossa", "oggi")
    assert normalize("#zona_rossa").tokens == ("zona", "rossa")


def test_only_tags_dropped():
    assert normalize("@a @b http://t.co/x :( 123").drop
    assert not normalize("@a ciao").drop


def test_emoticon_list_loaded():
    assert ":)" in EMOTICONS and all(e.strip() == e for e in EMOTICONS)


TRICKY = st.lists(
    st.sampled_from(list("0123456789xXdD:;-()<>#@/. _8oOpPtT=,+\u0130\u00df\n")
                    + ["http://", "www.", "<URL>", "<HASHTAG:", "xD", ":)", "2020-02-23", "+39 333 1234567"]),
    max_size=15,
).map("".join)


@settings(max_examples=500)
@given(st.one_of(st.text(), TRICKY))
def test_normalize_idempotent(text):
    once = normalize(text)
    assert normalize(once.text).tokens == once.tokens


@settings(max_examples=100)
@given(st.text())
def test_normalize_no_punctuation(text):
    for tok in normalize(text).tokens:
        assert tok.startswith("<") or tok.isalnum()


HEALTH = TopicDictionary.from_terms("health", ["virus", "ospedale", "terapia intensiva"])
POLITICS = TopicDictionary.from_terms("politics", ["governo", "decreto"])
ECON = TopicDictionary.from_terms("economics", ["banca", "lavoro"])


def test_tag_topics_examples():
    assert tag_topics(normalize("la banca chiude"), [ECON]) == {"economics": 1}
    flags = tag_topics(normalize("Il governo e il virus"), [HEALTH, POLITICS, ECON])
    assert flags == {"health": 1, "politics": 1, "economics": 0}
    assert tag_topics(normalize("niente di che"), [HEALTH, POLITICS]) == {"health": 0, "politics": 0}


def test_phrase_terms_need_consecutive_tokens():
    assert tag_topics(normalize("posti in terapia intensiva"), [HEALTH])["health"] == 1
    assert tag_topics(normalize("terapia non intensiva"), [HEALTH])["health"] == 0


def test_dictionary_validation(tmp_path):
    with pytest.raises(ValueError):
        TopicDictionary.from_terms("x", [])
    with pytest.raises(ValueError):
        TopicDictionary.from_terms("x", ["Virus"])
    with pytest.raises(ValueError):
        TopicDictionary.from_terms("x", ["virus", "virus"])
    f = tmp_path / "health.txt"
    f.write_text("# terms\nvirus\n\nterapia  intensiva\n", encoding="utf-8")
    d = load_dictionary(f)
    assert d.topic == "health" and d.terms == {"virus", "terapia intensiva"}
    empty = tmp_path / "empty.txt"
    empty.write_text("# nothing\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_dictionary(empty)


VOCAB = ["virus", "banca", "governo", "casa", "oggi", "lavoro", "zona", "rossa", "terapia", "intensiva"]


@settings(max_examples=500, deadline=None)
@given(
    st.lists(st.sampled_from(VOCAB), max_size=12),
    st.lists(st.sampled_from(VOCAB + ["zona rossa", "terapia intensiva"]), min_size=1, max_size=5, unique=True),
    st.lists(st.sampled_from(VOCAB + ["casa oggi"]), max_size=5, unique=True),
)
def test_tag_topics_monotone(words, terms, extra):
    tweet = NormalizedTweet(tuple(words))
    small = TopicDictionary.from_terms("t", terms)
    big = TopicDictionary.from_terms("t", list(dict.fromkeys(terms + extra)))
    assert tag_topics(tweet, [small])["t"] <= tag_topics(tweet, [big])["t"]


def test_binary_entropy_examples():
    assert binary_entropy(0.5) == 1.0
    assert binary_entropy(1.0) == 0.0 and binary_entropy(0.0) == 0.0
    for p, h in ENTROPY_ORACLE.items():
        assert binary_entropy(p) == pytest.approx(h, abs=1e-15)
    with pytest.raises(ValueError):
        binary_entropy(1.2)
    with pytest.raises(ValueError):
        binary_entropy(-0.01)


def test_binary_entropy_symmetric_grid():
    p = np.linspace(0, 1, 1001)
    assert np.max(np.abs(binary_entropy(p) - binary_entropy(1 - p))) <= 1e-12


def _ct(i, conf, emotion="uncertainty", topics=()):
    return ClassifiedTweet(f"id{i}", int(conf > 0.5), conf, emotion, topics)


def test_rank_by_entropy_examples():
    items = [_ct(1, 0.99), _ct(2, 0.5), _ct(3, 0.9)]
    top = rank_by_entropy(items, 2)[("uncertainty", "all")]
    assert [c.tweet_id for c in top] == ["id2", "id3"]
    same = [_ct(i, 0.7) for i in (5, 3, 9, 1)]
    assert [c.tweet_id for c in rank_by_entropy(same, 2)[("uncertainty", "all")]] == ["id1", "id3"]
    assert len(rank_by_entropy(items, 10)[("uncertainty", "all")]) == 3
    with pytest.raises(ValueError):
        rank_by_entropy(items, 0)


def test_rank_by_entropy_groups_and_permutations():
    items = [_ct(i, c, e, t) for i, (c, e, t) in enumerate(
        [(0.6, "neg", ("health",)), (0.8, "neg", ("health", "politics")), (0.55, "unc", ()), (0.95, "neg", ("politics",))]
    )]
    ref = rank_by_entropy(items, 5)
    assert set(ref) == {("neg", "health"), ("neg", "politics"), ("unc", "all")}
    for perm in itertools.permutations(items):
        assert rank_by_entropy(list(perm), 5) == ref


def test_classified_tweet_confidence_checked():
    with pytest.raises(ValueError):
        ClassifiedTweet("x", 1, 1.5)


def test_label_file_classifier(tmp_path):
    f = tmp_path / "labels.csv"
    f.write_text("tweet_id,emotion,label,confidence\na,neg,1,0.8\nb,neg,0,0.3\na,unc,0,0.6\n", encoding="utf-8")
    clf = LabelFileClassifier.from_csv(f)
    assert clf.emotions == ["neg", "unc"]
    out = clf.classify(["b", "a"], None, "neg")
    assert [(c.tweet_id, c.label, c.confidence) for c in out] == [("b", 0, 0.3), ("a", 1, 0.8)]
    f.write_text("tweet_id,emotion,label,confidence\na,neg,3,0.8\n", encoding="utf-8")
    with pytest.raises(ValueError, match="row 2"):
        LabelFileClassifier.from_csv(f)
