from jointbert.baseline import MajorityBaseline
from jointbert.data import Record, load_dataset

TRAIN = [
    Record(("play", "jazz"), ("O", "B-genre"), "PlayMusic"),
    Record(("play", "rock"), ("O", "B-genre"), "PlayMusic"),
    Record(("book", "jazz", "club"), ("O", "B-place", "I-place"), "Book"),
]


def test_fit_majority_and_frequent_tags():
    b = MajorityBaseline.fit(TRAIN)
    assert b.intent == "PlayMusic"
    assert b.word_tags["jazz"] == "B-genre"
    assert b.word_tags["club"] == "I-place"
    assert b.predict(["play", "blues"]) == ("PlayMusic", ["O", "O"])


def test_ties_break_lexicographically():
    recs = [Record(("x",), ("B-b",), "Zed"), Record(("x",), ("B-a",), "Alpha")]
    b = MajorityBaseline.fit(recs)
    assert b.intent == "Alpha" and b.word_tags["x"] == "B-a"


def test_evaluate_hand_counts():
    test = [Record(("play", "jazz"), ("O", "B-genre"), "PlayMusic"),
            Record(("book", "club"), ("O", "B-place"), "Book")]
    m = MajorityBaseline.fit(TRAIN).evaluate(test)
    assert m.intent_accuracy == 0.5
    # predicted chunks: (genre,1,1) correct, (place,1,1) from I-place -> correct under leniency
    assert (m.gold_chunks, m.predicted_chunks, m.correct_chunks) == (2, 2, 2)
    assert m.frame_accuracy == 0.5


def test_mini_dataset_runs(snips_mini):
    ds = load_dataset(snips_mini)
    m = MajorityBaseline.fit(ds.train).evaluate(ds.test)
    assert 0.0 <= m.slot_f1 <= 1.0 and m.examples == 14
