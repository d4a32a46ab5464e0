import pytest
from hypothesis import given
from hypothesis import strategies as st

from focusloop.evidence import EvidenceSet, FrameRef, GenerationResult
from focusloop.grounding import GroundingError, attention_argmax, extract_timestamp, ground


def fr(i, t):
    return FrameRef("v", i, float(t))


@pytest.mark.parametrize("text,duration,expected", [
    ("the cup falls at [02:15]", 600, (135.0, "[02:15]")),
    ("see [1:05] then again [03:30]", 600, (210.0, "[03:30]")),
    ("no timestamps here", 600, None),
    ("[99:59]", 600, (600.0, "[99:59]")),
    ("long video [1:02:03]", 10_000, (3723.0, "[1:02:03]")),
    ("bad seconds [02:75] and bare 02:15", 600, None),
    ("[2:5]", 600, None),
])
def test_extract_timestamp(text, duration, expected):
    assert extract_timestamp(text, duration) == expected


def test_attention_argmax_examples():
    assert attention_argmax([0.3], [fr(0, 5)]).index == 0
    # per-frame sums over (query token, visual token) pairs
    table = {0: [[0.1, 0.2], [0.05, 0.15]], 1: [[0.3, 0.1], [0.2, 0.0]]}
    a = [sum(sum(row) for row in table[i]) for i in (0, 1)]
    assert a == pytest.approx([0.5, 0.6])
    assert attention_argmax(a, [fr(0, 1), fr(1, 2)]).index == 1
    assert attention_argmax([0.4, 0.4], [fr(7, 9), fr(3, 4)]).index == 3
    for bad in ([], [0.1, 0.2]):
        with pytest.raises(GroundingError):
            attention_argmax(bad, [fr(0, 1)] if bad else [])


def test_ground_examples():
    ev = EvidenceSet((fr(0, 5), fr(1, 50)))
    assert ground(GenerationResult("look at [00:42]", (-1.0,), (0.9, 0.1)), ev, 60).target_sec == 42.0
    out = ground(GenerationResult("unsure", (-1.0,), (0.1, 0.9)), ev, 60)
    assert (out.target_sec, out.source, out.raw_match) == (50.0, "attention", None)
    with pytest.raises(GroundingError):
        ground(GenerationResult("unsure", (-1.0,)), ev, 60)


@given(st.integers(0, 99), st.integers(0, 59), st.floats(1.0, 3000.0), st.lists(st.floats(0, 5), min_size=2, max_size=2))
def test_regex_precedence_and_clamp(m, s, duration, att):
    ev = EvidenceSet((fr(0, 0), fr(1, 1)))
    out = ground(GenerationResult(f"maybe [{m:02d}:{s:02d}]", (-1.0,), tuple(att)), ev, duration)
    assert out.source == "regex"
    assert 0.0 <= out.target_sec <= duration


@given(st.lists(st.floats(0, 10), min_size=1, max_size=10, unique=True), st.randoms())
def test_attention_permutation_invariant(att, rnd):
    frames = [fr(i, i * 2) for i in range(len(att))]
    pairs = list(zip(att, frames))
    base = attention_argmax(att, frames)
    rnd.shuffle(pairs)
    assert attention_argmax([a for a, _ in pairs], [f for _, f in pairs]) == base
