"""Segmentation contract: worked examples, reconstruction, determinism."""

import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trifuse.errors import EmptyInput, MalformedLine
from trifuse.segmenter import (
    ConnectorLexicon,
    default_lexicon,
    load_lexicon,
    segment_cot,
)

# Curated reasoning traces in the styles the detector will meet: open-domain
# explanations, trivia lookups, and arithmetic chains.
CURATED_COT_TEXTS = [
    "Ireland has two official languages. Therefore, not everyone speaks Irish.",
    "The Eiffel Tower is in Paris. Paris is the capital of France. So the tower is in the capital.",
    "First, note that 12 x 12 is 144. Then we subtract 44. Finally, the answer is 100.",
    "We know that water boils at 100 degrees Celsius at sea level. Because the pressure is lower at altitude, it boils sooner.",
    "Step 1: the train travels 60 km in one hour. Step 2: in 2.5 hours it travels 150 km. Hence the answer is 150.",
    "Napoleon was born in 1769, i.e. before the French Revolution. Consequently, he grew up under the monarchy.",
    "The recipe needs 2 eggs per cake. Since we bake 3 cakes, we need 6 eggs. Thus 6 is the answer.",
    "Mr. Darwin published in 1859. Dr. Wallace reached similar conclusions. As a result, both are credited.",
    "Sharks are fish, whereas dolphins are mammals. It follows that dolphins breathe air.",
    "Given that x equals 4, x squared equals 16. Therefore the result is 16.",
    "The meeting is at 9.30 in the morning! Recall that the office opens at 9. So there is half an hour to prepare.",
    "Is the moon a planet? No. The moon orbits the earth, so it is a satellite.",
    "Mount Everest is 8848 m tall. K2 is 8611 m tall. Hence Everest is taller by 237 m.",
    "Some metals, e.g. sodium, react with water. Note that gold does not. Thus reactivity varies.",
    "He bought 3.5 kg of apples because they were on sale. Next, he bought 1.5 kg of pears. The total is 5 kg.",
    "Light travels at about 300000 km per second... sound travels far slower. Consequently we see lightning before thunder.",
    "Second, the contract requires notice. Due to the missed deadline, the clause applies.",
    "The word 'so' appears in 'sow' and 'absorb' without splitting them. So word boundaries matter.",
    "2 plus 2 is 4, and 4 plus 4 is 8. Then the sequence doubles. Finally it reaches 64.",
    "Since the premise is false, the argument collapses. There is no fix, etc. The conclusion fails.",
]


class TestWorkedExamples:
    def test_single_sentence_single_unit(self):
        stl = segment_cot("Paris is the capital of France.", default_lexicon())
        assert stl.units == ["Paris is the capital of France."]

    def test_sentence_split_connector_opens_sentence(self):
        stl = segment_cot(
            "Ireland has two official languages. Therefore, not everyone speaks Irish.",
            default_lexicon(),
        )
        assert stl.units == [
            "Ireland has two official languages.",
            "Therefore, not everyone speaks Irish.",
        ]

    def test_intra_sentence_connector_splits(self):
        stl = segment_cot(
            "x equals 2 because 2 plus 2 is 4, so y is 4.",
            default_lexicon(),
            min_unit_tokens=2,
        )
        assert stl.units == ["x equals 2", "because 2 plus 2 is 4,", "so y is 4."]

    def test_empty_input_rejected(self):
        with pytest.raises(EmptyInput):
            segment_cot("", default_lexicon())
        with pytest.raises(EmptyInput):
            segment_cot("   \n\t ", default_lexicon())


class TestRules:
    def test_decimal_number_not_a_boundary(self):
        stl = segment_cot("Pi is 3.14 which is close to 3.", default_lexicon())
        assert stl.units == ["Pi is 3.14 which is close to 3."]

    def test_abbreviations_not_boundaries(self):
        stl = segment_cot(
            "We cite Dr. Smith and e.g. the 1999 study. The rest follows.",
            default_lexicon(),
        )
        assert stl.units == [
            "We cite Dr. Smith and e.g. the 1999 study.",
            "The rest follows.",
        ]

    def test_connector_keeps_following_unit(self):
        stl = segment_cot(
            "The road was icy because it rained overnight.", default_lexicon(),
        )
        assert stl.units == ["The road was icy", "because it rained overnight."]
        assert stl.units[1].startswith("because")

    def test_short_unit_merges_into_predecessor(self):
        # "so be it." alone has 3 tokens; with min 4 it merges backward.
        stl = segment_cot(
            "The committee voted twelve to three so be it.",
            default_lexicon(),
            min_unit_tokens=4,
        )
        assert stl.units == ["The committee voted twelve to three so be it."]

    def test_first_unit_merges_forward(self):
        stl = segment_cot(
            "Yes. Therefore the motion passes with a clear majority.",
            default_lexicon(),
        )
        assert stl.units == ["Yes. Therefore the motion passes with a clear majority."]

    def test_truncation_folds_overflow_into_last_unit(self):
        text = "One sentence here. Another sentence here. A third sentence here. A fourth one here."
        full = segment_cot(text, default_lexicon())
        assert full.length == 4
        capped = segment_cot(text, default_lexicon(), m_max=2)
        assert capped.length == 2
        assert capped.units[0] == full.units[0]
        assert capped.units[1].endswith("A fourth one here.")

    def test_m_max_one_returns_whole_text(self):
        text = "First this. Then that. Finally the other thing happened."
        stl = segment_cot(text, default_lexicon(), m_max=1)
        assert stl.length == 1
        assert stl.units[0] == text


class TestLexicon:
    def test_case_insensitive_match(self):
        lex = default_lexicon()
        match = next(lex.finditer("Therefore it holds"), None)
        assert match is not None and match.group(0) == "Therefore"
        assert lex.category_of("Therefore") == "logical"

    def test_longest_match_first(self):
        lex = default_lexicon()
        match = next(lex.finditer("and as a result we stop"), None)
        assert match is not None
        assert match.group(0) == "as a result"

    def test_word_boundary_anchoring(self):
        lex = default_lexicon()
        assert next(lex.finditer("the sow grazed"), None) is None
        assert next(lex.finditer("they sowed seeds"), None) is None
        assert next(lex.finditer("it is so"), None) is not None

    def test_rejects_duplicates(self):
        with pytest.raises(MalformedLine):
            ConnectorLexicon([("so", "logical"), ("So", "causal")])

    def test_custom_lexicon_file(self, tmp_path):
        path = tmp_path / "lexicon.tsv"
        path.write_text("ergo\tlogical\nowing to\tcausal\n")
        lex = load_lexicon(path)
        assert lex.category_of("ergo") == "logical"
        stl = segment_cot(
            "The bridge failed owing to heavy corrosion damage.", lex, min_unit_tokens=2
        )
        assert stl.units == ["The bridge failed", "owing to heavy corrosion damage."]


def random_corpus(count: int, seed: int = 1234) -> list[str]:
    """Deterministic mixed-texture corpus for the reconstruction property."""
    rng = np.random.default_rng(seed)
    words = (
        "the a some every answer model value fact premise conclusion "
        "check result number question step token unit logic trace *"
    ).split()
    connectors = [p for p, _ in default_lexicon().entries]
    specials = ["3.14", "e.g.", "i.e.", "Dr.", "Mr.", "10.5", "A1", "x2", "étude", "naïve"]
    punct = [".", "!", "?", "...", "?!", ",", ";", ""]
    spaces = [" ", "  ", "\n", "\t", " \n "]

    corpus = []
    for _ in range(count):
        parts = []
        for _ in range(int(rng.integers(1, 40))):
            roll = rng.random()
            if roll < 0.55:
                parts.append(words[int(rng.integers(len(words)))])
            elif roll < 0.75:
                parts.append(connectors[int(rng.integers(len(connectors)))])
            elif roll < 0.85:
                parts.append(specials[int(rng.integers(len(specials)))])
            else:
                parts.append(
                    words[int(rng.integers(len(words)))]
                    + punct[int(rng.integers(len(punct)))]
                )
            parts.append(spaces[int(rng.integers(len(spaces)))])
        text = "".join(parts)
        if text.strip():
            corpus.append(text)
    return corpus


def collapse(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


def assert_contract(text: str, stl) -> None:
    # boundaries partition the source: reconstruction is exact
    rebuilt = "".join(text[start:end] for start, end in stl.boundaries)
    assert rebuilt == text
    assert collapse(rebuilt) == collapse(text)
    # strictly monotone, non-overlapping
    for (s1, e1), (s2, e2) in zip(stl.boundaries, stl.boundaries[1:]):
        assert s1 < e1 <= s2 < e2
    assert all(unit.strip() for unit in stl.units)


class TestProperties:
    def test_reconstruction_on_random_corpus(self):
        corpus = random_corpus(1000)
        assert len(corpus) == 1000
        lexicon = default_lexicon()
        for text in corpus:
            stl = segment_cot(text, lexicon)
            assert_contract(text, stl)
            assert stl.length <= 32

    def test_reconstruction_on_curated_texts(self):
        lexicon = default_lexicon()
        for text in CURATED_COT_TEXTS:
            stl = segment_cot(text, lexicon)
            assert_contract(text, stl)

    def test_determinism(self):
        lexicon = default_lexicon()
        for text in CURATED_COT_TEXTS:
            first = segment_cot(text, lexicon)
            second = segment_cot(text, lexicon)
            assert first.boundaries == second.boundaries
            assert first.units == second.units

    @settings(max_examples=200, deadline=None, derandomize=True)
    @given(st.text(min_size=1, max_size=300))
    def test_reconstruction_on_arbitrary_text(self, text):
        if not text.strip():
            return
        stl = segment_cot(text, default_lexicon())
        assert_contract(text, stl)

    @settings(max_examples=100, deadline=None, derandomize=True)
    @given(st.text(min_size=1, max_size=200), st.integers(min_value=1, max_value=6))
    def test_m_max_respected(self, text, m_max):
        if not text.strip():
            return
        stl = segment_cot(text, default_lexicon(), m_max=m_max)
        assert 1 <= stl.length <= m_max
