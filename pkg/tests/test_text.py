import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from transnar.tasks import ALGORITHMS, generate_instance, make_instance
from transnar.text import (
    VOCAB,
    TokenizationError,
    Vocabulary,
    detokenize,
    format_number,
    max_target_chars,
    normalize_whitespace,
    parse_output,
    parse_prompt,
    render_text,
    tokenize,
)

GOLDEN = json.loads((Path(__file__).parent / "fixtures" / "golden_samples.json").read_text())
instances = st.builds(generate_instance, st.sampled_from(ALGORITHMS), st.integers(1, 14), st.integers(0, 2**31 - 1))


@pytest.mark.parametrize("sample", GOLDEN, ids=lambda s: s["algorithm"])
def test_golden_text_is_byte_identical(sample):
    text = render_text(make_instance(sample["algorithm"], sample["inputs"]))
    assert text.text.encode() == sample["text"].encode()
    assert text.prompt.endswith(": ")


def test_number_formatting():
    assert format_number(0.1) == "0.1"
    assert format_number(0.42) == "0.42"
    assert format_number(-1.0) == "-1"
    assert format_number(3, integer=True) == "3"


@given(instances)
def test_tokenizer_round_trip(inst):
    text = render_text(inst).text
    ids = tokenize(text)
    assert ids[0] == VOCAB.bos_id and ids[-1] == VOCAB.eos_id
    assert detokenize(ids) == text


@given(instances)
def test_rendered_target_parses_to_truth(inst):
    t = render_text(inst)
    parsed = parse_output(t.target, inst.algorithm)
    assert parsed.ok
    np.testing.assert_array_equal(parsed.value, inst.output)


@given(instances)
def test_prompt_parses_back_to_instance(inst):
    assert parse_prompt(render_text(inst).prompt).equals(inst)


@given(instances)
def test_target_budget_is_an_upper_bound(inst):
    assert len(render_text(inst).target) <= max_target_chars(inst.algorithm, inst.size)


def test_unknown_character():
    with pytest.raises(TokenizationError) as e:
        tokenize("key: [0.1 é]")
    assert e.value.char == "é" and e.value.position == 10


def test_vocabulary_file_round_trip():
    again = Vocabulary.load(VOCAB.dumps())
    assert again.tokens == VOCAB.tokens and again.version == VOCAB.version
    assert len(VOCAB) == 74
    assert (VOCAB.pad_id, VOCAB.bos_id, VOCAB.eos_id) == (0, 1, 2)
    with pytest.raises(ValueError):
        Vocabulary.load("a\nb\n")


@pytest.mark.parametrize(
    "raw, alg, reason",
    [
        ("", "insertion_sort", "empty"),
        ("[0.1 x 0.3]", "insertion_sort", "illicit_letters"),
        ("[0.1 ; 0.3]", "insertion_sort", "illicit_characters"),
        ("[0.1 0.2", "insertion_sort", "bad_vector"),
        ("[0.1 0.20]", "insertion_sort", "bad_number"),
        ("2 3", "binary_search", "bad_scalar"),
        ("[[0 1], [0]]", "matrix_chain_order", "ragged_matrix"),
        ("[0 1]", "matrix_chain_order", "bad_matrix"),
        ("[0 1]", "quickselect", "unknown_algorithm"),
    ],
)
def test_parse_failures(raw, alg, reason):
    out = parse_output(raw, alg)
    assert not out.ok and out.reason == reason


def test_parse_tolerates_whitespace_runs():
    assert normalize_whitespace("  [0.1   0.2 ]\n") == "[0.1 0.2]"
    out = parse_output("[ 0  1 1\t1 ]", "task_scheduling")
    assert out.ok and out.value.tolist() == [0, 1, 1, 1]
    assert parse_output("[0.1 0.2 0.3 0.4]", "insertion_sort").ok
    m = parse_output("[[0 0],[0 0]]", "matrix_chain_order")
    assert m.ok and m.value.shape == (2, 2)


@given(st.text(max_size=40))
def test_parser_never_raises(raw):
    for alg in ALGORITHMS:
        out = parse_output(raw, alg)
        assert out.ok == (out.reason is None)


def test_integers_beyond_int64_are_parse_failures():
    assert parse_output("9223372036854775808", "binary_search").reason == "bad_scalar"
    assert parse_output("[1 99999999999999999999 0]", "task_scheduling").reason == "bad_number"
    assert parse_output("9223372036854775807", "binary_search").ok
