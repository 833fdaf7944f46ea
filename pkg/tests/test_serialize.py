from hypothesis import given
from hypothesis import strategies as st

from rolemesh.serialize import canonical_json, digest, dump_yaml, load_yaml

scalars = st.one_of(st.none(), st.booleans(), st.integers(-10**6, 10**6), st.text(max_size=20))
values = st.recursive(scalars, lambda inner: st.one_of(
    st.lists(inner, max_size=4), st.dictionaries(st.text(max_size=6), inner, max_size=4)), max_leaves=12)


@given(values)
def test_yaml_roundtrip(v):
    assert load_yaml(dump_yaml(v)) == v


@given(st.dictionaries(st.text(max_size=5), st.integers(), max_size=6))
def test_canonical_json_ignores_key_order(d):
    flipped = dict(reversed(list(d.items())))
    assert canonical_json(d) == canonical_json(flipped)
    assert digest(d) == digest(flipped)


def test_multiline_strings_use_block_style():
    assert dump_yaml({"t": "a\nb\n"}) == "t: |\n  a\n  b\n"


def test_sets_serialize_sorted():
    assert canonical_json({"s": {"b", "a"}}) == '{"s":["a","b"]}'
    assert len(digest([1])) == 64


def test_exotic_line_breaks_survive():
    for text in ("\x85", "a\x85b\n", "\r\n", "x ", "  "):
        assert load_yaml(dump_yaml({text: text})) == {text: text}
