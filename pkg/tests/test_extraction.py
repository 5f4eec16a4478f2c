# tests/test_extraction.py

import pytest

from kpitrack.core.errors import ConfigError, ResponseParseError, ResponseSchemaError
from kpitrack.schemas.extraction import Entity, EntityCategory, KpiGroup
from kpitrack.services.extraction import (
    build_prompt,
    canonical_value,
    extract_chunk,
    load_json_object,
    parse_extraction_response,
    serialize_extraction,
    validate_label,
)
from kpitrack.services.prompts import EXTRACTION_TEMPLATE
from kpitrack.services.providers import ReplayProvider, store_response
from tests.helpers import make_chunk


# ***************************************************************
# 1. Prompt
# ***************************************************************
def test_build_prompt_fills_placeholders():
    chunk = make_chunk("Services revenue hit a record.")
    prompt = build_prompt(chunk)
    assert "**Stock Ticker:** AAPL" in prompt
    assert "**Fiscal Period:** FY2023 Q1" in prompt
    assert "**Time of Report:** 2023-02-02" in prompt
    assert prompt.endswith("<text> Services revenue hit a record. </text>\n")
    # Los montos del few-shot no son marcadores
    assert "$10 billion" in prompt
    assert "$tickr" not in prompt and "$target_text" not in prompt


def test_build_prompt_is_deterministic():
    chunk = make_chunk()
    assert build_prompt(chunk) == build_prompt(chunk.model_copy())


def test_build_prompt_empty_text():
    chunk = make_chunk().model_copy(update={"text": ""})
    assert "<text>  </text>" in build_prompt(chunk)


def test_build_prompt_rejects_incomplete_template():
    template = EXTRACTION_TEMPLATE.replace("$target_text", "")
    with pytest.raises(ConfigError) as info:
        build_prompt(make_chunk(), template)
    assert "target_text" in info.value.detail


def test_build_prompt_accepts_braced_placeholders():
    template = "${tickr} ${fiscal_period} ${time_of_report}: ${target_text}"
    assert build_prompt(make_chunk("Hi there.")) != build_prompt(make_chunk("Hi there."), template)
    assert build_prompt(make_chunk("Hi there."), template) == "AAPL FY2023 Q1 2023-02-02: Hi there."


# ***************************************************************
# 2. Parseo de respuestas
# ***************************************************************
def test_parse_example_1(examples):
    ext = parse_extraction_response(examples[1])
    assert len(ext.groups) == 1
    group = ext.groups[0]
    assert group.value == 10000000000.0
    assert group.label == "revenues Quarterly"
    assert group.source_value == "$10 billion"
    assert group.is_range is False
    assert len(ext.entities) == 3


def test_parse_example_2(examples):
    ext = parse_extraction_response(examples[2])
    assert [g.value for g in ext.groups] == [6000000000.0, 5500000000.0]
    assert ext.groups[1].label == "Boeing Defense and Space BDS Revenue during the Quarter"
    assert len(ext.entities) == 7


def test_parse_example_3(examples):
    group = parse_extraction_response(examples[3]).groups[0]
    assert group.is_range is True
    assert group.bottom_of_range == 1200000000.0
    assert group.top_of_range == 1400000000.0
    assert group.value == 1300000000.0
    assert group.label == "expect net income fiscal year 2026"


def test_parse_example_4(examples):
    group = parse_extraction_response(examples[4]).groups[0]
    assert group.value is None
    assert group.value_non_numeric == "record high"
    assert group.label == "AI cloud tool use"


def test_parse_empty_extraction():
    ext = parse_extraction_response('{"Entities": [], "Groups": []}')
    assert ext.entities == [] and ext.groups == [] and ext.dropped_groups == 0


def test_parse_tolerates_fences_and_prose(examples):
    raw = "Here is the output you asked for:\n```json\n" + examples[3] + "\n```\nLet me know!"
    assert parse_extraction_response(raw).groups[0].value == 1300000000.0


def test_parse_skips_leading_braces():
    raw = 'Note {not json} then {"Entities": [], "Groups": []}'
    assert parse_extraction_response(raw).groups == []


def test_parse_without_object():
    with pytest.raises(ResponseParseError):
        parse_extraction_response("I could not find any KPI.")
    with pytest.raises(ResponseParseError):
        load_json_object("")


def test_parse_missing_lists():
    with pytest.raises(ResponseSchemaError):
        parse_extraction_response('{"Entities": []}')
    with pytest.raises(ResponseSchemaError):
        parse_extraction_response('{"Entities": [], "Groups": {}}')


def test_parse_drops_invalid_groups(examples):
    bad = (
        '{"Entities": [], "Groups": ['
        '{"Source": "x", "Entities": [], "Label": "a", "Value": null, "Value_NonNumeric": null},'
        '{"Source": "y", "Entities": [], "Label": "b", "Value": 3.0, "Is_Range": true,'
        ' "Top_of_range": 2.0, "Bottom_of_range": 1.0},'
        '{"Source": "Sales were 4", "Entities": [{"text": "Sales", "category": "kpi_name"}],'
        ' "Label": "Sales", "Value": 4.0}'
        ']}'
    )
    ext = parse_extraction_response(bad, model_id="m1")
    assert ext.dropped_groups == 2
    assert [g.label for g in ext.groups] == ["Sales"]
    # Las entidades de los grupos se suman a la lista del chunk
    assert ext.entities == [Entity(text="Sales", category=EntityCategory.kpi_name)]


def test_parse_drops_entity_outside_source():
    raw = (
        '{"Entities": [], "Groups": [{"Source": "Sales were 4", '
        '"Entities": [{"text": "Revenue", "category": "kpi_name"}], "Label": "Revenue", "Value": 4.0}]}'
    )
    assert parse_extraction_response(raw).dropped_groups == 1


def test_serialize_round_trip(examples):
    for raw in examples.values():
        ext = parse_extraction_response(raw)
        again = parse_extraction_response(serialize_extraction(ext))
        assert again.groups == ext.groups
        assert again.entities == ext.entities


# ***************************************************************
# 3. Valores canónicos
# ***************************************************************
@pytest.mark.parametrize("text, value", [
    ("$10 billion", 10000000000.0),
    ("$5.5 billion", 5500000000.0),
    ("100 basis points", 1.0),
    ("25 bps", 0.25),
    ("19%", 19.0),
    ("46.2 percent", 46.2),
    ("$1,234,567", 1234567.0),
    ("2.5bn", 2500000000.0),
    ("$300 million", 300000000.0),
    ("750 thousand", 750000.0),
    ("-5%", -5.0),
])
def test_canonical_numeric(text, value):
    result = canonical_value(text)
    assert result.is_numeric and not result.is_range
    assert result.value == pytest.approx(value, rel=1e-12)


@pytest.mark.parametrize("text, bottom, top", [
    ("$1.2 billion to $1.4 billion", 1.2e9, 1.4e9),
    ("$10-20 million", 1e7, 2e7),
    ("4% - 5%", 4.0, 5.0),
    ("between 30 and 40 bps", 0.3, 0.4),
])
def test_canonical_range(text, bottom, top):
    result = canonical_value(text)
    assert result.is_range
    assert result.bottom == pytest.approx(bottom)
    assert result.top == pytest.approx(top)
    assert result.value == pytest.approx((bottom + top) / 2)


@pytest.mark.parametrize("text, cleaned", [
    ("record high", "record high"),
    ("  strong   growth ", "strong growth"),
    ("", ""),
])
def test_canonical_non_numeric(text, cleaned):
    result = canonical_value(text)
    assert not result.is_numeric
    assert result.text == cleaned


def test_canonical_scale_words_are_consistent():
    million = canonical_value("$7 million").value
    assert canonical_value("$7 billion").value == pytest.approx(million * 1000)
    assert canonical_value("$7 thousand").value == pytest.approx(million / 1000)


# ***************************************************************
# 4. Validación de etiquetas
# ***************************************************************
def _group(label, *entities):
    items = [Entity(text=text, category=category) for text, category in entities]
    source = " ".join(text for text, _ in entities) + " was 5"
    return KpiGroup(source=source, entities=items, source_value="5", label=label, value=5.0)


CLOUD = ("Cloud", EntityCategory.scope)
REVENUE = ("Revenue", EntityCategory.kpi_name)
Q1 = ("Q1", EntityCategory.date)


def test_validate_label_examples(examples):
    assert validate_label(parse_extraction_response(examples[3]).groups[0]) == []
    assert validate_label(parse_extraction_response(examples[4]).groups[0]) == []
    assert all(validate_label(g) == [] for g in parse_extraction_response(examples[2]).groups)


def test_validate_label_ordered():
    assert validate_label(_group("Cloud Revenue Q1", CLOUD, REVENUE, Q1)) == []


def test_validate_label_wrong_order():
    violations = validate_label(_group("Revenue Cloud Q1", CLOUD, REVENUE, Q1))
    assert len(violations) == 1
    assert "orden" in violations[0]


def test_validate_label_unknown_word():
    violations = validate_label(_group("Cloud Revenue growth Q1", CLOUD, REVENUE, Q1))
    assert len(violations) == 1
    assert "growth" in violations[0]


def test_validate_label_spacing():
    violations = validate_label(_group("Cloud  Revenue", CLOUD, REVENUE))
    assert violations == ["La etiqueta debe separar sus partes con un único espacio."]


def test_validate_label_does_not_mutate():
    group = _group("Revenue Cloud", CLOUD, REVENUE)
    before = group.model_dump()
    validate_label(group)
    assert group.model_dump() == before


# ***************************************************************
# 5. Extracción de un chunk
# ***************************************************************
def test_extract_chunk_from_replay(tmp_path, examples):
    chunk = make_chunk("We have seen record high use of our AI cloud tool.")
    store_response(tmp_path, "deepseek/deepseek-v3.2", build_prompt(chunk), examples[4])
    ext = extract_chunk(ReplayProvider(tmp_path, "deepseek/deepseek-v3.2"), chunk)
    assert ext.status == "ok"
    assert ext.model_id == "deepseek/deepseek-v3.2"
    assert ext.chunk_ref == chunk.ref
    assert ext.groups[0].value_non_numeric == "record high"
    assert len(ext.prompt_hash) == 64


def test_extract_chunk_missing_response(tmp_path):
    ext = extract_chunk(ReplayProvider(tmp_path, "m1"), make_chunk())
    assert ext.status == "failed"
    assert ext.groups == []
    assert "sin respuesta grabada" in ext.error


def test_extract_chunk_unparseable_response(tmp_path):
    chunk = make_chunk()
    store_response(tmp_path, "m1", build_prompt(chunk), "Sorry, no JSON today.")
    ext = extract_chunk(ReplayProvider(tmp_path, "m1"), chunk)
    assert ext.status == "failed"
    assert ext.attempts == 1
