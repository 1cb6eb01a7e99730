import logging

import pytest
from hypothesis import given
from hypothesis import strategies as st

from corpus import VOC_DOG_DOG, voc_doc, voc_object, fuzz_corpus
from wsod_pgt.geometry import BBox
from wsod_pgt.voc_io import (
    AnnotatedObject,
    DataError,
    Detection,
    FormatError,
    ImageAnnotation,
    ImageLevelLabels,
    LineError,
    SchemaError,
    XMLSyntaxError,
    image_level_labels,
    parse_annotation,
    parse_detections,
    parse_labels,
    write_annotation,
    write_detections,
    write_labels,
)

def test_parse_real_voc_file():
    a = parse_annotation(VOC_DOG_DOG)
    assert a.image_id == "000001"
    assert (a.width, a.height) == (353, 500)
    assert a.class_names() == ["dog", "dog"]
    assert a.objects[0].bbox == BBox(48, 240, 195, 371)
    assert image_level_labels(a).classes == {"dog"}


def test_parse_bytes_with_declaration():
    a = parse_annotation(b'<?xml version="1.0" encoding="utf-8"?>\n' + voc_doc(voc_object()).encode())
    assert len(a.objects) == 1


def test_zero_objects():
    a = parse_annotation(voc_doc())
    assert a.objects == ()
    assert "<object>" not in write_annotation(a)


def test_degenerate_box_is_data_error_naming_index():
    with pytest.raises(DataError, match="object 1"):
        parse_annotation(voc_doc(voc_object() + voc_object(box=(10, 10, 10, 20))))


def test_missing_tag_is_schema_error_naming_tag():
    with pytest.raises(SchemaError, match="size/height"):
        parse_annotation(voc_doc(size="<size><width>10</width></size>"))
    with pytest.raises(SchemaError, match="filename"):
        parse_annotation("<annotation><size><width>1</width><height>1</height></size></annotation>")
    with pytest.raises(SchemaError, match="bndbox/ymax"):
        parse_annotation(voc_doc("<object><name>a</name><bndbox><xmin>1</xmin><ymin>1</ymin>"
                              "<xmax>3</xmax></bndbox></object>"))


def test_malformed_xml_reports_line():
    with pytest.raises(XMLSyntaxError) as info:
        parse_annotation("<annotation>\n<filename>a.jpg\n</annotation>")
    assert info.value.line == 3


def test_overrun_box_is_clamped_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        a = parse_annotation(voc_doc(voc_object(box=(-3, 5, 101, 81))))
    assert a.objects[0].bbox == BBox(0, 5, 100, 80)
    assert "clamped" in caplog.text


def test_box_outside_image_degenerates_after_clamping():
    with pytest.raises(DataError, match="object 0"):
        parse_annotation(voc_doc(voc_object(box=(150, 5, 160, 20))))


def test_unknown_tags_ignored_and_order_kept():
    a = parse_annotation(voc_doc("<weird>1</weird>" + voc_object("b") + voc_object("a") + voc_object("c")))
    assert a.class_names() == ["b", "a", "c"]


def test_write_preserves_count_and_order():
    objs = tuple(AnnotatedObject(n, BBox(i, i, i + 5, i + 7)) for i, n in enumerate("zyxw"))
    a = ImageAnnotation("im", 50, 50, objs)
    text = write_annotation(a)
    assert text.count("<object>") == 4
    assert parse_annotation(text) == a


def test_write_rounds_half_up_and_never_degenerates():
    a = ImageAnnotation("im", 50, 50, (AnnotatedObject("c", BBox(1.5, 2.49, 10.5, 2.51)),
                                       AnnotatedObject("d", BBox(49.6, 0, 49.9, 3))))
    back = parse_annotation(write_annotation(a))
    assert back.objects[0].bbox == BBox(2, 2, 11, 3)
    assert back.objects[1].bbox == BBox(49, 0, 50, 3)


@st.composite
def annotations(draw):
    w = draw(st.integers(1, 1000))
    h = draw(st.integers(1, 1000))
    names = st.text(alphabet="abcdefghijklmnopqrstuvwxyz_", min_size=1, max_size=8)
    objs = []
    for _ in range(draw(st.integers(0, 6))):
        x0 = draw(st.integers(0, w - 1))
        y0 = draw(st.integers(0, h - 1))
        objs.append(AnnotatedObject(draw(names), BBox(x0, y0, draw(st.integers(x0 + 1, w)), draw(st.integers(y0 + 1, h)))))
    image_id = draw(st.text(alphabet="0123456789abc_-.", min_size=1, max_size=10))
    return ImageAnnotation(image_id, w, h, tuple(objs))


@given(annotations())
def test_annotation_round_trip(a):
    assert parse_annotation(write_annotation(a)) == a


@given(annotations(), st.data())
def test_labels_idempotent_under_duplication(a, data):
    if not a.objects:
        return
    i = data.draw(st.integers(0, len(a.objects) - 1))
    doubled = ImageAnnotation(a.image_id, a.width, a.height, a.objects + (a.objects[i],))
    assert image_level_labels(doubled) == image_level_labels(a)


def test_image_level_labels_examples():
    objs = tuple(AnnotatedObject(n, BBox(0, 0, 1, 1)) for n in ["dog", "dog", "cat"])
    assert image_level_labels(ImageAnnotation("i", 5, 5, objs)).classes == {"dog", "cat"}
    assert image_level_labels(ImageAnnotation("i", 5, 5)).classes == frozenset()
    one = (AnnotatedObject("person", BBox(0, 0, 2, 2)),)
    assert image_level_labels(ImageAnnotation("i", 5, 5, one)).classes == {"person"}


# --------------------------------------------------------------------------
# detections


def test_parse_detection_line():
    (d,) = parse_detections("000001 dog 0.9 10 10 50 80")
    assert d == Detection("000001", "dog", 0.9, BBox(10, 10, 50, 80))


def test_empty_and_comment_only_files():
    assert parse_detections("") == []
    assert parse_detections("# nothing\n\n   \n") == []


@pytest.mark.parametrize(
    "text, lineno",
    [
        ("000001 dog 1.5 10 10 50 80", 1),
        ("a dog 0.5 1 1 2 2\n000001 dog 0.5 10 10", 2),
        ("000001 dog high 10 10 50 80", 1),
        ("\n\n000001 dog 0.5 10 10 5 80", 3),
        ("000001 dog nan 10 10 50 80", 1),
    ],
)
def test_detection_errors_carry_line_number(text, lineno):
    with pytest.raises(LineError) as info:
        parse_detections(text)
    assert info.value.lineno == lineno


def test_score_bounds_inclusive():
    assert [d.score for d in parse_detections("a c 0 1 1 2 2\na c 1 1 1 2 2")] == [0.0, 1.0]


@pytest.mark.parametrize(
    "dets",
    [
        [],
        [Detection("000001", "dog", 0.9, BBox(10, 10, 50, 80))],
        [Detection("a", "cat", 0.123456, BBox(0.25, 1.5, 3.75, 9.99)),
         Detection("b", "dog", 1.0, BBox(0, 0, 1, 1)),
         Detection("a", "cat", 0.0, BBox(5, 5, 6.01, 7))],
    ],
)
def test_detection_round_trip_examples(dets):
    assert parse_detections(write_detections(dets)) == dets


@given(st.lists(st.tuples(
    st.sampled_from(["a", "b", "000005"]), st.sampled_from(["cat", "dog"]),
    st.integers(0, 10**6), st.integers(0, 10**5), st.integers(0, 10**5),
    st.integers(1, 10**4), st.integers(1, 10**4)), max_size=10))
def test_detection_round_trip(rows):
    dets = [Detection(i, c, s / 10**6, BBox(x / 100, y / 100, (x + w) / 100, (y + h) / 100))
            for i, c, s, x, y, w, h in rows]
    assert parse_detections(write_detections(dets)) == dets


def test_labels_round_trip():
    labels = [ImageLevelLabels("1", frozenset({"dog", "cat"})), ImageLevelLabels("2")]
    assert parse_labels(write_labels(labels)) == labels


# --------------------------------------------------------------------------
# fuzzing: arbitrary input may only ever produce FormatError


@given(st.binary(max_size=300))
def test_parse_annotation_never_crashes_on_bytes(blob):
    try:
        parse_annotation(blob)
    except FormatError:
        pass


@given(st.text(max_size=300))
def test_parse_annotation_never_crashes_on_text(text):
    try:
        parse_annotation(text)
    except FormatError:
        pass


@given(st.binary(max_size=300))
def test_parse_detections_never_crashes(blob):
    try:
        parse_detections(blob)
    except FormatError:
        pass


def test_mutation_fuzz_small():
    for text in fuzz_corpus(500, seed=1):
        try:
            parse_annotation(text)
        except FormatError:
            pass
