"""PASCAL-VOC XML annotations, the line-based detection format, and image
label files.

All parsers take text (or bytes) and return values; nothing here touches the
file system. Every failure surfaces as a :class:`FormatError` subclass.
"""

from __future__ import annotations

import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence, Union

from wsod_pgt.geometry import BBox, InvalidBoxError

logger = logging.getLogger(__name__)

TextLike = Union[str, bytes]


class FormatError(ValueError):
    """Base class for every structured parse/validation failure."""


class XMLSyntaxError(FormatError):
    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"malformed XML: {where}{message}")


class SchemaError(FormatError):
    def __init__(self, tag: str, message: str = "missing required tag") -> None:
        self.tag = tag
        super().__init__(f"{message} <{tag}>")


class DataError(FormatError):
    """A syntactically fine record holds an invalid value."""


class LineError(FormatError):
    def __init__(self, lineno: int, message: str) -> None:
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


def _check_token(value: str, what: str) -> None:
    if not value or any(ch.isspace() for ch in value):
        raise DataError(f"{what} must be a nonempty string without whitespace, got {value!r}")


@dataclass(frozen=True)
class Detection:
    image_id: str
    class_name: str
    score: float
    bbox: BBox

    def __post_init__(self) -> None:
        _check_token(self.image_id, "image id")
        _check_token(self.class_name, "class name")
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise DataError(f"score {self.score!r} outside [0, 1]")


@dataclass(frozen=True)
class AnnotatedObject:
    class_name: str
    bbox: BBox

    def __post_init__(self) -> None:
        _check_token(self.class_name, "class name")


@dataclass(frozen=True)
class ImageAnnotation:
    """Boxes of one image. Used for ground truth and for pseudo ground truth
    alike."""

    image_id: str
    width: int
    height: int
    objects: tuple[AnnotatedObject, ...] = ()

    def __post_init__(self) -> None:
        _check_token(self.image_id, "image id")
        for name in ("width", "height"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
                raise DataError(f"{name} must be a positive integer, got {v!r}")
        object.__setattr__(self, "objects", tuple(self.objects))

    def class_names(self) -> list[str]:
        return [o.class_name for o in self.objects]


@dataclass(frozen=True)
class ImageLevelLabels:
    image_id: str
    classes: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        _check_token(self.image_id, "image id")
        object.__setattr__(self, "classes", frozenset(self.classes))


def image_level_labels(a: ImageAnnotation) -> ImageLevelLabels:
    """Class presence of an annotation; the boxes are thrown away."""
    return ImageLevelLabels(a.image_id, frozenset(o.class_name for o in a.objects))


# --------------------------------------------------------------------------
# VOC XML


def _text(parent: ET.Element, path: str) -> str:
    node = parent.find(path)
    if node is None or node.text is None or not node.text.strip():
        raise SchemaError(path)
    return node.text.strip()


def _positive_int(parent: ET.Element, path: str) -> int:
    raw = _text(parent, path)
    try:
        value = float(raw)
    except ValueError:
        raise DataError(f"<{path}> is not a number: {raw!r}") from None
    if not math.isfinite(value) or value != int(value) or value <= 0:
        raise DataError(f"<{path}> must be a positive integer, got {raw!r}")
    return int(value)


def _coord(parent: ET.Element, path: str, index: int) -> float:
    raw = _text(parent, path)
    try:
        value = float(raw)
    except ValueError:
        raise DataError(f"object {index}: <{path}> is not a number: {raw!r}") from None
    if not math.isfinite(value):
        raise DataError(f"object {index}: <{path}> is not finite: {raw!r}")
    return value


def parse_annotation(xml_text: TextLike) -> ImageAnnotation:
    """Parse one VOC annotation document.

    Boxes running past the image border are clamped to it (with a warning);
    boxes that are degenerate before or after clamping raise
    :class:`DataError` naming the object index.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        line = exc.position[0] if getattr(exc, "position", None) else None
        raise XMLSyntaxError(str(exc), line) from None
    except (ValueError, TypeError) as exc:
        raise XMLSyntaxError(str(exc)) from None
    if root.tag != "annotation":
        raise SchemaError("annotation", f"root element is <{root.tag}>, expected")

    filename = _text(root, "filename")
    stem, dot, _ = filename.rpartition(".")
    image_id = stem if dot and stem else filename
    width = _positive_int(root, "size/width")
    height = _positive_int(root, "size/height")

    objects = []
    for index, obj in enumerate(root.findall("object")):
        name = _text(obj, "name")
        if obj.find("bndbox") is None:
            raise SchemaError("object/bndbox")
        raw = [_coord(obj, f"bndbox/{tag}", index) for tag in ("xmin", "ymin", "xmax", "ymax")]
        x0, y0, x1, y1 = raw
        if not (x0 < x1 and y0 < y1):
            raise DataError(f"object {index}: degenerate bndbox {tuple(raw)}")
        clamped = [min(max(x0, 0.0), width), min(max(y0, 0.0), height),
                   min(max(x1, 0.0), width), min(max(y1, 0.0), height)]
        if clamped != raw:
            logger.warning("%s: object %d bndbox %s clamped to image %dx%d",
                           image_id, index, tuple(raw), width, height)
        try:
            box = BBox(*clamped)
            objects.append(AnnotatedObject(name, box))
        except InvalidBoxError:
            raise DataError(f"object {index}: bndbox {tuple(raw)} degenerates "
                            f"after clamping to {width}x{height}") from None
        except DataError as exc:
            raise DataError(f"object {index}: {exc}") from None
    try:
        return ImageAnnotation(image_id, width, height, tuple(objects))
    except DataError as exc:
        raise DataError(f"<filename>: {exc}") from None


def _half_up(v: float) -> int:
    return int(Decimal(repr(v)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def _integer_box(b: BBox, width: int, height: int) -> tuple[int, int, int, int]:
    # Rounding may collapse a thin box; widen it by one pixel inside the image.
    x0, y0, x1, y1 = (_half_up(c) for c in b.as_tuple())
    if x1 <= x0:
        x0, x1 = (x0, x0 + 1) if x0 + 1 <= width else (x1 - 1, x1)
    if y1 <= y0:
        y0, y1 = (y0, y0 + 1) if y0 + 1 <= height else (y1 - 1, y1)
    return x0, y0, x1, y1


def write_annotation(a: ImageAnnotation) -> str:
    """Serialize to VOC XML with integer (half-up rounded) coordinates."""
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = f"{a.image_id}.jpg"
    size = ET.SubElement(root, "size")
    ET.SubElement(size, "width").text = str(a.width)
    ET.SubElement(size, "height").text = str(a.height)
    ET.SubElement(size, "depth").text = "3"
    for obj in a.objects:
        node = ET.SubElement(root, "object")
        ET.SubElement(node, "name").text = obj.class_name
        ET.SubElement(node, "difficult").text = "0"
        bnd = ET.SubElement(node, "bndbox")
        for tag, v in zip(("xmin", "ymin", "xmax", "ymax"),
                          _integer_box(obj.bbox, a.width, a.height)):
            ET.SubElement(bnd, tag).text = str(v)
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


# --------------------------------------------------------------------------
# detection text format: `image_id class score xmin ymin xmax ymax`


def _content_lines(text: TextLike) -> Iterable[tuple[int, list[str]]]:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"input is not UTF-8: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            yield lineno, stripped.split()


def parse_detections(text: TextLike) -> list[Detection]:
    dets = []
    for lineno, fields in _content_lines(text):
        if len(fields) != 7:
            raise LineError(lineno, f"expected 7 fields, got {len(fields)}")
        image_id, class_name = fields[0], fields[1]
        try:
            score, *coords = (float(f) for f in fields[2:])
        except ValueError:
            raise LineError(lineno, "score and coordinates must be numeric") from None
        try:
            dets.append(Detection(image_id, class_name, score, BBox(*coords)))
        except (DataError, InvalidBoxError) as exc:
            raise LineError(lineno, str(exc)) from None
    return dets


def write_detections(dets: Sequence[Detection]) -> str:
    return "".join(
        f"{d.image_id} {d.class_name} {d.score:.6f} "
        f"{d.bbox.xmin:.2f} {d.bbox.ymin:.2f} {d.bbox.xmax:.2f} {d.bbox.ymax:.2f}\n"
        for d in dets
    )


# --------------------------------------------------------------------------
# label files: `image_id class1 class2 ...`


def parse_labels(text: TextLike) -> list[ImageLevelLabels]:
    out = []
    seen = set()
    for lineno, fields in _content_lines(text):
        if fields[0] in seen:
            raise LineError(lineno, f"duplicate image id {fields[0]!r}")
        seen.add(fields[0])
        out.append(ImageLevelLabels(fields[0], frozenset(fields[1:])))
    return out


def write_labels(labels: Sequence[ImageLevelLabels]) -> str:
    return "".join(
        " ".join([lab.image_id, *sorted(lab.classes)]) + "\n" for lab in labels
    )
