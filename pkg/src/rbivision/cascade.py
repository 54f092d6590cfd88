"""Viola-Jones cascade model and the legacy OpenCV ``haarcascade`` XML parser.

Only stump-based cascades in the old ``opencv-haar-classifier`` layout are
accepted. Weak classifier semantics follow OpenCV: the feature response is
compared against ``theta``; ``alpha`` is the leaf used when the response is
above the threshold (OpenCV's ``right_val``) and ``beta`` the other one
(``left_val``).
"""
from __future__ import annotations

import math
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Sequence, Union

from .errors import ParseError, UnsupportedCascade


@dataclass(frozen=True)
class RectWeight:
    x: int
    y: int
    w: int
    h: int
    weight: float

    @property
    def area(self) -> int:
        return self.w * self.h


@dataclass(frozen=True)
class HaarFeature:
    rects: tuple[RectWeight, ...]
    tilted: bool = False


@dataclass(frozen=True)
class WeakClassifier:
    feature: HaarFeature
    theta: float
    alpha: float
    beta: float


@dataclass(frozen=True)
class Stage:
    weak: tuple[WeakClassifier, ...]
    stage_threshold: float


@dataclass(frozen=True)
class Cascade:
    stages: tuple[Stage, ...]
    window_width: int
    window_height: int
    name: str = ""

    @property
    def window_area(self) -> int:
        return self.window_width * self.window_height

    @property
    def uses_tilted(self) -> bool:
        return any(wc.feature.tilted for st in self.stages for wc in st.weak)


@dataclass(frozen=True)
class CascadeStats:
    stage_count: int
    weak_per_stage: tuple[int, ...]
    total_weak: int
    window_width: int
    window_height: int

    @property
    def max_stage(self) -> int:
        return max(self.weak_per_stage)


def cascade_stats(c: Cascade) -> CascadeStats:
    per_stage = tuple(len(st.weak) for st in c.stages)
    return CascadeStats(len(c.stages), per_stage, sum(per_stage),
                        c.window_width, c.window_height)


def validate_cascade(c: Cascade) -> None:
    """Check structural invariants; raises :class:`ParseError`."""
    if c.window_width < 4 or c.window_height < 4:
        raise ParseError(f"window {c.window_width}x{c.window_height} is smaller than 4x4")
    if not c.stages:
        raise ParseError("cascade has no stages")
    for si, st in enumerate(c.stages):
        if not st.weak:
            raise ParseError(f"stage {si} has no weak classifiers")
        if not math.isfinite(st.stage_threshold):
            raise ParseError(f"stage {si}: non-finite stage threshold")
        for wi, wc in enumerate(st.weak):
            where = f"stage {si} weak {wi}"
            if not all(math.isfinite(v) for v in (wc.theta, wc.alpha, wc.beta)):
                raise ParseError(f"{where}: non-finite parameter")
            if not 2 <= len(wc.feature.rects) <= 3:
                raise ParseError(f"{where}: feature has {len(wc.feature.rects)} rects")
            for r in wc.feature.rects:
                if r.w <= 0 or r.h <= 0 or r.x < 0 or r.y < 0:
                    raise ParseError(f"{where}: degenerate rect {r}")
                if wc.feature.tilted:
                    # 45-degree rect spans x-h .. x+w and y .. y+w+h
                    inside = (r.x - r.h >= 0 and r.x + r.w <= c.window_width
                              and r.y + r.w + r.h <= c.window_height)
                else:
                    inside = r.x + r.w <= c.window_width and r.y + r.h <= c.window_height
                if not inside:
                    raise ParseError(f"{where}: rect {r} leaves the base window")


# ---------------------------------------------------------------------------
# XML parsing

def _text(el: ET.Element, tag: str, path: str) -> str:
    child = el.find(tag)
    if child is None or child.text is None or not child.text.strip():
        raise ParseError(f"missing <{tag}> in {path}")
    return child.text.strip()


def _num(text: str, path: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"bad number {text!r} in {path}") from None


def _parse_rect(text: str, path: str) -> RectWeight:
    parts = text.split()
    if len(parts) != 5:
        raise ParseError(f"rect needs 5 fields, got {text!r} in {path}")
    try:
        x, y, w, h = (int(p) for p in parts[:4])
    except ValueError:
        raise ParseError(f"bad rect coordinates {text!r} in {path}") from None
    return RectWeight(x, y, w, h, _num(parts[4], path))


def _parse_tree(tree: ET.Element, path: str) -> WeakClassifier:
    nodes = list(tree)
    if not nodes:
        raise ParseError(f"empty tree at {path}")
    node = nodes[0]
    npath = f"{path}/_[0]"
    if len(nodes) > 1 or node.find("left_node") is not None or node.find("right_node") is not None:
        raise UnsupportedCascade(f"decision tree deeper than a stump at {path}")
    feat = node.find("feature")
    if feat is None:
        raise ParseError(f"missing <feature> in {npath}")
    rects_el = feat.find("rects")
    if rects_el is None:
        raise ParseError(f"missing <rects> in {npath}/feature")
    rects = tuple(_parse_rect(r.text or "", f"{npath}/feature/rects/_[{i}]")
                  for i, r in enumerate(rects_el))
    tilted = (feat.findtext("tilted") or "0").strip() not in ("0", "")
    theta = _num(_text(node, "threshold", npath), npath)
    left = _num(_text(node, "left_val", npath), npath)
    right = _num(_text(node, "right_val", npath), npath)
    return WeakClassifier(HaarFeature(rects, tilted), theta, alpha=right, beta=left)


def parse_cascade(xml_bytes: Union[bytes, str]) -> Cascade:
    """Parse an old-format OpenCV haarcascade document."""
    if isinstance(xml_bytes, str):
        xml_bytes = xml_bytes.encode("utf-8")
    try:
        root = ET.fromstring(xml_bytes)
    except ET.ParseError as exc:
        line, col = exc.position
        raise ParseError(f"malformed XML at line {line}, column {col}: {exc}") from None
    if root.tag != "opencv_storage":
        raise ParseError(f"root element is <{root.tag}>, expected <opencv_storage>")
    children = list(root)
    if not children:
        raise ParseError("empty <opencv_storage>")
    body = children[0]
    type_id = body.get("type_id", "")
    if type_id == "opencv-cascade-classifier":
        raise UnsupportedCascade("new-format cascade (opencv-cascade-classifier) is not supported")
    if type_id != "opencv-haar-classifier":
        raise ParseError(f"<{body.tag}> has type_id {type_id!r}, expected opencv-haar-classifier")
    name = body.tag
    size = body.findtext("size")
    if size is None or not size.strip():
        raise ParseError(f"missing <size> in {name}")
    try:
        ww, wh = (int(v) for v in size.split())
    except ValueError:
        raise ParseError(f"bad <size> {size!r} in {name}") from None
    stages_el = body.find("stages")
    if stages_el is None:
        raise ParseError(f"missing <stages> in {name}")
    stages = []
    for si, st in enumerate(stages_el):
        spath = f"{name}/stages/_[{si}]"
        trees = st.find("trees")
        if trees is None:
            raise ParseError(f"missing <trees> in {spath}")
        weak = tuple(_parse_tree(t, f"{spath}/trees/_[{ti}]") for ti, t in enumerate(trees))
        thr = _num(_text(st, "stage_threshold", spath), spath)
        parent = st.findtext("parent")
        if parent is not None and int(parent.strip()) != si - 1:
            raise UnsupportedCascade(f"tree-structured cascade (parent link) at {spath}")
        stages.append(Stage(weak, thr))
    c = Cascade(tuple(stages), ww, wh, name)
    validate_cascade(c)
    return c


def load_cascade(path: Union[str, os.PathLike]) -> Cascade:
    with open(path, "rb") as fh:
        return parse_cascade(fh.read())


# ---------------------------------------------------------------------------
# Canonical dump: one tab-separated line per weak classifier, preceded by
# '#'-prefixed header lines carrying the cascade name, window and stage
# thresholds. Floats use repr() so the dump round-trips exactly.

def dump_cascade(c: Cascade) -> str:
    lines = [f"#cascade\t{c.name}", f"#window\t{c.window_width}\t{c.window_height}"]
    for si, st in enumerate(c.stages):
        lines.append(f"#stage\t{si}\t{st.stage_threshold!r}")
        for wi, wc in enumerate(st.weak):
            cols = [str(si), str(wi), repr(wc.theta), repr(wc.alpha), repr(wc.beta)]
            cols += [f"{r.x},{r.y},{r.w},{r.h},{r.weight!r}" for r in wc.feature.rects]
            if wc.feature.tilted:
                cols.append("tilted")
            lines.append("\t".join(cols))
    return "\n".join(lines) + "\n"


def parse_dump(text: str) -> Cascade:
    name = ""
    window = None
    thresholds: dict[int, float] = {}
    weak: dict[int, list[WeakClassifier]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        cols = line.split("\t")
        try:
            if cols[0] == "#cascade":
                name = cols[1] if len(cols) > 1 else ""
            elif cols[0] == "#window":
                window = (int(cols[1]), int(cols[2]))
            elif cols[0] == "#stage":
                thresholds[int(cols[1])] = float(cols[2])
            else:
                si, wi = int(cols[0]), int(cols[1])
                tilted = cols[-1] == "tilted"
                rect_cols = cols[5:-1] if tilted else cols[5:]
                rects = []
                for rc in rect_cols:
                    x, y, w, h, wt = rc.split(",")
                    rects.append(RectWeight(int(x), int(y), int(w), int(h), float(wt)))
                lst = weak.setdefault(si, [])
                if wi != len(lst):
                    raise ParseError(f"line {lineno}: weak index {wi} out of order")
                lst.append(WeakClassifier(HaarFeature(tuple(rects), tilted),
                                          float(cols[2]), float(cols[3]), float(cols[4])))
        except (ValueError, IndexError):
            raise ParseError(f"line {lineno}: cannot parse {line!r}") from None
    if window is None:
        raise ParseError("dump has no #window line")
    if sorted(weak) != list(range(len(weak))) or sorted(thresholds) != sorted(weak):
        raise ParseError("dump stages are incomplete or out of order")
    stages = tuple(Stage(tuple(weak[i]), thresholds[i]) for i in range(len(weak)))
    c = Cascade(stages, window[0], window[1], name)
    validate_cascade(c)
    return c


def build_cascade(stages: Sequence[Stage], window: tuple[int, int], name: str = "") -> Cascade:
    """Assemble and validate a cascade from in-memory parts."""
    c = Cascade(tuple(stages), int(window[0]), int(window[1]), name)
    validate_cascade(c)
    return c
