"""Rewrite a new-format OpenCV cascade (``opencv-cascade-classifier``) into
the legacy ``opencv-haar-classifier`` layout read by :mod:`rbivision.cascade`.

Usage::

    python3 tools/convert_cascade.py NEW.xml OLD.xml

Only HAAR/BOOST cascades are handled. Trees of any depth are written out
(the package parser rejects non-stumps itself).
"""
import os
import re
import sys
import xml.etree.ElementTree as ET


def _floats(text):
    return text.split()


def _fmt_rect(r):
    x, y, w, h, wt = r.split()
    return f"{x} {y} {w} {h} {wt}"


def convert(src_path, dst_path):
    raw = open(src_path, encoding="utf-8").read()
    m = re.search(r"<!--.*?-->", raw, re.S)
    header = m.group(0) if m else ""
    root = ET.fromstring(raw)
    casc = root.find("cascade")
    if casc is None or casc.get("type_id") != "opencv-cascade-classifier":
        raise SystemExit("not a new-format cascade")
    if casc.findtext("featureType").strip() != "HAAR":
        raise SystemExit("only HAAR cascades are supported")
    w = int(casc.findtext("width"))
    h = int(casc.findtext("height"))
    features = []
    for f in casc.find("features"):
        rects = [_fmt_rect(r.text) for r in f.find("rects")]
        tilted = (f.findtext("tilted") or "0").strip()
        features.append((rects, tilted))

    name = os.path.splitext(os.path.basename(dst_path))[0]
    out = ['<?xml version="1.0"?>', header, "<opencv_storage>",
           f'<{name} type_id="opencv-haar-classifier">',
           f"  <size>{w} {h}</size>", "  <stages>"]
    for si, st in enumerate(casc.find("stages")):
        out.append("    <_>")
        out.append(f"      <!-- stage {si} -->")
        out.append("      <trees>")
        for ti, wc in enumerate(st.find("weakClassifiers")):
            nodes = [int(float(v)) if i % 4 != 3 else v
                     for i, v in enumerate(_floats(wc.findtext("internalNodes")))]
            leaves = _floats(wc.findtext("leafValues"))
            out.append("        <_>")
            out.append(f"          <!-- tree {ti} -->")
            for ni in range(len(nodes) // 4):
                left, right, fidx, thr = nodes[4 * ni:4 * ni + 4]
                rects, tilted = features[int(fidx)]
                out.append("          <_>")
                out.append("            <feature>")
                out.append("              <rects>")
                for r in rects:
                    out.append(f"                <_>{r}</_>")
                out.append("              </rects>")
                out.append(f"              <tilted>{tilted}</tilted></feature>")
                out.append(f"            <threshold>{thr}</threshold>")
                for side, child in (("left", left), ("right", right)):
                    if child > 0:
                        out.append(f"            <{side}_node>{child}</{side}_node>")
                    else:
                        out.append(f"            <{side}_val>{leaves[-child]}</{side}_val>")
                out.append("          </_>")
            out.append("        </_>")
        out.append("      </trees>")
        out.append(f"      <stage_threshold>{st.findtext('stageThreshold').strip()}</stage_threshold>")
        out.append(f"      <parent>{si - 1}</parent>")
        out.append("      <next>-1</next></_>")
    out.append("  </stages>")
    out.append(f"</{name}>")
    out.append("</opencv_storage>")
    with open(dst_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")


if __name__ == "__main__":
    convert(sys.argv[1], sys.argv[2])
