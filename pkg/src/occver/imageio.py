"""Image files: netpbm (PGM/PPM, 8-bit) and an exact plain-text float grid.

The text format is::

    IMG 1
    m n c
    <m lines, each holding n*c values: row by row, channels interleaved>

Netpbm values are mapped to [0, 1] by dividing by the maxval.
"""
from __future__ import annotations

import os
import re

import numpy as np

from .occlusion import Image


class ImageFormatError(ValueError):
    pass


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dumps_text(img: Image) -> str:
    lines = ["IMG 1", f"{img.m} {img.n} {img.c}"]
    for row in img.pixels:
        lines.append(" ".join(_fmt(v) for v in row.reshape(-1)))
    return "\n".join(lines) + "\n"


def loads_text(text: str) -> Image:
    lines = [ln for ln in text.splitlines()]
    if not lines or lines[0].split() != ["IMG", "1"]:
        raise ImageFormatError("line 1: expected header 'IMG 1'")
    try:
        m, n, c = (int(t) for t in lines[1].split())
    except (ValueError, IndexError):
        raise ImageFormatError("line 2: expected 'm n c'") from None
    rows = []
    for k in range(m):
        lineno = k + 3
        if lineno > len(lines):
            raise ImageFormatError(f"line {lineno}: unexpected end of file")
        toks = lines[lineno - 1].split()
        if len(toks) != n * c:
            raise ImageFormatError(f"line {lineno}: expected {n * c} values, found {len(toks)}")
        try:
            rows.append([float(t) for t in toks])
        except ValueError:
            raise ImageFormatError(f"line {lineno}: non-numeric token") from None
    try:
        return Image(np.array(rows).reshape(m, n, c))
    except ValueError as exc:
        raise ImageFormatError(str(exc)) from None


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_header(data: bytes, count: int):
    pos = 0
    out = []
    for _ in range(count):
        mt = _TOKEN.match(data, pos)
        if mt is None:
            raise ImageFormatError("truncated netpbm header")
        out.append(mt.group(1))
        pos = mt.end()
    return out, pos


def loads_netpbm(data: bytes) -> Image:
    (magic, w, h, maxval), pos = _read_header(data, 4)
    magic = magic.decode("ascii", "replace")
    if magic not in ("P2", "P3", "P5", "P6"):
        raise ImageFormatError(f"unsupported netpbm magic {magic!r}")
    try:
        n, m, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise ImageFormatError("non-integer netpbm header field") from None
    if not 0 < maxval < 256:
        raise ImageFormatError("only 8-bit netpbm images are supported")
    c = 3 if magic in ("P3", "P6") else 1
    count = m * n * c
    if magic in ("P5", "P6"):
        raw = data[pos + 1: pos + 1 + count]
        if len(raw) != count:
            raise ImageFormatError("truncated netpbm raster")
        vals = np.frombuffer(raw, dtype=np.uint8).astype(np.float64)
    else:
        body = re.sub(rb"#[^\n]*", b"", data[pos:]).split()
        if len(body) < count:
            raise ImageFormatError("truncated netpbm raster")
        vals = np.array([int(t) for t in body[:count]], dtype=np.float64)
    return Image((vals / maxval).reshape(m, n, c))


def dumps_netpbm(img: Image, binary: bool = True) -> bytes:
    q = np.rint(img.pixels * 255).astype(np.uint8)
    magic = {(1, True): "P5", (3, True): "P6", (1, False): "P2", (3, False): "P3"}[(img.c, binary)]
    head = f"{magic}\n{img.n} {img.m}\n255\n".encode("ascii")
    if binary:
        return head + q.tobytes()
    rows = [" ".join(str(v) for v in row.reshape(-1)) for row in q]
    return head + ("\n".join(rows) + "\n").encode("ascii")


def load_image(path) -> Image:
    with open(path, "rb") as fh:
        data = fh.read()
    if data.startswith(b"IMG"):
        return loads_text(data.decode("utf-8"))
    if data[:1] == b"P":
        return loads_netpbm(data)
    raise ImageFormatError(f"{os.fspath(path)}: unrecognised image format")


def save_image(img: Image, path) -> None:
    """Write ``img``; the extension picks the format (.pgm/.ppm netpbm, anything else text)."""
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext in (".pgm", ".ppm"):
        if (ext == ".pgm") != (img.c == 1):
            raise ImageFormatError(f"{ext} does not match a {img.c}-channel image")
        with open(path, "wb") as fh:
            fh.write(dumps_netpbm(img))
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(dumps_text(img))
