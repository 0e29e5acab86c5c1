"""Reader for digitally generated PDF files.

Parses the object graph of a PDF, decodes its streams, and interprets
page content streams into positioned text runs, stroked line segments,
and placed raster images. The supported subset is the one that common
report generators emit: classic cross-reference tables or directly
scannable object headers, Flate / ASCII85 / DCT stream filters, text
positioned with Tm/Td/T*, and straight-line path construction.

Encrypted documents and structurally broken files raise UnparseablePdf
rather than producing partial output.
"""

from __future__ import annotations

import base64
import io
import re
import zlib
from dataclasses import dataclass, field

__all__ = [
    "UnparseablePdf",
    "Ref",
    "StreamObject",
    "TextRun",
    "Segment",
    "PlacedImage",
    "PageContent",
    "Page",
    "PdfFile",
    "parse_object",
    "read_pdf",
]


class UnparseablePdf(Exception):
    """The file is not a PDF this reader can interpret."""


_WHITESPACE = b"\x00\t\n\x0c\r "
_DELIMITERS = b"()<>[]{}/%"


@dataclass(frozen=True)
class Ref:
    """Indirect object reference."""

    num: int
    gen: int


@dataclass(frozen=True)
class StreamObject:
    """Stream dictionary plus its raw (still encoded) data."""

    attrs: dict
    raw: bytes


class _Lexer:
    """Tokenizer over the raw bytes of a PDF body."""

    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def _skip_filler(self) -> None:
        data, n = self.data, len(self.data)
        while self.pos < n:
            b = data[self.pos]
            if b in _WHITESPACE:
                self.pos += 1
            elif b == 0x25:  # percent sign opens a comment to end of line
                while self.pos < n and data[self.pos] not in b"\r\n":
                    self.pos += 1
            else:
                return

    def peek_byte(self) -> int | None:
        self._skip_filler()
        if self.pos >= len(self.data):
            return None
        return self.data[self.pos]

    def next_token(self) -> tuple[str, object]:
        """Return (kind, value); kind is one of number, name, string,
        dict_open, dict_close, array_open, array_close, keyword."""
        self._skip_filler()
        data, n = self.data, len(self.data)
        if self.pos >= n:
            raise UnparseablePdf("unexpected end of data")
        b = data[self.pos]
        if b == 0x2F:  # solidus
            return ("name", self._read_name())
        if b == 0x28:  # left paren
            return ("string", self._read_literal_string())
        if b == 0x3C:  # less-than
            if data[self.pos : self.pos + 2] == b"<<":
                self.pos += 2
                return ("dict_open", None)
            return ("string", self._read_hex_string())
        if data[self.pos : self.pos + 2] == b">>":
            self.pos += 2
            return ("dict_close", None)
        if b == 0x5B:
            self.pos += 1
            return ("array_open", None)
        if b == 0x5D:
            self.pos += 1
            return ("array_close", None)
        if b in b"+-." or 0x30 <= b <= 0x39:
            return ("number", self._read_number())
        return ("keyword", self._read_keyword())

    def _read_name(self) -> str:
        data, n = self.data, len(self.data)
        self.pos += 1
        out = bytearray()
        while self.pos < n:
            b = data[self.pos]
            if b in _WHITESPACE or b in _DELIMITERS:
                break
            if b == 0x23 and self.pos + 2 < n:  # number sign escape
                try:
                    out.append(int(data[self.pos + 1 : self.pos + 3], 16))
                    self.pos += 3
                    continue
                except ValueError:
                    pass
            out.append(b)
            self.pos += 1
        return out.decode("latin-1")

    def _read_literal_string(self) -> bytes:
        data, n = self.data, len(self.data)
        self.pos += 1
        out = bytearray()
        depth = 1
        while self.pos < n:
            b = data[self.pos]
            if b == 0x5C:  # backslash
                self.pos += 1
                if self.pos >= n:
                    break
                e = data[self.pos]
                simple = {
                    0x6E: 0x0A, 0x72: 0x0D, 0x74: 0x09, 0x62: 0x08,
                    0x66: 0x0C, 0x28: 0x28, 0x29: 0x29, 0x5C: 0x5C,
                }
                if e in simple:
                    out.append(simple[e])
                    self.pos += 1
                elif 0x30 <= e <= 0x37:  # up to three octal digits
                    digits = bytearray()
                    while len(digits) < 3 and self.pos < n and 0x30 <= data[self.pos] <= 0x37:
                        digits.append(data[self.pos])
                        self.pos += 1
                    out.append(int(digits, 8) & 0xFF)
                elif e in b"\r\n":  # line continuation
                    self.pos += 1
                    if e == 0x0D and self.pos < n and data[self.pos] == 0x0A:
                        self.pos += 1
                else:
                    out.append(e)
                    self.pos += 1
            elif b == 0x28:
                depth += 1
                out.append(b)
                self.pos += 1
            elif b == 0x29:
                depth -= 1
                if depth == 0:
                    self.pos += 1
                    return bytes(out)
                out.append(b)
                self.pos += 1
            else:
                out.append(b)
                self.pos += 1
        raise UnparseablePdf("unterminated literal string")

    def _read_hex_string(self) -> bytes:
        data, n = self.data, len(self.data)
        self.pos += 1
        digits = bytearray()
        while self.pos < n:
            b = data[self.pos]
            self.pos += 1
            if b == 0x3E:
                if len(digits) % 2:  # odd count: final digit implies trailing zero
                    digits.append(0x30)
                try:
                    return bytes.fromhex(digits.decode("ascii"))
                except ValueError as exc:
                    raise UnparseablePdf("bad hex string") from exc
            if b not in _WHITESPACE:
                digits.append(b)
        raise UnparseablePdf("unterminated hex string")

    def _read_number(self) -> int | float:
        data, n = self.data, len(self.data)
        start = self.pos
        self.pos += 1
        while self.pos < n and (data[self.pos] in b"+-.0123456789"):
            self.pos += 1
        text = data[start : self.pos].decode("ascii", "replace")
        try:
            if "." in text:
                return float(text)
            return int(text)
        except ValueError as exc:
            raise UnparseablePdf(f"bad number {text!r}") from exc

    def _read_keyword(self) -> str:
        data, n = self.data, len(self.data)
        start = self.pos
        while self.pos < n:
            b = data[self.pos]
            if b in _WHITESPACE or b in _DELIMITERS:
                break
            self.pos += 1
        if self.pos == start:
            raise UnparseablePdf(f"stray byte {data[start]:#x} at offset {start}")
        return data[start : self.pos].decode("latin-1")


def parse_object(lexer: _Lexer):
    """Parse one object at the lexer position.

    Names come back as str, strings as bytes, numbers as int or float,
    dictionaries as dict keyed by name, and indirect references as Ref.
    """
    kind, value = lexer.next_token()
    if kind == "number":
        # A reference is two non-negative integers followed by the
        # keyword R; peek without consuming on mismatch.
        if isinstance(value, int) and value >= 0:
            save = lexer.pos
            try:
                k2, v2 = lexer.next_token()
                if k2 == "number" and isinstance(v2, int) and v2 >= 0:
                    k3, v3 = lexer.next_token()
                    if k3 == "keyword" and v3 == "R":
                        return Ref(value, v2)
            except UnparseablePdf:
                pass
            lexer.pos = save
        return value
    if kind in ("name", "string"):
        return value
    if kind == "array_open":
        items = []
        while True:
            b = lexer.peek_byte()
            if b is None:
                raise UnparseablePdf("unterminated array")
            if b == 0x5D:
                lexer.next_token()
                return items
            items.append(parse_object(lexer))
    if kind == "dict_open":
        out: dict = {}
        while True:
            k, v = lexer.next_token()
            if k == "dict_close":
                return out
            if k != "name":
                raise UnparseablePdf(f"dictionary key is {k}, not a name")
            out[v] = parse_object(lexer)
    if kind == "keyword":
        if value == "true":
            return True
        if value == "false":
            return False
        if value == "null":
            return None
        raise UnparseablePdf(f"unexpected keyword {value!r}")
    raise UnparseablePdf(f"unexpected token {kind}")


_OBJ_HEADER = re.compile(rb"(?<![0-9])(\d{1,9})\s+(\d{1,5})\s+obj\b")


def _decode_stream(attrs: dict, raw: bytes, resolve) -> tuple[bytes, str | None]:
    """Apply the filter chain. Returns (data, image_codec) where
    image_codec is "jpeg" when the chain ends in DCTDecode (the JPEG
    bytes are returned undecoded for the raster library)."""
    filters = attrs.get("Filter", [])
    if isinstance(filters, str):
        filters = [filters]
    filters = [resolve(f) for f in (filters or [])]
    data = raw
    for name in filters:
        if name == "FlateDecode":
            try:
                data = zlib.decompress(data)
            except zlib.error as exc:
                raise UnparseablePdf(f"bad Flate stream: {exc}") from exc
        elif name in ("ASCII85Decode", "A85"):
            text = data.strip()
            try:
                data = base64.a85decode(text, adobe=True)
            except ValueError:
                try:
                    data = base64.a85decode(text.rstrip(b"~>"), adobe=False, ignorechars=b" \t\r\n")
                except ValueError as exc:
                    raise UnparseablePdf(f"bad ASCII85 stream: {exc}") from exc
        elif name in ("DCTDecode", "DCT"):
            return data, "jpeg"
        elif name == "ASCIIHexDecode":
            digits = bytes(b for b in data if b not in _WHITESPACE).rstrip(b">")
            if len(digits) % 2:
                digits += b"0"
            try:
                data = bytes.fromhex(digits.decode("ascii"))
            except (ValueError, UnicodeDecodeError) as exc:
                raise UnparseablePdf("bad ASCIIHex stream") from exc
        else:
            raise UnparseablePdf(f"unsupported stream filter /{name}")
    return data, None


# --- content stream geometry ---------------------------------------------

_IDENTITY = (1.0, 0.0, 0.0, 1.0, 0.0, 0.0)


def _mat_mul(m: tuple, n: tuple) -> tuple:
    """Row-vector convention: point @ m @ n."""
    a, b, c, d, e, f = m
    a2, b2, c2, d2, e2, f2 = n
    return (
        a * a2 + b * c2,
        a * b2 + b * d2,
        c * a2 + d * c2,
        c * b2 + d * d2,
        e * a2 + f * c2 + e2,
        e * b2 + f * d2 + f2,
    )


def _apply(m: tuple, x: float, y: float) -> tuple[float, float]:
    a, b, c, d, e, f = m
    return (a * x + c * y + e, b * x + d * y + f)


@dataclass(frozen=True)
class TextRun:
    """One shown string with its device-space baseline origin."""

    x: float
    y: float
    size: float
    font: str
    text: str


@dataclass(frozen=True)
class Segment:
    """One stroked straight line in device space."""

    x0: float
    y0: float
    x1: float
    y1: float


@dataclass(frozen=True)
class PlacedImage:
    """A raster XObject drawn on the page.

    bbox is the device-space rectangle covered by the unit image
    square; pixel data stays encoded until decode_rgb is called.
    """

    name: str
    x0: float
    y0: float
    x1: float
    y1: float
    width_px: int
    height_px: int
    color_space: str
    bits: int
    data: bytes
    codec: str | None  # None for raw samples, "jpeg" for DCT streams

    def decode_rgb(self):
        """Return (rgb_bytes, width, height) of the decoded samples.

        Raises ValueError when the sample data does not match its
        declared geometry or cannot be decoded.
        """
        from PIL import Image

        if self.codec == "jpeg":
            try:
                img = Image.open(io.BytesIO(self.data))
                img = img.convert("RGB")
            except Exception as exc:
                raise ValueError(f"undecodable JPEG data: {exc}") from exc
            return img.tobytes(), img.width, img.height
        if self.bits != 8:
            raise ValueError(f"unsupported bit depth {self.bits}")
        if self.color_space == "DeviceRGB":
            expected = self.width_px * self.height_px * 3
            if len(self.data) < expected:
                raise ValueError("truncated RGB samples")
            return self.data[:expected], self.width_px, self.height_px
        if self.color_space == "DeviceGray":
            expected = self.width_px * self.height_px
            if len(self.data) < expected:
                raise ValueError("truncated gray samples")
            img = Image.frombytes("L", (self.width_px, self.height_px), self.data[:expected])
            return img.convert("RGB").tobytes(), self.width_px, self.height_px
        raise ValueError(f"unsupported color space {self.color_space}")


@dataclass
class PageContent:
    runs: list[TextRun] = field(default_factory=list)
    segments: list[Segment] = field(default_factory=list)
    images: list[PlacedImage] = field(default_factory=list)


@dataclass
class Page:
    number: int
    width: float
    height: float
    content: PageContent


class _GraphicsState:
    __slots__ = ("ctm", "font", "size", "leading")

    def __init__(self, ctm=_IDENTITY, font="", size=0.0, leading=0.0):
        self.ctm = ctm
        self.font = font
        self.size = size
        self.leading = leading

    def clone(self) -> "_GraphicsState":
        return _GraphicsState(self.ctm, self.font, self.size, self.leading)


class PdfFile:
    """Parsed PDF object graph with lazy indirect-object resolution."""

    def __init__(self, data: bytes):
        if not data.startswith(b"%PDF-"):
            raise UnparseablePdf("missing %PDF header")
        if b"%%EOF" not in data[-2048:] and b"%%EOF" not in data:
            raise UnparseablePdf("missing %%EOF marker")
        self.data = data
        self._offsets: dict[int, int] = {}
        for m in _OBJ_HEADER.finditer(data):
            self._offsets[int(m.group(1))] = m.start()
        if not self._offsets:
            raise UnparseablePdf("no indirect objects found")
        self._cache: dict[int, object] = {}
        self._trailer = self._read_trailer()
        if "Encrypt" in self._trailer:
            raise UnparseablePdf("document is encrypted")
        self._root = self._find_root()

    # -- object graph -----------------------------------------------------

    def _read_trailer(self) -> dict:
        merged: dict = {}
        for m in re.finditer(rb"trailer\b", self.data):
            lexer = _Lexer(self.data, m.end())
            try:
                obj = parse_object(lexer)
            except UnparseablePdf:
                continue
            if isinstance(obj, dict):
                merged.update(obj)
        return merged

    def _find_root(self) -> dict:
        root_ref = self._trailer.get("Root")
        if root_ref is not None:
            root = self.resolve(root_ref)
            if isinstance(root, dict) and "Pages" in root:
                return root
        # No usable trailer: scan objects for the catalog.
        for num in sorted(self._offsets):
            try:
                obj = self.object_at(num)
            except UnparseablePdf:
                continue
            if isinstance(obj, dict) and obj.get("Type") == "Catalog" and "Pages" in obj:
                return obj
        raise UnparseablePdf("no document catalog")

    def object_at(self, num: int):
        if num in self._cache:
            return self._cache[num]
        offset = self._offsets.get(num)
        if offset is None:
            raise UnparseablePdf(f"missing object {num}")
        lexer = _Lexer(self.data, offset)
        k, v = lexer.next_token()
        if k != "number" or v != num:
            raise UnparseablePdf(f"object header mismatch at {offset}")
        lexer.next_token()  # generation
        k, v = lexer.next_token()
        if (k, v) != ("keyword", "obj"):
            raise UnparseablePdf(f"expected obj keyword for object {num}")
        obj = parse_object(lexer)
        b = lexer.peek_byte()
        if b is not None:
            save = lexer.pos
            try:
                k, v = lexer.next_token()
            except UnparseablePdf:
                k, v = "", None
            if (k, v) == ("keyword", "stream"):
                if not isinstance(obj, dict):
                    raise UnparseablePdf(f"stream without dictionary in object {num}")
                # Stream data starts after the EOL that follows the
                # stream keyword; lexer.pos sits right past the keyword.
                pos = lexer.pos
                if self.data[pos : pos + 2] == b"\r\n":
                    start = pos + 2
                elif self.data[pos : pos + 1] in (b"\n", b"\r"):
                    start = pos + 1
                else:
                    raise UnparseablePdf(f"malformed stream keyword in object {num}")
                length = self.resolve(obj.get("Length"))
                if isinstance(length, int) and 0 <= length <= len(self.data) - start:
                    raw = self.data[start : start + length]
                    tail = self.data[start + length : start + length + 20]
                    if b"endstream" not in tail:
                        length = None  # declared length disagrees with markers
                else:
                    length = None
                if length is None:
                    end = self.data.find(b"endstream", start)
                    if end < 0:
                        raise UnparseablePdf(f"unterminated stream in object {num}")
                    raw = self.data[start:end].rstrip(b"\r\n")
                obj = StreamObject(obj, raw)
            else:
                lexer.pos = save
        self._cache[num] = obj
        return obj

    def resolve(self, obj):
        """Follow reference chains to a direct object."""
        seen = 0
        while isinstance(obj, Ref):
            obj = self.object_at(obj.num)
            seen += 1
            if seen > 32:
                raise UnparseablePdf("reference cycle")
        return obj

    def stream_data(self, stream: StreamObject) -> tuple[bytes, str | None]:
        return _decode_stream(stream.attrs, stream.raw, self.resolve)

    # -- page tree ----------------------------------------------------------

    def pages(self) -> list[Page]:
        pages_node = self.resolve(self._root.get("Pages"))
        if not isinstance(pages_node, dict):
            raise UnparseablePdf("catalog has no page tree")
        leaves: list[tuple[dict, dict]] = []

        def walk(node: dict, inherited: dict, depth: int) -> None:
            if depth > 64:
                raise UnparseablePdf("page tree too deep")
            merged = dict(inherited)
            for key in ("Resources", "MediaBox", "Rotate"):
                if key in node:
                    merged[key] = node[key]
            ntype = node.get("Type")
            if ntype == "Pages" or "Kids" in node:
                kids = self.resolve(node.get("Kids", []))
                if not isinstance(kids, list):
                    raise UnparseablePdf("page tree kids is not an array")
                for kid in kids:
                    child = self.resolve(kid)
                    if not isinstance(child, dict):
                        raise UnparseablePdf("page tree kid is not a dictionary")
                    walk(child, merged, depth + 1)
            else:
                leaves.append((node, merged))

        walk(pages_node, {}, 0)
        if not leaves:
            raise UnparseablePdf("document has no pages")
        out = []
        for idx, (node, merged) in enumerate(leaves, start=1):
            box = self.resolve(node.get("MediaBox", merged.get("MediaBox")))
            if not (isinstance(box, list) and len(box) == 4):
                raise UnparseablePdf(f"page {idx} has no MediaBox")
            box = [float(self.resolve(v)) for v in box]
            width = box[2] - box[0]
            height = box[3] - box[1]
            if width <= 0 or height <= 0:
                raise UnparseablePdf(f"page {idx} has a degenerate MediaBox")
            resources = self.resolve(node.get("Resources", merged.get("Resources", {}))) or {}
            content = self._interpret_page(node, resources)
            out.append(Page(number=idx, width=width, height=height, content=content))
        return out

    def _page_content_bytes(self, node: dict) -> bytes:
        contents = self.resolve(node.get("Contents"))
        if contents is None:
            return b""
        parts = []
        items = contents if isinstance(contents, list) else [contents]
        for item in items:
            item = self.resolve(item)
            if not isinstance(item, StreamObject):
                raise UnparseablePdf("page contents is not a stream")
            data, codec = self.stream_data(item)
            if codec is not None:
                raise UnparseablePdf("image codec on a content stream")
            parts.append(data)
        return b"\n".join(parts)

    # -- content interpreter ------------------------------------------------

    def _interpret_page(self, node: dict, resources: dict) -> PageContent:
        content = PageContent()
        data = self._page_content_bytes(node)
        self._run_content(data, resources, _GraphicsState(), content, depth=0)
        return content

    def _xobject(self, resources: dict, name: str):
        xobjects = self.resolve(resources.get("XObject", {})) or {}
        entry = xobjects.get(name)
        if entry is None:
            return None
        return self.resolve(entry)

    def _run_content(
        self,
        data: bytes,
        resources: dict,
        state: _GraphicsState,
        out: PageContent,
        depth: int,
    ) -> None:
        if depth > 8:
            raise UnparseablePdf("form XObjects nested too deeply")
        lexer = _Lexer(data)
        stack: list = []
        gs_stack: list[_GraphicsState] = []
        tm = lm = _IDENTITY
        path: list[Segment] = []
        current: tuple[float, float] | None = None
        subpath_start: tuple[float, float] | None = None

        def popf(n: int) -> list[float]:
            if len(stack) < n:
                raise UnparseablePdf("operand stack underflow")
            vals = stack[-n:]
            del stack[-n:]
            return [float(v) for v in vals]

        while True:
            if lexer.peek_byte() is None:
                return
            try:
                kind, value = lexer.next_token()
            except UnparseablePdf:
                return
            if kind in ("number", "name", "string"):
                stack.append(value)
                continue
            if kind == "array_open":
                lexer.pos -= 1
                stack.append(parse_object(lexer))
                continue
            if kind == "dict_open":
                lexer.pos -= 2
                stack.append(parse_object(lexer))
                continue
            if kind in ("array_close", "dict_close"):
                raise UnparseablePdf("unbalanced bracket in content stream")

            op = value
            if op == "q":
                gs_stack.append(state.clone())
            elif op == "Q":
                if gs_stack:
                    state = gs_stack.pop()
            elif op == "cm":
                vals = popf(6)
                state.ctm = _mat_mul(tuple(vals), state.ctm)
            elif op == "BT":
                tm = lm = _IDENTITY
            elif op == "ET":
                pass
            elif op == "Tf":
                size = popf(1)[0]
                font = stack.pop() if stack else ""
                state.font = str(font)
                state.size = size
            elif op == "TL":
                state.leading = popf(1)[0]
            elif op == "Tm":
                vals = popf(6)
                tm = lm = tuple(vals)
            elif op in ("Td", "TD"):
                tx, ty = popf(2)
                if op == "TD":
                    state.leading = -ty
                lm = _mat_mul((1, 0, 0, 1, tx, ty), lm)
                tm = lm
            elif op == "T*":
                lm = _mat_mul((1, 0, 0, 1, 0, -state.leading), lm)
                tm = lm
            elif op in ("Tj", "'", '"'):
                if op == '"':
                    text = stack.pop() if stack else b""
                    popf(2)  # word and char spacing
                else:
                    text = stack.pop() if stack else b""
                if op in ("'", '"'):
                    lm = _mat_mul((1, 0, 0, 1, 0, -state.leading), lm)
                    tm = lm
                tm = self._emit_text(text, tm, state, out)
            elif op == "TJ":
                parts = stack.pop() if stack else []
                if isinstance(parts, list):
                    shown = b"".join(p for p in parts if isinstance(p, bytes))
                    tm = self._emit_text(shown, tm, state, out)
            elif op == "m":
                x, y = popf(2)
                current = _apply(state.ctm, x, y)
                subpath_start = current
            elif op == "l":
                x, y = popf(2)
                pt = _apply(state.ctm, x, y)
                if current is not None:
                    path.append(Segment(current[0], current[1], pt[0], pt[1]))
                current = pt
            elif op in ("c", "v", "y"):
                # Curves are flattened to their chord; lattice grids and
                # chart frames never rely on curve interiors.
                n = {"c": 6, "v": 4, "y": 4}[op]
                vals = popf(n)
                pt = _apply(state.ctm, vals[-2], vals[-1])
                if current is not None:
                    path.append(Segment(current[0], current[1], pt[0], pt[1]))
                current = pt
            elif op == "re":
                x, y, w, h = popf(4)
                corners = [
                    _apply(state.ctm, x, y),
                    _apply(state.ctm, x + w, y),
                    _apply(state.ctm, x + w, y + h),
                    _apply(state.ctm, x, y + h),
                ]
                for i in range(4):
                    a = corners[i]
                    b = corners[(i + 1) % 4]
                    path.append(Segment(a[0], a[1], b[0], b[1]))
                current = corners[0]
                subpath_start = corners[0]
            elif op == "h":
                if current is not None and subpath_start is not None and current != subpath_start:
                    path.append(Segment(current[0], current[1], subpath_start[0], subpath_start[1]))
                current = subpath_start
            elif op in ("S", "s", "f", "F", "f*", "B", "B*", "b", "b*"):
                if op in ("s", "b", "b*") and current is not None and subpath_start is not None:
                    if current != subpath_start:
                        path.append(Segment(current[0], current[1], subpath_start[0], subpath_start[1]))
                out.segments.extend(path)
                path = []
                current = subpath_start = None
            elif op == "n":
                path = []
                current = subpath_start = None
            elif op == "Do":
                name = stack.pop() if stack else None
                xobj = self._xobject(resources, name) if isinstance(name, str) else None
                if isinstance(xobj, StreamObject):
                    subtype = self.resolve(xobj.attrs.get("Subtype"))
                    if subtype == "Image":
                        self._emit_image(name, xobj, state.ctm, out)
                    elif subtype == "Form":
                        inner = state.clone()
                        matrix = self.resolve(xobj.attrs.get("Matrix"))
                        if isinstance(matrix, list) and len(matrix) == 6:
                            inner.ctm = _mat_mul(tuple(float(v) for v in matrix), inner.ctm)
                        form_res = self.resolve(xobj.attrs.get("Resources")) or resources
                        body, codec = self.stream_data(xobj)
                        if codec is None:
                            self._run_content(body, form_res, inner, out, depth + 1)
            elif op == "BI":
                # Inline image: skip to EI. None of the supported
                # generators emit these in text documents.
                end = data.find(b"EI", lexer.pos)
                if end < 0:
                    return
                lexer.pos = end + 2
            stack.clear()

    def _emit_text(self, raw: bytes, tm: tuple, state: _GraphicsState, out: PageContent) -> tuple:
        if isinstance(raw, bytes):
            text = raw.decode("latin-1")
        else:
            text = str(raw)
        if text:
            device = _mat_mul(tm, state.ctm)
            x, y = device[4], device[5]
            scale = (device[0] ** 2 + device[1] ** 2) ** 0.5
            out.runs.append(
                TextRun(x=x, y=y, size=state.size * scale, font=state.font, text=text)
            )
            # Advance by an approximate width so that consecutive shows
            # without a fresh Tm stay in reading order.
            advance = 0.5 * state.size * len(text)
            tm = _mat_mul((1, 0, 0, 1, advance, 0), tm)
        return tm

    def _emit_image(self, name: str, xobj: StreamObject, ctm: tuple, out: PageContent) -> None:
        attrs = xobj.attrs
        width_px = self.resolve(attrs.get("Width"))
        height_px = self.resolve(attrs.get("Height"))
        if not (isinstance(width_px, int) and isinstance(height_px, int)):
            return
        corners = [_apply(ctm, x, y) for x, y in ((0, 0), (1, 0), (1, 1), (0, 1))]
        xs = [c[0] for c in corners]
        ys = [c[1] for c in corners]
        cspace = self.resolve(attrs.get("ColorSpace"))
        if isinstance(cspace, list) and cspace:
            cspace = self.resolve(cspace[0])
        bits = self.resolve(attrs.get("BitsPerComponent", 8))
        data, codec = self.stream_data(xobj)
        out.images.append(
            PlacedImage(
                name=str(name),
                x0=min(xs),
                y0=min(ys),
                x1=max(xs),
                y1=max(ys),
                width_px=width_px,
                height_px=height_px,
                color_space=str(cspace),
                bits=int(bits) if isinstance(bits, (int, float)) else 8,
                data=data,
                codec=codec,
            )
        )


def read_pdf(path) -> list[Page]:
    """Parse the PDF at path into interpreted pages.

    Errors locating the file (missing path, directory, no permission)
    propagate unchanged so callers can treat them as configuration
    problems; any other I/O failure is an unparseable document.
    """
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except (FileNotFoundError, IsADirectoryError, PermissionError):
        raise
    except OSError as exc:
        raise UnparseablePdf(f"cannot read {path}: {exc}") from exc
    return PdfFile(data).pages()
