"""Sequential binary files: header, encoder, decoder/skipper, streaming writer.

Wire rules for a value of type ``t`` (byte order from the header):

* numbers in their natural two's-complement / IEEE form;
* matrices: a 4-byte count per Free dimension, then the cells with the
  first index varying fastest;
* strings: Free size gets a 4-byte length prefix, fixed size is exactly N bytes;
* structs: fields back to back; Free arrays get a 4-byte element count;
* optional fields: one tag byte, 0 = absent, nonzero = present + value;
* unions: 2-byte 0-based selector, then the active variant;
* any: 4-byte length, the type text, then the value.

There is no alignment or padding.
"""
from __future__ import annotations

import io
import math
import os
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, List, Optional, Sequence

from . import errors as E
from .data import (AnyData, Committed, DataHandle, DataImpl, DirectArray, DirectMatrix,
                   DirectNum, DirectString, DirectStruct, DirectUnion, MAX_NESTING, TreeCursor,
                   new_direct, parse_path)
from .ddl import parse_type_text
from .matrix import MatrixValue
from .types import (ANY, FREE, AnyType, Array, Num, NumKind, Str, Struct, TypeEnv, print_env)

MAGIC = "STRUCTURED FILE"
VERSION = "V0.1"
MODES = ("BINARY_BE", "BINARY_LE", "TEXT")
ZERO_SIZE_CAP = 65536


# -- header ------------------------------------------------------------------

@dataclass
class FileHeader:
    env: TypeEnv
    mode: str = "BINARY_BE"
    comments: List[str] = field(default_factory=list)
    version: str = VERSION
    data_start: int = 0

    @property
    def order(self) -> str:
        return "<" if self.mode == "BINARY_LE" else ">"

    @property
    def is_binary(self) -> bool:
        return self.mode != "TEXT"

    def to_bytes(self) -> bytes:
        if self.version != VERSION:
            raise E.UnsupportedVersion(f"only {VERSION} can be written, not {self.version!r}")
        if self.mode not in MODES:
            raise E.UnknownFlag(f"unknown mode {self.mode!r}")
        lines = [f"{MAGIC} {self.version} {self.mode}"]
        for c in self.comments:
            if "\n" in c:
                raise E.StructFileError("comment lines cannot contain newlines")
            lines.append("#" + c)
        lines += ["TYPE", print_env(self.env), "DATA", ""]
        return "\n".join(lines).encode("utf-8")


def write_header(h: FileHeader, out: BinaryIO) -> int:
    raw = h.to_bytes()
    out.write(raw)
    return len(raw)


def _first_line(line: bytes, offset: int):
    try:
        words = line.decode("ascii").split()
    except UnicodeDecodeError:
        raise E.BadMagic("not a structured file", offset) from None
    if words[:2] != ["STRUCTURED", "FILE"]:
        raise E.BadMagic("not a structured file", offset)
    if len(words) < 3:
        raise E.BadMagic("missing version on the identification line", offset)
    if words[2] != VERSION:
        raise E.UnsupportedVersion(f"unsupported version {words[2]!r}", offset)
    if len(words) > 4:
        raise E.UnknownFlag(f"unexpected words {' '.join(words[4:])!r}", offset)
    mode = words[3] if len(words) == 4 else "BINARY_BE"
    if mode not in MODES:
        raise E.UnknownFlag(f"unknown flag {mode!r}", offset)
    return mode


def scan_header(src) -> FileHeader:
    """Parse the header of ``src`` (bytes or a binary file positioned at 0)."""
    f = io.BytesIO(src) if isinstance(src, (bytes, bytearray, memoryview)) else src
    pos = 0

    def line():
        nonlocal pos
        start = pos
        raw = f.readline()
        if not raw.endswith(b"\n"):
            raise E.Truncated("file ends inside the header", start + len(raw))
        pos += len(raw)
        return raw[:-1].rstrip(b"\r"), start

    first, _ = line()
    mode = _first_line(first, 0)
    comments = []
    while True:
        raw, at = line()
        s = raw.strip()
        if s.startswith(b"#"):
            comments.append(raw.decode("utf-8", "replace").lstrip()[1:])
        elif s == b"TYPE":
            break
        elif s:
            raise E.BadMagic(f"expected a comment or TYPE line, found {raw[:40]!r}", at)
    type_start = pos
    chunks = []
    while True:
        raw, at = line()
        if raw.strip() == b"DATA":
            break
        chunks.append(raw)
    try:
        text = b"\n".join(chunks).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise E.BadMagic("type text is not valid UTF-8", type_start + exc.start) from None
    env = parse_type_text(text)
    return FileHeader(env, mode, comments, VERSION, pos)


# -- byte sources --------------------------------------------------------------

class BufferSource:
    """Positioned reads over an in-memory buffer, with read accounting."""

    def __init__(self, buf):
        self.buf = memoryview(bytes(buf) if not isinstance(buf, (bytes, memoryview)) else buf)
        self.length = len(self.buf)
        self.bytes_read = 0

    def read(self, pos: int, n: int) -> bytes:
        if pos + n > self.length:
            raise E.Truncated(f"need {n} bytes, only {max(self.length - pos, 0)} remain", pos)
        self.bytes_read += n
        return self.buf[pos:pos + n].tobytes()


class FileSource:
    """Positioned reads (``os.pread``) from an open file; no shared cursor."""

    def __init__(self, path):
        self.fd = os.open(path, os.O_RDONLY)
        self.length = os.fstat(self.fd).st_size
        self.bytes_read = 0

    def read(self, pos: int, n: int) -> bytes:
        if pos + n > self.length:
            raise E.Truncated(f"need {n} bytes, only {max(self.length - pos, 0)} remain", pos)
        data = os.pread(self.fd, n, pos)
        if len(data) != n:
            raise E.Truncated("short read", pos + len(data))
        self.bytes_read += n
        return data

    def close(self):
        if self.fd >= 0:
            os.close(self.fd)
            self.fd = -1


# -- scanning -----------------------------------------------------------------

_FMT_CACHE = {}


def scalar_struct(kind: NumKind, order: str) -> struct.Struct:
    key = (kind, order)
    s = _FMT_CACHE.get(key)
    if s is None:
        s = _FMT_CACHE[key] = struct.Struct(order + kind.struct_code)
    return s


def min_size(t, env: TypeEnv, _memo=None, _visiting=None) -> int:
    """Smallest possible encoding of a value of type ``t``."""
    memo = _memo if _memo is not None else {}
    visiting = _visiting if _visiting is not None else set()
    t = env.unref(t)
    key = id(t)
    if key in memo:
        return memo[key]
    if key in visiting:
        return 0
    visiting.add(key)
    if isinstance(t, Num):
        if any(d is FREE for d in t.dims):
            n = 4 * sum(1 for d in t.dims if d is FREE)
        else:
            n = t.kind.width * math.prod(t.dims)
    elif isinstance(t, Str):
        n = 4 if t.size is FREE else t.size
    elif isinstance(t, Array):
        n = 4 if t.size is FREE else t.size * min_size(t.elem, env, memo, visiting)
    elif isinstance(t, Struct):
        sizes = [1 if f.optional else min_size(f.typ, env, memo, visiting) for f in t.fields]
        n = 2 + min(sizes) if t.is_union else sum(sizes)
    else:
        n = 5
    visiting.discard(key)
    memo[key] = n
    return n


def _new(cls, t, env, **attrs):
    obj = cls.__new__(cls)
    obj.typ = t
    obj.env = env
    for k, v in attrs.items():
        setattr(obj, k, v)
    return obj


class Scanner:
    """Walks encoded values on a byte source.

    ``decode`` builds an in-memory tree; ``skip`` only reads the bytes that
    determine lengths (counts, tags, selectors, any-prefixes).  Both go
    through :meth:`walk`, so they cannot disagree about the layout.
    """

    def __init__(self, src, order: str = ">", strict: bool = False):
        self.src = src
        self.order = order
        self.strict = strict
        self._i4 = struct.Struct(order + "i")
        self._u2 = struct.Struct(order + "H")
        self._min = {}
        self._anys = {}

    # primitive reads
    def require(self, pos, n, what="value"):
        if n > self.src.length - pos:
            raise E.Truncated(f"{what} needs {n} bytes, only {max(self.src.length - pos, 0)} "
                              f"remain", pos)

    def count(self, pos, what="count") -> int:
        n = self._i4.unpack(self.src.read(pos, 4))[0]
        if n < 0:
            raise E.NegativeCount(f"negative {what} {n}", pos)
        return n

    def check_elements(self, n, each, pos, what):
        remaining = self.src.length - pos
        if each == 0:
            if n > ZERO_SIZE_CAP:
                raise E.CountOverflow(f"{what} {n} exceeds the limit {ZERO_SIZE_CAP} for "
                                      f"zero-size elements", pos)
        elif n * each > remaining:
            raise E.CountOverflow(f"{what} {n} needs at least {n * each} bytes, only "
                                  f"{remaining} remain", pos)

    def tag(self, pos) -> bool:
        b = self.src.read(pos, 1)[0]
        if self.strict and b > 1:
            raise E.BadOptionalTag(f"optional tag {b} is neither 0 nor 1", pos)
        return b != 0

    def selector(self, pos, t: Struct) -> int:
        s = self._u2.unpack(self.src.read(pos, 2))[0]
        if s >= len(t.fields):
            raise E.BadUnionSelector(f"union selector {s} but only {len(t.fields)} variants",
                                     pos)
        return s

    def any_type(self, pos):
        """``(env, value_pos)`` for the any value starting at ``pos``."""
        hit = self._anys.get(pos)
        if hit is not None:
            return hit
        n = self.count(pos, "type text length")
        if n > self.src.length - pos - 4:
            raise E.CountOverflow(f"type text length {n} exceeds the remaining input", pos)
        raw = self.src.read(pos + 4, n)
        try:
            env = parse_type_text(raw.decode("utf-8"))
        except (UnicodeDecodeError, E.TypeSpecError) as exc:
            raise E.AnyTypeParseError(f"bad type text in any value: {exc}", pos + 4) from None
        if isinstance(env.unref(env.root), AnyType):
            raise E.AnyTypeParseError("any value declared with type any", pos + 4)
        hit = (env, pos + 4 + n)
        if len(self._anys) < 4096:
            self._anys[pos] = hit
        return hit

    def min_size(self, t, env):
        return min_size(t, env, self._min.setdefault(id(env), {}))

    def matrix_counts(self, t: Num, pos):
        counts = []
        for d in t.dims:
            if d is FREE:
                counts.append(self.count(pos, "dimension"))
                pos += 4
            else:
                counts.append(d)
        return counts, pos

    # the walk
    def decode(self, t, env: TypeEnv, pos: int, depth: int = 0):
        return self.walk(t, env, pos, depth, True)

    def skip(self, t, env: TypeEnv, pos: int, depth: int = 0) -> int:
        return self.walk(t, env, pos, depth, False)[1]

    def walk(self, t, env, pos, depth, build):
        if depth > MAX_NESTING:
            raise E.TooDeep(f"data nested deeper than {MAX_NESTING} levels", pos)
        t = env.unref(t)
        if not build:
            variable, size = env.layout(t)
            if not variable:
                self.require(pos, size)
                return None, pos + size
        if isinstance(t, Num):
            return self._num(t, env, pos, build)
        if isinstance(t, Str):
            if t.size is FREE:
                n = self.count(pos, "string length")
                pos += 4
                self.check_elements(n, 1, pos, "string length")
            else:
                n = t.size
            if not build:
                self.require(pos, n)
                return None, pos + n
            return _new(DirectString, t, env, value=self.src.read(pos, n)), pos + n
        if isinstance(t, Struct):
            if t.is_union:
                s = self.selector(pos, t)
                v, pos = self.walk(t.fields[s].typ, env, pos + 2, depth + 1, build)
                return (_new(DirectUnion, t, env, active=s, value=v) if build else None), pos
            members = [] if build else None
            for f in t.fields:
                if f.optional:
                    present = self.tag(pos)
                    pos += 1
                    if not present:
                        if build:
                            members.append(None)
                        continue
                v, pos = self.walk(f.typ, env, pos, depth + 1, build)
                if build:
                    members.append(v)
            return (_new(DirectStruct, t, env, members=members) if build else None), pos
        if isinstance(t, Array):
            if t.size is FREE:
                n = self.count(pos, "array count")
                pos += 4
                self.check_elements(n, self.min_size(t.elem, env), pos, "array count")
            else:
                n = t.size
            if not build:
                variable, size = env.layout(t.elem)
                if not variable:
                    self.require(pos, n * size)
                    return None, pos + n * size
                for _ in range(n):
                    pos = self.walk(t.elem, env, pos, depth + 1, False)[1]
                return None, pos
            elems = []
            for _ in range(n):
                v, pos = self.walk(t.elem, env, pos, depth + 1, True)
                elems.append(v)
            return _new(DirectArray, t, env, elems=elems), pos
        if isinstance(t, AnyType):
            aenv, vpos = self.any_type(pos)
            v, end = self.walk(aenv.root, aenv, vpos, depth + 1, build)
            if not build:
                return None, end
            a = AnyData(env)
            a.target = v
            return a, end
        raise E.ValidationError(f"not a type node: {t!r}")

    def _num(self, t, env, pos, build):
        kind = t.kind
        if not t.dims:
            w = kind.width
            if not build:
                self.require(pos, w)
                return None, pos + w
            return _new(DirectNum, t, env, value=self.read_scalar(kind, pos)), pos + w
        counts, pos = self.matrix_counts(t, pos)
        cells = math.prod(counts)
        self.check_elements(cells, kind.width, pos, "matrix size")
        nbytes = cells * kind.width
        if not build:
            self.require(pos, nbytes)
            return None, pos + nbytes
        m = MatrixValue.from_bytes(kind, counts, self.src.read(pos, nbytes), self.order)
        return _new(DirectMatrix, t, env, value=m), pos + nbytes

    def read_scalar(self, kind: NumKind, pos: int):
        raw = self.src.read(pos, kind.width)
        if kind is NumKind.F16:
            return raw if self.order == ">" else raw[::-1]
        return scalar_struct(kind, self.order).unpack(raw)[0]


# -- encoding ---------------------------------------------------------------

class _Encoder:
    def __init__(self, order: str):
        self.order = order
        self.i4 = struct.Struct(order + "i")
        self.u2 = struct.Struct(order + "H")

    def count(self, n: int) -> bytes:
        if n > 2**31 - 1:
            raise E.CountOverflow(f"count {n} does not fit a 4-byte integer")
        return self.i4.pack(n)

    def any_prefix(self, d: DataImpl) -> bytes:
        text = print_env(d.env, indent=None).encode("utf-8")
        return self.count(len(text)) + text

    def value(self, d: DataImpl, out: list, depth: int = 0):
        if depth > MAX_NESTING:
            raise E.TooDeep(f"data nested deeper than {MAX_NESTING} levels")
        if d.is_any:
            if isinstance(d.typ, AnyType):
                raise E.UnboundAny("cannot encode an any node without an actual type")
            out.append(self.any_prefix(d))
            d = d.target
        elif d.via_any:
            out.append(self.any_prefix(d))
        t = d.typ
        if isinstance(t, Num):
            if not t.dims:
                v = d.get_scalar()
                if t.kind is NumKind.F16:
                    out.append(v if self.order == ">" else v[::-1])
                else:
                    out.append(scalar_struct(t.kind, self.order).pack(v))
                return
            m = d.get_matrix()
            for c, dim in zip(m.counts, t.dims):
                if dim is FREE:
                    out.append(self.count(c))
            out.append(m.to_bytes(self.order))
        elif isinstance(t, Str):
            s = d.get_string()
            if t.size is FREE:
                out.append(self.count(len(s)))
            out.append(s)
        elif isinstance(t, Struct):
            if t.is_union:
                i = d.get_active_field()
                out.append(self.u2.pack(i))
                self.value(d.get_field(i), out, depth + 1)
                return
            for i, f in enumerate(t.fields):
                if f.optional:
                    if not d.field_present(i):
                        out.append(b"\0")
                        continue
                    out.append(b"\1")
                self.value(d.get_field(i), out, depth + 1)
        elif isinstance(t, Array):
            n = d.n_elements()
            if t.size is FREE:
                out.append(self.count(n))
            for i in range(n):
                self.value(d.get_elem(i), out, depth + 1)
        else:
            raise E.UnboundAny("cannot encode an any node without an actual type")


def encode_value(d: DataHandle, order: str = ">", out: Optional[BinaryIO] = None):
    """Encode ``d``; returns the bytes, or writes them to ``out``."""
    parts: list = []
    _Encoder(_order(order)).value(d.impl, parts)
    raw = b"".join(parts)
    if out is None:
        return raw
    out.write(raw)
    return None


def _order(order: str) -> str:
    o = {"be": ">", "le": "<", ">": ">", "<": "<", "big": ">", "little": "<",
         "BINARY_BE": ">", "BINARY_LE": "<"}.get(order)
    if o is None:
        raise ValueError(f"bad byte order {order!r}")
    return o


def decode_value(t, env: Optional[TypeEnv] = None, order: str = ">", buf=b"",
                 pos: int = 0, strict: bool = False, whole: bool = False) -> DataHandle:
    """Decode one value of type ``t`` from ``buf`` starting at ``pos``.

    With ``whole`` set, bytes left over after the value raise TrailingData.
    """
    if isinstance(t, TypeEnv):
        env, t = t, t.root
    elif env is None:
        env = TypeEnv(t)
    src = buf if hasattr(buf, "read") and hasattr(buf, "length") else BufferSource(buf)
    impl, end = Scanner(src, _order(order), strict).decode(t, env, pos)
    if whole and end != src.length:
        raise E.TrailingData(f"{src.length - end} bytes after the end of the data", end)
    return DataHandle(impl)


def decode_file(raw: bytes, strict: bool = False):
    """``(header, handle)`` for a complete binary file held in memory."""
    h = scan_header(raw)
    if not h.is_binary:
        raise E.WrongMode("file is in TEXT mode")
    return h, decode_value(h.env, None, h.order, raw, h.data_start, strict, whole=True)


def encode_file(d: DataHandle, mode: str = "BINARY_BE", comments: Sequence[str] = ()) -> bytes:
    if d.impl.is_any or d.impl.via_any:
        # the value carries its own type text after the header's "any"
        env = TypeEnv(ANY)
    elif d.typ is d.env.root or d.typ is d.env.unref(d.env.root):
        env = d.env
    else:
        env = d.env.with_root(d.typ)
    h = FileHeader(env, mode, list(comments))
    return h.to_bytes() + encode_value(d, h.order)


# -- streaming writer -----------------------------------------------------------

class _Level:
    __slots__ = ("impl", "typ", "cell", "next", "count")

    def __init__(self, impl, typ, cell=None, next_index=0):
        self.impl = impl
        self.typ = typ
        self.cell = cell
        self.next = next_index
        self.count = 0


class _RootHolder:
    """Parent of the root item, so the root is handled like any child."""

    def __init__(self, impl):
        self.root = impl


class StreamWriter:
    """Appends values to a seekable sink in serialization order.

    Entering a Free array reserves a 4-byte count cell; closing it seeks
    back and writes the final count.
    """

    def __init__(self, sink: BinaryIO, order: str = ">", root: Optional[DataImpl] = None):
        try:
            seekable = sink.seekable()
        except (AttributeError, ValueError):
            seekable = False
        if not seekable:
            raise E.NotSeekable("streaming binary output needs a seekable sink")
        self.sink = sink
        self.enc = _Encoder(_order(order))
        self.levels: List[_Level] = [_Level(_RootHolder(root), None)]
        self.finished = False

    # regions -------------------------------------------------------------
    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    @property
    def regions(self):
        """Pending count cells: ``(offset, elements written)`` per open Free array."""
        return [(lv.cell, lv.count) for lv in self.levels if lv.cell is not None]

    def _child(self, lv, i):
        p = lv.impl
        if isinstance(p, _RootHolder):
            return p.root
        if isinstance(lv.typ, Array):
            return p.get_elem(i)
        return p.get_field(i)

    def _n_children(self, lv):
        if isinstance(lv.impl, _RootHolder):
            return 1
        t = lv.typ
        if isinstance(t, Array):
            return lv.impl.n_elements()
        return len(t.fields)

    def _approach(self, lv, i):
        """Write what precedes child ``i`` of the current level."""
        t = lv.typ
        if isinstance(lv.impl, _RootHolder):
            if i != 0 or lv.next != 0:
                raise E.CursorOrderViolation(f"root emitted twice or at index {i}")
            return
        if isinstance(t, Array):
            if i != lv.next:
                raise E.CursorOrderViolation(f"element {i} emitted, expected {lv.next}")
            return
        if t.is_union:
            if i != lv.next or lv.count:
                raise E.CursorOrderViolation(f"union variant {i} emitted, expected {lv.next}")
            return
        if i < lv.next:
            raise E.CursorOrderViolation(f"field {i} emitted after field {lv.next - 1}")
        tags = []
        for j in range(lv.next, i):
            f = t.fields[j]
            if not f.optional or lv.impl.field_present(j):
                raise E.CursorOrderViolation(f"field {f.name!r} was skipped")
            tags.append(b"\0")
        f = t.fields[i]
        if f.optional:
            if not lv.impl.field_present(i):
                raise E.CursorOrderViolation(f"optional field {f.name!r} is not present")
            tags.append(b"\1")
        if tags:
            self.sink.write(b"".join(tags))

    def _advance(self, lv, i):
        lv.next = i + 1
        lv.count += 1

    def emit_child(self, i: int) -> DataImpl:
        """Write child ``i`` of the current level completely."""
        lv = self.levels[-1]
        self._approach(lv, i)
        d = self._child(lv, i)
        parts: list = []
        self.enc.value(d, parts, self.depth)
        self.sink.write(b"".join(parts))
        self._advance(lv, i)
        return d

    def enter_child(self, i: int) -> DataImpl:
        """Write the prefix of composite child ``i`` and make it the current level."""
        lv = self.levels[-1]
        d = self._child(lv, i)
        if d.is_any and isinstance(d.typ, AnyType):
            raise E.UnboundAny("cannot write an any node without an actual type")
        t = d.typ
        if not isinstance(t, (Struct, Array)):
            raise E.CursorOrderViolation("only structs, unions and arrays can be entered")
        self._approach(lv, i)
        self._advance(lv, i)
        prefix = b""
        if d.is_any:
            prefix = self.enc.any_prefix(d)
            d = d.target
        elif d.via_any:
            prefix = self.enc.any_prefix(d)
        cell = None
        nxt = 0
        if isinstance(t, Struct) and t.is_union:
            nxt = d.get_active_field()
            prefix += self.enc.u2.pack(nxt)
        elif isinstance(t, Array) and t.size is FREE:
            self.sink.write(prefix)
            prefix = b""
            cell = self.sink.tell()
            self.sink.write(b"\0\0\0\0")
        if prefix:
            self.sink.write(prefix)
        self.levels.append(_Level(d, t, cell, nxt))
        return d

    def close(self) -> None:
        """Finish the current level (trailing absent tags, count patch)."""
        if len(self.levels) == 1:
            raise E.AtRoot("no open region to close")
        lv = self.levels[-1]
        t = lv.typ
        if isinstance(t, Struct):
            if t.is_union:
                if lv.count != 1:
                    raise E.CursorOrderViolation("union closed before its variant was written")
            else:
                tags = []
                for j in range(lv.next, len(t.fields)):
                    f = t.fields[j]
                    if not f.optional or lv.impl.field_present(j):
                        raise E.CursorOrderViolation(f"field {f.name!r} was never written")
                    tags.append(b"\0")
                if tags:
                    self.sink.write(b"".join(tags))
        else:
            if t.size is not FREE and lv.count != t.size:
                raise E.CursorOrderViolation(
                    f"fixed array closed after {lv.count} of {t.size} elements")
            if lv.cell is not None:
                end = self.sink.tell()
                self.sink.seek(lv.cell)
                self.sink.write(self.enc.count(lv.count))
                self.sink.seek(end)
        self.levels.pop()

    def remaining(self) -> List[int]:
        """Indices of children of the current level not yet written."""
        lv = self.levels[-1]
        t = lv.typ
        if isinstance(lv.impl, _RootHolder):
            return [0] if lv.next == 0 else []
        if isinstance(t, Array):
            return list(range(lv.next, lv.impl.n_elements()))
        if t.is_union:
            return [lv.next] if lv.count == 0 else []
        return [j for j in range(lv.next, len(t.fields))
                if not t.fields[j].optional or lv.impl.field_present(j)]

    def finish(self) -> None:
        """Write everything not yet written and close all regions."""
        while True:
            for i in self.remaining():
                self.emit_child(i)
            if len(self.levels) == 1:
                break
            self.close()
        self.sink.flush()
        self.finished = True


def _cursor_check(w: StreamWriter, c: TreeCursor):
    if c.depth != w.depth:
        raise E.CursorOrderViolation(f"cursor at depth {c.depth}, writer at depth {w.depth}")
    return c.index


def begin_stream_write(h: FileHeader, sink: BinaryIO, root: DataHandle) -> StreamWriter:
    w = StreamWriter(sink, h.order, root.impl)
    write_header(h, sink)
    return w


def emit_next(w: StreamWriter, c: TreeCursor) -> None:
    """Write the cursor's current item whole and move the cursor on."""
    w.emit_child(_cursor_check(w, c))
    c.next()


def emit_enter(w: StreamWriter, c: TreeCursor) -> None:
    """Write the prefix of the cursor's current composite and descend into it."""
    w.enter_child(_cursor_check(w, c))
    c.down()


def close_region(w: StreamWriter, c: Optional[TreeCursor] = None) -> None:
    if c is not None and (c.depth != w.depth or not c.at_end):
        raise E.CursorOrderViolation("region closed before the cursor passed its last member")
    w.close()
    if c is not None:
        c.up()
        c.next()


def finish_stream_write(w: StreamWriter) -> None:
    w.finish()


# -- data files ----------------------------------------------------------------

def _release(parent, typ, i, child):
    """Swap a written child for a Committed placeholder so it can be reclaimed."""
    stub = Committed(child.typ, child.env)
    if isinstance(parent, _RootHolder):
        parent.root = stub
    elif isinstance(parent, DirectArray):
        parent.elems[i] = stub
    elif isinstance(parent, DirectStruct):
        parent.members[i] = stub
    elif isinstance(parent, DirectUnion):
        parent.value = stub


class DataFile:
    """A structured data file opened for output or input.

    Output::

        df = DataFile.open_out("traj.sf", env)
        D = df.data()
        ...fill D...
        df.commit("timesteps[5]")   # write and release everything before it
        df.close()
    """

    def __init__(self):
        self.header: Optional[FileHeader] = None
        self._root: Optional[DataHandle] = None
        self._writer: Optional[StreamWriter] = None
        self._sink = None
        self._owns_sink = False
        self._session = None
        self.writing = False

    @classmethod
    def open_out(cls, target, typ, mode: str = "BINARY_BE", comments: Sequence[str] = ()):
        if isinstance(typ, str):
            typ = parse_type_text(typ)
        env = typ if isinstance(typ, TypeEnv) else TypeEnv(typ)
        df = cls()
        df.header = FileHeader(env, mode, list(comments))
        df.header.to_bytes()
        if isinstance(target, (str, os.PathLike)):
            df._sink = open(target, "w+b")
            df._owns_sink = True
        else:
            df._sink = target
        df._root = new_direct(env)
        df.writing = True
        if df.header.is_binary:
            try:
                df._writer = begin_stream_write(df.header, df._sink, df._root)
            except E.NotSeekable:
                df._abandon()
                raise
        return df

    @classmethod
    def open_in(cls, source):
        from .stream import open_binary
        df = cls()
        with open(source, "rb") as f:
            h = scan_header(f)
            if not h.is_binary:
                f.seek(h.data_start)
                from .text import read_data
                try:
                    text = f.read().decode("utf-8")
                except UnicodeDecodeError as exc:
                    raise E.TextSyntaxError("data section is not valid UTF-8",
                                            h.data_start + exc.start) from None
                df._root = read_data(h.env, None, text)
        df.header = h
        if h.is_binary:
            df._session = open_binary(source)
            df._root = df._session.root()
        return df

    def data(self) -> DataHandle:
        return self._root

    def typ(self):
        return self.header.env.root

    def _target_path(self, up_to) -> Optional[List[int]]:
        if up_to is None:
            return None
        if isinstance(up_to, TreeCursor):
            if up_to.depth == 0 and up_to.at_end:
                return None
            path = list(up_to.path)
        elif isinstance(up_to, str):
            path = _index_path(self._root.impl, parse_path(up_to))
        else:
            path = _index_path(self._root.impl, list(up_to))
        return path

    def commit(self, up_to=None) -> None:
        """Write everything before ``up_to`` and release it from memory.

        ``up_to`` is a TreeCursor, a path string like ``"timesteps[3]"``, a
        list of field names/indices, or None for everything.
        """
        if not self.writing:
            raise E.ReadOnly("file is not open for output")
        if self._writer is None:
            return
        target = self._target_path(up_to)
        try:
            self._advance_to(target)
        except E.UnboundAny as exc:
            raise E.IncompletePrefix(f"cannot commit: {exc}") from None

    def _advance_to(self, target):
        w = self._writer
        q = None if target is None else [0] + target
        while True:
            entered = [lv.next - 1 for lv in w.levels[:-1]]
            d = len(entered)
            if q is not None:
                if entered[:len(q)] == q:
                    return
                if q[:d] == entered:
                    i = q[d]
                    for j in w.remaining():
                        if j >= i:
                            break
                        self._emit_release(j)
                    if len(q) == d + 1 or i not in w.remaining():
                        return
                    if not isinstance(w._child(w.levels[-1], i).typ, (Struct, Array)):
                        return
                    w.enter_child(i)
                    continue
                if _before(q, entered):
                    return
            for j in w.remaining():
                self._emit_release(j)
            if len(w.levels) == 1:
                return
            w.close()

    def _emit_release(self, j):
        w = self._writer
        lv = w.levels[-1]
        child = w.emit_child(j)
        _release(lv.impl, lv.typ, j, child)

    def close(self) -> None:
        if self.writing:
            try:
                if self._writer is not None:
                    self.commit(None)
                    self._sink.flush()
                else:
                    from .text import print_data
                    self._sink.write(self.header.to_bytes())
                    text = print_data(self._root, None, pretty=True) + "\n"
                    self._sink.write(text.encode("utf-8"))
                    self._sink.flush()
            finally:
                self.writing = False
                self._abandon()
        elif self._session is not None:
            self._session.close()
            self._session = None

    def _abandon(self):
        if self._owns_sink and self._sink is not None:
            self._sink.close()
        self._sink = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _before(a, b) -> bool:
    """Is index path ``a`` strictly before ``b`` in serialization order (not an ancestor)?"""
    for x, y in zip(a, b):
        if x != y:
            return x < y
    return False


def _index_path(root: DataImpl, steps) -> List[int]:
    """Convert field names to indices, following the in-memory tree."""
    out = []
    d = root
    for k, step in enumerate(steps):
        t = d.typ
        if isinstance(step, str):
            if not isinstance(t, Struct):
                raise E.WrongType(f"field {step!r} of a non-struct")
            i = t.field_index(step)
            if i is None:
                raise E.NoSuchField(f"no field named {step!r}")
        else:
            i = int(step)
        out.append(i)
        if k + 1 < len(steps):
            try:
                d = d.get_elem(i) if isinstance(t, Array) else d.get_field(i)
            except E.WriteOnlySession:
                raise E.CursorOrderViolation("commit target lies inside committed data") from None
    return out
