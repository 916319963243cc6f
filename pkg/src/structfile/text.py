"""Textual data representation.

Syntax, driven by the known type::

    integer      12   -7
    real         1.5  -0.0  1e+300  inf  nan
    real*16      x"3FFF8000000000000000000000000000"
    string       "C"  "tab\\x09 quote\\" backslash\\\\ newline\\n"
    opaque       x"00FF"
    matrix       free dims first, then the flat cells:  2 [1.5, 2.5]
    array        [e0, e1, ...]
    struct       {name = value, other = value}     (absent optionals omitted)
    union        variant : value
    any          (type text) value

Commas are optional on input.
"""
from __future__ import annotations

import io
import math
import re
import struct
from typing import List, Optional

import numpy as np

from . import errors as E
from .data import (DataHandle, DataImpl, MAX_NESTING, check_int, make_direct,
                   new_direct)
from .matrix import MatrixValue
from .types import FREE, AnyType, Array, Num, NumKind, Str, Struct, TypeEnv, print_env

_CANON_NAN = struct.pack(">d", math.nan)


_CANON_NAN4 = struct.pack(">f", math.nan)


def _nan_text(raw: bytes, canon: bytes) -> str:
    return "nan" if raw == canon else f"nan(0x{raw.hex()})"


def format_float(v: float, kind: NumKind) -> str:
    if math.isnan(v):
        # payload shown at the width of the cell, so real*4 bits survive
        if kind is NumKind.F4:
            return _nan_text(struct.pack(">f", v), _CANON_NAN4)
        return _nan_text(struct.pack(">d", v), _CANON_NAN)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if kind is NumKind.F4:
        return str(np.float32(v))
    return repr(v)


def _escape(b: bytes) -> str:
    out = []
    for c in b:
        if c == 0x22:
            out.append('\\"')
        elif c == 0x5C:
            out.append("\\\\")
        elif c == 0x0A:
            out.append("\\n")
        elif 0x20 <= c < 0x7F:
            out.append(chr(c))
        else:
            out.append(f"\\x{c:02x}")
    return '"' + "".join(out) + '"'


def _hex(b: bytes) -> str:
    return 'x"' + b.hex().upper() + '"'


def format_scalar(kind: NumKind, v) -> str:
    if kind is NumKind.F16:
        return _hex(v)
    if kind.is_float:
        return format_float(v, kind)
    return str(v)


def _cells_text(m: MatrixValue) -> List[str]:
    if m.kind is NumKind.F16:
        return [_hex(c.tobytes()) for c in m.cells]
    if m.kind is NumKind.F4:
        raw = m.cells.astype(">f4").tobytes()
        return [_nan_text(raw[4 * i:4 * i + 4], _CANON_NAN4) if c != c else format_float(float(c), m.kind)
                for i, c in enumerate(m.cells)]
    if m.kind.is_float:
        return [format_float(float(c), m.kind) for c in m.cells]
    return [str(int(c)) for c in m.cells]


def print_data(d: DataHandle, out=None, pretty: bool = False) -> Optional[str]:
    """Render ``d`` as text.  Writes to ``out`` if given, else returns a str."""
    parts: List[str] = []
    _print(d.impl, parts, pretty, 0)
    text = "".join(parts)
    if out is None:
        return text
    out.write(text)
    return None


def _is_flat(t):
    return isinstance(t, (Num, Str))


def _print(d: DataImpl, out, pretty, level):
    if level > MAX_NESTING:
        raise E.TooDeep(f"data nested deeper than {MAX_NESTING} levels")
    t = d.typ
    if d.is_any or d.via_any:
        if isinstance(t, AnyType):
            raise E.UnboundAny("cannot print an any node without an actual type")
        out.append("(" + print_env(d.env, indent=None) + ") ")
    if isinstance(t, Num):
        if not t.dims:
            out.append(format_scalar(t.kind, d.get_scalar()))
            return
        m = d.get_matrix()
        for c, dim in zip(m.counts, t.dims):
            if dim is FREE:
                out.append(f"{c} ")
        out.append("[" + ", ".join(_cells_text(m)) + "]")
    elif isinstance(t, Str):
        s = d.get_string()
        out.append(_hex(s) if t.opaque else _escape(s))
    elif isinstance(t, Struct):
        if t.is_union:
            i = d.get_active_field()
            out.append(t.fields[i].name + " : ")
            _print(d.get_field(i), out, pretty, level + 1)
            return
        present = [i for i, f in enumerate(t.fields) if not f.optional or d.field_present(i)]
        if not present:
            out.append("{}")
            return
        if pretty:
            pad = "    " * (level + 1)
            out.append("{\n")
            for k, i in enumerate(present):
                out.append(pad + t.fields[i].name + " = ")
                _print(d.get_field(i), out, pretty, level + 1)
                out.append(",\n" if k + 1 < len(present) else "\n")
            out.append("    " * level + "}")
        else:
            out.append("{")
            for k, i in enumerate(present):
                if k:
                    out.append(", ")
                out.append(t.fields[i].name + " = ")
                _print(d.get_field(i), out, pretty, level + 1)
            out.append("}")
    elif isinstance(t, Array):
        n = d.n_elements()
        if n == 0:
            out.append("[]")
            return
        if pretty and not _is_flat(d.env.unref(t.elem)):
            pad = "    " * (level + 1)
            out.append("[\n")
            for i in range(n):
                out.append(pad)
                _print(d.get_elem(i), out, pretty, level + 1)
                out.append(",\n" if i + 1 < n else "\n")
            out.append("    " * level + "]")
        else:
            out.append("[")
            for i in range(n):
                if i:
                    out.append(", ")
                _print(d.get_elem(i), out, pretty, level + 1)
            out.append("]")
    else:
        raise E.UnboundAny("cannot print an any node without an actual type")


# -- reading -----------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<hex>x"[0-9A-Fa-f\s]*")
  | (?P<str>"(?:[^"\\]|\\.)*")
  | (?P<nan>[-+]?nan\(0x(?:[0-9A-Fa-f]{8}){1,2}\))
  | (?P<sword>[-+](?:inf|nan)\b)
  | (?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[\[\]{}(),=:])
""", re.VERBOSE | re.DOTALL)

_ESC = re.compile(r'\\(x[0-9A-Fa-f]{2}|.)', re.DOTALL)
_SIMPLE_ESC = {'"': 0x22, "\\": 0x5C, "n": 0x0A, "t": 0x09, "r": 0x0D, "0": 0x00}


class _Reader:
    def __init__(self, src: str):
        self.src = src
        self.pos = 0
        self.peeked = None

    def _scan(self):
        while True:
            if self.pos >= len(self.src):
                return ("end", "", self.pos)
            m = _TOKEN.match(self.src, self.pos)
            if not m:
                raise self.error(f"unexpected character {self.src[self.pos]!r}", self.pos)
            start = self.pos
            self.pos = m.end()
            if m.lastgroup != "ws":
                return (m.lastgroup, m.group(), start)

    def peek(self):
        if self.peeked is None:
            self.peeked = self._scan()
        return self.peeked

    def take(self):
        tok = self.peek()
        self.peeked = None
        return tok

    def error(self, msg, offset=None, cls=E.TextSyntaxError):
        if offset is None:
            offset = self.peek()[2]
        line = self.src.count("\n", 0, offset) + 1
        col = offset - (self.src.rfind("\n", 0, offset) + 1) + 1
        return cls(f"line {line}, column {col}: {msg}", offset)

    def describe(self, tok):
        return "end of input" if tok[0] == "end" else repr(tok[1])

    def expect(self, ch):
        tok = self.take()
        if tok[0] != "punct" or tok[1] != ch:
            raise self.error(f"expected {ch!r}, found {self.describe(tok)}", tok[2])
        return tok

    def accept(self, ch):
        tok = self.peek()
        if tok[0] == "punct" and tok[1] == ch:
            self.take()
            return True
        return False

    def comma(self):
        self.accept(",")

    # leaves ----------------------------------------------------------------
    def integer(self, kind):
        tok = self.take()
        if tok[0] != "num" or not re.fullmatch(r"[-+]?\d+", tok[1]):
            raise self.error(f"expected an integer, found {self.describe(tok)}", tok[2])
        try:
            return check_int(kind, int(tok[1]))
        except E.OutOfRange as exc:
            raise self.error(str(exc), tok[2], E.TypeMismatchInData) from None

    def count(self):
        tok = self.take()
        if tok[0] != "num" or not tok[1].isdigit():
            raise self.error(f"expected a dimension count, found {self.describe(tok)}", tok[2])
        n = int(tok[1])
        if n > 2**31 - 1:
            raise self.error(f"count {n} too large", tok[2], E.TypeMismatchInData)
        return n

    def real(self, kind, bits4=False):
        """Next real; with ``bits4`` a real*4 comes back as 4 big-endian bytes."""
        tok = self.take()
        if tok[0] == "hex" and kind is NumKind.F16:
            raw = self._hexbytes(tok)
            if len(raw) != 16:
                raise self.error("real*16 hex value needs 16 bytes", tok[2], E.TypeMismatchInData)
            return raw
        if tok[0] == "nan":
            raw = bytes.fromhex(tok[1].lstrip("+-")[6:-1])
            if len(raw) == 4:
                if kind is not NumKind.F4:
                    raise self.error("a 4-byte NaN payload needs real*4", tok[2],
                                     E.TypeMismatchInData)
                return raw if bits4 else struct.unpack(">f", raw)[0]
            v = struct.unpack(">d", raw)[0]
        elif tok[0] in ("sword", "name") and tok[1].lstrip("+-") in ("inf", "nan"):
            v = float(tok[1])
            if tok[1].startswith("-") and math.isnan(v):
                v = -math.nan
        elif tok[0] == "num":
            v = float(tok[1])
        else:
            raise self.error(f"expected a number, found {self.describe(tok)}", tok[2])
        if kind is NumKind.F16:
            from .matrix import float_to_f16
            return float_to_f16(v)
        if kind is NumKind.F4:
            try:
                raw = struct.pack(">f", v)
            except OverflowError:
                raise self.error(f"{tok[1]} does not fit real*4", tok[2],
                                 E.TypeMismatchInData) from None
            return raw if bits4 else struct.unpack(">f", raw)[0]
        return v

    def scalar(self, kind):
        return self.real(kind) if kind.is_float else self.integer(kind)

    def _hexbytes(self, tok):
        digits = re.sub(r"\s", "", tok[1][2:-1])
        if len(digits) % 2:
            raise self.error("odd number of hex digits", tok[2])
        return bytes.fromhex(digits)

    def string(self, t: Str):
        tok = self.take()
        if tok[0] == "hex":
            raw = self._hexbytes(tok)
        elif tok[0] == "str" and not t.opaque:
            raw = self._unescape(tok)
        else:
            want = "x\"...\"" if t.opaque else "a quoted string"
            raise self.error(f"expected {want}, found {self.describe(tok)}", tok[2])
        if t.size is not FREE:
            if len(raw) > t.size:
                raise self.error(f"{len(raw)} bytes do not fit string*{t.size}", tok[2],
                                 E.TypeMismatchInData)
            raw += bytes(t.size - len(raw))
        return raw

    def _unescape(self, tok):
        body = tok[1][1:-1]
        out = bytearray()
        pos = 0
        for m in _ESC.finditer(body):
            out += body[pos:m.start()].encode("utf-8")
            esc = m.group(1)
            if esc[0] == "x" and len(esc) == 3:
                out.append(int(esc[1:], 16))
            elif esc in _SIMPLE_ESC:
                out.append(_SIMPLE_ESC[esc])
            else:
                raise self.error(f"bad escape \\{esc}", tok[2] + 1 + m.start())
            pos = m.end()
        out += body[pos:].encode("utf-8")
        return bytes(out)

    # values ----------------------------------------------------------------
    def value(self, d: DataImpl, depth: int):
        if depth > MAX_NESTING:
            raise self.error(f"data nested deeper than {MAX_NESTING} levels", cls=E.TooDeep)
        if d.is_any:
            self._any(d)
            d = d.target
        t = d.typ
        if isinstance(t, Num):
            if t.dims:
                self._matrix(d, t)
            else:
                d.assign_scalar(self.scalar(t.kind))
        elif isinstance(t, Str):
            d.assign_string(self.string(t))
        elif isinstance(t, Struct):
            if t.is_union:
                self._union(d, t, depth)
            else:
                self._struct(d, t, depth)
        elif isinstance(t, Array):
            self._array(d, t, depth)

    def _any(self, d):
        start = self.expect("(")[2]
        end = self.src.find(")", self.pos)
        if end < 0:
            raise self.error("unterminated type text in '(...)'", start)
        from .ddl import parse_type_text
        try:
            env = parse_type_text(self.src[self.pos:end])
        except E.StructFileError as exc:
            raise self.error(f"bad type text: {exc}", start, E.TypeMismatchInData) from None
        if isinstance(env.unref(env.root), AnyType):
            raise self.error("any value cannot have type any", start, E.TypeMismatchInData)
        self.pos = end + 1
        d.bind(env)

    def _matrix(self, d, t):
        counts = [self.count() if dim is FREE else dim for dim in t.dims]
        start = self.expect("[")[2]
        cells = []
        while not self.accept("]"):
            if self.peek()[0] == "end":
                raise self.error("unterminated matrix, expected ']'")
            if t.kind is NumKind.F4:
                cells.append(self.real(t.kind, bits4=True))
            else:
                cells.append(self.scalar(t.kind))
            self.comma()
        if len(cells) != math.prod(counts):
            raise self.error(f"matrix has {len(cells)} cells, shape {tuple(counts)} needs "
                             f"{math.prod(counts)}", start, E.TypeMismatchInData)
        if t.kind is NumKind.F16:
            arr = np.frombuffer(b"".join(cells), dtype="V16")
        elif t.kind is NumKind.F4:
            arr = np.frombuffer(b"".join(cells), dtype=">f4").astype("f4")
        else:
            arr = np.array(cells, dtype=t.kind.value)
        from .matrix import MatrixShape
        d.assign_matrix(MatrixValue(t.kind, MatrixShape.from_counts(counts), arr))

    def _union(self, d, t, depth):
        tok = self.take()
        if tok[0] != "name":
            raise self.error(f"expected a union variant name, found {self.describe(tok)}", tok[2])
        i = t.field_index(tok[1])
        if i is None:
            raise self.error(f"union has no variant {tok[1]!r}", tok[2], E.TypeMismatchInData)
        self.expect(":")
        d.set_active_field(i)
        self.value(d.get_field(i), depth + 1)

    def _struct(self, d, t, depth):
        start = self.expect("{")[2]
        seen = set()
        while not self.accept("}"):
            tok = self.take()
            if tok[0] != "name":
                raise self.error(f"expected a field name or '}}', found {self.describe(tok)}",
                                 tok[2])
            i = t.field_index(tok[1])
            if i is None:
                raise self.error(f"struct has no field {tok[1]!r}", tok[2], E.TypeMismatchInData)
            if i in seen:
                raise self.error(f"field {tok[1]!r} given twice", tok[2], E.TypeMismatchInData)
            seen.add(i)
            self.expect("=")
            if t.fields[i].optional:
                d.set_field_present(i)
            self.value(d.get_field(i), depth + 1)
            self.comma()
        missing = [f.name for i, f in enumerate(t.fields) if not f.optional and i not in seen]
        if missing:
            raise self.error(f"missing field(s) {', '.join(missing)}", start, E.TypeMismatchInData)

    def _array(self, d, t, depth):
        start = self.expect("[")[2]
        n = 0
        while not self.accept("]"):
            if self.peek()[0] == "end":
                raise self.error("unterminated array, expected ']'")
            if t.size is FREE:
                d.resize(n + 1)
            elif n >= t.size:
                raise self.error(f"more than {t.size} elements for a fixed array",
                                 cls=E.TypeMismatchInData)
            self.value(d.get_elem(n), depth + 1)
            n += 1
            self.comma()
        if t.size is not FREE and n != t.size:
            raise self.error(f"{n} elements given, fixed array needs {t.size}", start,
                             E.TypeMismatchInData)

    def finish(self):
        tok = self.peek()
        if tok[0] != "end":
            raise self.error(f"trailing text {self.describe(tok)} after the value")


def read_data(t, env: Optional[TypeEnv] = None, src="") -> DataHandle:
    """Parse text ``src`` as a value of type ``t`` into an in-memory tree."""
    if isinstance(t, TypeEnv):
        env, t = t, t.root
    elif env is None:
        env = TypeEnv(t)
    if not isinstance(src, str):
        src = src.read()
    if isinstance(src, bytes):
        src = src.decode("utf-8")
    r = _Reader(src)
    d = make_direct(t, env)
    r.value(d, 0)
    r.finish()
    return DataHandle(d)


def data_to_text(d: DataHandle, pretty: bool = False) -> str:
    buf = io.StringIO()
    print_data(d, buf, pretty)
    return buf.getvalue()


__all__ = ["print_data", "read_data", "data_to_text", "format_float", "new_direct"]
