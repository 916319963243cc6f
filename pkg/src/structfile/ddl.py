"""Lexer and recursive-descent parser for the textual type language.

Grammar::

    unit      := { typedef } type [';']
    typedef   := 'typedef' ident '=' type [';']
    type      := numtype | strtype | structtype | arraytype | 'type' ident | 'any'
    numtype   := ['unsigned'] ('integer'|'real') ['*' INT] [dims]
    dims      := '[' dim {',' dim} ']'      dim := INT | '.'
    strtype   := ('string'|'opaque') ['*' INT]
    structtype:= ('struct'|'union') '{' { field } '}'
    field     := ['optional'] name ':' type [';']
    arraytype := 'array' ['[' dim ']'] 'of' type

Field names may be keywords (``type : integer*2`` is a legal field).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

from .errors import LexError, ParseError, ValidationError
from .types import (ANY, FREE, INTEGER_WIDTHS, KEYWORDS, REAL_WIDTHS, Array, Field,
                    NamedRef, Num, NumKind, Str, Struct, TypeEnv)

MAX_DEPTH = 256
MAX_COUNT = 2**31 - 1

PUNCT = set("{}[]()*,:;=.")


@dataclass(frozen=True)
class Token:
    kind: str       # "keyword", "ident", "int", "punct", "end"
    text: str
    line: int
    column: int
    offset: int

    def is_punct(self, ch):
        return self.kind == "punct" and self.text == ch

    def is_kw(self, word):
        return self.kind == "keyword" and self.text == word

    @property
    def is_word(self):
        return self.kind in ("keyword", "ident")


def tokenize(src: str) -> List[Token]:
    toks = []
    i, n = 0, len(src)
    line, line_start = 1, 0
    while i < n:
        c = src[i]
        if c == "\n":
            line += 1
            i += 1
            line_start = i
            continue
        if c in " \t\r\f\v":
            i += 1
            continue
        col = i - line_start + 1
        if c.isascii() and (c.isalpha() or c == "_"):
            j = i + 1
            while j < n and src[j].isascii() and (src[j].isalnum() or src[j] == "_"):
                j += 1
            word = src[i:j]
            toks.append(Token("keyword" if word in KEYWORDS else "ident", word, line, col, i))
            i = j
        elif c.isascii() and c.isdigit():
            j = i + 1
            while j < n and src[j].isascii() and src[j].isdigit():
                j += 1
            toks.append(Token("int", src[i:j], line, col, i))
            i = j
        elif c in PUNCT:
            toks.append(Token("punct", c, line, col, i))
            i += 1
        else:
            raise LexError(f"illegal character {c!r}", line, col, i)
    toks.append(Token("end", "", line, i - line_start + 1, n))
    return toks


def parse_first_keyword_dispatch(tokens: List[Token], pos: int = 0) -> str:
    """Which sub-parser handles the type starting at ``tokens[pos]``."""
    tok = tokens[pos]
    if tok.kind == "keyword":
        if tok.text in ("integer", "real", "unsigned"):
            return "num"
        if tok.text in ("string", "opaque"):
            return "string"
        if tok.text in ("struct", "union"):
            return "struct"
        if tok.text == "array":
            return "array"
        if tok.text == "type":
            return "named"
        if tok.text == "any":
            return "any"
    raise _err(tok, "expected a type", ["integer", "real", "unsigned", "string", "opaque",
                                        "struct", "union", "array", "type", "any"])


def _describe(tok):
    return "end of input" if tok.kind == "end" else repr(tok.text)


def _err(tok, message, expected=()):
    return ParseError(f"{message}, found {_describe(tok)}", tok.line, tok.column,
                      tok.offset, expected)


class _Parser:
    def __init__(self, src):
        self.toks = tokenize(src)
        self.pos = 0
        self.depth = 0

    @property
    def tok(self):
        return self.toks[self.pos]

    def advance(self):
        tok = self.toks[self.pos]
        if tok.kind != "end":
            self.pos += 1
        return tok

    def expect_punct(self, ch):
        if not self.tok.is_punct(ch):
            raise _err(self.tok, f"expected {ch!r}", [ch])
        return self.advance()

    def accept_punct(self, ch):
        if self.tok.is_punct(ch):
            self.advance()
            return True
        return False

    def expect_kw(self, word):
        if not self.tok.is_kw(word):
            raise _err(self.tok, f"expected {word!r}", [word])
        return self.advance()

    def expect_int(self):
        tok = self.tok
        if tok.kind != "int":
            raise _err(tok, "expected an integer", ["INT"])
        if len(tok.text) > 10 or int(tok.text) > MAX_COUNT:
            raise ValidationError(f"{tok.line}:{tok.column}: integer {tok.text} exceeds {MAX_COUNT}")
        return int(self.advance().text)

    def expect_ident(self):
        if self.tok.kind != "ident":
            raise _err(self.tok, "expected a type name", ["IDENT"])
        return self.advance().text

    def unit(self):
        typedefs = {}
        while self.tok.is_kw("typedef"):
            self.advance()
            name_tok = self.tok
            name = self.expect_ident()
            if name in typedefs:
                raise ParseError(f"type {name!r} defined twice", name_tok.line,
                                 name_tok.column, name_tok.offset)
            self.expect_punct("=")
            typedefs[name] = self.type()
            self.accept_punct(";")
        root = self.type()
        self.accept_punct(";")
        if self.tok.kind != "end":
            raise _err(self.tok, "expected end of type text", ["end"])
        return root, typedefs

    def type(self):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise _err(self.tok, f"type nested deeper than {MAX_DEPTH} levels")
        try:
            kind = parse_first_keyword_dispatch(self.toks, self.pos)
            return getattr(self, "parse_" + kind)()
        finally:
            self.depth -= 1

    def parse_num(self):
        signed = True
        if self.tok.is_kw("unsigned"):
            self.advance()
            signed = False
            if not self.tok.is_kw("integer"):
                raise _err(self.tok, "expected 'integer' after 'unsigned'", ["integer"])
        is_real = self.advance().text == "real"
        width = 8 if is_real else 4
        if self.accept_punct("*"):
            wtok = self.tok
            width = self.expect_int()
            allowed = REAL_WIDTHS if is_real else INTEGER_WIDTHS
            if width not in allowed:
                raise ValidationError(
                    f"{wtok.line}:{wtok.column}: illegal width {width} for "
                    f"{'real' if is_real else 'integer'} (allowed: {allowed})")
        dims = ()
        if self.tok.is_punct("["):
            self.advance()
            dims = [self.dim()]
            while self.accept_punct(","):
                dims.append(self.dim())
            self.expect_punct("]")
            dims = tuple(dims)
        kind = NumKind.real(width) if is_real else NumKind.integer(width, signed)
        return Num(kind, dims)

    def dim(self):
        if self.accept_punct("."):
            return FREE
        tok = self.tok
        n = self.expect_int()
        if n < 1:
            raise ValidationError(f"{tok.line}:{tok.column}: dimension must be at least 1")
        return n

    def parse_string(self):
        opaque = self.advance().text == "opaque"
        size = FREE
        if self.accept_punct("*"):
            tok = self.tok
            size = self.expect_int()
            if size < 1:
                raise ValidationError(f"{tok.line}:{tok.column}: string size must be at least 1")
        return Str(opaque, size)

    def parse_struct(self):
        is_union = self.advance().text == "union"
        self.expect_punct("{")
        fields = []
        names = set()
        while not self.tok.is_punct("}"):
            optional = False
            if self.tok.is_kw("optional") and not self.toks[self.pos + 1].is_punct(":"):
                opt_tok = self.advance()
                if is_union:
                    raise ValidationError(
                        f"{opt_tok.line}:{opt_tok.column}: optional field inside a union")
                optional = True
            name_tok = self.tok
            if not name_tok.is_word:
                raise _err(name_tok, "expected a field name or '}'", ["IDENT", "}"])
            self.advance()
            if name_tok.text in names:
                raise ValidationError(
                    f"{name_tok.line}:{name_tok.column}: duplicate field {name_tok.text!r}")
            names.add(name_tok.text)
            self.expect_punct(":")
            typ = self.type()
            if not self.accept_punct(";") and not self.tok.is_punct("}"):
                raise _err(self.tok, "expected ';' or '}'", [";", "}"])
            fields.append(Field(name_tok.text, typ, optional))
        self.advance()
        if is_union and not fields:
            raise ValidationError("a union needs at least one field")
        return Struct(tuple(fields), is_union)

    def parse_array(self):
        self.advance()
        size = FREE
        if self.accept_punct("["):
            size = self.dim()
            self.expect_punct("]")
        self.expect_kw("of")
        return Array(self.type(), size)

    def parse_named(self):
        self.advance()
        return NamedRef(self.expect_ident())

    def parse_any(self):
        self.advance()
        return ANY


def parse_type_text(src: str) -> TypeEnv:
    """Parse a unit of type text into a validated :class:`TypeEnv`."""
    root, typedefs = _Parser(src).unit()
    return TypeEnv(root, typedefs)


def parse_type(src: str):
    """Parse a single type expression without typedefs; returns the node."""
    env = parse_type_text(src)
    if env.typedefs:
        raise ValidationError("typedefs are not allowed here")
    return env.root
