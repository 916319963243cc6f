"""Type trees as ordinary data, and late binding of ``any`` slots.

Types are externalized as values of the self-describing ``TypeDescriptor``
union below.  Free sizes and dimensions are stored as -1; the any type is
the named variant with the reserved name ``"any"``.  Unsigned integer kinds
have no place in the descriptor and come back as signed ones.
"""
from __future__ import annotations

from typing import Dict, Optional

from . import errors as E
from .data import DataHandle, new_direct
from .ddl import parse_type_text
from .types import (ANY, FREE, INTEGER_WIDTHS, KEYWORDS, REAL_WIDTHS, AnyType, Array, Field,
                    NamedRef, Num, NumKind, Str, Struct, TypeEnv, IDENT_RE)

DESCRIPTOR_TEXT = """\
typedef TypeDescriptor = union {
    num : struct {
        isFloat : integer*1;
        size : integer*1;
        dim : array of integer*4;
    };
    string : struct {
        isOpaque : integer*1;
        size : integer*4;
    };
    struct : struct {
        isUnion : integer*1;
        fields : array of struct {
            name : string;
            typ : type TypeDescriptor;
            isOptional : integer*1;
        };
    };
    array : struct {
        size : integer*4;
        subtype : type TypeDescriptor;
    };
    named : struct {
        name : string;
    };
}
type TypeDescriptor;
"""

TYPE_DESCRIPTOR: TypeEnv = parse_type_text(DESCRIPTOR_TEXT)

ANY_NAME = "any"
MAX_DEPTH = 256


def _dim(d) -> int:
    return -1 if d is FREE else d


def type_to_data(t, env: Optional[TypeEnv] = None) -> DataHandle:
    """A TypeDescriptor value describing ``t`` (NamedRefs stay named)."""
    if isinstance(t, TypeEnv):
        env, t = t, t.root
    if env is not None:
        for n in _names(t):
            env.resolve(n)
    d = new_direct(TYPE_DESCRIPTOR)
    _fill(d, t, 0)
    return d


def _names(t):
    from .types import iter_nodes
    return [n.name for n in iter_nodes(t) if isinstance(n, NamedRef)]


def _fill(d: DataHandle, t, depth):
    if depth > MAX_DEPTH:
        raise E.TooDeep(f"type nested deeper than {MAX_DEPTH} levels")
    if isinstance(t, Num):
        v = d.set_active_field("num")
        v["isFloat"] = 1 if t.kind.is_float else 0
        v["size"] = t.kind.width
        dims = v["dim"]
        dims.resize(len(t.dims))
        for i, x in enumerate(t.dims):
            dims[i] = _dim(x)
    elif isinstance(t, Str):
        v = d.set_active_field("string")
        v["isOpaque"] = 1 if t.opaque else 0
        v["size"] = _dim(t.size)
    elif isinstance(t, Struct):
        v = d.set_active_field("struct")
        v["isUnion"] = 1 if t.is_union else 0
        fs = v["fields"]
        fs.resize(len(t.fields))
        for i, f in enumerate(t.fields):
            e = fs[i]
            e["name"] = f.name
            e["isOptional"] = 1 if f.optional else 0
            _fill(e["typ"], f.typ, depth + 1)
    elif isinstance(t, Array):
        v = d.set_active_field("array")
        v["size"] = _dim(t.size)
        _fill(v["subtype"], t.elem, depth + 1)
    elif isinstance(t, NamedRef):
        d.set_active_field("named")["name"] = t.name
    elif isinstance(t, AnyType):
        d.set_active_field("named")["name"] = ANY_NAME
    else:
        raise E.ValidationError(f"not a type node: {t!r}")


def _bad(msg):
    return E.BadDescriptor(msg)


def _flag(h: DataHandle, name: str) -> bool:
    v = h[name].get_int()
    if v not in (0, 1):
        raise _bad(f"{name} must be 0 or 1, not {v}")
    return bool(v)


def _size(h: DataHandle, what: str):
    v = h["size"].get_int()
    if v == -1:
        return FREE
    if v < 1:
        raise _bad(f"{what} size must be positive or -1, not {v}")
    return v


def data_to_type(d: DataHandle, env: Optional[TypeEnv] = None):
    """Inverse of :func:`type_to_data`.

    Named references come back as NamedRef nodes; they are resolved later
    against whatever typedef table the type is attached to.
    """
    if not isinstance(d.typ, Struct) or not d.typ.is_union or \
            [f.name for f in d.typ.fields] != [f.name for f in TYPE_DESCRIPTOR.unref(TYPE_DESCRIPTOR.root).fields]:
        raise _bad("value is not a TypeDescriptor")
    return _read(d, 0)


def _read(d: DataHandle, depth):
    if depth > MAX_DEPTH:
        raise _bad(f"descriptor nested deeper than {MAX_DEPTH} levels")
    variant = d.active_field_name()
    v = d[variant]
    if variant == "num":
        is_float = _flag(v, "isFloat")
        width = v["size"].get_int()
        allowed = REAL_WIDTHS if is_float else INTEGER_WIDTHS
        if width not in allowed:
            raise _bad(f"illegal {'real' if is_float else 'integer'} width {width}")
        dims = []
        for e in v["dim"]:
            x = e.get_int()
            if x != -1 and x < 1:
                raise _bad(f"dimension must be positive or -1, not {x}")
            dims.append(FREE if x == -1 else x)
        kind = NumKind.real(width) if is_float else NumKind.integer(width)
        return Num(kind, tuple(dims))
    if variant == "string":
        return Str(_flag(v, "isOpaque"), _size(v, "string"))
    if variant == "struct":
        is_union = _flag(v, "isUnion")
        fields = []
        names = set()
        for e in v["fields"]:
            name = e["name"].get_string().decode("utf-8", "replace")
            if not IDENT_RE.match(name):
                raise _bad(f"bad field name {name!r}")
            if name in names:
                raise _bad(f"duplicate field name {name!r}")
            names.add(name)
            optional = _flag(e, "isOptional")
            if optional and is_union:
                raise _bad(f"optional field {name!r} inside a union")
            fields.append(Field(name, _read(e["typ"], depth + 1), optional))
        if is_union and not fields:
            raise _bad("a union needs at least one field")
        return Struct(tuple(fields), is_union)
    if variant == "array":
        return Array(_read(v["subtype"], depth + 1), _size(v, "array"))
    name = v["name"].get_string().decode("utf-8", "replace")
    if name == ANY_NAME:
        return ANY
    if not IDENT_RE.match(name) or name in KEYWORDS:
        raise _bad(f"bad type name {name!r}")
    return NamedRef(name)


def env_to_data(env: TypeEnv) -> Dict[str, DataHandle]:
    """Descriptors for the root (key ``""``) and every typedef of ``env``."""
    out = {"": type_to_data(env.root, env)}
    for name, body in env.typedefs.items():
        out[name] = type_to_data(body, env)
    return out


def data_to_env(parts: Dict[str, DataHandle]) -> TypeEnv:
    typedefs = {n: data_to_type(h) for n, h in parts.items() if n}
    try:
        return TypeEnv(data_to_type(parts[""]), typedefs)
    except E.TypeSpecError as exc:
        raise _bad(str(exc)) from None


def actualize_type(d: DataHandle, t, env: Optional[TypeEnv] = None) -> DataHandle:
    """Bind the unbound any node ``d`` to a fresh value of type ``t``."""
    return d.actualize_type(t, env)
