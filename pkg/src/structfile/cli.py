"""``structfile`` command line tool.

    structfile type FILE
    structfile dump FILE [--pretty]
    structfile convert IN OUT --to text|binary [--order be|le]
    structfile get FILE PATH [--stats]
    structfile validate FILE [--store] [--strict]

Exit status: 0 success, 2 format or decode error, 3 path or usage error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import errors as E
from .binary import FileHeader, StreamWriter, scan_header, write_header, decode_value
from .blockstore import MAGIC as STORE_MAGIC, MallocFile, audit_layout, verify_store
from .data import path_get
from .stream import open_binary
from .text import print_data, read_data
from .types import print_env

EXIT_OK = 0
EXIT_FORMAT = 2
EXIT_PATH = 3

PATH_ERRORS = (E.PathSyntax, E.NoSuchField, E.IndexOutOfRange, E.FieldNotPresent,
               E.InactiveUnionField, E.WrongType, E.UnsetReference)


class _Fail(Exception):
    def __init__(self, code, exc):
        self.code = code
        self.exc = exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_PATH)


def _is_store(path) -> bool:
    with open(path, "rb") as f:
        return f.read(len(STORE_MAGIC)) == STORE_MAGIC


class _Input:
    """An input file opened the right way for its mode."""

    def __init__(self, path, strict=False):
        self.path = path
        self.session = None
        self.store = None
        if _is_store(path):
            self.store = MallocFile.open(path, readonly=True)
            if self.store.env is None:
                self.store.close()
                raise E.StoreError(f"{path}: store holds no typed data")
            self.header = FileHeader(self.store.env, "BINARY_LE")
            self.root = self.store.root()
            return
        with open(path, "rb") as f:
            self.header = scan_header(f)
            if not self.header.is_binary:
                f.seek(self.header.data_start)
                raw = f.read()
        if self.header.is_binary:
            self.session = open_binary(path, strict=strict)
            self.root = self.session.root()
        else:
            try:
                text = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise E.TextSyntaxError("data section is not valid UTF-8",
                                        self.header.data_start + exc.start) from None
            self.root = read_data(self.header.env, None, text)

    def close(self):
        if self.session is not None:
            self.session.close()
        if self.store is not None:
            self.store.close()


def _text_file(h: FileHeader, root, pretty: bool) -> str:
    th = FileHeader(h.env, "TEXT", list(h.comments))
    return th.to_bytes().decode("utf-8") + print_data(root, None, pretty) + "\n"


def cmd_type(args, out):
    inp = _Input(args.file)
    try:
        out.write(print_env(inp.header.env) + "\n")
    finally:
        inp.close()


def cmd_dump(args, out):
    inp = _Input(args.file, args.strict)
    try:
        out.write(_text_file(inp.header, inp.root, args.pretty))
    finally:
        inp.close()


def cmd_convert(args, out):
    inp = _Input(args.input, args.strict)
    try:
        h = inp.header
        if args.to == "text":
            data = _text_file(h, inp.root, not args.compact).encode("utf-8")
            if args.output == "-":
                sys.stdout.buffer.write(data)
                sys.stdout.buffer.flush()
            else:
                with open(args.output, "wb") as f:
                    f.write(data)
            return
        mode = "BINARY_LE" if args.order == "le" else "BINARY_BE"
        oh = FileHeader(h.env, mode, list(h.comments))
        if args.output == "-":
            sink = sys.stdout.buffer
            StreamWriter(sink, oh.order, inp.root.impl)
            return
        tmp = args.output + ".part"
        try:
            with open(tmp, "w+b") as sink:
                w = StreamWriter(sink, oh.order, inp.root.impl)
                write_header(oh, sink)
                w.finish()
            os.replace(tmp, args.output)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)
    finally:
        inp.close()


def cmd_get(args, out):
    inp = _Input(args.file, args.strict)
    try:
        try:
            node = path_get(inp.root, args.path)
            text = print_data(node, None, args.pretty)
        except PATH_ERRORS as exc:
            raise _Fail(EXIT_PATH, exc) from None
        out.write(text + "\n")
        if args.stats:
            if inp.session is not None:
                print(f"bytes read: {inp.session.bytes_read} of {inp.session.file_size - inp.header.data_start} "
                      f"data bytes ({inp.session.file_size} in file)", file=sys.stderr)
            else:
                print("bytes read: whole file (not a binary file)", file=sys.stderr)
    finally:
        inp.close()


def cmd_validate(args, out):
    if args.store or _is_store(args.file):
        rep = verify_store(args.file)
        rep.raise_first()
        store = MallocFile.open(args.file, readonly=True)
        try:
            if store.env is not None:
                lay = audit_layout(store)
                if not lay.ok:
                    raise E.StoreCorrupt(f"layout: {lay.problems[0]}", "layout")
        finally:
            store.close()
        out.write(f"{args.file}: ok (store, {len(rep.blocks)} blocks)\n")
        return
    with open(args.file, "rb") as f:
        raw = f.read()
    h = scan_header(raw)
    if h.is_binary:
        # offsets in errors stay file offsets
        decode_value(h.env, None, h.order, raw, h.data_start, strict=args.strict, whole=True)
    else:
        raw = raw[h.data_start:]
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise E.TextSyntaxError("data section is not valid UTF-8",
                                    h.data_start + exc.start) from None
        read_data(h.env, None, text)
    out.write(f"{args.file}: ok\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="structfile", description="Inspect and convert structured data files.")
    p.add_argument("--json", action="store_true", help="report errors as JSON on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("type", help="print the type of a file")
    s.add_argument("file")
    s.set_defaults(func=cmd_type)

    s = sub.add_parser("dump", help="print a file as text")
    s.add_argument("file")
    s.add_argument("--pretty", action="store_true", help="indent nested values")
    s.add_argument("--strict", action="store_true", help="reject optional tags other than 0/1")
    s.set_defaults(func=cmd_dump)

    s = sub.add_parser("convert", help="convert between text and binary")
    s.add_argument("input")
    s.add_argument("output", help="output path, or - for standard output")
    s.add_argument("--to", choices=("text", "binary"), required=True)
    s.add_argument("--order", choices=("be", "le"), default="be")
    s.add_argument("--compact", action="store_true", help="single-line text output")
    s.add_argument("--strict", action="store_true")
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("get", help="print the value at a path like atoms[0].name")
    s.add_argument("file")
    s.add_argument("path")
    s.add_argument("--stats", action="store_true", help="report bytes read on stderr")
    s.add_argument("--pretty", action="store_true")
    s.add_argument("--strict", action="store_true")
    s.set_defaults(func=cmd_get)

    s = sub.add_parser("validate", help="check that a file decodes cleanly")
    s.add_argument("file")
    s.add_argument("--store", action="store_true", help="the file is a block store")
    s.add_argument("--strict", action="store_true")
    s.set_defaults(func=cmd_validate)
    return p


def _report(args, code, exc):
    if getattr(args, "json", False):
        rec = {"error": type(exc).__name__, "message": str(exc), "exit": code}
        off = getattr(exc, "offset", None)
        if off is not None:
            rec["offset"] = off
        inv = getattr(exc, "invariant", None)
        if inv is not None:
            rec["invariant"] = inv
        print(json.dumps(rec), file=sys.stderr)
    else:
        print(f"structfile: {type(exc).__name__}: {exc}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = sys.stdout
    try:
        args.func(args, out)
        out.flush()
    except _Fail as f:
        return _report(args, f.code, f.exc)
    except E.PathSyntax as exc:
        return _report(args, EXIT_PATH, exc)
    except (E.StructFileError, OSError, UnicodeDecodeError) as exc:
        return _report(args, EXIT_FORMAT, exc)
    except RecursionError:
        return _report(args, EXIT_FORMAT, E.TooDeep("input nested too deeply"))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
