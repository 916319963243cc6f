"""Binary header, encoder/decoder and the streaming writer."""
import io
import random

import numpy as np
import pytest
from hypothesis import given

from structfile import (DataFile, FileHeader, MatrixValue, NumKind, StreamWriter, TreeCursor,
                        begin_stream_write, close_region, count_nodes, decode_file, decode_value,
                        emit_enter, emit_next, encode_file, encode_value, finish_stream_write,
                        new_direct, scan_header, write_header)
from structfile import errors as E
from structfile.ddl import parse_type, parse_type_text

from fixtures.make_fixtures import MOLECULE_HEADER, molecule_value
from gen import random_case, seeds
from oracle import canon, canon_library, oracle_decode
from test_datamodel import ATOMS, build_atoms


def enc(type_text, fill, order=">"):
    d = new_direct(parse_type_text(type_text))
    fill(d)
    return encode_value(d, order)


# -- golden bytes (hand computed) ------------------------------------------

def test_golden_scalars():
    assert enc("integer*2", lambda d: d.assign(12)) == bytes.fromhex("000C")
    assert enc("integer*2", lambda d: d.assign(12), "<") == bytes.fromhex("0C00")
    assert enc("integer*4", lambda d: d.assign(-2)) == bytes.fromhex("FFFFFFFE")
    assert enc("unsigned integer*2", lambda d: d.assign(65535)) == bytes.fromhex("FFFF")
    assert enc("real*8", lambda d: d.assign(1.0)) == bytes.fromhex("3FF0000000000000")
    assert enc("real*4", lambda d: d.assign(-2.0)) == bytes.fromhex("C0000000")
    assert enc("real*4", lambda d: d.assign(-2.0), "<") == bytes.fromhex("000000C0")


def test_golden_optional_and_union():
    t = "struct { optional v : integer*2; }"
    assert enc(t, lambda d: None) == b"\x00"
    assert enc(t, lambda d: d.set_field_present("v").assign(5)) == bytes.fromhex("01 0005")
    u = "union { a : integer*1; b : integer*1; c : string; }"
    assert enc(u, lambda d: None) == bytes.fromhex("0000 00")
    assert enc(u, lambda d: d.set_active_field("c").assign("hi")) == \
        bytes.fromhex("0002 00000002 6869")
    assert enc(u, lambda d: d.set_active_field("c").assign("hi"), "<") == \
        bytes.fromhex("0200 02000000 6869")


def test_golden_counts():
    assert enc("array[.] of integer*1", lambda d: [d.resize(3)] + [d[i].assign(7 + i) for i in range(3)]) \
        == bytes.fromhex("00000003 07 08 09")
    assert enc("array[2] of integer*1", lambda d: d[1].assign(1)) == bytes.fromhex("00 01")
    assert enc("string", lambda d: d.assign("C")) == bytes.fromhex("00000001 43")
    assert enc("string*3", lambda d: d.assign("C")) == bytes.fromhex("43 0000")
    assert enc("opaque", lambda d: d.assign(b""), "<") == bytes.fromhex("00000000")


def test_golden_matrix_order():
    # cell (i, j) holds 10*i + j; first index varies fastest on the wire
    a = np.array([[0, 1, 2], [10, 11, 12]], dtype="i2")
    m = MatrixValue.from_array(NumKind.I2, a)
    fixed = enc("integer*2[2,3]", lambda d: d.assign(m))
    assert fixed == bytes.fromhex("0000 000A 0001 000B 0002 000C")
    free = enc("integer*2[.,3]", lambda d: d.assign(m))
    assert free == bytes.fromhex("00000002") + fixed
    both = enc("integer*2[.,.]", lambda d: d.assign(m), "<")
    assert both == bytes.fromhex("02000000 03000000 0000 0A00 0100 0B00 0200 0C00")
    # byte position of cell (i, j) is 2 * (i + 2 * j)
    for i in range(2):
        for j in range(3):
            p = 2 * (i + 2 * j)
            assert int.from_bytes(fixed[p:p + 2], "big") == 10 * i + j


def test_golden_any():
    d = new_direct(parse_type("any")).actualize_type("integer*2")
    d.assign(1)
    text = b"integer*2;"
    assert encode_value(d) == len(text).to_bytes(4, "big") + text + b"\x00\x01"


# -- headers ---------------------------------------------------------------

def test_scan_molecule_header():
    h = scan_header(MOLECULE_HEADER)
    assert h.mode == "BINARY_BE" and h.order == ">"
    assert h.comments == ["@Date= 18. 3.1998     Time: 15:26"]
    assert [f.name for f in h.env.root.fields] == ["molecule_description", "timesteps"]
    assert h.data_start == len(MOLECULE_HEADER)


def test_header_round_trip():
    for mode in ("BINARY_BE", "BINARY_LE", "TEXT"):
        h = FileHeader(ATOMS, mode, ["one", " two"])
        buf = io.BytesIO()
        n = write_header(h, buf)
        back = scan_header(buf.getvalue())
        assert (back.mode, back.comments, back.env, back.data_start) == (mode, ["one", " two"], ATOMS, n)
    raw = FileHeader(ATOMS).to_bytes()
    assert b"#" not in raw
    assert raw.startswith(b"STRUCTURED FILE V0.1 BINARY_BE\nTYPE\n") and raw.endswith(b"\nDATA\n")
    with pytest.raises(E.UnsupportedVersion):
        FileHeader(ATOMS, version="V0.2").to_bytes()


def test_header_errors():
    tail = b"\nTYPE\ninteger*4\nDATA\n"
    cases = [(b"GARBAGE" + tail, E.BadMagic), (b"STRUCTURED FILE V0.2 BINARY_BE" + tail, E.UnsupportedVersion),
             (b"STRUCTURED FILE V0.1 BINARY_XX" + tail, E.UnknownFlag),
             (b"STRUCTURED FILE V0.1 BINARY_BE\nTYPE\ninteger*4\n", E.Truncated),
             (b"STRUCTURED FILE V0.1 TEXT\nTYPE\ninteger*3\nDATA\n", E.TypeSpecError),
             (b"\xff\xfe" + tail, E.BadMagic)]
    for raw, exc in cases:
        with pytest.raises(exc):
            scan_header(raw)
    assert scan_header(b"STRUCTURED FILE V0.1 TEXT" + tail).mode == "TEXT"


# -- decoding --------------------------------------------------------------

def test_decode_errors():
    u = parse_type("union { a : integer*1; b : integer*1; c : integer*1; }")
    with pytest.raises(E.BadUnionSelector):
        decode_value(u, None, ">", bytes.fromhex("0005 00"))
    arr = parse_type("array of integer*1")
    with pytest.raises(E.NegativeCount):
        decode_value(arr, None, ">", bytes.fromhex("FFFFFFFF"))
    with pytest.raises(E.CountOverflow):
        decode_value(arr, None, ">", bytes.fromhex("7FFFFFFF 01"))
    with pytest.raises(E.Truncated):
        decode_value(parse_type("integer*4"), None, ">", b"\0\0")
    opt = parse_type("struct { optional v : integer*1; }")
    assert decode_value(opt, None, ">", b"\x07\x05")["v"].get_int() == 5
    with pytest.raises(E.BadOptionalTag):
        decode_value(opt, None, ">", b"\x07\x05", strict=True)
    with pytest.raises(E.TrailingData):
        decode_value(parse_type("integer*1"), None, ">", b"\x01\x02", whole=True)
    with pytest.raises(E.AnyTypeParseError):
        decode_value(parse_type("any"), None, ">", b"\0\0\0\x03abc\x00")
    with pytest.raises(E.CountOverflow):
        decode_value(parse_type("real*8[.,.]"), None, ">", bytes.fromhex("00010000 00010000"))


def test_decode_file_modes():
    d = build_atoms(3)
    for mode in ("BINARY_BE", "BINARY_LE"):
        h, back = decode_file(encode_file(d, mode))
        assert h.mode == mode
        assert encode_value(back) == encode_value(d)
    with pytest.raises(E.WrongMode):
        decode_file(FileHeader(ATOMS, "TEXT").to_bytes())


# [DERIVED] fixture built by the encoder, cross-checked with the independent decoder
def test_molecule_fixture(fixtures):
    raw = (fixtures / "molecule.sf").read_bytes()
    assert raw == MOLECULE_HEADER + encode_value(molecule_value(), ">")
    h, d = decode_file(raw)
    steps = d["timesteps"]
    assert steps.n_elements() == 2
    assert not steps[0].field_present("velocity")
    assert steps[1].field_present("velocity")
    assert [s.field_present("potential") for s in steps] == [False, True]
    plain, end = oracle_decode(h.env, raw, ">", h.data_start)
    assert end == len(raw)
    assert "velocity" not in plain["timesteps"][0] and "velocity" in plain["timesteps"][1]
    assert canon(plain) == canon_library(d)


@given(seeds)
def test_round_trip_both_orders(seed):
    env, v = random_case(seed)
    for order in (">", "<"):
        raw = encode_value(v, order)
        back = decode_value(env, None, order, raw, whole=True)
        assert canon_library(back) == canon_library(v)
        assert encode_value(back, order) == raw
        plain, end = oracle_decode(env, raw, order)
        assert end == len(raw) and canon(plain) == canon_library(v)
        if not env.is_variable_size(env.root):
            assert len(raw) == env.fixed_byte_size(env.root)


# -- streaming writer --------------------------------------------------------

def stream_with_cursor(d, env=None, order=">"):
    """Write ``d`` with the cursor protocol: enter composites, emit leaves."""
    sink = io.BytesIO()
    env = env or d.env.with_root(d.typ)
    h = FileHeader(env, "BINARY_BE" if order == ">" else "BINARY_LE")
    w = begin_stream_write(h, sink, d)
    c = TreeCursor(d)
    while True:
        if c.at_end:
            if c.depth == 0:
                break
            close_region(w, c)
            continue
        if c.has_subs():
            emit_enter(w, c)
        else:
            emit_next(w, c)
    finish_stream_write(w)
    return sink.getvalue()


def test_stream_matches_one_shot():
    d = build_atoms(10)
    assert stream_with_cursor(d) == encode_file(d)
    assert stream_with_cursor(d, None, "<") == encode_file(d, "BINARY_LE")
    mol = molecule_value()
    assert stream_with_cursor(mol) == encode_file(mol)


@given(seeds)
def test_stream_random_values(seed):
    env, v = random_case(seed)
    assert stream_with_cursor(v, env) == encode_file(v)


def test_stream_errors():
    d = build_atoms(3)
    sink = io.BytesIO()
    w = StreamWriter(sink, ">", d.impl)
    w.enter_child(0)
    w.emit_child(0)
    with pytest.raises(E.CursorOrderViolation):
        w.emit_child(0)
    w.enter_child(1)
    w.emit_child(0)
    with pytest.raises(E.CursorOrderViolation):
        w.emit_child(2)
    with pytest.raises(E.NotSeekable):
        StreamWriter(_Pipe(), ">", d.impl)


class _Pipe(io.RawIOBase):
    def writable(self):
        return True

    def seekable(self):
        return False


def test_empty_region_patches_zero():
    d = new_direct(parse_type("struct { a : array of integer*4; b : integer*1; }"))
    sink = io.BytesIO()
    w = StreamWriter(sink, ">", d.impl)
    w.enter_child(0)
    w.enter_child(0)
    assert w.regions == [(0, 0)]
    w.finish()
    assert sink.getvalue() == bytes.fromhex("00000000 00")


def test_regions_patched_after_growth():
    d = new_direct(parse_type("array of array of integer*1"))
    sink = io.BytesIO()
    w = StreamWriter(sink, ">", d.impl)
    w.enter_child(0)
    d.resize(2)
    w.emit_child(0)
    d[1].resize(1)
    w.enter_child(1)
    assert [off for off, _ in w.regions] == [0, 8]
    w.finish()
    assert sink.getvalue() == bytes.fromhex("00000002 00000000 00000001 00")


# -- data files with commit ---------------------------------------------------

def _paths_in_order(d):
    return [list(p) for p, _ in TreeCursor(d).walk() if p]


def committed_file(env, v, rng):
    """Build a file for ``v`` through DataFile with random commit points."""
    sink = io.BytesIO()
    df = DataFile.open_out(sink, env)
    df.data().copy_from(v)
    paths = _paths_in_order(df.data())
    cuts = sorted(rng.sample(range(len(paths)), min(len(paths), rng.randint(0, 6))))
    for k in cuts:
        df.commit(paths[k])
    if rng.random() < 0.5:
        df.commit(None)
    df.close()
    return sink.getvalue()


@given(seeds)
def test_commit_schedules_are_invisible(seed):
    env, v = random_case(seed)
    assert committed_file(env, v, random.Random(seed)) == encode_file(v)


def test_commit_trajectory_keeps_one_step():
    env = parse_type_text("struct { name : string; steps : array of struct { t : integer*4; x : real*8[3]; }; }")
    sink = io.BytesIO()
    df = DataFile.open_out(sink, env)
    D = df.data()
    D["name"] = "run"
    steps = D["steps"]
    peak = 0
    for i in range(100):
        steps.resize(i + 1)
        steps[i]["t"] = i
        steps[i]["x"] = np.full(3, float(i))
        peak = max(peak, count_nodes(D))
        df.commit(f"steps[{i + 1}]")
    df.close()
    single = count_nodes(new_direct(env.root.fields[1].typ.elem, env))
    # one step plus the root struct, the steps array and (until step 0 is out) the name
    assert peak == single + 3
    # [DERIVED] the same data built in memory and encoded in one shot
    ref = new_direct(env)
    ref["name"] = "run"
    ref["steps"].resize(100)
    for i in range(100):
        ref["steps"][i]["t"] = i
        ref["steps"][i]["x"] = np.full(3, float(i))
    assert sink.getvalue() == encode_file(ref)


def test_committed_reads_fail():
    sink = io.BytesIO()
    df = DataFile.open_out(sink, "struct { a : integer*4; b : array of integer*2; }")
    D = df.data()
    D["a"] = 3
    df.commit("b")
    with pytest.raises(E.WriteOnlySession):
        D["a"].get_int()
    D["b"].resize(1)
    df.close()
    assert sink.getvalue().endswith(bytes.fromhex("00000003 00000001 0000"))


def test_commit_noop_and_incomplete():
    sink = io.BytesIO()
    df = DataFile.open_out(sink, "struct { a : any; b : integer*1; }")
    df.commit([0])
    assert df.data()["b"].get_int() == 0
    with pytest.raises(E.IncompletePrefix):
        df.commit("b")
    df.data()["a"].actualize_type("integer*1")
    df.commit("b")
    df.close()


def test_data_file_text_mode(tmp_path):
    p = tmp_path / "t.sf"
    with DataFile.open_out(str(p), ATOMS, "TEXT") as df:
        df.data().copy_from(build_atoms(2))
    df2 = DataFile.open_in(str(p))
    assert df2.data()["atoms"][1]["name"].get_text() == "H"
    raw = p.read_bytes()
    assert raw.startswith(b"STRUCTURED FILE V0.1 TEXT\n")
    bad = tmp_path / "bad.sf"
    bad.write_bytes(b"STRUCTURED FILE V0.1 TEXT\nTYPE\nstring;\nDATA\n\"\xff\"\n")
    with pytest.raises(E.TextSyntaxError) as exc:
        DataFile.open_in(str(bad))
    assert exc.value.offset == 45
