"""Lazy reading of binary files."""
import threading

import numpy as np
import pytest
from hypothesis import given

from structfile import (FileHeader, child_offset, decode_file, encode_file, new_direct, open_binary,
                        path_get)
from structfile import errors as E
from structfile.ddl import parse_type_text
from structfile.stream import DEFAULT_CACHE
from structfile.types import AnyType

from fixtures.make_fixtures import molecule_type
from gen import random_case, seeds
from oracle import canon, canon_library, oracle_decode, oracle_offsets


def plain_paths(plain, path=()):
    """Every (path, plain value) pair of an oracle-decoded tree."""
    yield path, plain
    if isinstance(plain, dict):
        for k, v in plain.items():
            yield from plain_paths(v, path + (k,))
    elif isinstance(plain, list):
        for i, v in enumerate(plain):
            yield from plain_paths(v, path + (i,))


def check_equivalent(raw):
    """Every addressable path agrees between the lazy reader and a full decode."""
    s = open_binary(raw)
    h, full = decode_file(raw)
    plain, _ = oracle_decode(h.env, raw, h.order, h.data_start)
    root = s.root()
    n = 0
    for path, want in plain_paths(plain):
        lazy = path_get(root, list(path))
        assert not isinstance(lazy.typ, AnyType)
        assert canon_library(lazy) == canon(want), path
        assert canon_library(path_get(full, list(path))) == canon(want), path
        n += 1
    return n


def test_molecule_equivalence(fixtures):
    raw = (fixtures / "molecule.sf").read_bytes()
    assert check_equivalent(raw) > 20
    s = open_binary(str(fixtures / "molecule.sf"))
    assert s.env == molecule_type()
    assert s.bytes_read == 0
    s.close()


@given(seeds)
def test_random_file_equivalence(seed):
    env, v = random_case(seed)
    for mode in ("BINARY_BE", "BINARY_LE"):
        check_equivalent(encode_file(v, mode))


def test_any_fields_resolve(fixtures):
    raw = (fixtures / "any_fields.sf").read_bytes()
    check_equivalent(raw)
    root = open_binary(raw).root()
    x = root["samples"][0]["payload"]
    assert x.typ == parse_type_text("integer*4").root and x.get_int() == 42


# -- offsets -------------------------------------------------------------------

def test_child_offset_examples():
    env = parse_type_text("struct { a : integer*4; b : integer*4; }")
    raw = encode_file(new_direct(env))
    s = open_binary(raw)
    r = s.root()
    start = s.header.data_start
    assert child_offset(r, 0) == start and child_offset(r, 1) == start + 4

    env = parse_type_text("struct { arr : array of integer*2; optional o : integer*1; z : integer*1; }")
    d = new_direct(env)
    d["arr"].resize(3)
    raw = encode_file(d)
    r = open_binary(raw).root()
    arr_off = child_offset(r, 0)
    assert child_offset(r["arr"], 0) == arr_off + 4
    assert child_offset(r["arr"], 2) == arr_off + 8
    tag_off = child_offset(r, 0) + 4 + 6
    assert child_offset(r, 1) is None
    assert child_offset(r, 2) == tag_off + 1
    with pytest.raises(E.NoChildren):
        child_offset(r["z"], 0)
    with pytest.raises(E.IndexOutOfRange):
        child_offset(r["arr"], 3)


@given(seeds)
def test_offsets_match_oracle(seed):
    env, v = random_case(seed, any_p=0.0)
    raw = encode_file(v)
    s = open_binary(raw)
    offs = dict(oracle_offsets(env, raw, ">", s.header.data_start))
    root = s.root()
    for path, want in offs.items():
        steps = _steps(path)
        node = path_get(root, steps)
        assert node.impl.offset == want, path


def _steps(path):
    from structfile import parse_path
    p = path[1:].lstrip(".")
    return parse_path(p)


# -- read accounting -------------------------------------------------------------

def big_file():
    env = parse_type_text("struct { title : string; steps : array of struct {"
                          " label : string; x : real*8[.]; }; }")
    d = new_direct(env)
    d["title"] = "big"
    steps = d["steps"]
    steps.resize(1100)
    for i in range(1100):
        steps[i]["label"] = f"step {i}"
        steps[i]["x"] = np.arange(128, dtype="f8") + i
    raw = encode_file(d)
    assert len(raw) >= 1 << 20
    return raw


def test_deep_read_touches_little(tmp_path):
    raw = big_file()
    p = tmp_path / "big.sf"
    p.write_bytes(raw)
    with open_binary(str(p)) as s:
        x = path_get(s.root(), "steps[1000].x").get_matrix()
        assert x.as_array()[5] == 1005.0
        assert s.bytes_read < 0.10 * len(raw)
        # the payload itself is most of what was read
        assert s.bytes_read >= 128 * 8


def test_molecule_read_is_partial(fixtures):
    raw = (fixtures / "molecule.sf").read_bytes()
    s = open_binary(raw)
    c = path_get(s.root(), "timesteps[1].coordinates").get_matrix()
    assert c.counts[0] == 3
    data_bytes = len(raw) - s.header.data_start
    assert 0 < s.bytes_read < data_bytes


def test_scalar_read_is_exact():
    env = parse_type_text("struct { a : string; b : integer*8; }")
    d = new_direct(env)
    d["a"] = "x" * 1000
    d["b"] = 7
    s = open_binary(encode_file(d))
    assert s.root()["b"].get_int() == 7
    assert s.bytes_read == 4 + 8


def test_cache_transparency(monkeypatch):
    for seed in range(40):
        env, v = random_case(seed)
        raw = encode_file(v)
        a = open_binary(raw, cache_size=0)
        b = open_binary(raw)
        assert b.cache_size == DEFAULT_CACHE
        assert canon_library(a.root()) == canon_library(b.root()) == canon_library(v)
    monkeypatch.setenv("STRUCTFILE_CACHE", "3")
    assert open_binary(raw).cache_size == 3
    monkeypatch.setenv("STRUCTFILE_CACHE", "junk")
    assert open_binary(raw).cache_size == DEFAULT_CACHE


def test_concurrent_readers():
    raw = big_file()
    s = open_binary(raw, cache_size=16)
    errors = []

    def work(k):
        try:
            for i in range(k, 1100, 97):
                x = path_get(s.root(), f"steps[{i}].x").get_matrix().as_array()
                assert x[0] == float(i)
                assert path_get(s.root(), f"steps[{i}].label").get_text() == f"step {i}"
        except Exception as exc:   # pragma: no cover - reported below
            errors.append(exc)

    threads = [threading.Thread(target=work, args=(k,)) for k in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == []


# -- errors ----------------------------------------------------------------------

def test_open_errors():
    env = parse_type_text("integer*4")
    with pytest.raises(E.WrongMode):
        open_binary(FileHeader(env, "TEXT").to_bytes() + b"1\n")
    with pytest.raises(E.Truncated):
        open_binary(b"STRUCTURED FILE V0.1 BINARY_BE\nTYPE\ninteger*4\n")
    s = open_binary(FileHeader(env).to_bytes() + b"\0\0")
    with pytest.raises(E.Truncated):
        s.root().get_int()


def test_read_only(fixtures):
    s = open_binary((fixtures / "molecule.sf").read_bytes())
    r = s.root()
    with pytest.raises(E.ReadOnly):
        r["molecule_description"]["molecule_name"].assign_string("x")
    with pytest.raises(E.ReadOnly):
        r["timesteps"].resize(0)
    with pytest.raises(E.ReadOnly):
        r["timesteps"][0].set_field_present("velocity")
    assert r.read_only


def test_trailing_data_check():
    env = parse_type_text("integer*2")
    raw = FileHeader(env).to_bytes() + b"\0\1\2"
    s = open_binary(raw)
    assert s.root().get_int() == 1
    with pytest.raises(E.TrailingData):
        s.check_end()
