"""The structfile command line tool."""
import json
import shutil
import struct
import subprocess
import sys

import pytest

from structfile import MallocFile, decode_file, encode_file, print_env, scan_header
from structfile.cli import main

from fixtures.make_fixtures import molecule_type, molecule_value
from test_datamodel import ATOMS, build_atoms


@pytest.fixture
def mol(fixtures, tmp_path):
    p = tmp_path / "molecule.sf"
    shutil.copy(fixtures / "molecule.sf", p)
    return p


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_type(capsys, mol):
    code, out, _ = run(capsys, "type", mol)
    assert code == 0
    assert out == print_env(molecule_type()) + "\n"


def test_dump_golden(capsys, fixtures):
    for name in ("molecule", "any_fields"):
        code, out, _ = run(capsys, "dump", fixtures / f"{name}.sf", "--pretty")
        assert code == 0
        assert out == (fixtures / f"{name}.dump.txt").read_text()


def test_dump_is_readable_text_file(capsys, fixtures, tmp_path):
    code, out, _ = run(capsys, "dump", fixtures / "any_fields.sf")
    p = tmp_path / "dumped.sf"
    p.write_text(out)
    code, again, _ = run(capsys, "dump", p)
    assert code == 0 and again == out


def test_convert_round_trip(capsys, mol, tmp_path):
    txt, le, be = tmp_path / "m.txt", tmp_path / "m.le", tmp_path / "m.be"
    assert run(capsys, "convert", mol, txt, "--to", "text")[0] == 0
    assert scan_header(txt.read_bytes()).mode == "TEXT"
    assert run(capsys, "convert", txt, le, "--to", "binary", "--order", "le")[0] == 0
    assert scan_header(le.read_bytes()).mode == "BINARY_LE"
    assert run(capsys, "convert", le, be, "--to", "binary")[0] == 0
    # the type text is reprinted, the value bytes are untouched
    orig = mol.read_bytes()
    assert be.read_bytes()[scan_header(be.read_bytes()).data_start:] == orig[scan_header(orig).data_start:]
    assert scan_header(be.read_bytes()).comments == scan_header(orig).comments
    _, d = decode_file(le.read_bytes())
    assert encode_file(d) == encode_file(molecule_value())
    assert not list(tmp_path.glob("*.part"))


def test_convert_to_stdout(capsys, mol):
    code, out, _ = run(capsys, "convert", mol, "-", "--to", "text", "--compact")
    assert code == 0
    assert out.startswith("STRUCTURED FILE V0.1 TEXT\n")
    # binary output needs to patch counts, which a pipe cannot do
    r = subprocess.run([sys.executable, "-m", "structfile.cli", "convert", str(mol), "-", "--to", "binary"],
                       stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    assert r.returncode == 2 and "NotSeekable" in r.stderr


def test_get(capsys, mol):
    code, out, err = run(capsys, "get", mol, "molecule_description.atoms[0].atom_name", "--stats")
    assert code == 0 and out == '"O1"\n'
    assert err.startswith("bytes read: ")
    code, out, _ = run(capsys, "get", mol, "timesteps[1].potential.bb")
    assert out == "[1.0, 3.0, 5.0, 2.0, 4.0, 6.0]\n"
    code, _, err = run(capsys, "get", mol, "timesteps[0].velocity")
    assert code == 3 and "FieldNotPresent" in err
    assert run(capsys, "get", mol, "timesteps[9]")[0] == 3
    assert run(capsys, "get", mol, "timesteps[")[0] == 3
    assert run(capsys, "get", mol, "nope")[0] == 3


def test_validate(capsys, mol, tmp_path):
    code, out, _ = run(capsys, "validate", mol)
    assert code == 0 and out.endswith(": ok\n")
    raw = mol.read_bytes()
    bad = tmp_path / "trunc.sf"
    bad.write_bytes(raw[:-3])
    code, _, err = run(capsys, "validate", bad)
    assert code == 2 and ("Truncated" in err or "CountOverflow" in err)
    extra = tmp_path / "extra.sf"
    extra.write_bytes(raw + b"\0")
    assert run(capsys, "validate", extra)[0] == 2
    junk = tmp_path / "junk.sf"
    junk.write_bytes(b"hello\n")
    code, _, err = run(capsys, "--json", "validate", junk)
    rec = json.loads(err)
    assert code == 2 and rec["error"] == "BadMagic" and rec["exit"] == 2


def test_store_commands(capsys, tmp_path):
    p = tmp_path / "s.sfs"
    with MallocFile.create(str(p), ATOMS) as st:
        st.root().copy_from(build_atoms(4))
    code, out, _ = run(capsys, "validate", p, "--store")
    assert code == 0 and "store" in out
    code, out, _ = run(capsys, "get", p, "atoms[0].name")
    assert out == '"C"\n'
    out_file = tmp_path / "s.sf"
    assert run(capsys, "convert", p, out_file, "--to", "binary")[0] == 0
    assert out_file.read_bytes() == encode_file(build_atoms(4))


def test_corrupt_store_names_invariant(capsys, tmp_path):
    p = tmp_path / "c.sfs"
    with MallocFile.create(str(p)) as st:
        a = st.alloc(16)
        st.alloc(16)
        st.free(a)
    with open(p, "r+b") as f:
        f.seek(32)
        f.write(struct.pack("<Q", a + 8))
    code, _, err = run(capsys, "--json", "validate", p, "--store")
    rec = json.loads(err)
    assert code == 2 and rec["invariant"] == "free-list"
    code, _, err = run(capsys, "validate", p)
    assert code == 2 and "free-list" in err


def test_usage_errors(capsys, mol):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 3
    with pytest.raises(SystemExit) as exc:
        main(["convert", str(mol), "x", "--to", "yaml"])
    assert exc.value.code == 3
    assert run(capsys, "type", mol.parent / "missing.sf")[0] == 2


def test_console_script(mol):
    r = subprocess.run([sys.executable, "-m", "structfile.cli", "get", str(mol),
                        "molecule_description.molecule_name"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout == '"water"\n'
