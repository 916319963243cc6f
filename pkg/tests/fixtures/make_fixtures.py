"""Regenerate the binary fixtures in this directory.

    python3 tests/fixtures/make_fixtures.py

The golden text dumps are produced from these files by the CLI and were
checked by hand; regenerate them only after re-checking.
"""
from pathlib import Path

import numpy as np

from structfile import encode_value, new_direct, parse_type_text

HERE = Path(__file__).resolve().parent

MOLECULE_HEADER = b"""\
STRUCTURED FILE V0.1 BINARY_BE
#@Date= 18. 3.1998     Time: 15:26
TYPE
struct {
     molecule_description : struct {
             molecule_name: string;
             atom_classes : array of struct {
                              atom_class_id : integer*4;
                              atom_class_number : integer*4;
                              atom_class_name : string;
                                            };
             atoms : array of struct {
                       atom_id   : integer*4;
                       atom_name : string;
                                      };
             bonds : array of struct {
                       bond_from_id : integer*4;
                       bond_to_id   : integer*4;
                       bond_type    : integer*4;
                                     };
                                   };
     timesteps : array of struct {
                   global_obs : real*4[.];
                   coordinates : real*4[3,.];
                   optional velocity    : real*4[3,.];
                   optional potential : struct {
                                          bb : real*4[3,2];
                                          data : real*4[.,.,.];
                                               }
                                 };
       };
DATA
"""

ANY_TEXT = """\
typedef Sample = struct {
    label : string;
    payload : any;
};
struct {
    samples : array of type Sample;
    extra : any;
};
"""


def molecule_type():
    text = MOLECULE_HEADER.split(b"TYPE\n", 1)[1].rsplit(b"DATA\n", 1)[0]
    return parse_type_text(text.decode())


def molecule_value():
    d = new_direct(molecule_type())
    md = d["molecule_description"]
    md["molecule_name"] = "water"
    ac = md["atom_classes"]
    ac.resize(2)
    for i, (num, name) in enumerate([(8, "O"), (1, "H")]):
        ac[i]["atom_class_id"] = i + 1
        ac[i]["atom_class_number"] = num
        ac[i]["atom_class_name"] = name
    atoms = md["atoms"]
    atoms.resize(3)
    for i, name in enumerate(["O1", "H1", "H2"]):
        atoms[i]["atom_id"] = i + 1
        atoms[i]["atom_name"] = name
    bonds = md["bonds"]
    bonds.resize(2)
    for i, (a, b) in enumerate([(1, 2), (1, 3)]):
        bonds[i]["bond_from_id"] = a
        bonds[i]["bond_to_id"] = b
        bonds[i]["bond_type"] = 1
    ts = d["timesteps"]
    ts.resize(2)
    ts[0]["global_obs"] = np.array([0.5, -1.25], dtype=np.float32)
    ts[0]["coordinates"] = np.arange(9, dtype=np.float32).reshape(3, 3)
    ts[1]["global_obs"] = np.array([0.75], dtype=np.float32)
    ts[1]["coordinates"] = np.full((3, 3), 2.5, dtype=np.float32)
    vel = ts[1].set_field_present("velocity")
    vel.assign(np.ones((3, 3), dtype=np.float32))
    pot = ts[1].set_field_present("potential")
    pot["bb"] = np.array([[1, 2], [3, 4], [5, 6]], dtype=np.float32)
    pot["data"] = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
    return d


def any_value():
    d = new_direct(parse_type_text(ANY_TEXT))
    s = d["samples"]
    s.resize(3)
    s[0]["label"] = "int"
    s[0]["payload"].actualize_type("integer*4").assign(42)
    s[1]["label"] = "vector"
    s[1]["payload"].actualize_type("real*8[.]").assign(np.array([1.0, 2.0, 3.0]))
    s[2]["label"] = "nested"
    inner = s[2]["payload"].actualize_type("struct { n : string; v : any; }")
    inner["n"] = "deep"
    inner["v"].actualize_type("union { a : integer*2; b : string; }")
    inner["v"].set_active_field("b").assign("bound twice")
    d["extra"].actualize_type("array[2] of opaque*2")
    d["extra"][0] = b"\x01\x02"
    d["extra"][1] = b"\xff\x00"
    return d


def main():
    (HERE / "molecule.sf").write_bytes(MOLECULE_HEADER + encode_value(molecule_value(), ">"))
    from structfile import encode_file
    (HERE / "any_fields.sf").write_bytes(encode_file(any_value(), "BINARY_LE", ["any-typed fields"]))


if __name__ == "__main__":
    main()
