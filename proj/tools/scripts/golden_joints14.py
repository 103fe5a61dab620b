#!/usr/bin/env python3
# Copyright 2026 The restpose Authors
# SPDX-License-Identifier: Apache-2.0
"""Compute J14 @ rest_vertices from a template archive and write it as JSON.

Reads the named-array archive with its own parser (no restpose code involved).
"""
import json
import struct
import sys

import numpy as np

DTYPES = {"f32": "<f4", "f64": "<f8", "i32": "<i4"}


def read_archive(path):
    raw = open(path, "rb").read()
    assert raw[:8] == b"RPARC\x01\x00\x00", "bad magic"
    (n,) = struct.unpack("<Q", raw[8:16])
    index = json.loads(raw[16:16 + n].decode())
    data = 16 + n
    out = {}
    for a in index["arrays"]:
        buf = raw[data + a["offset"]: data + a["offset"] + a["nbytes"]]
        out[a["name"]] = np.frombuffer(buf, dtype=DTYPES[a["dtype"]]).reshape(a["shape"])
    return index["meta"], out


def main():
    _, arrays = read_archive(sys.argv[1])
    joints = arrays["J14"] @ arrays["rest_vertices"]
    with open(sys.argv[2], "w") as f:
        json.dump([[float(v) for v in row] for row in joints], f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
