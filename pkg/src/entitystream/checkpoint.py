"""Named-tensor archive.

Layout: one line of compact JSON (the manifest) terminated by ``\\n``, then the
raw little-endian float32 buffers back to back.  Each manifest tensor entry
records ``name``, ``shape``, ``offset`` and ``nbytes``; offsets count from the
first byte after the newline.
"""

import json

import numpy as np

from .errors import FormatError

FORMAT = "entitystream-checkpoint"
VERSION = 1


def write_archive(path, tensors, manifest=None):
    manifest = dict(manifest or {})
    entries, offset = [], 0
    buffers = []
    for name, array in tensors.items():
        buf = np.ascontiguousarray(array, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(np.shape(array)), "offset": offset, "nbytes": len(buf)})
        buffers.append(buf)
        offset += len(buf)
    manifest.update(format=FORMAT, version=VERSION, tensors=entries)
    header = json.dumps(manifest, separators=(",", ":"), sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(header + b"\n")
        for buf in buffers:
            f.write(buf)


def read_archive(path):
    """Returns (manifest dict, {name: float32 array})."""
    with open(path, "rb") as f:
        blob = f.read()
    end = blob.find(b"\n")
    if end < 0:
        raise FormatError(f"{path}: no manifest line", offset=0)
    try:
        manifest = json.loads(blob[:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: manifest is not valid JSON ({exc})", offset=0) from None
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise FormatError(f"{path}: not a version-{VERSION} {FORMAT} file", offset=0)
    body = memoryview(blob)[end + 1:]
    tensors = {}
    for entry in manifest["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        shape = tuple(entry["shape"])
        if start + nbytes > len(body) or nbytes != 4 * int(np.prod(shape, dtype=np.int64)):
            raise FormatError(f"{path}: tensor {entry['name']!r} runs past the end of the file",
                              offset=end + 1 + start)
        tensors[entry["name"]] = np.frombuffer(body[start:start + nbytes], dtype="<f4").reshape(shape).copy()
    return manifest, tensors
