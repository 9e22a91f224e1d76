"""Binary checkpoint of per-path ensemble records.

Layout (all little-endian; see ``docs/checkpoint.md``)::

    header:
        magic        8 bytes  b"GFKCKPT\\0"
        version      uint32   (currently 1)
        seed         uint64   master seed, masked to 64 bits
        fingerprint  32 bytes sha256 of the run definition
        n_horizons   uint32
        n_props      uint32
        horizons     float64[n_horizons]
        names        n_props x (uint16 length, utf-8 bytes)
    records, one per path, written chunk by chunk:
        chunk        uint32
        path         uint64
        aborted      uint8
        hits         uint64
        log_w        float64[n_horizons]
        props        float64[n_props, n_horizons]

A chunk counts as complete only when all its paths are present, so a file
cut short by an interrupted run is still usable.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from .exceptions import ConfigError

MAGIC = b"GFKCKPT\0"
VERSION = 1
_MASK64 = (1 << 64) - 1


def run_fingerprint(spec, trial, params, lambda_T) -> bytes:
    trial_desc = None
    if trial is not None:
        trial_desc = {
            "type": type(trial).__name__,
            "parameters": {k: repr(v) for k, v in sorted(trial.parameters().items())},
            "extra": repr(
                [getattr(trial, name, None) for name in ("terms", "symmetrize", "symmetrize_electrons",
                                                          "symmetrize_nuclei", "blocks", "n_max")]
            ),
        }
    desc = {
        "spec": repr(spec),
        "trial": trial_desc,
        "walk": repr({k: v for k, v in vars(params).items()}),
        "lambda_T": repr(float(lambda_T)),
    }
    return hashlib.sha256(json.dumps(desc, sort_keys=True).encode()).digest()


def _record_dtype(n_horizons, n_props):
    return np.dtype(
        [
            ("chunk", "<u4"),
            ("path", "<u8"),
            ("aborted", "u1"),
            ("hits", "<u8"),
            ("log_w", "<f8", (n_horizons,)),
            ("props", "<f8", (n_props, n_horizons)),
        ]
    )


class Checkpoint:
    def __init__(self, path, fh, names, horizons, chunk_sizes, done):
        self.path = path
        self._fh = fh
        self.names = tuple(names)
        self.horizons = np.asarray(horizons)
        self._chunk_sizes = chunk_sizes
        self._done = done
        self.dtype = _record_dtype(len(horizons), len(names))

    @classmethod
    def open(cls, path, spec, trial, params, lambda_T):
        from .walk import PROPERTY_NAMES, _chunks

        names = PROPERTY_NAMES
        horizons = np.asarray(params.horizons, dtype="<f8")
        fp = run_fingerprint(spec, trial, params, lambda_T)
        chunk_sizes = {k: len(c) for k, c in enumerate(_chunks(params))}
        done = {}
        if os.path.exists(path) and os.path.getsize(path) > 0:
            header, records = read_checkpoint(path)
            if header["fingerprint"] != fp or header["seed"] != (params.seed & _MASK64):
                raise ConfigError(f"checkpoint {path} belongs to a different run", key="checkpoint")
            done = _complete_chunks(records, chunk_sizes, names)
            # rewrite header plus complete chunks only, dropping any torn tail
            fh = open(path, "wb")
            _write_header(fh, params.seed, fp, horizons, names)
            for k in sorted(done):
                fh.write(_records_bytes(k, done[k], names, len(horizons)))
            fh.flush()
        else:
            fh = open(path, "wb")
            _write_header(fh, params.seed, fp, horizons, names)
            fh.flush()
        return cls(path, fh, names, horizons, chunk_sizes, done)

    def completed_chunks(self):
        return dict(self._done)

    def append(self, chunk, result):
        self._fh.write(_records_bytes(chunk, result, self.names, len(self.horizons)))
        self._fh.flush()
        self._done[chunk] = result

    def close(self):
        self._fh.close()


def _write_header(fh, seed, fp, horizons, names):
    fh.write(MAGIC)
    fh.write(struct.pack("<IQ", VERSION, seed & _MASK64))
    fh.write(fp)
    fh.write(struct.pack("<II", len(horizons), len(names)))
    fh.write(np.asarray(horizons, dtype="<f8").tobytes())
    for name in names:
        raw = name.encode()
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)


def _records_bytes(chunk, result, names, n_horizons):
    B = len(result["paths"])
    rec = np.zeros(B, dtype=_record_dtype(n_horizons, len(names)))
    rec["chunk"] = chunk
    rec["path"] = result["paths"]
    rec["aborted"] = result["aborted"]
    rec["hits"] = result["hits"]
    rec["log_w"] = result["log_w"]
    rec["props"] = np.stack([result["props"][name] for name in names], axis=1)
    return rec.tobytes()


def read_checkpoint(path):
    """Parse a checkpoint file into ``(header, records)``; trailing partial records are ignored."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ConfigError(f"{path} is not a checkpoint file", key="checkpoint")
    off = 8
    version, seed = struct.unpack_from("<IQ", data, off)
    off += 12
    if version != VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}", key="checkpoint")
    fp = data[off : off + 32]
    off += 32
    n_h, n_p = struct.unpack_from("<II", data, off)
    off += 8
    horizons = np.frombuffer(data, dtype="<f8", count=n_h, offset=off)
    off += 8 * n_h
    names = []
    for _ in range(n_p):
        (length,) = struct.unpack_from("<H", data, off)
        off += 2
        names.append(data[off : off + length].decode())
        off += length
    dtype = _record_dtype(n_h, n_p)
    count = (len(data) - off) // dtype.itemsize
    records = np.frombuffer(data, dtype=dtype, count=count, offset=off)
    header = {"version": version, "seed": seed, "fingerprint": fp, "horizons": horizons, "names": names}
    return header, records


def _complete_chunks(records, chunk_sizes, names):
    done = {}
    for k, size in chunk_sizes.items():
        rec = records[records["chunk"] == k]
        if len(rec) != size:
            continue
        rec = rec[np.argsort(rec["path"], kind="stable")]
        done[k] = {
            "paths": rec["path"].astype(np.int64),
            "log_w": np.array(rec["log_w"]),
            "props": {name: np.array(rec["props"][:, i, :]) for i, name in enumerate(names)},
            "hits": rec["hits"].astype(np.int64),
            "aborted": rec["aborted"].astype(bool),
        }
    return done
