"""File formats and the seeded synthetic score generator.

Score table binary format ("DELS"):
    magic  4 bytes  b"DELS"
    u16    format version (currently 1), little-endian
    u32x3  dims (n1, n2, n3), little-endian
    f32    n1*n2*n3 scores, little-endian, row-major (first cycle outermost)

A plain-text CSV alternative (``i1,i2,i3,p`` per line, ``#`` comments) is
accepted for small hand-built tables, selected by the ``.csv`` extension.

Property tables ("DELP") reuse the layout with a length-prefixed UTF-8 name
between the version and the dims, and without the [0, 1] range check.

Fingerprint files are text: a ``#cycle k`` header per cycle, then one
fixed-width '0'/'1' line per block.

Checkpoints are .npz archives with a JSON metadata entry.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import CycleSpec, DesignState, SampleEntry, SampleSet
from .errors import ConfigError, ParseError
from .metrics import PropertyTable
from .reward import ScoreTable

SCORE_MAGIC = b"DELS"
PROP_MAGIC = b"DELP"
FORMAT_VERSION = 1


# score tables -----------------------------------------------------------------


def save_score_table(path, table: ScoreTable) -> None:
    path = Path(path)
    if path.suffix == ".csv":
        with open(path, "w") as f:
            for (i1, i2, i3), v in np.ndenumerate(table.values):
                f.write(f"{i1},{i2},{i3},{float(v)!r}\n")
        return
    with open(path, "wb") as f:
        f.write(SCORE_MAGIC)
        f.write(struct.pack("<H", FORMAT_VERSION))
        f.write(struct.pack("<III", *table.dims))
        f.write(np.ascontiguousarray(table.values, dtype="<f4").tobytes())


def load_score_table(path) -> ScoreTable:
    path = Path(path)
    if path.suffix == ".csv":
        return _load_score_csv(path)
    raw = path.read_bytes()
    if raw[:4] != SCORE_MAGIC:
        raise ParseError(f"bad magic {raw[:4]!r}, expected {SCORE_MAGIC!r}", offset=0)
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format version {version}", offset=4)
    dims = struct.unpack_from("<III", raw, 6)
    header = 18
    expected = header + 4 * dims[0] * dims[1] * dims[2]
    if len(raw) != expected:
        raise ParseError(
            f"payload length {len(raw) - header} bytes does not match dims {dims}",
            offset=header,
        )
    values = np.frombuffer(raw, dtype="<f4", offset=header).reshape(dims).astype(np.float64)
    bad = np.nonzero((values < 0.0) | (values > 1.0) | ~np.isfinite(values))
    if len(bad[0]):
        flat = int(np.ravel_multi_index(tuple(b[0] for b in bad), dims))
        raise ParseError(
            f"score out of [0, 1] at flat index {flat}", offset=header + 4 * flat
        )
    return ScoreTable(values)


def _load_score_csv(path) -> ScoreTable:
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ParseError(f"expected 'i1,i2,i3,p', got {line!r}", offset=lineno)
            try:
                i1, i2, i3 = int(parts[0]), int(parts[1]), int(parts[2])
                p = float(parts[3])
            except ValueError as e:
                raise ParseError(str(e), offset=lineno)
            rows.append((i1, i2, i3, p))
    if not rows:
        raise ParseError("empty score CSV")
    dims = tuple(max(r[i] for r in rows) + 1 for i in range(3))
    values = np.full(dims, np.nan)
    for i1, i2, i3, p in rows:
        values[i1, i2, i3] = p
    if np.isnan(values).any():
        raise ParseError(f"CSV does not cover the full {dims} grid")
    if values.min() < 0.0 or values.max() > 1.0:
        flat = int(np.argmax((values < 0.0) | (values > 1.0)))
        raise ParseError(f"score out of [0, 1] at flat index {flat}")
    return ScoreTable(values)


# property tables ----------------------------------------------------------------


def save_property_table(path, prop: PropertyTable) -> None:
    name = prop.name.encode("utf-8")
    with open(path, "wb") as f:
        f.write(PROP_MAGIC)
        f.write(struct.pack("<H", FORMAT_VERSION))
        f.write(struct.pack("<H", len(name)))
        f.write(name)
        f.write(struct.pack("<III", *prop.values.shape))
        f.write(np.ascontiguousarray(prop.values, dtype="<f4").tobytes())


def load_property_table(path) -> PropertyTable:
    raw = Path(path).read_bytes()
    if raw[:4] != PROP_MAGIC:
        raise ParseError(f"bad magic {raw[:4]!r}, expected {PROP_MAGIC!r}", offset=0)
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format version {version}", offset=4)
    (name_len,) = struct.unpack_from("<H", raw, 6)
    name = raw[8 : 8 + name_len].decode("utf-8")
    off = 8 + name_len
    dims = struct.unpack_from("<III", raw, off)
    off += 12
    expected = off + 4 * dims[0] * dims[1] * dims[2]
    if len(raw) != expected:
        raise ParseError(f"payload does not match dims {dims}", offset=off)
    values = np.frombuffer(raw, dtype="<f4", offset=off).reshape(dims).astype(np.float64)
    return PropertyTable(name, values)


# fingerprints --------------------------------------------------------------------


def save_fingerprints(path, fps) -> None:
    with open(path, "w") as f:
        for c, mat in enumerate(fps):
            f.write(f"#cycle {c}\n")
            for row in np.asarray(mat, dtype=int):
                f.write("".join(str(int(v)) for v in row) + "\n")


def load_fingerprints(path) -> list[np.ndarray]:
    cycles: list[list[list[int]]] = []
    width = None
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#cycle"):
                cycles.append([])
                continue
            if not cycles:
                raise ParseError("fingerprint data before any '#cycle' header", offset=lineno)
            if set(line) - {"0", "1"}:
                raise ParseError(f"fingerprint line is not 0/1: {line!r}", offset=lineno)
            if width is None:
                width = len(line)
            elif len(line) != width:
                raise ParseError(
                    f"fingerprint width {len(line)} != expected {width}", offset=lineno
                )
            cycles[-1].append([int(ch) for ch in line])
    if not cycles or any(not c for c in cycles):
        raise ParseError("fingerprint file must contain at least one block per cycle")
    return [np.array(c, dtype=np.uint8) for c in cycles]


# sample sets -----------------------------------------------------------------------


def save_sample_set(path, samples: SampleSet, spec: CycleSpec, beta: float) -> None:
    doc = {
        "cycle_sizes": list(spec.cycle_sizes),
        "beta": beta,
        "entries": [
            {
                "bits": "".join(str(b) for b in e.state.bits),
                "log_reward": e.log_reward,
                "mean_score": e.mean_score,
            }
            for e in samples.entries
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_sample_set(path) -> tuple[SampleSet, CycleSpec, float]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid sample-set JSON: {e}")
    spec = CycleSpec(doc["cycle_sizes"])
    entries = []
    for rec in doc["entries"]:
        bits = rec["bits"]
        if len(bits) != spec.total_bits:
            raise ParseError(f"entry has {len(bits)} bits, expected {spec.total_bits}")
        entries.append(
            SampleEntry(
                DesignState(int(ch) for ch in bits),
                float(rec["log_reward"]),
                float(rec["mean_score"]),
            )
        )
    return SampleSet(entries), spec, float(doc["beta"])


# checkpoints ------------------------------------------------------------------------


def save_checkpoint(path, arrays: dict, meta: dict) -> None:
    meta = dict(meta, format_version=FORMAT_VERSION)
    np.savez(path, __meta__=json.dumps(meta), **arrays)


def load_checkpoint(path) -> tuple[dict, dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    if meta.get("format_version") != FORMAT_VERSION:
        raise ParseError(f"unsupported checkpoint version {meta.get('format_version')}")
    return arrays, meta


# key-value config files ----------------------------------------------------------------


def parse_config_file(path) -> dict[str, str]:
    """Flat ``section.key = value`` pairs; '#' starts a comment."""
    out = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected 'key = value', got {line!r}", offset=lineno)
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


# synthetic scores -------------------------------------------------------------------------

ADDITIVE = "additive"
ADDITIVE_PAIRWISE = "additive+pairwise"


def synth_scores(spec: CycleSpec, seed: int, structure: str = ADDITIVE) -> ScoreTable:
    """Seeded logistic score tensor with per-block (and optional pairwise) effects."""
    if spec.n_cycles != 3:
        raise ConfigError("synthetic score tables require a 3-cycle spec")
    if structure not in (ADDITIVE, ADDITIVE_PAIRWISE):
        raise ConfigError(f"unknown structure {structure!r}")
    rng = np.random.default_rng(seed)
    n1, n2, n3 = spec.cycle_sizes
    a = rng.standard_normal(n1)
    b = rng.standard_normal(n2)
    c = rng.standard_normal(n3)
    logit = a[:, None, None] + b[None, :, None] + c[None, None, :]
    if structure == ADDITIVE_PAIRWISE:
        scale = 0.5
        logit = (
            logit
            + scale * rng.standard_normal((n1, n2))[:, :, None]
            + scale * rng.standard_normal((n1, n3))[:, None, :]
            + scale * rng.standard_normal((n2, n3))[None, :, :]
        )
    return ScoreTable(1.0 / (1.0 + np.exp(-logit)))
