"""Dataset loading, preprocessing, and manifests.

Two on-disk formats are supported: PGM images (P2 ASCII and P5 binary,
maxval up to 65535) and a raw tensor format for float64 signals:

    magic "CAOLTNSR" | u32 version = 1 | u32 geometry tag (1 line, 2 grid)
    | dims as u64 (N, or H then W) | row-major float64 payload

All integers and floats are little-endian except PGM's 16-bit samples,
which are big-endian per that format's convention.  A DatasetManifest
records entry checksums and the preprocessing applied, so a run can name
exactly what it trained on.
"""

import hashlib
import json
import os
import struct
import tempfile
import warnings

import numpy as np

from .errors import (
    BadMagic,
    ChecksumMismatch,
    DimensionMismatch,
    DimensionOverflow,
    EmptyDataset,
    MalformedHeader,
    PatchTooLarge,
    TruncatedData,
    UnknownStep,
)
from .signals import Grid, Line, Signal

__all__ = [
    "load_pgm",
    "write_pgm",
    "load_raw_tensor",
    "write_raw_tensor",
    "load_signal",
    "preprocess",
    "parse_steps",
    "patchify",
    "ManifestEntry",
    "DatasetManifest",
    "atomic_write_bytes",
]

_MAGIC = b"CAOLTNSR"
_VERSION = 1
_TAG_LINE, _TAG_GRID = 1, 2
_MAX_ELEMENTS = 1 << 40  # refuse headers declaring more than 8 TiB of data


def atomic_write_bytes(path, data):
    """Write bytes via a temp file + rename so readers never see partials."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-caol-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- PGM ---------------------------------------------------------------------

def _pgm_header(data):
    """Magic, width, height, maxval, and the payload start offset.

    Header tokens are whitespace-separated; '#' comments run to end of line.
    """
    tokens = []
    i, n = 0, len(data)
    while len(tokens) < 4:
        while i < n and (data[i : i + 1].isspace() or data[i : i + 1] == b"#"):
            if data[i : i + 1] == b"#":
                nl = data.find(b"\n", i)
                i = n if nl < 0 else nl + 1
            else:
                i += 1
        if i >= n:
            raise MalformedHeader("PGM header ended early")
        j = i
        while j < n and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
            j += 1
        tokens.append(data[i:j])
        i = j
    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise MalformedHeader(f"not a PGM file (magic {magic!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise MalformedHeader(f"non-numeric PGM dimensions {tokens[1:]}") from None
    if w < 1 or h < 1:
        raise MalformedHeader(f"bad PGM dimensions {w}x{h}")
    if not 1 <= maxval <= 65535:
        raise MalformedHeader(f"PGM maxval {maxval} outside [1, 65535]")
    if magic == b"P5":
        if i >= n or not data[i : i + 1].isspace():
            raise MalformedHeader("P5 maxval must be followed by one whitespace byte")
        i += 1
    return magic, w, h, maxval, i


def load_pgm(path):
    """Decode a PGM image into a Grid signal with values in [0, maxval]."""
    with open(path, "rb") as f:
        data = f.read()
    magic, w, h, maxval, start = _pgm_header(data)
    count = w * h
    if magic == b"P5":
        dtype = np.dtype(">u2" if maxval > 255 else "u1")
        need = count * dtype.itemsize
        payload = data[start:]
        if len(payload) < need:
            raise TruncatedData(
                f"P5 payload holds {len(payload)} bytes, header needs {need}"
            )
        if len(payload) > need:
            raise MalformedHeader(f"{len(payload) - need} trailing bytes after P5 payload")
        values = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    else:
        fields = data[start:].split()
        if len(fields) < count:
            raise TruncatedData(
                f"P2 payload holds {len(fields)} samples, header needs {count}"
            )
        if len(fields) > count:
            raise MalformedHeader(f"{len(fields) - count} extra P2 samples")
        try:
            values = np.array([int(t) for t in fields], dtype=np.float64)
        except ValueError:
            raise MalformedHeader("non-numeric P2 sample") from None
    if values.min() < 0 or values.max() > maxval:
        raise MalformedHeader(
            f"sample range [{values.min():g}, {values.max():g}] exceeds maxval {maxval}"
        )
    return Signal.grid(values.reshape(h, w))


def write_pgm(path, x, maxval=255, ascii_format=False):
    """Encode a Grid signal with integer values in [0, maxval] as PGM."""
    if not isinstance(x.geometry, Grid):
        raise DimensionMismatch("PGM output needs a Grid signal")
    if not 1 <= maxval <= 65535:
        raise ValueError(f"maxval {maxval} outside [1, 65535]")
    img = x.as_grid()
    rounded = np.rint(img)
    if np.max(np.abs(img - rounded)) > 1e-9:
        raise ValueError("PGM samples must be integral; quantize first")
    if rounded.min() < 0 or rounded.max() > maxval:
        raise ValueError(
            f"sample range [{rounded.min():g}, {rounded.max():g}] "
            f"outside [0, {maxval}]"
        )
    h, w = img.shape
    if ascii_format:
        body = "\n".join(
            " ".join(str(int(v)) for v in row) for row in rounded
        )
        data = f"P2\n{w} {h}\n{maxval}\n{body}\n".encode("ascii")
    else:
        dtype = np.dtype(">u2" if maxval > 255 else "u1")
        data = f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + rounded.astype(
            dtype
        ).tobytes()
    atomic_write_bytes(path, data)


# --- raw tensor --------------------------------------------------------------

def write_raw_tensor(path, x):
    """Serialize a Signal in the raw tensor format (see module docstring)."""
    if isinstance(x.geometry, Line):
        header = struct.pack("<II", _VERSION, _TAG_LINE) + struct.pack(
            "<Q", x.geometry.n
        )
    else:
        header = struct.pack("<II", _VERSION, _TAG_GRID) + struct.pack(
            "<QQ", x.geometry.h, x.geometry.w
        )
    atomic_write_bytes(path, _MAGIC + header + x.values.astype("<f8").tobytes())


def load_raw_tensor(path):
    """Decode a raw tensor file back into a Signal."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != _MAGIC:
        raise BadMagic(f"expected magic {_MAGIC!r}, found {data[:8]!r}")
    if len(data) < 16:
        raise TruncatedData("header ends before version and geometry tag")
    version, tag = struct.unpack_from("<II", data, 8)
    if version != _VERSION:
        raise MalformedHeader(f"unsupported format version {version}")
    if tag == _TAG_LINE:
        ndims = 1
    elif tag == _TAG_GRID:
        ndims = 2
    else:
        raise MalformedHeader(f"unknown geometry tag {tag}")
    if len(data) < 16 + 8 * ndims:
        raise TruncatedData("header ends inside the dimension fields")
    dims = struct.unpack_from("<" + "Q" * ndims, data, 16)
    count = 1
    for d in dims:  # exact Python ints; u64 products can overflow fixed width
        count *= d
    if any(d == 0 for d in dims) or count > _MAX_ELEMENTS:
        raise DimensionOverflow(f"declared dimensions {dims} are invalid")
    start = 16 + 8 * ndims
    need = 8 * count
    payload = data[start:]
    if len(payload) < need:
        raise TruncatedData(
            f"payload holds {len(payload)} bytes, header declares {need}"
        )
    if len(payload) > need:
        raise MalformedHeader(f"{len(payload) - need} trailing bytes after payload")
    values = np.frombuffer(payload, dtype="<f8")
    if ndims == 1:
        return Signal.line(values)
    return Signal.grid(values.reshape(dims))


def load_signal(path):
    """Load either supported format, sniffing the magic bytes."""
    with open(path, "rb") as f:
        head = f.read(8)
    if head == _MAGIC:
        return load_raw_tensor(path)
    if head[:2] in (b"P2", b"P5"):
        return load_pgm(path)
    raise BadMagic(f"unrecognized file magic {head!r}")


# --- preprocessing -----------------------------------------------------------

def parse_steps(steps):
    """Canonicalize step specs into (name, param) pairs.

    Accepts 'mean_subtract', 'standardize', 'highpass:<radius>', and the
    tuple form ('highpass', radius).
    """
    parsed = []
    for step in steps:
        if isinstance(step, (tuple, list)):
            if len(step) != 2 or step[0] != "highpass":
                raise UnknownStep(f"unrecognized step {step!r}")
            name, param = step
        elif isinstance(step, str) and step.startswith("highpass"):
            name, _, param = step.partition(":")
            if not param:
                raise UnknownStep("highpass needs a radius, e.g. 'highpass:2'")
        elif step in ("mean_subtract", "standardize"):
            parsed.append((step, None))
            continue
        else:
            raise UnknownStep(f"unrecognized step {step!r}")
        try:
            radius = int(param)
        except (TypeError, ValueError):
            raise UnknownStep(f"highpass radius {param!r} is not an integer") from None
        if radius < 1:
            raise UnknownStep(f"highpass radius must be >= 1, got {radius}")
        parsed.append(("highpass", radius))
    return parsed


def step_names(steps):
    """Canonical string form of parsed or raw steps, for manifests."""
    return [
        name if param is None else f"{name}:{param}"
        for name, param in parse_steps(steps)
    ]


def _cyclic_box_mean(x, radius):
    """Per-element mean over the cyclic box window of the given radius."""
    if isinstance(x.geometry, Line):
        values = x.values
        acc = np.zeros_like(values)
        for s in range(-radius, radius + 1):
            acc += np.roll(values, s)
        return acc / (2 * radius + 1)
    img = x.as_grid()
    acc = np.zeros_like(img)
    for s in range(-radius, radius + 1):
        acc += np.roll(img, s, axis=0)
    out = np.zeros_like(img)
    for s in range(-radius, radius + 1):
        out += np.roll(acc, s, axis=1)
    return (out / (2 * radius + 1) ** 2).ravel()


def preprocess(x, steps):
    """Apply preprocessing steps in order, preserving geometry.

    mean_subtract centers the values; standardize additionally scales to
    unit sample standard deviation (a constant signal is left unchanged,
    with a warning); highpass subtracts the cyclic local mean over the
    given radius.
    """
    values = x.values.copy()
    for name, param in parse_steps(steps):
        if name == "mean_subtract":
            values -= values.mean()
        elif name == "standardize":
            values -= values.mean()
            std = values.std(ddof=1) if values.size > 1 else 0.0
            if std == 0.0:
                warnings.warn("standardize: constant input left unscaled")
            else:
                values /= std
        else:
            values -= _cyclic_box_mean(Signal(values, x.geometry), param)
    return Signal(values, x.geometry)


def patchify(x, patch_h, patch_w, stride=None):
    """Cut a Grid signal into patch_h x patch_w patches, row-major.

    stride defaults to the patch size (disjoint tiling); partial patches at
    the borders are discarded.
    """
    if not isinstance(x.geometry, Grid):
        raise DimensionMismatch("patchify needs a Grid signal")
    if stride is None:
        stride = patch_h
    if patch_h < 1 or patch_w < 1 or stride < 1:
        raise ValueError("patch dimensions and stride must be >= 1")
    img = x.as_grid()
    h, w = img.shape
    if patch_h > h or patch_w > w:
        raise PatchTooLarge(f"{patch_h}x{patch_w} patches from a {h}x{w} image")
    out = []
    for top in range(0, h - patch_h + 1, stride):
        for left in range(0, w - patch_w + 1, stride):
            out.append(Signal.grid(img[top : top + patch_h, left : left + patch_w]))
    return out


# --- manifests ---------------------------------------------------------------

def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ManifestEntry:
    """One dataset file: relative path, format, geometry, checksum."""

    def __init__(self, path, fmt, geometry, sha256):
        self.path = path
        self.fmt = fmt
        self.geometry = tuple(int(d) for d in geometry)
        self.sha256 = sha256

    def to_dict(self):
        return {
            "path": self.path,
            "format": self.fmt,
            "geometry": list(self.geometry),
            "sha256": self.sha256,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["path"], d["format"], d["geometry"], d["sha256"])
        except KeyError as exc:
            raise MalformedHeader(f"manifest entry missing field {exc}") from None


class DatasetManifest:
    """Checksummed list of dataset files plus the preprocessing to apply."""

    def __init__(self, entries, preprocessing=(), note=""):
        entries = list(entries)
        if not entries:
            raise EmptyDataset("a manifest needs at least one entry")
        self.entries = entries
        self.preprocessing = step_names(preprocessing)
        self.note = note

    @classmethod
    def from_files(cls, paths, base_dir, preprocessing=(), note=""):
        """Build a manifest for files under base_dir (paths relative)."""
        entries = []
        for rel in paths:
            full = os.path.join(base_dir, rel)
            x = load_signal(full)
            if isinstance(x.geometry, Line):
                fmt, geometry = "tensor", (x.geometry.n,)
            else:
                with open(full, "rb") as f:
                    fmt = "tensor" if f.read(8) == _MAGIC else "pgm"
                geometry = (x.geometry.h, x.geometry.w)
            entries.append(ManifestEntry(rel, fmt, geometry, _sha256(full)))
        return cls(entries, preprocessing, note)

    def to_dict(self):
        return {
            "format_version": 1,
            "entries": [e.to_dict() for e in self.entries],
            "preprocessing": list(self.preprocessing),
            "note": self.note,
        }

    def save(self, path):
        atomic_write_bytes(
            path, (json.dumps(self.to_dict(), indent=2) + "\n").encode("utf-8")
        )

    @classmethod
    def load(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as f:
                doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise MalformedHeader(f"manifest is not valid JSON: {exc}") from None
        if not isinstance(doc, dict) or "entries" not in doc:
            raise MalformedHeader("manifest lacks an 'entries' list")
        return cls(
            [ManifestEntry.from_dict(d) for d in doc["entries"]],
            doc.get("preprocessing", ()),
            doc.get("note", ""),
        )

    def load_signals(self, base_dir, verify=True):
        """Load, checksum-verify, and preprocess every entry, in order."""
        out = []
        for entry in self.entries:
            full = os.path.join(base_dir, entry.path)
            if verify:
                actual = _sha256(full)
                if actual != entry.sha256:
                    raise ChecksumMismatch(
                        f"{entry.path}: sha256 {actual[:12]}... does not match "
                        f"manifest {entry.sha256[:12]}..."
                    )
            x = load_signal(full)
            if tuple(entry.geometry) != (
                (x.geometry.n,)
                if isinstance(x.geometry, Line)
                else (x.geometry.h, x.geometry.w)
            ):
                raise MalformedHeader(
                    f"{entry.path}: geometry {entry.geometry} does not match file"
                )
            out.append(preprocess(x, self.preprocessing))
        return out
