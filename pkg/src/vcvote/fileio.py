"""Readers and writers for the interchange formats shared with the feature
exporter.

Formats:
  .vcf   dense feature tensor: fixed little-endian header followed by a raw
         float32 payload (row-major, H4 x W4 x D)
  .vca   part annotations: line-oriented text, one record per line
  .vcm   trained model bundle: sectioned binary container with per-section
         CRC32 checksums
  manifest  tab-separated text listing (feature file, annotation file,
         image metadata, object class) per dataset entry

Readers never crash on corrupt input; they raise structured FormatError
subclasses instead.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .concepts import ConceptDictionary
from .lattice import LatticeSpec
from .likelihood import CueModel, ModelBundle, PartModel
from .spatial import OffsetMap


class FormatError(Exception):
    """Base class for all parse/serialization failures."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class DimMismatchError(FormatError):
    pass


class NonFiniteError(FormatError):
    pass


class IntegrityError(FormatError):
    pass


class AnnotationError(FormatError):
    pass


# ---------------------------------------------------------------------------
# .vcf feature tensors

_VCF_MAGIC = b"VCF1"
_VCF_VERSION = 1
# magic, version, H4, W4, D, stride, receptive_offset, image_h, image_w, payload_bytes
_VCF_HEADER = struct.Struct("<4sIIIIIIIIQ")


@dataclass(frozen=True)
class FeatureMap:
    """Dense grid of D-dimensional feature vectors on the stride-16 lattice."""

    spec: LatticeSpec
    data: np.ndarray   # (H4, W4, D) float32

    @property
    def depth(self) -> int:
        return self.data.shape[2]

    def __post_init__(self):
        gh, gw = self.spec.grid_size
        if self.data.ndim != 3 or self.data.shape[:2] != (gh, gw):
            raise DimMismatchError(
                f"feature data shape {self.data.shape} does not match grid {self.spec.grid_size}"
            )


def write_feature_map(fm: FeatureMap, path) -> None:
    data = np.ascontiguousarray(fm.data, dtype=np.float32)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("feature map contains non-finite values")
    gh, gw = fm.spec.grid_size
    h, w = fm.spec.image_size
    payload = data.tobytes()
    header = _VCF_HEADER.pack(_VCF_MAGIC, _VCF_VERSION, gh, gw, data.shape[2],
                              fm.spec.stride, fm.spec.receptive_offset, h, w,
                              len(payload))
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def read_feature_map(path) -> FeatureMap:
    with open(path, "rb") as f:
        raw = f.read(_VCF_HEADER.size)
        if len(raw) < _VCF_HEADER.size:
            raise TruncatedError(f"unexpected end of stream in {path}")
        magic, version, gh, gw, d, stride, offset, h, w, payload_bytes = \
            _VCF_HEADER.unpack(raw)
        if magic != _VCF_MAGIC:
            raise BadMagicError(f"bad magic {magic!r} in {path}")
        if version != _VCF_VERSION:
            raise VersionError(f"unsupported feature-file version {version}")
        expected = gh * gw * d * 4
        if payload_bytes != expected:
            raise DimMismatchError(
                f"header declares {gh}x{gw}x{d} ({expected} bytes) but payload "
                f"field says {payload_bytes} bytes"
            )
        payload = f.read(payload_bytes)
        if len(payload) < payload_bytes:
            raise TruncatedError(f"unexpected end of stream in {path}")
    data = np.frombuffer(payload, dtype="<f4").reshape(gh, gw, d).copy()
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values in {path}")
    spec = LatticeSpec(stride=stride, receptive_offset=offset,
                       image_size=(h, w), grid_size=(gh, gw))
    return FeatureMap(spec=spec, data=data)


# ---------------------------------------------------------------------------
# .vca part annotations

_VCA_HEADER = "#vca 1"
_VCA_COLUMNS = "# part_id object_id center_y center_x x1 y1 x2 y2 occluded_fraction"


@dataclass(frozen=True)
class PartAnnotation:
    """Ground-truth instance of a semantic part."""

    part_id: int
    object_id: int
    center: tuple[float, float]           # (row, col) px
    box: tuple[float, float, float, float]  # (x1, y1, x2, y2) px
    occluded_fraction: float = 0.0

    def __post_init__(self):
        x1, y1, x2, y2 = self.box
        cy, cx = self.center
        if not (x2 > x1 and y2 > y1):
            raise AnnotationError(f"degenerate box {self.box}")
        if not (x1 <= cx <= x2 and y1 <= cy <= y2):
            raise AnnotationError(f"center {self.center} outside box {self.box}")
        if not (0.0 <= self.occluded_fraction <= 1.0):
            raise AnnotationError(
                f"occluded_fraction {self.occluded_fraction} outside [0, 1]"
            )


def write_annotations(annotations, path) -> None:
    lines = [_VCA_HEADER, _VCA_COLUMNS]
    for a in annotations:
        cy, cx = a.center
        x1, y1, x2, y2 = a.box
        lines.append(f"{a.part_id} {a.object_id} {cy!r} {cx!r} "
                     f"{x1!r} {y1!r} {x2!r} {y2!r} {a.occluded_fraction!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except UnicodeDecodeError as e:
        raise FormatError(f"{path} is not a text file: {e}") from None


def read_annotations(path) -> list[PartAnnotation]:
    out = []
    for lineno, line in enumerate(_read_text(path).splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 9:
            raise AnnotationError(f"{path}:{lineno}: expected 9 fields, got {len(fields)}")
        try:
            part_id, object_id = int(fields[0]), int(fields[1])
            cy, cx, x1, y1, x2, y2, occ = (float(v) for v in fields[2:])
        except ValueError as e:
            raise AnnotationError(f"{path}:{lineno}: {e}") from None
        try:
            out.append(PartAnnotation(part_id=part_id, object_id=object_id,
                                      center=(cy, cx), box=(x1, y1, x2, y2),
                                      occluded_fraction=occ))
        except AnnotationError as e:
            raise AnnotationError(f"{path}:{lineno}: {e}") from None
    return out


# ---------------------------------------------------------------------------
# dataset manifests

_MANIFEST_HEADER = "#vcmanifest 1"


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    feature_path: str      # relative to the manifest directory
    annotation_path: str
    object_class: str
    image_size: tuple[int, int]   # (height, width) px of this rendering
    scale: int                    # short-edge length of this rendering
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Manifest:
    root: Path
    entries: tuple[ManifestEntry, ...]

    def feature_file(self, entry: ManifestEntry) -> Path:
        return self.root / entry.feature_path

    def annotation_file(self, entry: ManifestEntry) -> Path:
        return self.root / entry.annotation_path


def write_manifest(manifest: Manifest, path) -> None:
    lines = [_MANIFEST_HEADER]
    for e in manifest.entries:
        h, w = e.image_size
        cols = [e.image_id, e.feature_path, e.annotation_path, e.object_class,
                str(h), str(w), str(e.scale)]
        cols += [f"{k}={v}" for k, v in sorted(e.extras.items())]
        lines.append("\t".join(cols))
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> Manifest:
    path = Path(path)
    entries = []
    for lineno, line in enumerate(_read_text(path).splitlines(), start=1):
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) < 7:
            raise FormatError(f"{path}:{lineno}: expected at least 7 columns")
        extras = {}
        for tok in cols[7:]:
            if "=" not in tok:
                raise FormatError(f"{path}:{lineno}: malformed extra {tok!r}")
            k, v = tok.split("=", 1)
            extras[k] = v
        try:
            size = (int(cols[4]), int(cols[5]))
            scale = int(cols[6])
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: {e}") from None
        entries.append(ManifestEntry(image_id=cols[0], feature_path=cols[1],
                                     annotation_path=cols[2], object_class=cols[3],
                                     image_size=size, scale=scale, extras=extras))
    return Manifest(root=path.parent, entries=tuple(entries))


def validate_manifest(manifest: Manifest, deep: bool = False) -> None:
    """Check every referenced file exists; with deep=True also parse them."""
    for e in manifest.entries:
        for p in (manifest.feature_file(e), manifest.annotation_file(e)):
            if not p.exists():
                raise IntegrityError(f"manifest references missing file {p}")
        if deep:
            read_feature_map(manifest.feature_file(e))
            read_annotations(manifest.annotation_file(e))


@dataclass(frozen=True)
class DatasetImage:
    """One manifest entry loaded into memory."""

    image_id: str
    features: FeatureMap
    annotations: tuple[PartAnnotation, ...]
    object_class: str = ""
    scale: int = 224
    extras: dict = field(default_factory=dict)


def load_dataset(manifest: Manifest) -> list[DatasetImage]:
    out = []
    for e in manifest.entries:
        fm = read_feature_map(manifest.feature_file(e))
        anns = tuple(read_annotations(manifest.annotation_file(e)))
        out.append(DatasetImage(image_id=e.image_id, features=fm, annotations=anns,
                                object_class=e.object_class, scale=e.scale,
                                extras=dict(e.extras)))
    return out


# ---------------------------------------------------------------------------
# .vcm model bundles

_VCM_MAGIC = b"VCM1"
_VCM_VERSION = 1


class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def u8(self, v): self.buf.write(struct.pack("<B", v))
    def u32(self, v): self.buf.write(struct.pack("<I", v))
    def i32(self, v): self.buf.write(struct.pack("<i", v))
    def u64(self, v): self.buf.write(struct.pack("<Q", v))
    def f64(self, v): self.buf.write(struct.pack("<d", v))

    def array_f64(self, a):
        self.buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())

    def array_u8(self, a):
        self.buf.write(np.ascontiguousarray(a, dtype=np.uint8).tobytes())

    def bytes(self):
        return self.buf.getvalue()


class _Reader:
    def __init__(self, payload: bytes, name: str):
        self.buf = memoryview(payload)
        self.pos = 0
        self.name = name

    def _take(self, n):
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"unexpected end of stream in section {self.name}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self): return struct.unpack("<B", self._take(1))[0]
    def u32(self): return struct.unpack("<I", self._take(4))[0]
    def i32(self): return struct.unpack("<i", self._take(4))[0]
    def u64(self): return struct.unpack("<Q", self._take(8))[0]
    def f64(self): return struct.unpack("<d", self._take(8))[0]

    def array_f64(self, shape):
        n = int(np.prod(shape))
        return np.frombuffer(self._take(8 * n), dtype="<f8").reshape(shape).copy()

    def array_u8(self, shape):
        n = int(np.prod(shape))
        return np.frombuffer(self._take(n), dtype=np.uint8).reshape(shape).copy()


def _pack_sections(sections: list[tuple[str, bytes]]) -> bytes:
    out = io.BytesIO()
    out.write(_VCM_MAGIC)
    out.write(struct.pack("<II", _VCM_VERSION, len(sections)))
    for name, payload in sections:
        nb = name.encode("utf-8")
        out.write(struct.pack("<I", len(nb)))
        out.write(nb)
        out.write(struct.pack("<QI", len(payload), zlib.crc32(payload)))
        out.write(payload)
    return out.getvalue()


def _unpack_sections(raw: bytes, path) -> dict[str, bytes]:
    if len(raw) < 12:
        raise TruncatedError(f"unexpected end of stream in {path}")
    if raw[:4] != _VCM_MAGIC:
        raise BadMagicError(f"bad magic {raw[:4]!r} in {path}")
    version, n_sections = struct.unpack("<II", raw[4:12])
    if version != _VCM_VERSION:
        raise VersionError(f"unsupported model version {version} in {path}")
    pos = 12
    sections = {}
    for _ in range(n_sections):
        if pos + 4 > len(raw):
            raise TruncatedError(f"unexpected end of stream in {path}")
        (name_len,) = struct.unpack("<I", raw[pos:pos + 4])
        pos += 4
        if pos + name_len + 12 > len(raw):
            raise TruncatedError(f"unexpected end of stream in {path}")
        try:
            name = raw[pos:pos + name_len].decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"unreadable section name in {path}: {e}") from None
        pos += name_len
        payload_len, crc = struct.unpack("<QI", raw[pos:pos + 12])
        pos += 12
        if pos + payload_len > len(raw):
            raise TruncatedError(f"unexpected end of stream in {path}")
        payload = raw[pos:pos + payload_len]
        pos += payload_len
        if zlib.crc32(payload) != crc:
            raise IntegrityError(f"checksum mismatch in section {name!r} of {path}")
        sections[name] = payload
    return sections


def _write_cue(w: _Writer, v: int, cue: CueModel, off: OffsetMap) -> None:
    w.u32(v)
    w.u32(len(cue.hist_pos))
    w.f64(cue.r_max)
    w.f64(cue.threshold)
    w.f64(cue.fnr)
    w.f64(cue.fpr)
    w.array_f64(cue.hist_pos)
    w.array_f64(cue.hist_neg)
    w.array_f64(cue.score_table)
    side = off.grid.shape[0]
    w.u32(side)
    w.array_f64(off.grid)
    w.array_u8(off.selected.astype(np.uint8))
    w.f64(off.mean_freq)
    w.u64(off.sample_count)


def _read_cue(r: _Reader) -> tuple[int, CueModel, OffsetMap]:
    v = r.u32()
    nbins = r.u32()
    r_max = r.f64()
    threshold = r.f64()
    fnr = r.f64()
    fpr = r.f64()
    hist_pos = r.array_f64((nbins,))
    hist_neg = r.array_f64((nbins,))
    score_table = r.array_f64((nbins,))
    side = r.u32()
    grid = r.array_f64((side, side))
    selected = r.array_u8((side, side)).astype(bool)
    mean_freq = r.f64()
    sample_count = r.u64()
    cue = CueModel(hist_pos=hist_pos, hist_neg=hist_neg, r_max=r_max,
                   threshold=threshold, fnr=fnr, fpr=fpr, score_table=score_table)
    off = OffsetMap(grid=grid, selected=selected, mean_freq=mean_freq,
                    sample_count=sample_count)
    return v, cue, off


def save_model(model: ModelBundle, path) -> None:
    model.validate()
    meta = {
        "format": _VCM_VERSION,
        "neighborhood_radius": model.neighborhood_radius,
        "stride": model.stride,
        "receptive_offset": model.receptive_offset,
        "training_scale": model.training_scale,
        "part_ids": sorted(model.parts),
        "dictionary_size": model.dictionary.size,
    }
    sections = [("meta", json.dumps(meta, sort_keys=True).encode("utf-8"))]

    d = model.dictionary
    w = _Writer()
    w.u32(d.size)
    w.u32(d.depth)
    w.u64(d.seed)
    w.u32(d.iterations)
    w.f64(d.inertia)
    w.array_f64(d.centers)
    sections.append(("dictionary", w.bytes()))

    for part_id in sorted(model.parts):
        pm = model.parts[part_id]
        w = _Writer()
        w.u32(pm.part_id)
        w.f64(pm.nms_radius)
        w.f64(pm.box_size[0])
        w.f64(pm.box_size[1])
        w.u32(len(pm.supporting))
        for v in pm.supporting:
            w.i32(v)
        for v in pm.supporting:
            _write_cue(w, v, pm.cues[v], pm.offsets[v])
        sections.append((f"part:{part_id}", w.bytes()))

    Path(path).write_bytes(_pack_sections(sections))


def load_model(path) -> ModelBundle:
    sections = _unpack_sections(Path(path).read_bytes(), path)
    if "meta" not in sections or "dictionary" not in sections:
        raise IntegrityError(f"model {path} missing meta/dictionary sections")
    try:
        meta = json.loads(bytes(sections["meta"]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable meta section in {path}: {e}") from None
    if meta.get("format") != _VCM_VERSION:
        raise VersionError(f"model format {meta.get('format')} != {_VCM_VERSION}")

    r = _Reader(sections["dictionary"], "dictionary")
    n, depth = r.u32(), r.u32()
    seed, iterations, inertia = r.u64(), r.u32(), r.f64()
    centers = r.array_f64((n, depth))
    dictionary = ConceptDictionary(centers=centers, seed=seed,
                                   iterations=iterations, inertia=inertia)

    parts = {}
    for part_id in meta["part_ids"]:
        name = f"part:{part_id}"
        if name not in sections:
            raise IntegrityError(f"model {path} missing section {name!r}")
        r = _Reader(sections[name], name)
        pid = r.u32()
        nms_radius = r.f64()
        box_size = (r.f64(), r.f64())
        n_sup = r.u32()
        supporting = [r.i32() for _ in range(n_sup)]
        cues, offsets = {}, {}
        for _ in range(n_sup):
            v, cue, off = _read_cue(r)
            cues[v] = cue
            offsets[v] = off
        parts[pid] = PartModel(part_id=pid, supporting=tuple(supporting),
                               cues=cues, offsets=offsets, nms_radius=nms_radius,
                               box_size=box_size)

    model = ModelBundle(dictionary=dictionary, parts=parts,
                        neighborhood_radius=meta["neighborhood_radius"],
                        stride=meta["stride"],
                        receptive_offset=meta["receptive_offset"],
                        training_scale=meta["training_scale"])
    model.validate()
    return model
