"""
Embedding-based nearest-neighbour retrieval over a local image corpus.

Embeddings are unit vectors and neighbours are ranked by the spherical
distance φ(a, b) = 2·arcsin(‖a − b‖/2). φ is strictly increasing in the
chord length ‖a − b‖, so ranking is done on chord lengths and ties are
broken by the image path.

Index file layout::

    ADIR-INDEX 1
    dimension 128
    count 500
    encoder coarse-stats-v1
    fingerprint <sha256 of the corpus listing>
    root "<corpus directory>"
    skipped 1
    skip "broken.png"
    entry <sha256 of the file> "img_0000.png"
    ...
    end
    <count × dimension little-endian float32>
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from .errors import FormatError, NotFound, ParameterError, ShapeError
from .imageio import list_images, read_image, to_channels
from .operators import bicubic_resize
from .ports import EncoderPort, LoggerPort

MAGIC = "ADIR-INDEX"
VERSION = 1
CANONICAL_SIZE = 64
MIN_SIZE = 8


@dataclass(frozen=True, eq=False)
class Embedding:
    vector: Tensor
    degenerate: bool = False

    def __post_init__(self) -> None:
        v = self.vector
        if v.dim() != 1 or not bool(torch.isfinite(v).all()):
            raise ShapeError("embedding must be a finite vector", {"shape": list(v.shape)})
        norm = float(torch.linalg.vector_norm(v.to(torch.float64)))
        if abs(norm - 1.0) > 1e-6:
            raise ParameterError("embedding must have unit norm", {"norm": norm})

    @property
    def dimension(self) -> int:
        return int(self.vector.shape[0])


def spherical_distance(a: Embedding, b: Embedding) -> float:
    if a.dimension != b.dimension:
        raise ShapeError("embedding dimensions differ", {"left": a.dimension, "right": b.dimension})
    chord = float(torch.linalg.vector_norm(a.vector.to(torch.float64) - b.vector.to(torch.float64)))
    return 2.0 * math.asin(min(max(chord / 2.0, 0.0), 1.0))


# Encoder ---------------------------------------------------------------------

_BINOMIAL = torch.tensor([1.0, 4.0, 6.0, 4.0, 1.0], dtype=torch.float64) / 16.0
_LUMA = torch.tensor([0.299, 0.587, 0.114], dtype=torch.float64)


def _unit(block: Tensor) -> Tensor:
    n = torch.linalg.vector_norm(block)
    return block / n if float(n) > 0 else block


class CoarseStatsEncoder(EncoderPort):
    """
    Hand-designed 128-d encoder built from statistics that survive blur and
    downsampling. Blocks, each unit-normalised then weighted:

      - mean/std per colour channel on a 3-level Gaussian pyramid (18)
      - zero-mean 4×4 luminance grid per level (48)
      - 16-bin magnitude-weighted gradient orientation histogram per level (48)
      - 14-bin soft luminance histogram at the coarsest level (14)
    """

    name = "coarse-stats-v1"
    dimension = 128
    levels = 3
    weights = (1.0, 1.0, 0.7, 0.7)

    def _pyramid(self, x: Tensor) -> list[Tensor]:
        k = torch.outer(_BINOMIAL, _BINOMIAL)[None, None]
        out = [x]
        for _ in range(self.levels - 1):
            planes = F.pad(out[-1][:, None], (2, 2, 2, 2), mode="reflect")
            out.append(F.conv2d(planes, k, stride=2)[:, 0])
        return out

    @staticmethod
    def _orientation(lum: Tensor, bins: int = 16) -> Tensor:
        padded = F.pad(lum[None, None], (1, 1, 1, 1), mode="replicate")[0, 0]
        gx = 0.5 * (padded[1:-1, 2:] - padded[1:-1, :-2])
        gy = 0.5 * (padded[2:, 1:-1] - padded[:-2, 1:-1])
        mag = torch.sqrt(gx**2 + gy**2).reshape(-1)
        angle = torch.remainder(torch.atan2(gy, gx), 2 * math.pi).reshape(-1)
        idx = torch.clamp((angle / (2 * math.pi) * bins).long(), max=bins - 1)
        hist = torch.zeros(bins, dtype=torch.float64).index_add_(0, idx, mag)
        total = hist.sum()
        return hist / total if float(total) > 0 else hist

    @staticmethod
    def _soft_histogram(lum: Tensor, bins: int = 14) -> Tensor:
        centers = (torch.arange(bins, dtype=torch.float64) + 0.5) / bins
        dist = torch.abs(lum.reshape(-1, 1).clamp(0.0, 1.0) - centers[None]) * bins
        hist = torch.clamp(1.0 - dist, min=0.0).sum(dim=0)
        return hist / hist.sum()

    def embed(self, image: Tensor) -> Embedding:
        if image.dim() != 3:
            raise ShapeError("expected a (C, H, W) image", {"shape": list(image.shape)})
        if min(image.shape[-2:]) < MIN_SIZE:
            raise ParameterError("image too small to embed", {"shape": list(image.shape)})
        x = to_channels(image.to(torch.float64), 3)
        x = bicubic_resize(x, (CANONICAL_SIZE, CANONICAL_SIZE))
        if float(x.std()) < 1e-12:
            uniform = torch.full((self.dimension,), 1.0 / math.sqrt(self.dimension), dtype=torch.float64)
            return Embedding(uniform, degenerate=True)

        levels = self._pyramid(x)
        stats, grids, orient = [], [], []
        for lvl in levels:
            flat = lvl.reshape(3, -1)
            stats.append(torch.stack([flat.mean(dim=1), flat.std(dim=1, unbiased=False)], dim=1).reshape(-1))
            lum = (lvl * _LUMA[:, None, None]).sum(dim=0)
            grid = F.adaptive_avg_pool2d(lum[None, None], 4).reshape(-1)
            grids.append(grid - grid.mean())
            orient.append(self._orientation(lum))
        coarse_lum = (levels[-1] * _LUMA[:, None, None]).sum(dim=0)
        blocks = [
            torch.cat(stats),
            torch.cat(grids),
            torch.cat(orient),
            self._soft_histogram(coarse_lum),
        ]
        vec = torch.cat([w * _unit(b) for w, b in zip(self.weights, blocks)])
        return Embedding(vec / torch.linalg.vector_norm(vec))


# Index -----------------------------------------------------------------------


@dataclass(eq=False)
class EmbeddingIndex:
    paths: list[str]
    checksums: list[str]
    vectors: Tensor  # (N, d) float32
    fingerprint: str
    root: str
    encoder: str = CoarseStatsEncoder.name
    skipped: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(set(self.paths)) != len(self.paths):
            raise ParameterError("index paths must be unique")
        if self.vectors.dim() != 2 or self.vectors.shape[0] != len(self.paths) or len(self.checksums) != len(self.paths):
            raise ShapeError(
                "index entries disagree",
                {"paths": len(self.paths), "vectors": list(self.vectors.shape)},
            )

    def __len__(self) -> int:
        return len(self.paths)

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def entries(self) -> list[tuple[str, Embedding]]:
        return [(p, Embedding(v.to(torch.float64) / torch.linalg.vector_norm(v.to(torch.float64)))) for p, v in zip(self.paths, self.vectors)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingIndex):
            return NotImplemented
        return (
            self.paths == other.paths
            and self.checksums == other.checksums
            and self.fingerprint == other.fingerprint
            and self.root == other.root
            and self.encoder == other.encoder
            and self.skipped == other.skipped
            and torch.equal(self.vectors, other.vectors)
        )


@dataclass(frozen=True)
class Neighbor:
    rank: int
    path: str
    distance: float


def knn_vector(query: Tensor, index: EmbeddingIndex, K: int) -> list[Neighbor]:
    if not 1 <= K <= len(index):
        raise ParameterError("K must lie in [1, index size]", {"K": K, "size": len(index)})
    if query.shape != (index.dimension,):
        raise ShapeError("query dimension differs from the index", {"query": list(query.shape), "index": index.dimension})
    # storage precision: an indexed image is at distance 0 from itself
    q = query.to(torch.float32).to(torch.float64)
    diff = index.vectors.to(torch.float64) - q[None]
    chord = torch.linalg.vector_norm(diff, dim=1).numpy()
    order = np.lexsort((np.array(index.paths), chord))[:K]
    return [
        Neighbor(rank=r + 1, path=index.paths[i], distance=2.0 * math.asin(min(chord[i] / 2.0, 1.0)))
        for r, i in enumerate(order)
    ]


def knn(
    query: Tensor | Embedding,
    index: EmbeddingIndex,
    K: int,
    encoder: Optional[EncoderPort] = None,
) -> list[Neighbor]:
    """K nearest entries in non-decreasing spherical distance, ties by path."""
    if isinstance(query, Embedding):
        emb = query
    else:
        emb = (encoder or CoarseStatsEncoder()).embed(query)
    return knn_vector(emb.vector, index, K)


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def corpus_fingerprint(listing: Sequence[tuple[str, str]], encoder_name: str) -> str:
    h = hashlib.sha256(encoder_name.encode("utf-8"))
    for rel, digest in sorted(listing):
        h.update(f"\n{rel}\t{digest}".encode("utf-8"))
    return h.hexdigest()


def save_index(index: EmbeddingIndex, path: str | Path) -> None:
    lines = [
        f"{MAGIC} {VERSION}",
        f"dimension {index.dimension}",
        f"count {len(index)}",
        f"encoder {index.encoder}",
        f"fingerprint {index.fingerprint}",
        f"root {json.dumps(index.root)}",
        f"skipped {len(index.skipped)}",
    ]
    lines += [f"skip {json.dumps(p)}" for p in index.skipped]
    lines += [f"entry {c} {json.dumps(p)}" for p, c in zip(index.paths, index.checksums)]
    lines.append("end")
    payload = ("\n".join(lines) + "\n").encode("utf-8")
    payload += index.vectors.to(torch.float32).contiguous().numpy().astype("<f4").tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _read_header(payload: bytes, path: Path) -> tuple[dict, list[str], list[tuple[str, str]], bytes]:
    marker = b"\nend\n"
    cut = payload.find(marker)
    if cut < 0:
        raise FormatError("index header is not terminated", {"path": str(path)})
    try:
        lines = payload[:cut].decode("utf-8").split("\n")
    except UnicodeDecodeError as exc:
        raise FormatError("index header is not text", {"path": str(path)}) from exc
    if lines[0] != f"{MAGIC} {VERSION}":
        raise FormatError("not an adir index", {"header": lines[0][:80]})
    head: dict = {}
    skipped: list[str] = []
    entries: list[tuple[str, str]] = []
    try:
        for line in lines[1:]:
            key, _, rest = line.partition(" ")
            if key == "skip":
                skipped.append(json.loads(rest))
            elif key == "entry":
                digest, _, rel = rest.partition(" ")
                entries.append((json.loads(rel), digest))
            elif key in ("dimension", "count", "skipped"):
                head[key] = int(rest)
            elif key == "root":
                head[key] = json.loads(rest)
            elif key in ("encoder", "fingerprint"):
                head[key] = rest
            else:
                raise FormatError("unknown index header line", {"line": line[:80]})
    except (ValueError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt index header: {exc}", {"path": str(path)}) from exc
    missing = {"dimension", "count", "encoder", "fingerprint", "root", "skipped"} - set(head)
    if missing:
        raise FormatError("index header is incomplete", {"missing": sorted(missing)})
    return head, skipped, entries, payload[cut + len(marker):]


def load_index(path: str | Path) -> EmbeddingIndex:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise NotFound(f"cannot read index: {exc}", {"path": str(path)}) from exc
    head, skipped, entries, body = _read_header(payload, path)
    n, d = head["count"], head["dimension"]
    if len(entries) != n or len(skipped) != head["skipped"]:
        raise FormatError("index entry count mismatch", {"declared": n, "found": len(entries)})
    if len(body) != 4 * n * d:
        raise FormatError("index data has the wrong size", {"expected": 4 * n * d, "found": len(body)})
    vectors = torch.from_numpy(np.frombuffer(body, dtype="<f4").astype(np.float32).reshape(n, d))
    return EmbeddingIndex(
        paths=[p for p, _ in entries],
        checksums=[c for _, c in entries],
        vectors=vectors,
        fingerprint=head["fingerprint"],
        root=head["root"],
        encoder=head["encoder"],
        skipped=skipped,
    )


def _existing_fingerprint(path: Path) -> Optional[str]:
    if not path.exists():
        return None
    try:
        head, _, _, _ = _read_header(path.read_bytes(), path)
    except FormatError:
        return None
    return head["fingerprint"]


def ingest(
    corpus_dir: str | Path,
    index_path: str | Path,
    encoder: Optional[EncoderPort] = None,
    logger: Optional[LoggerPort] = None,
) -> EmbeddingIndex:
    """Embed every image of `corpus_dir`; a no-op when the corpus is unchanged."""
    encoder = encoder or CoarseStatsEncoder()
    enc_name = getattr(encoder, "name", type(encoder).__name__)
    root = Path(corpus_dir)
    if not root.is_dir():
        raise NotFound("corpus directory does not exist", {"path": str(root)})
    files = list_images(root)
    listing = [(p.name, _file_digest(p)) for p in files]
    fingerprint = corpus_fingerprint(listing, enc_name)
    index_path = Path(index_path)

    if _existing_fingerprint(index_path) == fingerprint:
        if logger is not None:
            logger.info("index up to date", path=str(index_path), fingerprint=fingerprint[:12])
        return load_index(index_path)

    paths: list[str] = []
    checksums: list[str] = []
    rows: list[np.ndarray] = []
    skipped: list[str] = []
    for file, (rel, digest) in zip(files, listing):
        try:
            image = read_image(file)
            emb = encoder.embed(image)
        except (FormatError, ParameterError, ShapeError) as exc:
            skipped.append(rel)
            if logger is not None:
                logger.warning("skipping image", path=rel, reason=exc.message)
            continue
        paths.append(rel)
        checksums.append(digest)
        rows.append(emb.vector.to(torch.float32).numpy())
    if not rows:
        raise NotFound("corpus contains no decodable images", {"path": str(root)})

    index = EmbeddingIndex(
        paths=paths,
        checksums=checksums,
        vectors=torch.from_numpy(np.stack(rows)),
        fingerprint=fingerprint,
        root=root.as_posix(),
        encoder=enc_name,
        skipped=skipped,
    )
    save_index(index, index_path)
    if logger is not None:
        logger.info("ingested corpus", images=len(paths), skipped=len(skipped), path=str(index_path))
    return load_index(index_path)


def load_neighbors(index: EmbeddingIndex, refs: Sequence[str]) -> list[Tensor]:
    root = Path(index.root)
    out = []
    for ref in refs:
        path = root / ref
        if not path.exists():
            raise NotFound("indexed image is missing", {"path": str(path)})
        out.append(read_image(path))
    return out
