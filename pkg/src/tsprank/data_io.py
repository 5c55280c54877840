"""Dataset ingestion, synthetic data and model files.

Every loader returns groups in ascending rank convention (rank 1 = first
position). Ties are rejected unless ``tie_break=True``, which orders tied
entities by entity id; that mode is for exploration only.
"""
from __future__ import annotations

import hashlib
import json
import re
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BilinearModel, RankingGroup, RankOrder
from .errors import CorruptModelError, DimensionError, IngestionError

MAGIC = b"TSPRANKM"
FORMAT_VERSION = 1

_DOCID = re.compile(r"docid\s*=\s*(\S+)")


def _labels_to_ranks(labels, entity_ids, rank_order, group_id, tie_break=False):
    """Strict ranks from ordinal labels; descending means the largest label is rank 1."""
    labels = list(labels)
    if not tie_break and len(set(labels)) != len(labels):
        seen, dup = set(), None
        for lab in labels:
            if lab in seen:
                dup = lab
                break
            seen.add(lab)
        raise IngestionError(f"group {group_id!r}: tied label {dup!r}; strict rankings are required")
    sign = -1.0 if RankOrder(rank_order) is RankOrder.DESCENDING else 1.0
    order = sorted(range(len(labels)), key=lambda i: (sign * labels[i], entity_ids[i]))
    ranks = [0] * len(labels)
    for pos, i in enumerate(order):
        ranks[i] = pos + 1
    return tuple(ranks)


def truncate_group(group: RankingGroup, k: int) -> RankingGroup:
    """Keep the k best entities by gold rank and renumber their ranks 1..k."""
    if k < 2:
        raise ValueError("top-k truncation needs k >= 2")
    group = group.normalized()
    if group.n <= k:
        return group
    keep = sorted(range(group.n), key=lambda i: group.gold_ranks[i])[:k]
    keep_sorted = sorted(keep)
    ranks = [group.gold_ranks[i] for i in keep_sorted]
    renum = {r: p + 1 for p, r in enumerate(sorted(ranks))}
    return RankingGroup(group.group_id, tuple(group.entity_ids[i] for i in keep_sorted),
                        group.embeddings[keep_sorted], tuple(renum[r] for r in ranks))


def parse_letor(path, rank_order: str = "descending", tie_break: bool = False,
                top_k: int | None = None, dim: int | None = None) -> list[RankingGroup]:
    """Read ``label qid:Q fid:val ... # comment`` lines into one group per qid.

    Feature ids are 1-based; vectors are dense with length equal to the
    largest feature id in the file (or ``dim`` if given). Missing features are 0.
    """
    rows: dict[str, list] = {}
    max_fid = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body, _, comment = line.rstrip("\r\n").partition("#")
            tokens = body.split()
            if not tokens:
                continue
            if len(tokens) < 2 or not tokens[1].startswith("qid:"):
                raise IngestionError(f"{path}:{lineno}: expected '<label> qid:<id> ...'")
            try:
                label = float(tokens[0])
            except ValueError:
                raise IngestionError(f"{path}:{lineno}: non-numeric label {tokens[0]!r}") from None
            qid = tokens[1][4:]
            if not qid:
                raise IngestionError(f"{path}:{lineno}: empty qid")
            feats = {}
            for tok in tokens[2:]:
                fid_s, sep, val_s = tok.partition(":")
                try:
                    if not sep:
                        raise ValueError
                    fid, val = int(fid_s), float(val_s)
                except ValueError:
                    raise IngestionError(f"{path}:{lineno}: malformed feature {tok!r}") from None
                if fid < 1:
                    raise IngestionError(f"{path}:{lineno}: feature ids are 1-based, got {fid}")
                if fid in feats:
                    raise IngestionError(f"{path}:{lineno}: duplicate feature id {fid}")
                if not np.isfinite(val):
                    raise IngestionError(f"{path}:{lineno}: non-finite value for feature {fid}")
                feats[fid] = val
            max_fid = max(max_fid, max(feats, default=0))
            m = _DOCID.search(comment)
            group_rows = rows.setdefault(qid, [])
            entity_id = m.group(1) if m else f"{qid}:{len(group_rows)}"
            group_rows.append((entity_id, label, feats, lineno))
    if not rows:
        warnings.warn(f"{path}: no ranking groups found", stacklevel=2)
        return []
    width = max_fid if dim is None else dim
    if width < max_fid:
        raise DimensionError(f"{path}: feature id {max_fid} exceeds requested dimension {dim}")
    groups = []
    for qid, items in rows.items():
        ids = [it[0] for it in items]
        if len(set(ids)) != len(ids):
            raise IngestionError(f"group {qid!r}: duplicate entity id")
        emb = np.zeros((len(items), max(width, 1)))
        for r, (_, _, feats, _) in enumerate(items):
            for fid, val in feats.items():
                emb[r, fid - 1] = val
        ranks = _labels_to_ranks([it[1] for it in items], ids, rank_order, qid, tie_break)
        group = RankingGroup(qid, tuple(ids), emb, ranks)
        if top_k is not None:
            group = truncate_group(group, top_k)
        groups.append(group)
    return groups


def parse_embeddings(path, rank_order: str = "ascending", top_k: int | None = None) -> list[RankingGroup]:
    """Read JSON lines ``{group_id, entity_id, rank, embedding}``; groups keep first-appearance order."""
    buckets: dict[str, list] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                gid, eid = str(rec["group_id"]), str(rec["entity_id"])
                rank = rec.get("rank")
                emb = [float(v) for v in rec["embedding"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise IngestionError(f"{path}:{lineno}: bad record ({exc})") from None
            buckets.setdefault(gid, []).append((eid, rank, emb, lineno))
    if not buckets:
        warnings.warn(f"{path}: no ranking groups found", stacklevel=2)
        return []
    groups = []
    for gid, items in buckets.items():
        ids = [it[0] for it in items]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise IngestionError(f"group {gid!r}: duplicate entity id {dup!r}")
        dims = {len(it[2]) for it in items}
        if len(dims) != 1:
            raise IngestionError(f"group {gid!r}: inconsistent embedding dimensions {sorted(dims)}")
        ranks = [it[1] for it in items]
        if all(r is None for r in ranks):
            gold = None
        elif any(r is None for r in ranks):
            raise IngestionError(f"group {gid!r}: some records lack a rank")
        else:
            try:
                gold = tuple(int(r) for r in ranks)
            except (TypeError, ValueError):
                raise IngestionError(f"group {gid!r}: non-integer rank") from None
        try:
            group = RankingGroup(gid, tuple(ids), np.array([it[2] for it in items]), gold,
                                 RankOrder(rank_order)).normalized()
        except ValueError as exc:
            raise IngestionError(f"group {gid!r}: {exc}") from None
        if top_k is not None and gold is not None:
            group = truncate_group(group, top_k)
        groups.append(group)
    return groups


def write_embeddings(path, groups) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in groups:
            for i, eid in enumerate(g.entity_ids):
                rec = {"group_id": g.group_id, "entity_id": eid,
                       "rank": None if g.gold_ranks is None else g.gold_ranks[i],
                       "embedding": g.embeddings[i].tolist()}
                fh.write(json.dumps(rec) + "\n")


def write_predictions(path_or_fh, records) -> None:
    """Records are dicts with group_id, entity_id, rank (or an ``error`` entry)."""
    fh = open(path_or_fh, "w", encoding="utf-8") if isinstance(path_or_fh, (str, Path)) else path_or_fh
    try:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    finally:
        if fh is not path_or_fh:
            fh.close()


def read_predictions(path) -> dict[str, dict[str, int]]:
    """group_id -> {entity_id: predicted rank}; error records are skipped."""
    out: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "error" in rec:
                continue
            try:
                out.setdefault(str(rec["group_id"]), {})[str(rec["entity_id"])] = int(rec["rank"])
            except (KeyError, TypeError, ValueError) as exc:
                raise IngestionError(f"{path}:{lineno}: bad prediction record ({exc})") from None
    return out


def generate_synthetic(n_groups: int, group_size: int, dim: int, noise: float = 0.0, seed: int = 0):
    """Groups of standard-normal embeddings ranked by a planted direction.

    Gold rank 1 goes to the entity with the largest ``w* . e + noise``.
    Returns ``(groups, w_star)``.
    """
    if group_size < 2 or dim < 1 or noise < 0 or n_groups < 0:
        raise ValueError("need group_size >= 2, dim >= 1, noise >= 0, n_groups >= 0")
    rng = np.random.default_rng(seed)
    w_star = rng.standard_normal(dim)
    w_star /= np.linalg.norm(w_star)
    groups = []
    for g in range(n_groups):
        E = rng.standard_normal((group_size, dim))
        utility = E @ w_star + noise * rng.standard_normal(group_size)
        ranks = np.empty(group_size, dtype=np.int64)
        ranks[np.argsort(-utility, kind="stable")] = np.arange(1, group_size + 1)
        groups.append(RankingGroup(f"syn-{g}", tuple(f"e{i}" for i in range(group_size)), E,
                                   tuple(ranks.tolist())))
    return groups, w_star


# -- dataset manifests -------------------------------------------------------------------

@dataclass
class DatasetManifest:
    format: str                      # "letor" or "jsonl"
    train: str | None = None
    validation: str | None = None
    test: str | None = None
    rank_order: str | None = None    # default: descending for letor, ascending for jsonl
    top_k_truncation: int | None = None
    tie_break: bool = False

    def __post_init__(self):
        if self.format not in ("letor", "jsonl"):
            raise ValueError(f"unknown dataset format {self.format!r}")
        if self.top_k_truncation is not None and self.top_k_truncation < 2:
            raise ValueError("top_k_truncation must be >= 2")

    @classmethod
    def from_json(cls, path) -> "DatasetManifest":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        base = Path(path).parent
        for key in ("train", "validation", "test"):
            if data.get(key):
                data[key] = str(base / data[key])
        return cls(**data)

    def load(self, split: str, dim: int | None = None) -> list[RankingGroup]:
        path = getattr(self, split)
        if path is None:
            raise ValueError(f"manifest has no {split} split")
        if not Path(path).exists():
            raise FileNotFoundError(path)
        return load_groups(path, self.format, self.rank_order, self.top_k_truncation,
                           self.tie_break, dim)


def load_groups(path, fmt: str, rank_order: str | None = None, top_k: int | None = None,
                tie_break: bool = False, dim: int | None = None) -> list[RankingGroup]:
    if fmt == "letor":
        return parse_letor(path, rank_order or "descending", tie_break, top_k, dim)
    if fmt == "jsonl":
        return parse_embeddings(path, rank_order or "ascending", top_k)
    raise ValueError(f"unknown dataset format {fmt!r}")


# -- model files -------------------------------------------------------------------------

def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def save_model(model: BilinearModel, path, config: dict | None = None) -> None:
    """Write ``MAGIC | u32 version | u64 header length | JSON header | float64 arrays | checksum``."""
    arrays = [("W", model.W), ("b", np.array([model.b]))]
    if model.encoder == "linear":
        arrays += [("M", model.M), ("c", model.c)]
    header = {
        "d": model.d,
        "input_dim": model.input_dim,
        "encoder": model.encoder,
        "arrays": [[name, list(arr.shape)] for name, arr in arrays],
        "config": config or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in arrays)
    payload = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(head)) + head + body
    with open(path, "wb") as fh:
        fh.write(payload + _checksum(payload))


def load_model_with_config(path) -> tuple[BilinearModel, dict]:
    data = Path(path).read_bytes()
    fixed = len(MAGIC) + 12
    if len(data) < fixed + 8:
        raise CorruptModelError(f"{path}: truncated model file")
    if data[:len(MAGIC)] != MAGIC:
        raise CorruptModelError(f"{path}: not a model file (bad magic)")
    payload, digest = data[:-8], data[-8:]
    if _checksum(payload) != digest:
        raise CorruptModelError(f"{path}: checksum mismatch")
    version, head_len = struct.unpack("<IQ", data[len(MAGIC):fixed])
    if version != FORMAT_VERSION:
        raise CorruptModelError(f"{path}: unsupported format version {version}")
    try:
        header = json.loads(payload[fixed:fixed + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CorruptModelError(f"{path}: unreadable header") from None
    offset = fixed + head_len
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        chunk = payload[offset:offset + 8 * count]
        if len(chunk) != 8 * count:
            raise CorruptModelError(f"{path}: truncated array {name}")
        arrays[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
        offset += 8 * count
    if offset != len(payload):
        raise CorruptModelError(f"{path}: trailing bytes after arrays")
    try:
        model = BilinearModel(arrays["W"], float(arrays["b"][0]), header["encoder"],
                              arrays.get("M"), arrays.get("c"))
    except (KeyError, ValueError) as exc:
        raise CorruptModelError(f"{path}: inconsistent model parameters ({exc})") from None
    if model.d != header["d"] or model.input_dim != header["input_dim"]:
        raise CorruptModelError(f"{path}: header dimensions disagree with arrays")
    return model, header["config"]


def load_model(path) -> BilinearModel:
    return load_model_with_config(path)[0]
