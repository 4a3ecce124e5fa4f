"""Dataset ingestion, image sets, seed averaging and comparison reports.

Dataset layout (one directory per episode)::

    <root>/<episode>/meta.json    {"game", "seed", "gamma", "timestep", "final_score"}
    <root>/<episode>/log.jsonl    one row per frame:
                                  {"frame", "action", "reward", "lives", "score", "gaze": [[x, y], ...]}
    <root>/<episode>/frames/      <frame_id:06d>.png   (or a frames.atnb raw tensor)

Unseen-state archive::

    <root>/frames/ or <root>/frames.atnb
    <root>/members.jsonl          optional, {"frame": id, "gaze": [[x, y], ...]} per member
    <root>/meta.json              optional
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DataError, IngestionError, NoFixationError, ParameterError
from .gazeref import GazeMapConfig, GazeRecord, gaze_to_map
from .imaging import (
    WORKING_SIZE,
    FrameArchive,
    FrameStack,
    RawFrame,
    SaliencyMap,
    normalize_map,
    preprocess,
    read_raw_tensor,
    write_raw_tensor,
)
from .metrics import (
    DEFAULT_CONFIG,
    MetricConfig,
    MetricResult,
    PearsonResult,
    WelchResult,
    compare_maps,
    pearson_r_p,
    sem,
    welch_test,
)

log = logging.getLogger(__name__)

STACK_DEPTH = 4
META_FIELDS = ("game", "seed", "gamma", "timestep", "final_score")
DATA_ROOT_ENV = "RLATTENTION_DATA_ROOT"


# ==========================================================================
# frame sources


@dataclass(frozen=True)
class FrameRow:
    frame: int
    action: int
    reward: float
    lives: int
    score: float
    gaze: tuple = ()


class FrameSource:
    """Common interface for anything that can produce frames and stacks by id."""

    name: str
    archive: FrameArchive | None

    def context_ids(self, frame_id: int) -> list:
        raise NotImplementedError

    def gaze(self, frame_id: int) -> GazeRecord | None:
        return None

    def raw(self, frame_id: int) -> RawFrame:
        if self.archive is None:
            raise DataError(f"{self.name}: no frame archive")
        return self.archive.raw(frame_id)

    def previous_id(self, frame_id: int) -> int:
        return self.context_ids(frame_id)[-2]

    def stack(self, frame_id: int, size: tuple = WORKING_SIZE) -> FrameStack:
        return FrameStack(tuple(preprocess(self.raw(i), size) for i in self.context_ids(frame_id)))


@dataclass
class EpisodeLog(FrameSource):
    name: str
    rows: list
    game: str = ""
    seed: int | None = None
    gamma: float | None = None
    timestep: int | None = None
    final_score: float | None = None
    root: Path | None = None
    archive: FrameArchive | None = None
    frame_size: tuple = (210, 160)
    dropped_gaze: int = 0

    def __post_init__(self):
        self._pos = {row.frame: k for k, row in enumerate(self.rows)}

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def frame_ids(self) -> list:
        return [row.frame for row in self.rows]

    def position(self, frame_id: int) -> int:
        try:
            return self._pos[frame_id]
        except KeyError:
            raise DataError(f"{self.name}: frame {frame_id} not in log") from None

    def context_ids(self, frame_id: int) -> list:
        """The 4 frame ids ending at ``frame_id``; the first frame is repeated near the start."""
        pos = self.position(frame_id)
        return [self.rows[max(pos - k, 0)].frame for k in range(STACK_DEPTH - 1, -1, -1)]

    def gaze(self, frame_id: int) -> GazeRecord | None:
        row = self.rows[self.position(frame_id)]
        if not row.gaze:
            return None
        return GazeRecord(frame_id, row.gaze, self.frame_size)

    def meta(self) -> dict:
        return {"game": self.game, "seed": self.seed, "gamma": self.gamma, "timestep": self.timestep, "final_score": self.final_score}


def _num(value, kind, path, row, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise IngestionError(f"field {name!r} must be a number, got {value!r}", path, row)
    if kind is int:
        if float(value) != int(value):
            raise IngestionError(f"field {name!r} must be an integer, got {value!r}", path, row)
        return int(value)
    if not math.isfinite(value):
        raise IngestionError(f"field {name!r} must be finite", path, row)
    return float(value)


def _parse_gaze(value, frame_size, path, row):
    if value is None:
        return (), 0
    if not isinstance(value, list):
        raise IngestionError("gaze must be a list of [x, y] pairs", path, row)
    h, w = frame_size
    kept, dropped = [], 0
    for pt in value:
        if not (isinstance(pt, (list, tuple)) and len(pt) == 2):
            raise IngestionError(f"malformed gaze point {pt!r}", path, row)
        x = _num(pt[0], float, path, row, "gaze x")
        y = _num(pt[1], float, path, row, "gaze y")
        if 0 <= x < w and 0 <= y < h:
            kept.append((x, y))
        else:
            dropped += 1
    return tuple(kept), dropped


def _open_archive(directory: Path) -> FrameArchive | None:
    if (directory / "frames").is_dir():
        return FrameArchive(directory / "frames")
    if (directory / "frames.atnb").is_file():
        return FrameArchive(directory / "frames.atnb")
    return None


def _frame_size(archive: FrameArchive | None) -> tuple:
    if archive is None or len(archive) == 0:
        return (210, 160)
    raw = archive.raw(archive.ids[0])
    return (raw.height, raw.width)


def read_episode(directory) -> EpisodeLog:
    directory = Path(directory)
    log_path = directory / "log.jsonl"
    if not log_path.is_file():
        raise IngestionError("missing log.jsonl", directory)
    meta = {}
    meta_path = directory / "meta.json"
    if meta_path.is_file():
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise IngestionError(f"unreadable metadata: {exc}", meta_path) from None
    archive = _open_archive(directory)
    frame_size = _frame_size(archive)
    rows, dropped = [], 0
    with open(log_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"malformed JSON: {exc.msg}", log_path, lineno) from None
            if not isinstance(rec, dict):
                raise IngestionError("row must be a JSON object", log_path, lineno)
            missing = [k for k in ("frame", "action", "reward", "lives", "score") if k not in rec]
            if missing:
                raise IngestionError(f"missing fields {missing}", log_path, lineno)
            gaze, n_drop = _parse_gaze(rec.get("gaze"), frame_size, log_path, lineno)
            dropped += n_drop
            row = FrameRow(
                frame=_num(rec["frame"], int, log_path, lineno, "frame"),
                action=_num(rec["action"], int, log_path, lineno, "action"),
                reward=_num(rec["reward"], float, log_path, lineno, "reward"),
                lives=_num(rec["lives"], int, log_path, lineno, "lives"),
                score=_num(rec["score"], float, log_path, lineno, "score"),
                gaze=gaze,
            )
            if row.frame < 0:
                raise IngestionError(f"negative frame id {row.frame}", log_path, lineno)
            if rows and row.frame <= rows[-1].frame:
                raise IngestionError(f"frame ids not strictly increasing ({rows[-1].frame} then {row.frame})", log_path, lineno)
            if rows and row.lives > rows[-1].lives:
                raise IngestionError(f"lives increase mid-episode ({rows[-1].lives} -> {row.lives})", log_path, lineno)
            if archive is not None and row.frame not in archive:
                raise IngestionError(f"frame {row.frame} has no image in {archive.path}", log_path, lineno)
            rows.append(row)
    if archive is None and rows:
        raise IngestionError("no frames/ directory or frames.atnb archive", directory)
    if dropped:
        log.warning("%s: dropped %d gaze points outside the frame", directory.name, dropped)
    return EpisodeLog(
        name=directory.name,
        rows=rows,
        game=meta.get("game", ""),
        seed=meta.get("seed"),
        gamma=meta.get("gamma"),
        timestep=meta.get("timestep"),
        final_score=meta.get("final_score"),
        root=directory,
        archive=archive,
        frame_size=frame_size,
        dropped_gaze=dropped,
    )


def ingest_dataset(root) -> list:
    """Read every episode directory under ``root``, in name order."""
    root = Path(root)
    if not root.is_dir():
        raise IngestionError("dataset root is not a directory", root)
    episodes = []
    for name in sorted(os.listdir(root)):
        path = root / name
        if path.is_dir() and (path / "log.jsonl").exists():
            episodes.append(read_episode(path))
    return episodes


class UnseenArchive(FrameSource):
    """Externally curated frames with 3 predecessors of context per member."""

    def __init__(self, root):
        self.root = Path(root)
        self.name = self.root.name
        self.archive = _open_archive(self.root)
        self.frame_size = _frame_size(self.archive)
        self._gaze = {}
        self.requested = []
        members_path = self.root / "members.jsonl"
        if members_path.is_file():
            with open(members_path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        rec = json.loads(line)
                    except json.JSONDecodeError as exc:
                        raise IngestionError(f"malformed JSON: {exc.msg}", members_path, lineno) from None
                    if not isinstance(rec, dict) or "frame" not in rec:
                        raise IngestionError("member row needs a 'frame' field", members_path, lineno)
                    fid = _num(rec["frame"], int, members_path, lineno, "frame")
                    gaze, _ = _parse_gaze(rec.get("gaze"), self.frame_size, members_path, lineno)
                    self.requested.append(fid)
                    if gaze:
                        self._gaze[fid] = gaze
        elif self.archive is not None:
            self.requested = self.archive.ids

    def context_ids(self, frame_id: int) -> list:
        return [frame_id - k for k in range(STACK_DEPTH - 1, -1, -1)]

    def has_context(self, frame_id: int) -> bool:
        return self.archive is not None and all(i in self.archive for i in self.context_ids(frame_id))

    def gaze(self, frame_id: int) -> GazeRecord | None:
        pts = self._gaze.get(frame_id)
        return GazeRecord(frame_id, pts, self.frame_size) if pts else None


def is_unseen_archive(root) -> bool:
    root = Path(root)
    return (root / "members.jsonl").is_file() or (
        _open_archive(root) is not None and not (root / "log.jsonl").exists()
    )


def load_catalog(root) -> dict:
    """Map source names to frame sources for a dataset root or an unseen archive."""
    root = Path(root)
    if is_unseen_archive(root):
        src = UnseenArchive(root)
        return {src.name: src}
    return {ep.name: ep for ep in ingest_dataset(root)}


# ==========================================================================
# image sets


@dataclass(frozen=True)
class ImageSet:
    kind: str
    members: tuple
    target: int = 100
    rejected: tuple = ()

    def __post_init__(self):
        if self.kind not in ("standard", "failure", "unseen"):
            raise ParameterError(f"unknown image set kind {self.kind!r}")
        members = tuple((str(ref), int(fid)) for ref, fid in self.members)
        if len(set(members)) != len(members):
            raise DataError("image set members must be unique")
        if len(members) > self.target:
            raise DataError(f"{len(members)} members exceed the target size {self.target}")
        object.__setattr__(self, "members", members)

    def __len__(self) -> int:
        return len(self.members)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "target": self.target,
            "members": [list(m) for m in self.members],
            "rejected": [list(m) for m in self.rejected],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ImageSet":
        return cls(
            data["kind"],
            tuple(tuple(m) for m in data["members"]),
            int(data.get("target", 100)),
            tuple(tuple(m) for m in data.get("rejected", ())),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ImageSet":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def standard_indices(length: int, n: int) -> list:
    """Positions ``floor(k * L / n) + 3``; overflow past the end is backfilled from the tail."""
    first = STACK_DEPTH - 1
    picked = []
    overflow = 0
    for k in range(n):
        idx = (k * length) // n + first
        if idx < length:
            picked.append(idx)
        else:
            overflow += 1
    used = set(picked)
    # unused tail frames first, then head frames whose stacks need padding
    spare = itertools.chain(range(length - 1, first - 1, -1), range(min(first, length) - 1, -1, -1))
    picked.extend(itertools.islice((i for i in spare if i not in used), overflow))
    return sorted(picked)


def build_standard_set(ep: EpisodeLog, n: int = 100) -> ImageSet:
    """``n`` uniformly spaced frames of one episode."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if len(ep) < n:
        raise ParameterError(f"episode {ep.name} has {len(ep)} frames, fewer than n={n}")
    return ImageSet("standard", tuple((ep.name, ep.rows[i].frame) for i in standard_indices(len(ep), n)), n)


def life_loss_events(ep: EpisodeLog) -> list:
    """Positions at which the lives counter drops."""
    return [k for k in range(1, len(ep.rows)) if ep.rows[k].lives < ep.rows[k - 1].lives]


def build_failure_set(eps: Sequence[EpisodeLog], n: int = 100, lookback: int = 1) -> ImageSet:
    """Frames ``lookback`` steps before each life loss, first ``n`` events in order."""
    if lookback < 0:
        raise ParameterError(f"lookback must be >= 0, got {lookback}")
    members, seen = [], set()
    total_events = 0
    for ep in eps:
        for pos in life_loss_events(ep):
            total_events += 1
            if pos - lookback < 0:
                continue
            member = (ep.name, ep.rows[pos - lookback].frame)
            if member not in seen and len(members) < n:
                seen.add(member)
                members.append(member)
    if total_events == 0:
        log.warning("no life-loss events found; failure set is empty")
    return ImageSet("failure", tuple(members), n)


def ingest_unseen_set(root, n: int = 100) -> ImageSet:
    """Members of an unseen-state archive that have all 3 predecessor frames."""
    archive = UnseenArchive(root)
    members, rejected = [], []
    for fid in archive.requested:
        if archive.has_context(fid) and len(members) < n:
            members.append((archive.name, fid))
        else:
            rejected.append((archive.name, fid))
    if rejected:
        log.warning("%s: rejected %d members without full context", archive.name, len(rejected))
    return ImageSet("unseen", tuple(members), n, tuple(rejected))


# ==========================================================================
# map bundles: a float raw tensor plus a JSON sidecar


def save_map_bundle(directory, members: Sequence, maps: Sequence, meta: dict | None = None) -> None:
    """Write ``maps.atnf`` and ``maps.json``; ``None`` maps are stored as zeros and flagged missing."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    shape = next((m.shape for m in maps if m is not None), WORKING_SIZE)
    stack = np.zeros((len(maps),) + tuple(shape))
    entries = []
    for k, (member, m) in enumerate(zip(members, maps)):
        entry = {"episode": member[0], "frame_id": member[1], "missing": m is None}
        if m is not None:
            stack[k] = m.values
            entry["degenerate"] = bool(m.degenerate)
            entry["normalized"] = bool(m.normalized)
        entries.append(entry)
    write_raw_tensor(directory / "maps.atnf", stack)
    sidecar = {"meta": meta or {}, "maps": entries}
    (directory / "maps.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_map_bundle(directory) -> dict:
    """Read a bundle into ``{(episode, frame_id): SaliencyMap}``, skipping missing entries."""
    directory = Path(directory)
    sidecar = json.loads((directory / "maps.json").read_text(encoding="utf-8"))
    data = read_raw_tensor(directory / "maps.atnf")[..., 0]
    if data.shape[0] != len(sidecar["maps"]):
        raise DataError(f"{directory}: {data.shape[0]} maps but {len(sidecar['maps'])} sidecar entries")
    out = {}
    for values, entry in zip(data, sidecar["maps"]):
        if entry["missing"]:
            continue
        out[(entry["episode"], int(entry["frame_id"]))] = SaliencyMap(
            values, normalized=entry.get("normalized", True), degenerate=entry.get("degenerate", False)
        )
    return out


def bundle_meta(directory) -> dict:
    return json.loads((Path(directory) / "maps.json").read_text(encoding="utf-8"))["meta"]


# ==========================================================================
# seed consistency and score normalization


def average_seed_maps(maps: Sequence[SaliencyMap]) -> SaliencyMap:
    """Pixelwise mean of normalized maps, renormalized."""
    if not maps:
        raise ParameterError("need at least one map")
    shapes = {m.shape for m in maps}
    if len(shapes) != 1:
        raise ContractError(f"maps differ in shape: {sorted(shapes)}")
    for m in maps:
        if not m.normalized:
            raise ContractError("seed averaging needs normalized maps")
    total = np.zeros(maps[0].shape)
    for m in maps:
        total += m.values
    return normalize_map(total / len(maps))


def pairwise_consistency(maps: Sequence[SaliencyMap], cfg: MetricConfig = DEFAULT_CONFIG) -> tuple:
    """All pairwise CCs (in ``itertools.combinations`` order) and the mean of the defined ones."""
    from .metrics import cc

    if len(maps) < 2:
        raise ParameterError("need at least two maps")
    values = [cc(a, b, cfg) for a, b in itertools.combinations(maps, 2)]
    defined = [v for v in values if not math.isnan(v)]
    mean = float(np.mean(defined)) if defined else math.nan
    return mean, values


def normalize_scores(series: Sequence[float], mode: str = "by_final", ref: float | None = None) -> np.ndarray:
    """Divide scores by the final score or by a reference score.

    A zero divisor yields an all-``nan`` series, which downstream
    correlations report as undefined.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        raise ParameterError("empty score series")
    if mode == "by_final":
        divisor = x[-1]
    elif mode == "by_reference":
        if ref is None:
            raise ParameterError("by_reference needs a reference score")
        divisor = float(ref)
    else:
        raise ParameterError(f"unknown normalization mode {mode!r}")
    if divisor == 0:
        return np.full(x.shape, math.nan)
    return x / divisor


# ==========================================================================
# comparison reports

CSV_COLUMNS = ("frame_id", "cc", "kl", "auc", "flags", "episode", "neg_kl")
METRICS = ("cc", "kl", "neg_kl", "auc")


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else format(x, ".12g")


@dataclass
class MetricReport:
    results: list
    provenance: dict = field(default_factory=dict)
    skipped: int = 0
    significance: dict = field(default_factory=dict)
    correlations: dict = field(default_factory=dict)

    def __post_init__(self):
        self.results = sorted(self.results, key=lambda r: (r.episode, r.frame_id))

    def included(self) -> list:
        """Results without any flag; these enter the aggregates."""
        return [r for r in self.results if not r.flags]

    def series(self, metric: str) -> np.ndarray:
        vals = []
        for r in self.included():
            v = -r.kl if metric == "neg_kl" else getattr(r, metric)
            if not math.isnan(v):
                vals.append(v)
        return np.asarray(vals, dtype=np.float64)

    def mean(self, metric: str) -> float:
        s = self.series(metric)
        return float(s.mean()) if s.size else math.nan

    def aggregates(self) -> dict:
        out = {}
        for metric in METRICS:
            s = self.series(metric)
            out[metric] = {
                "n": int(s.size),
                "mean": float(s.mean()) if s.size else math.nan,
                "sem": sem(s) if s.size >= 2 else math.nan,
            }
        return out

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.results:
            writer.writerow([r.frame_id, _fmt(r.cc), _fmt(r.kl), _fmt(r.auc), ";".join(r.flags), r.episode, _fmt(-r.kl)])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "provenance": self.provenance,
            "n_frames": len(self.results),
            "n_included": len(self.included()),
            "n_skipped": self.skipped,
            "aggregates": self.aggregates(),
            "significance": {k: dict(v._asdict()) for k, v in self.significance.items()},
            "correlations": {k: dict(v._asdict()) for k, v in self.correlations.items()},
            "frames": [
                {"episode": r.episode, "frame_id": r.frame_id, "cc": r.cc, "kl": r.kl, "auc": r.auc, "flags": list(r.flags)}
                for r in self.results
            ],
        }

    def json_text(self) -> str:
        # NaN is emitted as null to keep the output strict JSON
        return json.dumps(_nan_to_none(self.to_json()), indent=2, sort_keys=True) + "\n"

    def save(self, prefix) -> tuple:
        prefix = Path(prefix)
        csv_path = prefix.with_suffix(".csv")
        json_path = prefix.with_suffix(".json")
        csv_path.write_text(self.csv_text(), encoding="utf-8")
        json_path.write_text(self.json_text(), encoding="utf-8")
        return csv_path, json_path

    @classmethod
    def from_json(cls, data: dict) -> "MetricReport":
        def val(x):
            return math.nan if x is None else float(x)

        results = [
            MetricResult(int(f["frame_id"]), val(f["cc"]), val(f["kl"]), val(f["auc"]), f["episode"], tuple(f["flags"]))
            for f in data["frames"]
        ]
        def stat(kind, d):
            return kind(*(val(d[f]) for f in kind._fields))

        return cls(
            results,
            data.get("provenance", {}),
            int(data.get("n_skipped", 0)),
            {k: stat(WelchResult, v) for k, v in data.get("significance", {}).items()},
            {k: stat(PearsonResult, v) for k, v in data.get("correlations", {}).items()},
        )

    @classmethod
    def load(cls, path) -> "MetricReport":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _nan_to_none(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_nan_to_none(v) for v in obj]
    return obj


def _lookup(source, member):
    if source is None:
        return None
    if callable(source) and not isinstance(source, Mapping):
        return source(member)
    return source.get(tuple(member))


def run_comparison(
    agent,
    reference,
    image_set: ImageSet,
    cfg: MetricConfig = DEFAULT_CONFIG,
    fixations=None,
    provenance: dict | None = None,
) -> MetricReport:
    """Per-frame CC/KL (and AUC where fixations exist) over an image set.

    ``agent``, ``reference`` and ``fixations`` are mappings keyed by
    ``(episode, frame_id)`` or callables taking that key. Members missing
    from either map source are skipped and counted.
    """
    results, skipped = [], 0
    for member in image_set.members:
        p = _lookup(agent, member)
        q = _lookup(reference, member)
        if p is None or q is None:
            log.warning("skipping %s/%s: map unavailable", *member)
            skipped += 1
            continue
        fix = _lookup(fixations, member)
        try:
            result = compare_maps(p, q, fix, cfg, frame_id=member[1], episode=member[0])
        except NoFixationError:
            result = compare_maps(p, q, None, cfg, frame_id=member[1], episode=member[0])
        results.append(result)
    prov = {"image_set": image_set.kind}
    prov.update(provenance or {})
    return MetricReport(results, prov, skipped)


def compare_reports(a: MetricReport, b: MetricReport, metric: str = "cc", label: str | None = None):
    """Welch test of per-frame ``metric`` values of ``a`` against ``b``.

    The result is also stored in ``a.significance`` under ``label``
    (default ``"<metric>_vs_<b's image set>"``).
    """
    result = welch_test(a.series(metric), b.series(metric))
    key = label or f"{metric}_vs_{b.provenance.get('image_set', 'other')}"
    a.significance[key] = result
    return result


def correlate_with_scores(reports: Sequence[MetricReport], scores: Sequence[float], metric: str = "cc"):
    """Pearson correlation between report means and game scores (e.g. across checkpoints)."""
    return pearson_r_p([r.mean(metric) for r in reports], scores)


# ==========================================================================
# map production over image sets


def _resolve(catalog: Mapping, member) -> FrameSource:
    try:
        return catalog[member[0]]
    except KeyError:
        raise DataError(f"unknown source {member[0]!r}") from None


def set_stacks(catalog: Mapping, image_set: ImageSet, size: tuple = WORKING_SIZE) -> Iterable:
    """Yield ``(member, FrameStack | None)``; unresolvable members yield ``None``."""
    for member in image_set.members:
        try:
            yield member, _resolve(catalog, member).stack(member[1], size)
        except DataError as exc:
            log.warning("cannot build stack for %s/%s: %s", member[0], member[1], exc)
            yield member, None


def extract_set_maps(net, catalog: Mapping, image_set: ImageSet, cfg=None, size: tuple = WORKING_SIZE) -> list:
    from .perturbsal import PerturbationConfig, extract_saliency

    cfg = cfg or PerturbationConfig()
    return [None if s is None else extract_saliency(net, s, cfg) for _, s in set_stacks(catalog, image_set, size)]


def predict_set_maps(gaze_net, catalog: Mapping, image_set: ImageSet, size: tuple = WORKING_SIZE) -> list:
    from .gazeref import predict_human_map

    return [None if s is None else predict_human_map(gaze_net, s) for _, s in set_stacks(catalog, image_set, size)]


def gaze_set_maps(catalog: Mapping, image_set: ImageSet, cfg: GazeMapConfig = GazeMapConfig()) -> list:
    """Ground-truth maps from recorded gaze; frames without gaze give ``None``."""
    out = []
    for member in image_set.members:
        rec = _resolve(catalog, member).gaze(member[1])
        out.append(None if rec is None else gaze_to_map(rec, cfg))
    return out


def baseline_set_maps(method: str, catalog: Mapping, image_set: ImageSet, size: tuple = WORKING_SIZE, itti_cfg=None, flow_cfg=None) -> list:
    from .baselines import FlowConfig, IttiKochConfig, itti_koch, motion_saliency

    out = []
    for member in image_set.members:
        src = _resolve(catalog, member)
        try:
            if method == "itti-koch":
                out.append(itti_koch(src.raw(member[1]), itti_cfg or IttiKochConfig(), size))
            elif method == "flow":
                prev = src.raw(src.previous_id(member[1]))
                out.append(motion_saliency(prev, src.raw(member[1]), flow_cfg or FlowConfig(), size))
            else:
                raise ParameterError(f"unknown baseline method {method!r}")
        except DataError as exc:
            log.warning("baseline unavailable for %s/%s: %s", member[0], member[1], exc)
            out.append(None)
    return out


def fixation_source(catalog: Mapping) -> Callable:
    def lookup(member):
        src = catalog.get(member[0])
        return None if src is None else src.gaze(member[1])

    return lookup
