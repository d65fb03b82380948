"""Dataset generation from posed frame sequences.

Three stages: thin each trajectory into database frames by symmetric voxel
overlap against the last kept frame, label positive / negative pairs by
asymmetric overlap, and pick per-scene keyframes as a greedy dominating set
of the positive-pair graph. The result serializes as a JSON manifest
(schema "ipr-manifest/1") that round-trips bit-identically.

Positives follow the directed, query-relative overlap definition: d is a
positive for q when overlap(q, d) > t_p, regardless of the reverse
direction. Cross-scene pairs are negative by construction. Same-scene pairs
in the band (t_n, t_p] stay unlabeled. Negatives are capped by seeded
sampling to keep manifests linear in size.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataIOError, InvalidArgumentError, ManifestValidationError
from .geometry import PointCloud, Pose, transform, voxelize
from .pcio import read_pcb, write_pcb

MANIFEST_SCHEMA = "ipr-manifest/1"
SPLITS = ("train", "val", "test")
DEFAULT_NEGATIVE_CAP = 100


@dataclass
class FrameRecord:
    frame_id: str
    scene_id: str
    cloud_path: str
    pose: Pose
    semantic_path: str | None = None


@dataclass
class PairLabels:
    positives: tuple = ()
    negatives: tuple = ()

    def __post_init__(self):
        self.positives = tuple(self.positives)
        self.negatives = tuple(self.negatives)


@dataclass(frozen=True)
class Thresholds:
    t_c: float = 0.5
    t_p: float = 0.3
    t_n: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.t_c <= 1.0:
            raise InvalidArgumentError(f"t_c must be in (0, 1], got {self.t_c}")
        if not 0.0 <= self.t_n < self.t_p <= 1.0:
            raise InvalidArgumentError(
                f"need 0 <= t_n < t_p <= 1, got t_n={self.t_n} t_p={self.t_p}")


@dataclass
class SceneRecord:
    scene_id: str
    frames: list
    labels: dict             # frame_id -> PairLabels
    keyframes: list = field(default_factory=list)
    unreachable: list = field(default_factory=list)


@dataclass
class DatasetManifest:
    scenes: list
    split: str = "train"
    config: dict = field(default_factory=dict)


def load_frame_cloud(frame: FrameRecord, base_dir=None,
                     cache: dict | None = None) -> PointCloud:
    """Read a frame's cloud; errors name the frame. ``cache`` maps resolved
    paths to already-loaded clouds."""
    path = Path(frame.cloud_path)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    key = str(path)
    if cache is not None and key in cache:
        return cache[key]
    try:
        cloud = read_pcb(path)
    except (OSError, DataIOError) as exc:
        raise DataIOError(f"frame {frame.frame_id}: {exc}") from exc
    if cache is not None:
        cache[key] = cloud
    return cloud


def select_database_frames(sequence, t_c: float, voxel_size: float,
                           base_dir=None, cache: dict | None = None) -> list:
    """Thin a time-ordered frame sequence: the first frame is always kept
    and a frame is kept exactly when its symmetric overlap with the last
    kept frame drops below t_c."""
    sequence = list(sequence)
    if not sequence:
        raise InvalidArgumentError("sequence must contain at least one frame")
    cache = {} if cache is None else cache
    kept = [sequence[0]]
    last_vox = _world_voxels(sequence[0], voxel_size, base_dir, cache)
    for frame in sequence[1:]:
        vox = _world_voxels(frame, voxel_size, base_dir, cache)
        iou = len(last_vox & vox) / len(last_vox | vox)
        if iou < t_c:
            kept.append(frame)
            last_vox = vox
    return kept


def _world_voxels(frame: FrameRecord, voxel_size: float, base_dir, cache) -> frozenset:
    cloud = load_frame_cloud(frame, base_dir, cache)
    return voxelize(transform(cloud, frame.pose), voxel_size).occupied


def label_pairs(scenes: dict, thresholds: Thresholds, voxel_size: float,
                base_dir=None, negative_cap: int = DEFAULT_NEGATIVE_CAP,
                negative_seed: int = 0, cache: dict | None = None) -> dict:
    """Label every database frame against every other.

    ``scenes`` maps scene_id -> list of database FrameRecords. Same-scene
    candidates are positive above t_p, negative at or below t_n, unlabeled
    in between; cross-scene candidates are negative without any overlap
    computation. Frame ids must be globally unique. Negatives are sampled
    down to ``negative_cap`` per frame with the given seed.
    """
    cache = {} if cache is None else cache
    voxels = {}
    scene_of = {}
    for scene_id in sorted(scenes):
        for frame in scenes[scene_id]:
            if frame.frame_id in scene_of:
                raise InvalidArgumentError(f"duplicate frame_id {frame.frame_id}")
            scene_of[frame.frame_id] = scene_id
            voxels[frame.frame_id] = _world_voxels(frame, voxel_size, base_dir, cache)

    all_ids = sorted(scene_of)
    rng = np.random.default_rng(negative_seed)
    labels = {}
    for q in all_ids:
        vq = voxels[q]
        positives = []
        negatives = []
        for d in all_ids:
            if d == q:
                continue
            if scene_of[d] != scene_of[q]:
                negatives.append(d)
                continue
            overlap = len(vq & voxels[d]) / len(vq)
            if overlap > thresholds.t_p:
                positives.append(d)
            elif overlap <= thresholds.t_n:
                negatives.append(d)
        if len(negatives) > negative_cap:
            pick = rng.choice(len(negatives), size=negative_cap, replace=False)
            negatives = [negatives[i] for i in sorted(pick)]
        labels[q] = PairLabels(tuple(positives), tuple(negatives))
    return labels


def extract_keyframes(frames, labels: dict) -> list:
    """Greedy dominating set of the scene's undirected positive-pair graph.

    Repeatedly takes the vertex covering the most still-uncovered vertices
    (itself plus neighbors), breaking ties by frame_id order. Isolated
    vertices end up selecting themselves.
    """
    ids = sorted(f.frame_id for f in frames)
    id_set = set(ids)
    adjacency = {i: set() for i in ids}
    for q in ids:
        for p in labels.get(q, PairLabels()).positives:
            if p in id_set:
                adjacency[q].add(p)
                adjacency[p].add(q)

    uncovered = set(ids)
    keyframes = []
    while uncovered:
        best_id = None
        best_gain = 0
        for v in ids:
            gain = len(({v} | adjacency[v]) & uncovered)
            if gain > best_gain:
                best_id, best_gain = v, gain
        keyframes.append(best_id)
        uncovered -= {best_id} | adjacency[best_id]
    return keyframes


def build_manifest(scene_sequences: dict, thresholds: Thresholds, voxel_size: float,
                   split: str = "train", base_dir=None,
                   negative_cap: int = DEFAULT_NEGATIVE_CAP,
                   negative_seed: int = 0, extra_config: dict | None = None
                   ) -> DatasetManifest:
    """Run the full generation pipeline over raw per-scene sequences."""
    cache = {}
    databases = {
        scene_id: select_database_frames(seq, thresholds.t_c, voxel_size,
                                         base_dir, cache)
        for scene_id, seq in sorted(scene_sequences.items())
    }
    labels = label_pairs(databases, thresholds, voxel_size, base_dir,
                         negative_cap, negative_seed, cache)
    scenes = []
    for scene_id in sorted(databases):
        frames = databases[scene_id]
        scene_labels = {f.frame_id: labels[f.frame_id] for f in frames}
        keyframes = extract_keyframes(frames, scene_labels)
        key_set = set(keyframes)
        unreachable = sorted(
            f.frame_id for f in frames
            if f.frame_id not in key_set
            and not key_set.intersection(scene_labels[f.frame_id].positives))
        scenes.append(SceneRecord(scene_id, frames, scene_labels, keyframes,
                                  unreachable))
    config = {
        "t_c": thresholds.t_c,
        "t_p": thresholds.t_p,
        "t_n": thresholds.t_n,
        "voxel_size": voxel_size,
        "negative_cap": negative_cap,
        "negative_seed": negative_seed,
    }
    if extra_config:
        config.update(extra_config)
    return DatasetManifest(scenes=scenes, split=split, config=config)


def validate_manifest(manifest: DatasetManifest) -> list:
    """Collect invariant violations; empty list means valid."""
    violations = []
    if manifest.split not in SPLITS:
        violations.append(f"split must be one of {SPLITS}, got {manifest.split!r}")
    if not manifest.scenes:
        violations.append("manifest has no scenes")
    seen = {}
    for scene in manifest.scenes:
        if not scene.frames:
            violations.append(f"scene {scene.scene_id} has no frames")
        for frame in scene.frames:
            if frame.frame_id in seen:
                violations.append(f"duplicate frame_id {frame.frame_id}")
            seen[frame.frame_id] = scene.scene_id
    for scene in manifest.scenes:
        scene_ids = {f.frame_id for f in scene.frames}
        key_set = set(scene.keyframes)
        for missing in key_set - scene_ids:
            violations.append(f"keyframe {missing} not in scene {scene.scene_id}")
        for frame_id, labels in scene.labels.items():
            if frame_id not in scene_ids:
                violations.append(f"labels reference unknown frame {frame_id}")
                continue
            if frame_id in labels.positives:
                violations.append(f"{frame_id} lists itself as positive")
            overlap_sets = set(labels.positives) & set(labels.negatives)
            for both in sorted(overlap_sets):
                violations.append(f"{frame_id}: {both} is both positive and negative")
            for p in labels.positives:
                if seen.get(p) != scene.scene_id:
                    violations.append(
                        f"{frame_id}: positive {p} is not a same-scene frame")
            for n in labels.negatives:
                if n not in seen:
                    violations.append(f"{frame_id}: negative {n} does not resolve")
        if key_set:
            unreachable = set(scene.unreachable)
            for frame in scene.frames:
                fid = frame.frame_id
                if fid in key_set or fid in unreachable:
                    continue
                positives = scene.labels.get(fid, PairLabels()).positives
                if not key_set.intersection(positives):
                    violations.append(
                        f"{fid} has no keyframe positive and is not marked unreachable")
    return violations


def manifest_to_dict(manifest: DatasetManifest) -> dict:
    return {
        "schema": MANIFEST_SCHEMA,
        "split": manifest.split,
        "config": manifest.config,
        "scenes": [
            {
                "scene_id": s.scene_id,
                "frames": [
                    {
                        "frame_id": f.frame_id,
                        "cloud": f.cloud_path,
                        "pose": {
                            "rotation": f.pose.rotation.tolist(),
                            "translation": f.pose.translation.tolist(),
                        },
                        "semantic": f.semantic_path,
                    }
                    for f in s.frames
                ],
                "labels": {
                    fid: {"positives": list(lab.positives),
                          "negatives": list(lab.negatives)}
                    for fid, lab in sorted(s.labels.items())
                },
                "keyframes": list(s.keyframes),
                "unreachable": list(s.unreachable),
            }
            for s in manifest.scenes
        ],
    }


def manifest_from_dict(raw: dict) -> DatasetManifest:
    if raw.get("schema") != MANIFEST_SCHEMA:
        raise DataIOError(f"unsupported manifest schema {raw.get('schema')!r}")
    scenes = []
    for s in raw["scenes"]:
        frames = [
            FrameRecord(
                frame_id=f["frame_id"],
                scene_id=s["scene_id"],
                cloud_path=f["cloud"],
                pose=Pose(np.array(f["pose"]["rotation"]),
                          np.array(f["pose"]["translation"])),
                semantic_path=f.get("semantic"),
            )
            for f in s["frames"]
        ]
        labels = {fid: PairLabels(tuple(lab["positives"]), tuple(lab["negatives"]))
                  for fid, lab in s["labels"].items()}
        scenes.append(SceneRecord(s["scene_id"], frames, labels,
                                  list(s["keyframes"]), list(s.get("unreachable", []))))
    return DatasetManifest(scenes=scenes, split=raw["split"], config=raw["config"])


def write_manifest(manifest: DatasetManifest, path) -> None:
    violations = validate_manifest(manifest)
    if violations:
        raise ManifestValidationError(violations)
    payload = json.dumps(manifest_to_dict(manifest), sort_keys=True, indent=1)
    Path(path).write_text(payload + "\n", encoding="utf-8")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataIOError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataIOError(f"manifest {path} is not valid JSON: {exc}") from exc
    manifest = manifest_from_dict(raw)
    violations = validate_manifest(manifest)
    if violations:
        raise ManifestValidationError(violations)
    return manifest


# --- raw scene packs (gen-dataset input layout) ---
#
# scenes_dir/<scene_id>/frames.json lists frames in capture order with
# their cloud file names and poses; clouds are PCB1 files alongside it.

def write_scene_pack(scenes_dir, scene_id: str, frames) -> None:
    """Write synthetic frames (objects with frame_id / cloud / pose) as a
    scene directory consumable by read_scene_sequences."""
    scene_dir = Path(scenes_dir) / scene_id
    scene_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for frame in frames:
        cloud_name = f"{frame.frame_id}.pcb"
        write_pcb(frame.cloud, scene_dir / cloud_name)
        entries.append({
            "frame_id": frame.frame_id,
            "cloud": cloud_name,
            "pose": {"rotation": frame.pose.rotation.tolist(),
                     "translation": frame.pose.translation.tolist()},
            "semantic": None,
        })
    payload = json.dumps({"scene_id": scene_id, "frames": entries},
                         sort_keys=True, indent=1)
    (scene_dir / "frames.json").write_text(payload + "\n", encoding="utf-8")


def read_scene_sequences(scenes_dir) -> dict:
    """Load every scene directory under scenes_dir into time-ordered
    FrameRecord lists; cloud paths stay relative to scenes_dir."""
    scenes_dir = Path(scenes_dir)
    if not scenes_dir.is_dir():
        raise DataIOError(f"scenes directory {scenes_dir} does not exist")
    sequences = {}
    for frames_json in sorted(scenes_dir.glob("*/frames.json")):
        try:
            raw = json.loads(frames_json.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataIOError(f"{frames_json}: invalid JSON: {exc}") from exc
        scene_id = raw["scene_id"]
        sequences[scene_id] = [
            FrameRecord(
                frame_id=f["frame_id"],
                scene_id=scene_id,
                cloud_path=str(Path(frames_json.parent.name) / f["cloud"]),
                pose=Pose(np.array(f["pose"]["rotation"]),
                          np.array(f["pose"]["translation"])),
                semantic_path=f.get("semantic"),
            )
            for f in raw["frames"]
        ]
    if not sequences:
        raise DataIOError(f"no scenes found under {scenes_dir}")
    return sequences
