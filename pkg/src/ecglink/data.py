"""Dataset ingestion, synthetic ECG identity generation, label encoding,
and run-artifact persistence."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, asdict
from datetime import datetime
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, DataError, IntegrityError
from .signal import EcgRecord

log = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1
MALFORMED_LINE_BUDGET = 0.01
WANDER_FREQ_HZ = 0.25

# Fixed bundle file names; the content hash covers exactly these.
BUNDLE_FILES = (
    "config.json",
    "manifest.json",
    "plan.json",
    "checkpoint.bin",
    "outcomes.csv",
    "report.json",
)
HASH_FILE = "hashes.json"


# ---------------------------------------------------------------------------
# JSON helpers (canonical form so reruns are byte-identical)
# ---------------------------------------------------------------------------


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# synthetic identities
# ---------------------------------------------------------------------------

_WAVE_NAMES = ("P", "Q", "R", "S", "T")


@dataclass
class SyntheticIdentitySpec:
    """Five-Gaussian beat morphology plus rate, jitter, and baseline wander."""

    heart_rate_bpm: float
    wave_amps: tuple[float, ...]     # P, Q, R, S, T
    wave_centers: tuple[float, ...]  # seconds from beat onset, strictly ordered
    wave_widths: tuple[float, ...]   # gaussian sigma, seconds
    hr_variability: float = 0.0      # per-beat period jitter sigma, seconds
    baseline_wander_amp: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.heart_rate_bpm <= 0:
            raise ConfigError(f"heart_rate_bpm must be positive, got {self.heart_rate_bpm}")
        if not (len(self.wave_amps) == len(self.wave_centers) == len(self.wave_widths) == 5):
            raise ConfigError("wave_amps/centers/widths must each have 5 entries (P,Q,R,S,T)")
        centers = list(self.wave_centers)
        if sorted(centers) != centers or len(set(centers)) != 5:
            raise ConfigError(f"wave centers must be strictly ordered, got {centers}")
        r_amp = self.wave_amps[2]
        if not all(r_amp > abs(a) for i, a in enumerate(self.wave_amps) if i != 2):
            raise ConfigError("R amplitude must dominate the other waves")
        if any(w <= 0 for w in self.wave_widths):
            raise ConfigError("wave widths must be positive")
        if self.hr_variability < 0 or self.baseline_wander_amp < 0:
            raise ConfigError("hr_variability and baseline_wander_amp must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("wave_amps", "wave_centers", "wave_widths"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticIdentitySpec":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(d) - {f for f in known}
        if unknown:
            raise ConfigError(f"unknown synthetic spec keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("wave_amps", "wave_centers", "wave_widths"):
            d[key] = tuple(d[key])
        return cls(**d)


def random_identity_spec(rng: np.random.Generator, seed: int = 0) -> SyntheticIdentitySpec:
    """Draw one physiologically shaped identity; distinct draws differ in
    rate and morphology enough to be separable by a classifier."""
    u = rng.uniform
    return SyntheticIdentitySpec(
        heart_rate_bpm=u(55.0, 95.0),
        wave_amps=(u(0.10, 0.22), -u(0.05, 0.16), u(0.9, 1.4),
                   -u(0.10, 0.32), u(0.20, 0.45)),
        wave_centers=(u(0.06, 0.10), u(0.195, 0.215), u(0.245, 0.255),
                      u(0.285, 0.305), u(0.40, 0.48)),
        wave_widths=(u(0.018, 0.032), u(0.006, 0.010), u(0.008, 0.014),
                     u(0.006, 0.012), u(0.035, 0.060)),
        hr_variability=u(0.004, 0.020),
        baseline_wander_amp=u(0.02, 0.06),
        seed=seed,
    )


def synthesize(spec: SyntheticIdentitySpec, duration_s: float, rate_hz: float,
               subject_id: str = "synthetic", dataset_id: str = "synthetic") -> EcgRecord:
    """Gaussian bumps at jittered beat onsets plus sinusoidal baseline wander.

    Pure function of (spec, duration, rate): byte-identical across runs.
    """
    period = 60.0 / spec.heart_rate_bpm
    if duration_s < 2 * period:
        raise ConfigError(
            f"duration {duration_s}s is shorter than two beats at {spec.heart_rate_bpm} bpm"
        )
    rng = np.random.default_rng(spec.seed)
    onsets = []
    t = 0.0
    while t < duration_s:
        onsets.append(t)
        step = period + rng.normal(0.0, spec.hr_variability)
        t += max(step, 0.25 * period)
    phase = rng.uniform(0.0, 2.0 * np.pi)

    n = int(round(duration_s * rate_hz))
    values = kernels.beat_train(
        np.asarray(onsets, dtype=np.float64),
        np.asarray(spec.wave_centers, dtype=np.float64),
        np.asarray(spec.wave_amps, dtype=np.float64),
        np.asarray(spec.wave_widths, dtype=np.float64),
        float(rate_hz), n,
    )
    if spec.baseline_wander_amp > 0:
        grid = np.arange(n, dtype=np.float64) / rate_hz
        values = values + spec.baseline_wander_amp * np.sin(
            2.0 * np.pi * WANDER_FREQ_HZ * grid + phase
        )
    return EcgRecord(subject_id, dataset_id, float(rate_hz), values)


# ---------------------------------------------------------------------------
# manifests and CSV ingestion
# ---------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    subject_id: str
    sampling_rate_hz: float
    condition: str = ""
    path: str | None = None
    synthetic: SyntheticIdentitySpec | None = None
    duration_s: float | None = None

    def __post_init__(self):
        if (self.path is None) == (self.synthetic is None):
            raise ConfigError(
                f"manifest entry {self.subject_id!r} needs exactly one of 'path' or 'synthetic'"
            )
        if self.synthetic is not None and self.duration_s is None:
            raise ConfigError(
                f"manifest entry {self.subject_id!r}: synthetic entries need 'duration_s'"
            )


@dataclass
class DatasetManifest:
    dataset_id: str
    entries: list[ManifestEntry] = field(default_factory=list)
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self):
        ids = [e.subject_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({s for s in ids if ids.count(s) > 1})
            raise ConfigError(f"duplicate subject_ids in manifest: {dupes}")

    def to_dict(self) -> dict:
        records = []
        for e in self.entries:
            rec = {"subject_id": e.subject_id, "sampling_rate_hz": e.sampling_rate_hz,
                   "condition": e.condition}
            if e.path is not None:
                rec["path"] = e.path
            else:
                rec["synthetic"] = e.synthetic.to_dict()
                rec["duration_s"] = e.duration_s
            records.append(rec)
        return {"schema_version": MANIFEST_SCHEMA_VERSION,
                "dataset_id": self.dataset_id, "records": records}


_ENTRY_KEYS = {"subject_id", "sampling_rate_hz", "condition", "path", "synthetic", "duration_s"}


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    raw = read_json(path)
    unknown = set(raw) - {"schema_version", "dataset_id", "records"}
    if unknown:
        raise ConfigError(f"unknown manifest keys: {sorted(unknown)}")
    if raw.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported manifest schema_version {raw.get('schema_version')!r}"
        )
    entries = []
    for rec in raw["records"]:
        unknown = set(rec) - _ENTRY_KEYS
        if unknown:
            raise ConfigError(f"unknown manifest record keys: {sorted(unknown)}")
        rec = dict(rec)
        if "synthetic" in rec:
            rec["synthetic"] = SyntheticIdentitySpec.from_dict(rec["synthetic"])
        entries.append(ManifestEntry(**rec))
    return DatasetManifest(raw["dataset_id"], entries, base_dir=path.parent)


def save_manifest(manifest: DatasetManifest, path) -> None:
    write_json(manifest.to_dict(), path)


def ingest_csv(path, entry: ManifestEntry, dataset_id: str) -> EcgRecord:
    """Read one- or two-column numeric CSV; the sampling rate comes from the
    manifest, never from the file. Two-column files carry (time, amplitude);
    the time column is dropped after a monotonicity check."""
    path = Path(path)
    values = []
    times = []
    bad_lines = []
    n_cols = None
    total = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            total += 1
            parts = text.split(",")
            try:
                nums = [float(p) for p in parts]
            except ValueError:
                bad_lines.append(lineno)
                continue
            if n_cols is None:
                if len(nums) not in (1, 2):
                    raise DataError(
                        f"{path}: expected 1 or 2 columns, got {len(nums)} on line {lineno}"
                    )
                n_cols = len(nums)
            if len(nums) != n_cols:
                bad_lines.append(lineno)
                continue
            if n_cols == 2:
                times.append(nums[0])
                values.append(nums[1])
            else:
                values.append(nums[0])
    if total == 0 or not values:
        raise DataError(f"{path}: no data lines")
    if len(bad_lines) > MALFORMED_LINE_BUDGET * total:
        shown = ", ".join(str(n) for n in bad_lines[:10])
        raise DataError(
            f"{path}: {len(bad_lines)} malformed lines of {total} "
            f"(> {MALFORMED_LINE_BUDGET:.0%} budget); first lines: {shown}"
        )
    if bad_lines:
        log.warning("%s: dropped %d malformed lines", path, len(bad_lines))
    if times and np.any(np.diff(times) <= 0):
        raise DataError(f"{path}: time column is not strictly increasing")
    return EcgRecord(entry.subject_id, dataset_id, entry.sampling_rate_hz,
                     np.asarray(values, dtype=np.float64))


def export_csv(record: EcgRecord, path) -> None:
    """One amplitude per line at full float precision (round-trip exact)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# subject_id={record.subject_id} sampling_rate_hz={record.sampling_rate_hz!r}\n")
        for v in record.samples:
            fh.write(f"{float(v)!r}\n")


def load_record(manifest: DatasetManifest, entry: ManifestEntry) -> EcgRecord:
    if entry.path is not None:
        return ingest_csv(manifest.base_dir / entry.path, entry, manifest.dataset_id)
    return synthesize(entry.synthetic, entry.duration_s, entry.sampling_rate_hz,
                      subject_id=entry.subject_id, dataset_id=manifest.dataset_id)


def load_records(manifest: DatasetManifest) -> list[EcgRecord]:
    return [load_record(manifest, e) for e in manifest.entries]


# ---------------------------------------------------------------------------
# label encoding
# ---------------------------------------------------------------------------


class IdentityLabelMap:
    """Bijection between subject_id strings and dense class indices.

    Ordering is (dataset_id, subject_id)-sorted, so re-ingestion of the same
    manifests always yields the same map.
    """

    def __init__(self, subjects: list[str]):
        self._subjects = list(subjects)
        self._index = {s: i for i, s in enumerate(self._subjects)}
        if len(self._index) != len(self._subjects):
            raise DataError("duplicate subjects in label map")

    def __len__(self) -> int:
        return len(self._subjects)

    def index_of(self, subject_id: str) -> int:
        return self._index[subject_id]

    def subject_of(self, index: int) -> str:
        return self._subjects[index]

    @property
    def subjects(self) -> list[str]:
        return list(self._subjects)


def encode_labels(manifests: list[DatasetManifest]) -> IdentityLabelMap:
    pairs = []
    seen: dict[str, str] = {}
    for m in manifests:
        for e in m.entries:
            if e.subject_id in seen:
                raise DataError(
                    f"subject_id {e.subject_id!r} appears in datasets "
                    f"{seen[e.subject_id]!r} and {m.dataset_id!r}; no silent merging"
                )
            seen[e.subject_id] = m.dataset_id
            pairs.append((m.dataset_id, e.subject_id))
    if not pairs:
        raise ConfigError("no subjects to encode")
    pairs.sort()
    return IdentityLabelMap([s for _, s in pairs])


# ---------------------------------------------------------------------------
# run bundles
# ---------------------------------------------------------------------------


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def bundle_hash_of(file_hashes: dict[str, str]) -> str:
    lines = "".join(f"{name}:{file_hashes[name]}\n" for name in sorted(file_hashes))
    return hashlib.sha256(lines.encode("utf-8")).hexdigest()


def persist_run(out_dir, *, config: dict, manifest: dict, plan: dict,
                checkpoint_src: Path, outcomes_csv: str, report: dict,
                bundle_name: str | None = None) -> Path:
    """Write a run bundle with fixed file names plus a content hash over all
    of them. Identical inputs reproduce identical hashes."""
    out_dir = Path(out_dir)
    if bundle_name is None:
        bundle_name = "run-" + datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    bundle = out_dir / bundle_name
    bundle.mkdir(parents=True, exist_ok=False)
    try:
        write_json(config, bundle / "config.json")
        write_json(manifest, bundle / "manifest.json")
        write_json(plan, bundle / "plan.json")
        data = Path(checkpoint_src).read_bytes()
        (bundle / "checkpoint.bin").write_bytes(data)
        (bundle / "outcomes.csv").write_text(outcomes_csv, encoding="utf-8")
        write_json(report, bundle / "report.json")
        hashes = {name: _sha256_file(bundle / name) for name in BUNDLE_FILES}
        write_json({"files": hashes, "bundle_hash": bundle_hash_of(hashes)},
                   bundle / HASH_FILE)
    except Exception:
        (bundle / "INCOMPLETE").touch()
        raise
    return bundle


def verify_bundle(bundle_dir) -> dict:
    """Check presence and hashes of every bundle file; return the hash record."""
    bundle = Path(bundle_dir)
    if (bundle / "INCOMPLETE").exists():
        raise IntegrityError(f"{bundle}: bundle is marked incomplete")
    missing = [name for name in BUNDLE_FILES + (HASH_FILE,)
               if not (bundle / name).exists()]
    if missing:
        raise IntegrityError(f"{bundle}: missing bundle files: {missing}")
    recorded = read_json(bundle / HASH_FILE)
    for name in BUNDLE_FILES:
        actual = _sha256_file(bundle / name)
        if actual != recorded["files"].get(name):
            raise IntegrityError(f"{bundle}: hash mismatch for {name}")
    if bundle_hash_of(recorded["files"]) != recorded["bundle_hash"]:
        raise IntegrityError(f"{bundle}: bundle_hash does not match file hashes")
    return recorded
