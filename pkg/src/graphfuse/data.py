"""Synthetic multi-stream corpora and the on-disk corpus format.

On disk a corpus is a directory holding ``manifest.json`` plus one delimited
text file per stream per utterance and one label file per utterance.  Each
delimited file starts with a line holding the column count, followed by one
comma-separated row per frame written with 17 significant digits, so values
round-trip exactly.

The generator plants signal so that fusion matters: every stream sees a noisy
copy of a shared emotion walk, while each target additionally depends on the
product (or sum) of two private walks, each visible in only one stream.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .config import STREAMS, TARGETS
from .errors import ConfigError, DataError
from .head_loss import ccc

MANIFEST_VERSION = 1

DEFAULT_WIDTHS = {"egemaps": 88, "mfcc": 13, "boaw_e": 100, "boaw_m": 100, "deep_spectrum": 4096}

# streams whose private walks enter each target
INTERACTION_PAIRS = {
    "arousal": ("egemaps", "deep_spectrum"),
    "valence": ("mfcc", "boaw_e"),
    "liking": ("boaw_m", "egemaps"),
}

INTERACTION_FORMS = ("product", "sum", "mixed")

N_LATENT = len(TARGETS) + 2  # shared target walks, private walk, nuisance walk


@dataclass
class SignalSpec:
    n_train: int = 64
    n_devel: int = 16
    n_frames: int = 20
    cultures: tuple[str, ...] = ("DE", "HU")
    noise: float = 0.3            # per-stream noise on the shared emotion walks
    feature_noise: float = 0.05   # isotropic noise on the observed features
    interaction: float = 1.0      # weight of the two-stream term in each label
    interaction_form: str = "mixed"  # "product": z_a*z_b, "sum": z_a+z_b, "mixed": both
    smoothness: float = 0.8       # AR(1) coefficient of every latent walk
    widths: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_WIDTHS))
    seed: int = 0

    def __post_init__(self):
        self.cultures = tuple(self.cultures)
        self.validate()

    def validate(self) -> None:
        if self.n_train < 1 or self.n_devel < 1:
            raise ConfigError("n_train and n_devel must be positive")
        if self.n_frames < 2:
            raise ConfigError("n_frames must be at least 2")
        if not self.cultures:
            raise ConfigError("cultures must be nonempty")
        if self.noise < 0 or self.feature_noise < 0 or self.interaction < 0:
            raise ConfigError("noise levels and interaction strength must be >= 0")
        if self.interaction_form not in INTERACTION_FORMS:
            raise ConfigError(f"interaction_form must be one of {INTERACTION_FORMS}")
        if not 0.0 <= self.smoothness < 1.0:
            raise ConfigError("smoothness must lie in [0, 1)")
        if set(self.widths) != set(STREAMS):
            raise ConfigError(f"widths must name exactly {STREAMS}")
        if any(int(w) < 1 for w in self.widths.values()):
            raise ConfigError("stream widths must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "SignalSpec":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown signal spec keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cultures"] = list(self.cultures)
        d["widths"] = {s: int(self.widths[s]) for s in STREAMS}
        return d


@dataclass
class FeatureBundle:
    utterance_id: str
    culture: str
    split: str
    streams: dict[str, np.ndarray]
    labels: np.ndarray  # (N, 3) arousal, valence, liking

    @property
    def n_frames(self) -> int:
        return self.labels.shape[0]

    def label(self, target: str) -> np.ndarray:
        return self.labels[:, TARGETS.index(target)]


@dataclass
class UtteranceRecord:
    id: str
    culture: str
    split: str
    streams: dict[str, str]
    labels: str


@dataclass
class CorpusManifest:
    root: Path | None
    streams: dict[str, int]
    utterances: list[UtteranceRecord]
    generator: dict | None = None

    def record(self, utterance_id: str) -> UtteranceRecord:
        for rec in self.utterances:
            if rec.id == utterance_id:
                return rec
        raise DataError(f"utterance {utterance_id!r} not in manifest")

    def to_dict(self) -> dict:
        return {
            "schema_version": MANIFEST_VERSION,
            "streams": {s: int(self.streams[s]) for s in STREAMS},
            "targets": list(TARGETS),
            "utterances": [asdict(u) for u in self.utterances],
            "generator": self.generator,
        }


@dataclass
class Corpus:
    manifest: CorpusManifest
    bundles: dict[str, FeatureBundle]

    def select(self, ids: Iterable[str]) -> list[FeatureBundle]:
        return [self.bundles[i] for i in ids]


# -- generation -------------------------------------------------------------

def _walks(rng: np.random.Generator, n_frames: int, count: int, rho: float) -> np.ndarray:
    """``count`` stationary unit-variance AR(1) walks, shape (n_frames, count)."""
    out = np.empty((n_frames, count))
    out[0] = rng.standard_normal(count)
    innov = np.sqrt(1.0 - rho * rho)
    for t in range(1, n_frames):
        out[t] = rho * out[t - 1] + innov * rng.standard_normal(count)
    return out


def _mixing(rng: np.random.Generator, widths: Mapping[str, int]) -> dict[str, np.ndarray]:
    return {s: rng.standard_normal((N_LATENT, int(widths[s]))) / np.sqrt(N_LATENT) for s in STREAMS}


def _utterance(rng, spec: SignalSpec, mixing) -> tuple[dict, np.ndarray, dict]:
    N = spec.n_frames
    shared = _walks(rng, N, len(TARGETS), spec.smoothness)
    private = _walks(rng, N, len(STREAMS), spec.smoothness)
    nuisance = _walks(rng, N, len(STREAMS), spec.smoothness)
    lam = spec.interaction
    labels = np.empty((N, len(TARGETS)))
    for k, target in enumerate(TARGETS):
        a, b = (STREAMS.index(s) for s in INTERACTION_PAIRS[target])
        if spec.interaction_form == "product":
            # unit-variance product of independent unit-variance walks
            raw = (shared[:, k] + lam * private[:, a] * private[:, b]) / np.sqrt(1.0 + lam * lam)
        elif spec.interaction_form == "sum":
            raw = (shared[:, k] + lam * (private[:, a] + private[:, b])) / np.sqrt(1.0 + 2.0 * lam * lam)
        else:
            za, zb = private[:, a], private[:, b]
            raw = (shared[:, k] + lam * (za + zb + za * zb)) / np.sqrt(1.0 + 3.0 * lam * lam)
        labels[:, k] = raw / 3.0
    labels = np.clip(labels, -1.0, 1.0)
    streams, latents = {}, {}
    for f, name in enumerate(STREAMS):
        view = shared + spec.noise * rng.standard_normal(shared.shape)
        lat = np.column_stack([view, private[:, f], nuisance[:, f]])
        feats = lat @ mixing[name]
        if spec.feature_noise:
            feats = feats + spec.feature_noise * rng.standard_normal(feats.shape)
        streams[name] = feats
        latents[name] = lat
    return streams, labels, latents


def _quadratic(x: np.ndarray) -> np.ndarray:
    """Columns of x plus every pairwise product (squares included) and an intercept."""
    iu, ju = np.triu_indices(x.shape[1])
    return np.column_stack([x, x[:, iu] * x[:, ju], np.ones(len(x))])


def _probe(train_x, train_y, test_x) -> np.ndarray:
    coef, *_ = np.linalg.lstsq(_quadratic(train_x), train_y, rcond=None)
    return _quadratic(test_x) @ coef


def probe_report(bundles: Iterable[FeatureBundle], mixing: Mapping[str, np.ndarray]) -> dict:
    """Oracle quadratic probes on latents recovered through the known mixing.

    Fitted on train frames, scored by pooled CCC on devel frames: the best
    single stream per target versus the target's two interacting streams.
    """
    bundles = list(bundles)
    unmix = {s: np.linalg.pinv(mixing[s]) for s in STREAMS}

    def gather(split):
        sel = [b for b in bundles if b.split == split]
        lat = {s: np.concatenate([b.streams[s] @ unmix[s] for b in sel]) for s in STREAMS}
        return lat, np.concatenate([b.labels for b in sel])

    tr_lat, tr_y = gather("train")
    dv_lat, dv_y = gather("devel")
    report = {}
    for k, target in enumerate(TARGETS):
        singles = {s: ccc(_probe(tr_lat[s], tr_y[:, k], dv_lat[s]), dv_y[:, k]).ccc
                   for s in STREAMS}
        a, b = INTERACTION_PAIRS[target]
        pair = ccc(_probe(np.column_stack([tr_lat[a], tr_lat[b]]), tr_y[:, k],
                          np.column_stack([dv_lat[a], dv_lat[b]])), dv_y[:, k]).ccc
        best = max(singles.values())
        report[target] = {"single": singles, "best_single": best, "pair": pair,
                          "gap": pair - best}
    return report


def generate_corpus(spec: SignalSpec, out_dir=None) -> Corpus:
    """Build a synthetic corpus in memory; write it under ``out_dir`` when given."""
    spec.validate()
    root = np.random.SeedSequence(spec.seed)
    mix_seq, data_seq = root.spawn(2)
    mixing = _mixing(np.random.default_rng(mix_seq), spec.widths)
    records, bundles = [], {}
    plan = [("train", i) for i in range(spec.n_train)] + [("devel", i) for i in range(spec.n_devel)]
    utt_seqs = data_seq.spawn(len(plan))
    for (split_name, i), seq in zip(plan, utt_seqs):
        culture = spec.cultures[i % len(spec.cultures)]
        uid = f"{culture}_{split_name}_{i:03d}"
        streams, labels, _ = _utterance(np.random.default_rng(seq), spec, mixing)
        bundles[uid] = FeatureBundle(uid, culture, split_name, streams, labels)
        records.append(UtteranceRecord(uid, culture, split_name,
                                       {s: f"{uid}/{s}.csv" for s in STREAMS},
                                       f"{uid}/labels.csv"))
    probes = probe_report(bundles.values(), mixing)
    generator = {"spec": spec.to_dict(), "probe": probes,
                 "probe_gap_ok": bool(all(p["gap"] >= 0.05 for p in probes.values()))}
    manifest = CorpusManifest(None, {s: int(spec.widths[s]) for s in STREAMS}, records, generator)
    corpus = Corpus(manifest, bundles)
    if out_dir is not None:
        write_corpus(corpus, out_dir)
    return corpus


# -- file format ------------------------------------------------------------

def write_matrix(path: Path, values: np.ndarray) -> None:
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(f"{values.shape[1]}\n")
        np.savetxt(fh, values, fmt="%.17g", delimiter=",")


def read_matrix(path: Path, expected_cols: int | None = None) -> np.ndarray:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError as exc:
        raise DataError(f"missing file {path}") from exc
    if not lines:
        raise DataError(f"{path}: empty file")
    try:
        ncols = int(lines[0].strip())
    except ValueError as exc:
        raise DataError(f"{path}: first line must be the column count") from exc
    if expected_cols is not None and ncols != expected_cols:
        raise DataError(f"{path}: declares {ncols} columns, manifest expects {expected_cols}")
    rows = [ln for ln in lines[1:] if ln.strip()]
    if not rows:
        raise DataError(f"{path}: no frames")
    out = np.empty((len(rows), ncols))
    for r, line in enumerate(rows, start=1):
        parts = line.split(",")
        if len(parts) != ncols:
            raise DataError(f"{path}: row {r} has {len(parts)} values, expected {ncols}")
        try:
            out[r - 1] = [float(p) for p in parts]
        except ValueError as exc:
            raise DataError(f"{path}: row {r} has a non-numeric value") from exc
        if not np.all(np.isfinite(out[r - 1])):
            raise DataError(f"{path}: row {r} contains NaN or Inf")
    return out


def write_corpus(corpus: Corpus, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec in corpus.manifest.utterances:
        b = corpus.bundles[rec.id]
        for s in STREAMS:
            write_matrix(out / rec.streams[s], b.streams[s])
        write_matrix(out / rec.labels, b.labels)
    path = out / "manifest.json"
    path.write_text(json.dumps(corpus.manifest.to_dict(), indent=1) + "\n")
    corpus.manifest.root = out
    return path


def load_manifest(path) -> CorpusManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise DataError(f"manifest not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    if data.get("schema_version") != MANIFEST_VERSION:
        raise ConfigError(f"{path}: unsupported manifest schema_version {data.get('schema_version')}")
    streams = data.get("streams", {})
    unknown = sorted(set(streams) - set(STREAMS))
    if unknown:
        raise ConfigError(f"{path}: unknown stream names {unknown}")
    missing = sorted(set(STREAMS) - set(streams))
    if missing:
        raise ConfigError(f"{path}: streams {missing} not declared")
    records, seen = [], set()
    for u in data.get("utterances", []):
        rec = UtteranceRecord(**u)
        if rec.id in seen:
            raise DataError(f"{path}: duplicate utterance id {rec.id!r}")
        if rec.split not in ("train", "devel"):
            raise DataError(f"{path}: utterance {rec.id!r} has split {rec.split!r}")
        bad = sorted(set(rec.streams) - set(STREAMS))
        if bad:
            raise ConfigError(f"{path}: utterance {rec.id!r} names unknown streams {bad}")
        seen.add(rec.id)
        records.append(rec)
    return CorpusManifest(path.parent, {s: int(streams[s]) for s in STREAMS}, records,
                          data.get("generator"))


def load_bundle(manifest: CorpusManifest, utterance_id: str) -> FeatureBundle:
    rec = manifest.record(utterance_id)
    root = manifest.root or Path(".")
    missing = [s for s in STREAMS if s not in rec.streams]
    if missing:
        raise DataError(f"utterance {utterance_id!r} lacks streams {missing}")
    streams = {s: read_matrix(root / rec.streams[s], manifest.streams[s]) for s in STREAMS}
    labels = read_matrix(root / rec.labels, len(TARGETS))
    counts = {s: v.shape[0] for s, v in streams.items()}
    counts["labels"] = labels.shape[0]
    if len(set(counts.values())) != 1:
        raise DataError(f"utterance {utterance_id!r}: frame counts differ {counts}")
    return FeatureBundle(rec.id, rec.culture, rec.split, streams, labels)


def load_corpus(manifest_path, ids: Iterable[str] | None = None) -> Corpus:
    manifest = load_manifest(manifest_path)
    wanted = [r.id for r in manifest.utterances] if ids is None else list(ids)
    return Corpus(manifest, {i: load_bundle(manifest, i) for i in wanted})


def split(manifest: CorpusManifest, cultures: Iterable[str]) -> tuple[list[str], list[str]]:
    """Train and devel utterance ids restricted to the selected cultures."""
    chosen = set(cultures)
    if not chosen:
        raise DataError("culture selection is empty")
    train = [r.id for r in manifest.utterances if r.culture in chosen and r.split == "train"]
    devel = [r.id for r in manifest.utterances if r.culture in chosen and r.split == "devel"]
    if not train or not devel:
        raise DataError(f"cultures {sorted(chosen)} give {len(train)} train / {len(devel)} devel utterances")
    return train, devel
