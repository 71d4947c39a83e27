"""File formats and persistence: dataset manifests, panel files, ground-truth
archives, posterior draw files, and run configs.

Panels are plain delimited text (D rows x T columns, no header, full decimal
precision) for diffability. Posterior draws go to a flat binary file with a
self-describing header (magic, version, JSON-encoded shapes) because draw
volume at realistic dimensions makes text impractical; a JSON metadata
sidecar carries the run description. Everything written here round-trips
bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .samplers import HyperParams, PosteriorDraws
from .simgen import SimConfig
from .var_core import SubjectPanel

FORMAT_VERSION = "1"
_MAGIC = b"DPMVARD1"


# ---------------------------------------------------------------------------
# panels and manifests
# ---------------------------------------------------------------------------


def write_panel(path, data: np.ndarray) -> None:
    data = np.atleast_2d(np.asarray(data, dtype=float))
    np.savetxt(path, data, fmt="%.17g")


def read_panel(path) -> np.ndarray:
    return np.loadtxt(path, ndmin=2)


@dataclass
class SubjectEntry:
    id: str
    path: str
    n_scans: int
    holdout: str | None = None


@dataclass
class DatasetManifest:
    n_nodes: int
    subjects: list
    version: str = FORMAT_VERSION
    n_lags_hint: int | None = None
    truth: str | None = None
    base_dir: Path | None = None  # set on read; not serialised

    def resolve(self, rel: str) -> Path:
        base = self.base_dir if self.base_dir is not None else Path(".")
        return base / rel


def write_manifest(path, manifest: DatasetManifest) -> None:
    payload = {
        "version": manifest.version,
        "n_nodes": manifest.n_nodes,
        "n_lags_hint": manifest.n_lags_hint,
        "truth": manifest.truth,
        "subjects": [
            {"id": s.id, "path": s.path, "n_scans": s.n_scans, "holdout": s.holdout}
            for s in manifest.subjects
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    payload = json.loads(path.read_text())
    subjects = [SubjectEntry(**s) for s in payload["subjects"]]
    ids = [s.id for s in subjects]
    if len(set(ids)) != len(ids):
        raise ConfigError("manifest subject ids must be unique")
    return DatasetManifest(
        n_nodes=int(payload["n_nodes"]),
        subjects=subjects,
        version=str(payload.get("version", FORMAT_VERSION)),
        n_lags_hint=payload.get("n_lags_hint"),
        truth=payload.get("truth"),
        base_dir=path.parent,
    )


def load_dataset(manifest_path) -> tuple:
    """Read a manifest and all referenced panels; validates node counts."""
    manifest = read_manifest(manifest_path)
    panels = []
    for entry in manifest.subjects:
        data = read_panel(manifest.resolve(entry.path))
        if data.shape[0] != manifest.n_nodes:
            raise ConfigError(
                f"subject {entry.id}: panel has {data.shape[0]} rows, manifest says {manifest.n_nodes}"
            )
        if data.shape[1] != entry.n_scans:
            raise ConfigError(
                f"subject {entry.id}: panel has {data.shape[1]} scans, manifest says {entry.n_scans}"
            )
        panels.append(SubjectPanel(entry.id, data))
    return panels, manifest


def load_holdouts(manifest: DatasetManifest):
    """Holdout blocks per subject, or None where absent."""
    out = []
    for entry in manifest.subjects:
        out.append(read_panel(manifest.resolve(entry.holdout)) if entry.holdout else None)
    return out


# ---------------------------------------------------------------------------
# ground truth archive
# ---------------------------------------------------------------------------


def write_truth(path, truth) -> None:
    np.savez(
        path,
        setting=np.int64(truth.setting),
        subject_A=truth.subject_A,
        A_labels=truth.A_labels,
        cov_labels=truth.cov_labels,
        cluster_sigma=truth.cluster_sigma,
        sparsity_mask=truth.sparsity_mask,
    )


def read_truth(path):
    from .simgen import GroundTruth

    with np.load(path) as z:
        return GroundTruth(
            setting=int(z["setting"]),
            subject_A=z["subject_A"],
            A_labels=z["A_labels"],
            cov_labels=z["cov_labels"],
            cluster_sigma=z["cluster_sigma"],
            sparsity_mask=z["sparsity_mask"].astype(bool),
        )


# ---------------------------------------------------------------------------
# posterior draw files
# ---------------------------------------------------------------------------

_DRAW_FIELDS = (
    "subject_A",
    "subject_loadings",
    "subject_idio",
    "cov_labels",
    "autocov_labels",
    "lambda2",
    "loglik",
)


def write_draws_file(path, arrays: dict) -> None:
    """Flat binary: magic, u32 version, u32 header length, JSON header, raw data."""
    header = {}
    blobs = []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        code = "<i8" if arr.dtype.kind in "iub" else "<f8"
        arr = np.ascontiguousarray(arr.astype(code))
        header[name] = {"dtype": code, "shape": list(arr.shape)}
        blobs.append(arr.tobytes())
    hjson = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", 1))
        fh.write(struct.pack("<I", len(hjson)))
        fh.write(hjson)
        for blob in blobs:
            fh.write(blob)


def read_draws_file(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a draws file (bad magic)")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != 1:
            raise ValueError(f"{path}: unsupported draws version {version}")
        header = json.loads(fh.read(hlen).decode())
        out = {}
        for name in sorted(header):
            meta = header[name]
            count = int(np.prod(meta["shape"])) if meta["shape"] else 1
            raw = fh.read(count * 8)
            out[name] = np.frombuffer(raw, dtype=meta["dtype"]).reshape(meta["shape"]).copy()
    return out


def save_draws(out_dir, draws: PosteriorDraws, metadata: dict) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arrays = {name: getattr(draws, name) for name in _DRAW_FIELDS}
    write_draws_file(out_dir / "draws.bin", arrays)
    meta = dict(metadata)
    meta.update(
        {
            "variant": draws.variant,
            "n_lags": draws.n_lags,
            "n_factors": draws.n_factors,
            "subject_ids": list(draws.subject_ids),
            "seed": draws.seed,
            "n_draws": draws.n_draws,
        }
    )
    (out_dir / "metadata.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def load_draws(chain_dir) -> tuple:
    chain_dir = Path(chain_dir)
    arrays = read_draws_file(chain_dir / "draws.bin")
    meta = json.loads((chain_dir / "metadata.json").read_text())
    draws = PosteriorDraws(
        variant=meta["variant"],
        n_lags=int(meta["n_lags"]),
        n_factors=int(meta["n_factors"]),
        subject_ids=list(meta["subject_ids"]),
        seed=int(meta["seed"]),
        subject_A=arrays["subject_A"],
        subject_loadings=arrays["subject_loadings"],
        subject_idio=arrays["subject_idio"],
        cov_labels=arrays["cov_labels"].astype(np.int64),
        autocov_labels=arrays["autocov_labels"].astype(np.int64),
        lambda2=arrays["lambda2"],
        loglik=arrays["loglik"],
    )
    return draws, meta


def find_chain_dirs(fit_dir) -> list:
    fit_dir = Path(fit_dir)
    if (fit_dir / "draws.bin").exists():
        return [fit_dir]
    chains = sorted(p for p in fit_dir.glob("chain_*") if (p / "draws.bin").exists())
    if not chains:
        raise FileNotFoundError(f"no draw files under {fit_dir}")
    return chains


def load_all_chains(fit_dir) -> tuple:
    """Load and pool every chain under a fit directory.

    Subject-level records are label-invariant, so draws from independent
    chains can be concatenated directly.
    """
    dirs = find_chain_dirs(fit_dir)
    loaded = [load_draws(d) for d in dirs]
    first, meta = loaded[0]
    if len(loaded) == 1:
        return first, meta
    pooled = PosteriorDraws(
        variant=first.variant,
        n_lags=first.n_lags,
        n_factors=first.n_factors,
        subject_ids=first.subject_ids,
        seed=first.seed,
        subject_A=np.concatenate([d.subject_A for d, _ in loaded]),
        subject_loadings=np.concatenate([d.subject_loadings for d, _ in loaded]),
        subject_idio=np.concatenate([d.subject_idio for d, _ in loaded]),
        cov_labels=np.concatenate([d.cov_labels for d, _ in loaded]),
        autocov_labels=np.concatenate([d.autocov_labels for d, _ in loaded]),
        lambda2=np.concatenate([d.lambda2 for d, _ in loaded]),
        loglik=np.concatenate([d.loglik for d, _ in loaded]),
    )
    return pooled, meta


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

_HYPER_KEYS = {
    "alpha_cov",
    "alpha_autocov",
    "a_sigma",
    "b_sigma",
    "lasso_r",
    "lasso_delta",
    "n_factors",
    "n_lags",
    "burn_in",
    "n_iter",
    "thin",
    "max_components",
}


@dataclass
class RunConfig:
    """Everything cmd_fit needs besides the dataset itself."""

    variant: str = "pdpm"
    hyper: HyperParams = field(default_factory=HyperParams)
    seed: int = 0
    chains: int = 1
    standardize: bool = False

    def validate(self) -> None:
        if self.variant not in ("pdpm", "lg", "rg"):
            raise ConfigError("variant must be one of pdpm, lg, rg")
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in 64 bits")
        self.hyper.validate()


def run_config_from_dict(payload: dict) -> RunConfig:
    payload = dict(payload)
    hyper_kwargs = {k: payload.pop(k) for k in list(payload) if k in _HYPER_KEYS}
    known = {"variant", "seed", "chains", "standardize"}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown config field: {sorted(unknown)[0]}")
    cfg = RunConfig(
        variant=payload.get("variant", "pdpm"),
        hyper=HyperParams(**hyper_kwargs),
        seed=int(payload.get("seed", 0)),
        chains=int(payload.get("chains", 1)),
        standardize=bool(payload.get("standardize", False)),
    )
    cfg.validate()
    return cfg


def read_run_config(path) -> RunConfig:
    return run_config_from_dict(json.loads(Path(path).read_text()))


_SIM_KEYS = {
    "setting",
    "n_subjects",
    "n_nodes",
    "n_lags",
    "n_scans",
    "sparsity",
    "holdout",
    "seed",
    "replicates",
    "row_cluster_range",
    "iw_dof",
}


def read_sim_config(path) -> SimConfig:
    payload = json.loads(Path(path).read_text())
    unknown = set(payload) - _SIM_KEYS
    if unknown:
        raise ConfigError(f"unknown config field: {sorted(unknown)[0]}")
    if "row_cluster_range" in payload:
        payload["row_cluster_range"] = tuple(payload["row_cluster_range"])
    cfg = SimConfig(**payload)
    cfg.validate()
    return cfg


def config_hash(cfg) -> str:
    """Stable hash of a config dataclass for provenance stamping."""
    payload = asdict(cfg) if not isinstance(cfg, dict) else cfg
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()
