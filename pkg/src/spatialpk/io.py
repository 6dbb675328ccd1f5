"""File formats: datasets, ground truth, parameter maps, sample stores, configs.

Every number is written as decimal text with 17 significant digits so that
write-then-read reproduces the in-memory values exactly. NaN is never written;
masked-out map cells are left empty.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .kinetics import AifParams, aif_value, time_grid
from .lattice import Lattice, build_lattice

if TYPE_CHECKING:
    from .phantom import PhantomConfig
    from .sampler import SamplerConfig

DATASET_CSV = "dataset.csv"
DATASET_JSON = "dataset.json"
TRUTH_CSV = "truth.csv"
SAMPLES_CSV = "samples.csv"
GLOBALS_CSV = "globals.csv"
RUN_SUMMARY = "run_summary.json"
MAPS_DIR = "maps"


class FormatError(ValueError):
    """Malformed input file; message names the file, line and field."""

    def __init__(self, path, line, field, message):
        self.path = str(path)
        self.line = line
        self.field = field
        loc = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{loc}: field {field!r}: {message}")


class EmptyMaskError(ValueError):
    pass


def fmt(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"refusing to write non-finite value {x}")
    return format(x, ".17g")


@dataclass
class Dataset:
    """Concentration series for an ny x nx slice; ``y`` has one row per grid voxel."""

    nx: int
    ny: int
    mask: np.ndarray
    times: np.ndarray
    aif: AifParams
    y: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool).ravel()
        self.times = time_grid(self.times)
        self.y = np.asarray(self.y, dtype=float)
        n = self.nx * self.ny
        if self.mask.size != n:
            raise ValueError(f"mask has {self.mask.size} entries, expected {n}")
        if self.y.shape != (n, self.times.size):
            raise ValueError(f"observations have shape {self.y.shape}, expected {(n, self.times.size)}")
        if not self.mask.any():
            raise EmptyMaskError("dataset mask selects no voxels")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("observations must be finite")

    @property
    def n_times(self) -> int:
        return self.times.size

    def lattice(self) -> Lattice:
        return build_lattice(self.nx, self.ny, self.mask)

    def aif_curve(self) -> np.ndarray:
        return np.asarray(aif_value(self.aif, self.times), dtype=float)


def write_dataset(dataset: Dataset, path) -> None:
    """Write ``dataset.csv`` and its ``dataset.json`` sidecar into directory ``path``."""
    path = Path(path)
    header = ["row", "col", "mask"] + [f"t={t:.6g}" for t in dataset.times]
    with open(path / DATASET_CSV, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.nx * dataset.ny):
            r, c = divmod(i, dataset.nx)
            w.writerow([r, c, int(dataset.mask[i])] + [fmt(v) for v in dataset.y[i]])
    meta = {
        "nx": dataset.nx,
        "ny": dataset.ny,
        "times": [float(t) for t in dataset.times],
        "aif": {
            "dose": dataset.aif.dose,
            "a1": dataset.aif.a1,
            "a2": dataset.aif.a2,
            "m1": dataset.aif.m1,
            "m2": dataset.aif.m2,
            "t0": dataset.aif.t0,
        },
    }
    _write_json(path / DATASET_JSON, meta)


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _parse_float(text, path, line, field):
    try:
        value = float(text)
    except ValueError:
        raise FormatError(path, line, field, f"not a number: {text!r}") from None
    if not math.isfinite(value):
        raise FormatError(path, line, field, f"non-finite value {text!r}")
    return value


def _parse_int(text, path, line, field):
    try:
        return int(text)
    except ValueError:
        raise FormatError(path, line, field, f"not an integer: {text!r}") from None


def read_dataset(path) -> Dataset:
    path = Path(path)
    meta_path = path / DATASET_JSON
    csv_path = path / DATASET_CSV
    try:
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(meta_path, exc.lineno, "<json>", exc.msg) from None
    for key in ("nx", "ny", "times", "aif"):
        if key not in meta:
            raise FormatError(meta_path, None, key, "missing")
    nx, ny = int(meta["nx"]), int(meta["ny"])
    times = np.array(meta["times"], dtype=float)
    try:
        aif = AifParams(**meta["aif"])
    except (TypeError, ValueError) as exc:
        raise FormatError(meta_path, None, "aif", str(exc)) from None
    n_t = times.size

    with open(csv_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(csv_path, 1, "header", "file is empty")
    header = rows[0]
    if header[:3] != ["row", "col", "mask"]:
        raise FormatError(csv_path, 1, "header", "expected columns row,col,mask")
    if len(header) - 3 != n_t:
        raise FormatError(csv_path, 1, "header",
                          f"{len(header) - 3} time columns but sidecar lists {n_t} times")
    for k, (h, t) in enumerate(zip(header[3:], times)):
        if h != f"t={t:.6g}":
            raise FormatError(csv_path, 1, f"t[{k}]", f"header {h!r} disagrees with sidecar time {t!r}")
    body = rows[1:]
    if len(body) != nx * ny:
        raise FormatError(csv_path, len(rows), "row", f"expected {nx * ny} voxel rows, found {len(body)}")

    mask = np.zeros(nx * ny, dtype=bool)
    y = np.empty((nx * ny, n_t))
    for i, rec in enumerate(body):
        line = i + 2
        if len(rec) != n_t + 3:
            raise FormatError(csv_path, line, "row",
                              f"row has {len(rec) - 3} data columns, expected {n_t}")
        r = _parse_int(rec[0], csv_path, line, "row")
        c = _parse_int(rec[1], csv_path, line, "col")
        if (r, c) != divmod(i, nx):
            raise FormatError(csv_path, line, "row", f"voxel ({r},{c}) out of row-major order")
        m = _parse_int(rec[2], csv_path, line, "mask")
        if m not in (0, 1):
            raise FormatError(csv_path, line, "mask", f"mask must be 0 or 1, got {m}")
        mask[i] = bool(m)
        for j in range(n_t):
            y[i, j] = _parse_float(rec[3 + j], csv_path, line, header[3 + j])
    if not mask.any():
        raise EmptyMaskError(f"{csv_path}: mask selects no voxels")
    return Dataset(nx=nx, ny=ny, mask=mask, times=times, aif=aif, y=y)


# ground truth -------------------------------------------------------------

TRUTH_FIELDS = ("k_ep1", "k_ep2", "K_trans1", "K_trans2")


def write_truth(truth, path) -> None:
    path = Path(path)
    with open(path / TRUTH_CSV, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "block", *TRUTH_FIELDS, "v_t1", "v_t2"])
        v1, v2 = truth.v_t1, truth.v_t2
        for i in range(truth.nx * truth.ny):
            r, c = divmod(i, truth.nx)
            w.writerow([r, c, truth.block[i]]
                       + [fmt(getattr(truth, f)[i]) for f in TRUTH_FIELDS]
                       + [fmt(v1[i]), fmt(v2[i])])


def read_truth(path):
    from .phantom import GroundTruth

    csv_path = Path(path) / TRUTH_CSV
    with open(csv_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0] if rows else []
    expected = ["row", "col", "block", *TRUTH_FIELDS, "v_t1", "v_t2"]
    if header != expected:
        raise FormatError(csv_path, 1, "header", f"expected {','.join(expected)}")
    body = rows[1:]
    rc = [(_parse_int(r[0], csv_path, k + 2, "row"), _parse_int(r[1], csv_path, k + 2, "col"))
          for k, r in enumerate(body)]
    ny = max(r for r, _ in rc) + 1 if rc else 0
    nx = max(c for _, c in rc) + 1 if rc else 0
    if len(body) != nx * ny:
        raise FormatError(csv_path, len(rows), "row", "truth file does not cover a full grid")
    cols = {f: np.empty(nx * ny) for f in TRUTH_FIELDS}
    block = np.empty(nx * ny, dtype="<U1")
    for k, rec in enumerate(body):
        line = k + 2
        if len(rec) != len(expected):
            raise FormatError(csv_path, line, "row", f"expected {len(expected)} columns")
        if rc[k] != divmod(k, nx):
            raise FormatError(csv_path, line, "row", "voxels out of row-major order")
        block[k] = rec[2]
        for j, f in enumerate(TRUTH_FIELDS):
            cols[f][k] = _parse_float(rec[3 + j], csv_path, line, f)
    return GroundTruth(nx, ny, block=block, **cols)


# parameter maps -----------------------------------------------------------

def map_quantities(summary) -> list[str]:
    names = list(summary.maps)
    names += [f"{q}.q10" for q in summary.lower] + [f"{q}.q90" for q in summary.upper]
    return names


def write_grid(grid: np.ndarray, path) -> None:
    """ny rows x nx columns; NaN cells (outside the mask) are written empty."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for row in np.atleast_2d(grid):
            fh.write(",".join("" if math.isnan(v) else fmt(v) for v in row))
            fh.write("\n")


def read_grid(path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            cells = line.rstrip("\n").split(",")
            rows.append([np.nan if c == "" else _parse_float(c, path, line_no, f"col {k}")
                         for k, c in enumerate(cells)])
    if len({len(r) for r in rows}) > 1:
        raise FormatError(path, None, "row", "ragged map rows")
    return np.array(rows, dtype=float)


def write_maps(summary, truth=None, path=".") -> list[str]:
    """One CSV per map quantity into ``path``; returns the quantity names."""
    path = Path(path)
    path.mkdir(exist_ok=True)
    names = map_quantities(summary)
    for name in names:
        write_grid(summary.grid(name), path / f"{name}.csv")
    for p, pname in enumerate(summary.param_names):
        grid = np.full(summary.nx * summary.ny, np.nan)
        grid[summary.voxel_index] = summary.acceptance[:, p]
        write_grid(grid.reshape(summary.ny, summary.nx), path / f"acceptance.{pname}.csv")
    if truth is not None:
        for q in ("k_ep1", "k_ep2", "K_trans1", "K_trans2", "v_t1", "v_t2"):
            write_grid(np.asarray(getattr(truth, q)).reshape(truth.ny, truth.nx),
                       path / f"truth.{q}.csv")
    return names


def read_maps(path) -> dict[str, np.ndarray]:
    path = Path(path)
    return {p.name[:-4]: read_grid(p) for p in sorted(path.glob("*.csv"))}


# sample stores ------------------------------------------------------------

STORE_JSON = "store.json"


def write_samples(store, path) -> None:
    """Per-voxel draws to samples.csv, global precisions to globals.csv."""
    path = Path(path)
    path.mkdir(exist_ok=True)
    names = list(store.param_names)
    s, m, p = store.draws.shape
    draw = np.repeat(np.arange(s), m)
    voxel = np.tile(store.voxel_index, s)
    values = np.column_stack([store.draws.reshape(s * m, p), store.deviance.reshape(s * m)])
    _check_writable(values)
    with open(path / SAMPLES_CSV, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(["draw", "voxel", *names, "deviance"]) + "\n")
        _write_rows(fh, draw, voxel, values)
    glob = np.column_stack([store.tau_eps, store.tau_field])
    _check_writable(glob)
    with open(path / GLOBALS_CSV, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(["draw", "tau_eps", *[f"tau_{n}" for n in names]]) + "\n")
        _write_rows(fh, np.arange(s), None, glob)
    meta = {
        "kind": store.kind,
        "prior": store.prior,
        "n_times": store.n_times,
        "seeds": list(store.seeds),
        "voxel_index": [int(v) for v in store.voxel_index],
        "acceptance": store.acceptance.tolist(),
        "proposal_sd": store.proposal_sd.tolist(),
    }
    _write_json(path / STORE_JSON, meta)


def _check_writable(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise ValueError("refusing to write non-finite values")


def _write_rows(fh, first, second, values, chunk: int = 20000) -> None:
    for start in range(0, values.shape[0], chunk):
        stop = start + chunk
        cols = [np.char.mod("%d", first[start:stop])]
        if second is not None:
            cols.append(np.char.mod("%d", second[start:stop]))
        cols.append(np.char.mod("%.17g", values[start:stop]))
        table = np.column_stack(cols)
        fh.write("".join(",".join(row) + "\n" for row in table))


def read_samples(path):
    from .sampler import SampleStore
    from .kinetics import PARAM_NAMES

    path = Path(path)
    with open(path / STORE_JSON, encoding="utf-8") as fh:
        meta = json.load(fh)
    kind = meta["kind"]
    names = list(PARAM_NAMES[kind])
    voxel_index = np.array(meta["voxel_index"], dtype=np.int64)
    m = voxel_index.size

    samples_path = path / SAMPLES_CSV
    with open(samples_path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        expected = ",".join(["draw", "voxel", *names, "deviance"])
        if header != expected:
            raise FormatError(samples_path, 1, "header", f"expected {expected}")
        body = np.loadtxt(fh, delimiter=",", dtype=float, ndmin=2)
    if body.shape[0] % m:
        raise FormatError(samples_path, None, "draw", "row count is not a multiple of the voxel count")
    s = body.shape[0] // m
    if not np.array_equal(body[:, 1].astype(np.int64), np.tile(voxel_index, s)):
        raise FormatError(samples_path, None, "voxel", "voxel column disagrees with store.json")
    draws = body[:, 2:2 + len(names)].reshape(s, m, len(names))
    deviance = body[:, -1].reshape(s, m)

    globals_path = path / GLOBALS_CSV
    with open(globals_path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        expected = ",".join(["draw", "tau_eps", *[f"tau_{n}" for n in names]])
        if header != expected:
            raise FormatError(globals_path, 1, "header", f"expected {expected}")
        glob = np.loadtxt(fh, delimiter=",", dtype=float, ndmin=2)
    if glob.shape[0] != s:
        raise FormatError(globals_path, None, "draw", f"expected {s} draws, found {glob.shape[0]}")
    return SampleStore(
        kind=kind,
        prior=meta["prior"],
        voxel_index=voxel_index,
        n_times=int(meta["n_times"]),
        draws=draws,
        tau_eps=glob[:, 1].copy(),
        tau_field=glob[:, 2:].copy(),
        deviance=deviance,
        acceptance=np.array(meta["acceptance"], dtype=float).reshape(m, len(names)),
        proposal_sd=np.array(meta["proposal_sd"], dtype=float).reshape(m, len(names)),
        seeds=tuple(meta["seeds"]),
    )


# run configuration --------------------------------------------------------

class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


def _positive(v):
    return v > 0


def _nonnegative(v):
    return v >= 0


def _any(v):
    return True


def _open_unit(v):
    return 0 < v < 1


# key -> (type, range check, description of the range)
_INT, _REAL = int, float
SAMPLER_SCHEMA = {
    "burn_in": (_INT, _positive, ">= 1"),
    "iterations": (_INT, _positive, ">= 1"),
    "thin": (_INT, _positive, ">= 1"),
    "target_acceptance": (_REAL, _open_unit, "in (0, 1)"),
    "adapt_window": (_INT, _positive, ">= 1"),
    "initial_sd": (_REAL, _positive, "> 0"),
    "seed": (_INT, _nonnegative, ">= 0"),
    "progress_every": (_INT, _positive, ">= 1"),
}
NOISE_SCHEMA = {
    "a": (_REAL, _positive, "> 0"),
    "b": (_REAL, _positive, "> 0"),
    "expected_peak": (_REAL, _positive, "> 0"),
    "target_snr": (_REAL, _positive, "> 0"),
}
PHANTOM_SCHEMA = {
    "nx": (_INT, lambda v: v >= 5, ">= 5"),
    "ny": (_INT, lambda v: v >= 5, ">= 5"),
    "n_times": (_INT, lambda v: v >= 2, ">= 2"),
    "dt": (_REAL, _positive, "> 0"),
    "sigma": (_REAL, _nonnegative, ">= 0"),
    "jitter_lo": (_REAL, _positive, "> 0"),
    "jitter_hi": (_REAL, _positive, "> 0"),
    "seed": (_INT, _nonnegative, ">= 0"),
}
AIF_SCHEMA = {
    "dose": (_REAL, _positive, "> 0"),
    "a1": (_REAL, _positive, "> 0"),
    "a2": (_REAL, _positive, "> 0"),
    "m1": (_REAL, _positive, "> 0"),
    "m2": (_REAL, _positive, "> 0"),
    "t0": (_REAL, _nonnegative, ">= 0"),
}
NULLABLE = {"noise.a", "noise.b", "noise.expected_peak"}


def _prior_schema(cls):
    from dataclasses import fields

    schema = {}
    for f in fields(cls):
        if f.name.startswith("mu_"):
            schema[f.name] = (_REAL, _any, "finite")
        else:
            schema[f.name] = (_REAL, _positive, "> 0")
    return schema


def _check_section(section, schema, prefix):
    if not isinstance(section, dict):
        raise ConfigError(prefix, "must be a JSON object")
    out = {}
    for key, value in section.items():
        path = f"{prefix}.{key}"
        if key not in schema:
            raise ConfigError(path, "unknown key")
        if value is None and path in NULLABLE:
            out[key] = None
            continue
        kind, ok, desc = schema[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        if kind is int and not float(value).is_integer():
            raise ConfigError(path, f"expected an integer, got {value!r}")
        value = int(value) if kind is int else float(value)
        if not math.isfinite(value) or not ok(value):
            raise ConfigError(path, f"out of range: {value!r} (must be {desc})")
        out[key] = value
    return out


@dataclass
class RunConfig:
    sampler: SamplerConfig
    phantom: PhantomConfig


def parse_config(doc: dict) -> RunConfig:
    """Validate a configuration document and fill in defaults."""
    from .model import NoiseModel, SpatialPriorConfig, VoxelwisePriorConfig
    from .phantom import PhantomConfig
    from .sampler import MODEL_KINDS, PRIOR_MODES, SamplerConfig

    if not isinstance(doc, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    allowed = {"model", "priors", "sampler", "noise", "phantom"}
    for key in doc:
        if key not in allowed:
            raise ConfigError(key, "unknown key")

    model = doc.get("model", {})
    if not isinstance(model, dict):
        raise ConfigError("model", "must be a JSON object")
    for key in model:
        if key not in ("kind", "prior"):
            raise ConfigError(f"model.{key}", "unknown key")
    kind = model.get("kind", "2comp")
    prior = model.get("prior", "spatial")
    if kind not in MODEL_KINDS:
        raise ConfigError("model.kind", f"must be one of {', '.join(MODEL_KINDS)}, got {kind!r}")
    if prior not in PRIOR_MODES:
        raise ConfigError("model.prior", f"must be one of {', '.join(PRIOR_MODES)}, got {prior!r}")

    priors = doc.get("priors", {})
    if not isinstance(priors, dict):
        raise ConfigError("priors", "must be a JSON object")
    for key in priors:
        if key not in ("voxelwise", "spatial"):
            raise ConfigError(f"priors.{key}", "unknown key")
    vox = _check_section(priors.get("voxelwise", {}), _prior_schema(VoxelwisePriorConfig),
                         "priors.voxelwise")
    spa = _check_section(priors.get("spatial", {}), _prior_schema(SpatialPriorConfig),
                         "priors.spatial")

    samp = _check_section(doc.get("sampler", {}), SAMPLER_SCHEMA, "sampler")
    noise = _check_section(doc.get("noise", {}), NOISE_SCHEMA, "noise")
    a, b = noise.pop("a", None), noise.pop("b", None)
    if (a is None) != (b is None):
        raise ConfigError("noise", "give both a and b, or neither (to elicit from the data)")

    try:
        sampler = SamplerConfig(
            model=kind,
            prior=prior,
            voxelwise_prior=VoxelwisePriorConfig(**vox),
            spatial_prior=SpatialPriorConfig(**spa),
            noise=NoiseModel(a, b) if a is not None else None,
            **noise,
            **samp,
        )
    except ValueError as exc:
        raise ConfigError("sampler", str(exc)) from None

    ph = doc.get("phantom", {})
    if not isinstance(ph, dict):
        raise ConfigError("phantom", "must be a JSON object")
    ph = dict(ph)
    aif_doc = ph.pop("aif", {})
    ph = _check_section(ph, PHANTOM_SCHEMA, "phantom")
    aif = _check_section(aif_doc, AIF_SCHEMA, "phantom.aif")
    try:
        default_aif = PhantomConfig().aif
        phantom = PhantomConfig(aif=AifParams(**{**_aif_dict(default_aif), **aif}), **ph)
    except ValueError as exc:
        raise ConfigError("phantom", str(exc)) from None
    return RunConfig(sampler=sampler, phantom=phantom)


def read_config(path=None) -> RunConfig:
    """Read a JSON run configuration; ``None`` gives all defaults."""
    if path is None:
        return parse_config({})
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<json>", f"{path}:{exc.lineno}: {exc.msg}") from None
    return parse_config(doc)


def _aif_dict(aif: AifParams) -> dict:
    return {k: getattr(aif, k) for k in ("dose", "a1", "a2", "m1", "m2", "t0")}


def resolved_config(run: RunConfig, noise=None) -> dict:
    """Configuration document with every default materialised.

    ``noise`` overrides the noise section with the prior actually used
    (e.g. one elicited from the data).
    """
    from dataclasses import asdict

    s = run.sampler
    used = noise if noise is not None else s.noise
    return {
        "model": {"kind": s.model, "prior": s.prior},
        "priors": {
            "voxelwise": asdict(s.voxelwise_prior),
            "spatial": asdict(s.spatial_prior),
        },
        "sampler": {k: getattr(s, k) for k in SAMPLER_SCHEMA},
        "noise": {
            "a": None if used is None else used.a,
            "b": None if used is None else used.b,
            "expected_peak": s.expected_peak,
            "target_snr": s.target_snr,
        },
        "phantom": {
            **{k: getattr(run.phantom, k) for k in PHANTOM_SCHEMA},
            "aif": _aif_dict(run.phantom.aif),
        },
    }


def write_json(path, obj) -> None:
    _write_json(path, obj)
