"""``hqsct`` command-line driver: simulate, train, reconstruct, evaluate.

Every command reads a UTF-8 JSON config, writes its outputs plus a
``manifest.json`` (resolved config, seed, thread count, SHA-256 of every
file written) into ``--out``, and exits with 0 on success, 2 on a config
error, 3 on a data error and 4 when non-finite values are detected.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from contextlib import nullcontext
from dataclasses import asdict, fields
from pathlib import Path

import numba
import numpy as np
from threadpoolctl import threadpool_limits

from .analytic import FilterConfig, fdk_reconstruct
from .data import Volume3D
from .denoise import TrainConfig, UNetArch, init_params, load_params, save_params, unet_forward
from .errors import DimensionError, FormatError, InvalidSpecError, NumericError
from .geometry import ConeBeamGeometry, desk_geometry, subsample_views
from .io import read_projections, read_volume, write_pgm, write_projections, write_volume
from .metrics import psnr, ssim, ssim_volume, write_metrics_csv
from .phantoms import NoiseModel, PhantomSpec, make_ellipsoid_phantom, simulate_scan
from .pipeline import train_hqs_stages
from .solvers import HQSConfig, hqs_reconstruct, quadratic_mbir_baseline

logger = logging.getLogger("hqsct")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
METHODS = ("fdk", "hqs", "baseline")

DEFAULTS = {
    "geometry": {"desk": {"n_views": 192, "n": 64, "voxel_size": 0.1}},
    "n_train": 4,
    "n_test": 2,
    "views_factor": 16,
    "phantom": {},
    "noise": {},
    "filter": {},
    "hqs": {},
    "train": {"epochs": 6},
    "arch": {},
    "baseline": {"lambda": 1e-2, "iters": 200},
    "method": ["fdk", "hqs", "baseline"],
    "slices": None,
    "window": None,
    "reference": "phantom",
    "zoom_patches": [],
}


class DataError(Exception):
    """Missing or inconsistent input files."""


# --- helpers -----------------------------------------------------------------


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_config(path) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    if path is None:
        return cfg
    try:
        user = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise InvalidSpecError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise InvalidSpecError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise InvalidSpecError("config must be a JSON object")
    unknown = set(user) - set(DEFAULTS) - {"data", "models", "recon"}
    if unknown:
        raise InvalidSpecError(f"unknown config keys {sorted(unknown)}")
    cfg.update(user)
    return cfg


def _build(cls, section: dict, name: str, **extra):
    allowed = {f.name for f in fields(cls)}
    bad = set(section) - allowed
    if bad:
        raise InvalidSpecError(f"unknown {name} keys {sorted(bad)}")
    try:
        return cls(**{**section, **extra})
    except TypeError as exc:
        raise InvalidSpecError(f"bad {name} section: {exc}") from exc


def geometry_from_config(spec: dict) -> ConeBeamGeometry:
    if "desk" in spec:
        return desk_geometry(**spec["desk"])
    if "path" in spec:
        try:
            return ConeBeamGeometry.load(spec["path"])
        except FileNotFoundError as exc:
            raise InvalidSpecError(f"geometry file {spec['path']} not found") from exc
    return ConeBeamGeometry.from_dict(spec)


def filter_from_config(cfg: dict) -> FilterConfig:
    return _build(FilterConfig, cfg["filter"], "filter")


def hqs_from_config(cfg: dict) -> HQSConfig:
    section = dict(cfg["hqs"])
    if "denoiser_ids" in section and section["denoiser_ids"] is not None:
        section["denoiser_ids"] = tuple(section["denoiser_ids"])
    return _build(HQSConfig, section, "hqs")


def train_from_config(cfg: dict, seed: int) -> TrainConfig:
    section = dict(cfg["train"])
    if "adam_betas" in section:
        section["adam_betas"] = tuple(section["adam_betas"])
    return _build(TrainConfig, section, "train", seed=seed)


def validate_config(cfg: dict) -> None:
    """Build every section once so a bad value fails before any work starts."""
    filter_from_config(cfg)
    hqs_from_config(cfg)
    train_from_config(cfg, 0)
    _build(UNetArch, cfg["arch"], "arch")
    _build(NoiseModel, cfg["noise"], "noise")
    _build(PhantomSpec, cfg["phantom"], "phantom")
    _methods(cfg)
    if cfg["reference"] not in (None, "phantom", "target"):
        raise InvalidSpecError(f"reference must be phantom or target, got {cfg['reference']!r}")


def case_seed(seed: int, index: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, index, stream]).generate_state(1, np.uint64)[0] >> 1)


def write_manifest(out: Path, payload: dict, files: dict[str, Path]) -> None:
    payload = dict(payload)
    payload["files"] = {key: {"path": p.name, "sha256": sha256(p)} for key, p in sorted(files.items())}
    (out / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.is_file():
        raise DataError(f"no manifest.json in {directory}")
    return json.loads(path.read_text(encoding="utf-8"))


def _require_dir(cfg: dict, key: str, command: str) -> Path:
    if not cfg.get(key):
        raise InvalidSpecError(f"{command} needs '{key}' in the config")
    return Path(cfg[key])


class Dataset:
    """Read access to the output directory of ``simulate``."""

    def __init__(self, directory):
        self.root = Path(directory)
        self.manifest = read_manifest(self.root)
        if self.manifest.get("command") != "simulate":
            raise DataError(f"{directory} is not a simulate output")
        self.geom_dense = ConeBeamGeometry.load(self._path("geometry_dense"))
        self.geom_sparse = ConeBeamGeometry.load(self._path("geometry_sparse"))
        self.factor = int(self.manifest["views_factor"])

    def _path(self, key: str) -> Path:
        entry = self.manifest["files"].get(key)
        if entry is None:
            raise DataError(f"manifest in {self.root} does not list {key}")
        path = self.root / entry["path"]
        if not path.is_file():
            raise DataError(f"missing data file {path}")
        return path

    def cases(self, split: str | None = None) -> list[str]:
        return [c["id"] for c in self.manifest["cases"] if split is None or c["split"] == split]

    def volume(self, case: str, kind: str) -> Volume3D:
        return read_volume(self._path(f"{case}_{kind}"))

    def sparse(self, case: str, factor: int | None, filter_cfg: FilterConfig):
        """Sparse stack, its geometry and its FDK image at ``factor``."""
        if factor is None or factor == self.factor:
            proj = read_projections(self._path(f"{case}_sparse"))
            geom = self.geom_sparse
            fdk = self.volume(case, "fdk")
        else:
            proj, geom = subsample_views(read_projections(self._path(f"{case}_dense")), self.geom_dense, factor)
            fdk = fdk_reconstruct(proj, geom, filter_cfg)
        return proj, geom, fdk


# --- commands ----------------------------------------------------------------


def cmd_simulate(cfg: dict, args) -> dict:
    out = Path(args.out)
    factor = args.views_factor or int(cfg["views_factor"])
    n_train, n_test = int(cfg["n_train"]), int(cfg["n_test"])
    if n_train < 0 or n_test < 0 or n_train + n_test == 0:
        raise InvalidSpecError("need at least one phantom (n_train + n_test > 0)")
    geom = geometry_from_config(cfg["geometry"])
    filter_cfg = filter_from_config(cfg)
    noise_section = cfg["noise"]
    out.mkdir(parents=True, exist_ok=True)

    files = {}
    files["geometry_dense"] = out / "geometry_dense.json"
    geom.save(files["geometry_dense"])
    cases = []
    geom_sparse = None
    for i in range(n_train + n_test):
        case = f"case{i:03d}"
        spec = _build(PhantomSpec, cfg["phantom"], "phantom", seed=case_seed(args.seed, i, 0))
        noise = _build(NoiseModel, noise_section, "noise", seed=case_seed(args.seed, i, 1))
        phantom = make_ellipsoid_phantom(geom.vol_dims, geom.voxel_size, spec)
        dense = simulate_scan(phantom, geom, noise)
        sparse, geom_sparse = subsample_views(dense, geom, factor)
        outputs = {
            "phantom": phantom,
            "target": fdk_reconstruct(dense, geom, filter_cfg),
            "fdk": fdk_reconstruct(sparse, geom_sparse, filter_cfg),
        }
        for kind, vol in outputs.items():
            files[f"{case}_{kind}"] = out / f"{case}_{kind}.cbv"
            write_volume(files[f"{case}_{kind}"], vol)
        for kind, proj in (("dense", dense), ("sparse", sparse)):
            files[f"{case}_{kind}"] = out / f"{case}_{kind}.cbp"
            write_projections(files[f"{case}_{kind}"], proj)
        cases.append({"id": case, "split": "train" if i < n_train else "test"})
        logger.info("simulated %s", case)
    files["geometry_sparse"] = out / "geometry_sparse.json"
    geom_sparse.save(files["geometry_sparse"])
    return {
        "payload": {
            "cases": cases,
            "views_factor": factor,
            "n_views_dense": geom.n_views,
            "n_views_sparse": geom_sparse.n_views,
        },
        "files": files,
    }


def cmd_train(cfg: dict, args) -> dict:
    out = Path(args.out)
    data = Dataset(_require_dir(cfg, "data", "train"))
    hqs_cfg = hqs_from_config(cfg)
    train_cfg = train_from_config(cfg, args.seed)
    arch = _build(UNetArch, cfg["arch"], "arch")
    filter_cfg = filter_from_config(cfg)
    ids = data.cases("train")
    if not ids:
        raise DataError("the dataset has no training cases")
    measurements, inits, targets = [], [], []
    geom = None
    for case in ids:
        proj, geom, fdk = data.sparse(case, args.views_factor, filter_cfg)
        measurements.append(proj)
        inits.append(fdk)
        targets.append(data.volume(case, "target"))
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = train_hqs_stages(measurements, geom, inits, targets, hqs_cfg, train_cfg, arch, seed=args.seed)
    seconds = time.perf_counter() - t0

    files = {}
    for stage_id, params in result.denoisers.items():
        files[f"denoiser_{stage_id}"] = out / f"denoiser_{stage_id}.cbdn"
        save_params(files[f"denoiser_{stage_id}"], params)
    for n, losses in enumerate(result.losses, start=1):
        key = f"losses_stage{n}"
        files[key] = out / f"{key}.csv"
        with open(files[key], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss"])
            w.writerows(enumerate(losses))
    stages = [
        {"stage": n, "id": sid, "file": f"denoiser_{sid}.cbdn"} for n, sid in enumerate(hqs_cfg.denoiser_ids, start=1)
    ]
    return {
        "payload": {
            "data": str(data.root.resolve()),
            "views_factor": args.views_factor or data.factor,
            "stages": stages,
            "hqs": asdict(hqs_cfg),
            "train_seconds": seconds,
        },
        "files": files,
    }


def _load_denoisers(models: Path, hqs_cfg: HQSConfig) -> dict:
    manifest = read_manifest(models)
    by_id = {s["id"]: s["file"] for s in manifest.get("stages", [])}
    missing = [sid for sid in dict.fromkeys(hqs_cfg.denoiser_ids) if not (sid in by_id and (models / by_id[sid]).is_file())]
    if missing:
        raise DataError(f"missing denoiser files for stage ids {missing} in {models}")
    return {sid: load_params(models / by_id[sid]) for sid in dict.fromkeys(hqs_cfg.denoiser_ids)}


def _methods(cfg: dict) -> list[str]:
    methods = cfg["method"]
    methods = [methods] if isinstance(methods, str) else list(methods)
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise InvalidSpecError(f"method must be drawn from {METHODS}, got {methods}")
    return methods


def _window(cfg: dict, vol: np.ndarray) -> tuple[float, float]:
    if cfg["window"] is not None:
        lo, hi = (float(v) for v in cfg["window"])
        return lo, hi
    return 0.0, float(np.percentile(vol, 99.9)) or 1.0


def _warm_up() -> None:
    """Load the compiled kernels so the first timed method does not pay for it."""
    g = desk_geometry(n_views=2, n=4, voxel_size=1.0)
    fdk_reconstruct(np.zeros(g.projection_shape), g)
    quadratic_mbir_baseline(np.zeros(g.projection_shape), g, 1.0, iters=1)
    unet_forward(init_params(UNetArch(depth=1, base_channels=1)), np.zeros((4, 4)))


def cmd_reconstruct(cfg: dict, args) -> dict:
    out = Path(args.out)
    data = Dataset(_require_dir(cfg, "data", "reconstruct"))
    methods = _methods(cfg)
    filter_cfg = filter_from_config(cfg)
    hqs_cfg = hqs_from_config(cfg)
    denoisers = None
    if "hqs" in methods:
        denoisers = _load_denoisers(_require_dir(cfg, "models", "reconstruct (method hqs)"), hqs_cfg)
    base = cfg["baseline"]
    ids = data.cases("test") or data.cases()
    out.mkdir(parents=True, exist_ok=True)
    _warm_up()

    files, runtimes, images, traces = {}, [], [], {}
    for case in ids:
        proj, geom, fdk_init = data.sparse(case, args.views_factor, filter_cfg)
        reference = data.volume(case, cfg["reference"]) if cfg["reference"] else None
        for method in methods:
            t0 = time.perf_counter()
            if method == "fdk":
                vol = fdk_reconstruct(proj, geom, filter_cfg)
            elif method == "baseline":
                vol = quadratic_mbir_baseline(proj, geom, float(base["lambda"]), int(base["iters"]))
            else:
                vol, trace = hqs_reconstruct(proj, geom, hqs_cfg, denoisers, fdk_init, reference, beta=args.beta)
            seconds = time.perf_counter() - t0
            vol.check_finite()
            key = f"{case}_{method}"
            files[key] = out / f"{key}.cbv"
            write_volume(files[key], vol)
            if method == "hqs":
                files[f"{key}_trace"] = out / f"{key}_trace.csv"
                trace.to_csv(files[f"{key}_trace"])
                traces[case] = trace.psnr
            runtimes.append({"volume_id": case, "method": method, "seconds": seconds})
            slices = cfg["slices"] if cfg["slices"] is not None else [geom.volume_shape[0] // 2]
            window = _window(cfg, reference.data if reference is not None else vol.data)
            for k in slices:
                name = f"{key}_z{int(k):03d}"
                files[name] = out / f"{name}.pgm"
                write_pgm(files[name], vol.data[int(k)], window)
                images.append({"file": files[name].name, "slice": int(k), "window": list(window)})
            logger.info("%s %s: %.2f s", case, method, seconds)
    return {
        "payload": {
            "data": str(data.root.resolve()),
            "methods": methods,
            "views_factor": args.views_factor or data.factor,
            "n_views": geom.n_views,
            "beta": args.beta if args.beta is not None else hqs_cfg.beta,
            "cases": ids,
            "runtimes": runtimes,
            "images": images,
            "hqs_psnr_per_iteration": traces,
        },
        "files": files,
    }


def cmd_evaluate(cfg: dict, args) -> dict:
    out = Path(args.out)
    recon_dirs = cfg.get("recon") or []
    if isinstance(recon_dirs, str):
        recon_dirs = [recon_dirs]
    if not recon_dirs:
        raise InvalidSpecError("evaluate needs 'recon': a list of reconstruct output directories")
    rows, runtimes = [], {}
    for directory in recon_dirs:
        directory = Path(directory)
        manifest = read_manifest(directory)
        data = Dataset(manifest["data"])
        for case in manifest["cases"]:
            ref = data.volume(case, cfg["reference"]).data
            rng = float(ref.max()) or 1.0
            for method in manifest["methods"]:
                entry = manifest["files"].get(f"{case}_{method}")
                if entry is None or not (directory / entry["path"]).is_file():
                    raise DataError(f"missing reconstruction {case}_{method} in {directory}")
                vol = read_volume(directory / entry["path"]).data
                if vol.shape != ref.shape:
                    raise DimensionError(f"{case}_{method}: shape {vol.shape} vs reference {ref.shape}")
                label = method if len(recon_dirs) == 1 else f"{method}@{directory.name}"
                rows.append(
                    {"volume_id": case, "method": label, "region": "volume",
                     "psnr_db": psnr(vol, ref, rng), "ssim": ssim_volume(vol, ref, rng)}
                )
                for j, (k, r, c, size) in enumerate(cfg["zoom_patches"]):
                    a, b = vol[k, r : r + size, c : c + size], ref[k, r : r + size, c : c + size]
                    rows.append(
                        {"volume_id": case, "method": label, "region": f"patch{j}",
                         "psnr_db": psnr(a, b, rng), "ssim": ssim(a, b, data_range=rng)}
                    )
        for item in manifest["runtimes"]:
            label = item["method"] if len(recon_dirs) == 1 else f"{item['method']}@{directory.name}"
            runtimes.setdefault(label, []).append(item["seconds"])
    out.mkdir(parents=True, exist_ok=True)
    files = {"metrics": out / "metrics.csv", "runtimes": out / "runtimes.csv"}
    write_metrics_csv(files["metrics"], rows)
    table = [{"method": m, "n_volumes": len(s), "mean_seconds": float(np.mean(s))} for m, s in runtimes.items()]
    with open(files["runtimes"], "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["method", "n_volumes", "mean_seconds"])
        w.writeheader()
        w.writerows(table)
    for r in rows:
        if r["region"] == "volume":
            print(f"{r['volume_id']} {r['method']:>12s}  PSNR {r['psnr_db']:7.2f} dB  SSIM {r['ssim']:.4f}")
    for t in table:
        print(f"runtime {t['method']:>12s}  {t['mean_seconds']:.3f} s")
    return {"payload": {"recon": [str(d) for d in recon_dirs], "runtime_table": table}, "files": files}


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hqsct", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
        p.add_argument("--beta", type=float, default=None, help="inference-time override of the HQS beta")
        p.add_argument("--views-factor", type=int, default=None, help="view subsampling factor")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(args) -> None:
    cfg = load_config(args.config)
    validate_config(cfg)
    if args.seed < 0:
        raise InvalidSpecError("--seed must be non-negative")
    if args.threads is not None and args.threads < 1:
        raise InvalidSpecError("--threads must be positive")
    if args.views_factor is not None and args.views_factor < 1:
        raise InvalidSpecError("--views-factor must be positive")
    if args.beta is not None and not args.beta > 0:
        raise InvalidSpecError("--beta must be positive")
    limits = nullcontext()
    if args.threads is not None:
        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
        limits = threadpool_limits(args.threads)
    with limits:
        result = COMMANDS[args.command](cfg, args)
    payload = {
        "command": args.command,
        "config": cfg,
        "seed": args.seed,
        "threads": numba.get_num_threads(),
        "beta_override": args.beta,
        "views_factor_override": args.views_factor,
        **result["payload"],
    }
    write_manifest(Path(args.out), payload, result["files"])


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        run(args)
    except InvalidSpecError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FormatError, DimensionError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
