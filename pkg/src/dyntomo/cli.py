"""Command line front end: simulate, reconstruct, subsample, metrics.

One YAML document configures a whole pipeline run through the sections
scene, motion, geometry, schedule, noise, solver and output; unknown keys
are rejected and the fully resolved document is echoed into every output
directory. Exit codes: 0 ok, 2 configuration, 3 I/O, 4 solver divergence
(partial results are still written).
"""

import argparse
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .container import (
    load_image_stack,
    load_sinogram,
    save_image_stack,
    save_intensity_stack,
    save_sinogram,
)
from .errors import (
    AngleLookupError,
    ConfigError,
    DataError,
    PartitionError,
    ScheduleIndexError,
    ShapeError,
    SolverDiverged,
)
from .geometry import (
    CLOCKWISE,
    COUNTER_CLOCKWISE,
    Continuous,
    Custom,
    FanBeamGeometry,
    Sequential,
    stempo_geometry,
)
from .phantom import (
    ConstantStep,
    Disk,
    GroundTruth,
    Jump,
    Periodic,
    PhantomScene,
    Static,
    generate_ground_truth,
    stempo_scene,
)
from .recon import (
    STOP_DIVERGED,
    FramePartition,
    ReconVolume,
    crop_pad_resample,
    fbp_volume,
    lps,
    metrics,
    pdfp_wavelet,
)
from .sinogram import Sinogram, partition_frames, simulate_measurement, subsample
from .transforms import WaveletSpec, default_levels

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_SOLVER = 4

PRESETS = ("stempo-static", "stempo-cont360", "stempo-seq8x45")

RESOLVED_CONFIG_NAME = "config.resolved.yaml"
MANIFEST_NAME = "manifest.json"


# ---------------------------------------------------------------------------
# configuration


def _check_keys(section: dict, allowed, where: str):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)} in {where}")


def _section(raw: dict, name: str) -> dict:
    part = raw.get(name) or {}
    if not isinstance(part, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return part


def _resolve_scene(s: dict) -> dict:
    kind = s.get("kind", "stempo")
    base = ("kind", "grid_n", "pixel_size_mm", "supersample")
    if kind == "stempo":
        _check_keys(s, base + ("mu_pipe", "mu_hdpe", "block_start_mm"), "scene")
    elif kind == "disk":
        _check_keys(s, base + ("radius_mm", "attenuation", "center_mm"), "scene")
    else:
        raise ConfigError(f"unknown scene kind {kind!r}")
    out = {
        "kind": kind,
        "grid_n": int(s.get("grid_n", 256)),
        "pixel_size_mm": None if s.get("pixel_size_mm") is None
        else float(s["pixel_size_mm"]),
        "supersample": int(s.get("supersample", 4)),
    }
    if out["grid_n"] < 8:
        raise ConfigError(f"scene.grid_n must be >= 8, got {out['grid_n']}")
    if kind == "stempo":
        out["mu_pipe"] = float(s.get("mu_pipe", 0.8))
        out["mu_hdpe"] = float(s.get("mu_hdpe", 1.0))
        start = s.get("block_start_mm", (-17.95, -12.0))
        out["block_start_mm"] = [float(start[0]), float(start[1])]
    else:
        out["radius_mm"] = float(s.get("radius_mm", 10.0))
        out["attenuation"] = float(s.get("attenuation", 1.0))
        center = s.get("center_mm", (0.0, 0.0))
        out["center_mm"] = [float(center[0]), float(center[1])]
    return out


def _resolve_motion(s: dict) -> dict:
    kind = s.get("kind", "static")
    allowed = {
        "static": ("kind",),
        "constant_step": ("kind", "direction", "step_mm"),
        "periodic": ("kind", "direction", "amplitude_mm", "period_frames"),
        "jump": ("kind", "direction", "offset_mm", "jump_frame"),
    }
    if kind not in allowed:
        raise ConfigError(f"unknown motion kind {kind!r}")
    _check_keys(s, allowed[kind], "motion")
    out = {"kind": kind}
    if kind != "static":
        d = s.get("direction", (1.0, 0.0))
        out["direction"] = [float(d[0]), float(d[1])]
    if kind == "constant_step":
        out["step_mm"] = float(s.get("step_mm", 0.1))
    elif kind == "periodic":
        out["amplitude_mm"] = float(s.get("amplitude_mm", 5.0))
        out["period_frames"] = float(s.get("period_frames", 90.0))
    elif kind == "jump":
        out["offset_mm"] = float(s.get("offset_mm", 5.0))
        out["jump_frame"] = int(s.get("jump_frame", 0))
    return out


def _resolve_geometry(s: dict) -> dict:
    _check_keys(s, ("binning", "sod_mm", "sdd_mm", "detector_count",
                    "detector_pitch_mm", "rotation_sense"), "geometry")
    binning = int(s.get("binning", 8))
    base = stempo_geometry(binning=binning)
    sense = s.get("rotation_sense", base.rotation_sense)
    if sense not in (COUNTER_CLOCKWISE, CLOCKWISE):
        raise ConfigError(f"unknown rotation_sense {sense!r}")
    return {
        "binning": binning,
        "sod_mm": float(s.get("sod_mm", base.sod_mm)),
        "sdd_mm": float(s.get("sdd_mm", base.sdd_mm)),
        "detector_count": int(s.get("detector_count", base.detector_count)),
        "detector_pitch_mm": float(s.get("detector_pitch_mm",
                                         base.detector_pitch_mm)),
        "rotation_sense": sense,
    }


def _resolve_schedule(s: dict) -> dict:
    kind = s.get("kind", "continuous")
    if kind == "continuous":
        _check_keys(s, ("kind", "n_proj", "step_deg"), "schedule")
        return {"kind": kind, "n_proj": int(s.get("n_proj", 360)),
                "step_deg": float(s.get("step_deg", 1.0))}
    if kind == "sequential":
        _check_keys(s, ("kind", "n_proj", "step_deg", "rotations"), "schedule")
        return {"kind": kind, "n_proj": int(s.get("n_proj", 360)),
                "step_deg": float(s.get("step_deg", 8.0)),
                "rotations": int(s.get("rotations", 8))}
    if kind == "custom":
        _check_keys(s, ("kind", "angles_deg"), "schedule")
        if "angles_deg" not in s:
            raise ConfigError("custom schedule needs angles_deg")
        return {"kind": kind,
                "angles_deg": [float(a) for a in s["angles_deg"]]}
    raise ConfigError(f"unknown schedule kind {kind!r}")


def _resolve_noise(s: dict) -> dict:
    _check_keys(s, ("photons_i0", "seed"), "noise")
    photons = s.get("photons_i0", 1e5)
    if photons in (None, "none"):
        photons = None
    else:
        photons = float(photons)
        if not photons > 0:
            raise ConfigError(f"photons_i0 must be positive, got {photons}")
    return {"photons_i0": photons, "seed": int(s.get("seed", 0))}


def _resolve_wavelet(s) -> "dict | None":
    if s is None:
        return None
    _check_keys(s, ("family", "levels", "dims"), "solver wavelet")
    out = {}
    if "family" in s:
        out["family"] = str(s["family"])
    if "levels" in s:
        out["levels"] = int(s["levels"])
    if "dims" in s:
        out["dims"] = int(s["dims"])
    return out


def _resolve_solver(s: dict) -> dict:
    _check_keys(s, ("n", "pixel_size_mm", "frames", "per_frame", "stride",
                    "fbp", "pdfp", "lps"), "solver")

    def opt_int(key):
        return None if s.get(key) is None else int(s[key])

    f = _section(s, "fbp")
    _check_keys(f, ("filter", "fov_mask"), "solver.fbp")
    p = _section(s, "pdfp")
    _check_keys(p, ("alpha", "alpha_mode", "sparsity_fraction", "max_iters",
                    "tol", "gamma", "nonneg", "wavelet"), "solver.pdfp")
    l = _section(s, "lps")
    _check_keys(l, ("mu_l", "mu_s", "max_iters", "tol", "step", "wavelet"),
                "solver.lps")
    return {
        "n": opt_int("n"),
        "pixel_size_mm": None if s.get("pixel_size_mm") is None
        else float(s["pixel_size_mm"]),
        "frames": opt_int("frames"),
        "per_frame": opt_int("per_frame"),
        "stride": opt_int("stride"),
        "fbp": {
            "filter": str(f.get("filter", "ramlak")),
            "fov_mask": bool(f.get("fov_mask", True)),
        },
        "pdfp": {
            "alpha": float(p.get("alpha", 0.0)),
            "alpha_mode": str(p.get("alpha_mode", "fixed")),
            "sparsity_fraction": float(p.get("sparsity_fraction", 0.25)),
            "max_iters": int(p.get("max_iters", 500)),
            "tol": float(p.get("tol", 1e-5)),
            "gamma": None if p.get("gamma") is None else float(p["gamma"]),
            "nonneg": bool(p.get("nonneg", True)),
            "wavelet": _resolve_wavelet(p.get("wavelet")),
        },
        "lps": {
            "mu_l": float(l.get("mu_l", 0.0)),
            "mu_s": float(l.get("mu_s", 0.0)),
            "max_iters": int(l.get("max_iters", 120)),
            "tol": float(l.get("tol", 1e-5)),
            "step": None if l.get("step") is None else float(l["step"]),
            "wavelet": _resolve_wavelet(l.get("wavelet")),
        },
    }


def _resolve_output(s: dict) -> dict:
    _check_keys(s, ("save_intensities", "previews"), "output")
    return {"save_intensities": bool(s.get("save_intensities", False)),
            "previews": bool(s.get("previews", True))}


def resolve_config(raw) -> dict:
    """Fill in every default and reject anything unrecognised."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys(raw, ("scene", "motion", "geometry", "schedule", "noise",
                      "solver", "output"), "config")
    return {
        "scene": _resolve_scene(_section(raw, "scene")),
        "motion": _resolve_motion(_section(raw, "motion")),
        "geometry": _resolve_geometry(_section(raw, "geometry")),
        "schedule": _resolve_schedule(_section(raw, "schedule")),
        "noise": _resolve_noise(_section(raw, "noise")),
        "solver": _resolve_solver(_section(raw, "solver")),
        "output": _resolve_output(_section(raw, "output")),
    }


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(PRESETS)}"
        )
    text = resources.files("dyntomo").joinpath(
        f"presets/{name}.yaml").read_text()
    return resolve_config(yaml.safe_load(text))


def load_config_file(path: str) -> dict:
    with open(path, "r") as fh:
        return resolve_config(yaml.safe_load(fh))


def _config_for(args) -> dict:
    if getattr(args, "preset", None):
        return load_preset(args.preset)
    if getattr(args, "config", None):
        return load_config_file(args.config)
    return resolve_config({})


# ---------------------------------------------------------------------------
# builders


def build_geometry(cfg: dict) -> FanBeamGeometry:
    return FanBeamGeometry(
        sod_mm=cfg["sod_mm"], sdd_mm=cfg["sdd_mm"],
        detector_count=cfg["detector_count"],
        detector_pitch_mm=cfg["detector_pitch_mm"],
        rotation_sense=cfg["rotation_sense"],
    )


def build_schedule(cfg: dict):
    if cfg["kind"] == "continuous":
        return Continuous(cfg["n_proj"], cfg["step_deg"])
    if cfg["kind"] == "sequential":
        return Sequential(cfg["n_proj"], cfg["step_deg"], cfg["rotations"])
    return Custom(cfg["angles_deg"])


def build_motion(cfg: dict):
    kind = cfg["kind"]
    if kind == "static":
        return Static()
    d = tuple(cfg["direction"])
    if kind == "constant_step":
        return ConstantStep(direction=d, step_mm=cfg["step_mm"])
    if kind == "periodic":
        return Periodic(direction=d, amplitude_mm=cfg["amplitude_mm"],
                        period_frames=cfg["period_frames"])
    return Jump(direction=d, offset_mm=cfg["offset_mm"],
                jump_frame=cfg["jump_frame"])


def build_scene(scene_cfg: dict, motion) -> PhantomScene:
    if scene_cfg["kind"] == "stempo":
        return stempo_scene(motion=motion, mu_pipe=scene_cfg["mu_pipe"],
                            mu_hdpe=scene_cfg["mu_hdpe"],
                            block_start_mm=tuple(scene_cfg["block_start_mm"]))
    disk = Disk(center_mm=tuple(scene_cfg["center_mm"]),
                radius_mm=scene_cfg["radius_mm"],
                attenuation=scene_cfg["attenuation"])
    return PhantomScene(primitives=(disk,), block=None, motion=motion)


def _build_wavelet(cfg, n_frames: int, default_family: str,
                   fallback_dims: int) -> "WaveletSpec | None":
    """None config means let the solver pick; partial configs are completed."""
    if cfg is None:
        return None
    dims = cfg.get("dims", fallback_dims if n_frames > 1 else 2)
    return WaveletSpec(
        family=cfg.get("family", default_family),
        levels=cfg.get("levels", default_levels(dims)),
        dims=dims,
    )


# ---------------------------------------------------------------------------
# output helpers


def _echo_config(outdir: Path, cfg: dict):
    text = yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False)
    (outdir / RESOLVED_CONFIG_NAME).write_text(text)


def _write_manifest(outdir: Path, command: str, names):
    entries = {}
    for name in sorted(names):
        entries[name] = (outdir / name).stat().st_size
    doc = {"command": command, "files": entries}
    (outdir / MANIFEST_NAME).write_text(
        json.dumps(doc, indent=1, sort_keys=True) + "\n")


def write_pgm(path: Path, img: np.ndarray):
    """8-bit binary PGM."""
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def write_previews(outdir: Path, frames: np.ndarray) -> list:
    """One PGM per frame, windowed by the global min and max of the stack."""
    outdir.mkdir(parents=True, exist_ok=True)
    lo = float(frames.min())
    hi = float(frames.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    written = []
    for t in range(frames.shape[0]):
        img = np.clip(np.rint((frames[t] - lo) * scale), 0.0, 255.0)
        name = f"frame_{t:04d}.pgm"
        write_pgm(outdir / name, img.astype(np.uint8))
        written.append(f"{outdir.name}/{name}")
    return written


def _container_names(base_name: str) -> list:
    return [base_name + ".dtomo1", base_name + ".dtomo1.bin"]


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg = _config_for(args)
    if args.noise is not None:
        cfg["noise"] = _resolve_noise({"photons_i0": args.noise,
                                       "seed": cfg["noise"]["seed"]})
    if args.seed is not None:
        cfg["noise"]["seed"] = int(args.seed)

    geo = build_geometry(cfg["geometry"])
    sched = build_schedule(cfg["schedule"])
    motion = build_motion(cfg["motion"])
    scene = build_scene(cfg["scene"], motion)

    grid_n = cfg["scene"]["grid_n"]
    if cfg["scene"]["pixel_size_mm"] is None:
        cfg["scene"]["pixel_size_mm"] = geo.fan_width_at_origin_mm / grid_n
    pix = cfg["scene"]["pixel_size_mm"]
    n_frames = 1 if cfg["motion"]["kind"] == "static" else sched.n_proj
    gt = generate_ground_truth(scene, grid_n, pix, n_frames,
                               supersample=cfg["scene"]["supersample"])

    photons = cfg["noise"]["photons_i0"]
    stack, sino = simulate_measurement(
        gt, geo, sched,
        photons_i0=math.inf if photons is None else photons,
        seed=cfg["noise"]["seed"])

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    names = []
    save_sinogram(str(outdir / "sinogram"), sino)
    names += _container_names("sinogram")
    save_image_stack(str(outdir / "ground_truth"), gt.frames, pix,
                     block_centers_mm=gt.block_centers_mm, block=gt.block,
                     geometry=geo, schedule=sched,
                     binning=cfg["geometry"]["binning"])
    names += _container_names("ground_truth")
    if cfg["output"]["save_intensities"]:
        save_intensity_stack(str(outdir / "intensities"), stack, geo, sched)
        names += _container_names("intensities")
    if gt.block_centers_mm is not None:
        lines = ["frame,x_mm,y_mm"]
        for t, (x, y) in enumerate(gt.block_centers_mm):
            lines.append(f"{t},{x:.9g},{y:.9g}")
        (outdir / "trajectory.csv").write_text("\n".join(lines) + "\n")
        names.append("trajectory.csv")

    _echo_config(outdir, cfg)
    names.append(RESOLVED_CONFIG_NAME)
    _write_manifest(outdir, "simulate", names)
    print(f"simulate: wrote {sino.data.shape[0]}x{sino.data.shape[1]} "
          f"sinogram and {n_frames}-frame ground truth to {outdir}")
    return EXIT_OK


def _derive_partition(solver: dict, total_proj: int) -> "FramePartition | None":
    frames = solver["frames"]
    per_frame = solver["per_frame"]
    stride = solver["stride"]
    if frames is None and per_frame is None and stride is None:
        return None
    if frames is None or per_frame is None:
        raise ConfigError("partitioned reconstruction needs frames and per_frame")
    if stride is None:
        if frames > 1:
            stride = (total_proj - per_frame) // (frames - 1)
        else:
            stride = per_frame
        solver["stride"] = stride
    return FramePartition(n_frames=frames, per_frame=per_frame, stride=stride)


def _report_doc(report, extra: dict) -> dict:
    doc = report.to_dict()
    doc.update(extra)
    return doc


def cmd_reconstruct(args) -> int:
    cfg = _config_for(args)
    solver = cfg["solver"]

    for key in ("n", "frames", "per_frame", "stride"):
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            solver[key] = int(val)
    if args.pixel_size is not None:
        solver["pixel_size_mm"] = float(args.pixel_size)

    algo = args.algorithm
    if algo == "fbp":
        if args.filter is not None:
            solver["fbp"]["filter"] = args.filter
    elif algo == "pdfp":
        p = solver["pdfp"]
        for flag, key in (("alpha", "alpha"), ("alpha_mode", "alpha_mode"),
                          ("sparsity_fraction", "sparsity_fraction"),
                          ("max_iters", "max_iters"), ("tol", "tol"),
                          ("gamma", "gamma")):
            val = getattr(args, flag)
            if val is not None:
                p[key] = val
        if args.no_nonneg:
            p["nonneg"] = False
        if args.wavelet_family or args.wavelet_levels or args.wavelet_dims:
            w = p["wavelet"] or {}
            if args.wavelet_family:
                w["family"] = args.wavelet_family
            if args.wavelet_levels:
                w["levels"] = args.wavelet_levels
            if args.wavelet_dims:
                w["dims"] = args.wavelet_dims
            p["wavelet"] = w
    elif algo == "lps":
        l = solver["lps"]
        for flag, key in (("mu_l", "mu_l"), ("mu_s", "mu_s"),
                          ("max_iters", "max_iters"), ("tol", "tol"),
                          ("step", "step")):
            val = getattr(args, flag)
            if val is not None:
                l[key] = val
        if args.wavelet_family or args.wavelet_levels or args.wavelet_dims:
            w = l["wavelet"] or {}
            if args.wavelet_family:
                w["family"] = args.wavelet_family
            if args.wavelet_levels:
                w["levels"] = args.wavelet_levels
            if args.wavelet_dims:
                w["dims"] = args.wavelet_dims
            l["wavelet"] = w

    sino = load_sinogram(args.sinogram)
    geo = sino.geometry
    if solver["n"] is None:
        solver["n"] = geo.detector_count
    n = solver["n"]
    if solver["pixel_size_mm"] is None:
        solver["pixel_size_mm"] = geo.fan_width_at_origin_mm / n
    pix = solver["pixel_size_mm"]

    partition = _derive_partition(solver, sino.data.shape[0])
    if partition is not None:
        parts = [p for p, _ in partition_frames(
            sino, partition.n_frames, partition.per_frame, partition.stride)]
    else:
        parts = [sino]

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    names = []
    report = None

    if algo == "fbp":
        if partition is not None:
            frames = np.stack([
                fbp_volume(part, n, pixel_size_mm=pix,
                           filter_name=solver["fbp"]["filter"],
                           fov_mask=solver["fbp"]["fov_mask"]).frames[0]
                for part in parts])
            vol = ReconVolume(frames=frames, pixel_size_mm=pix,
                              partition=partition)
        else:
            vol = fbp_volume(sino, n, pixel_size_mm=pix,
                             filter_name=solver["fbp"]["filter"],
                             fov_mask=solver["fbp"]["fov_mask"])
        stacks = {"recon": vol}
    elif algo == "pdfp":
        p = solver["pdfp"]
        wav = _build_wavelet(p["wavelet"], len(parts), "haar", 3)
        vol, report = pdfp_wavelet(
            parts, n, pix, wavelet=wav, alpha=p["alpha"],
            alpha_mode=p["alpha_mode"],
            sparsity_fraction=p["sparsity_fraction"],
            max_iters=p["max_iters"], tol=p["tol"], gamma=p["gamma"],
            nonneg=p["nonneg"], partition=partition)
        stacks = {"recon": vol}
    else:
        l = solver["lps"]
        wav = _build_wavelet(l["wavelet"], len(parts), "db4", 2)
        low, sparse, report = lps(
            parts, n, pix, wavelet=wav, mu_l=l["mu_l"], mu_s=l["mu_s"],
            max_iters=l["max_iters"], tol=l["tol"], step=l["step"],
            partition=partition)
        total = ReconVolume(frames=low.frames + sparse.frames,
                            pixel_size_mm=pix, partition=partition)
        stacks = {"recon": total, "low": low, "sparse": sparse}

    for name, stack_vol in stacks.items():
        save_image_stack(str(outdir / name), stack_vol.frames, pix,
                         geometry=geo, schedule=sino.schedule,
                         binning=sino.binning)
        names += _container_names(name)

    extra = {"n": n, "pixel_size_mm": pix}
    if partition is not None:
        extra["partition"] = partition.to_dict()
    if report is not None:
        (outdir / "report.json").write_text(
            json.dumps(_report_doc(report, extra), indent=1, sort_keys=True)
            + "\n")
        names.append("report.json")

    if cfg["output"]["previews"]:
        names += write_previews(outdir / "previews", stacks["recon"].frames)

    _echo_config(outdir, cfg)
    names.append(RESOLVED_CONFIG_NAME)
    _write_manifest(outdir, f"reconstruct-{algo}", names)

    if report is not None and report.stop_reason == STOP_DIVERGED:
        raise SolverDiverged(
            f"{algo} diverged after {report.iterations} iterations; "
            f"partial results written to {outdir}")
    print(f"reconstruct-{algo}: wrote {stacks['recon'].frames.shape[0]} "
          f"frame(s) of {n}x{n} to {outdir}")
    return EXIT_OK


def parse_angle_spec(spec: str, schedule) -> "list | np.ndarray":
    """Angle grammar: "a,b,c" floats, "start:step:stop" inclusive, "every:k"."""
    spec = spec.strip()
    if spec.startswith("every:"):
        k = int(spec[len("every:"):])
        if k < 1:
            raise ConfigError(f"every:k needs k >= 1, got {k}")
        return ("rows", np.arange(0, schedule.n_proj, k))
    if ":" in spec:
        fields = spec.split(":")
        if len(fields) != 3:
            raise ConfigError(
                f"range spec must be start:step:stop, got {spec!r}")
        start, step, stop = (float(v) for v in fields)
        if step <= 0:
            raise ConfigError(f"range step must be positive, got {step}")
        if stop < start:
            raise ConfigError(f"range stop {stop} is below start {start}")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return ("angles", [start + i * step for i in range(count)])
    try:
        angles = [float(v) for v in spec.split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigError(f"cannot parse angle list {spec!r}")
    if not angles:
        raise ConfigError("empty angle list")
    return ("angles", angles)


def cmd_subsample(args) -> int:
    sino = load_sinogram(args.sinogram)
    mode, sel = parse_angle_spec(args.angles, sino.schedule)
    if mode == "rows":
        rows = sel
        fmap = sino.frame_of_projection
        sub = Sinogram(
            data=sino.data[rows].copy(),
            geometry=sino.geometry,
            schedule=Custom(list(sino.angles_deg()[rows])),
            binning=sino.binning,
            frame_of_projection=None if fmap is None else fmap[rows].copy(),
        )
    else:
        sub = subsample(sino, sel)
    save_sinogram(str(Path(args.out)), sub)
    print(f"subsample: kept {sub.data.shape[0]} of {sino.data.shape[0]} "
          f"projections")
    return EXIT_OK


def _json_safe(value):
    if value is None:
        return None
    f = float(value)
    if math.isinf(f):
        return "inf"
    return f


def cmd_metrics(args) -> int:
    rec = load_image_stack(args.recon)
    tru = load_image_stack(args.truth)

    truth_frames = tru.frames
    resample = None
    if truth_frames.shape[0] != rec.frames.shape[0]:
        raise ConfigError(
            f"frame counts differ: truth {truth_frames.shape[0]}, "
            f"reconstruction {rec.frames.shape[0]}")
    if truth_frames.shape != rec.frames.shape:
        ratio = rec.pixel_size_mm / tru.pixel_size_mm
        factor = int(round(ratio))
        if factor < 1 or abs(ratio - factor) > 1e-6:
            raise ConfigError(
                f"cannot reconcile grids: truth pixel {tru.pixel_size_mm} mm "
                f"vs reconstruction pixel {rec.pixel_size_mm} mm")
        n_src = truth_frames.shape[1]
        n_tgt = rec.frames.shape[1]
        truth_frames = crop_pad_resample(truth_frames, n_tgt, factor)
        if factor > 1:
            kept = n_src - 20 * factor
            resample = f"{n_src} -> {kept} -> {kept // factor} -> {n_tgt}"
        else:
            resample = f"{n_src} -> {n_tgt}"
        print(f"metrics: resampled truth grid {resample}", file=sys.stderr)

    truth = GroundTruth(frames=truth_frames,
                        pixel_size_mm=rec.pixel_size_mm,
                        block_centers_mm=tru.block_centers_mm,
                        block=tru.block)
    vol = ReconVolume(frames=rec.frames, pixel_size_mm=rec.pixel_size_mm)
    m = metrics(vol, truth, dilate_px=args.dilate_px)

    frames = []
    for t in range(vol.n_frames):
        entry = {"frame": t,
                 "psnr_db": _json_safe(m["psnr_db"][t]),
                 "rel_l2": _json_safe(m["rel_l2"][t])}
        if m["centroid_err_mm"] is not None:
            entry["centroid_err_mm"] = _json_safe(m["centroid_err_mm"][t])
        frames.append(entry)
    doc = {"frames": frames, "pixel_size_mm": rec.pixel_size_mm}
    if resample is not None:
        doc["resample"] = resample
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dyntomo",
        description="Fan-beam CT simulation and dynamic reconstruction.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate a measurement")
    group = sim.add_mutually_exclusive_group(required=True)
    group.add_argument("--config", help="YAML run configuration")
    group.add_argument("--preset", choices=PRESETS, help="bundled configuration")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--noise", help='photon count override or "none"')
    sim.add_argument("--seed", type=int, help="noise seed override")
    sim.set_defaults(func=cmd_simulate)

    rec = sub.add_parser("reconstruct", help="reconstruct a sinogram")
    rec.add_argument("algorithm", choices=("fbp", "pdfp", "lps"))
    rec.add_argument("--sinogram", required=True, help="DTOMO1 sinogram path")
    rec.add_argument("--out", required=True, help="output directory")
    group = rec.add_mutually_exclusive_group()
    group.add_argument("--config", help="YAML run configuration")
    group.add_argument("--preset", choices=PRESETS, help="bundled configuration")
    rec.add_argument("--n", type=int, help="grid size (default detector count)")
    rec.add_argument("--pixel-size", type=float, dest="pixel_size",
                     help="pixel size in mm (default spans the scan FOV)")
    rec.add_argument("--frames", type=int, help="number of temporal frames")
    rec.add_argument("--per-frame", type=int, dest="per_frame",
                     help="projections per frame window")
    rec.add_argument("--stride", type=int,
                     help="window stride (default evenly spaced)")
    rec.add_argument("--filter", choices=("ramlak", "hamming"),
                     help="fbp filter")
    rec.add_argument("--alpha", type=float, help="pdfp sparsity weight")
    rec.add_argument("--alpha-mode", choices=("fixed", "sparsity_target"),
                     dest="alpha_mode")
    rec.add_argument("--sparsity-fraction", type=float,
                     dest="sparsity_fraction")
    rec.add_argument("--max-iters", type=int, dest="max_iters")
    rec.add_argument("--tol", type=float)
    rec.add_argument("--gamma", type=float, help="pdfp step size")
    rec.add_argument("--no-nonneg", action="store_true", dest="no_nonneg",
                     help="drop the pdfp nonnegativity constraint")
    rec.add_argument("--mu-l", type=float, dest="mu_l",
                     help="low-rank weight (lps)")
    rec.add_argument("--mu-s", type=float, dest="mu_s",
                     help="sparse weight (lps)")
    rec.add_argument("--step", type=float, help="lps step size")
    rec.add_argument("--wavelet-family", dest="wavelet_family")
    rec.add_argument("--wavelet-levels", type=int, dest="wavelet_levels")
    rec.add_argument("--wavelet-dims", type=int, dest="wavelet_dims")
    rec.set_defaults(func=cmd_reconstruct)

    subs = sub.add_parser("subsample", help="select projections by angle")
    subs.add_argument("--sinogram", required=True)
    subs.add_argument("--angles", required=True,
                      help='"a,b,c", "start:step:stop" or "every:k"')
    subs.add_argument("--out", required=True, help="output container base")
    subs.set_defaults(func=cmd_subsample)

    met = sub.add_parser("metrics", help="compare a reconstruction to truth")
    met.add_argument("--recon", required=True)
    met.add_argument("--truth", required=True)
    met.add_argument("--out", help="also write the JSON report here")
    met.add_argument("--dilate-px", type=int, default=2, dest="dilate_px")
    met.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = ""
        if mark is not None:
            where = f" (line {mark.line + 1}, column {mark.column + 1})"
        print(f"config parse error{where}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ShapeError, PartitionError, ScheduleIndexError,
            AngleLookupError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverDiverged as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
