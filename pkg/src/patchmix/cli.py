"""Command-line front end for dataset-scale augmentation.

Subcommands: ``partition``, ``score``, ``mix``, ``perturb``, ``stats``.
Every command is deterministic under ``--seed`` and rewrites its outputs
byte-identically; per-file problems are warnings unless ``--strict``
promotes them to a failing exit code.

Exit codes: 0 success (warnings allowed), 1 validation failure, 2 empty or
missing input.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assignment import patch_assignment_centers, patch_assignment_full, point_assignment
from .core import PointCloud, load_cloud, normalize_cloud, save_cloud, _atomic_write
from .errors import PatchMixError
from .mixing import (MixParams, batch_mix, manifest_row, mix_block, mix_patch, mix_point,
                     read_manifest, write_manifest)
from .patching import partition
from .perturb import TRANSFORMS, drop_points, jitter, random_rotation, scale
from .scoring import read_score_cache, scores_from_attention_file, uniform_scores, write_score_cache

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NO_INPUT = 2

_CLOUD_SUFFIXES = (".xyz", ".ppmx")

_DEFAULTS = {
    "seed": 0,
    "patch_size": 32,
    "patches": None,
    "beta": 1.5,
    "level": "patch",
    "target_mode": "score",
    "assign": "centers",
    "count": 16,
    "workers": 1,
    "pair_strategy": "shuffle",
    "lambda_sweep": None,
    "normalize": False,
    "strict": False,
    "sigma": 0.01,
    "axis": "z",
    "max_angle": 30.0,
    "factor": 2.0,
    "drop_ratio": 0.2,
}

_CHOICES = {
    "level": ("patch", "block", "point"),
    "target_mode": ("score", "linear"),
    "assign": ("centers", "full"),
    "pair_strategy": ("shuffle", "all-pairs-sample"),
    "axis": ("x", "y", "z"),
}


@dataclass
class RunConfig:
    """Resolved settings of one invocation (flags over config file over defaults)."""

    command: str
    inputs: list[Path]
    output: Path | None
    scores: Path | None
    manifest: Path | None
    transform: str | None
    seed: int
    patch_size: int
    patches: int | None
    beta: float
    level: str
    target_mode: str
    assign: str
    count: int
    workers: int
    pair_strategy: str
    lambda_sweep: list[float] | None
    normalize: bool
    strict: bool
    sigma: float
    axis: str
    max_angle: float
    factor: float
    drop_ratio: float


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _error(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--input", action="append", metavar="PATH",
                        help="input file or directory (repeatable)")
    shared.add_argument("--output", metavar="PATH", help="output directory or file")
    shared.add_argument("--config", metavar="PATH",
                        help="JSON config file; explicit flags win over its values")
    shared.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    shared.add_argument("--patch-size", type=int, default=None, metavar="S",
                        help="points per patch (default 32)")
    shared.add_argument("--patches", type=int, default=None, metavar="P",
                        help="patch count (default N / patch-size)")
    shared.add_argument("--beta", type=float, default=None,
                        help="Beta(beta, beta) shape for the mixing ratio (default 1.5)")
    shared.add_argument("--level", default=None, help="mixing level: patch, block or point")
    shared.add_argument("--target-mode", dest="target_mode", default=None,
                        help="target generation: score or linear")
    shared.add_argument("--assign", default=None,
                        help="patch assignment mode: centers or full")
    shared.add_argument("--count", type=int, default=None,
                        help="number of mixed samples to emit (default 16)")
    shared.add_argument("--lambda-sweep", dest="lambda_sweep", default=None, metavar="L1,L2,...",
                        help="emit one mix per fixed lambda on one pair instead of sampling")
    shared.add_argument("--strict", action="store_true", default=None,
                        help="treat per-file warnings as a failing exit code")
    shared.add_argument("--normalize", action="store_true", default=None,
                        help="center clouds and scale to the unit sphere before processing")
    shared.add_argument("--workers", type=int, default=None,
                        help="parallel workers for mixing (results identical to serial)")

    parser = argparse.ArgumentParser(
        prog="patchmix",
        description="Patch-level point cloud mixing with attention-derived soft targets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("partition", parents=[shared],
                   help="split clouds into fixed-size patches and write membership manifests")
    sub.add_parser("score", parents=[shared],
                   help="turn attention exports (.ppma) into an offline score cache")
    p_mix = sub.add_parser("mix", parents=[shared], help="generate mixed samples and a manifest")
    p_mix.add_argument("--scores", metavar="PATH", help="score cache file (needed in score mode)")
    p_mix.add_argument("--pair-strategy", dest="pair_strategy", default=None,
                       help="pairing: shuffle or all-pairs-sample")
    p_pert = sub.add_parser("perturb", parents=[shared], help="apply one geometric perturbation")
    p_pert.add_argument("--transform", help="one of: jitter, rotation, scale, drop")
    p_pert.add_argument("--sigma", type=float, default=None, help="jitter stddev (default 0.01)")
    p_pert.add_argument("--axis", default=None, help="rotation axis: x, y or z (default z)")
    p_pert.add_argument("--max-angle", dest="max_angle", type=float, default=None,
                        help="rotation drawn uniformly in [-max-angle, +max-angle] degrees (default 30)")
    p_pert.add_argument("--factor", type=float, default=None, help="uniform scale factor (default 2.0)")
    p_pert.add_argument("--drop-ratio", dest="drop_ratio", type=float, default=None,
                        help="fraction of points to drop; keeps ceil((1-ratio)*N) points (default 0.2)")
    p_stats = sub.add_parser("stats", parents=[shared],
                             help="summarize a mix manifest (text table + per-mix CSV)")
    p_stats.add_argument("--manifest", metavar="PATH", help="manifest file to summarize")
    return parser


def _parse_sweep(raw) -> list[float] | None:
    if raw is None:
        return None
    if isinstance(raw, (list, tuple)):
        return [float(v) for v in raw]
    try:
        values = [float(v) for v in str(raw).split(",") if v.strip()]
    except ValueError:
        raise PatchMixError(f"unparsable lambda sweep {raw!r}") from None
    if not values:
        raise PatchMixError("lambda sweep needs at least one value")
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    file_cfg: dict = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            file_cfg = json.load(fh)

    def pick(name):
        v = getattr(args, name, None)
        if v is None:
            v = file_cfg.get(name, _DEFAULTS.get(name))
        return v

    inputs = pick("input") or []
    if isinstance(inputs, (str, Path)):
        inputs = [inputs]
    out = pick("output")
    scores = pick("scores") if hasattr(args, "scores") or "scores" in file_cfg else None
    manifest = pick("manifest") if hasattr(args, "manifest") or "manifest" in file_cfg else None
    return RunConfig(
        command=args.command,
        inputs=[Path(p) for p in inputs],
        output=Path(out) if out else None,
        scores=Path(scores) if scores else None,
        manifest=Path(manifest) if manifest else None,
        transform=pick("transform") if hasattr(args, "transform") or "transform" in file_cfg else None,
        seed=int(pick("seed")),
        patch_size=int(pick("patch_size")),
        patches=(int(pick("patches")) if pick("patches") is not None else None),
        beta=float(pick("beta")),
        level=str(pick("level")),
        target_mode=str(pick("target_mode")),
        assign=str(pick("assign")),
        count=int(pick("count")),
        workers=int(pick("workers")),
        pair_strategy=str(pick("pair_strategy")),
        lambda_sweep=_parse_sweep(pick("lambda_sweep")),
        normalize=bool(pick("normalize")),
        strict=bool(pick("strict")),
        sigma=float(pick("sigma")),
        axis=str(pick("axis")),
        max_angle=float(pick("max_angle")),
        factor=float(pick("factor")),
        drop_ratio=float(pick("drop_ratio")),
    )


def _validate_choices(cfg: RunConfig) -> str | None:
    for name in ("level", "target_mode", "assign", "pair_strategy", "axis"):
        value = getattr(cfg, name)
        if value not in _CHOICES[name]:
            return f"{name.replace('_', '-')} must be one of {', '.join(_CHOICES[name])}; got {value!r}"
    return None


def _discover(inputs: list[Path], suffixes) -> list[Path]:
    found: list[Path] = []
    for entry in inputs:
        if entry.is_dir():
            for suffix in suffixes:
                found.extend(entry.glob(f"*{suffix}"))
        elif entry.is_file() and entry.suffix.lower() in suffixes:
            found.append(entry)
    return sorted(set(found), key=lambda p: (p.name, str(p)))


def _finish(warnings: list[str], strict: bool) -> int:
    return EXIT_VALIDATION if (strict and warnings) else EXIT_OK


# ---------------------------------------------------------------------------
# partition

def _mean_patch_radius(pset) -> float:
    pts = pset.patch_points.astype(np.float64)
    centers = pset.centers.astype(np.float64)[:, None, :]
    return float(np.linalg.norm(pts - centers, axis=2).mean())


def _membership_payload(pset) -> bytes:
    lines = [f"PPMP 1 N={pset.source.n_points} P={pset.num_patches} s={pset.patch_size}"]
    for c, members in zip(pset.center_indices, pset.membership):
        lines.append(f"{int(c)}\t" + " ".join(str(int(m)) for m in members))
    return ("\n".join(lines) + "\n").encode("utf-8")


def cmd_partition(cfg: RunConfig) -> int:
    paths = _discover(cfg.inputs, _CLOUD_SUFFIXES)
    if not paths:
        _error("no inputs")
        return EXIT_NO_INPUT
    if cfg.output is None:
        _error("partition needs --output")
        return EXIT_VALIDATION
    cfg.output.mkdir(parents=True, exist_ok=True)
    warnings: list[str] = []
    summary: list[str] = []
    for path in paths:
        try:
            cloud = load_cloud(path)
            if cfg.normalize:
                cloud = normalize_cloud(cloud)
            pset = partition(cloud, num_patches=cfg.patches, patch_size=cfg.patch_size,
                             seed=cfg.seed)
        except PatchMixError as exc:
            warnings.append(f"{path.name}: {exc}")
            _warn(warnings[-1])
            continue
        _atomic_write(cfg.output / f"{path.stem}.patches", _membership_payload(pset))
        summary.append(
            f"{path.stem}\tP={pset.num_patches}\ts={pset.patch_size}\t"
            f"mean_patch_radius={_mean_patch_radius(pset):.6g}"
        )
    _atomic_write(cfg.output / "partition_summary.txt",
                  ("\n".join(summary) + "\n").encode("utf-8") if summary else b"")
    print(f"partitioned {len(summary)} / {len(paths)} clouds -> {cfg.output}")
    for line in summary:
        print(line)
    return _finish(warnings, cfg.strict)


# ---------------------------------------------------------------------------
# score

def cmd_score(cfg: RunConfig) -> int:
    paths = _discover(cfg.inputs, (".ppma",))
    if cfg.output is None:
        _error("score needs --output (cache file path)")
        return EXIT_VALIDATION
    if not paths:
        # still leave a valid (empty) cache behind so downstream tooling can read it
        cfg.output.parent.mkdir(parents=True, exist_ok=True)
        write_score_cache({}, cfg.output)
        _error("no inputs")
        return EXIT_NO_INPUT
    warnings: list[str] = []
    entries = {}
    for path in paths:
        try:
            entries[path.stem] = scores_from_attention_file(path)
        except PatchMixError as exc:
            warnings.append(f"{path.name}: {exc}")
            _warn(warnings[-1])
    cfg.output.parent.mkdir(parents=True, exist_ok=True)
    write_score_cache(entries, cfg.output)
    if warnings:
        failures_path = cfg.output.with_name(cfg.output.name + ".failures.txt")
        _atomic_write(failures_path, ("\n".join(warnings) + "\n").encode("utf-8"))
        print(f"{len(warnings)} failures listed in {failures_path}")
    if entries:
        ent = np.array([sv.entropy for sv in entries.values()])
        print(f"cached {len(entries)} score vectors -> {cfg.output}")
        print(f"score entropy (nats): min={ent.min():.6g} max={ent.max():.6g} mean={ent.mean():.6g}")
    else:
        print(f"cached 0 score vectors -> {cfg.output}")
    return _finish(warnings, cfg.strict)


# ---------------------------------------------------------------------------
# mix

def _load_mix_dataset(paths, cfg, warnings) -> list[PointCloud]:
    clouds: list[PointCloud] = []
    for path in paths:
        try:
            cloud = load_cloud(path)
        except PatchMixError as exc:
            warnings.append(f"{path.name}: {exc}")
            _warn(warnings[-1])
            continue
        if cloud.label is None or cloud.label_space is None:
            warnings.append(f"{path.name}: unlabelled cloud skipped (targets need labels)")
            _warn(warnings[-1])
            continue
        if cfg.normalize:
            cloud = normalize_cloud(cloud)
        clouds.append(cloud)
    kept: list[PointCloud] = []
    for cloud in clouds:
        ref = kept[0] if kept else cloud
        if cloud.n_points != ref.n_points:
            warnings.append(f"{cloud.id}: N={cloud.n_points} differs from {ref.n_points}; skipped")
            _warn(warnings[-1])
        elif cloud.label_space.num_classes != ref.label_space.num_classes:
            warnings.append(f"{cloud.id}: class count differs; skipped")
            _warn(warnings[-1])
        else:
            kept.append(cloud)
    return kept


def _sweep_results(clouds, scores, params, cfg, warnings):
    a = clouds[0]
    b = clouds[1] if len(clouds) > 1 else clouds[0]
    y1, y2 = a.one_hot_target(), b.one_hot_target()
    results = []
    if cfg.level == "patch":
        pa = partition(a, num_patches=cfg.patches, patch_size=cfg.patch_size, seed=cfg.seed)
        pb = partition(b, num_patches=cfg.patches, patch_size=cfg.patch_size, seed=cfg.seed)
        if params.target_mode == "score":
            sa, sb = scores[a.id], scores[b.id]
        else:
            sa = sb = uniform_scores(pa.num_patches)
        assign = (patch_assignment_full(pa, pb) if cfg.assign == "full"
                  else patch_assignment_centers(pa, pb))
        for lam in cfg.lambda_sweep:
            rng = np.random.default_rng(cfg.seed)
            results.append(mix_patch(pa, y1, sa, pb, y2, sb, assign, params, rng, lam=lam))
    else:
        assign = point_assignment(a, b)
        mixer = mix_block if cfg.level == "block" else mix_point
        for lam in cfg.lambda_sweep:
            rng = np.random.default_rng(cfg.seed)
            results.append(mixer(a, y1, b, y2, assign, params, rng, lam=lam))
    return results


def cmd_mix(cfg: RunConfig) -> int:
    paths = _discover(cfg.inputs, _CLOUD_SUFFIXES)
    if not paths:
        _error("no inputs")
        return EXIT_NO_INPUT
    if cfg.output is None:
        _error("mix needs --output")
        return EXIT_VALIDATION
    warnings: list[str] = []
    clouds = _load_mix_dataset(paths, cfg, warnings)
    if not clouds:
        _error("no usable labelled clouds among the inputs")
        return EXIT_NO_INPUT
    params = MixParams(beta=cfg.beta, target_mode=cfg.target_mode, level=cfg.level, seed=cfg.seed)
    scores = None
    if cfg.level == "patch" and cfg.target_mode == "score":
        if cfg.scores is None:
            _error("score mode needs --scores <cache>")
            return EXIT_VALIDATION
        try:
            scores = read_score_cache(cfg.scores)
        except PatchMixError as exc:
            _error(str(exc))
            return EXIT_VALIDATION
        if cfg.lambda_sweep:
            pair_ids = {clouds[0].id, clouds[1].id if len(clouds) > 1 else clouds[0].id}
            missing = sorted(cid for cid in pair_ids if cid not in scores)
            if missing:
                _error(f"score cache lacks entries for sweep pair: {missing}")
                return EXIT_VALIDATION
    cfg.output.mkdir(parents=True, exist_ok=True)

    rows = []
    if cfg.lambda_sweep:
        try:
            results = _sweep_results(clouds, scores, params, cfg, warnings)
        except PatchMixError as exc:
            _error(str(exc))
            return EXIT_VALIDATION
        named = [(f"sweep_{k:03d}", r) for k, r in enumerate(results)]
    else:
        failures = []
        emitted = batch_mix(clouds, scores, params, cfg.pair_strategy, cfg.count, cfg.seed,
                            patch_size=cfg.patch_size, num_patches=cfg.patches,
                            assign_mode=cfg.assign, workers=cfg.workers, failures=failures)
        named = [(f"mix_{k:05d}", r) for k, r in enumerate(emitted)]
        for f in failures:
            warnings.append(f"pair {f.index} ({f.src1}, {f.src2}): {f.reason}")
            _warn(warnings[-1])
    for out_id, result in named:
        out_cloud = PointCloud(result.mixed.points, id=out_id,
                               label_space=result.mixed.label_space)
        save_cloud(out_cloud, cfg.output / f"{out_id}.ppmx")
        rows.append(manifest_row(out_id, result))
    if named:
        slots = len(named[0][1].mask)
        num_classes = named[0][1].target.num_classes
    else:
        slots = 0
        num_classes = clouds[0].label_space.num_classes
    write_manifest(rows, cfg.output / "manifest.tsv", level=cfg.level,
                   slots=slots, num_classes=num_classes)
    print(f"wrote {len(rows)} mixed clouds + manifest -> {cfg.output}")
    return _finish(warnings, cfg.strict)


# ---------------------------------------------------------------------------
# perturb

def cmd_perturb(cfg: RunConfig) -> int:
    if cfg.transform not in TRANSFORMS:
        _error(f"unknown transform {cfg.transform!r}; expected one of {', '.join(TRANSFORMS)}")
        return EXIT_VALIDATION
    paths = _discover(cfg.inputs, _CLOUD_SUFFIXES)
    if not paths:
        _error("no inputs")
        return EXIT_NO_INPUT
    if cfg.output is None:
        _error("perturb needs --output")
        return EXIT_VALIDATION
    cfg.output.mkdir(parents=True, exist_ok=True)
    warnings: list[str] = []
    written = 0
    for idx, path in enumerate(paths):
        rng = np.random.default_rng([cfg.seed, idx])
        try:
            cloud = load_cloud(path)
            if cfg.transform == "jitter":
                out = jitter(cloud, cfg.sigma, rng)
            elif cfg.transform == "rotation":
                out = random_rotation(cloud, cfg.axis, rng, cfg.max_angle)
            elif cfg.transform == "scale":
                out = scale(cloud, cfg.factor)
            else:
                out = drop_points(cloud, cfg.drop_ratio, rng)
        except PatchMixError as exc:
            warnings.append(f"{path.name}: {exc}")
            _warn(warnings[-1])
            continue
        if out.n_points % cfg.patch_size:
            warnings.append(
                f"{path.name}: output N={out.n_points} is not divisible by patch size "
                f"{cfg.patch_size}; downstream partitioning will reject it"
            )
            _warn(warnings[-1])
        save_cloud(out, cfg.output / path.name)
        written += 1
    print(f"perturbed {written} / {len(paths)} clouds ({cfg.transform}) -> {cfg.output}")
    return _finish(warnings, cfg.strict)


# ---------------------------------------------------------------------------
# stats

def _histogram_line(values: np.ndarray, bins: int = 10) -> str:
    counts, _ = np.histogram(values, bins=bins, range=(0.0, 1.0))
    return " ".join(str(int(c)) for c in counts)


def cmd_stats(cfg: RunConfig) -> int:
    manifest = cfg.manifest or (cfg.inputs[0] if cfg.inputs else None)
    if manifest is None or not Path(manifest).is_file():
        _error("no inputs")
        return EXIT_NO_INPUT
    meta, rows, problems = read_manifest(manifest)
    warnings: list[str] = []
    for lineno, msg in problems:
        warnings.append(f"{manifest}: line {lineno}: {msg}")
        _warn(warnings[-1])
    slots = int(meta["slots"]) if meta.get("slots", "").isdigit() and int(meta.get("slots", "0")) > 0 else None
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["out_id", "src1", "src2", "lambda", "popcount",
                     "point_pct", "w1", "w2", "divergence"])
    if not rows:
        print("empty manifest (0 mixes)")
    else:
        lam = np.array([r.lam for r in rows])
        w1 = np.array([r.w1 for r in rows])
        w2 = np.array([r.w2 for r in rows])
        divergences = []
        for r in rows:
            pct = r.popcount / slots if slots else float("nan")
            div = abs(r.w1 - pct) if slots else float("nan")
            divergences.append(div)
            writer.writerow([r.out_id, r.src1, r.src2, f"{r.lam:.6g}", r.popcount,
                             f"{pct:.6g}", f"{r.w1:.6g}", f"{r.w2:.6g}", f"{div:.6g}"])
        print(f"mixes: {len(rows)}")
        print(f"lambda: mean={lam.mean():.6g} std={lam.std():.6g} "
              f"min={lam.min():.6g} max={lam.max():.6g}")
        print(f"lambda histogram [0,1] x10: {_histogram_line(lam)}")
        print(f"w1: mean={w1.mean():.6g} std={w1.std():.6g} min={w1.min():.6g} max={w1.max():.6g}")
        print(f"w2: mean={w2.mean():.6g} std={w2.std():.6g} min={w2.min():.6g} max={w2.max():.6g}")
        if slots:
            div = np.array(divergences)
            print(f"point-pct vs score-weight divergence: mean={div.mean():.6g} max={div.max():.6g}")
        else:
            print("point-pct divergence unavailable (manifest lacks slots header)")
    if cfg.output is not None:
        cfg.output.parent.mkdir(parents=True, exist_ok=True)
        _atomic_write(cfg.output, out.getvalue().encode("utf-8"))
        print(f"per-mix CSV -> {cfg.output}")
    return _finish(warnings, cfg.strict)


# ---------------------------------------------------------------------------

_COMMANDS = {
    "partition": cmd_partition,
    "score": cmd_score,
    "mix": cmd_mix,
    "perturb": cmd_perturb,
    "stats": cmd_stats,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (OSError, json.JSONDecodeError, PatchMixError) as exc:
        _error(str(exc))
        return EXIT_VALIDATION
    bad = _validate_choices(cfg)
    if bad:
        _error(bad)
        return EXIT_VALIDATION
    return _COMMANDS[cfg.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
