import json
import math
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Any, Literal

import numpy as np
from augment import apply_background_pipeline, apply_flare_pipeline, draw_plan
from constants import HEATMAP_DIRNAME, PLAN_MANIFEST_FILENAME
from core import ImageF, SeededRng, load_png, luminance, resize, save_png
from datasets import find_mask, list_images, pair_by_name
from errors import DataError
from logging_config import get_logger, logging_context
from metrics import load_external_scores, load_region_mask, masked_psnr, psnr, ssim
from netblocks import init_weights, load_weights, save_weights, slcformer_forward
from optics import (
    PSFBasis,
    PSFGrid,
    anchor_positions,
    build_psf_grid,
    circular_aperture,
    decompose_basis,
    load_aperture,
    psf_heatmap,
)
from schemas import EvalConfig, RunConfig
from svrender import composite, sv_convolve
from utils import atomic_write_text, to_json_line
from weights_store import save_tensors
from zernike import CoeffField, build_basis, sample_coeff_field
from zvae import init_vae, kernel_size_map, load_vae, sample_flare, save_vae

logger = get_logger(__name__)

AugmentKind = Literal["flare", "background"]
WeightKind = Literal["slcformer", "zvae"]


def render_psf_grid(config: RunConfig, rng: SeededRng) -> tuple[CoeffField, PSFGrid]:
    """Sample a coefficient field over the anchor grid and render every anchor PSF.

    Args:
        config: Run configuration (optics, turbulence and composite resolution are used)
        rng: Seed source; the coefficient field comes from its `zernike.coeff_field` stream

    Returns:
        tuple[CoeffField, PSFGrid]: The sampled coefficients and the normalized anchor kernels
    """
    optics = config.optics
    height, width = config.composite.resolution
    if optics.aperture_path is not None:
        aperture = load_aperture(optics.aperture_path, optics.pupil_grid)
    else:
        aperture = circular_aperture(optics.pupil_grid, optics.radius_frac)
    anchors = anchor_positions(optics.anchor_rows, optics.anchor_cols, height, width)
    field = sample_coeff_field(rng, config.turbulence, anchors)
    zernike_basis = build_basis(optics.pupil_grid, config.turbulence.n_modes)
    return field, build_psf_grid(aperture, zernike_basis, field, optics.kernel_size)


def render_psf_basis(config: RunConfig, rng: SeededRng) -> tuple[CoeffField, PSFGrid, PSFBasis]:
    """`render_psf_grid` followed by the truncated basis decomposition at the composite size."""
    field, grid = render_psf_grid(config, rng)
    basis = decompose_basis(grid, config.basis.n_bases, config.composite.resolution)
    return field, grid, basis


def to_channels(img: ImageF, channels: int) -> ImageF:
    """Repeat a grayscale image to RGB, or reduce RGB to its luminance."""
    if img.channels == channels:
        return img
    if img.channels == 1 and channels == 3:  # noqa: PLR2004
        return ImageF(np.repeat(img.data, 3, axis=2))
    if channels == 1:
        return ImageF(luminance(img)[:, :, np.newaxis])
    msg = f"Cannot convert a {img.channels}-channel image to {channels} channels"
    raise DataError(msg)


def _load_rgb(path: Path, gamma: float, size: tuple[int, int] | None = None) -> ImageF:
    img = to_channels(load_png(path, gamma=gamma), 3)
    if size is not None:
        img = resize(img, *size)
    return img


def run_batch(
    command: str,
    seed: int,
    count: int,
    threads: int,
    manifest_path: Path,
    item: Callable[[int, SeededRng], dict[str, Any]],
) -> int:
    """Run `item(index, rng.derive(index))` for every index on a thread pool.

    Records are written to the JSON-lines manifest in index order as soon as they are ready,
    so an interrupted run leaves a parseable prefix.

    Args:
        command: Command name put in the logger context
        seed: Run seed; item `i` receives `seed XOR i`
        count: Number of items, >= 1
        threads: Pool size, 0 for the executor default
        manifest_path: JSON-lines manifest to (re)write
        item: Work for one index, returning its manifest record

    Returns:
        int: Number of records written

    Raises:
        ValueError: If `count` is smaller than 1
    """
    if count < 1:
        msg = f"count must be >= 1, got {count}"
        raise ValueError(msg)
    base = SeededRng(seed)

    def run(index: int) -> dict[str, Any]:
        item_rng = base.derive(index)
        with logging_context(command=command, item=index, seed=item_rng.seed):
            logger.debug("Processing item")
            return item(index, item_rng)

    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    written = 0
    pool = ThreadPoolExecutor(max_workers=threads or None, thread_name_prefix=command)
    try:
        with manifest_path.open("w", encoding="utf-8") as manifest:
            for record in pool.map(run, range(count)):
                manifest.write(to_json_line(record))
                manifest.flush()
                written += 1
    finally:
        pool.shutdown(wait=True, cancel_futures=True)
    logger.info("%s wrote %d manifest records to %s", command, written, manifest_path)
    return written


def handle_gen_psf(config: RunConfig, seed: int, out: Path) -> dict[str, Any]:
    """Render the anchor PSFs of one seeded coefficient field and write them with heatmaps.

    Args:
        config: Run configuration
        seed: Seed of the coefficient field
        out: Output directory; receives the tensor manifest and `heatmaps/psf_r{row}_c{col}.png`

    Returns:
        dict[str, Any]: Summary with the number of kernels and the written heatmap paths
    """
    field, grid, basis = render_psf_basis(config, SeededRng(seed))
    ksize = kernel_size_map(grid)
    tensors = {
        "coeff_field": field.coeffs,
        "psf_grid": grid.kernels,
        "bases": basis.bases,
        "anchor_coeffs": basis.anchor_coeffs,
        "coeff_maps": basis.coeff_maps,
        "kernel_size_map": ksize.grid,
    }
    meta = {
        "kind": "psf",
        "seed": seed,
        "anchors": [grid.anchors.rows, grid.anchors.cols],
        "resolution": list(config.composite.resolution),
        "kernel_size": grid.kernel_size,
        "n_modes": field.n_modes,
        "n_bases": basis.n_bases,
    }
    save_tensors(out, tensors, meta)

    heatmaps = []
    for row in range(grid.anchors.rows):
        for col in range(grid.anchors.cols):
            path = out / HEATMAP_DIRNAME / f"psf_r{row}_c{col}.png"
            save_png(psf_heatmap(grid.psf_at(row, col)), path)
            heatmaps.append(str(path))
    logger.info("Wrote %d anchor PSFs and heatmaps to %s", len(heatmaps), out)
    return {"kernels": len(heatmaps), "out": str(out), "heatmaps": heatmaps}


def handle_synthesize(  # noqa: PLR0913
    config: RunConfig,
    flare_dir: Path,
    bg_dir: Path,
    out: Path,
    seed: int,
    count: int,
    threads: int = 0,
) -> dict[str, Any]:
    """Build a paired training set: augmented, spatially scattered flares over backgrounds.

    Item `i` uses flare `i mod F` and background `i mod B` (file-name order) and, from its
    derived seed, an augmentation plan and a fresh PSF field. Outputs are
    `input/`, `gt/` and `flare/` PNGs named `{i:05d}.png` plus `manifest.jsonl`.

    Sources are linearized with the plan's sampled gamma but every output is encoded with
    `composite.gamma`, so the sampled gamma acts as a tone augmentation and is not undone
    on save. The plan in the manifest records the gamma that was applied.

    Args:
        config: Run configuration
        flare_dir: Directory of flare PNGs
        bg_dir: Directory of background PNGs
        out: Output directory
        seed: Run seed
        count: Number of pairs
        threads: Worker threads, 0 for auto

    Returns:
        dict[str, Any]: Summary with the pair count and manifest path

    Raises:
        DataError: If an input directory is missing or empty, or an image is unreadable
    """
    flares = list_images(flare_dir)
    backgrounds = list_images(bg_dir)
    recipe = config.composite

    def item(index: int, rng: SeededRng) -> dict[str, Any]:
        flare_path = flares[index % len(flares)]
        bg_path = backgrounds[index % len(backgrounds)]
        plan = draw_plan(rng, config.augment)
        flare = apply_flare_pipeline(_load_rgb(flare_path, 1.0, recipe.resolution), plan)
        _, _, basis = render_psf_basis(config, rng)
        flare = sv_convolve(flare, basis)
        background = apply_background_pipeline(
            _load_rgb(bg_path, 1.0, recipe.resolution), plan, rng
        )
        merged, target = composite(background, flare, recipe)

        name = f"{index:05d}.png"
        save_png(merged, out / "input" / name, inv_gamma=recipe.gamma)
        save_png(target, out / "gt" / name, inv_gamma=recipe.gamma)
        scaled_flare = ImageF(flare.data * recipe.flare_gain)
        save_png(scaled_flare, out / "flare" / name, inv_gamma=recipe.gamma)
        return {
            "index": index,
            "seed": rng.seed,
            "name": name,
            "flare": flare_path.name,
            "background": bg_path.name,
            "plan": plan.to_record(),
            "recipe": asdict(recipe),
        }

    written = run_batch("synthesize", seed, count, threads, out / PLAN_MANIFEST_FILENAME, item)
    return {"pairs": written, "out": str(out), "manifest": str(out / PLAN_MANIFEST_FILENAME)}


def handle_augment(  # noqa: PLR0913
    config: RunConfig,
    input_dir: Path,
    out: Path,
    seed: int,
    count: int,
    kind: AugmentKind = "flare",
    threads: int = 0,
) -> dict[str, Any]:
    """Apply seeded flare or background augmentation to the images of a directory.

    Output `i` augments input `i mod N` at its own resolution and is re-encoded with the
    plan's gamma; `manifest.jsonl` holds the full plan of every output.

    Args:
        config: Run configuration (augmentation supports)
        input_dir: Directory of PNGs
        out: Output directory
        seed: Run seed
        count: Number of outputs
        kind: Which pipeline to run
        threads: Worker threads, 0 for auto

    Returns:
        dict[str, Any]: Summary with the output count and manifest path
    """
    images = list_images(input_dir)

    def item(index: int, rng: SeededRng) -> dict[str, Any]:
        source = images[index % len(images)]
        plan = draw_plan(rng, config.augment)
        img = _load_rgb(source, 1.0)
        trace: list[str] = []
        if kind == "flare":
            img = apply_flare_pipeline(img, plan, trace)
        else:
            img = apply_background_pipeline(img, plan, rng, trace)
        name = f"{index:05d}.png"
        save_png(img, out / name, inv_gamma=plan.gamma)
        return {
            "index": index,
            "seed": rng.seed,
            "name": name,
            "source": source.name,
            "kind": kind,
            "ops": trace,
            "plan": plan.to_record(),
        }

    written = run_batch("augment", seed, count, threads, out / PLAN_MANIFEST_FILENAME, item)
    return {"outputs": written, "out": str(out), "manifest": str(out / PLAN_MANIFEST_FILENAME)}


def handle_composite(  # noqa: PLR0913
    config: RunConfig,
    flare_dir: Path,
    bg_dir: Path,
    out: Path,
    seed: int,
    count: int,
    threads: int = 0,
) -> dict[str, Any]:
    """Composite flare PNGs over background PNGs as they are, in linear light.

    Both images are linearized with the recipe gamma and resized to the recipe resolution;
    pair `i` uses flare `i mod F` and background `i mod B`.

    Args:
        config: Run configuration (composite recipe)
        flare_dir: Directory of flare PNGs
        bg_dir: Directory of background PNGs
        out: Output directory receiving `input/`, `gt/` and `manifest.jsonl`
        seed: Run seed, recorded per pair
        count: Number of pairs
        threads: Worker threads, 0 for auto

    Returns:
        dict[str, Any]: Summary with the pair count and manifest path
    """
    flares = list_images(flare_dir)
    backgrounds = list_images(bg_dir)
    recipe = config.composite

    def item(index: int, rng: SeededRng) -> dict[str, Any]:
        flare_path = flares[index % len(flares)]
        bg_path = backgrounds[index % len(backgrounds)]
        flare = _load_rgb(flare_path, recipe.gamma, recipe.resolution)
        background = _load_rgb(bg_path, recipe.gamma, recipe.resolution)
        merged, target = composite(background, flare, recipe)
        name = f"{index:05d}.png"
        save_png(merged, out / "input" / name, inv_gamma=recipe.gamma)
        save_png(target, out / "gt" / name, inv_gamma=recipe.gamma)
        return {
            "index": index,
            "seed": rng.seed,
            "name": name,
            "flare": flare_path.name,
            "background": bg_path.name,
            "recipe": asdict(recipe),
        }

    written = run_batch("composite", seed, count, threads, out / PLAN_MANIFEST_FILENAME, item)
    return {"pairs": written, "out": str(out), "manifest": str(out / PLAN_MANIFEST_FILENAME)}


def _finite_or_none(value: float) -> float | None:
    return value if math.isfinite(value) else None


def _masked_entry(  # noqa: PLR0913
    pred: ImageF,
    gt: ImageF,
    mask_dir: Path | None,
    name: str,
    kind: Literal["glare", "streak"],
    cfg: EvalConfig,
) -> tuple[float | None, str]:
    """Region PSNR and its status: ok, infinite, no_mask or empty_mask."""
    mask_path = find_mask(mask_dir, name)
    if mask_path is None:
        return None, "no_mask"
    mask = load_region_mask(mask_path, kind, pred.height, pred.width)
    try:
        value = masked_psnr(pred, gt, mask, cfg.mask_threshold, cfg.peak)
    except ValueError:
        logger.warning("%s mask for %s selects no pixel", kind, name)
        return None, "empty_mask"
    return _finite_or_none(value), "ok" if math.isfinite(value) else "infinite"


def _evaluate_pair(  # noqa: PLR0913
    name: str,
    pred_path: Path,
    gt_path: Path,
    glare_masks: Path | None,
    streak_masks: Path | None,
    scores: dict[str, float] | None,
    cfg: EvalConfig,
) -> dict[str, Any]:
    pred = load_png(pred_path, gamma=cfg.gamma)
    gt = load_png(gt_path, gamma=cfg.gamma)
    if pred.shape != gt.shape:
        msg = f"{pred_path} has shape {pred.shape}, its ground truth {gt_path} has {gt.shape}"
        logger.error(msg)
        raise DataError(msg)
    try:
        structural = ssim(pred, gt, cfg.peak)
    except ValueError as err:
        msg = f"Cannot evaluate {pred_path}: {err}"
        logger.exception(msg)
        raise DataError(msg) from err

    value = psnr(pred, gt, cfg.peak)
    g_psnr, g_status = _masked_entry(pred, gt, glare_masks, name, "glare", cfg)
    s_psnr, s_status = _masked_entry(pred, gt, streak_masks, name, "streak", cfg)
    return {
        "name": name,
        "psnr": _finite_or_none(value),
        "psnr_infinite": math.isinf(value),
        "ssim": structural,
        "g_psnr": g_psnr,
        "g_psnr_status": g_status,
        "s_psnr": s_psnr,
        "s_psnr_status": s_status,
        "lpips": None if scores is None else scores.get(name),
    }


def _mean(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def _aggregate(records: list[dict[str, Any]]) -> dict[str, Any]:
    """Means over the finite, available values, with the counts they were taken over."""
    finite_psnr = [r["psnr"] for r in records if r["psnr"] is not None]
    aggregate: dict[str, Any] = {
        "count": len(records),
        "psnr": _mean(finite_psnr),
        "psnr_infinite": sum(r["psnr_infinite"] for r in records),
        "ssim": _mean([r["ssim"] for r in records]),
    }
    for key in ("g_psnr", "s_psnr", "lpips"):
        values = [r[key] for r in records if r[key] is not None]
        aggregate[key] = _mean(values)
        aggregate[f"{key}_count"] = len(values)
    return aggregate


def _report_flags(records: list[dict[str, Any]], scores: dict[str, float] | None) -> list[str]:
    flags = []
    for key, flag in (("g_psnr", "glare_masks_missing"), ("s_psnr", "streak_masks_missing")):
        if any(r[f"{key}_status"] == "no_mask" for r in records):
            flags.append(flag)
        if any(r[f"{key}_status"] == "empty_mask" for r in records):
            flags.append(flag.replace("missing", "empty"))
    if scores is None or any(r["lpips"] is None for r in records):
        flags.append("lpips_missing")
    if any(r["psnr_infinite"] for r in records):
        flags.append("psnr_infinite")
    return flags


def handle_eval(  # noqa: PLR0913
    config: RunConfig,
    pred_dir: Path,
    gt_dir: Path,
    report: Path,
    glare_masks: Path | None = None,
    streak_masks: Path | None = None,
    lpips_scores: Path | None = None,
    threads: int = 0,
) -> dict[str, Any]:
    """Score restored images against their ground truth and write a JSON report.

    Infinite PSNR values (identical images) are written as null with a flag, and masked
    metrics without a mask are null with a status, never zero.

    Args:
        config: Run configuration (eval section)
        pred_dir: Directory of restored PNGs
        gt_dir: Directory of ground-truth PNGs with the same file names
        report: Report file to write
        glare_masks: Optional directory of glare masks named like the images
        streak_masks: Optional directory of streak masks named like the images
        lpips_scores: Optional JSON file of `{file name: LPIPS}` computed elsewhere
        threads: Worker threads, 0 for auto

    Returns:
        dict[str, Any]: The report

    Raises:
        DataError: If files are unpaired, unreadable or differ in shape
    """
    pairs = pair_by_name(pred_dir, gt_dir)
    scores = None if lpips_scores is None else load_external_scores(lpips_scores)
    cfg = config.eval

    def run(pair: tuple[str, Path, Path]) -> dict[str, Any]:
        name, pred_path, gt_path = pair
        with logging_context(command="eval", item=name):
            return _evaluate_pair(
                name, pred_path, gt_path, glare_masks, streak_masks, scores, cfg
            )

    with ThreadPoolExecutor(max_workers=threads or None, thread_name_prefix="eval") as pool:
        records = list(pool.map(run, pairs))

    document = {
        "per_image": records,
        "aggregate": _aggregate(records),
        "flags": _report_flags(records, scores),
        "config": asdict(cfg),
    }
    atomic_write_text(report, json.dumps(document, indent=2, sort_keys=True, allow_nan=False))
    logger.info("Evaluated %d pairs, report written to %s", len(records), report)
    return document


def handle_forward(
    config: RunConfig, input_path: Path, weights_dir: Path, output: Path
) -> dict[str, Any]:
    """Run the toy SLCFormer on one PNG and save the deflared result.

    Args:
        config: Run configuration (model section must match the weights)
        input_path: Input PNG; its size must be a multiple of the model's size multiple
        weights_dir: Weight manifest directory written by `init-weights`
        output: Output PNG path

    Returns:
        dict[str, Any]: Summary with the output path and shape

    Raises:
        DataError: If the weights do not fit the config or the input size is not divisible
    """
    weights = load_weights(weights_dir, config.model)
    img = to_channels(load_png(input_path), weights.stem.in_channels)
    restored = slcformer_forward(img, weights, config.model)
    save_png(restored, output)
    logger.info("Saved deflared image %s", output)
    return {"output": str(output), "shape": list(restored.shape)}


def _vae_inputs(config: RunConfig) -> int:
    """Encoder width: every anchor's coefficients followed by every anchor's kernel size."""
    n_anchors = config.optics.anchor_rows * config.optics.anchor_cols
    return n_anchors * (config.turbulence.n_modes + 1)


def handle_init_weights(
    config: RunConfig, seed: int, out: Path, kind: WeightKind, *, zero: bool, size: int
) -> dict[str, Any]:
    """Write a deterministic weight manifest for the network or the flare VAE.

    Args:
        config: Run configuration (model, optics and turbulence sections)
        seed: Initialization seed
        out: Weight directory
        kind: `slcformer` or `zvae`
        zero: Write all-zero weights instead of random ones
        size: Side of the square flare the VAE decodes (zvae only)

    Returns:
        dict[str, Any]: Summary with the kind and directory
    """
    if kind == "slcformer":
        save_weights(out, init_weights(config.model, seed, zero=zero), config.model)
    else:
        vae = init_vae(seed, _vae_inputs(config), (size, size, 3), zero=zero)
        save_vae(out, vae)
    logger.info("Wrote %s weights (seed=%d, zero=%s) to %s", kind, seed, zero, out)
    return {"kind": kind, "out": str(out), "zero": zero}


def handle_vae_sample(
    config: RunConfig, seed: int, out: Path, weights_dir: Path | None, size: int
) -> dict[str, Any]:
    """Decode a flare from a seeded coefficient field through the ZernikeVAE.

    Args:
        config: Run configuration
        seed: Seed of the coefficient field, the latent noise and (without weights) the VAE
        out: Output PNG path
        weights_dir: Weights from `init-weights --kind zvae`; seeded random weights if None
        size: Output side when no weights are given

    Returns:
        dict[str, Any]: Summary with the output path and shape

    Raises:
        DataError: If the weights expect a different encoder input width
    """
    rng = SeededRng(seed)
    field, grid = render_psf_grid(config, rng)
    ksize = kernel_size_map(grid)
    n_inputs = _vae_inputs(config)
    if weights_dir is None:
        vae = init_vae(seed, n_inputs, (size, size, 3))
    else:
        vae = load_vae(weights_dir)
    if vae.encoder.in_dim != n_inputs:
        msg = (
            f"VAE encoder takes {vae.encoder.in_dim} inputs but the configured anchors and "
            f"modes give {n_inputs}"
        )
        logger.error(msg)
        raise DataError(msg)
    flare = sample_flare(vae, field, ksize, rng)
    save_png(flare, out)
    logger.info("Saved VAE flare sample %s", out)
    return {"output": str(out), "shape": list(flare.shape)}
