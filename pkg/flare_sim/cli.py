import json
import logging
import sys
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path
from typing import Annotated, Any, cast

import click
import typer
from config import load_config, with_overrides
from constants import (
    DEFAULT_VAE_SIZE,
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_INTERNAL,
    EXIT_OK,
    EXIT_USAGE,
)
from core import set_fft_workers
from errors import ConfigError, DataError
from handlers import (
    handle_augment,
    handle_composite,
    handle_eval,
    handle_forward,
    handle_gen_psf,
    handle_init_weights,
    handle_synthesize,
    handle_vae_sample,
)
from logging_config import clear_logger_context, get_logger, set_log_level, set_logger_context
from schemas import RunConfig

logger = get_logger(__name__)

SEED_MAX = 2**64 - 1

app = typer.Typer(
    name="flare-sim",
    help="Scatter-flare synthesis, augmentation, evaluation and toy deflaring.",
    no_args_is_help=True,
    pretty_exceptions_enable=False,
)


class AugmentKind(StrEnum):
    flare = "flare"
    background = "background"


class WeightKind(StrEnum):
    slcformer = "slcformer"
    zvae = "zvae"


@dataclass(frozen=True)
class AppState:
    config: RunConfig
    seed: int
    threads: int

    def seed_for(self, override: int | None) -> int:
        return self.seed if override is None else override


SeedOption = Annotated[
    int | None,
    typer.Option("--seed", min=0, max=SEED_MAX, help="Seed for this command (overrides --seed)."),
]
CountOption = Annotated[int, typer.Option("--count", min=1, help="Number of outputs.")]
SizeOption = Annotated[
    int | None, typer.Option("--size", min=1, help="Square output resolution (overrides config).")
]


def _state(ctx: typer.Context) -> AppState:
    return cast("AppState", ctx.obj)


def _square(size: int | None) -> tuple[int, int] | None:
    return None if size is None else (size, size)


def _emit(result: dict[str, Any]) -> None:
    typer.echo(json.dumps(result, indent=2, sort_keys=True))


def _load_run_config(path: Path | None) -> RunConfig:
    """`load_config` with a missing document reported as a configuration error."""
    try:
        return load_config(path)
    except FileNotFoundError as err:
        raise ConfigError("", str(err)) from err


@app.callback()
def main_callback(
    ctx: typer.Context,
    seed: Annotated[int, typer.Option(min=0, max=SEED_MAX, help="Run seed (u64).")] = 0,
    config: Annotated[
        Path | None, typer.Option("--config", help="RunConfig YAML/JSON document.")
    ] = None,
    threads: Annotated[int, typer.Option(min=0, help="Worker threads, 0 = auto.")] = 0,
    verbose: Annotated[  # noqa: FBT002
        bool, typer.Option("--verbose", "-v", help="Debug logging.")
    ] = False,
) -> None:
    """Load and validate the configuration before any subcommand runs."""
    if verbose:
        set_log_level(logging.DEBUG)
    set_fft_workers(threads)
    run_config = _load_run_config(config)
    ctx.obj = AppState(config=run_config, seed=seed, threads=threads)
    set_logger_context(command=ctx.invoked_subcommand)
    logger.debug("Global options: seed=%d threads=%d config=%s", seed, threads, config)


@app.command("gen-psf")
def gen_psf(
    ctx: typer.Context,
    out: Annotated[Path, typer.Option("--out", help="Output directory.")],
    seed: SeedOption = None,
    kernel_size: Annotated[int | None, typer.Option(help="Odd PSF kernel size.")] = None,
    n_bases: Annotated[int | None, typer.Option(help="Number of PSF bases.")] = None,
) -> None:
    """Render the anchor PSF grid, its basis decomposition and per-anchor heatmaps."""
    state = _state(ctx)
    config = with_overrides(state.config, "optics", kernel_size=kernel_size)
    config = with_overrides(config, "basis", n_bases=n_bases)
    logger.info("Called gen-psf with out=%s", out)
    _emit(handle_gen_psf(config, state.seed_for(seed), out))


@app.command()
def synthesize(  # noqa: PLR0913
    ctx: typer.Context,
    flare_dir: Annotated[Path, typer.Option("--flare-dir", help="Directory of flare PNGs.")],
    bg_dir: Annotated[Path, typer.Option("--bg-dir", help="Directory of background PNGs.")],
    out: Annotated[Path, typer.Option("--out", help="Output directory.")],
    count: CountOption = 1,
    seed: SeedOption = None,
    size: SizeOption = None,
) -> None:
    """Synthesize (input, ground truth) pairs with scattered, augmented flares."""
    state = _state(ctx)
    config = with_overrides(state.config, "composite", resolution=_square(size))
    logger.info("Called synthesize with flare_dir=%s bg_dir=%s count=%d", flare_dir, bg_dir, count)
    result = handle_synthesize(
        config, flare_dir, bg_dir, out, state.seed_for(seed), count, state.threads
    )
    _emit(result)


@app.command()
def augment(  # noqa: PLR0913
    ctx: typer.Context,
    input_dir: Annotated[Path, typer.Option("--input-dir", help="Directory of PNGs.")],
    out: Annotated[Path, typer.Option("--out", help="Output directory.")],
    count: CountOption = 1,
    seed: SeedOption = None,
    kind: Annotated[AugmentKind, typer.Option(help="Pipeline to run.")] = AugmentKind.flare,
) -> None:
    """Apply the seeded flare or background augmentation pipeline."""
    state = _state(ctx)
    logger.info("Called augment with input_dir=%s kind=%s count=%d", input_dir, kind, count)
    result = handle_augment(
        state.config, input_dir, out, state.seed_for(seed), count, kind.value, state.threads
    )
    _emit(result)


@app.command("composite")
def composite_cmd(  # noqa: PLR0913
    ctx: typer.Context,
    flare_dir: Annotated[Path, typer.Option("--flare-dir", help="Directory of flare PNGs.")],
    bg_dir: Annotated[Path, typer.Option("--bg-dir", help="Directory of background PNGs.")],
    out: Annotated[Path, typer.Option("--out", help="Output directory.")],
    count: CountOption = 1,
    seed: SeedOption = None,
    size: SizeOption = None,
) -> None:
    """Composite flare PNGs over background PNGs into paired input/gt images."""
    state = _state(ctx)
    config = with_overrides(state.config, "composite", resolution=_square(size))
    logger.info("Called composite with flare_dir=%s bg_dir=%s count=%d", flare_dir, bg_dir, count)
    result = handle_composite(
        config, flare_dir, bg_dir, out, state.seed_for(seed), count, state.threads
    )
    _emit(result)


@app.command("eval")
def eval_cmd(  # noqa: PLR0913
    ctx: typer.Context,
    pred_dir: Annotated[Path, typer.Option("--pred-dir", help="Restored PNGs.")],
    gt_dir: Annotated[Path, typer.Option("--gt-dir", help="Ground-truth PNGs.")],
    report: Annotated[Path, typer.Option("--report", help="JSON report to write.")],
    glare_masks: Annotated[Path | None, typer.Option(help="Glare mask directory.")] = None,
    streak_masks: Annotated[Path | None, typer.Option(help="Streak mask directory.")] = None,
    lpips: Annotated[Path | None, typer.Option(help="JSON file of per-image LPIPS.")] = None,
    mask_threshold: Annotated[float | None, typer.Option(help="Mask threshold.")] = None,
) -> None:
    """Score restored images with PSNR, SSIM, G-PSNR and S-PSNR."""
    state = _state(ctx)
    config = with_overrides(state.config, "eval", mask_threshold=mask_threshold)
    logger.info("Called eval with pred_dir=%s gt_dir=%s", pred_dir, gt_dir)
    document = handle_eval(
        config, pred_dir, gt_dir, report, glare_masks, streak_masks, lpips, state.threads
    )
    _emit({"report": str(report), "aggregate": document["aggregate"], "flags": document["flags"]})


@app.command()
def forward(
    ctx: typer.Context,
    input_path: Annotated[Path, typer.Option("--input", help="Input PNG.")],
    weights: Annotated[Path, typer.Option("--weights", help="Weight manifest directory.")],
    output: Annotated[Path, typer.Option("--output", help="Output PNG.")],
    config: Annotated[
        Path | None, typer.Option("--config", help="RunConfig for this command.")
    ] = None,
) -> None:
    """Run the toy SLCFormer on one image."""
    state = _state(ctx)
    run_config = state.config if config is None else _load_run_config(config)
    logger.info("Called forward with input=%s weights=%s", input_path, weights)
    _emit(handle_forward(run_config, input_path, weights, output))


@app.command("init-weights")
def init_weights_cmd(  # noqa: PLR0913
    ctx: typer.Context,
    out: Annotated[Path, typer.Option("--out", help="Weight directory.")],
    kind: Annotated[WeightKind, typer.Option(help="Which model.")] = WeightKind.slcformer,
    zero: Annotated[bool, typer.Option("--zero", help="All-zero weights.")] = False,  # noqa: FBT002
    seed: SeedOption = None,
    size: Annotated[int, typer.Option(min=1, help="VAE output side.")] = DEFAULT_VAE_SIZE,
) -> None:
    """Write a deterministic weight manifest."""
    state = _state(ctx)
    logger.info("Called init-weights with kind=%s zero=%s out=%s", kind, zero, out)
    result = handle_init_weights(
        state.config, state.seed_for(seed), out, kind.value, zero=zero, size=size
    )
    _emit(result)


@app.command("vae-sample")
def vae_sample(
    ctx: typer.Context,
    out: Annotated[Path, typer.Option("--out", help="Output PNG.")],
    weights: Annotated[Path | None, typer.Option(help="zvae weight directory.")] = None,
    seed: SeedOption = None,
    size: Annotated[int, typer.Option(min=1, help="Output side without weights.")] = (
        DEFAULT_VAE_SIZE
    ),
) -> None:
    """Decode a flare from a seeded coefficient field through the ZernikeVAE."""
    state = _state(ctx)
    logger.info("Called vae-sample with out=%s weights=%s", out, weights)
    _emit(handle_vae_sample(state.config, state.seed_for(seed), out, weights, size))


def main(argv: list[str] | None = None) -> int:
    """Run the command line and map failures to exit codes.

    0 ok, 1 usage, 2 invalid configuration, 3 unreadable or mismatched data, 4 anything else.
    """
    try:
        result = app(args=argv, prog_name="flare-sim", standalone_mode=False)
    except click.UsageError as err:
        err.show()
        return EXIT_USAGE
    except (click.ClickException, click.Abort) as err:
        logger.error("Command line error: %s", err)  # noqa: TRY400
        return EXIT_USAGE
    except ConfigError as err:
        logger.error("Invalid configuration: %s", err)  # noqa: TRY400
        return EXIT_CONFIG
    except (DataError, OSError) as err:
        logger.error("Data error: %s", err)  # noqa: TRY400
        return EXIT_DATA
    except Exception:
        logger.exception("Internal error")
        return EXIT_INTERNAL
    finally:
        clear_logger_context()
    return result if isinstance(result, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
