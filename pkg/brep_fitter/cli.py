"""
CLI interface for brep_fitter.

Provides commands for fitting B-rep models, evaluating them and verifying
the splatting renderer and losses.
"""

from __future__ import annotations

import asyncio
import logging
import sys
from collections.abc import Awaitable, Callable, Coroutine
from importlib import resources
from pathlib import Path
from typing import Annotated, Any, NoReturn, Optional, TypeVar

import click
import numpy as np
import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

from brep_fitter.assembly import AssemblyError
from brep_fitter.cloud import normalize_cloud
from brep_fitter.config import ConfigError, PipelineConfig, load_config
from brep_fitter.exporter import write_brep, write_cloud, write_obj, write_pfm, write_png, write_report
from brep_fitter.fitting import FittingError
from brep_fitter.loader import ParseError, parse_scene, read_brep, read_cloud, read_scene
from brep_fitter.metrics import MetricError, aggregate_reports, cad_report, segmentation_report
from brep_fitter.pipeline import PipelineResult, StageError, fit_cloud
from brep_fitter.splat import GaussianScene, SplatError, render_scene, sample_gaussians_to_points
from brep_fitter.verify import CheckResult, run_suite, scene_camera

T = TypeVar("T")

logger = logging.getLogger(__name__)

console = Console()
err_console = Console(stderr=True)

EXIT_CONFIG = 1
EXIT_PARSE = 2
EXIT_STAGE = 3
EXIT_VERIFY = 4

_CLOUD_SUFFIXES = (".ply", ".xyzl", ".xyz", ".txt")
_BREP_SUFFIX = ".json"

app = typer.Typer(
    name="brep-fitter",
    help="""📐 B-rep Fitter - Reconstruct parametric CAD models from labeled point clouds.

Features:
  • Fit planes, cylinders and spheres to every labeled patch
  • Intersect neighboring patches into lines, circles and Bezier curves
  • Assemble trimmed faces, edges and corners into a B-rep model
  • Score segmentations and reconstructions (precision, recall, F1, Chamfer, Hausdorff)
  • Verify the Gaussian splat renderer, losses and gradients
  • Convert Gaussian splat scenes into labeled point clouds

Quick start:
  1. brep-fitter fit cube.ply -o cube.brep.json --obj   # Fit a model
  2. brep-fitter eval-cad cube.brep.json cube.ply       # Score it
  3. brep-fitter verify-splat                           # Check the renderer
""",
    add_completion=False,
    rich_markup_mode="rich",
)

ConfigOption = Annotated[
    Optional[Path],
    typer.Option("--config", "-c", help="TOML configuration file", dir_okay=False),
]
SeedOption = Annotated[
    Optional[int],
    typer.Option("--seed", help="Global seed (overrides config and BREP_FITTER_SEED)"),
]
ThreadsOption = Annotated[
    Optional[int],
    typer.Option("--threads", help="Worker threads for fitting and intersection", min=1),
]
VerboseOption = Annotated[
    int,
    typer.Option("--verbose", "-v", count=True, help="Increase log detail (-v info, -vv debug)"),
]


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=err_console, show_path=False, rich_tracebacks=False)],
        force=True,
    )


def _fail(error: Exception) -> NoReturn:
    """Print an error and exit with the code of its category."""
    if isinstance(error, ConfigError):
        label, code = "Configuration error", EXIT_CONFIG
    elif isinstance(error, ParseError | SplatError):
        label, code = "Input error", EXIT_PARSE
    elif isinstance(error, StageError | AssemblyError | FittingError | MetricError):
        label, code = "Error", EXIT_STAGE
    elif isinstance(error, OSError):
        label, code = "File error", EXIT_CONFIG
    else:
        label, code = "Error", EXIT_STAGE
    console.print(f"[red]{label}: {escape(str(error))}[/red]")
    raise typer.Exit(code=code) from error


def _setup(
    config: Optional[Path],
    *,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    verbose: int = 0,
) -> PipelineConfig:
    try:
        cfg = load_config(config, seed=seed, threads=threads, verbosity=verbose or None)
    except ConfigError as e:
        _fail(e)
    _configure_logging(cfg.verbosity)
    return cfg


def _run(coro: Coroutine[Any, Any, T]) -> T:
    """Run a coroutine to completion."""
    return asyncio.run(coro)


async def _gather(*writes: Awaitable[Path]) -> list[Path]:
    return list(await asyncio.gather(*writes))


def _with_spinner(description: str, fn: Callable[[], Any]) -> Any:
    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        console=console,
        transient=True,
    ) as progress:
        progress.add_task(description=description, total=None)
        return fn()


def _format_value(value: Any) -> str:
    if value is None:
        return "[dim]n/a[/dim]"
    if isinstance(value, float):
        return f"{value:.6g}"
    return escape(str(value))


def _report_table(title: str, report: dict[str, Any]) -> Table:
    table = Table(title=title, show_header=True, header_style="bold cyan")
    table.add_column("Metric", style="bold")
    table.add_column("Value", justify="right")
    for key, value in report.items():
        if isinstance(value, dict | list):
            continue
        table.add_row(key, _format_value(value))
    return table


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def _fit_table(result: PipelineResult) -> Table:
    summary = result.summary()
    table = Table(title="Fit summary", show_header=True, header_style="bold cyan")
    table.add_column("Stage", style="bold")
    table.add_column("Result")
    kinds = ", ".join(f"{n} {k}" for k, n in summary["kinds"].items()) or "none"
    table.add_row("fitting", f"{summary['fitted']} of {summary['patches']} patches ({kinds})")
    table.add_row(
        "intersection",
        f"{summary['pairs']} pairs, {summary['candidate_curves']} curves, "
        f"{summary['segments']} segments",
    )
    table.add_row("corners", f"{summary['corner_candidates']} candidates, {summary['corners']} corners")
    table.add_row(
        "assembly",
        f"{summary['faces']} faces, {summary['edges']} edges, {summary['corners']} corners",
    )
    watertight = "[green]yes[/green]" if summary["watertight"] else "[yellow]no[/yellow]"
    table.add_row("watertight", watertight)
    return table


@app.command(
    epilog="""
[bold]Examples:[/bold]

  [dim]# Fit a labeled cloud and write the B-rep document[/dim]
  brep-fitter fit part.ply -o part.brep.json

  [dim]# Also write an OBJ preview next to the document[/dim]
  brep-fitter fit part.ply -o part.brep.json --obj

  [dim]# Fixed seed and eight worker threads[/dim]
  brep-fitter fit part.xyzl --seed 7 --threads 8
"""
)
def fit(
    input_cloud: Annotated[Path, typer.Argument(help="Labeled cloud (PLY or XYZL)")],
    output: Annotated[
        Optional[Path],
        typer.Option("--output", "-o", help="B-rep document [default: <input>.brep.json]"),
    ] = None,
    obj: Annotated[
        bool,
        typer.Option("--obj", help="Also write a tessellated OBJ preview"),
    ] = False,
    config: ConfigOption = None,
    seed: SeedOption = None,
    threads: ThreadsOption = None,
    verbose: VerboseOption = 0,
) -> None:
    """
    Fit a B-rep model to a labeled point cloud.

    Runs normalization, normal estimation, per-patch primitive fitting,
    pairwise intersection, segment trimming, corner clustering and
    assembly, then writes the model in the input's coordinates.
    """
    cfg = _setup(config, seed=seed, threads=threads, verbose=verbose)
    target = output or input_cloud.with_name(input_cloud.stem + ".brep.json")
    try:
        cloud = read_cloud(input_cloud)
        result: PipelineResult = _with_spinner(
            "Fitting B-rep model...", lambda: _run(fit_cloud(cloud, cfg))
        )
        writes = [write_brep(result.model, target)]
        if obj:
            mesh = result.preview(cfg.tessellation.density, cfg.tessellation.samples_per_edge)
            writes.append(write_obj(mesh, target.with_suffix(".obj")))
        written = _run(_gather(*writes))
    except Exception as e:
        _fail(e)

    console.print(_fit_table(result))
    summary = result.summary()
    console.print(
        f"{summary['faces']} faces, {summary['edges']} edges, {summary['corners']} corners"
    )
    for face in summary["flagged_faces"]:
        console.print(
            f"[yellow]face {face['face']} (patch {face['patch_id']}, {face['kind']}) "
            f"is not watertight[/yellow]"
        )
    for path in written:
        console.print(f"[green]Saved: {path}[/green]")


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _model_name(path: Path) -> str:
    return path.name.split(".")[0]


def _pair_inputs(first: Path, second: Path, suffixes: tuple[str, ...]) -> list[tuple[str, Path, Path]]:
    """Single files, or files of two directories matched by name."""
    if not first.is_dir():
        return [(_model_name(first), first, second)]
    if not second.is_dir():
        msg = f"{second} must be a directory when {first} is one"
        raise ConfigError(msg)
    truth = {_model_name(p): p for p in sorted(second.iterdir()) if p.suffix.lower() in _CLOUD_SUFFIXES}
    pairs = []
    for path in sorted(first.iterdir()):
        name = _model_name(path)
        if path.suffix.lower() in suffixes and name in truth:
            pairs.append((name, path, truth[name]))
        elif path.suffix.lower() in suffixes:
            logger.warning("%s has no ground truth in %s", path.name, second)
    if not pairs:
        msg = f"no matching inputs between {first} and {second}"
        raise ConfigError(msg)
    return pairs


def _emit_reports(title: str, reports: dict[str, dict[str, Any]], output: Optional[Path]) -> None:
    document: dict[str, Any]
    if len(reports) == 1:
        ((name, report),) = reports.items()
        console.print(_report_table(f"{title}: {name}", report))
        document = {"model": name, **report}
    else:
        document = aggregate_reports(reports)
        console.print(_report_table(f"{title}: {len(reports)} models (mean)", document["aggregate"]))
    if output is not None:
        _run(write_report(document, output))
        console.print(f"[green]Saved: {output}[/green]")


@app.command("eval-seg")
def eval_seg(
    pred: Annotated[Path, typer.Argument(help="Predicted labeled cloud, or a directory of them")],
    gt: Annotated[Path, typer.Argument(help="Ground-truth labeled cloud, or a directory of them")],
    output: Annotated[
        Optional[Path],
        typer.Option("--output", "-o", help="Write the report as JSON"),
    ] = None,
    config: ConfigOption = None,
    verbose: VerboseOption = 0,
) -> None:
    """
    Score a patch segmentation against ground truth.

    Reports patch and edge precision, recall and F1 under the matching
    threshold tau, measured in the ground truth's unit frame.
    """
    cfg = _setup(config, verbose=verbose)
    reports: dict[str, dict[str, Any]] = {}
    try:
        for name, pred_path, gt_path in _pair_inputs(pred, gt, _CLOUD_SUFFIXES):
            gt_cloud, similarity = normalize_cloud(read_cloud(gt_path))
            pred_cloud = read_cloud(pred_path).transformed(similarity)
            reports[name] = segmentation_report(pred_cloud, gt_cloud, cfg.metrics)
        _emit_reports("Segmentation", reports, output)
    except Exception as e:
        _fail(e)


@app.command("eval-cad")
def eval_cad(
    brep: Annotated[Path, typer.Argument(help="B-rep document, or a directory of them")],
    gt: Annotated[Path, typer.Argument(help="Ground-truth labeled cloud, or a directory of them")],
    output: Annotated[
        Optional[Path],
        typer.Option("--output", "-o", help="Write the report as JSON"),
    ] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    verbose: VerboseOption = 0,
) -> None:
    """
    Score a B-rep model against a ground-truth cloud.

    Reports Chamfer and Hausdorff distances of sampled surfaces and curves,
    measured in the ground truth's unit frame.
    """
    cfg = _setup(config, seed=seed, verbose=verbose)
    reports: dict[str, dict[str, Any]] = {}
    try:
        for name, brep_path, gt_path in _pair_inputs(brep, gt, (_BREP_SUFFIX,)):
            gt_cloud, similarity = normalize_cloud(read_cloud(gt_path))
            model = read_brep(brep_path).transformed(similarity)
            reports[name] = _with_spinner(
                f"Sampling {name}...",
                lambda m=model, g=gt_cloud: cad_report(m, g, cfg.metrics, seed=cfg.seed),
            )
        _emit_reports("Reconstruction", reports, output)
    except Exception as e:
        _fail(e)


# ---------------------------------------------------------------------------
# splats
# ---------------------------------------------------------------------------


def _reference_scene() -> GaussianScene:
    text = resources.files("brep_fitter").joinpath("data/reference_scene.txt").read_text("utf-8")
    return parse_scene(text, "reference_scene.txt")


def _feature_preview(feature: np.ndarray) -> np.ndarray:
    """First three feature components mapped from [-1, 1] to [0, 1]."""
    h, w, d = feature.shape
    rgb = np.zeros((h, w, 3))
    rgb[..., : min(d, 3)] = feature[..., :3]
    return 0.5 * (rgb + 1.0)


async def _write_verification(
    report: dict[str, Any], scene: GaussianScene, cfg: PipelineConfig, directory: Path
) -> list[Path]:
    """Write the report plus color, edge and feature maps as PFM and PNG."""
    maps = render_scene(scene.gaussians, scene_camera(scene), min_weight=cfg.splat.min_weight)
    feature = _feature_preview(maps["feature"])
    return list(
        await asyncio.gather(
            write_report(report, directory / "report.json"),
            write_pfm(maps["color"], directory / "color.pfm"),
            write_png(maps["color"], directory / "color.png"),
            write_pfm(maps["edge"], directory / "edge.pfm"),
            write_png(maps["edge"], directory / "edge.png"),
            write_pfm(feature, directory / "feature.pfm"),
            write_png(feature, directory / "feature.png"),
        )
    )


@app.command("verify-splat")
def verify_splat(
    scene_path: Annotated[
        Optional[Path],
        typer.Argument(help="Gaussian scene file [default: shipped reference scene]"),
    ] = None,
    output: Annotated[
        Optional[Path],
        typer.Option("--output", "-o", help="Directory for report.json and rendered maps"),
    ] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    verbose: VerboseOption = 0,
) -> None:
    """
    Verify the splat renderer, losses and gradients.

    Checks the kernel, ray mapping, compositing against a naive oracle,
    loss identities, the point sampling rule and analytic gradients against
    central finite differences. Exits with code 4 when a check fails.
    """
    cfg = _setup(config, seed=seed, verbose=verbose)
    table = Table(title="Splat verification", show_header=True, header_style="bold cyan")
    table.add_column("Check", style="bold")
    table.add_column("Result", justify="center")
    table.add_column("Measured", justify="right")
    table.add_column("Tolerance", justify="right")
    table.add_column("Detail", style="dim")

    def record(result: CheckResult) -> None:
        status = "[green]pass[/green]" if result.passed else "[red]FAIL[/red]"
        table.add_row(
            escape(result.name),
            status,
            f"{result.measured:.3g}",
            f"{result.tolerance:.3g}",
            escape(result.detail),
        )

    try:
        scene = read_scene(scene_path) if scene_path is not None else _reference_scene()
        results = _with_spinner(
            "Running verification suite...",
            lambda: run_suite(
                scene,
                cfg.splat,
                stage1=cfg.stage1,
                triplet=cfg.triplet,
                seed=cfg.seed,
                on_check=record,
            ),
        )
        if output is not None:
            report = {"seed": cfg.seed, "checks": [r.to_dict() for r in results]}
            _run(_write_verification(report, scene, cfg, output))
    except Exception as e:
        _fail(e)

    console.print(table)
    if output is not None:
        console.print(f"[green]Saved report and maps to: {output}[/green]")
    failed = [r for r in results if not r.passed]
    if failed:
        console.print(f"[red]{len(failed)} of {len(results)} checks failed[/red]")
        raise typer.Exit(code=EXIT_VERIFY)
    console.print(f"[green]All {len(results)} checks passed[/green]")


@app.command()
def sample(
    scene_path: Annotated[Path, typer.Argument(help="Gaussian scene file")],
    output: Annotated[
        Optional[Path],
        typer.Option("--output", "-o", help="Output cloud, .ply or XYZL [default: <scene>.ply]"),
    ] = None,
    ascii_ply: Annotated[
        bool,
        typer.Option("--ascii", help="Write ASCII instead of binary PLY"),
    ] = False,
    config: ConfigOption = None,
    verbose: VerboseOption = 0,
) -> None:
    """
    Convert a Gaussian splat scene into a labeled point cloud.

    Every splat emits its center; splats no more elongated than the
    configured threshold also emit four points on their ellipse axes.
    Patch labels come from merging splat features.
    """
    cfg = _setup(config, verbose=verbose)
    target = output or scene_path.with_suffix(".ply")
    try:
        scene = read_scene(scene_path)
        cloud = sample_gaussians_to_points(
            scene.gaussians,
            cfg.splat.elongation_threshold,
            merge_distance=cfg.splat.merge_distance,
        )
        _run(write_cloud(cloud, target, binary=not ascii_ply))
    except Exception as e:
        _fail(e)
    console.print(
        f"{len(scene.gaussians)} gaussians -> {len(cloud)} points in {cloud.num_patches} patches"
    )
    console.print(f"[green]Saved: {target}[/green]")


@app.callback(invoke_without_command=True)
def main_callback(
    ctx: typer.Context,
    version: Annotated[
        Optional[bool],
        typer.Option("--version", help="Show version and exit"),
    ] = None,
) -> None:
    """
    B-rep Fitter - Reconstruct parametric CAD models from labeled point clouds.
    """
    if version:
        from brep_fitter import __version__

        console.print(f"brep-fitter version {__version__}")
        raise typer.Exit()

    if ctx.invoked_subcommand is None:
        console.print("[bold blue]B-rep Fitter[/bold blue]")
        console.print("Use --help for available commands")


def main() -> int:
    """
    Main entry point for the CLI.

    Returns:
        Exit code (0 success, 1 usage or configuration, 2 input, 3 stage, 4 verification)
    """
    try:
        code = app(standalone_mode=False)
    except click.exceptions.UsageError as e:
        e.show()
        return EXIT_CONFIG
    except click.exceptions.Abort:
        console.print("[red]Aborted[/red]")
        return EXIT_CONFIG
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_CONFIG
    return code if isinstance(code, int) else 0


if __name__ == "__main__":
    sys.exit(main())
