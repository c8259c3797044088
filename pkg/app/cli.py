"""
Command-line entry point.

    python main.py cone catalog/whitney.json
    python main.py classify whitney --ray 0,1,0 --json
    python main.py sphere-map whitney --grid 2000 --output umbrella.csv --jobs 8
    python main.py verify --filter umbrella

Scenes are given as a JSON file path or as a catalog name. Exit codes come
from the error hierarchy: 1 analysis failure, 2 input/IO, 3 inconclusive.
"""
import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field, PositiveFloat, PositiveInt, ValidationError, field_validator

from app.analysis.catalog import list_catalog, load_catalog_scene, run_catalog
from app.analysis.cone import estimate_cone, singular_link
from app.analysis.fiber import Verdict, classify_many, classify_ray, estimate_fiber, fiber_connectivity
from app.analysis.sampler import check_dimension, run_schedule, sphere_directions
from app.analysis.scene import SemialgebraicScene, load_scene
from app.analysis.subspace import Ray
from app.core.config import override_settings, settings
from app.core.errors import InputError, NashFiberError, SingularLocusUnavailable
from app.core.logs import configure_logging
from app.schemas.results import (
    ConeEstimateOut,
    FiberComponentOut,
    FiberEstimateOut,
    RayClassificationOut,
    SampleRecord,
    VerifyReport,
)
from app.schemas.schedule import ScaleSchedule

logger = logging.getLogger(__name__)

SPHERE_MAP_SCHEMA = "nashfiber.sphere-map/1"
COMMANDS = ("cone", "fiber", "classify", "sphere-map", "verify", "dump-samples", "check-dimension")


class RunConfig(BaseModel):
    """Everything a command needs; built from the flags on top of ``settings``."""

    command: str
    scene: Optional[str] = None
    ray: Optional[List[float]] = None
    schedule: ScaleSchedule = Field(default_factory=ScaleSchedule)
    output: Optional[Path] = None
    load: Optional[Path] = None
    json_output: bool = False
    jobs: PositiveInt = Field(default_factory=lambda: settings.JOBS)
    grid: PositiveInt = 500
    filter: Optional[str] = None
    include_slow: bool = False
    epsilon_g: PositiveFloat = Field(default_factory=lambda: settings.EPSILON_G)
    link_epsilon: PositiveFloat = Field(default_factory=lambda: settings.LINK_EPSILON)
    cone_tol: PositiveFloat = Field(default_factory=lambda: settings.CONE_HAUSDORFF_TOL)
    window: PositiveInt = Field(default_factory=lambda: settings.FIBER_WINDOW)
    log_level: str = Field(default_factory=lambda: settings.LOG_LEVEL)

    @field_validator("ray")
    @classmethod
    def normalize_ray(cls, v):
        if v is None:
            return v
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            raise ValueError("ray direction is the zero vector")
        return [float(c) / norm for c in v]

    def threshold_overrides(self) -> dict:
        # Os estimadores leem os limiares de current_settings(), inclusive nos workers
        return {
            "EPSILON_G": self.epsilon_g,
            "LINK_EPSILON": self.link_epsilon,
            "CONE_HAUSDORFF_TOL": self.cone_tol,
            "FIBER_WINDOW": self.window,
        }

    def load_scene(self) -> SemialgebraicScene:
        if self.scene is None:
            raise InputError(f"'{self.command}' needs a scene file or catalog name")
        path = Path(self.scene)
        if path.suffix == ".json" or path.exists():
            return load_scene(path)
        if self.scene in list_catalog():
            return load_catalog_scene(self.scene)
        raise InputError(f"scene file not found: {self.scene}", path=self.scene)

    def require_ray(self, scene: SemialgebraicScene) -> Ray:
        if self.ray is None:
            raise InputError(f"'{self.command}' needs --ray")
        if len(self.ray) != scene.n:
            raise InputError(f"ray has {len(self.ray)} components, scene '{scene.name}' lives in R^{scene.n}")
        return Ray(self.ray)


def _emit(text: str, output: Optional[Path]) -> None:
    if output is None:
        print(text)
        return
    try:
        output.write_text(text + "\n", encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot write {output}: {e}", path=str(output)) from e
    logger.info("wrote %s", output)


def _fmt(v) -> str:
    return "(" + ", ".join(f"{c:.3g}" for c in np.asarray(v) + 0.0) + ")"


def cmd_cone(config: RunConfig) -> int:
    scene = config.load_scene()
    cone = estimate_cone(scene, config.schedule)
    out = ConeEstimateOut.from_estimate(cone)
    if config.json_output or config.output is not None:
        _emit(out.model_dump_json(indent=2), config.output)
    if not config.json_output:
        print(f"scene '{scene.name}': n = {scene.n}, d = {scene.d}")
        print(f"link: {len(cone.clusters)} cluster(s), dim C = {cone.cone_dim}")
        for c in cone.clusters:
            shape = "point" if c.dim == 0 else f"{c.dim}-dimensional piece around"
            flag = " (ambiguous)" if c.ambiguous else ""
            print(f"  {shape} {_fmt(c.centre)}: {len(c.directions)} directions, diameter {c.diameter:.3g}{flag}")
        print("trace: " + ", ".join(f"{t:.3g}" for t in cone.trace) + f" (stabilized={cone.stabilized})")
        if cone.warnings:
            print("warnings: " + ", ".join(cone.warnings))
        for index, forms in enumerate(out.initial_forms):
            print(f"initial forms, piece {index}: " + (", ".join(forms) or "none"))
    return 0


def cmd_fiber(config: RunConfig) -> int:
    if config.load is not None:
        # Releitura de uma fibra emitida: só refaz as componentes conexas
        try:
            out = FiberEstimateOut.model_validate_json(config.load.read_text(encoding="utf-8"))
        except OSError as e:
            raise InputError(f"cannot read {config.load}: {e}", path=str(config.load)) from e
        except ValidationError as e:
            raise InputError(f"{config.load}: invalid fiber JSON: {e.errors()[0]['msg']}") from e
        estimate = out.to_estimate()
    else:
        scene = config.load_scene()
        scene.require_fiber_dims()
        estimate = estimate_fiber(scene, config.require_ray(scene), config.schedule)
        out = FiberEstimateOut.from_estimate(estimate)
    components = fiber_connectivity(estimate)
    logger.info("fiber of '%s': %d cluster(s), %d component(s), diameter %.3g",
                estimate.scene_name, len(estimate.clusters), len(components), estimate.diameter)
    if config.load is None:
        _emit(out.model_dump_json(indent=2), config.output)
    elif config.json_output:
        print(json.dumps([FiberComponentOut.from_component(c).model_dump() for c in components]))
    else:
        print(f"{len(components)} component(s)")
    return 0


def cmd_classify(config: RunConfig) -> int:
    scene = config.load_scene()
    scene.require_fiber_dims()
    result = classify_ray(scene, config.require_ray(scene), config.schedule)
    out = RayClassificationOut.from_classification(scene.name, result)
    if config.json_output or config.output is not None:
        _emit(out.model_dump_json(indent=2), config.output)
    if not config.json_output:
        print(f"{scene.name} {_fmt(result.ray.direction)}: {result.verdict.value}")
        for key in ("cluster_count", "fiber_diameter", "distance_to_TvC", "in_cprime", "criterion_b", "in_Eprime"):
            print(f"  {key}: {out.evidence.get(key)}")
    return 3 if result.verdict is Verdict.INCONCLUSIVE else 0


def cmd_sphere_map(config: RunConfig) -> int:
    scene = config.load_scene()
    scene.require_fiber_dims()
    schedule = config.schedule
    cone = estimate_cone(scene, schedule)
    try:
        locus = singular_link(scene, schedule)
    except SingularLocusUnavailable as e:
        logger.warning("no singular locus for '%s' (%s); C' membership left undecided", scene.name, e.message)
        locus = None
    rng = np.random.default_rng(schedule.seed)
    U = sphere_directions(scene.n, config.grid, rng)
    rays = [Ray(u) for u in U]
    results = classify_many(scene, rays, schedule, jobs=config.jobs, cone=cone, locus_link=locus)
    stream = open(config.output, "w", newline="", encoding="utf-8") if config.output else sys.stdout
    try:
        stream.write(f"# {SPHERE_MAP_SCHEMA}\n")
        writer = csv.writer(stream)
        writer.writerow([f"v{i + 1}" for i in range(scene.n)] + ["verdict", "fiber_diameter", "cluster_count"])
        for ray, result in zip(rays, results):
            diameter = result.evidence.get("fiber_diameter")
            writer.writerow([f"{c:.8f}" for c in ray.direction] + [
                result.verdict.value,
                "" if diameter is None or not np.isfinite(diameter) else f"{diameter:.6g}",
                result.evidence.get("cluster_count", 0),
            ])
    finally:
        if stream is not sys.stdout:
            stream.close()
    counts = {v.value: sum(r.verdict is v for r in results) for v in Verdict}
    logger.info("sphere map of '%s': %s (angular resolution %.3g)", scene.name,
                {k: c for k, c in counts.items() if c}, schedule.aperture(schedule.K - 1))
    return 0


def cmd_verify(config: RunConfig) -> int:
    report = VerifyReport(results=run_catalog(config.filter, config.schedule,
                                              include_slow=config.include_slow, jobs=config.jobs))
    if config.json_output or config.output is not None:
        _emit(report.model_dump_json(indent=2), config.output)
    if not config.json_output:
        for r in report.results:
            margin = "" if r.margin is None else f" margin={r.margin:.3g}"
            print(f"{r.status.upper():13s} {r.check:28s} [{r.scene}]{margin} {r.detail}")
    if not report.results:
        logger.warning("no check matches filter %r", config.filter)
    return 1 if any(r.status == "fail" for r in report.results) else 0


def cmd_dump_samples(config: RunConfig) -> int:
    scene = config.load_scene()
    ray = config.require_ray(scene) if config.ray is not None else None
    samples = run_schedule(scene, ray, config.schedule)
    lines = [SampleRecord(**record).model_dump_json() for s in samples for record in s.records()]
    _emit("\n".join(lines), config.output)
    return 0


def cmd_check_dimension(config: RunConfig) -> int:
    scene = config.load_scene()
    report = check_dimension(scene, config.schedule)
    if config.json_output:
        print(json.dumps({"scene": report.scene_name, "k": report.k, "r": report.r, "declared": report.declared,
                          "estimated": report.estimated, "points": report.points,
                          "histogram": report.histogram, "matches": report.matches}))
    else:
        status = "ok" if report.matches else "MISMATCH"
        print(f"{scene.name}: declared d = {report.declared}, local PCA d = {report.estimated} "
              f"({report.points} points at r = {report.r:.3g}) {status}")
    return 0


HANDLERS = {
    "cone": cmd_cone,
    "fiber": cmd_fiber,
    "classify": cmd_classify,
    "sphere-map": cmd_sphere_map,
    "verify": cmd_verify,
    "dump-samples": cmd_dump_samples,
    "check-dimension": cmd_check_dimension,
}


def _components(text: str) -> List[float]:
    try:
        values = [float(c) for c in text.replace(" ", "").split(",") if c]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid ray '{text}'")
    if not values:
        raise argparse.ArgumentTypeError("empty ray")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nashfiber", description="Tangent cones and Nash fibers of semialgebraic sets."
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default: NASHFIBER_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", dest="json_output", action="store_true", help="machine-readable output only")
    common.add_argument("--output", "-o", type=Path, default=None)
    common.add_argument("--jobs", type=int, default=None, help="worker processes (default: processor count)")
    group = common.add_argument_group("schedule")
    group.add_argument("--r0", type=float)
    group.add_argument("--lambda", dest="lam", type=float)
    group.add_argument("--K", type=int)
    group.add_argument("--delta0", type=float)
    group.add_argument("--mu", type=float)
    group.add_argument("--samples", dest="samples_per_scale", type=int)
    group.add_argument("--seed", type=int, help="default: NASHFIBER_SEED")
    group = common.add_argument_group("thresholds")
    group.add_argument("--epsilon-g", type=float, help=f"fiber clustering radius (default {settings.EPSILON_G})")
    group.add_argument("--link-epsilon", type=float, help=f"link clustering radius (default {settings.LINK_EPSILON})")
    group.add_argument(
        "--cone-tol", type=float, help=f"link Hausdorff tolerance (default {settings.CONE_HAUSDORFF_TOL})"
    )
    group.add_argument("--window", type=int, help=f"finest scales used by the fiber (default {settings.FIBER_WINDOW})")

    def scene_command(name: str, help: str, ray: bool = False, scene_optional: bool = False):
        p = sub.add_parser(name, parents=[common], help=help)
        p.add_argument("scene", nargs="?" if scene_optional else None, help="scene JSON file or catalog name")
        if ray:
            p.add_argument("--ray", type=_components, help="direction as comma-separated components")
        return p

    scene_command("cone", "estimate the tangent cone and its link")
    p = scene_command("fiber", "estimate the Nash fiber along a ray", ray=True, scene_optional=True)
    p.add_argument("--load", type=Path, help="re-read a fiber JSON and recount its components")
    scene_command("classify", "classify a ray of the tangent cone", ray=True)
    p = scene_command("sphere-map", "classify a grid of directions and write CSV")
    p.add_argument("--grid", type=int, default=500)
    scene_command("dump-samples", "write the accepted samples of every scale as JSON lines", ray=True)
    scene_command("check-dimension", "compare the declared dimension with local PCA of samples")
    p = sub.add_parser("verify", parents=[common], help="run the regression suite over the catalog")
    p.add_argument("--filter", default=None, help="substring of the check names")
    p.add_argument("--slow", dest="include_slow", action="store_true", help="include the slow grid checks")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in ("r0", "lam", "K", "delta0", "mu", "samples_per_scale", "seed")}
    data = {
        "command": args.command,
        "scene": getattr(args, "scene", None),
        "ray": getattr(args, "ray", None),
        "schedule": ScaleSchedule().updated(**overrides),
        "output": args.output,
        "load": getattr(args, "load", None),
        "json_output": args.json_output,
        "jobs": args.jobs,
        "grid": getattr(args, "grid", None),
        "filter": getattr(args, "filter", None),
        "include_slow": getattr(args, "include_slow", False),
        "epsilon_g": args.epsilon_g,
        "link_epsilon": args.link_epsilon,
        "cone_tol": args.cone_tol,
        "window": args.window,
        "log_level": args.log_level,
    }
    # Flags ausentes ficam com os defaults de settings
    return RunConfig(**{k: v for k, v in data.items() if v is not None})


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        config = config_from_args(args)
    except ValidationError as e:
        error = e.errors()[0]
        logger.error("invalid option %s: %s", ".".join(str(p) for p in error["loc"]), error["msg"])
        return InputError.exit_code
    try:
        with override_settings(**config.threshold_overrides()):
            return HANDLERS[config.command](config)
    except NashFiberError as e:
        logger.error("%s: %s", type(e).__name__, e.message)
        return e.exit_code
    except (OSError, ValueError) as e:
        logger.error("%s", e)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
