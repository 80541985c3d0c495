"""
Command implementations behind the pseudotor CLI.

Every command takes the run configuration, writes its files under the output directory and returns
what it wrote so callers (and tests) can inspect the results.
"""

from pathlib import Path
from typing import Dict, Optional

import numpy as np
import structlog

from app.models.fibration import HeightMode
from app.models.reports import SpecialtyReport, VerificationReport
from app.services.degeneration_service import degeneration_service
from app.services.dynamics_service import dynamics_service
from app.services.fibration_service import fibration_service
from app.services.geometry_service import geometry_service
from app.services.pseudotoric_service import pseudotoric_service
from app.services.special_service import special_service
from app.services.verification_service import SYMBOL_MAX, verification_service
from app.utils.serialization import write_csv, write_json
from config.settings import Settings, settings

logger = structlog.get_logger()


def configure(config: Settings) -> Settings:
    """Make config the active run configuration of every service"""
    for name in type(config).model_fields:
        setattr(settings, name, getattr(config, name))
    pseudotoric_service.integrals = dynamics_service.integrals_from_settings(settings)
    logger.info("run_configured", seed=settings.seed, height_mode=settings.height_mode)
    return settings


def output_dir(config: Settings) -> Path:
    path = Path(config.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_verify(config: Settings) -> VerificationReport:
    report = verification_service.run(config)
    write_json(output_dir(config) / "report.json", report)
    return report


def _height(config: Settings, mode: Optional[str] = None):
    mode = HeightMode(mode or config.height_mode)
    if mode == HeightMode.SYMBOL:
        return fibration_service.make_height(SYMBOL_MAX, mode=mode)
    return fibration_service.default_height(config)


def cmd_fiber(
    config: Settings, level: float, c1: float, c2: float, res: Optional[int] = None, loop_stride: int = 1
) -> Dict[str, Path]:
    h = _height(config)
    loop = fibration_service.trace_loop(h, level)
    torus = fibration_service.sample_torus(
        loop, c1, c2, res=res, h=h, loop_stride=loop_stride, rng=np.random.default_rng(config.seed)
    )
    residual = fibration_service.sample_residual(torus)
    lagrangian = fibration_service.lagrangian_residual(torus)
    samples = [
        {
            "loop_index": k, "phi1": float(torus.angles[m]), "phi2": float(torus.angles[n]),
            "x": point.x.coords, "y": point.y.coords, "fields": fields,
        }
        for k, grid, grid_frames in zip(torus.loop_indices, torus.samples, torus.frames)
        for m, (row, row_frames) in enumerate(zip(grid, grid_frames))
        for n, (point, (_, fields)) in enumerate(zip(row, row_frames))
    ]
    excluded = [loop.samples[k].coords for k in torus.excluded_indices]
    out = output_dir(config)
    paths = {
        "json": write_json(out / "torus.json", {
            "schema_version": config.schema_version,
            "level": level, "c1": c1, "c2": c2,
            "type": torus.fiber_type,
            "residual": residual,
            "lagrangian_residual": lagrangian,
            "periods": list(torus.periods),
            "holonomy": torus.holonomy,
            "excluded_indices": torus.excluded_indices,
            "exclusion_annulus": excluded,
            "samples": samples,
        }),
        "csv": write_csv(
            out / "torus.csv",
            ["loop_index", "phi1", "phi2"] + [f"{z}{i}_{part}" for z in "xy" for i in range(3) for part in ("re", "im")],
            (
                [s["loop_index"], s["phi1"], s["phi2"]]
                + [float(v) for z in (s["x"], s["y"]) for c in z for v in (c.real, c.imag)]
                for s in samples
            ),
        ),
    }
    logger.info("fiber_written", level=level, c1=c1, c2=c2, type=torus.fiber_type.value, samples=len(samples))
    return paths


def cmd_moment(config: Settings, n: int) -> Dict[str, Path]:
    rng = np.random.default_rng(config.seed)
    flags = [geometry_service.random_flag(rng) for _ in range(n)]
    moment = fibration_service.moment_image(flags)
    path = write_json(output_dir(config) / "polygon.json", {
        "schema_version": config.schema_version,
        "samples": n,
        "hull": moment.hull,
        "vertices": moment.vertices,
        "segments": moment.segments,
    })
    return {"json": path}


def cmd_specialty(config: Settings, mode: Optional[str] = None, fibers: int = 10, res: int = 4) -> SpecialtyReport:
    h = _height(config, mode)
    jobs = [(level, c) for level in config.loop_levels for c in config.torus_labels][:fibers]
    tori = []
    for level, (c1, c2) in jobs:
        loop = fibration_service.trace_loop(h, level)
        tori.append(fibration_service.sample_torus(
            loop, c1, c2, res=res, h=h, loop_stride=8, rng=np.random.default_rng(config.seed)
        ))
    report = special_service.specialty_report(tori, special_service.divisor_for(h), h.mode.value)
    write_json(output_dir(config) / "specialty.json", report)
    return report


def cmd_isotopy(
    config: Settings,
    level: float,
    c1: float,
    c2: float,
    r1: Optional[float] = None,
    r2: Optional[float] = None,
    time: Optional[float] = None,
    res: int = 2,
):
    h = _height(config)
    torus = fibration_service.sample_torus(
        fibration_service.trace_loop(h, level, 8), c1, c2, res=res, h=h,
        rng=np.random.default_rng(config.seed),
    )
    cloud, frames = degeneration_service.torus_cloud(torus)
    g, T = degeneration_service.make_g()
    T = T if time is None else time
    if r1 is None or r2 is None:
        clearance = degeneration_service.path_clearance(g, T, cloud)
        default_r1, default_r2 = degeneration_service.default_radii(clearance)
        r1 = default_r1 if r1 is None else r1
        r2 = min(default_r2, r1 / 2) if r2 is None else r2
    G = degeneration_service.cutoff_G(g, r1, r2)
    transported, report = degeneration_service.isotopy_transport(
        G, T, cloud, frames, rng=np.random.default_rng(config.seed)
    )

    out = output_dir(config)
    header = [f"{z}{i}_{part}" for z in "xy" for i in range(3) for part in ("re", "im")]

    def rows(points):
        return ([float(v) for z in (p.x.coords, p.y.coords) for c in z for v in (c.real, c.imag)] for p in points)

    write_csv(out / "isotopy_before.csv", header, rows(cloud))
    write_csv(out / "isotopy_after.csv", header, rows(transported))
    write_json(out / "isotopy.json", report)
    return report


def cmd_section(config: Settings, x, y) -> Dict[str, object]:
    """Divisor section and residue form on the chart basis at one flag"""
    p = geometry_service.make_flag(np.asarray(x, dtype=complex), np.asarray(y, dtype=complex))
    divisor = special_service.divisor_for(_height(config))
    frame = geometry_service.chart_frame(p)
    result = {
        "schema_version": config.schema_version,
        "x": p.x.coords,
        "y": p.y.coords,
        "section": special_service.section_D(p, divisor),
        "chart": list(frame.chart_id),
        "theta": special_service.frame_theta(frame, np.eye(6)[:3], divisor),
    }
    write_json(output_dir(config) / "section.json", result)
    return result
