"""Configuration files, scenario orchestration, and bit-stable output files.

Config files are flat `key = value` text with dotted section names; every key
has a documented default, so a minimal file only needs the values that differ.
Outputs are a timeseries CSV, a per-period metrics CSV, and a JSON manifest;
the data files embed the manifest's config checksum and are byte-identical
across reruns of the same configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .design import DesignError, LoopShapeSpec
from .gp import periodic_kernel
from .lti import SimulationDivergence
from .scenario import (
    POSITION_MODES,
    VARIANTS,
    VELOCITY_SOURCES,
    DisturbanceMap,
    ScenarioConfig,
    VelocityProfile,
    run_scenario,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SIMULATION = 2
EXIT_DESIGN = 3


class ConfigError(ValueError):
    """Configuration file could not be parsed or violates an invariant."""


def _fmt(x: float) -> str:
    return format(float(x) + 0.0, ".17g")  # +0.0 folds -0.0 into 0


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError as err:
        raise ConfigError(f"not a number: {text!r}") from err


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError as err:
        raise ConfigError(f"not an integer: {text!r}") from err


def _parse_floats(text: str) -> list:
    return [_parse_float(tok) for tok in text.split()]


def _parse_segments(text: str) -> list:
    segments = []
    for part in text.split(";"):
        toks = part.split()
        if len(toks) != 3:
            raise ConfigError(
                f"velocity segment {part.strip()!r} must be 'duration v_start v_end'"
            )
        segments.append(tuple(_parse_float(t) for t in toks))
    return segments


def _parse_choice(options):
    def parse(text: str) -> str:
        if text not in options:
            raise ConfigError(f"must be one of {', '.join(options)}: got {text!r}")
        return text
    return parse


# key -> (attribute path on ScenarioConfig, parser)
_KEYS = {
    "plant.J": ("inertia", _parse_float),
    "plant.d": ("damping", _parse_float),
    "plant.k": ("stiffness", _parse_float),
    "sim.fs": ("sample_rate_hz", _parse_float),
    "sim.duration": ("duration", _parse_float),
    "sim.variant": ("variant", _parse_choice(VARIANTS)),
    "sim.position_mode": ("position_mode", _parse_choice(POSITION_MODES)),
    "sim.velocity_source": ("velocity_source", _parse_choice(VELOCITY_SOURCES)),
    "loop.crossover_hz": ("loop.crossover_hz", _parse_float),
    "loop.lead_ratio": ("loop.lead_ratio", _parse_float),
    "loop.lp_ratio": ("loop.lp_ratio", _parse_float),
    "loop.lp_damping": ("loop.lp_damping", _parse_float),
    "kernel.sigma_f": ("sigma_f", _parse_float),
    "kernel.sigma_n": ("sigma_n", _parse_float),
    "kernel.length_scale": ("length_scale", _parse_float),
    "spatial.p_per": ("p_per", _parse_float),
    "spatial.nbar": ("nbar", _parse_int),
    "traditional.n_conv": ("n_conv", _parse_int),
    "disturbance.amplitudes": ("disturbance.amplitudes", _parse_floats),
    "disturbance.frequencies": ("disturbance.frequencies", _parse_floats),
    "disturbance.phases": ("disturbance.phases", _parse_floats),
    "velocity.segments": ("velocity.segments", _parse_segments),
}


def _parse_file(path) -> dict:
    raw = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    unknown = sorted(set(raw) - set(_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return raw


def resolve_config(path=None, variant_override: str | None = None):
    """Load a config file (or pure defaults) into a validated ScenarioConfig.

    Returns the config plus the fully resolved key -> string mapping that the
    manifest records and the checksum is computed over.
    """
    raw = _parse_file(path) if path is not None else {}
    cfg = ScenarioConfig()
    dist = {"amplitudes": cfg.disturbance.amplitudes.tolist(),
            "frequencies": cfg.disturbance.frequencies.tolist(),
            "phases": cfg.disturbance.phases.tolist()}
    segments = list(cfg.profile.segments)
    loop_kw = {"crossover_hz": cfg.loop.crossover_hz,
               "lead_ratio": cfg.loop.lead_ratio,
               "lp_ratio": cfg.loop.lp_ratio,
               "lp_damping": cfg.loop.lp_damping}

    for key, text in raw.items():
        attr, parser = _KEYS[key]
        try:
            value = parser(text)
        except ConfigError as err:
            raise ConfigError(f"{key}: {err}") from None
        if attr.startswith("disturbance."):
            dist[attr.split(".", 1)[1]] = value
        elif attr == "velocity.segments":
            segments = value
        elif attr.startswith("loop."):
            loop_kw[attr.split(".", 1)[1]] = value
        else:
            setattr(cfg, attr, value)
    if variant_override is not None:
        cfg.variant = variant_override

    try:
        cfg.loop = LoopShapeSpec(**loop_kw)
        if len(dist["phases"]) != len(dist["amplitudes"]):
            dist["phases"] = [0.0] * len(dist["amplitudes"])
        cfg.disturbance = DisturbanceMap(dist["amplitudes"],
                                         dist["frequencies"], dist["phases"])
        cfg.profile = VelocityProfile(segments)
        cfg.validate()
    except ValueError as err:
        raise ConfigError(str(err)) from None
    return cfg, resolve_config_from(cfg)


def load_config(path) -> ScenarioConfig:
    """Parse and validate a configuration file with defaults applied."""
    return resolve_config(path)[0]


def config_checksum(resolved: dict) -> str:
    canonical = "\n".join(f"{k} = {resolved[k]}" for k in sorted(resolved))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _write_timeseries(path: Path, result, checksum: str) -> None:
    none = result.series["none"]
    trad = result.series.get("traditional", none)
    spat = result.series.get("spatial", none)
    f_trad = trad.f if "traditional" in result.series else np.zeros_like(none.e)
    f_spat = spat.f if "spatial" in result.series else np.zeros_like(none.e)
    lines = [f"# manifest_checksum={checksum}",
             "t,p,d,e_trad,e_spatial,f_trad,f_spatial"]
    for k in range(result.t.size):
        lines.append(",".join(_fmt(x) for x in (
            result.t[k], result.p[k], result.d[k],
            trad.e[k], spat.e[k], f_trad[k], f_spat[k])))
    path.write_text("\n".join(lines) + "\n")


def _write_metrics(path: Path, result, checksum: str) -> None:
    requested = {"both": ("traditional", "spatial"),
                 "traditional": ("traditional",),
                 "spatial": ("spatial",),
                 "none": ("none",)}[result.cfg.variant]
    lines = [f"# manifest_checksum={checksum}",
             "variant,period,start_sample,end_sample,norm"]
    for name in requested:
        for m in result.metrics[name]:
            lines.append(f"{name},{m.period},{m.start},{m.end},{_fmt(m.norm)}")
    path.write_text("\n".join(lines) + "\n")


def _write_manifest(path: Path, resolved: dict, checksum: str,
                    design) -> None:
    payload = {
        "config_checksum": checksum,
        "tool_version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "resolved_config": resolved,
        "design": {
            "crossover_hz": design.crossover_hz,
            "phase_margin_deg": design.phase_margin_deg,
            "closed_loop_spectral_radius": design.spectral_radius,
            "controller_num": design.ctrl_num,
            "controller_den": design.ctrl_den,
            "preview_spatial": design.preview_spatial,
            "preview_traditional": design.preview_traditional,
            "n_conv": design.n_conv,
        },
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def run(cfg: ScenarioConfig, out_dir, resolved: dict | None = None) -> int:
    """Run one scenario and write timeseries.csv, metrics.csv, manifest.json."""
    if resolved is None:
        resolved = resolve_config_from(cfg)
    checksum = config_checksum(resolved)
    try:
        result = run_scenario(cfg)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_timeseries(out / "timeseries.csv", result, checksum)
        _write_metrics(out / "metrics.csv", result, checksum)
        _write_manifest(out / "manifest.json", resolved, checksum, result.design)
    except SimulationDivergence as err:
        print(f"simulation aborted: {err}", file=sys.stderr)
        return EXIT_SIMULATION
    except DesignError as err:
        print(f"design failed: {err}", file=sys.stderr)
        return EXIT_DESIGN
    except OSError as err:
        print(f"cannot write outputs: {err}", file=sys.stderr)
        return EXIT_SIMULATION
    return EXIT_OK


def resolve_config_from(cfg: ScenarioConfig) -> dict:
    """Resolved key mapping for an in-memory config (used by run())."""
    return {
        "plant.J": _fmt(cfg.inertia),
        "plant.d": _fmt(cfg.damping),
        "plant.k": _fmt(cfg.stiffness),
        "sim.fs": _fmt(cfg.sample_rate_hz),
        "sim.duration": _fmt(cfg.duration),
        "sim.variant": cfg.variant,
        "sim.position_mode": cfg.position_mode,
        "sim.velocity_source": cfg.velocity_source,
        "loop.crossover_hz": _fmt(cfg.loop.crossover_hz),
        "loop.lead_ratio": _fmt(cfg.loop.lead_ratio),
        "loop.lp_ratio": _fmt(cfg.loop.lp_ratio),
        "loop.lp_damping": _fmt(cfg.loop.lp_damping),
        "kernel.sigma_f": _fmt(cfg.sigma_f),
        "kernel.sigma_n": _fmt(cfg.sigma_n),
        "kernel.length_scale": _fmt(cfg.length_scale),
        "spatial.p_per": _fmt(cfg.p_per),
        "spatial.nbar": str(cfg.nbar),
        "traditional.n_conv": str(cfg.n_conv),
        "disturbance.amplitudes": " ".join(map(_fmt, cfg.disturbance.amplitudes)),
        "disturbance.frequencies": " ".join(map(_fmt, cfg.disturbance.frequencies)),
        "disturbance.phases": " ".join(map(_fmt, cfg.disturbance.phases)),
        "velocity.segments": " ; ".join(
            " ".join(map(_fmt, seg)) for seg in cfg.profile.segments),
    }


def _cmd_simulate(args) -> int:
    cfg, resolved = resolve_config(args.config, args.variant)
    return run(cfg, args.out, resolved)


def _cmd_kernel_profile(args) -> int:
    cfg, resolved = resolve_config(args.config)
    checksum = config_checksum(resolved)
    hyper = cfg.hyper()
    lags = np.linspace(-cfg.p_per, cfg.p_per, 1025)
    kappa = periodic_kernel(lags, 0.0, hyper)
    lines = [f"# manifest_checksum={checksum}", "lag,kappa"]
    lines += [f"{_fmt(lag)},{_fmt(val)}" for lag, val in zip(lags, kappa)]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    return EXIT_OK


def _cmd_design_report(args) -> int:
    from .design import learning_filter_spatial, learning_filter_traditional
    from .lti import zoh_discretize
    from .design import design_feedback

    cfg, _ = resolve_config(args.config)
    ts = 1.0 / cfg.sample_rate_hz
    plant = cfg.plant_tf()
    try:
        ctrl = design_feedback(plant, cfg.loop, ts)
        l_spatial = learning_filter_spatial(plant, ctrl, ts)
        l_trad = learning_filter_traditional(plant, ctrl, ts)
    except DesignError as err:
        print(f"design failed: {err}", file=sys.stderr)
        return EXIT_DESIGN
    from .design import loop_margins
    margins = loop_margins(zoh_discretize(plant, ts), ctrl)
    num_c, den_c = ctrl.to_tf()

    print(f"plant: J={cfg.inertia} d={cfg.damping} k={cfg.stiffness}, "
          f"fs={cfg.sample_rate_hz} Hz")
    print(f"open-loop crossover: {margins.crossover_hz:.3f} Hz")
    print(f"phase margin: {margins.phase_margin_deg:.2f} deg")
    print(f"closed-loop spectral radius: {margins.spectral_radius:.6f}")
    print(f"controller num: {[float(x) for x in num_c]}")
    print(f"controller den: {[float(x) for x in den_c]}")
    for label, filt in (("spatial", l_spatial), ("traditional", l_trad)):
        num_l, den_l = filt.causal.to_tf()
        print(f"{label} learning filter: preview={filt.preview} samples, "
              f"order={filt.causal.order}")
        print(f"  num: {[float(x) for x in num_l]}")
        print(f"  den: {[float(x) for x in den_l]}")
    print(f"traditional memory length n_conv: {cfg.n_conv} samples")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spatialrc",
        description="Closed-loop simulation of position-domain repetitive control",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a scenario and write CSV logs")
    p_sim.add_argument("--config", help="config file (defaults used if omitted)")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--variant", choices=VARIANTS,
                       help="override the configured controller variant")
    p_sim.set_defaults(func=_cmd_simulate)

    p_ker = sub.add_parser("kernel-profile",
                           help="emit the periodic kernel over two periods of lag")
    p_ker.add_argument("--config", help="config file (defaults used if omitted)")
    p_ker.add_argument("--out", required=True, help="output CSV file")
    p_ker.set_defaults(func=_cmd_kernel_profile)

    p_rep = sub.add_parser("design-report",
                           help="print controller and learning-filter design")
    p_rep.add_argument("--config", help="config file (defaults used if omitted)")
    p_rep.set_defaults(func=_cmd_design_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
