"""Seeded experiment runs: config files, per-run output directories, traces and plots."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import data as D
from . import metrics
from .trainer import Constraint, Record, RunHistory, TrainConfig, train
from .variants import VariantError, VariantSpec

TRACE_HEADER = (
    "step",
    "d_loss",
    "g_loss",
    "sv_fraction",
    "equilibrium_gap",
    "covered_modes",
    "hq_fraction",
    "wall_ms",
)
FINAL_SAMPLES = 2000
TRUE_SAMPLES = 2500
STREAM_SAMPLES = 6
STREAM_TRUE = 7
DATASETS = ("grid25", "lines")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ABORT = 2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    variant: str
    dataset: str
    divergence: str | None = None
    C: float = 1.0
    margin: float | None = None
    optimizer: str = "auto"
    lr: float = 0.001
    batch: int = 500
    kd: int = 1
    kg: int = 1
    constraint: str = "none"
    clip: float = 0.01
    wdecay: float = 0.001
    steps: int = 10000
    seeds: tuple[int, ...] = (0,)
    out: str = "runs"
    log_every: int = 100
    radius_stds: float = 3.0
    min_count: int = 5
    eval_samples: int = 2500
    pool_size: int = 100_000
    fixed_pool: bool = True
    latent_dim: int = 4
    width: int = 128
    lines_theta0: float = 2.0
    beta1: float = 0.5
    beta2: float = 0.999
    rms_decay: float = 0.9
    eps: float = 1e-8
    timing: bool = False

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if self.optimizer not in ("auto", "rmsprop", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.eval_samples < 1 or self.min_count < 0 or not self.radius_stds > 0:
            raise ConfigError("metric parameters out of range")
        try:
            self.variant_spec()
            self.train_config(self.seeds[0])
        except (VariantError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def variant_spec(self) -> VariantSpec:
        if self.variant == "fgan" and self.divergence is None:
            raise ConfigError("variant=fgan needs the key 'divergence'")
        if self.variant == "ebgan" and self.margin is None:
            raise ConfigError("variant=ebgan needs the key 'margin'")
        return VariantSpec(
            self.variant,
            divergence=self.divergence if self.variant == "fgan" else None,
            C=self.C if self.variant == "geometric" else None,
            margin=self.margin if self.variant == "ebgan" else None,
        )

    @property
    def resolved_optimizer(self) -> str:
        if self.optimizer != "auto":
            return self.optimizer
        return "adam" if self.variant == "vanilla-gan" else "rmsprop"

    def constraint_obj(self) -> Constraint:
        value = {"clip": self.clip, "weight-decay": self.wdecay}.get(self.constraint, 0.0)
        return Constraint(self.constraint, value)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            variant=self.variant_spec(),
            optimizer=self.resolved_optimizer,
            lr=self.lr,
            batch=self.batch,
            k_d=self.kd,
            k_g=self.kg,
            constraint=self.constraint_obj(),
            steps=self.steps,
            seed=seed,
            log_every=self.log_every,
            beta1=self.beta1,
            beta2=self.beta2,
            rms_decay=self.rms_decay,
            eps=self.eps,
            timing=self.timing,
        )

    @property
    def run_name(self) -> str:
        return self.variant_spec().name

    def run_dir(self, seed: int) -> Path:
        return Path(self.out) / self.run_name / f"seed{seed}"


# ------------------------------------------------------------- config files

_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
REQUIRED = ("variant", "dataset")
# keys whose value "none" means unset
_OPTIONAL = {"divergence", "margin"}


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(key: str, text: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown key {key!r}")
    text = text.strip()
    if key in _OPTIONAL and text.lower() == "none":
        return None
    kind = _FIELDS[key].type
    try:
        if key == "seeds":
            seeds = tuple(int(s) for s in text.replace(" ", "").split(",") if s)
            if not seeds:
                raise ValueError("empty seed list")
            return seeds
        if "bool" in kind:
            return _parse_bool(text)
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float") or key == "margin":
            value = float(text)
            if not math.isfinite(value):
                raise ValueError("not finite")
            return value
        return text
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key}={text!r}: {exc}") from None


def parse_text(text: str) -> dict:
    """``key=value`` lines; ``#`` starts a comment; later keys win."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = _convert(key, value)
    return values


def parse_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Resolve a config from an optional file plus overrides (flags win)."""
    values = parse_text(Path(path).read_text()) if path is not None else {}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        values[key] = _convert(key, value) if isinstance(value, str) else value
    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    unknown = set(values) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(sorted(unknown))}")
    return ExperimentConfig(**values)


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(config: ExperimentConfig) -> str:
    lines = ["# resolved experiment configuration"]
    for name in _FIELDS:
        value = getattr(config, name)
        if name == "optimizer":
            value = config.resolved_optimizer
        lines.append(f"{name}={_format_value(value)}")
    return "\n".join(lines) + "\n"


def write_resolved(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(format_config(config))


# ----------------------------------------------------------------- outputs


def _num(value: float) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if math.isnan(value):
        return "nan"
    return repr(float(value))


def trace_row(rec: Record, timing: bool) -> list[str]:
    return [
        str(rec.step),
        _num(rec.d_loss),
        _num(rec.g_loss),
        _num(rec.sv_fraction),
        _num(rec.equilibrium_gap),
        _num(rec.covered_modes),
        _num(rec.hq_fraction),
        f"{rec.wall_ms:.3f}" if timing else "0",
    ]


def write_trace(path: str | Path, history: RunHistory, timing: bool = False) -> None:
    """Trace CSV; an aborted run ends with a marker row naming the loss that went non-finite."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for rec in history.records:
            w.writerow(trace_row(rec, timing))
        if history.abort is not None:
            a = history.abort
            row = [str(a.step)] + ["abort"] * (len(TRACE_HEADER) - 1)
            row[TRACE_HEADER.index(a.loss)] = _num(a.value)
            w.writerow(row)


SVG_SIZE = 500
SVG_RANGE = 25.0


def _svg_xy(points: np.ndarray) -> np.ndarray:
    scale = SVG_SIZE / (2 * SVG_RANGE)
    xy = np.asarray(points, float).reshape(-1, 2)
    xy = xy[np.all(np.isfinite(xy), axis=1)]
    inside = np.all(np.abs(xy) <= SVG_RANGE, axis=1)
    xy = xy[inside]
    return np.column_stack([(xy[:, 0] + SVG_RANGE) * scale, (SVG_RANGE - xy[:, 1]) * scale])


def render_scatter_svg(samples, true_samples, path: str | Path) -> None:
    """Standalone SVG of generated points over true points on the fixed ``[-25, 25]^2`` window.

    Points outside the window (or non-finite) are dropped. Coordinates are
    written with two decimals so identical inputs give identical bytes.
    """
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" '
        f'viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">',
        f'<rect x="0" y="0" width="{SVG_SIZE}" height="{SVG_SIZE}" fill="white" stroke="black" stroke-width="1"/>',
    ]
    for layer, color, pts in (("true", "#1f77b4", true_samples), ("generated", "#d62728", samples)):
        parts.append(f'<g id="{layer}" fill="{color}" fill-opacity="0.5">')
        for x, y in _svg_xy(pts if pts is not None else np.zeros((0, 2))):
            parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="1.5"/>')
        parts.append("</g>")
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


# -------------------------------------------------------------------- runs


def build_models(config: ExperimentConfig, seed: int):
    if config.dataset == "lines":
        disc, _ = ad.build_mlp(ad.MlpSpec.simple((2, 1)), D.RngStream(seed, D.STREAM_INIT_D).generator())
        return disc, D.LinesGenerator(config.lines_theta0), D.LinesData(seed)
    disc, _ = ad.build_mlp(ad.discriminator_spec(config.width), D.RngStream(seed, D.STREAM_INIT_D).generator())
    gen, _ = ad.build_mlp(
        ad.generator_spec(config.width, config.latent_dim),
        D.RngStream(seed, D.STREAM_INIT_G).generator(),
        role="generator",
    )
    data = D.GridData(seed, pool_size=config.pool_size, latent_dim=config.latent_dim, fixed_pool=config.fixed_pool)
    return disc, gen, data


def _latent(config: ExperimentConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    if config.dataset == "lines":
        return rng.uniform(0.0, 1.0, size=(n, 1))
    return D.sample_latent(n, config.latent_dim, rng)


def make_evaluator(config: ExperimentConfig, seed: int):
    if config.dataset == "lines":
        return None
    rng = D.RngStream(seed, D.STREAM_EVAL).generator()
    spec = D.GridMixtureSpec()

    def evaluate(gen) -> dict:
        report = metrics.mode_coverage(
            gen(_latent(config, config.eval_samples, rng)).value, spec, config.radius_stds, config.min_count
        )
        return {"covered_modes": report.covered_modes, "hq_fraction": report.hq_fraction}

    return evaluate


def true_samples(config: ExperimentConfig, seed: int, n: int = TRUE_SAMPLES) -> np.ndarray:
    rng = D.RngStream(seed, STREAM_TRUE)
    if config.dataset == "lines":
        return D.sample_parallel_lines_real(n, rng)
    return D.sample_grid_mixture(D.GridMixtureSpec(), n, rng)


@dataclass
class RunResult:
    seed: int
    directory: Path
    history: RunHistory = field(repr=False)

    @property
    def finished(self) -> bool:
        return self.history.finished


def run_seed(config: ExperimentConfig, seed: int) -> RunResult:
    out = config.run_dir(seed)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(dataclasses.replace(config, seeds=(seed,)), out / "config.resolved")
    disc, gen, data = build_models(config, seed)
    history = train(config.train_config(seed), disc, gen, data, evaluate=make_evaluator(config, seed))
    write_trace(out / "trace.csv", history, config.timing)
    if history.finished:
        z = _latent(config, FINAL_SAMPLES, D.RngStream(seed, STREAM_SAMPLES).generator())
        samples = gen(z).value
        D.write_points_csv(out / "samples_final.csv", samples)
        render_scatter_svg(samples, true_samples(config, seed), out / "scatter_final.svg")
    return RunResult(seed, out, history)


def run_experiment(config: ExperimentConfig) -> tuple[int, list[RunResult]]:
    """Train every seed; exit status 0 iff all runs stayed finite."""
    Path(config.out).mkdir(parents=True, exist_ok=True)
    write_resolved(config, Path(config.out) / "config.resolved")
    results = [run_seed(config, seed) for seed in config.seeds]
    status = EXIT_OK if all(r.finished for r in results) else EXIT_ABORT
    return status, results


# ------------------------------------------------------------------ compare

SUMMARY_HEADER = ("variant", "seed", "covered_modes", "hq_fraction", "equilibrium_gap", "status")


class TraceError(ValueError):
    pass


def find_run_dirs(paths) -> list[Path]:
    """Directories holding a trace; a parent directory is searched recursively."""
    found = []
    for p in map(Path, paths):
        if (p / "trace.csv").is_file():
            found.append(p)
            continue
        nested = sorted(t.parent for t in p.rglob("trace.csv")) if p.is_dir() else []
        if not nested:
            raise TraceError(f"no trace.csv under {p}")
        found.extend(nested)
    return found


def _run_identity(run_dir: Path) -> tuple[str, int]:
    resolved = run_dir / "config.resolved"
    if resolved.is_file():
        values = parse_text(resolved.read_text())
        variant = values.get("variant", run_dir.parent.name)
        if variant == "fgan" and values.get("divergence"):
            variant = f"fgan-{values['divergence']}"
        return variant, values.get("seeds", (0,))[0]
    name = run_dir.name
    if not name.startswith("seed") or not name[4:].isdigit():
        raise TraceError(f"cannot infer the seed of {run_dir}")
    return run_dir.parent.name, int(name[4:])


def summarize_run(run_dir: Path) -> dict:
    path = run_dir / "trace.csv"
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_HEADER:
        raise TraceError(f"{path}: header does not match {','.join(TRACE_HEADER)}")
    body = rows[1:]
    status = "ok"
    if body and "abort" in body[-1]:
        status = "abort"
        body = body[:-1]
    if any(len(r) != len(TRACE_HEADER) for r in body):
        raise TraceError(f"{path}: malformed row")
    variant, seed = _run_identity(run_dir)
    if body:
        last = dict(zip(TRACE_HEADER, body[-1]))
        try:
            values = {k: float(last[k]) for k in ("covered_modes", "hq_fraction", "equilibrium_gap")}
        except ValueError as exc:
            raise TraceError(f"{path}: {exc}") from None
    else:
        values = {k: math.nan for k in ("covered_modes", "hq_fraction", "equilibrium_gap")}
    return {"variant": variant, "seed": seed, **values, "status": status}


def compare_runs(paths, out: str | Path | None = None) -> list[dict]:
    rows = sorted((summarize_run(d) for d in find_run_dirs(paths)), key=lambda r: (r["variant"], r["seed"]))
    if out is not None:
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_HEADER)
            for r in rows:
                cm = r["covered_modes"]
                w.writerow([
                    r["variant"],
                    r["seed"],
                    "nan" if math.isnan(cm) else str(int(cm)),
                    _num(r["hq_fraction"]),
                    _num(r["equilibrium_gap"]),
                    r["status"],
                ])
    return rows
