"""Command-line pipeline: synth, train, probe, extract-templates, fit,
evaluate, reorder, plot-data.

All commands read a versioned JSON config (unknown keys rejected), route all
randomness through one seed, write outputs atomically, and embed the config
hash plus effective seed in every artifact, so reruns with the same config
and seed are byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import __version__
from .core import EssenceSeries, normalize_minmax
from .errors import AlbumArcError, ConfigError, IngestError
from .essence import EssenceModel, TrainConfig, probe_feature_mi, train
from .evaluation import evaluate_templates, plot_rows
from .fileio import (
    atomic_write_text,
    config_hash,
    read_json,
    write_json,
    write_table,
)
from .fitcurve import fit_ordering
from .ingest import (
    Dataset,
    SynthConfig,
    drop_tracks_missing,
    filter_albums,
    load_essence_csv,
    load_feature_table,
    load_scalar_table,
    synth_generate,
    write_essence_csv,
    write_feature_csv,
    write_scalar_csv,
)
from .templates import GAConfig, TemplateSet, evolve_templates

log = logging.getLogger(__name__)

CONFIG_VERSION = 1

_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_GA_KEYS = {f.name for f in dataclasses.fields(GAConfig)}
_SYNTH_KEYS = {f.name for f in dataclasses.fields(SynthConfig)} | {"shuffle_orders"}

SECTION_KEYS = {
    "paths": {"dataset", "scalars", "essence", "model", "templates", "eval_report"},
    "synth": _SYNTH_KEYS,
    "train": _TRAIN_KEYS | {"dims"},
    "probe": {"features"},
    "ga": _GA_KEYS | {"split", "knots"},
    "evaluate": {"alpha", "split", "seed"},
    "reorder": {"template"},
}


@dataclass
class App:
    config_path: Path | None
    seed: int | None
    threads: int
    out: Path
    _config: dict | None = None
    _hash: str | None = None

    @property
    def config(self) -> dict:
        if self._config is None:
            if self.config_path is None:
                raise ConfigError("this command requires --config")
            self._config = _load_config(self.config_path)
            self._hash = config_hash(self._config)
        return self._config

    @property
    def hash(self) -> str:
        self.config
        return self._hash

    def section(self, name: str) -> dict:
        return self.config.get(name, {})

    def effective_seed(self, section: dict) -> int:
        if self.seed is not None:
            return self.seed
        return int(section.get("seed", 0))

    def provenance(self, seed: int) -> dict:
        return {"config_sha256": self.hash, "seed": seed}

    def path(self, key: str, required: bool = True) -> Path | None:
        value = self.section("paths").get(key)
        if value is None:
            if required:
                raise ConfigError(f"config paths.{key} is required for this command")
            return None
        p = Path(value)
        if not p.is_absolute():
            p = self.config_path.parent / p
        return p


def _load_config(path: Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if "version" not in doc:
        raise ConfigError(f"{path}: missing required 'version' field")
    if doc["version"] != CONFIG_VERSION:
        raise ConfigError(
            f"{path}: unsupported config version {doc['version']!r} "
            f"(expected {CONFIG_VERSION})"
        )
    for key, value in doc.items():
        if key == "version":
            continue
        if key not in SECTION_KEYS:
            raise ConfigError(f"{path}: unknown config section {key!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: section {key!r} must be an object")
        unknown = set(value) - SECTION_KEYS[key]
        if unknown:
            raise ConfigError(
                f"{path}: unknown key(s) in section {key!r}: {sorted(unknown)}"
            )
    return doc


def _read_input_json(path: Path) -> dict:
    try:
        return read_json(path)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None


def _load_dataset(app: App) -> Dataset:
    return filter_albums(load_feature_table(app.path("dataset")))


def _load_templates(app: App) -> TemplateSet:
    doc = _read_input_json(app.path("templates"))
    try:
        return TemplateSet.from_dict(doc)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{app.path('templates')}: bad templates file: {exc}") from None


def _scalar_essence(app: App, dataset: Dataset) -> dict:
    """track_id -> scalar essence, from paths.essence CSV or paths.model."""
    essence_path = app.path("essence", required=False)
    if essence_path is not None:
        track_ids, values = load_essence_csv(essence_path)
        if values.shape[1] != 1:
            raise ConfigError(
                f"{essence_path}: template fitting needs scalar essence, got d={values.shape[1]}"
            )
        return {tid: float(v) for tid, v in zip(track_ids, values[:, 0])}
    model_path = app.path("model", required=False)
    if model_path is None:
        raise ConfigError("config needs paths.essence or paths.model")
    model = EssenceModel.from_dict(_read_input_json(model_path))
    if model.essence_dim != 1:
        raise ConfigError(
            f"{model_path}: template fitting needs a d=1 model, got d={model.essence_dim}"
        )
    essence = {}
    for album in dataset.albums:
        flat = np.stack([t.flat for t in album.tracks])
        for track, value in zip(album.tracks, model.extract_matrix(flat)[:, 0]):
            essence[track.track_id] = float(value)
    return essence


def _subset(dataset: Dataset, split: str) -> Dataset:
    if split == "all":
        return dataset
    sub = dataset.subset(split)
    if not len(sub):
        raise ConfigError(f"dataset has no albums in split {split!r}")
    return sub


def _album_essence_input(app: App) -> tuple[list[str] | None, np.ndarray]:
    path = app.path("essence")
    track_ids, values = load_essence_csv(path)
    if values.shape[1] != 1:
        raise ConfigError(f"{path}: need scalar essence (one essence column)")
    if values.shape[0] < 2:
        raise ConfigError(f"{path}: need at least 2 tracks to fit an ordering")
    return track_ids, values[:, 0]


def _fit_doc(index: int, result, track_ids: list[str] | None) -> dict:
    doc = {
        "template_index": index,
        "ordering": [int(i) for i in result.ordering.positions],
        "bottleneck": result.bottleneck,
        "total_deviation": result.total_deviation,
        "per_position_deviation": [float(d) for d in result.per_position_deviation],
    }
    if track_ids is not None:
        doc["track_order"] = [track_ids[i] for i in result.ordering.positions]
    return doc


def _float_cell(x) -> str:
    return repr(float(x))


# --------------------------------------------------------------------- group


@click.group(name="albumarc")
@click.version_option(__version__)
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
              help="Versioned JSON config file.")
@click.option("--seed", type=int, default=None, help="Override every seed in the config.")
@click.option("--threads", type=click.IntRange(1, 256), default=1, show_default=True,
              help="Worker threads for parallelizable stages.")
@click.option("--out", "out_dir", type=click.Path(path_type=Path, file_okay=False),
              default=Path("."), help="Output directory.")
@click.pass_context
def cli(ctx, config_path, seed, threads, out_dir):
    """Narrative-arc pipeline: learn essence, extract templates, reorder, evaluate."""
    level_name = os.environ.get("ND_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = App(config_path=config_path, seed=seed, threads=threads, out=out_dir)


# ------------------------------------------------------------------ commands


@cli.command()
@click.pass_obj
def synth(app: App):
    """Generate a synthetic dataset with a planted narrative arc."""
    section = app.section("synth")
    seed = app.effective_seed(section)
    config = SynthConfig(
        n_albums=int(section.get("n_albums", 200)),
        length_range=tuple(section.get("length_range", (3, 20))),
        latent_shape=section.get("latent_shape", "rising"),
        noise_sigma=float(section.get("noise_sigma", 0.0)),
        seed=seed,
    )
    dataset = synth_generate(config, shuffle_orders=bool(section.get("shuffle_orders", False)))
    prov = app.provenance(seed)
    write_table(app.out / "dataset.csv", lambda fh: write_feature_csv(dataset, fh), prov)
    write_table(
        app.out / "scalars.csv",
        lambda fh: write_scalar_csv(dataset.scalar_features, fh),
        prov,
    )
    click.echo(
        f"wrote {app.out / 'dataset.csv'}: {len(dataset)} albums, "
        f"{dataset.track_count()} tracks ({config.latent_shape}, noise {config.noise_sigma})"
    )


def _train_config(section: dict, seed: int, essence_dim: int | None = None) -> TrainConfig:
    kwargs = {k: section[k] for k in _TRAIN_KEYS if k in section}
    kwargs["seed"] = seed
    if essence_dim is not None:
        kwargs["essence_dim"] = essence_dim
    return TrainConfig(**kwargs)


def _write_train_outputs(app: App, dataset, model, history, config, prov, suffix: str = ""):
    best = min(history, key=lambda h: h.val_loss)
    doc = model.to_dict()
    doc["seed"] = config.seed
    doc["train_config"] = dataclasses.asdict(config)
    doc["best_val_loss_nats"] = best.val_loss
    doc["best_val_mi_bits"] = best.val_mi_bits
    write_json(app.out / f"model{suffix}.json", doc, prov)

    def render_history(fh):
        fh.write("epoch,train_loss,val_loss,val_mi_bits\n")
        for h in history:
            fh.write(
                f"{h.epoch},{_float_cell(h.train_loss)},{_float_cell(h.val_loss)},"
                f"{_float_cell(h.val_mi_bits)}\n"
            )

    write_table(app.out / f"history{suffix}.csv", render_history, prov)

    track_ids = []
    rows = []
    for album in dataset.albums:
        flat = np.stack([t.flat for t in album.tracks])
        rows.append(model.extract_matrix(flat))
        track_ids.extend(t.track_id for t in album.tracks)
    values = np.vstack(rows)
    write_table(
        app.out / f"essence{suffix}.csv",
        lambda fh: write_essence_csv(track_ids, values, fh),
        prov,
    )
    return best


@cli.command(name="train")
@click.pass_obj
def train_cmd(app: App):
    """Train the essence extractor and sequence scorer."""
    section = app.section("train")
    seed = app.effective_seed(section)
    prov = app.provenance(seed)
    dataset = _load_dataset(app)
    dims = section.get("dims")
    if dims is None:
        config = _train_config(section, seed)
        model, history = train(dataset, config)
        best = _write_train_outputs(app, dataset, model, history, config, prov)
        click.echo(
            f"d={config.essence_dim}: validation MI bound {best.val_mi_bits:.4f} bits "
            f"(epoch {best.epoch}, {len(history)} epochs run)"
        )
        return
    summary = []
    for d in dims:
        config = _train_config(section, seed, essence_dim=int(d))
        model, history = train(dataset, config)
        best = _write_train_outputs(app, dataset, model, history, config, prov, suffix=f"_d{d}")
        summary.append((int(d), best))
        click.echo(f"d={d}: validation MI bound {best.val_mi_bits:.4f} bits")

    def render_summary(fh):
        fh.write("essence_dim,val_loss_nats,val_mi_bits,best_epoch\n")
        for d, best in summary:
            fh.write(
                f"{d},{_float_cell(best.val_loss)},{_float_cell(best.val_mi_bits)},{best.epoch}\n"
            )

    write_table(app.out / "mi_by_dim.csv", render_summary, prov)


@cli.command()
@click.pass_obj
def probe(app: App):
    """Estimate the order information carried by fixed scalar features."""
    train_section = app.section("train")
    seed = app.effective_seed(train_section)
    prov = app.provenance(seed)
    dataset = _load_dataset(app)
    scalars = load_scalar_table(app.path("scalars"))
    features = app.section("probe").get("features")
    if features is None:
        features = sorted(scalars)
    results = {}
    for name in features:
        if name not in scalars:
            raise ConfigError(f"scalar feature {name!r} not present in scalars file")
        values = scalars[name]
        covered, dropped = drop_tracks_missing(dataset, values)
        config = _train_config(train_section, seed)
        mi = probe_feature_mi(covered, values, config)
        results[name] = {"mi_bits": mi, "dropped_tracks": dropped}
        click.echo(f"{name}: {mi:.4f} bits ({dropped} tracks dropped)")
    write_json(app.out / "probe.json", {"features": results}, prov)


@cli.command(name="extract-templates")
@click.pass_obj
def extract_templates(app: App):
    """Evolve template curves over the learned essence sequences."""
    section = app.section("ga")
    seed = app.effective_seed(section)
    prov = app.provenance(seed)
    dataset = _load_dataset(app)
    essence = _scalar_essence(app, dataset)
    albums = _subset(dataset, section.get("split", "train"))
    series = []
    for album in albums.albums:
        try:
            values = np.array([essence[t.track_id] for t in album.tracks])
        except KeyError as exc:
            raise ConfigError(
                f"missing essence for track {exc.args[0]!r} in album {album.album_id!r}"
            ) from None
        series.append(
            EssenceSeries(
                album_id=album.album_id,
                values=normalize_minmax(values)[:, None],
                normalization="minmax",
            )
        )
    kwargs = {k: section[k] for k in _GA_KEYS if k in section}
    kwargs["seed"] = seed
    config = GAConfig(**kwargs)
    knots = section.get("knots")
    template_set, history = evolve_templates(series, config, xs=knots, threads=app.threads)
    write_json(app.out / "templates.json", template_set.to_dict(), prov)

    def render_history(fh):
        fh.write("generation,best_cost\n")
        for g, cost in enumerate(history):
            fh.write(f"{g},{_float_cell(cost)}\n")

    write_table(app.out / "ga_history.csv", render_history, prov)
    click.echo(
        f"evolved {template_set.n_templates} templates over {len(series)} albums: "
        f"final cost {template_set.final_cost:.6f} after {len(history)} generations"
    )


@cli.command()
@click.option("--values", "values_arg", default=None,
              help="Comma-separated essence values for one album (overrides paths.essence).")
@click.option("--template-index", type=int, default=0, show_default=True)
@click.pass_obj
def fit(app: App, values_arg, template_index):
    """Fit one album's essence series to a single template curve."""
    template_set = _load_templates(app)
    if not 0 <= template_index < template_set.n_templates:
        raise ConfigError(
            f"template index {template_index} out of range (k={template_set.n_templates})"
        )
    if values_arg is not None:
        try:
            values = np.array([float(x) for x in values_arg.split(",")], dtype=np.float64)
        except ValueError:
            raise ConfigError(f"bad --values: {values_arg!r}") from None
        track_ids = None
    else:
        track_ids, values = _album_essence_input(app)
    result = fit_ordering(normalize_minmax(values), template_set.curves()[template_index])
    seed = app.effective_seed({})
    write_json(app.out / "fit.json", _fit_doc(template_index, result, track_ids), app.provenance(seed))
    click.echo(
        f"template {template_index}: ordering {list(result.ordering.positions)} "
        f"(bottleneck {result.bottleneck:.6f}, total {result.total_deviation:.6f})"
    )


@cli.command()
@click.option("--template", "template_arg", default=None,
              help='Template index or "all" (default: config reorder.template, else "all").')
@click.pass_obj
def reorder(app: App, template_arg):
    """Reorder an album onto one template curve, or onto each of them."""
    template_set = _load_templates(app)
    if template_arg is None:
        template_arg = str(app.section("reorder").get("template", "all"))
    if template_arg == "all":
        selected = list(range(template_set.n_templates))
    else:
        try:
            selected = [int(template_arg)]
        except ValueError:
            raise ConfigError(f'bad template selector {template_arg!r}; use an index or "all"') from None
        if not 0 <= selected[0] < template_set.n_templates:
            raise ConfigError(
                f"template index {selected[0]} out of range (k={template_set.n_templates})"
            )
    track_ids, values = _album_essence_input(app)
    y = normalize_minmax(values)
    curves = template_set.curves()
    fits = [_fit_doc(p, fit_ordering(y, curves[p]), track_ids) for p in selected]
    seed = app.effective_seed({})
    write_json(app.out / "orderings.json", {"orderings": fits}, app.provenance(seed))
    for doc in fits:
        click.echo(
            f"template {doc['template_index']}: {doc['track_order']} "
            f"(bottleneck {doc['bottleneck']:.6f})"
        )


@cli.command()
@click.pass_obj
def evaluate(app: App):
    """Score templates against ground-truth orderings and both baselines."""
    section = app.section("evaluate")
    seed = app.effective_seed(section)
    prov = app.provenance(seed)
    dataset = _load_dataset(app)
    template_set = _load_templates(app)
    ga_k = app.section("ga").get("n_templates")
    if ga_k is not None and int(ga_k) != template_set.n_templates:
        raise ConfigError(
            f"config ga.n_templates={ga_k} does not match templates file k={template_set.n_templates}"
        )
    essence = _scalar_essence(app, dataset)
    albums = _subset(dataset, section.get("split", "test"))
    alpha = float(section.get("alpha", 0.05))
    report = evaluate_templates(
        albums, essence, template_set, seed=seed, alpha=alpha, threads=app.threads
    )
    write_json(app.out / "eval_report.json", report.to_dict(), prov)

    def render_scores(fh):
        fh.write("condition\tmean\tstderr\n")
        for name, mean, stderr in plot_rows(report):
            fh.write(f"{name}\t{_float_cell(mean)}\t{_float_cell(stderr)}\n")

    write_table(app.out / "scores.tsv", render_scores, prov)
    click.echo(
        f"mean scores: learned {report.mean_learned:.4f}, "
        f"random {report.mean_random:.4f}, shuffled {report.mean_shuffled:.4f}"
    )
    for name, p, rejected in zip(report.comparisons, report.p_values, report.rejections):
        verdict = "rejected" if rejected else "not rejected"
        click.echo(f"{name}: p={p:.3e}, null {verdict} at family alpha {report.alpha}")


_SVG_PALETTE = ("#1b6ca8", "#c0392b", "#1e8449", "#8e44ad", "#d68910", "#117a65")


def _curves_svg(template_set: TemplateSet, samples: np.ndarray, grid: np.ndarray) -> str:
    width, height, margin = 640, 400, 45
    span_x, span_y = width - 2 * margin, height - 2 * margin

    def px(x: float) -> float:
        return margin + x * span_x

    def py(y: float) -> float:
        return height - margin - y * span_y

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(
            f'<text x="{px(tick):.1f}" y="{height - margin + 18:.1f}" font-size="12" '
            f'text-anchor="middle">{tick:g}</text>'
        )
        parts.append(
            f'<text x="{margin - 8:.1f}" y="{py(tick) + 4:.1f}" font-size="12" '
            f'text-anchor="end">{tick:g}</text>'
        )
    parts.append(
        f'<text x="{width / 2:.1f}" y="{height - 8:.1f}" font-size="13" '
        f'text-anchor="middle">relative position</text>'
    )
    for p in range(samples.shape[0]):
        color = _SVG_PALETTE[p % len(_SVG_PALETTE)]
        points = " ".join(
            f"{px(x):.2f},{py(y):.2f}" for x, y in zip(grid, samples[p])
        )
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{width - margin - 4:.1f}" y="{margin + 16 * (p + 1):.1f}" '
            f'font-size="12" text-anchor="end" fill="{color}">template {p}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


@cli.command(name="plot-data")
@click.pass_obj
def plot_data(app: App):
    """Export template curves (TSV + SVG) and, if available, score bars."""
    template_set = _load_templates(app)
    seed = app.effective_seed({})
    prov = app.provenance(seed)
    grid = np.linspace(0.0, 1.0, 201)
    samples = np.stack([curve(grid) for curve in template_set.curves()])

    def render_curves(fh):
        header = "x\t" + "\t".join(f"template_{p}" for p in range(samples.shape[0]))
        fh.write(header + "\n")
        for j, x in enumerate(grid):
            cells = "\t".join(_float_cell(samples[p, j]) for p in range(samples.shape[0]))
            fh.write(f"{_float_cell(x)}\t{cells}\n")

    write_table(app.out / "curves.tsv", render_curves, prov)
    svg = _curves_svg(template_set, samples, grid)
    atomic_write_text(app.out / "curves.svg", f"<!-- config_sha256={app.hash} seed={seed} -->\n" + svg)

    report_path = app.path("eval_report", required=False)
    wrote = ["curves.tsv", "curves.svg"]
    if report_path is not None:
        doc = _read_input_json(report_path)
        albums = doc.get("albums", [])
        if albums:
            def render_scores(fh):
                fh.write("condition\tmean\tstderr\n")
                for name, attr in (
                    ("learned", "learned_score"),
                    ("random_orderings", "random_score"),
                    ("shuffled_essence", "shuffled_score"),
                ):
                    scores = np.array([a[attr] for a in albums], dtype=np.float64)
                    stderr = (
                        float(scores.std(ddof=1) / np.sqrt(scores.size))
                        if scores.size > 1
                        else 0.0
                    )
                    fh.write(f"{name}\t{_float_cell(scores.mean())}\t{_float_cell(stderr)}\n")

            write_table(app.out / "scores.tsv", render_scores, prov)
            wrote.append("scores.tsv")
    click.echo(f"wrote {', '.join(wrote)} in {app.out}")


def main():
    try:
        cli.main(standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except (ConfigError, IngestError, FileNotFoundError, NotADirectoryError, PermissionError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except (AlbumArcError, ValueError, KeyError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
