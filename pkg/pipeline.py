"""Command implementations: stats caching, FID/KID, heatmap, sweeps, diagnostics.

Each `cmd_*` takes a RunConfig and returns what it computed; writing to
stdout or files goes through `emit_table` / `emit_json`. The experiment
helpers underneath (`heatmap_matrix`, `resizer_table`, `jpeg_sweep`, `ratio_sweep`,
`diagnose`, `quantization_effect`) work on in-memory images and are what the
tests drive directly.
"""

import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from tqdm import tqdm

import config
from errors import (DimensionMismatchError, ImageFormatError, IncomparableError,
                    StatsError)
from features import PreprocessChain, extract_images, get_extractor
from pixels import (CompressionSpec, batch_psnr, codec_roundtrip, list_images,
                    load_image, quantize, save_image)
from resample import VARIANTS, ResizeSpec, resize, resize_variant
from stats import (GaussianStats, MetricReport, fit_gaussian, frechet_terms,
                   is_cache_file, kid, read_cache, read_sidecar, sidecar_path,
                   write_cache)
import testpatterns

# commands whose result is a single MetricReport
REPORT_COMMANDS = ("fid", "kid")


@dataclass
class RunConfig:
    """Inputs and settings of one CLI invocation."""

    command: str = ""
    inputs: list = field(default_factory=list)
    ref_chain: PreprocessChain = None
    eval_chain: PreprocessChain = None
    extractor: str = "toy"
    model: str = None
    out: str = None
    fmt: str = "csv"
    png: str = None
    reference: str = None
    seed: int = 0
    workers: int = config.WORKERS
    fid_size: int = config.FID_SIZE
    resizer: str = config.DEFAULT_RESIZER
    variants: tuple = ()
    qualities: tuple = config.JPEG_QUALITIES
    ratios: tuple = config.RESIZE_RATIOS
    subsets: int = None
    subset_size: int = None
    count: int = config.SYNTHETIC_COUNT
    size: int = config.SYNTHETIC_SIZE
    factor: int = 8

    def __post_init__(self):
        if self.ref_chain is None:
            self.ref_chain = build_chain(self.fid_size, self.resizer)
        if self.eval_chain is None:
            self.eval_chain = self.ref_chain
        self._extractor = None

    def get_extractor(self):
        if self._extractor is None:
            self._extractor = get_extractor(self.extractor, self.model)
        return self._extractor


def build_chain(fid_size=config.FID_SIZE, resizer=config.DEFAULT_RESIZER, data_resizer=None,
                data_size=None, quantize_data=True, jpeg_quality=None,
                subsampling=config.JPEG_SUBSAMPLING) -> PreprocessChain:
    data_resize = None
    if data_resizer:
        data_resize = ResizeSpec.from_variant(data_resizer, data_size or fid_size)
    compression = CompressionSpec.jpeg(jpeg_quality, subsampling) if jpeg_quality is not None else None
    return PreprocessChain(ResizeSpec.from_variant(resizer, fid_size), data_resize,
                           quantize_data, compression)


# --- output ---

def default_format(command):
    """Reports default to JSON, tables to CSV."""
    return "json" if command in REPORT_COMMANDS else "csv"


def format_value(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.9g}"
    return str(value)


def _open_out(out):
    if out is None or str(out) == "-":
        return sys.stdout, False
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, 'w', encoding='utf-8', newline=''), True


def emit_table(columns, rows, out=None, fmt="csv", provenance=None):
    """Write rows as CSV (9 significant digits) or JSON; CSV files get a JSON sidecar."""
    stream, owned = _open_out(out)
    try:
        if fmt == "json":
            doc = {"columns": list(columns), "rows": [dict(zip(columns, r)) for r in rows]}
            if provenance is not None:
                doc["provenance"] = provenance
            json.dump(doc, stream, indent=2, sort_keys=True)
            stream.write("\n")
        else:
            writer = csv.writer(stream, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([format_value(v) for v in row])
    finally:
        if owned:
            stream.close()
    if owned and fmt != "json" and provenance is not None:
        with open(sidecar_path(out), 'w', encoding='utf-8') as f:
            json.dump({"tool": f"fairfid {config.VERSION}", "provenance": provenance},
                      f, indent=2, sort_keys=True)
            f.write("\n")


def emit_json(doc, out=None):
    stream, owned = _open_out(out)
    try:
        json.dump(doc, stream, indent=2, sort_keys=True)
        stream.write("\n")
    finally:
        if owned:
            stream.close()


def emit_report(report: MetricReport, out=None, fmt="json"):
    """Write one metric report; the CSV form carries its provenance as a compact JSON column."""
    if fmt == "json":
        emit_json(report.to_dict(), out)
        return
    extras = sorted(report.extras)
    columns = ["metric", "value", "n_ref", "n_eval"] + extras + ["provenance"]
    row = ([report.metric, report.value, report.n_ref, report.n_eval]
           + [report.extras[k] for k in extras]
           + [json.dumps(report.provenance, sort_keys=True, separators=(",", ":"))])
    emit_table(columns, [row], out, "csv", report.provenance)


# --- inputs ---

def load_images(directory, workers=None):
    """Load every image of `directory` in sorted order; unreadable files are skipped.

    Returns (images, skipped_count).
    """
    paths = list_images(directory)
    if not paths:
        raise StatsError(f"no image files in {directory}")

    def _try_load(path):
        try:
            return load_image(path)
        except ImageFormatError as e:
            config.log(f"⚠️  Skipping unreadable image {path.name}: {e}")
            return None

    with ThreadPoolExecutor(max_workers=workers or config.WORKERS) as pool:
        loaded = list(tqdm(pool.map(_try_load, paths), total=len(paths), desc=f"load {Path(directory).name}",
                           unit="img", leave=False, disable=config.QUIET))
    images = [img for img in loaded if img is not None]
    skipped = len(loaded) - len(images)
    if not images:
        raise StatsError(f"no usable images in {directory} ({skipped} unreadable)")
    if skipped:
        config.log(f"⚠️  {skipped} of {len(paths)} images in {directory} could not be read")
    return images, skipped


def _side_provenance(source, chain, extractor, n, skipped=0):
    return {
        "source": str(source),
        "chain": chain.to_dict(),
        "extractor": extractor.describe(),
        "n": n,
        "skipped": skipped,
        "ddof": config.COV_DDOF,
    }


def resolve_stats(source, chain: PreprocessChain, run: RunConfig):
    """GaussianStats for a cache file or an image directory, with its provenance."""
    if is_cache_file(source):
        stats = read_cache(source)
        side = read_sidecar(source) or {}
        provenance = {
            "source": str(source),
            "chain": (side.get("provenance") or {}).get("chain"),
            "extractor": {"id": stats.extractor_id, "dim": stats.dim, "checksum": stats.checksum.hex()},
            "n": stats.n,
            "ddof": side.get("ddof", config.COV_DDOF),
        }
        config.log(f"📦 Loaded cached statistics {source} (N={stats.n}, D={stats.dim})")
        return stats, provenance

    extractor = run.get_extractor()
    images, skipped = load_images(source, run.workers)
    config.log(f"🖼️  {len(images)} images from {source}")
    feats = extract_images(images, chain, extractor, run.workers, desc=Path(source).name)
    stats = fit_gaussian(feats, extractor)
    return stats, _side_provenance(source, chain, extractor, stats.n, skipped)


def check_comparable(a: GaussianStats, b: GaussianStats):
    if a.extractor_id != b.extractor_id:
        raise IncomparableError(
            f"statistics come from different extractors ({a.extractor_id} vs {b.extractor_id}); "
            "their scores cannot be compared"
        )
    if a.checksum != b.checksum:
        raise IncomparableError(
            f"extractor {a.extractor_id} checksums differ ({a.checksum.hex()[:12]} vs {b.checksum.hex()[:12]}); "
            "features from different weights are not comparable"
        )


# --- commands ---

def cmd_stats(run: RunConfig) -> Path:
    if not run.inputs:
        raise StatsError("stats needs an image directory")
    if not run.out:
        raise StatsError("stats needs --out for the cache file")
    stats, provenance = resolve_stats(run.inputs[0], run.ref_chain, run)
    path = write_cache(run.out, stats, provenance)
    config.log(f"✓ Wrote statistics for {stats.n} images (D={stats.dim}) to {path}")
    return path


def cmd_fid(run: RunConfig) -> MetricReport:
    if len(run.inputs) != 2:
        raise StatsError("fid needs two inputs (image directories or stats caches)")
    ref, ref_prov = resolve_stats(run.inputs[0], run.ref_chain, run)
    ev, ev_prov = resolve_stats(run.inputs[1], run.eval_chain, run)
    check_comparable(ref, ev)
    terms = frechet_terms(ref, ev)
    value = max(0.0, terms.value)
    if ref.n != ev.n:
        config.log(f"⚠️  Sample counts differ ({ref.n} vs {ev.n}); recorded in the report")
    config.log(f"📊 FID = {value:.6g}")
    return MetricReport("fid", value, {"reference": ref_prov, "eval": ev_prov}, ref.n, ev.n,
                        {"mean_term": terms.mean_term, "trace_term": terms.trace_term, "sqrtm_eps": terms.eps})


def cmd_kid(run: RunConfig) -> MetricReport:
    if len(run.inputs) != 2:
        raise StatsError("kid needs two image directories")
    for source in run.inputs:
        if is_cache_file(source):
            raise StatsError(f"{source} is a stats cache; KID needs per-image features, pass a directory")
    extractor = run.get_extractor()
    sides = []
    for source, chain in zip(run.inputs, (run.ref_chain, run.eval_chain)):
        images, skipped = load_images(source, run.workers)
        feats = extract_images(images, chain, extractor, run.workers, desc=Path(source).name)
        sides.append((feats, _side_provenance(source, chain, extractor, feats.n, skipped)))
    (fx, px), (fy, py) = sides
    result = kid(fx, fy, run.subsets, run.subset_size, run.seed)
    config.log(f"📊 KID = {result.value:.6g}" + (f" ± {result.std:.3g}" if result.mode == "subsets" else ""))
    extras = result.to_dict()
    extras.pop("kid")
    return MetricReport("kid", result.value, {"reference": px, "eval": py}, fx.n, fy.n, extras)


def heatmap_matrix(images, variants, extractor, fid_size, workers=None):
    """Symmetric matrix of FIDs between copies resized by each pair of variants."""
    if len(variants) < 2:
        raise StatsError("a heatmap needs at least two resizer variants")
    stats = []
    for variant in variants:
        chain = PreprocessChain(ResizeSpec.from_variant(variant, fid_size))
        stats.append(fit_gaussian(extract_images(images, chain, extractor, workers, desc=variant), extractor))
    n = len(variants)
    matrix = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            matrix[i, j] = matrix[j, i] = max(0.0, frechet_terms(stats[i], stats[j]).value)
    return matrix


def save_heatmap_png(matrix, variants, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(1.1 * len(variants) + 2, 1.1 * len(variants) + 1))
    im = ax.imshow(matrix, cmap="viridis")
    ax.set_xticks(range(len(variants)))
    ax.set_yticks(range(len(variants)))
    ax.set_xticklabels(variants, rotation=45, ha="right")
    ax.set_yticklabels(variants)
    for i in range(len(variants)):
        for j in range(len(variants)):
            ax.text(j, i, f"{matrix[i, j]:.3g}", ha="center", va="center", color="w", fontsize=8)
    fig.colorbar(im, ax=ax, label="FID")
    ax.set_title("Pairwise FID between resizers")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def cmd_heatmap(run: RunConfig):
    variants = tuple(run.variants) or VARIANTS
    images, skipped = load_images(run.inputs[0], run.workers)
    extractor = run.get_extractor()
    matrix = heatmap_matrix(images, variants, extractor, run.fid_size, run.workers)
    rows = [[v] + [float(x) for x in matrix[i]] for i, v in enumerate(variants)]
    provenance = {"source": str(run.inputs[0]), "fid_size": run.fid_size, "variants": list(variants),
                  "extractor": extractor.describe(), "n": len(images), "skipped": skipped,
                  "ddof": config.COV_DDOF}
    emit_table(["resizer"] + list(variants), rows, run.out, run.fmt, provenance)
    if run.png:
        save_heatmap_png(matrix, variants, run.png)
        config.log(f"🖼️  Heatmap written to {run.png}")
    return matrix


def resizer_table(images, variants, extractor, fid_size, workers=None, reference=config.DEFAULT_RESIZER):
    """Rows (resizer, fid, kid, mean_psnr_db) of each variant against `reference`.

    FID and KID compare features of the float resize outputs, the same path the
    heatmap uses. PSNR pairs each image's quantized reference resize with its
    quantized variant resize.
    """
    if not variants:
        raise StatsError("the resizer table needs at least one resizer variant")
    ref_spec = ResizeSpec.from_variant(reference, fid_size)
    ref_feats = extract_images(images, PreprocessChain(ref_spec), extractor, workers, desc=reference)
    ref_stats = fit_gaussian(ref_feats, extractor)
    with ThreadPoolExecutor(max_workers=workers or config.WORKERS) as pool:
        ref_pixels = list(pool.map(lambda im: quantize(resize(im, ref_spec)), images))

    rows = []
    for variant in variants:
        spec = ResizeSpec.from_variant(variant, fid_size)
        if variant == reference:
            feats, stats, pixels = ref_feats, ref_stats, ref_pixels
        else:
            feats = extract_images(images, PreprocessChain(spec), extractor, workers, desc=variant)
            stats = fit_gaussian(feats, extractor)
            with ThreadPoolExecutor(max_workers=workers or config.WORKERS) as pool:
                pixels = list(pool.map(lambda im: quantize(resize(im, spec)), images))
        fid = max(0.0, frechet_terms(ref_stats, stats).value)
        kid_value = kid(ref_feats, feats).value
        mean_psnr = batch_psnr(ref_pixels, pixels, workers).mean_db
        config.log(f"📊 {variant}: FID {fid:.6g}, KID {kid_value:.6g}, PSNR {mean_psnr:.2f} dB")
        rows.append([variant, fid, kid_value, mean_psnr])
    return rows


def cmd_resizers(run: RunConfig):
    variants = tuple(run.variants) or VARIANTS
    images, skipped = load_images(run.inputs[0], run.workers)
    extractor = run.get_extractor()
    rows = resizer_table(images, variants, extractor, run.fid_size, run.workers, run.resizer)
    provenance = {"source": str(run.inputs[0]), "fid_size": run.fid_size, "reference": run.resizer,
                  "variants": list(variants), "extractor": extractor.describe(), "n": len(images),
                  "skipped": skipped, "kid_mode": "full", "psnr_aggregation": "mean-of-psnr",
                  "ddof": config.COV_DDOF}
    emit_table(["resizer", "fid", "kid", "mean_psnr_db"], rows, run.out, run.fmt, provenance)
    return rows


def jpeg_sweep(images, qualities, extractor, fid_size, resizer=config.DEFAULT_RESIZER,
               workers=None, subsampling=config.JPEG_SUBSAMPLING, reference=None):
    """Rows (quality, fid, kid, mean_psnr_db) for JPEG copies of `images`.

    The eval images are resized to `fid_size` and quantized once, then
    JPEG-compressed, so the extractor sees every image at the same size.
    Without `reference` they are scored against their own lossless copies,
    which pairs every image and gives a PSNR. A `reference` FeatureMatrix
    (a separate image set) gives FID and KID; reference GaussianStats (a
    cache) gives FID only. Unavailable values are None.
    """
    if not qualities:
        raise StatsError("the JPEG sweep needs at least one quality")
    data_spec = ResizeSpec.from_variant(resizer, fid_size)
    identity = PreprocessChain(ResizeSpec.from_variant(resizer, fid_size))

    with ThreadPoolExecutor(max_workers=workers or config.WORKERS) as pool:
        prepared = list(pool.map(lambda im: quantize(resize(im, data_spec)), images))

    paired = reference is None
    ref_feats = None
    if paired:
        ref_feats = extract_images(prepared, identity, extractor, workers, desc="lossless")
        ref_stats = fit_gaussian(ref_feats, extractor)
    elif isinstance(reference, GaussianStats):
        ref_stats = reference
    else:
        ref_feats = reference
        ref_stats = fit_gaussian(ref_feats, extractor)

    rows = []
    for quality in tqdm(qualities, desc="jpeg sweep", unit="q", leave=False, disable=config.QUIET):
        spec = CompressionSpec.jpeg(int(quality), subsampling)
        with ThreadPoolExecutor(max_workers=workers or config.WORKERS) as pool:
            compressed = list(pool.map(lambda im: codec_roundtrip(im, spec), prepared))
        feats = extract_images(compressed, identity, extractor, workers, desc=spec.label)
        eval_stats = fit_gaussian(feats, extractor)
        check_comparable(ref_stats, eval_stats)
        fid = max(0.0, frechet_terms(ref_stats, eval_stats).value)
        kid_value = kid(ref_feats, feats).value if ref_feats is not None else None
        mean_psnr = batch_psnr(prepared, compressed, workers).mean_db if paired else None
        config.log(f"📊 q={quality}: FID {fid:.6g}"
                   + (f", KID {kid_value:.6g}" if kid_value is not None else "")
                   + (f", PSNR {mean_psnr:.2f} dB" if mean_psnr is not None else ""))
        rows.append([int(quality), fid, kid_value, mean_psnr])
    return rows


def _sweep_reference(source, chain: PreprocessChain, run: RunConfig):
    """Reference side of the JPEG sweep: GaussianStats for a cache, features for a directory."""
    extractor = run.get_extractor()
    if is_cache_file(source):
        stats, provenance = resolve_stats(source, chain, run)
        if provenance["chain"] is not None and provenance["chain"] != chain.to_dict():
            config.log(f"⚠️  {source} was computed with a different preprocessing chain than the sweep uses")
        return stats, provenance
    images, skipped = load_images(source, run.workers)
    feats = extract_images(images, chain, extractor, run.workers, desc="reference")
    return feats, _side_provenance(source, chain, extractor, feats.n, skipped)


def cmd_sweep_jpeg(run: RunConfig):
    images, skipped = load_images(run.inputs[0], run.workers)
    extractor = run.get_extractor()
    reference, ref_provenance = None, "png-lossless"
    if run.reference:
        # same steps as the sweep's lossless side: data resize, quantize, identity FID resize
        chain = build_chain(run.fid_size, run.resizer, data_resizer=run.resizer)
        reference, ref_provenance = _sweep_reference(run.reference, chain, run)
    rows = jpeg_sweep(images, run.qualities, extractor, run.fid_size, run.resizer, run.workers,
                      reference=reference)
    provenance = {"source": str(run.inputs[0]), "fid_size": run.fid_size, "resizer": run.resizer,
                  "reference": ref_provenance, "subsampling": config.JPEG_SUBSAMPLING,
                  "extractor": extractor.describe(), "n": len(images), "skipped": skipped,
                  "kid_mode": "full" if not isinstance(reference, GaussianStats) else None,
                  "psnr_aggregation": "mean-of-psnr" if reference is None else None,
                  "ddof": config.COV_DDOF}
    emit_table(["quality", "fid", "kid", "mean_psnr_db"], rows, run.out, run.fmt, provenance)
    return rows


def ratio_chain(variant, ratio, width, height, fid_size) -> PreprocessChain:
    """S -> S/r with `variant`, quantize, then S/r -> fid_size with the default resizer."""
    mid = ResizeSpec.from_variant(variant, max(1, int(round(width / ratio))), max(1, int(round(height / ratio))))
    return PreprocessChain(ResizeSpec.from_variant(config.DEFAULT_RESIZER, fid_size), data_resize=mid)


def ratio_sweep(images, ratios, variants, extractor, fid_size, workers=None):
    """Rows (resizer, ratio, intermediate_size, fid).

    The reference at each r runs the default resizer for both steps, so the
    default resizer itself always scores 0.
    """
    if any(r < 1 for r in ratios):
        raise StatsError("resize ratios must be >= 1")
    if not variants:
        raise StatsError("the ratio sweep needs at least one resizer variant")
    width, height = images[0].width, images[0].height
    if any((img.width, img.height) != (width, height) for img in images):
        raise DimensionMismatchError("the ratio sweep needs a corpus of equally sized images")

    rows = []
    for ratio in ratios:
        ref_chain = ratio_chain(config.DEFAULT_RESIZER, ratio, width, height, fid_size)
        mid = ref_chain.data_resize.out_width
        if mid < fid_size:
            config.log(f"⚠️  r={ratio:g}: intermediate size {mid} is below the FID size {fid_size}; "
                       "the second step upsamples")
        ref = fit_gaussian(extract_images(images, ref_chain, extractor, workers, desc=f"r={ratio:g}"), extractor)
        for variant in variants:
            if variant == config.DEFAULT_RESIZER:
                fid = 0.0
            else:
                chain = ratio_chain(variant, ratio, width, height, fid_size)
                feats = extract_images(images, chain, extractor, workers, desc=f"{variant} r={ratio:g}")
                fid = max(0.0, frechet_terms(ref, fit_gaussian(feats, extractor)).value)
            config.log(f"📊 {variant} r={ratio:g}: FID {fid:.6g}")
            rows.append([variant, float(ratio), mid, fid])
    return rows


def cmd_sweep_ratio(run: RunConfig):
    images, skipped = load_images(run.inputs[0], run.workers)
    extractor = run.get_extractor()
    variants = tuple(run.variants) or config.RATIO_VARIANTS
    rows = ratio_sweep(images, run.ratios, variants, extractor, run.fid_size, run.workers)
    provenance = {"source": str(run.inputs[0]), "fid_size": run.fid_size, "second_step": config.DEFAULT_RESIZER,
                  "reference": f"{config.DEFAULT_RESIZER} both steps", "extractor": extractor.describe(),
                  "n": len(images), "skipped": skipped, "ddof": config.COV_DDOF}
    emit_table(["resizer", "ratio", "intermediate_size", "fid"], rows, run.out, run.fmt, provenance)
    return rows


def diagnose(size=256, factor=8, variants=None, out_dir=None):
    """Downscale the diagnostic patterns with every resizer and score them.

    Returns one record per variant with the ring gap fraction, checkerboard
    and zone-plate aliasing energies, and the verdict.
    """
    variants = tuple(variants or VARIANTS)
    patterns = testpatterns.diagnostic_patterns(size)
    sources = {name: testpatterns.generate(p) for name, p in patterns.items()}
    out_size = size // factor
    radius_scaled = patterns["circle"].radius / factor
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, img in sources.items():
            save_image(img, out_dir / f"{name}_original.png")

    records = []
    for variant in variants:
        resized = {name: resize_variant(img, variant, out_size, out_size) for name, img in sources.items()}
        gap = testpatterns.ring_gap_fraction(resized["circle"], radius_scaled)
        energy = testpatterns.aliasing_energy(resized["checker"])
        zone = testpatterns.aliasing_energy(resized["zoneplate"])
        verdict = testpatterns.classify(gap, energy)
        if out_dir is not None:
            for name, img in resized.items():
                save_image(quantize(img), out_dir / f"{name}_{variant}.png")
        records.append({
            "resizer": variant,
            "factor": factor,
            "ring_gap_fraction": gap,
            "checker_energy": energy,
            "zoneplate_energy": zone,
            "verdict": verdict,
        })
    return records


def cmd_diagnose(run: RunConfig):
    records = diagnose(run.size, run.factor, run.variants or None, run.out)
    for record in records:
        config.log(f"{record['verdict']} {record['resizer']:<14} gaps {record['ring_gap_fraction']:.3f}  "
                   f"checker energy {record['checker_energy']:.4g}")
        # one JSON record per line on stdout
        print(json.dumps(record, sort_keys=True, ensure_ascii=False))
    if run.out:
        patterns = testpatterns.diagnostic_patterns(run.size)
        emit_json({"patterns": {k: p.to_dict() for k, p in patterns.items()}, "records": records},
                  Path(run.out) / "diagnose.json")
    return records


def cmd_psnr(run: RunConfig):
    if len(run.inputs) != 2:
        raise StatsError("psnr needs two image directories")
    result = batch_psnr(run.inputs[0], run.inputs[1], run.workers)
    if result.infinite:
        config.log(f"⚠️  {result.infinite} identical pairs (infinite PSNR) left out of the mean")
    config.log(f"📊 mean PSNR {result.mean_db:.4f} dB over {result.finite} pairs")
    doc = result.to_dict()
    if run.fmt == "json":
        emit_json(doc, run.out)
    else:
        columns = sorted(doc)
        emit_table(columns, [[doc[c] for c in columns]], run.out, "csv")
    return result


def _flatten(doc, prefix=""):
    flat = {}
    if isinstance(doc, dict):
        for key, value in doc.items():
            flat.update(_flatten(value, f"{prefix}{key}."))
    else:
        flat[prefix[:-1]] = doc
    return flat


def _load_provenance(path):
    path = Path(path)
    if path.suffix == ".json" and not str(path).endswith(".csv.json"):
        with open(path, 'r', encoding='utf-8') as f:
            doc = json.load(f)
    else:
        doc = read_sidecar(path)
        if doc is None:
            raise FileNotFoundError(f"{path} has no provenance sidecar ({sidecar_path(path).name})")
    if "provenance" not in doc:
        raise StatsError(f"{path} carries no provenance record")
    return doc["provenance"]


# keys that describe the data set, not how it was processed
_SOURCE_KEYS = ("source", "n", "skipped")


def compare(path_a, path_b):
    """Provenance differences between two reports/caches as (key, a, b) tuples."""
    a = {k: v for k, v in _flatten(_load_provenance(path_a)).items() if k.rsplit('.', 1)[-1] not in _SOURCE_KEYS}
    b = {k: v for k, v in _flatten(_load_provenance(path_b)).items() if k.rsplit('.', 1)[-1] not in _SOURCE_KEYS}
    return [(key, a.get(key), b.get(key)) for key in sorted(set(a) | set(b)) if a.get(key) != b.get(key)]


def cmd_compare(run: RunConfig):
    if len(run.inputs) != 2:
        raise StatsError("compare needs two report or cache files")
    diffs = compare(run.inputs[0], run.inputs[1])
    if diffs:
        for key, a, b in diffs:
            print(f"{key}: {a!r} != {b!r}")
        raise IncomparableError(f"{len(diffs)} provenance fields differ; the scores are not comparable")
    config.log("✓ Provenance matches; the scores are comparable")
    return diffs


def cmd_corpus(run: RunConfig):
    if not run.out:
        raise StatsError("corpus needs --out DIR")
    out_dir = Path(run.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def _write(index):
        img = testpatterns.synthetic_image(run.seed, index, run.size)
        return save_image(img, out_dir / f"synth_{index:05d}.png")

    with ThreadPoolExecutor(max_workers=run.workers or config.WORKERS) as pool:
        paths = list(tqdm(pool.map(_write, range(run.count)), total=run.count, desc="corpus",
                          unit="img", leave=False, disable=config.QUIET))
    config.log(f"✓ Wrote {len(paths)} synthetic {run.size}px images (seed {run.seed}) to {out_dir}")
    return paths


def quantization_effect(images, extractor, fid_size, resizer=config.DEFAULT_RESIZER, workers=None):
    """FID caused by quantizing after the data resize, next to the JPEG-75 FID.

    Returns a dict with `quantization_fid` (float path vs quantized path) and
    `jpeg75_fid` (quantized path vs quantized + JPEG q75 path).
    """
    float_path = build_chain(fid_size, resizer, data_resizer=resizer, quantize_data=False)
    quant_path = build_chain(fid_size, resizer, data_resizer=resizer, quantize_data=True)
    jpeg_path = build_chain(fid_size, resizer, data_resizer=resizer, quantize_data=True, jpeg_quality=75)
    stats = {}
    for name, chain in (("float", float_path), ("quantized", quant_path), ("jpeg75", jpeg_path)):
        stats[name] = fit_gaussian(extract_images(images, chain, extractor, workers, desc=name), extractor)
    return {
        "quantization_fid": max(0.0, frechet_terms(stats["float"], stats["quantized"]).value),
        "jpeg75_fid": max(0.0, frechet_terms(stats["quantized"], stats["jpeg75"]).value),
    }


COMMANDS = {
    "stats": cmd_stats,
    "fid": cmd_fid,
    "kid": cmd_kid,
    "heatmap": cmd_heatmap,
    "resizers": cmd_resizers,
    "sweep-jpeg": cmd_sweep_jpeg,
    "sweep-ratio": cmd_sweep_ratio,
    "diagnose": cmd_diagnose,
    "psnr": cmd_psnr,
    "compare": cmd_compare,
    "corpus": cmd_corpus,
}
