import csv
import io
import json
import math

import numpy as np
import pytest

import config
import pipeline
import testpatterns
from conftest import FID_SIZE
from errors import IncomparableError, StatsError
from pipeline import (RunConfig, build_chain, compare, diagnose, emit_report,
                      emit_table, heatmap_matrix, jpeg_sweep, load_images,
                      quantization_effect, ratio_sweep, resizer_table)
from pixels import load_image, save_image
from resample import VARIANTS
from stats import GaussianStats, MetricReport, read_cache, write_cache

AA_FAMILY = ("bilinear-aa", "bicubic-aa", "lanczos3-aa")
NOAA_FAMILY = ("bilinear-noaa", "bicubic-noaa", "nearest")
SMALL_FID = 48


@pytest.fixture
def image_dir(temp_dir, small_corpus):
    folder = temp_dir / "images"
    folder.mkdir()
    for i, img in enumerate(small_corpus):
        save_image(img, folder / f"img_{i:03d}.png")
    return folder


@pytest.fixture(scope="module")
def heatmap(corpus, toy):
    return heatmap_matrix(corpus, VARIANTS, toy, FID_SIZE)


@pytest.fixture(scope="module")
def jpeg_rows(corpus, toy):
    return jpeg_sweep(corpus, config.JPEG_QUALITIES, toy, FID_SIZE)


@pytest.fixture(scope="module")
def ratio_fids(corpus, toy):
    rows = ratio_sweep(corpus, (1.0, 1.5, 4.0), ("bicubic-noaa", "lanczos3-aa", "bicubic-aa"), toy, FID_SIZE)
    return {(r[0], r[1]): r[3] for r in rows}


@pytest.fixture(scope="module")
def resizer_rows(corpus, toy):
    rows = resizer_table(corpus, ("bicubic-aa", "lanczos3-aa", "box-aa", "nearest"), toy, FID_SIZE)
    return {r[0]: r for r in rows}


@pytest.fixture(scope="module")
def diagnose_records():
    return {r["resizer"]: r for r in diagnose(256, 8)}


def _run(command, inputs=(), **kwargs):
    kwargs.setdefault("fid_size", SMALL_FID)
    kwargs.setdefault("workers", 2)
    return RunConfig(command=command, inputs=[str(p) for p in inputs], **kwargs)


class TestJpegSweep:
    def test_rows_follow_qualities(self, jpeg_rows):
        assert [r[0] for r in jpeg_rows] == [100, 98, 95, 90, 75]

    def test_fid_grows_as_quality_drops(self, jpeg_rows):
        fids = [r[1] for r in jpeg_rows]
        assert all(a < b for a, b in zip(fids, fids[1:]))
        assert jpeg_rows[-1][1] > 10 * jpeg_rows[0][1]

    def test_psnr_falls_with_quality(self, jpeg_rows):
        psnrs = [r[3] for r in jpeg_rows]
        assert all(a > b for a, b in zip(psnrs, psnrs[1:]))
        assert psnrs[0] >= 45

    def test_kid_follows_fid(self, jpeg_rows):
        assert jpeg_rows[-1][2] > jpeg_rows[0][2]

    def test_needs_qualities(self, corpus, toy):
        with pytest.raises(StatsError):
            jpeg_sweep(corpus[:4], (), toy, FID_SIZE)

    def test_directory_reference_matches_lossless_copies(self, image_dir):
        paired = pipeline.cmd_sweep_jpeg(_run("sweep-jpeg", [image_dir], qualities=(90, 60)))
        unpaired = pipeline.cmd_sweep_jpeg(_run("sweep-jpeg", [image_dir], qualities=(90, 60),
                                                reference=str(image_dir)))
        for a, b in zip(paired, unpaired):
            assert b[1] == pytest.approx(a[1], rel=1e-9, abs=1e-12)
            assert b[2] == pytest.approx(a[2], rel=1e-9, abs=1e-12)
            assert math.isfinite(a[3]) and b[3] is None

    def test_cache_reference_gives_fid_only(self, image_dir, temp_dir):
        chain = build_chain(SMALL_FID, config.DEFAULT_RESIZER, data_resizer=config.DEFAULT_RESIZER)
        cache = pipeline.cmd_stats(_run("stats", [image_dir], out=str(temp_dir / "ref.cfid"), ref_chain=chain))
        paired = pipeline.cmd_sweep_jpeg(_run("sweep-jpeg", [image_dir], qualities=(75,)))
        out = temp_dir / "jpeg.csv"
        rows = pipeline.cmd_sweep_jpeg(_run("sweep-jpeg", [image_dir], qualities=(75,), reference=str(cache),
                                            out=str(out)))
        assert rows[0][1] == pytest.approx(paired[0][1], rel=1e-9, abs=1e-12)
        assert rows[0][2] is None and rows[0][3] is None
        assert out.read_text().splitlines()[1].endswith(",,")
        side = json.loads((temp_dir / "jpeg.csv.json").read_text())
        assert side["provenance"]["reference"]["source"] == str(cache)

    def test_reference_from_other_extractor_is_incomparable(self, small_corpus, toy):
        other = GaussianStats(np.zeros(64), np.eye(64), 10, "other-extractor")
        with pytest.raises(IncomparableError):
            jpeg_sweep(small_corpus, (90,), toy, SMALL_FID, reference=other)


class TestResizerTable:
    def test_reference_row(self, resizer_rows):
        _, fid, _, mean_psnr = resizer_rows["bicubic-aa"]
        assert fid == 0.0
        assert mean_psnr == math.inf

    def test_fid_ordering(self, resizer_rows):
        fid = {v: r[1] for v, r in resizer_rows.items()}
        assert fid["lanczos3-aa"] < fid["box-aa"] < fid["nearest"]

    def test_kid_and_psnr_separate_aliasing(self, resizer_rows):
        assert resizer_rows["nearest"][2] > resizer_rows["lanczos3-aa"][2]
        assert resizer_rows["lanczos3-aa"][3] > resizer_rows["box-aa"][3] > resizer_rows["nearest"][3]

    def test_needs_variants(self, small_corpus, toy):
        with pytest.raises(StatsError):
            resizer_table(small_corpus, (), toy, SMALL_FID)

    def test_command_writes_table(self, image_dir, temp_dir):
        out = temp_dir / "resizers.csv"
        rows = pipeline.cmd_resizers(_run("resizers", [image_dir], variants=("bicubic-aa", "nearest"),
                                          out=str(out)))
        lines = out.read_text().splitlines()
        assert lines[0] == "resizer,fid,kid,mean_psnr_db"
        assert lines[1].startswith("bicubic-aa,0,") and lines[1].endswith(",inf")
        assert [r[0] for r in rows] == ["bicubic-aa", "nearest"]
        side = json.loads((temp_dir / "resizers.csv.json").read_text())
        assert side["provenance"]["reference"] == config.DEFAULT_RESIZER


class TestHeatmap:
    def test_symmetric_with_zero_diagonal(self, heatmap):
        assert np.array_equal(heatmap, heatmap.T)
        assert np.all(np.diag(heatmap) == 0.0)
        assert (heatmap >= 0).all()

    def test_resizer_ordering_against_default(self, heatmap):
        fid = dict(zip(VARIANTS, heatmap[VARIANTS.index(config.DEFAULT_RESIZER)]))
        assert max(fid["lanczos3-aa"], fid["bilinear-aa"]) < fid["box-aa"]
        assert fid["box-aa"] < min(fid["bicubic-noaa"], fid["bilinear-noaa"])
        assert fid["nearest"] >= min(fid["bicubic-noaa"], fid["bilinear-noaa"])

    def test_block_structure(self, heatmap):
        idx = {v: i for i, v in enumerate(VARIANTS)}
        within = max(heatmap[idx[a], idx[b]] for a in AA_FAMILY for b in AA_FAMILY)
        across = min(heatmap[idx[a], idx[b]] for a in AA_FAMILY for b in NOAA_FAMILY)
        assert within < across

    def test_needs_two_variants(self, small_corpus, toy):
        with pytest.raises(StatsError):
            heatmap_matrix(small_corpus, ("bicubic-aa",), toy, SMALL_FID)


class TestRatioSweep:
    def test_aliasing_knee(self, ratio_fids):
        assert ratio_fids[("bicubic-noaa", 4.0)] > 3 * ratio_fids[("bicubic-noaa", 1.5)]

    def test_ratio_one_is_lossless(self, ratio_fids):
        assert ratio_fids[("bicubic-noaa", 1.0)] == 0.0
        assert ratio_fids[("lanczos3-aa", 1.0)] == 0.0

    def test_antialiased_stays_flat(self, ratio_fids):
        assert all(ratio_fids[("bicubic-aa", r)] == 0.0 for r in (1.0, 1.5, 4.0))
        worst = max(ratio_fids[("lanczos3-aa", r)] for r in (1.5, 4.0))
        assert worst < 0.5 * ratio_fids[("bicubic-noaa", 4.0)]

    def test_rejects_upscaling_ratio(self, small_corpus, toy):
        with pytest.raises(StatsError):
            ratio_sweep(small_corpus, (0.5,), ("nearest",), toy, SMALL_FID)


class TestQuantizationEffect:
    def test_small_next_to_jpeg(self, corpus, toy):
        effect = quantization_effect(corpus, toy, FID_SIZE)
        assert effect["quantization_fid"] < 0.05 * effect["jpeg75_fid"]


class TestDiagnose:
    def test_verdicts(self, diagnose_records):
        for variant in AA_FAMILY:
            assert diagnose_records[variant]["verdict"] == testpatterns.VERDICT_OK, variant
        assert diagnose_records["box-aa"]["verdict"] == testpatterns.VERDICT_WARN
        for variant in NOAA_FAMILY:
            assert diagnose_records[variant]["verdict"] == testpatterns.VERDICT_BAD, variant

    def test_record_fields(self, diagnose_records):
        record = diagnose_records["nearest"]
        assert record["factor"] == 8
        assert set(record) == {"resizer", "factor", "ring_gap_fraction", "checker_energy",
                               "zoneplate_energy", "verdict"}

    def test_writes_images(self, temp_dir):
        diagnose(64, 4, ("bicubic-aa",), temp_dir)
        assert (temp_dir / "circle_original.png").exists()
        assert load_image(temp_dir / "checker_bicubic-aa.png").width == 16

    def test_command_prints_json_lines(self, temp_dir, capsys):
        records = pipeline.cmd_diagnose(_run("diagnose", size=256, factor=8,
                                             variants=("bicubic-aa", "nearest"), out=str(temp_dir)))
        lines = capsys.readouterr().out.strip().splitlines()
        assert [json.loads(line)["resizer"] for line in lines] == ["bicubic-aa", "nearest"]
        doc = json.loads((temp_dir / "diagnose.json").read_text())
        assert doc["records"] == records
        assert doc["patterns"]["checker"]["period"] == 6


class TestStatsCommand:
    def test_cache_is_byte_deterministic(self, image_dir, temp_dir):
        a = pipeline.cmd_stats(_run("stats", [image_dir], out=str(temp_dir / "a.cfid"), workers=1))
        b = pipeline.cmd_stats(_run("stats", [image_dir], out=str(temp_dir / "b.cfid"), workers=4))
        assert a.read_bytes() == b.read_bytes()
        stats = read_cache(a)
        assert stats.n == 12 and stats.dim == 64

    def test_sidecar_carries_chain(self, image_dir, temp_dir):
        path = pipeline.cmd_stats(_run("stats", [image_dir], out=str(temp_dir / "a.cfid")))
        side = json.loads((temp_dir / "a.cfid.json").read_text())
        assert side["provenance"]["chain"]["fid_resize"]["resizer"] == config.DEFAULT_RESIZER
        assert side["provenance"]["extractor"]["id"] == "toy-proj64-v1"
        assert path.exists()

    def test_needs_out(self, image_dir):
        with pytest.raises(StatsError):
            pipeline.cmd_stats(_run("stats", [image_dir]))


class TestFidCommand:
    def test_same_directory_is_zero(self, image_dir):
        report = pipeline.cmd_fid(_run("fid", [image_dir, image_dir]))
        assert report.value == 0.0
        assert report.n_ref == report.n_eval == 12

    def test_cache_matches_directory(self, image_dir, temp_dir):
        cache = pipeline.cmd_stats(_run("stats", [image_dir], out=str(temp_dir / "ref.cfid")))
        assert pipeline.cmd_fid(_run("fid", [cache, image_dir])).value == 0.0

    def test_different_eval_chain_scores_positive(self, image_dir):
        run = _run("fid", [image_dir, image_dir])
        run.eval_chain = build_chain(SMALL_FID, "nearest")
        report = pipeline.cmd_fid(run)
        assert report.value > 0
        assert report.provenance["eval"]["chain"]["fid_resize"]["resizer"] == "nearest"

    def test_extractor_mismatch_is_incomparable(self, image_dir, temp_dir):
        other = GaussianStats(np.zeros(64), np.eye(64), 10, "other-extractor")
        cache = write_cache(temp_dir / "other.cfid", other)
        with pytest.raises(IncomparableError):
            pipeline.cmd_fid(_run("fid", [cache, image_dir]))


class TestKidCommand:
    def test_subsets(self, image_dir):
        report = pipeline.cmd_kid(_run("kid", [image_dir, image_dir], subsets=3, subset_size=6))
        assert report.extras["kid_mode"] == "subsets"
        assert report.extras["subset_size"] == 6

    def test_rejects_cache(self, image_dir, temp_dir):
        cache = pipeline.cmd_stats(_run("stats", [image_dir], out=str(temp_dir / "ref.cfid")))
        with pytest.raises(StatsError):
            pipeline.cmd_kid(_run("kid", [cache, image_dir]))


class TestCompare:
    def test_same_chain_has_no_differences(self, image_dir, temp_dir):
        a = pipeline.cmd_stats(_run("stats", [image_dir], out=str(temp_dir / "a.cfid")))
        b = pipeline.cmd_stats(_run("stats", [image_dir], out=str(temp_dir / "b.cfid"), workers=1))
        assert compare(a, b) == []

    def test_different_resizer_is_flagged(self, image_dir, temp_dir):
        a = pipeline.cmd_stats(_run("stats", [image_dir], out=str(temp_dir / "a.cfid")))
        b = pipeline.cmd_stats(_run("stats", [image_dir], out=str(temp_dir / "b.cfid"), resizer="bilinear-aa"))
        diffs = compare(a, b)
        assert ("chain.fid_resize.resizer", "bicubic-aa", "bilinear-aa") in diffs
        with pytest.raises(IncomparableError):
            pipeline.cmd_compare(_run("compare", [a, b]))


class TestOutput:
    def test_csv_has_nine_significant_digits(self, temp_dir):
        out = temp_dir / "table.csv"
        emit_table(["name", "value"], [["a", 1.0 / 3.0], ["b", 2]], str(out), "csv", {"fid_size": 48})
        assert out.read_text().splitlines() == ["name,value", "a,0.333333333", "b,2"]
        side = json.loads((temp_dir / "table.csv.json").read_text())
        assert side["provenance"] == {"fid_size": 48}

    def test_json_table(self, temp_dir):
        out = temp_dir / "table.json"
        emit_table(["q", "fid"], [[90, 1.5]], str(out), "json", {"n": 3})
        doc = json.loads(out.read_text())
        assert doc["rows"] == [{"q": 90, "fid": 1.5}]
        assert doc["provenance"] == {"n": 3}

    def test_reports_default_to_json(self):
        assert pipeline.default_format("fid") == "json"
        assert pipeline.default_format("kid") == "json"
        assert pipeline.default_format("heatmap") == "csv"

    def test_csv_report_on_stdout_carries_provenance(self, capsys):
        provenance = {"reference": {"chain": {"fid_resize": {"resizer": "bicubic-aa"}}}, "eval": {"n": 4}}
        emit_report(MetricReport("fid", 0.5, provenance, 4, 4, {"mean_term": 0.25}), None, "csv")
        rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        assert len(rows) == 1
        assert rows[0]["value"] == "0.5" and rows[0]["mean_term"] == "0.25"
        assert json.loads(rows[0]["provenance"]) == provenance


class TestImages:
    def test_unreadable_files_are_skipped(self, image_dir):
        (image_dir / "broken.png").write_bytes(b"not an image")
        images, skipped = load_images(image_dir)
        assert len(images) == 12 and skipped == 1

    def test_empty_directory(self, temp_dir):
        with pytest.raises(StatsError):
            load_images(temp_dir)

    def test_corpus_command(self, temp_dir):
        paths = pipeline.cmd_corpus(_run("corpus", out=str(temp_dir / "synth"), count=3, size=32, seed=5))
        assert [p.name for p in paths] == ["synth_00000.png", "synth_00001.png", "synth_00002.png"]
        assert load_image(paths[2]).same_pixels(testpatterns.synthetic_image(5, 2, 32))


class TestTableCommands:
    def test_heatmap_csv_and_png(self, image_dir, temp_dir):
        out, png = temp_dir / "heat.csv", temp_dir / "heat.png"
        matrix = pipeline.cmd_heatmap(_run("heatmap", [image_dir], variants=("bicubic-aa", "nearest"),
                                           out=str(out), png=str(png)))
        lines = out.read_text().splitlines()
        assert lines[0] == "resizer,bicubic-aa,nearest"
        assert lines[1].startswith("bicubic-aa,0,")
        assert matrix.shape == (2, 2) and png.stat().st_size > 0
        side = json.loads((temp_dir / "heat.csv.json").read_text())
        assert side["provenance"]["variants"] == ["bicubic-aa", "nearest"]

    def test_sweep_commands(self, image_dir, temp_dir):
        rows = pipeline.cmd_sweep_jpeg(_run("sweep-jpeg", [image_dir], qualities=(95, 60),
                                            out=str(temp_dir / "jpeg.csv")))
        assert [r[0] for r in rows] == [95, 60]
        rows = pipeline.cmd_sweep_ratio(_run("sweep-ratio", [image_dir], ratios=(1.0, 2.0),
                                             variants=("nearest",), out=str(temp_dir / "ratio.csv")))
        assert [(r[0], r[1], r[2]) for r in rows] == [("nearest", 1.0, 64), ("nearest", 2.0, 32)]
        assert (temp_dir / "ratio.csv.json").exists()

    def test_psnr_of_identical_dirs(self, image_dir, temp_dir):
        result = pipeline.cmd_psnr(_run("psnr", [image_dir, image_dir], out=str(temp_dir / "psnr.csv")))
        assert result.infinite == 12 and result.finite == 0


class TestWorkerCountIndependence:
    @pytest.mark.parametrize("command, kwargs", [
        ("heatmap", {"variants": ("bicubic-aa", "box-aa", "nearest")}),
        ("resizers", {"variants": ("bicubic-aa", "nearest")}),
        ("sweep-jpeg", {"qualities": (95, 75)}),
        ("sweep-ratio", {"ratios": (1.0, 2.0), "variants": ("nearest", "bicubic-aa")}),
    ])
    def test_csv_bytes_match(self, image_dir, temp_dir, command, kwargs):
        outputs = []
        for workers in (1, 4):
            out = temp_dir / f"{command}_{workers}.csv"
            pipeline.COMMANDS[command](_run(command, [image_dir], out=str(out), workers=workers, **kwargs))
            outputs.append((out.read_bytes(), (temp_dir / f"{command}_{workers}.csv.json").read_bytes()))
        assert outputs[0] == outputs[1]
