//! Subcommand implementations. Every command delegates to library
//! operations; this file only does path plumbing, argument validation, and
//! console reporting (diagnostics to stderr, tables to stdout, machine
//! outputs to declared paths).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use landcover_core::analysis::{change_report, render_bars, report_csv};
use landcover_core::dataset::{
    curate, parse_geojson_polygons, read_manifest, split, write_manifest, ClassId, LabelPolygon,
    Manifest, Split, CLASS_NAMES, N_CLASSES,
};
use landcover_core::inference::{
    classify_raster, majority_filter, read_cmap, render_map, write_cmap, ClassMap,
    ClassifyOptions, DEFAULT_PALETTE,
};
use landcover_core::nn::check::{conv_oracle_suite, gradcheck_all};
use landcover_core::nn::checkpoint::{load_checkpoint, CheckpointMeta};
use landcover_core::nn::loss::{cross_entropy_smoothed, smooth_labels};
use landcover_core::nn::optim::{lr_at, TrainConfig};
use landcover_core::nn::train::{evaluate, train, TrainOutputs};
use landcover_core::nn::Tensor;
use landcover_core::raster::read_r4b;
use landcover_core::synth::{nearest_mean_accuracy, synth_manifest};

use crate::config::{require_dir, require_file, thread_count, usage, RunConfig};

pub const CURATE_SYNOPSIS: &str = "usage: landcover curate --config run.json";
pub const SPLIT_SYNOPSIS: &str = "usage: landcover split --config run.json";
pub const TRAIN_SYNOPSIS: &str = "usage: landcover train --config run.json";
pub const EVAL_SYNOPSIS: &str =
    "usage: landcover eval --config run.json [--checkpoint model/best.cnn1] [--split test]";
pub const CLASSIFY_SYNOPSIS: &str = "usage: landcover classify --checkpoint model/best.cnn1 \
     --raster scene.r4b --out map.cmap [--filter] [--year 2014] [--batch-size 64] \
     [--strict-resolution]";
pub const FILTER_SYNOPSIS: &str = "usage: landcover filter --map in.cmap --out out.cmap";
pub const RENDER_SYNOPSIS: &str = "usage: landcover render --map in.cmap --out map.ppm";
pub const REPORT_SYNOPSIS: &str =
    "usage: landcover report --maps 2009.cmap,2012.cmap[,...] [--mask fire.geojson] --out report/";
pub const SYNTH_SYNOPSIS: &str = "usage: landcover synth --config run.json";
pub const SELFTEST_SYNOPSIS: &str = "usage: landcover selftest [--instances 20]";

/// Per-class × per-split counts in the layout of a dataset-statistics table.
fn class_table(manifest: &Manifest) -> String {
    let mut counts = [[0u64; 3]; N_CLASSES];
    for s in &manifest.samples {
        let col = match s.split {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        };
        counts[s.label.index()][col] += 1;
    }
    let mut out = format!(
        "{:<16} {:>9} {:>9} {:>9} {:>9}\n",
        "class", "train", "val", "test", "total"
    );
    let mut totals = [0u64; 3];
    for (k, row) in counts.iter().enumerate() {
        out.push_str(&format!(
            "{:<16} {:>9} {:>9} {:>9} {:>9}\n",
            CLASS_NAMES[k],
            row[0],
            row[1],
            row[2],
            row.iter().sum::<u64>()
        ));
        for (t, &c) in totals.iter_mut().zip(row) {
            *t += c;
        }
    }
    out.push_str(&format!(
        "{:<16} {:>9} {:>9} {:>9} {:>9}\n",
        "total",
        totals[0],
        totals[1],
        totals[2],
        totals.iter().sum::<u64>()
    ));
    out
}

pub fn cmd_curate(config_path: &Path) -> Result<()> {
    let cfg = RunConfig::load(config_path, CURATE_SYNOPSIS)?;
    if cfg.io.rasters.is_empty() {
        return Err(usage("config io.rasters is empty", CURATE_SYNOPSIS));
    }
    let polygons_path = cfg
        .io
        .polygons
        .as_ref()
        .ok_or_else(|| usage("config io.polygons is not set", CURATE_SYNOPSIS))?;
    for r in &cfg.io.rasters {
        require_file(r, "raster", CURATE_SYNOPSIS)?;
    }
    require_file(polygons_path, "polygon file", CURATE_SYNOPSIS)?;

    let mut rasters = Vec::with_capacity(cfg.io.rasters.len());
    for path in &cfg.io.rasters {
        let raster = read_r4b(path).with_context(|| format!("reading {}", path.display()))?;
        rasters.push((path.display().to_string(), raster));
    }
    let polygons = parse_geojson_polygons(
        &fs::read_to_string(polygons_path)
            .with_context(|| format!("reading {}", polygons_path.display()))?,
    )?;
    let manifest = curate(&rasters, &polygons, &cfg.curation)?;
    fs::create_dir_all(&cfg.io.dataset_dir)?;
    write_manifest(&manifest, &cfg.io.dataset_dir)?;
    print!("{}", class_table(&manifest));
    eprintln!(
        "curated {} samples from {} raster(s) into {}",
        manifest.meta.total,
        rasters.len(),
        cfg.io.dataset_dir.display()
    );
    if manifest.meta.overlap_conflicts > 0 {
        eprintln!(
            "note: {} tile(s) discarded for cross-class polygon overlap",
            manifest.meta.overlap_conflicts
        );
    }
    Ok(())
}

pub fn cmd_split(config_path: &Path) -> Result<()> {
    let cfg = RunConfig::load(config_path, SPLIT_SYNOPSIS)?;
    require_dir(&cfg.io.dataset_dir, "dataset directory", SPLIT_SYNOPSIS)?;
    let manifest = read_manifest(&cfg.io.dataset_dir)?;
    let resplit = split(&manifest, cfg.split.seed, cfg.split.n_val, cfg.split.n_test)?;
    write_manifest(&resplit, &cfg.io.dataset_dir)?;
    print!("{}", class_table(&resplit));
    eprintln!(
        "re-tagged {} samples (seed {}): {} train / {} val / {} test",
        resplit.meta.total,
        cfg.split.seed,
        resplit.meta.split_counts.train,
        resplit.meta.split_counts.val,
        resplit.meta.split_counts.test
    );
    Ok(())
}

fn checkpoint_meta_for(manifest: &Manifest) -> CheckpointMeta {
    CheckpointMeta {
        band_stats: Some(manifest.meta.band_stats.clone()),
        pixel_size: None,
        class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        train_meta: None,
    }
}

pub fn cmd_train(config_path: &Path) -> Result<()> {
    let cfg = RunConfig::load(config_path, TRAIN_SYNOPSIS)?;
    require_dir(&cfg.io.dataset_dir, "dataset directory", TRAIN_SYNOPSIS)?;
    let manifest = read_manifest(&cfg.io.dataset_dir)?;
    let model_cfg = cfg.model.build()?;
    let train_view = manifest.view(Split::Train, true)?;
    let val_view = manifest.view(Split::Val, false)?;
    fs::create_dir_all(&cfg.io.model_dir)?;
    let outputs = TrainOutputs {
        metrics_csv: cfg.io.model_dir.join("metrics.csv"),
        best_checkpoint: cfg.io.model_dir.join("best.cnn1"),
        final_checkpoint: cfg.io.model_dir.join("final.cnn1"),
    };
    eprintln!(
        "training {} on {} samples ({} val), batch {}, {} epochs, lr0 {}",
        cfg.model.preset,
        manifest.meta.split_counts.train,
        manifest.meta.split_counts.val,
        cfg.train.batch_size,
        cfg.train.epochs,
        cfg.train.lr0
    );
    let artifacts = train(
        &model_cfg,
        &cfg.train,
        &train_view,
        &val_view,
        &outputs,
        &checkpoint_meta_for(&manifest),
    )?;
    match artifacts.best_epoch {
        Some(e) => eprintln!(
            "best epoch {e}: val accuracy {:.4}; artifacts in {}",
            artifacts.best_val_acc,
            cfg.io.model_dir.display()
        ),
        None => eprintln!("no epochs ran; artifacts in {}", cfg.io.model_dir.display()),
    }
    Ok(())
}

fn parse_split(name: &str, synopsis: &'static str) -> Result<Split> {
    match name {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(usage(format!("unknown split {other:?} (train|val|test)"), synopsis)),
    }
}

pub fn cmd_eval(config_path: &Path, checkpoint: Option<&Path>, split_name: &str) -> Result<()> {
    let cfg = RunConfig::load(config_path, EVAL_SYNOPSIS)?;
    let which = parse_split(split_name, EVAL_SYNOPSIS)?;
    require_dir(&cfg.io.dataset_dir, "dataset directory", EVAL_SYNOPSIS)?;
    let ckpt_path: PathBuf =
        checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.io.model_dir.join("best.cnn1"));
    require_file(&ckpt_path, "checkpoint", EVAL_SYNOPSIS)?;
    let manifest = read_manifest(&cfg.io.dataset_dir)?;
    let (net, _meta) = load_checkpoint::<f32>(&ckpt_path)?;
    let view = manifest.view(which, false)?;
    let report = evaluate(&net, &view, 256)?;
    println!("split: {split_name}");
    println!("samples: {}", report.n);
    println!("accuracy: {:.4}", report.accuracy);
    println!("confusion (rows = true, cols = predicted):");
    print!("{:<16}", "");
    for name in CLASS_NAMES {
        print!(" {:>9}", &name[..name.len().min(9)]);
    }
    println!();
    for (k, row) in report.confusion.iter().enumerate() {
        print!("{:<16}", CLASS_NAMES[k]);
        for &c in row {
            print!(" {c:>9}");
        }
        println!();
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_classify(
    checkpoint: &Path,
    raster_path: &Path,
    out: &Path,
    filter: bool,
    year: Option<String>,
    batch_size: usize,
    strict_resolution: bool,
) -> Result<()> {
    require_file(checkpoint, "checkpoint", CLASSIFY_SYNOPSIS)?;
    require_file(raster_path, "raster", CLASSIFY_SYNOPSIS)?;
    if batch_size == 0 {
        return Err(usage("--batch-size must be >= 1", CLASSIFY_SYNOPSIS));
    }
    let (net, meta) = load_checkpoint::<f32>(checkpoint)?;
    let raster = read_r4b(raster_path)?;
    let opts = ClassifyOptions { batch_size, strict_resolution, threads: thread_count()? };
    let outcome = classify_raster(&raster, &net, &meta, &opts)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let mut map = if filter { majority_filter(&outcome.map) } else { outcome.map };
    if year.is_some() {
        map.year_tag = year;
    }
    write_cmap(&map, out)?;
    let nodata = map.cells().iter().filter(|&&c| c == 255).count();
    eprintln!(
        "classified {}x{} px -> {}x{} cells ({} nodata){} -> {}",
        raster.width(),
        raster.height(),
        map.width_tiles(),
        map.height_tiles(),
        nodata,
        if filter { ", majority-filtered" } else { "" },
        out.display()
    );
    Ok(())
}

pub fn cmd_filter(map_path: &Path, out: &Path) -> Result<()> {
    require_file(map_path, "class map", FILTER_SYNOPSIS)?;
    let map = read_cmap(map_path)?;
    write_cmap(&majority_filter(&map), out)?;
    eprintln!("filtered {} -> {}", map_path.display(), out.display());
    Ok(())
}

pub fn cmd_render(map_path: &Path, out: &Path) -> Result<()> {
    require_file(map_path, "class map", RENDER_SYNOPSIS)?;
    let map = read_cmap(map_path)?;
    fs::write(out, render_map(&map, &DEFAULT_PALETTE))?;
    eprintln!(
        "rendered {}x{} cells -> {}",
        map.width_tiles(),
        map.height_tiles(),
        out.display()
    );
    Ok(())
}

/// Mask GeoJSON: FeatureCollection of Polygons; properties are ignored (a
/// mask is pure geometry, unlike curation labels).
fn parse_mask(text: &str) -> Result<Vec<LabelPolygon>> {
    let root: serde_json::Value = serde_json::from_str(text).context("mask is not valid JSON")?;
    if root["type"] != "FeatureCollection" {
        anyhow::bail!("mask must be a GeoJSON FeatureCollection");
    }
    let features = root["features"]
        .as_array()
        .ok_or_else(|| anyhow::anyhow!("mask has no features array"))?;
    let mut polys = Vec::with_capacity(features.len());
    for (i, feature) in features.iter().enumerate() {
        let geom = &feature["geometry"];
        if geom["type"] != "Polygon" {
            anyhow::bail!("mask feature {i}: only Polygon geometries are supported");
        }
        let rings = geom["coordinates"]
            .as_array()
            .ok_or_else(|| anyhow::anyhow!("mask feature {i}: missing coordinates"))?
            .iter()
            .map(|ring| {
                ring.as_array()
                    .ok_or_else(|| anyhow::anyhow!("mask feature {i}: ring is not an array"))?
                    .iter()
                    .map(|pt| {
                        let x = pt[0].as_f64();
                        let y = pt[1].as_f64();
                        match (x, y) {
                            (Some(x), Some(y)) => Ok((x, y)),
                            _ => Err(anyhow::anyhow!("mask feature {i}: bad coordinate pair")),
                        }
                    })
                    .collect::<Result<Vec<(f64, f64)>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        polys.push(
            LabelPolygon::new(rings, ClassId::new(0).expect("0 is a class"), 1.0)
                .with_context(|| format!("mask feature {i}"))?,
        );
    }
    Ok(polys)
}

pub fn cmd_report(map_paths: &[PathBuf], mask_path: Option<&Path>, out_dir: &Path) -> Result<()> {
    if map_paths.len() < 2 {
        return Err(usage("--maps needs at least two class maps", REPORT_SYNOPSIS));
    }
    for p in map_paths {
        require_file(p, "class map", REPORT_SYNOPSIS)?;
    }
    if let Some(m) = mask_path {
        require_file(m, "mask", REPORT_SYNOPSIS)?;
    }
    let mut maps: Vec<ClassMap> = Vec::with_capacity(map_paths.len());
    for path in map_paths {
        let mut map = read_cmap(path).with_context(|| format!("reading {}", path.display()))?;
        if map.year_tag.is_none() {
            // Untagged maps fall back to the file stem, so
            // `--maps 2009.cmap,2012.cmap` works without retagging.
            map.year_tag = Some(
                path.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            );
        }
        maps.push(map);
    }
    let mask = match mask_path {
        Some(p) => Some(parse_mask(&fs::read_to_string(p)?)?),
        None => None,
    };
    let report = change_report(
        &maps,
        mask.as_deref(),
        mask_path.map(|p| p.display().to_string()),
    )?;
    fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("report.csv");
    let svg_path = out_dir.join("report.svg");
    fs::write(&csv_path, report_csv(&report))?;
    fs::write(&svg_path, render_bars(&report))?;
    for map in &maps {
        let year = map.year_tag.as_deref().expect("tagged above");
        fs::write(
            out_dir.join(format!("map_{year}.ppm")),
            render_map(map, &DEFAULT_PALETTE),
        )?;
    }
    eprintln!(
        "report over {} maps -> {}, {}, and {} PPM file(s)",
        maps.len(),
        csv_path.display(),
        svg_path.display(),
        maps.len()
    );
    Ok(())
}

pub fn cmd_synth(config_path: &Path) -> Result<()> {
    let cfg = RunConfig::load(config_path, SYNTH_SYNOPSIS)?;
    let manifest = synth_manifest(&cfg.synth)?;
    fs::create_dir_all(&cfg.io.dataset_dir)?;
    write_manifest(&manifest, &cfg.io.dataset_dir)?;
    print!("{}", class_table(&manifest));
    for (name, sp) in [("train", Split::Train), ("val", Split::Val), ("test", Split::Test)] {
        eprintln!(
            "nearest-mean oracle accuracy on {name}: {:.4}",
            nearest_mean_accuracy(&manifest, sp)
        );
    }
    eprintln!(
        "synthetic dataset (seed {}) written to {}",
        cfg.synth.seed,
        cfg.io.dataset_dir.display()
    );
    Ok(())
}

pub fn cmd_selftest(instances: usize) -> Result<()> {
    if instances == 0 {
        return Err(usage("--instances must be >= 1", SELFTEST_SYNOPSIS));
    }
    let mut failures = 0usize;
    let mut check = |name: &str, passed: bool, detail: String| {
        println!("{} {name}: {detail}", if passed { "ok  " } else { "FAIL" });
        if !passed {
            failures += 1;
        }
    };

    match conv_oracle_suite(100, 2026) {
        Ok(n) => check("conv-oracle", true, format!("{n} shape configs, exact match")),
        Err(e) => check("conv-oracle", false, e),
    }
    for report in gradcheck_all(instances, 2026) {
        check(
            &format!("gradcheck-{}", report.layer),
            report.passed(),
            format!("{} instances, max rel err {:.3e}", report.instances, report.max_rel),
        );
    }
    let labels = smooth_labels::<f64>(0, 0.1, 5);
    check(
        "label-smoothing",
        labels == vec![0.92, 0.02, 0.02, 0.02, 0.02],
        format!("{labels:?}"),
    );
    let logits = Tensor::new(vec![2, 5], vec![0.0f64; 10]);
    let (loss, _) = cross_entropy_smoothed(&logits, &[0, 3], 0.1)?;
    check(
        "uniform-logits-loss",
        (loss - 5.0f64.ln()).abs() < 1e-9,
        format!("{loss} vs ln 5 = {}", 5.0f64.ln()),
    );
    let cfg = TrainConfig::default();
    let schedule_ok = lr_at(0, &cfg) == 0.1
        && lr_at(99, &cfg) == 0.1
        && lr_at(100, &cfg) == 0.01
        && lr_at(199, &cfg) == 0.01
        && lr_at(200, &cfg) == 0.001
        && lr_at(299, &cfg) == 0.001;
    check(
        "lr-schedule",
        schedule_ok,
        format!("lr(0)={}, lr(100)={}, lr(200)={}", lr_at(0, &cfg), lr_at(100, &cfg), lr_at(200, &cfg)),
    );

    if failures > 0 {
        anyhow::bail!("{failures} self-test check(s) failed");
    }
    eprintln!("all self-tests passed");
    Ok(())
}
