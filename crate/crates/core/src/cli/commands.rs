use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::artifacts::{
    create_dir, read_prepared, timestamped_dir, unix_time, write_json, write_jsonl, write_prepared,
    write_text, DatasetManifest,
};
use super::config::{ConfigFile, RunConfig};
use super::{
    EvaluateArgs, InputFormat, PrepareArgs, Rq3Args, Rq4Args, SplitArg, SweepArgs, TrainArgs,
};
use crate::data::synthetic::{planted_factor_data, PlantedConfig};
use crate::data::{
    inject_noise, load_triplets, make_splits, CleanTestRule, Dataset, NoiseSpec, Split, SplitRatio,
    TripletFormat,
};
use crate::denoise::{train as train_method, DenoiseConfig, HardSampleExport, Method, TrainHooks};
use crate::error::{Error, Result};
use crate::eval::{evaluate as eval_split, flip_precision, MetricsReport};
use crate::harness::{rq3_variants, rq4 as rq4_series};
use crate::model::EmbeddingModel;

const NOISE_SEED_SALT: u64 = 0x7472_6169_6e;

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    created_unix: u64,
    version: &'a str,
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
}

fn start_run(cfg: &RunConfig, command: &str, extra: Option<serde_json::Value>) -> Result<PathBuf> {
    let stamp = unix_time();
    let dir = timestamped_dir(&cfg.out, command, stamp)?;
    let manifest = RunManifest {
        command,
        created_unix: stamp,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        extra,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    log::info!("writing {command} artifacts to {}", dir.display());
    Ok(dir)
}

/// Loads a prepared dataset and applies any `--noise-rate` on top of it.
fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let (ds, _) = read_prepared(&cfg.input)?;
    if cfg.noise_rate > 0.0 {
        inject_noise(&ds, &NoiseSpec { noise_rate: cfg.noise_rate, seed: NOISE_SEED_SALT })
    } else {
        Ok(ds)
    }
}

pub fn prepare(args: &PrepareArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let noise_rate = match args.noise_rate {
        Some(r) => r,
        None => file.get("noise-rate")?.unwrap_or(0.0),
    };
    let (raw, source) = match args.format {
        InputFormat::Synthetic => {
            let cfg = PlantedConfig {
                num_users: args.users,
                num_items: args.items,
                rank: args.rank,
                seed: args.seed,
                ..Default::default()
            };
            (planted_factor_data(&cfg), format!("planted rank {}", args.rank))
        }
        fmt => {
            let input = args
                .input
                .as_ref()
                .ok_or_else(|| Error::Config("--input is required for file formats".into()))?;
            let fmt = match fmt {
                InputFormat::Tsv => TripletFormat::Tsv,
                _ => TripletFormat::MovieLens100k,
            };
            (load_triplets(input, fmt)?, input.display().to_string())
        }
    };
    let rule = if args.keep_all_test {
        CleanTestRule::KeepAll
    } else {
        CleanTestRule::RatingAtLeast(args.clean_min_rating)
    };
    let split = make_splits(&raw, SplitRatio::default(), rule, args.seed)?;
    let ds = inject_noise(&split, &NoiseSpec { noise_rate, seed: args.seed })?;
    let format = match args.format {
        InputFormat::Tsv => "tsv",
        InputFormat::MovieLens100k => "movielens-100k",
        InputFormat::Synthetic => "synthetic",
    };
    let manifest = DatasetManifest {
        source,
        format: format.into(),
        seed: args.seed,
        noise_rate,
        clean_min_rating: (!args.keep_all_test).then_some(args.clean_min_rating),
        num_users: ds.num_users,
        num_items: ds.num_items,
        train: ds.train.len(),
        validation: ds.validation.len(),
        test: ds.test.len(),
        injected: ds.noisy_samples().len(),
    };
    write_prepared(&args.out, &ds, &manifest)?;
    println!(
        "{}: {} users, {} items, train {} (injected {}), validation {}, test {}",
        args.out.display(),
        manifest.num_users,
        manifest.num_items,
        manifest.train,
        manifest.injected,
        manifest.validation,
        manifest.test
    );
    Ok(())
}

#[derive(Serialize)]
struct SeedMetrics<'a> {
    method: &'a str,
    seed: u64,
    best_epoch: u32,
    epochs_run: usize,
    flips: usize,
    #[serde(flatten)]
    report: &'a MetricsReport,
}

struct SeedRun {
    seed: u64,
    report: MetricsReport,
}

fn train_one_seed(ds: &Dataset, cfg: &RunConfig, seed: u64, dir: &Path, dump_ledger: bool) -> Result<SeedRun> {
    create_dir(dir)?;
    let denoise = DenoiseConfig { seed, ..cfg.denoise.clone() };
    let model = EmbeddingModel::new(ds.num_users, ds.num_items, cfg.optimizer.embedding_dim, seed);

    let mut ledger_out = None;
    if dump_ledger && cfg.method == Method::Dcf {
        let path = dir.join("ledger.csv");
        let mut w = BufWriter::new(fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
        writeln!(w, "sample_id,epoch,d,mu_tilde,lower_bound").map_err(|e| Error::io(&path, e))?;
        ledger_out = Some((path, w));
    }
    let mut ledger_err: Option<Error> = None;
    let hooks = TrainHooks {
        exempt: HashSet::new(),
        on_epoch: ledger_out.as_mut().map(|(path, w)| {
            let err = &mut ledger_err;
            Box::new(move |report: &crate::denoise::EpochReport, _: &EmbeddingModel, ledger: Option<&crate::robustloss::LossLedger>| {
                let Some(ledger) = ledger else { return };
                if err.is_some() {
                    return;
                }
                for row in ledger.rows(report.epoch) {
                    let res = writeln!(w, "{},{},{},{},{}", row.sample_id, row.epoch, row.d, row.mu_tilde, row.lower_bound);
                    if let Err(e) = res {
                        *err = Some(Error::io(path.as_path(), e));
                        return;
                    }
                }
            }) as crate::denoise::EpochHook<'_>
        }),
    };
    let outcome = train_method(ds, model, cfg.method, &denoise, &cfg.optimizer, hooks)?;
    if let Some(e) = ledger_err {
        return Err(e);
    }
    if let Some((path, mut w)) = ledger_out {
        w.flush().map_err(|e| Error::io(&path, e))?;
    }

    let ckpt = dir.join("model.ckpt");
    let file = fs::File::create(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    outcome.model.save_checkpoint(BufWriter::new(file)).map_err(|e| Error::io(&ckpt, e))?;
    write_jsonl(&dir.join("epochs.jsonl"), &outcome.reports)?;
    write_jsonl(&dir.join("relabels.jsonl"), &outcome.events)?;
    if let Some(export) = &outcome.hard_samples {
        write_json(&dir.join("hard_samples.json"), export)?;
    }

    let truth = ds.noisy_samples();
    let fp = if truth.is_empty() { None } else { flip_precision(&outcome.events, &truth) };
    let report = eval_split(&outcome.model, ds, Split::Test, &cfg.ks)?.with_flip_precision(fp);
    let metrics = SeedMetrics {
        method: cfg.method.name(),
        seed,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.reports.len(),
        flips: outcome.events.len(),
        report: &report,
    };
    write_json(&dir.join("metrics.json"), &metrics)?;
    log::info!(
        "{} seed {seed}: best epoch {}, NDCG@{} {:.4}",
        cfg.method.name(),
        outcome.best_epoch,
        cfg.ks[0],
        report.ndcg_at(cfg.ks[0]).unwrap_or(0.0)
    );
    Ok(SeedRun { seed, report })
}

/// `method,metric,K,mean,std` rows over seeds.
fn summary_csv(method: Method, runs: &[SeedRun], ks: &[usize]) -> String {
    let mut out = String::from("method,metric,K,mean,std\n");
    let stats = |values: Vec<f64>| {
        let v = crate::eval::MetricValue::from_values(values);
        (v.mean, v.std)
    };
    for (metric, pick) in [
        ("recall", (|r: &MetricsReport, k| r.recall_at(k)) as fn(&MetricsReport, usize) -> Option<f64>),
        ("ndcg", |r: &MetricsReport, k| r.ndcg_at(k)),
    ] {
        for &k in ks {
            let (mean, std) = stats(runs.iter().map(|r| pick(&r.report, k).unwrap_or(0.0)).collect());
            writeln!(out, "{},{metric},{k},{mean:.6},{std:.6}", method.name()).expect("write to string");
        }
    }
    let flips: Vec<f64> = runs.iter().filter_map(|r| r.report.flip_precision).collect();
    if !flips.is_empty() {
        let (mean, std) = stats(flips);
        writeln!(out, "{},flip_precision,,{mean:.6},{std:.6}", method.name()).expect("write to string");
    }
    out
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let flags = args.training.overrides(args.method, &args.bound);
    let cfg = RunConfig::resolve(args.input.clone(), args.out.clone(), flags, &args.training.config_file()?)?;
    let ds = load_dataset(&cfg)?;
    let dir = start_run(&cfg, "train", None)?;
    let mut runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| train_one_seed(&ds, &cfg, seed, &dir.join(format!("seed-{seed}")), args.dump_ledger))
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by_key(|r| r.seed);

    let lines: Vec<serde_json::Value> = runs
        .iter()
        .map(|r| serde_json::json!({ "method": cfg.method.name(), "seed": r.seed, "metrics": r.report }))
        .collect();
    write_jsonl(&dir.join("metrics.jsonl"), lines)?;
    let summary = summary_csv(cfg.method, &runs, &cfg.ks);
    write_text(&dir.join("summary.csv"), &summary)?;
    print!("{summary}");
    println!("run directory: {}", dir.display());
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let (ds, _) = read_prepared(&args.input)?;
    let file = fs::File::open(&args.checkpoint).map_err(|e| Error::io(&args.checkpoint, e))?;
    let model = EmbeddingModel::load_checkpoint(std::io::BufReader::new(file))?;
    if model.num_users() != ds.num_users || model.num_items() != ds.num_items {
        return Err(Error::Checkpoint(format!(
            "checkpoint is {} x {} but the dataset is {} x {}",
            model.num_users(),
            model.num_items(),
            ds.num_users,
            ds.num_items
        )));
    }
    let split = match args.split {
        SplitArg::Validation => Split::Validation,
        SplitArg::Test => Split::Test,
    };
    let report = eval_split(&model, &ds, split, &args.k.0)?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(out) = &args.out {
        write_text(out, &(text + "\n"))?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
struct SweepRow {
    relabel_ratio: f64,
    sigma2: f64,
    window: usize,
    seed: u64,
    best_epoch: u32,
    val_ndcg5: f64,
    test: MetricsReport,
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let file = args.training.config_file()?;
    let flags = args.training.overrides(Some(Method::Dcf), &Default::default());
    let cfg = RunConfig::resolve(args.input.clone(), args.out.clone(), flags, &file)?;
    let grid_r = args.r.clone().map(|l| l.0).unwrap_or_else(|| vec![cfg.denoise.relabel_ratio]);
    let grid_s = args.sigma2.clone().map(|l| l.0).unwrap_or_else(|| vec![cfg.denoise.sigma2]);
    let grid_v = args.v.clone().map(|l| l.0).unwrap_or_else(|| vec![cfg.denoise.window]);
    if grid_r.is_empty() || grid_s.is_empty() || grid_v.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let mut cells = Vec::new();
    for &r in &grid_r {
        for &s in &grid_s {
            for &v in &grid_v {
                for &seed in &cfg.seeds {
                    let denoise = DenoiseConfig { relabel_ratio: r, sigma2: s, window: v, seed, ..cfg.denoise.clone() };
                    denoise.validate()?;
                    cells.push(denoise);
                }
            }
        }
    }
    let grid = serde_json::json!({ "R": grid_r, "sigma2": grid_s, "v": grid_v });
    let ds = load_dataset(&cfg)?;
    let dir = start_run(&cfg, "sweep", Some(grid))?;

    let mut rows = cells
        .par_iter()
        .enumerate()
        .map(|(idx, denoise)| -> Result<SweepRow> {
            let cell_dir = dir.join(format!("cell-{idx:04}"));
            create_dir(&cell_dir)?;
            let model = EmbeddingModel::new(ds.num_users, ds.num_items, cfg.optimizer.embedding_dim, denoise.seed);
            let outcome = train_method(&ds, model, Method::Dcf, denoise, &cfg.optimizer, TrainHooks::default())?;
            write_jsonl(&cell_dir.join("epochs.jsonl"), &outcome.reports)?;
            let val = eval_split(&outcome.model, &ds, Split::Validation, &[5])?.ndcg_at(5).unwrap_or(0.0);
            let test = eval_split(&outcome.model, &ds, Split::Test, &cfg.ks)?;
            let row = SweepRow {
                relabel_ratio: denoise.relabel_ratio,
                sigma2: denoise.sigma2,
                window: denoise.window,
                seed: denoise.seed,
                best_epoch: outcome.best_epoch,
                val_ndcg5: val,
                test,
            };
            write_json(&cell_dir.join("metrics.json"), &row)?;
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    // Stable sort keeps grid order among ties.
    rows.sort_by(|a, b| b.val_ndcg5.total_cmp(&a.val_ndcg5));

    let mut csv = String::from("R,sigma2,v,seed,best_epoch,val_ndcg5");
    for k in &cfg.ks {
        write!(csv, ",test_recall{k},test_ndcg{k}").expect("write to string");
    }
    csv.push('\n');
    for row in &rows {
        write!(
            csv,
            "{},{},{},{},{},{:.6}",
            row.relabel_ratio, row.sigma2, row.window, row.seed, row.best_epoch, row.val_ndcg5
        )
        .expect("write to string");
        for &k in &cfg.ks {
            write!(
                csv,
                ",{:.6},{:.6}",
                row.test.recall_at(k).unwrap_or(0.0),
                row.test.ndcg_at(k).unwrap_or(0.0)
            )
            .expect("write to string");
        }
        csv.push('\n');
    }
    write_text(&dir.join("sweep.csv"), &csv)?;
    print!("{csv}");
    println!("run directory: {}", dir.display());
    Ok(())
}

pub fn rq3(args: &Rq3Args) -> Result<()> {
    let path = args
        .hard_set
        .as_ref()
        .ok_or_else(|| Error::Config("rq3 needs --hard-set (hard_samples.json from a DCF train run)".into()))?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let export: HardSampleExport = serde_json::from_str(&text)?;

    let flags = args.training.overrides(Some(Method::Tce), &args.bound);
    let cfg = RunConfig::resolve(args.input.clone(), args.out.clone(), flags, &args.training.config_file()?)?;
    let ds = load_dataset(&cfg)?;
    if let Some(bad) = export.hard.iter().chain(&export.random).find(|id| id.index() >= ds.train.len()) {
        return Err(Error::Config(format!("hard-set sample {} beyond the training split", bad.0)));
    }
    let extra = serde_json::json!({ "hard_set": path, "hard": export.hard.len(), "random": export.random.len() });
    let dir = start_run(&cfg, "rq3", Some(extra))?;

    let mut per_seed = cfg
        .seeds
        .par_iter()
        .map(|&seed| rq3_variants(&ds, &export, &cfg.optimizer, &cfg.denoise, seed).map(|rows| (seed, rows)))
        .collect::<Result<Vec<_>>>()?;
    per_seed.sort_by_key(|(seed, _)| *seed);

    let mut csv = String::from("seed,variant,train_samples,added,recall5,ndcg5\n");
    let added = [export.hard.len(), export.random.len(), 0];
    for (seed, rows) in &per_seed {
        for (row, added) in rows.iter().zip(added) {
            writeln!(csv, "{seed},{},{},{added},{:.6},{:.6}", row.variant, row.train_samples, row.recall5, row.ndcg5)
                .expect("write to string");
        }
    }
    let n = per_seed.len() as f64;
    let mut table = String::from("variant      recall@5  ndcg@5\n");
    for (j, added) in added.iter().enumerate() {
        let recall = per_seed.iter().map(|(_, r)| r[j].recall5).sum::<f64>() / n;
        let ndcg = per_seed.iter().map(|(_, r)| r[j].ndcg5).sum::<f64>() / n;
        let variant = per_seed[0].1[j].variant;
        writeln!(csv, "mean,{variant},{},{added},{recall:.6},{ndcg:.6}", ds.train.len()).expect("write to string");
        writeln!(table, "{variant:<12} {recall:.4}    {ndcg:.4}").expect("write to string");
    }
    write_text(&dir.join("rq3.csv"), &csv)?;
    print!("{table}");
    println!("run directory: {}", dir.display());
    Ok(())
}

pub fn rq4(args: &Rq4Args) -> Result<()> {
    let flags = args.training.overrides(Some(Method::Dcf), &args.bound);
    let cfg = RunConfig::resolve(args.input.clone(), args.out.clone(), flags, &args.training.config_file()?)?;
    let ds = load_dataset(&cfg)?;
    if ds.noisy_samples().is_empty() {
        return Err(Error::Config(format!(
            "{} has no noise mask; prepare it with --noise-rate or pass --noise-rate here",
            cfg.input.display()
        )));
    }
    let dir = start_run(&cfg, "rq4", None)?;
    let mut per_seed = cfg
        .seeds
        .par_iter()
        .map(|&seed| rq4_series(&ds, &cfg.optimizer, &cfg.denoise, seed).map(|s| (seed, s)))
        .collect::<Result<Vec<_>>>()?;
    per_seed.sort_by_key(|(seed, _)| *seed);

    let fmt = |v: Option<f64>| v.map_or_else(String::new, |p| format!("{p:.6}"));
    let mut csv = String::from("seed,epoch,progressive,fixed\n");
    for (seed, s) in &per_seed {
        for (e, (p, f)) in s.progressive.iter().zip(&s.fixed).enumerate() {
            writeln!(csv, "{seed},{},{},{}", e + 1, fmt(*p), fmt(*f)).expect("write to string");
        }
    }
    write_text(&dir.join("rq4.csv"), &csv)?;
    let o = cfg.denoise.relabel_saturation.min(cfg.denoise.epochs).max(1) as usize;
    println!("cumulative flip precision at epoch {o}:");
    for (seed, s) in &per_seed {
        println!("  seed {seed}: progressive {:>8}  fixed {:>8}", fmt(s.progressive[o - 1]), fmt(s.fixed[o - 1]));
    }
    println!("run directory: {}", dir.display());
    Ok(())
}
