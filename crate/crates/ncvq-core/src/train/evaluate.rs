//! Generation and the evaluation job: probes, FID over repeated generation
//! runs, IS from class-conditional samples, and the figure set.

use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};

use crate::config::ExperimentConfig;
use crate::data::{denormalize_series, load_ucr, normalize, NormStats, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::eval::{
    embed_2d, fid, inception_score, probe_accuracy, token_representations,
    train_or_load_extractor, EmbedMethod, FeatureExtractor, MetricsReport, ProbeKind,
};
use crate::prior::{iterative_decode, DecodeOptions, MaskedPrior};
use crate::rng::{sub_rng, Rng};
use crate::tokenizer::NcTokenizer;

use super::checkpoint::{
    check_stage_link, eval_dir, load_stage1, load_stage2, samples_dir, stage1_dir, stage2_dir,
};
use super::plot::{plot_scatter, plot_series};

pub struct GenerationResult {
    /// Denormalized series, n rows of dataset length.
    pub series: Vec<Vec<f32>>,
    pub grids: Vec<Vec<u32>>,
    pub class_label: Option<u32>,
}

/// Decode token grids and map them through the frozen decoder back to the
/// original scale.
pub fn generate(
    tokenizer: &NcTokenizer,
    prior: &MaskedPrior,
    norm_stats: NormStats,
    n: usize,
    class_label: Option<u32>,
    temperature: Option<f64>,
    rng: &mut Rng,
) -> Result<GenerationResult> {
    let mut series = Vec::with_capacity(n);
    let mut grids = Vec::with_capacity(n);
    let opts = DecodeOptions {
        t_steps: prior.config().t_steps,
        temperature,
        class_label,
    };
    let mut remaining = n;
    while remaining > 0 {
        let chunk = remaining.min(256);
        let (grid_t, _) = iterative_decode(prior, chunk, &opts, rng)?;
        let x = tokenizer.decode_tokens(&grid_t)?;
        for row in x.to_vec2::<f32>()? {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    part: "generated series".into(),
                    step: n - remaining,
                });
            }
            series.push(denormalize_series(&row, norm_stats));
        }
        grids.extend(grid_t.to_vec2::<u32>()?);
        remaining -= chunk;
    }
    Ok(GenerationResult {
        series,
        grids,
        class_label,
    })
}

/// Write samples as a columnar numeric file: `# key: value` metadata header,
/// then one CSV row per timestep with one column per sample.
pub fn write_samples_file(path: &Path, result: &GenerationResult, meta: &[(String, String)]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::new();
    for (k, v) in meta {
        out.push_str(&format!("# {k}: {v}\n"));
    }
    out.push_str(&format!("# n_samples: {}\n", result.series.len()));
    if let Some(c) = result.class_label {
        out.push_str(&format!("# class_label: {c}\n"));
    }
    let l = result.series.first().map_or(0, Vec::len);
    out.push_str(&format!("# series_len: {l}\n"));
    for t in 0..l {
        let row: Vec<String> = result.series.iter().map(|s| format!("{:.6}", s[t])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn normalize_rows(rows: &[Vec<f32>], stats: NormStats) -> Vec<Vec<f32>> {
    rows.iter()
        .map(|r| {
            r.iter()
                .map(|&v| ((v as f64 - stats.mean) / stats.std) as f32)
                .collect()
        })
        .collect()
}

fn features_of_rows(extractor: &FeatureExtractor, rows: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
    let device = Device::Cpu;
    let l = rows[0].len();
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(256) {
        let flat: Vec<f32> = chunk.iter().flatten().copied().collect();
        let x = Tensor::from_vec(flat, (chunk.len(), l), &device)?;
        out.extend(extractor.features(&x)?.to_vec2::<f32>()?);
    }
    Ok(out)
}

fn class_probs_of_rows(extractor: &FeatureExtractor, rows: &[Vec<f32>]) -> Result<Vec<Vec<f64>>> {
    let device = Device::Cpu;
    let l = rows[0].len();
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(256) {
        let flat: Vec<f32> = chunk.iter().flatten().copied().collect();
        let x = Tensor::from_vec(flat, (chunk.len(), l), &device)?;
        out.extend(extractor.class_probs(&x)?);
    }
    Ok(out)
}

pub struct EvalContext {
    pub tokenizer: NcTokenizer,
    pub prior: MaskedPrior,
    pub norm_stats: NormStats,
    pub train: TimeSeriesDataset,
    pub test: TimeSeriesDataset,
    pub n_classes: usize,
}

pub fn load_eval_context(cfg: &ExperimentConfig, run_dir: &Path) -> Result<EvalContext> {
    let s1 = load_stage1(&stage1_dir(run_dir))?;
    if s1.meta.config_hash != cfg.hash() {
        return Err(Error::HashMismatch {
            expected: cfg.hash(),
            found: s1.meta.config_hash.clone(),
        });
    }
    let s2 = load_stage2(&stage2_dir(run_dir), s1.tokenizer.t_lat())?;
    check_stage_link(&s1.meta, &s2.meta)?;
    let (train_raw, test_raw) = load_ucr(&cfg.resolved_data_root(), &cfg.dataset)?;
    let (train, test) = normalize(&train_raw, &test_raw)?;
    let norm_stats = train.norm_stats.expect("normalize sets stats");
    if (norm_stats.mean - s1.meta.norm_stats.mean).abs() > 1e-9
        || (norm_stats.std - s1.meta.norm_stats.std).abs() > 1e-9
    {
        return Err(Error::Checkpoint(
            "dataset statistics differ from the checkpointed run".into(),
        ));
    }
    let n_classes = s1.meta.n_classes;
    Ok(EvalContext {
        tokenizer: s1.tokenizer,
        prior: s2.prior,
        norm_stats,
        train,
        test,
        n_classes,
    })
}

/// The full evaluation job. Produces the metric record and the figure set
/// under `<run_dir>/eval/`.
pub fn run_eval(cfg: &ExperimentConfig, run_dir: &Path) -> Result<MetricsReport> {
    let ctx = load_eval_context(cfg, run_dir)?;
    let out = eval_dir(run_dir);
    let fig_dir = out.join("figures");
    std::fs::create_dir_all(&fig_dir)?;

    // probes on frozen z_q
    let train_reps = token_representations(&ctx.tokenizer, &ctx.train, cfg.eval.pooled_probe_features)?;
    let test_reps = token_representations(&ctx.tokenizer, &ctx.test, cfg.eval.pooled_probe_features)?;
    let knn = probe_accuracy(
        &train_reps,
        &ctx.train.labels,
        &test_reps,
        &ctx.test.labels,
        ProbeKind::Knn5,
    )?;
    let svm = probe_accuracy(
        &train_reps,
        &ctx.train.labels,
        &test_reps,
        &ctx.test.labels,
        ProbeKind::SvmLinear,
    )?;

    // feature extractor (cached per dataset+config under the data root)
    let cache_dir = cfg.resolved_data_root().join(".fcn_cache");
    let trained = train_or_load_extractor(&cache_dir, &ctx.train, &cfg.eval, cfg.seed)?;
    let extractor = &trained.extractor;
    let fcn_acc = extractor.accuracy(&ctx.test, 256)?;

    let test_rows: Vec<Vec<f32>> = ctx.test.series.clone();
    let test_features = features_of_rows(extractor, &test_rows)?;

    let n_gen = cfg
        .eval
        .n_generate
        .unwrap_or_else(|| ctx.test.len().min(cfg.eval.generation_cap));
    let temperature = Some(cfg.prior.temperature);

    // FID: mean over `fid_runs` unconditional generation runs
    let mut fid_runs = Vec::with_capacity(cfg.eval.fid_runs);
    for run in 0..cfg.eval.fid_runs {
        let mut rng = sub_rng(cfg.seed, &format!("fid_gen/{run}"));
        let gen = generate(
            &ctx.tokenizer,
            &ctx.prior,
            ctx.norm_stats,
            n_gen,
            None,
            temperature,
            &mut rng,
        )?;
        let gen_norm = normalize_rows(&gen.series, ctx.norm_stats);
        let gen_features = features_of_rows(extractor, &gen_norm)?;
        fid_runs.push(fid(&test_features, &gen_features)?);
    }
    let fid_mean = fid_runs.iter().sum::<f64>() / fid_runs.len().max(1) as f64;

    // IS: class-conditional samples pooled across classes, same run count
    let per_class = n_gen.div_ceil(ctx.n_classes.max(1)).max(1);
    let mut is_runs = Vec::with_capacity(cfg.eval.fid_runs);
    for run in 0..cfg.eval.fid_runs {
        let mut rng = sub_rng(cfg.seed, &format!("is_gen/{run}"));
        let mut pooled: Vec<Vec<f32>> = Vec::with_capacity(per_class * ctx.n_classes);
        for class in 0..ctx.n_classes {
            let gen = generate(
                &ctx.tokenizer,
                &ctx.prior,
                ctx.norm_stats,
                per_class,
                Some(class as u32),
                temperature,
                &mut rng,
            )?;
            pooled.extend(normalize_rows(&gen.series, ctx.norm_stats));
        }
        let probs = class_probs_of_rows(extractor, &pooled)?;
        is_runs.push(inception_score(&probs)?);
    }
    let is_mean = is_runs.iter().sum::<f64>() / is_runs.len().max(1) as f64;

    emit_figures(cfg, &ctx, extractor, &fig_dir, &test_reps)?;

    let report = MetricsReport {
        dataset: cfg.dataset.clone(),
        knn_accuracy: knn,
        svm_accuracy: svm,
        fid: fid_mean,
        fid_runs: fid_runs.clone(),
        is_score: is_mean,
        is_runs,
        fcn_test_accuracy: fcn_acc,
        run_seed: cfg.seed,
        config_hash: cfg.hash(),
    };
    report.validate(ctx.n_classes)?;
    std::fs::write(out.join("metrics.txt"), report.to_kv_text())?;
    let mut runs_csv = String::from("run,fid,is\n");
    for (i, (f, s)) in fid_runs.iter().zip(&report.is_runs).enumerate() {
        runs_csv.push_str(&format!("{i},{f:.6},{s:.6}\n"));
    }
    std::fs::write(out.join("fid_is_runs.csv"), runs_csv)?;
    Ok(report)
}

fn emit_figures(
    cfg: &ExperimentConfig,
    ctx: &EvalContext,
    extractor: &FeatureExtractor,
    fig_dir: &Path,
    test_reps: &[Vec<f32>],
) -> Result<()> {
    let _ = extractor;
    let mut rng = sub_rng(cfg.seed, "figures");
    let temperature = Some(cfg.prior.temperature);

    // 50 unconditional and 50 per-class conditional samples
    let uncond = generate(
        &ctx.tokenizer,
        &ctx.prior,
        ctx.norm_stats,
        50,
        None,
        temperature,
        &mut rng,
    )?;
    plot_series(
        &fig_dir.join("samples_unconditional.svg"),
        "unconditional samples",
        &uncond.series,
        50,
    )?;
    for class in 0..ctx.n_classes {
        let cond = generate(
            &ctx.tokenizer,
            &ctx.prior,
            ctx.norm_stats,
            50,
            Some(class as u32),
            temperature,
            &mut rng,
        )?;
        plot_series(
            &fig_dir.join(format!("samples_class_{class}.svg")),
            &format!("class {class} samples"),
            &cond.series,
            50,
        )?;
    }
    // ground truth: 50 random test rows (or all when fewer), original scale
    let stats = ctx.norm_stats;
    let truth: Vec<Vec<f32>> = ctx
        .test
        .series
        .iter()
        .take(50)
        .map(|r| denormalize_series(r, stats))
        .collect();
    plot_series(&fig_dir.join("ground_truth.svg"), "ground truth", &truth, 50)?;

    // discrete-latent projections of the test split
    let cap = cfg.eval.embed_cap.min(test_reps.len());
    let reps = &test_reps[..cap];
    let labels = &ctx.test.labels[..cap];
    let pca = embed_2d(reps, EmbedMethod::Pca, cfg.seed)?;
    plot_scatter(&fig_dir.join("latents_pca.svg"), "latent PCA", &pca, labels)?;
    let tsne = tsne_points(reps, cfg)?;
    plot_scatter(&fig_dir.join("latents_tsne.svg"), "latent t-SNE", &tsne, labels)?;

    // generated-vs-test overlay in data space
    let half = (cfg.eval.embed_cap / 2).max(10);
    let test_take = ctx.test.series.len().min(half);
    let mut joint: Vec<Vec<f32>> = ctx.test.series[..test_take].to_vec();
    let gen_norm = normalize_rows(&uncond.series, ctx.norm_stats);
    let gen_take = gen_norm.len().min(half);
    joint.extend_from_slice(&gen_norm[..gen_take]);
    let joint_labels: Vec<usize> = std::iter::repeat_n(0usize, test_take)
        .chain(std::iter::repeat_n(1usize, gen_take))
        .collect();
    let overlay = tsne_points(&joint, cfg)?;
    plot_scatter(
        &fig_dir.join("overlay_tsne.svg"),
        "test (color 0) vs generated (color 1)",
        &overlay,
        &joint_labels,
    )?;
    Ok(())
}

fn tsne_points(rows: &[Vec<f32>], cfg: &ExperimentConfig) -> Result<Vec<[f64; 2]>> {
    crate::eval::tsne_2d(rows, cfg.seed, cfg.eval.tsne_perplexity, cfg.eval.tsne_iters)
}

/// Standalone generation job for the CLI: writes the columnar samples file.
pub fn run_generate(
    cfg: &ExperimentConfig,
    run_dir: &Path,
    n: usize,
    class_label: Option<u32>,
) -> Result<PathBuf> {
    let ctx = load_eval_context(cfg, run_dir)?;
    let mut rng = sub_rng(cfg.seed, "generate_cli");
    let result = generate(
        &ctx.tokenizer,
        &ctx.prior,
        ctx.norm_stats,
        n,
        class_label,
        Some(cfg.prior.temperature),
        &mut rng,
    )?;
    let name = match class_label {
        Some(c) => format!("samples_class{c}_n{n}.csv"),
        None => format!("samples_unconditional_n{n}.csv"),
    };
    let path = samples_dir(run_dir).join(name);
    write_samples_file(
        &path,
        &result,
        &[
            ("dataset".into(), cfg.dataset.clone()),
            ("config_hash".into(), cfg.hash()),
            ("seed".into(), cfg.seed.to_string()),
        ],
    )?;
    Ok(path)
}

/// Aggregate metric records from several run directories into a text table.
pub fn report_table(run_dirs: &[PathBuf]) -> Result<String> {
    let mut rows = Vec::new();
    for dir in run_dirs {
        let path = eval_dir(dir).join("metrics.txt");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("read {}: {e}", path.display())))?;
        rows.push((dir.clone(), MetricsReport::parse_kv_text(&text)?));
    }
    if rows.is_empty() {
        return Err(Error::Config("no run directories given".into()));
    }
    let mut out = String::new();
    out.push_str(&format!(
        "{:<40} {:>6} {:>8} {:>8} {:>10} {:>8}\n",
        "run", "seed", "knn", "svm", "fid", "is"
    ));
    for (dir, r) in &rows {
        out.push_str(&format!(
            "{:<40} {:>6} {:>8.4} {:>8.4} {:>10.4} {:>8.4}\n",
            dir.display(),
            r.run_seed,
            r.knn_accuracy,
            r.svm_accuracy,
            r.fid,
            r.is_score
        ));
    }
    if rows.len() > 1 {
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&MetricsReport) -> f64| -> f64 {
            rows.iter().map(|(_, r)| f(r)).sum::<f64>() / n
        };
        let spread = |f: &dyn Fn(&MetricsReport) -> f64| -> f64 {
            let m = mean(f);
            (rows.iter().map(|(_, r)| (f(r) - m).powi(2)).sum::<f64>() / n).sqrt()
        };
        let knn: &dyn Fn(&MetricsReport) -> f64 = &|r| r.knn_accuracy;
        let svm: &dyn Fn(&MetricsReport) -> f64 = &|r| r.svm_accuracy;
        let fid_f: &dyn Fn(&MetricsReport) -> f64 = &|r| r.fid;
        let is_f: &dyn Fn(&MetricsReport) -> f64 = &|r| r.is_score;
        out.push_str(&format!(
            "{:<40} {:>6} {:>8.4} {:>8.4} {:>10.4} {:>8.4}\n",
            "mean", "-", mean(knn), mean(svm), mean(fid_f), mean(is_f)
        ));
        out.push_str(&format!(
            "{:<40} {:>6} {:>8.4} {:>8.4} {:>10.4} {:>8.4}\n",
            "spread", "-", spread(knn), spread(svm), spread(fid_f), spread(is_f)
        ));
    }
    Ok(out)
}
