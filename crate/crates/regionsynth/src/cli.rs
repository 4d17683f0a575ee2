//! File-based experiment front end: `gen-data`, `train`, `eval`,
//! `ablate`, `gradcheck`.
//!
//! Configuration is a flat `key=value` text file with section prefixes
//! (`data.`, `train.`, `loss.`, `sample.`); `--set key=value` overrides
//! apply after the file parses, and unknown keys are rejected by name.
//! Every command is deterministic per (config, seed), writes only under
//! its output directory, and reports failure through the exit code:
//! 0 success, 1 usage, 2 data error, 3 numeric failure.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::data::{
    generate_benchmark, load_benchmark, save_benchmark, save_semantic_vectors, BenchmarkConfig,
    FeatureBatch,
};
use crate::error::{Error, Result};
use crate::models::{load_checkpoint, save_checkpoint, ModelParams};
use crate::pipeline::{
    ablation_csv, evaluate, run_ablation, run_pipeline, synthesize_unseen, AblationVariant,
    EvalMode, TrainConfig,
};
use crate::tensor::{Real, Tensor};

#[derive(Parser, Debug)]
#[command(
    name = "regionsynth",
    about = "Region-feature synthesizer experiments: benchmark generation, training, evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic benchmark directory.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train the synthesizer pipeline on a benchmark directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Also train every ablation variant and write the variant table.
        #[arg(long)]
        ablation: bool,
    },
    /// Evaluate a checkpoint under ZSD or GZSD and export projections.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mode: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train all ablation variants from one seed and tabulate them.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Finite-difference check of every loss gradient.
    Gradcheck {},
}

/// The full experiment configuration behind `--config` and `--set`.
#[derive(Clone, Debug, Default)]
pub struct FullConfig {
    pub data: BenchmarkConfig,
    pub train: TrainConfig,
}

impl FullConfig {
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let badf = |k: &str, e: std::num::ParseFloatError| Error::Config(format!("{k}: {e}"));
        let badi = |k: &str, e: std::num::ParseIntError| Error::Config(format!("{k}: {e}"));
        if let Some(rest) = key.strip_prefix("data.") {
            return self.data.set_key(rest, value);
        }
        if let Some(rest) = key.strip_prefix("train.") {
            match rest {
                "epochs" => self.train.epochs = value.parse().map_err(|e| badi(key, e))?,
                "batch_size" => self.train.batch_size = value.parse().map_err(|e| badi(key, e))?,
                "critic_steps" => {
                    self.train.critic_steps = value.parse().map_err(|e| badi(key, e))?
                }
                "learning_rate" => {
                    self.train.learning_rate = value.parse().map_err(|e| badf(key, e))?
                }
                "beta1" => self.train.beta1 = value.parse().map_err(|e| badf(key, e))?,
                "beta2" => self.train.beta2 = value.parse().map_err(|e| badf(key, e))?,
                "hidden" => self.train.hidden = value.parse().map_err(|e| badi(key, e))?,
                "synth_per_class" => {
                    self.train.synth_per_class = value.parse().map_err(|e| badi(key, e))?
                }
                "classifier_epochs" => {
                    self.train.classifier_epochs = value.parse().map_err(|e| badi(key, e))?
                }
                "classifier_lr" => {
                    self.train.classifier_lr = value.parse().map_err(|e| badf(key, e))?
                }
                "pool_synth_only" => {
                    self.train.pool_synth_only = value
                        .parse()
                        .map_err(|e| Error::Config(format!("{key}: {e}")))?
                }
                "seed" => self.train.seed = value.parse().map_err(|e| badi(key, e))?,
                other => {
                    return Err(Error::Config(format!("unknown config key `train.{other}`")))
                }
            }
            return Ok(());
        }
        if let Some(rest) = key.strip_prefix("loss.") {
            match rest {
                "gp" => self.train.weights.gp = value.parse().map_err(|e| badf(key, e))?,
                "lambda1" => self.train.weights.cls = value.parse().map_err(|e| badf(key, e))?,
                "lambda2" => {
                    self.train.weights.intra_sd = value.parse().map_err(|e| badf(key, e))?
                }
                "lambda3" => {
                    self.train.weights.inter_sp = value.parse().map_err(|e| badf(key, e))?
                }
                "tau" => {
                    self.train.weights.temperature = value.parse().map_err(|e| badf(key, e))?
                }
                other => return Err(Error::Config(format!("unknown config key `loss.{other}`"))),
            }
            return Ok(());
        }
        if let Some(rest) = key.strip_prefix("sample.") {
            match rest {
                "r" => self.train.noise.radius = value.parse().map_err(|e| badf(key, e))?,
                "n" => self.train.noise.negatives = value.parse().map_err(|e| badi(key, e))?,
                "d_z" => self.train.noise.dim = value.parse().map_err(|e| badi(key, e))?,
                other => {
                    return Err(Error::Config(format!("unknown config key `sample.{other}`")))
                }
            }
            return Ok(());
        }
        Err(Error::Config(format!("unknown config key `{key}`")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = FullConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    Error::Config(format!("line {}: expected key=value", lineno + 1))
                })?;
                cfg.set_key(k.trim(), v.trim())?;
            }
        }
        Ok(cfg)
    }

    pub fn apply_overrides(&mut self, sets: &[String], seed: Option<u64>) -> Result<()> {
        for kv in sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set `{kv}`: expected key=value")))?;
            self.set_key(k.trim(), v.trim())?;
        }
        if let Some(seed) = seed {
            self.data.seed = seed;
            self.train.seed = seed;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()
    }
}

pub fn cmd_gen_data(
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    sets: &[String],
) -> Result<()> {
    let mut cfg = FullConfig::load(config)?;
    cfg.apply_overrides(sets, seed)?;
    cfg.validate()?;
    let bench = generate_benchmark(&cfg.data, cfg.data.seed)?;
    let files = save_benchmark(&bench, &cfg.data, out)?;
    // semantic vectors also as standalone CSVs for interop
    let seen: Vec<(u32, Tensor)> = bench.seen.iter().map(|s| (s.id, s.semantic.clone())).collect();
    let unseen: Vec<(u32, Tensor)> =
        bench.unseen.iter().map(|s| (s.id, s.semantic.clone())).collect();
    save_semantic_vectors(&seen, &out.join("semantic_seen.csv"))?;
    save_semantic_vectors(&unseen, &out.join("semantic_unseen.csv"))?;
    let manifest = out.join("manifest.txt");
    let mut listing = std::fs::read_to_string(&manifest)?;
    listing.push_str("semantic_seen.csv\nsemantic_unseen.csv\n");
    std::fs::write(&manifest, listing)?;
    println!("benchmark written to {}", out.display());
    for f in files {
        println!("  {}", f.file_name().unwrap().to_string_lossy());
    }
    println!("  semantic_seen.csv\n  semantic_unseen.csv");
    Ok(())
}

pub fn cmd_train(
    config: Option<&Path>,
    data_dir: &Path,
    out: &Path,
    seed: Option<u64>,
    sets: &[String],
    ablation: bool,
) -> Result<()> {
    let mut cfg = FullConfig::load(config)?;
    cfg.apply_overrides(sets, seed)?;
    cfg.train.validate()?;
    let (bench, _) = load_benchmark(data_dir)?;
    std::fs::create_dir_all(out)?;

    let output = run_pipeline(&bench, &cfg.train)?;
    let params = ModelParams {
        generator: output.generator.clone(),
        discriminator: output.discriminator.clone(),
        seen_classifier: output.seen_classifier.clone(),
        unseen_classifier: output.unseen_classifier.clone(),
    };
    save_checkpoint(&out.join("checkpoint.ckpt"), &params, cfg.train.seed)?;
    std::fs::write(out.join("training_log.csv"), output.log.to_csv())?;
    println!(
        "trained {} epochs; checkpoint and training_log.csv written to {}",
        output.log.epochs.len(),
        out.display()
    );

    if ablation {
        let rows = run_ablation(&bench, &cfg.train, &AblationVariant::ALL)?;
        std::fs::write(out.join("ablation.csv"), ablation_csv(&rows))?;
        println!("ablation.csv written");
    }
    Ok(())
}

pub fn cmd_eval(
    checkpoint: &Path,
    data_dir: &Path,
    out: &Path,
    mode: &str,
    config: Option<&Path>,
    sets: &[String],
) -> Result<()> {
    let mode: EvalMode = mode.parse()?;
    let mut cfg = FullConfig::load(config)?;
    cfg.apply_overrides(sets, None)?;
    let (bench, _) = load_benchmark(data_dir)?;
    let ckpt = load_checkpoint(checkpoint)?;
    std::fs::create_dir_all(out)?;

    let merged = crate::pipeline::merge_classifiers(
        &ckpt.params.seen_classifier,
        &ckpt.params.unseen_classifier,
    )?;
    let report = evaluate(&merged, &bench, mode)?;
    std::fs::write(out.join("report.csv"), report.to_csv())?;
    std::fs::write(out.join("confusion.csv"), report.confusion_csv())?;

    // projection export for external plotting: synthesized vs real
    // unseen-class features, raw and PCA-projected to 2 coordinates
    let semantics: Vec<(u32, Tensor)> =
        bench.unseen.iter().map(|s| (s.id, s.semantic.clone())).collect();
    let synth = synthesize_unseen(
        &ckpt.params.generator,
        &semantics,
        &bench.unseen_ids(),
        cfg.train.synth_per_class,
        ckpt.seed.wrapping_add(2),
    )?;
    let variance_ratio = export_projections(&synth, &bench.test_unseen, out)?;

    let mut summary = report.summary();
    summary.push_str(&format!(
        "  PCA projection preserves {:.1}% of feature variance\n",
        100.0 * variance_ratio
    ));
    std::fs::write(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn cmd_ablate(
    config: Option<&Path>,
    data_dir: &Path,
    out: &Path,
    seed: Option<u64>,
    sets: &[String],
) -> Result<()> {
    let mut cfg = FullConfig::load(config)?;
    cfg.apply_overrides(sets, seed)?;
    cfg.train.validate()?;
    let (bench, _) = load_benchmark(data_dir)?;
    std::fs::create_dir_all(out)?;
    let rows = run_ablation(&bench, &cfg.train, &AblationVariant::ALL)?;
    let csv = ablation_csv(&rows);
    std::fs::write(out.join("ablation.csv"), &csv)?;
    println!("variant,zsd,gzsd_s,gzsd_u,gzsd_hm");
    print!("{}", csv.lines().skip(1).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(())
}

pub fn cmd_gradcheck() -> Result<()> {
    let corrupt = std::env::var("REGIONSYNTH_GRADCHECK_CORRUPT").is_ok();
    let entries = crate::gradcheck::run_suite(20, corrupt)?;
    let mut all_pass = true;
    for e in &entries {
        println!(
            "{:<28} max rel err {:>12.3e}  (tol {:.0e})  {}",
            e.name,
            e.max_rel_err,
            e.tolerance,
            if e.passed() { "ok" } else { "FAIL" }
        );
        all_pass &= e.passed();
    }
    if all_pass {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            context: "gradient check failed".into(),
        })
    }
}

// ---------------------------------------------------------------------------
// PCA export
// ---------------------------------------------------------------------------

/// Cyclic Jacobi eigenvalue decomposition of a symmetric matrix.
fn jacobi_eigen(mut a: Vec<Vec<Real>>) -> (Vec<Real>, Vec<Vec<Real>>) {
    let n = a.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p][q] * a[p][q];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues: Vec<Real> = (0..n).map(|i| a[i][i]).collect();
    (eigenvalues, v)
}

/// Write `features_raw.csv` and `features_pca.csv` (label, origin, then
/// coordinates); returns the variance fraction the 2-D projection keeps.
fn export_projections(synth: &FeatureBatch, real: &FeatureBatch, out: &Path) -> Result<Real> {
    let d = synth.d_f();
    if real.d_f() != d {
        return Err(Error::Shape("synthesized and real dims differ".into()));
    }
    let rows: Vec<(&FeatureBatch, &str)> = vec![(synth, "synth"), (real, "real")];

    let mut raw = String::from("label,origin");
    for j in 0..d {
        raw.push_str(&format!(",f{j}"));
    }
    raw.push('\n');
    for (batch, origin) in &rows {
        for i in 0..batch.len() {
            raw.push_str(&format!("{}", batch.labels[i].to_i32()));
            raw.push(',');
            raw.push_str(origin);
            for v in batch.features.row(i) {
                raw.push_str(&format!(",{v}"));
            }
            raw.push('\n');
        }
    }
    std::fs::write(out.join("features_raw.csv"), raw)?;

    // covariance over the pooled features
    let total: usize = rows.iter().map(|(b, _)| b.len()).sum();
    let mut mean = vec![0.0; d];
    for (batch, _) in &rows {
        for i in 0..batch.len() {
            for (j, m) in mean.iter_mut().enumerate() {
                *m += batch.features.row(i)[j];
            }
        }
    }
    for m in &mut mean {
        *m /= total as Real;
    }
    let mut cov = vec![vec![0.0; d]; d];
    for (batch, _) in &rows {
        for i in 0..batch.len() {
            let row = batch.features.row(i);
            for p in 0..d {
                let dp = row[p] - mean[p];
                for q in p..d {
                    cov[p][q] += dp * (row[q] - mean[q]);
                }
            }
        }
    }
    for p in 0..d {
        for q in 0..p {
            cov[p][q] = cov[q][p];
        }
        for q in p..d {
            cov[p][q] /= (total - 1).max(1) as Real;
            cov[q][p] = cov[p][q];
        }
    }

    let (eigenvalues, vectors) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eigenvalues[j].partial_cmp(&eigenvalues[i]).unwrap());
    let (e0, e1) = (order[0], order[1]);
    let total_var: Real = eigenvalues.iter().map(|&l| l.max(0.0)).sum();
    let kept = (eigenvalues[e0].max(0.0) + eigenvalues[e1].max(0.0)) / total_var.max(1e-30);

    let mut pca = String::from("label,origin,p0,p1\n");
    for (batch, origin) in &rows {
        for i in 0..batch.len() {
            let row = batch.features.row(i);
            let mut p0 = 0.0;
            let mut p1 = 0.0;
            for j in 0..d {
                let c = row[j] - mean[j];
                p0 += c * vectors[j][e0];
                p1 += c * vectors[j][e1];
            }
            pca.push_str(&format!("{},{origin},{p0},{p1}\n", batch.labels[i].to_i32()));
        }
    }
    std::fs::write(out.join("features_pca.csv"), pca)?;
    Ok(kept)
}

/// Entry point used by the binary. Errors map to exit codes.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, seed, out, set } => {
            cmd_gen_data(config.as_deref(), seed, &out, &set)
        }
        Command::Train { config, data, out, seed, set, ablation } => {
            cmd_train(config.as_deref(), &data, &out, seed, &set, ablation)
        }
        Command::Eval { checkpoint, data, out, mode, config, set } => {
            cmd_eval(&checkpoint, &data, &out, &mode, config.as_deref(), &set)
        }
        Command::Ablate { config, data, out, seed, set } => {
            cmd_ablate(config.as_deref(), &data, &out, seed, &set)
        }
        Command::Gradcheck {} => cmd_gradcheck(),
    }
}

#[cfg(all(test, not(feature = "f32")))]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let mut cfg = FullConfig::default();
        let err = cfg.set_key("data.bogus", "1").unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let err = cfg.set_key("nonsense", "1").unwrap_err();
        assert!(err.to_string().contains("nonsense"));
    }

    #[test]
    fn overrides_apply_after_file() {
        let mut cfg = FullConfig::default();
        cfg.apply_overrides(&["train.epochs=3".into(), "loss.tau=0.2".into()], Some(9))
            .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.weights.temperature, 0.2);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.data.seed, 9);
    }

    #[test]
    fn jacobi_recovers_diagonal() {
        let a = vec![vec![3.0, 0.0], vec![0.0, 1.0]];
        let (vals, _) = jacobi_eigen(a);
        let mut sorted = vals.clone();
        sorted.sort_by(|x, y| y.partial_cmp(x).unwrap());
        assert!((sorted[0] - 3.0).abs() < 1e-12);
        assert!((sorted[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_matches_known_eigenvalues() {
        // [[2,1],[1,2]] has eigenvalues 3 and 1
        let a = vec![vec![2.0, 1.0], vec![1.0, 2.0]];
        let (vals, vecs) = jacobi_eigen(a.clone());
        let mut order: Vec<usize> = vec![0, 1];
        order.sort_by(|&i, &j| vals[j].partial_cmp(&vals[i]).unwrap());
        assert!((vals[order[0]] - 3.0).abs() < 1e-10);
        assert!((vals[order[1]] - 1.0).abs() < 1e-10);
        // eigenvector for 3 is (1,1)/sqrt(2) up to sign
        let v = [vecs[0][order[0]], vecs[1][order[0]]];
        assert!((v[0].abs() - (0.5 as Real).sqrt()).abs() < 1e-8);
        assert!((v[0] - v[1]).abs() < 1e-8 || (v[0] + v[1]).abs() < 1e-8);
    }
}
