use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lorma_core::adapters::{
    delta_w, init_adapter, save_adapter, AdapterConfig, AdapterState, AdapterVariant, MultiplySide,
};
use lorma_core::analysis::{compare_updates, Comparison};
use lorma_core::gradients::{grad_check, GradCheckReport, GRAD_CHECK_MAX_DIM};
use lorma_core::linalg::io::{read_snapshot, write_snapshot};
use lorma_core::rng::{derive_seed, RngState};
use lorma_core::theory::{run_claims, ClaimResult};
use lorma_core::trainer::{dataset_loss, loss_auc, auc_reduction, make_task, train, TargetKind, TaskKind};
use lorma_core::Matrix;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// Tolerance for `gradcheck` and the acceptance gradient criterion.
pub const GRADCHECK_TOL: f64 = 1e-4;

const ADAPTER_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub variant: AdapterVariant,
    pub seed: u64,
    pub steps: usize,
    pub final_loss: f64,
    pub auc: f64,
    pub final_rank_inflated: usize,
    pub final_rank_delta: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: AdapterVariant,
    pub mean_final_loss: f64,
    pub mean_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub run_hash: String,
    pub runs: Vec<RunRecord>,
    pub variants: Vec<VariantSummary>,
}

impl ExperimentSummary {
    pub fn variant(&self, v: AdapterVariant) -> Option<&VariantSummary> {
        self.variants.iter().find(|s| s.variant == v)
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("summary serializes") + "\n"
}

pub fn run_dir(out: &Path, variant: AdapterVariant, seed: u64) -> PathBuf {
    out.join(variant.name()).join(format!("seed_{seed}"))
}

/// Execute every (seed, variant) run of `cfg` sequentially, writing results
/// under `out`. Returns the summary and the elapsed wall time, which is kept
/// out of the written files so reruns are byte-identical.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<(ExperimentSummary, f64)> {
    let start = Instant::now();
    cfg.validate()?;
    create_dir(out)?;
    let canonical: serde_json::Value =
        serde_json::from_str(&cfg.canonical_json()).expect("canonical json parses");
    write_file(&out.join("config.json"), to_json(&canonical))?;

    let sched = cfg.lr_schedule();
    let mut runs = Vec::new();
    for seed in cfg.seeds() {
        let task = make_task(&cfg.task, seed).map_err(|e| CliError::core("make_task", e))?;
        for &variant in &cfg.adapter.variants {
            let ctx = format!("{} seed {seed}", variant.name());
            let acfg = AdapterConfig::new(
                variant,
                cfg.adapter.side,
                cfg.adapter.r,
                cfg.adapter.alpha(),
                derive_seed(seed, ADAPTER_STREAM),
            );
            let mut state =
                init_adapter(&task.w0, &acfg).map_err(|e| CliError::core(ctx.clone(), e))?;
            let log = train(
                &mut state,
                &task,
                &cfg.optimizer,
                &sched,
                cfg.epochs,
                cfg.batch,
                derive_seed(seed, SHUFFLE_STREAM),
            )
            .map_err(|e| CliError::core(ctx.clone(), e))?;
            let core = |e| CliError::core(ctx.clone(), e);
            let record = RunRecord {
                variant,
                seed,
                steps: log.step_losses.len(),
                final_loss: dataset_loss(&state, &task).map_err(core)?,
                auc: loss_auc(&log.step_losses).map_err(core)?,
                final_rank_inflated: *log.epoch_rank_trace.last().expect("epochs > 0"),
                final_rank_delta: *log.epoch_delta_rank.last().expect("epochs > 0"),
            };
            let dir = run_dir(out, variant, seed);
            create_dir(&dir)?;
            write_file(&dir.join("loss.csv"), log.loss_csv())?;
            write_file(&dir.join("rank.csv"), log.rank_csv())?;
            write_file(&dir.join("summary.json"), to_json(&record))?;
            save_adapter(&state, dir.join("adapter")).map_err(core)?;
            write_snapshot(&delta_w(&state).map_err(core)?, dir.join("delta_w.lrma")).map_err(core)?;
            log::info!("{ctx}: final loss {:.3e} in {:.2}s", record.final_loss, log.wall_seconds);
            runs.push(record);
        }
    }

    let variants = cfg
        .adapter
        .variants
        .iter()
        .map(|&v| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.variant == v).collect();
            let n = mine.len() as f64;
            VariantSummary {
                variant: v,
                mean_final_loss: mine.iter().map(|r| r.final_loss).sum::<f64>() / n,
                mean_auc: mine.iter().map(|r| r.auc).sum::<f64>() / n,
            }
        })
        .collect::<Vec<_>>();
    let summary = ExperimentSummary {
        run_hash: cfg.run_hash(),
        runs,
        variants,
    };
    write_file(&out.join("summary.json"), to_json(&summary))?;
    let aucs: Vec<(AdapterVariant, f64)> =
        summary.variants.iter().map(|v| (v.variant, v.mean_auc)).collect();
    write_file(&out.join("convergence.csv"), convergence_csv(&task_label(cfg), &aucs)?)?;
    Ok((summary, start.elapsed().as_secs_f64()))
}

pub fn task_label(cfg: &ExperimentConfig) -> String {
    let kind = match cfg.task.kind {
        TaskKind::TargetRecovery => "target_recovery",
        TaskKind::TinyAttention => "tiny_attention",
    };
    let target = match cfg.task.target {
        TargetKind::LowRankDelta { .. } => "low_rank_delta",
        TargetKind::DenseRandom => "dense_random",
        TargetKind::PermutedScaled { .. } => "permuted_scaled",
    };
    format!("{kind}/{target}")
}

/// One-row table: mean loss AUC per variant, then the percentage AUC
/// decrease of each non-LoRA variant relative to LoRA (when LoRA ran).
pub fn convergence_csv(task: &str, aucs: &[(AdapterVariant, f64)]) -> Result<String> {
    let lora = aucs.iter().find(|(v, _)| *v == AdapterVariant::Lora).map(|&(_, a)| a);
    let mut header = vec!["task".to_string()];
    let mut row = vec![task.to_string()];
    for (v, a) in aucs {
        header.push(format!("auc_{}", v.name()));
        row.push(format!("{a:?}"));
    }
    if let Some(base) = lora {
        for (v, a) in aucs.iter().filter(|(v, _)| *v != AdapterVariant::Lora) {
            header.push(format!("auc_reduction_pct_{}", v.name()));
            let pct = auc_reduction(*a, base).map_err(|e| CliError::core("convergence", e))?;
            row.push(format!("{pct:?}"));
        }
    }
    Ok(format!("{}\n{}\n", header.join(","), row.join(",")))
}

/// Run several configs, `jobs` at a time. Results come back in input order.
pub fn run_many(
    configs: &[PathBuf],
    out_override: Option<&Path>,
    jobs: usize,
) -> Vec<Result<(PathBuf, ExperimentSummary, f64)>> {
    let one = |path: &PathBuf| -> Result<(PathBuf, ExperimentSummary, f64)> {
        let cfg = ExperimentConfig::load(path)?;
        let out = match out_override {
            Some(o) if configs.len() > 1 => {
                o.join(path.file_stem().map(PathBuf::from).unwrap_or_default())
            }
            Some(o) => o.to_path_buf(),
            None => cfg.output_dir.clone(),
        };
        let (summary, secs) = run_experiment(&cfg, &out)?;
        Ok((out, summary, secs))
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build();
    match pool {
        Ok(pool) => pool.install(|| {
            use rayon::prelude::*;
            configs.par_iter().map(one).collect()
        }),
        Err(_) => configs.iter().map(one).collect(),
    }
}

/// Random `d×k` instance with perturbed factors, input and target, all
/// fixed by `seed`.
pub fn gradcheck_instance(
    variant: AdapterVariant,
    side: MultiplySide,
    d: usize,
    k: usize,
    r: usize,
    batch: usize,
    seed: u64,
) -> Result<(AdapterState, Matrix, Matrix)> {
    if d == 0 || k == 0 || r == 0 || batch == 0 {
        return Err(CliError::Usage(format!(
            "dimensions must be positive (d={d}, k={k}, r={r}, batch={batch})"
        )));
    }
    let largest = d.max(k).max(batch);
    if largest > GRAD_CHECK_MAX_DIM {
        return Err(CliError::Usage(format!(
            "dimensions must be <= {GRAD_CHECK_MAX_DIM}, got {largest}"
        )));
    }
    let mut rng = RngState::new(seed);
    let w0 = rng.gaussian_matrix(d, k, 1.0 / (k as f64).sqrt());
    let cfg = AdapterConfig::new(variant, side, r, r as f64, derive_seed(seed, ADAPTER_STREAM));
    let core = |e| CliError::core("gradcheck", e);
    let init = init_adapter(&w0, &cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    // Move away from the initialization so that no factor is exactly zero.
    let b = init.b().add(&rng.gaussian_matrix(init.b().rows(), init.b().cols(), 0.1)).map_err(core)?;
    let a = init.a().add(&rng.gaussian_matrix(init.a().rows(), init.a().cols(), 0.1)).map_err(core)?;
    let state = init.with_factors(b, a).map_err(core)?;
    let x = rng.gaussian_matrix(k, batch, 1.0);
    let target = rng.gaussian_matrix(d, batch, 1.0);
    Ok((state, x, target))
}

pub fn gradcheck(
    variant: AdapterVariant,
    side: MultiplySide,
    d: usize,
    k: usize,
    r: usize,
    batch: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let (state, x, target) = gradcheck_instance(variant, side, d, k, r, batch, seed)?;
    grad_check(&state, &x, &target).map_err(|e| CliError::core("gradcheck", e))
}

pub fn format_gradcheck(variant: AdapterVariant, rep: &GradCheckReport) -> String {
    format!(
        "{}: max relative error {:.3e} at {}[{},{}] (analytic {:.6e}, numeric {:.6e}), {} coordinates",
        variant.name(),
        rep.max_rel_error,
        rep.param,
        rep.row,
        rep.col,
        rep.analytic,
        rep.numeric,
        rep.checked
    )
}

pub fn analyze(reference: &Path, test: &Path, r: usize, seed: u64) -> Result<Comparison> {
    let load = |p: &Path| read_snapshot(p).map_err(|e| CliError::core(p.display().to_string(), e));
    let (a, b) = (load(reference)?, load(test)?);
    if r == 0 {
        return Err(CliError::Usage("r must be positive".into()));
    }
    compare_updates(&a, &b, r, seed).map_err(|e| CliError::core("analyze", e))
}

pub fn theory(seed: u64) -> Result<Vec<ClaimResult>> {
    run_claims(seed).map_err(|e| CliError::core("theory", e))
}

pub fn format_claims(claims: &[ClaimResult]) -> String {
    let width = claims.iter().map(|c| c.claim.len()).max().unwrap_or(0);
    let mut out = String::new();
    for c in claims {
        let status = if c.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{status}  {:width$}  {}", c.claim, c.detail);
    }
    out
}

fn read_losses(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let parse_err = |line: usize, detail: String| CliError::Parse {
        path: path.to_path_buf(),
        detail: format!("line {line}: {detail}"),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let value = line
            .split_once(',')
            .ok_or_else(|| parse_err(i + 1, "expected step,loss".into()))?
            .1;
        out.push(value.parse().map_err(|e| parse_err(i + 1, format!("{e}")))?);
    }
    Ok(out)
}

/// Rebuild the convergence table of a finished run directory from its
/// `loss.csv` files.
pub fn report(out: &Path) -> Result<String> {
    let cfg_path = out.join("config.json");
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| CliError::io(&cfg_path, e))?;
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: cfg_path.clone(),
        detail: e.to_string(),
    })?;
    value["output_dir"] = serde_json::Value::String(out.display().to_string());
    let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| CliError::Parse {
        path: cfg_path.clone(),
        detail: e.to_string(),
    })?;
    let mut aucs = Vec::new();
    for &v in &cfg.adapter.variants {
        let mut per_seed = BTreeMap::new();
        for seed in cfg.seeds() {
            let losses = read_losses(&run_dir(out, v, seed).join("loss.csv"))?;
            let auc = loss_auc(&losses).map_err(|e| CliError::core("report", e))?;
            per_seed.insert(seed, auc);
        }
        aucs.push((v, per_seed.values().sum::<f64>() / per_seed.len() as f64));
    }
    convergence_csv(&task_label(&cfg), &aucs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convergence_table_layout() {
        let t = convergence_csv(
            "t",
            &[
                (AdapterVariant::Lora, 2.0),
                (AdapterVariant::LormaPlus, 1.5),
                (AdapterVariant::LormaPi, 1.0),
            ],
        )
        .unwrap();
        assert_eq!(
            t,
            "task,auc_lora,auc_lorma_plus,auc_lorma_pi,auc_reduction_pct_lorma_plus,auc_reduction_pct_lorma_pi\n\
             t,2.0,1.5,1.0,25.0,50.0\n"
        );
    }

    #[test]
    fn convergence_without_lora_has_no_reduction_columns() {
        let t = convergence_csv("t", &[(AdapterVariant::LormaNaive, 3.0)]).unwrap();
        assert_eq!(t, "task,auc_lorma_naive\nt,3.0\n");
    }

    #[test]
    fn gradcheck_rejects_bad_dims() {
        let bad = gradcheck(AdapterVariant::Lora, MultiplySide::Pre, 0, 4, 2, 3, 0).unwrap_err();
        assert_eq!(bad.exit_code(), 2);
        let big = gradcheck(AdapterVariant::Lora, MultiplySide::Pre, 65, 4, 2, 3, 0).unwrap_err();
        assert_eq!(big.exit_code(), 2);
    }

    #[test]
    fn gradcheck_passes_for_all_variants() {
        for v in AdapterVariant::ALL {
            let rep = gradcheck(v, MultiplySide::Pre, 8, 8, 2, 3, 1).unwrap();
            assert!(rep.passes(GRADCHECK_TOL), "{}", format_gradcheck(v, &rep));
        }
    }
}
