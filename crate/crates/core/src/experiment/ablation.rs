//! Ablation variants of a base configuration, swept over seeds.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::run::{run_prepared, PreparedData};
use super::RunConfig;
use crate::error::{Error, Result};
use crate::losses::ContrastiveMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Contrastive term dropped; heads trained on mixed inputs with mixed one-hot targets.
    VanillaMixup,
    NoUnimodal,
    OnlyMultisclip,
    OnlyM3co,
    /// Scheduled mixup loss then soft-alignment loss, with unimodal supervision.
    Full,
    /// Concatenation fusion trained with cross-entropy alone.
    ConcatBaseline,
}

impl Variant {
    /// The five ablation rows, weakest first.
    pub const ABLATIONS: [Variant; 5] = [
        Variant::VanillaMixup,
        Variant::NoUnimodal,
        Variant::OnlyMultisclip,
        Variant::OnlyM3co,
        Variant::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::VanillaMixup => "vanilla-mixup",
            Variant::NoUnimodal => "no-unimodal",
            Variant::OnlyMultisclip => "only-multisclip",
            Variant::OnlyM3co => "only-m3co",
            Variant::Full => "full",
            Variant::ConcatBaseline => "concat-baseline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ABLATIONS
            .into_iter()
            .chain([Variant::ConcatBaseline])
            .find(|v| v.as_str() == s)
    }

    /// `base` with this variant's objective switches.
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        let (mode, unimodal, label_mixup) = match self {
            Variant::Full => (ContrastiveMode::Scheduled, true, false),
            Variant::OnlyM3co => (ContrastiveMode::OnlyM3co, true, false),
            Variant::OnlyMultisclip => (ContrastiveMode::OnlyMultisclip, true, false),
            Variant::NoUnimodal => (ContrastiveMode::Scheduled, false, false),
            Variant::VanillaMixup => (ContrastiveMode::None, true, true),
            Variant::ConcatBaseline => (ContrastiveMode::None, false, false),
        };
        c.contrastive.mode = mode;
        c.objective.unimodal_supervision = unimodal;
        c.objective.label_mixup = label_mixup;
        c
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub acc: f64,
    pub f1_binary: Option<f64>,
    pub auc: Option<f64>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub runs: Vec<SeedResult>,
    pub acc: MeanStd,
    pub f1_binary: Option<MeanStd>,
    pub auc: Option<MeanStd>,
    pub macro_f1: MeanStd,
    pub weighted_f1: MeanStd,
    /// Reference accuracy in percent, when the config lists one.
    pub reference_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub name: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// Plain-text table with metrics in percent.
    pub fn to_text(&self) -> String {
        let pct = |m: Option<MeanStd>| {
            m.map_or("-".to_string(), |m| format!("{:.2} ± {:.2}", 100.0 * m.mean, 100.0 * m.std))
        };
        let mut out = format!(
            "{:<16} {:>15} {:>15} {:>15} {:>15} {:>15} {:>9}\n",
            "variant", "acc", "f1", "auc", "macro_f1", "weighted_f1", "ref_acc"
        );
        for r in &self.rows {
            let reference = r.reference_acc.map_or("-".into(), |v| format!("{v:.2}"));
            let _ = writeln!(
                out,
                "{:<16} {:>15} {:>15} {:>15} {:>15} {:>15} {:>9}",
                r.variant.as_str(),
                pct(Some(r.acc)),
                pct(r.f1_binary),
                pct(r.auc),
                pct(Some(r.macro_f1)),
                pct(Some(r.weighted_f1)),
                reference
            );
        }
        out
    }
}

fn summarize(variant: Variant, runs: Vec<SeedResult>, base: &RunConfig) -> AblationRow {
    let col = |f: &dyn Fn(&SeedResult) -> Option<f64>| -> Option<MeanStd> {
        let v: Option<Vec<f64>> = runs.iter().map(f).collect();
        v.and_then(|v| MeanStd::of(&v))
    };
    AblationRow {
        variant,
        acc: col(&|r| Some(r.acc)).expect("at least one seed"),
        f1_binary: col(&|r| r.f1_binary),
        auc: col(&|r| r.auc),
        macro_f1: col(&|r| Some(r.macro_f1)).expect("at least one seed"),
        weighted_f1: col(&|r| Some(r.weighted_f1)).expect("at least one seed"),
        reference_acc: base.reference.ablation_acc.get(variant.as_str()).copied(),
        runs,
    }
}

/// Trains every `variant` of `base` once per seed on data prepared once.
///
/// Jobs run on up to `threads` worker threads; results do not depend on the count.
pub fn run_variants(
    base: &RunConfig,
    variants: &[Variant],
    seeds: &[u64],
    threads: usize,
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let data = PreparedData::from_config(base)?;
    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results: Mutex<Vec<Option<Result<SeedResult>>>> =
        Mutex::new(jobs.iter().map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, jobs.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(v, seed)) = jobs.get(k) else { break };
                let mut config = variants[v].apply(base);
                config.seed = seed;
                let outcome = run_prepared(&config, &data).map(|o| {
                    let m = &o.report.test.fused;
                    SeedResult {
                        seed,
                        acc: m.acc,
                        f1_binary: m.f1_binary,
                        auc: m.auc,
                        macro_f1: m.macro_f1,
                        weighted_f1: m.weighted_f1,
                    }
                });
                results.lock().expect("no panics while locked")[k] = Some(outcome);
            });
        }
    });
    let mut results = results.into_inner().expect("no panics while locked").into_iter();
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let runs = results
            .by_ref()
            .take(seeds.len())
            .map(|r| r.expect("every job ran"))
            .collect::<Result<Vec<_>>>()?;
        rows.push(summarize(variant, runs, base));
    }
    Ok(AblationTable { name: base.name.clone(), seeds: seeds.to_vec(), rows })
}
