//! Trains one model per grid row and tabulates the resulting metrics.

use std::fmt::Write as _;
use std::time::Instant;

use log::{info, warn};
use serde::Serialize;

use crate::config::{Config, Overrides, TaskMode};
use crate::corpus::Dataset;
use crate::error::Result;
use crate::inference::StepOptions;
use crate::metrics::{evaluate_model, EvalReport};
use crate::trainer::train;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub mode: TaskMode,
    pub epochs: usize,
    pub seconds: f64,
    pub joint: Option<f64>,
    pub slot: Option<f64>,
    pub inform: Option<f64>,
    pub success: Option<f64>,
    pub bleu: Option<f64>,
    pub act_exact_match: Option<f64>,
    /// Set when the row could not be trained or scored.
    pub error: Option<String>,
}

/// Where and how each trained model is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationEval<'a> {
    pub split: &'a str,
    /// Decode responses; without them only tracker and act metrics appear.
    pub respond: bool,
}

impl Default for AblationEval<'_> {
    fn default() -> Self {
        Self { split: "test", respond: true }
    }
}

fn run_one(ds: &Dataset, config: &Config, eval: AblationEval<'_>) -> Result<(EvalReport, usize)> {
    let outcome = train(ds, config, &mut |_, _| Ok(true))?;
    let dialogues = ds.corpus.split(eval.split)?;
    let opts = StepOptions {
        respond: eval.respond,
        ..Default::default()
    };
    let (report, _) = evaluate_model(&outcome.model, &ds.kb, dialogues, config.train.mode, opts)?;
    Ok((report, outcome.log.len()))
}

/// Trains every row of `grid` on top of `base`. A failing row is recorded
/// with its error and does not stop the others.
pub fn run_ablation(ds: &Dataset, base: &Config, grid: &[(String, Overrides)], eval: AblationEval<'_>) -> Vec<AblationRow> {
    let mut rows = Vec::with_capacity(grid.len());
    for (name, o) in grid {
        let started = Instant::now();
        let mut row = AblationRow {
            name: name.clone(),
            mode: o.mode.unwrap_or(base.train.mode),
            epochs: 0,
            seconds: 0.0,
            joint: None,
            slot: None,
            inform: None,
            success: None,
            bleu: None,
            act_exact_match: None,
            error: None,
        };
        let result = o.apply(base).and_then(|mut c| {
            c.paths.checkpoint = None;
            c.paths.output = None;
            run_one(ds, &c, eval)
        });
        match result {
            Ok((r, epochs)) => {
                row.epochs = epochs;
                row.joint = r.overall.joint;
                row.slot = r.overall.slot;
                row.inform = r.overall.inform;
                row.success = r.overall.success;
                row.bleu = r.overall.bleu;
                row.act_exact_match = r.act_exact_match;
            }
            Err(e) => {
                warn!("ablation row {name} failed: {e}");
                row.error = Some(e.to_string());
            }
        }
        row.seconds = started.elapsed().as_secs_f64();
        info!("ablation row {name} done in {:.1}s", row.seconds);
        rows.push(row);
    }
    rows
}

pub const TABLE_HEADER: &str = "name\tmode\tepochs\tjoint\tslot\tinform\tsuccess\tbleu\tact_em\tseconds\terror";

/// Tab-delimited table: a header line, then one line per row.
pub fn table(rows: &[AblationRow]) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut out = format!("{TABLE_HEADER}\n");
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace(['\t', '\n'], " ");
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.1}\t{err}",
            r.name,
            r.mode,
            r.epochs,
            f(r.joint),
            f(r.slot),
            f(r.inform),
            f(r.success),
            f(r.bleu),
            f(r.act_exact_match),
            r.seconds
        );
    }
    out
}
