use std::fmt::Write as _;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::{Schedule, TrainConfig};
use super::eval::evaluate_with;
use super::run::{train_tps, TrainData};
use crate::data::{split_cases, VolumeRecord};
use crate::error::{data, Result};
use crate::mesh_cast::MeshCastMode;
use crate::metrics::EvalReport;
use crate::seq::{SeqConfig, SeqKind};
use crate::targets::Regions;

/// How a cell feeds slices to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    /// Single slices (`T = 1`), ordered.
    Slices,
    Ordered,
    Tps,
}

impl InputMode {
    pub fn name(self) -> &'static str {
        match self {
            InputMode::Slices => "Slices",
            InputMode::Ordered => "Ordered",
            InputMode::Tps => "TPS",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationCell {
    pub seq: SeqKind,
    pub input: InputMode,
    pub mesh: MeshCastMode,
}

impl AblationCell {
    pub fn label(&self) -> String {
        let net = match self.mesh {
            MeshCastMode::Off => "Backbone".to_string(),
            m => format!("M-Net ({})", m.name().to_uppercase()),
        };
        format!("{} {net} ({})", self.seq.name(), self.input.name())
    }

    /// The configuration this cell trains with.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.model.seq = SeqConfig {
            kind: self.seq,
            ..base.model.seq.clone()
        };
        cfg.model.mesh = self.mesh;
        match self.input {
            InputMode::Slices => {
                cfg.model.frames = 1;
                cfg.with_schedule(Schedule::Ordered)
            }
            InputMode::Ordered => cfg.with_schedule(Schedule::Ordered),
            InputMode::Tps => cfg,
        }
    }
}

/// `{every kind} × {slices, TPS} × {T, T+C}`.
pub fn default_grid() -> Vec<AblationCell> {
    let mut cells = Vec::new();
    for seq in SeqKind::ALL {
        for input in [InputMode::Slices, InputMode::Tps] {
            for mesh in [MeshCastMode::Temporal, MeshCastMode::TemporalChannel] {
                cells.push(AblationCell { seq, input, mesh });
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub seed: u64,
    pub test_cases: Vec<String>,
    pub dice: Regions<f64>,
    pub hd95: Regions<Option<f64>>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Markdown table: one row per cell and seed, Dice and HD95 per region.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Method | Seed | WT Dice | TC Dice | ET Dice | WT HD95 | TC HD95 | ET HD95 |\n");
        s.push_str("|---|---|---|---|---|---|---|---|\n");
        let hd = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "n/a".into());
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {:.2} | {:.2} | {:.2} | {} | {} | {} |",
                r.cell.label(),
                r.seed,
                100.0 * r.dice.wt,
                100.0 * r.dice.tc,
                100.0 * r.dice.et,
                hd(r.hd95.wt),
                hd(r.hd95.tc),
                hd(r.hd95.et)
            );
        }
        s
    }

    /// Median held-out WT Dice of `cell` across its seeds.
    pub fn median_wt_dice(&self, cell: &AblationCell) -> Option<f64> {
        let mut v: Vec<f64> = self.rows.iter().filter(|r| &r.cell == cell).map(|r| r.dice.wt).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
    }
}

/// Trains and tests every cell for every seed. The case split is drawn once
/// from `base.seed`, so all cells see the same test cases; each seed sets the
/// model initialization and the frame shuffle.
pub fn ablate(base: &TrainConfig, cells: &[AblationCell], cases: &[VolumeRecord], seeds: &[u64]) -> Result<AblationTable> {
    if cells.is_empty() || seeds.is_empty() {
        return Err(data("ablation needs at least one cell and one seed"));
    }
    let ids: Vec<String> = cases.iter().map(|c| c.case_id.clone()).collect();
    let split = split_cases(&ids, base.seed)?;
    let pick = |names: &[String]| -> Vec<VolumeRecord> {
        cases.iter().filter(|c| names.contains(&c.case_id)).cloned().collect()
    };
    let data_ = TrainData {
        train: pick(&split.train),
        val: pick(&split.val),
    };
    let test = pick(&split.test);
    let mut rows = Vec::new();
    for cell in cells {
        for &seed in seeds {
            let mut cfg = cell.apply(base);
            cfg.seed = seed;
            info!("ablation cell {} seed {seed}", cell.label());
            let out = train_tps::<f32>(&cfg, &data_, None)?;
            let report = evaluate_with(&out.model, &test, cfg.dice_mode)?;
            rows.push(AblationRow {
                cell: *cell,
                seed,
                test_cases: split.test.clone(),
                dice: report.mean_dice,
                hd95: report.mean_hd95,
                report,
            });
        }
    }
    Ok(AblationTable { rows })
}
