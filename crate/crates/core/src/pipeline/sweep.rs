use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::eval::{evaluate_both, EvalReport};
use super::train::train;
use super::TrainConfig;
use crate::dataio::{expand_orientations, split_by_patient, Volume};
use crate::error::{Error, Result};
use crate::imgops::Modality;

pub const DEFAULT_FRACTIONS: [f64; 5] = [0.6, 0.5, 0.4, 0.3, 0.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub modality: Modality,
    pub train_patients: usize,
    pub test_patients: usize,
    pub direct: EvalReport,
    pub voting: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub cells: Vec<SweepCell>,
}

impl SweepRow {
    pub fn cell(&self, modality: Modality) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.modality == modality)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// One line per fraction: voting accuracies per modality, then direct ones.
    /// Modalities missing from the sweep leave empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction");
        for m in Modality::ALL {
            write!(out, ",voting_{}", m.as_str()).unwrap();
        }
        for m in Modality::ALL {
            write!(out, ",direct_{}", m.as_str()).unwrap();
        }
        out.push('\n');
        for row in &self.rows {
            write!(out, "{:.2}", row.fraction).unwrap();
            for pick in [|c: &SweepCell| c.voting.accuracy, |c: &SweepCell| c.direct.accuracy] {
                for m in Modality::ALL {
                    out.push(',');
                    if let Some(c) = row.cell(m) {
                        write!(out, "{:.4}", pick(c)).unwrap();
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    /// One JSON object per cell, confusion matrices included.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            for cell in &row.cells {
                let line = serde_json::json!({ "fraction": row.fraction, "cell": cell });
                out.push_str(&line.to_string());
                out.push('\n');
            }
        }
        out
    }

    pub fn mean_accuracy(&self, pick: impl Fn(&SweepCell) -> f64) -> f64 {
        let all: Vec<f64> = self.rows.iter().flat_map(|r| r.cells.iter().map(&pick)).collect();
        all.iter().sum::<f64>() / all.len().max(1) as f64
    }
}

fn cell_seed(seed: u64, row: usize, modality: Modality) -> u64 {
    let m = Modality::ALL.iter().position(|&x| x == modality).unwrap() as u64;
    seed.wrapping_mul(1_000_003).wrapping_add(row as u64 * 16 + m)
}

/// For every training fraction and every modality present in `volumes`,
/// splits patients into train and test, trains from scratch and scores both
/// prediction methods on the orientation-expanded test set.
pub fn sensitivity_sweep(
    volumes: &[Volume],
    fractions: &[f64],
    cfg: &TrainConfig,
    on_cell: &mut dyn FnMut(f64, &SweepCell),
) -> Result<SweepTable> {
    if fractions.is_empty() {
        return Err(Error::Argument("no training fractions given".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
        return Err(Error::Range(format!("training fraction {f} not in (0, 1)")));
    }
    let modalities: Vec<Modality> =
        Modality::ALL.into_iter().filter(|m| volumes.iter().any(|v| v.modality() == *m)).collect();
    if modalities.is_empty() {
        return Err(Error::Argument("no volumes to sweep over".into()));
    }

    let mut rows = Vec::with_capacity(fractions.len());
    for (r, &fraction) in fractions.iter().enumerate() {
        let mut cells = Vec::new();
        for &modality in &modalities {
            let vols: Vec<Volume> = volumes.iter().filter(|v| v.modality() == modality).cloned().collect();
            let (train_ds, _, test_ds) = split_by_patient(&vols, [fraction, 0.0, 1.0 - fraction], cfg.seed + r as u64)?;
            let seed = cell_seed(cfg.seed, r, modality);
            let cell_cfg = TrainConfig {
                seed,
                network: crate::nn::NetworkConfig { seed: seed as u32, ..cfg.network },
                checkpoint: None,
                ..cfg.clone()
            };
            let out = train(&expand_orientations(&train_ds)?, None, &cell_cfg)?;
            let (direct, voting) = evaluate_both(&out.network, &expand_orientations(&test_ds)?)?;
            let cell = SweepCell {
                modality,
                train_patients: train_ds.patients().len(),
                test_patients: test_ds.patients().len(),
                direct,
                voting,
            };
            on_cell(fraction, &cell);
            cells.push(cell);
        }
        rows.push(SweepRow { fraction, cells });
    }
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_phantoms, PhantomSpec};
    use crate::nn::NetworkConfig;

    #[test]
    fn tiny_sweep_shapes_and_csv() {
        let mut vols = generate_phantoms(&PhantomSpec::new(3, 1, 16, Modality::C0, 2)).unwrap();
        vols.extend(generate_phantoms(&PhantomSpec::new(3, 1, 16, Modality::T2, 2)).unwrap());
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            network: NetworkConfig { input_size: 16, conv_channels: [2, 2, 2], hidden_units: 4, ..Default::default() },
            ..Default::default()
        };
        let mut seen = 0;
        let table = sensitivity_sweep(&vols, &[0.6, 0.3], &cfg, &mut |_, _| seen += 1).unwrap();
        assert_eq!(seen, 4);
        assert_eq!(table.rows.len(), 2);
        let row = &table.rows[0];
        assert_eq!(row.cells.len(), 2);
        let c0 = row.cell(Modality::C0).unwrap();
        assert_eq!(c0.train_patients + c0.test_patients, 3);
        assert_eq!(c0.direct.total, c0.test_patients * 8);
        let csv = table.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "fraction,voting_C0,voting_LGE,voting_T2,direct_C0,direct_LGE,direct_T2");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0.60,"));
        assert_eq!(lines[1].split(',').nth(2), Some(""));
        assert_eq!(table.to_jsonl().lines().count(), 4);
        // same config, same table
        assert_eq!(sensitivity_sweep(&vols, &[0.6, 0.3], &cfg, &mut |_, _| {}).unwrap(), table);
    }

    #[test]
    fn rejects_bad_fractions() {
        let vols = generate_phantoms(&PhantomSpec::new(3, 1, 16, Modality::C0, 2)).unwrap();
        let cfg = TrainConfig::default();
        assert!(sensitivity_sweep(&vols, &[1.0], &cfg, &mut |_, _| {}).is_err());
        assert!(sensitivity_sweep(&vols, &[], &cfg, &mut |_, _| {}).is_err());
    }
}
