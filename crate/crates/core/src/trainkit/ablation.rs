//! Evaluation on held-out pairs and the four-variant ablation table.

use super::train::{train, StepRecord, TrainConfig};
use crate::data::ImagePair;
use crate::metrics::{mean_scores, MetricRecord};
use crate::model::{Ablation, ECFNet, ModelConfig};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Per-image PSNR and SSIM of the clamped model output.
pub fn evaluate(model: &ECFNet<f32>, pairs: &[ImagePair], config_hash: &str) -> Result<Vec<MetricRecord>> {
    pairs
        .iter()
        .map(|p| {
            let pred = model.forward(&p.lr, &p.reference)?;
            MetricRecord::evaluate(format!("seed{}", p.seed), p.scale, config_hash, &pred.sr, &p.hr)
        })
        .collect()
}

/// The ablation grid in table order: each single switch off, then the full model.
pub fn ablation_variants() -> [(&'static str, Ablation); 4] {
    let full = Ablation::FULL;
    [
        ("w/o multi-scale feature alignment", Ablation { use_cffm_alignment: false, ..full }),
        ("w/o texture transfer", Ablation { use_ttm: false, ..full }),
        ("w/o structure branch", Ablation { use_structure_branch: false, ..full }),
        ("full", full),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub ablation: Ablation,
    pub psnr_db: f64,
    pub ssim: f64,
    pub final_loss: f64,
    pub records: Vec<MetricRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config_hash: String,
    pub rows: Vec<AblationRow>,
}

/// Trains every variant with the same seed and budget and scores it on `held_out`.
pub fn run_ablation(
    train_set: &[ImagePair],
    held_out: &[ImagePair],
    base: &ModelConfig,
    config: &TrainConfig,
    config_hash: &str,
) -> Result<AblationReport> {
    if train_set.is_empty() || held_out.is_empty() {
        return Err(Error::Config("ablation needs non-empty training and held-out sets".into()));
    }
    let mut rows = Vec::new();
    for (name, ablation) in ablation_variants() {
        let cfg = ModelConfig { ablation, ..base.clone() };
        let (model, curve): (_, Vec<StepRecord>) = train(cfg, train_set, config)?;
        let records = evaluate(&model, held_out, config_hash)?;
        let (psnr_db, ssim) = mean_scores(&records);
        let final_loss = curve.last().map_or(f64::NAN, |r| r.loss);
        rows.push(AblationRow { variant: name.to_string(), ablation, psnr_db, ssim, final_loss, records });
    }
    Ok(AblationReport { config_hash: config_hash.to_string(), rows })
}

fn mark(on: bool) -> &'static str {
    if on { "✓" } else { "×" }
}

impl AblationReport {
    /// Markdown table: variant, module flags, PSNR, SSIM.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| variant | alignment | texture transfer | structure | PSNR (dB) | SSIM |\n|---|:-:|:-:|:-:|--:|--:|\n");
        for r in &self.rows {
            let a = r.ablation;
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {:.3} | {:.4} |",
                r.variant,
                mark(a.use_cffm_alignment),
                mark(a.use_ttm),
                mark(a.use_structure_branch),
                r.psnr_db,
                r.ssim
            );
        }
        s
    }

    /// Whether the full model has the best PSNR. Reported, not required.
    pub fn full_is_best(&self) -> bool {
        let full = self.rows.iter().find(|r| r.ablation == Ablation::FULL).map_or(f64::NEG_INFINITY, |r| r.psnr_db);
        self.rows.iter().all(|r| r.psnr_db <= full)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let md = dir.join("ablation.md");
        std::fs::write(&md, self.to_markdown()).map_err(|e| Error::io(&md, e))?;
        let json = dir.join("ablation.json");
        std::fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_dataset, PhantomSpec};

    #[test]
    fn grid_switches_one_module_at_a_time() {
        let v = ablation_variants();
        assert_eq!(v.len(), 4);
        assert_eq!(v[3].1, Ablation::FULL);
        for (_, a) in &v[..3] {
            let off = [a.use_cffm_alignment, a.use_ttm, a.use_structure_branch].iter().filter(|on| !**on).count();
            assert_eq!(off, 1);
        }
    }

    #[test]
    fn variants_share_initialisation_of_common_modules() {
        let base = ModelConfig { stages: 2, base_channels: 4, residual_blocks: 1, attention_heads: 1, ..ModelConfig::default() };
        let nets: Vec<ECFNet<f32>> = ablation_variants().iter().map(|(_, a)| ECFNet::new(ModelConfig { ablation: *a, ..base.clone() }, 3).unwrap()).collect();
        let full = &nets[3].params;
        for net in &nets[..3] {
            for (name, t) in net.params.iter() {
                if let Some(u) = full.by_name(name) {
                    assert_eq!(t.data(), u.data(), "{name}");
                }
            }
        }
    }

    #[test]
    fn report_is_deterministic_and_flags_modules() {
        let base = ModelConfig { stages: 2, base_channels: 4, residual_blocks: 1, attention_heads: 1, ..ModelConfig::default() };
        let data = make_dataset(3, &PhantomSpec { size: 16, ellipses: 4, ..PhantomSpec::default() }, 4).unwrap();
        let tc = TrainConfig { lr: 1e-3, batch_size: 2, epochs: 1, ..TrainConfig::default() };
        let a = run_ablation(&data[..2], &data[2..], &base, &tc, "h").unwrap();
        assert_eq!(a, run_ablation(&data[..2], &data[2..], &base, &tc, "h").unwrap());
        let md = a.to_markdown();
        assert!(md.contains("| w/o texture transfer | ✓ | × | ✓ |"));
        assert!(md.contains("| full | ✓ | ✓ | ✓ |"));
        assert_eq!(md.lines().count(), 6);
    }
}
