//! Parameter counts per module.

use avscene_autodiff::ParamSet;
use serde::Serialize;

use crate::error::Result;
use crate::fusion::{AvModel, ModelConfig};
use crate::visual_net::{BackboneKind, BACKBONE_PREFIX};

/// Scalars in the VGG16 convolutional stack.
pub const VGG16_BACKBONE_PARAMS: usize = 14_714_688;
/// Scalars in the tiny stand-in backbone.
pub const TINY_BACKBONE_PARAMS: usize = 154_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BudgetRow {
    pub module: String,
    pub total: usize,
    pub trainable: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamBudget {
    pub backbone: BackboneKind,
    pub rows: Vec<BudgetRow>,
}

impl ParamBudget {
    /// Counts with each module's trainability in its own training stage:
    /// the backbone frozen, everything else trainable. Batch-norm running
    /// statistics count toward totals only.
    pub fn of(ps: &ParamSet<f32>, backbone: BackboneKind) -> Self {
        let row = |module: &str, prefixes: &[&str]| BudgetRow {
            module: module.into(),
            total: prefixes.iter().map(|p| ps.count_prefix(&format!("{p}/"), false)).sum(),
            trainable: prefixes.iter().map(|p| ps.count_prefix(&format!("{p}/"), true)).sum(),
        };
        let mut rows = vec![
            row("audio", &["audio"]),
            row("visual backbone", &[BACKBONE_PREFIX]),
            row("visual head", &["visual/bigru", "visual/classifier"]),
            row("fusion", &["fusion"]),
        ];
        rows.push(BudgetRow {
            module: "total".into(),
            total: ps.count(false),
            trainable: ps.count(true),
        });
        Self {
            backbone,
            rows,
        }
    }

    /// Budget of a freshly initialized model.
    pub fn for_config(config: &ModelConfig) -> Result<Self> {
        let model = AvModel::new(config.clone())?;
        let mut ps: ParamSet<f32> = model.init_params(0)?;
        ps.set_trainable(BACKBONE_PREFIX, false);
        Ok(Self::of(&ps, config.visual.backbone))
    }

    pub fn row(&self, module: &str) -> Option<&BudgetRow> {
        self.rows.iter().find(|r| r.module == module)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<16} {:>12} {:>12}\n", "module", "total", "trainable");
        for r in &self.rows {
            s.push_str(&format!("{:<16} {:>12} {:>12}\n", r.module, group(r.total), group(r.trainable)));
        }
        let reference = match self.backbone {
            BackboneKind::Tiny => TINY_BACKBONE_PARAMS,
            BackboneKind::Vgg16 => VGG16_BACKBONE_PARAMS,
        };
        s.push_str(&format!("backbone: {:?} (reference size {})\n", self.backbone, group(reference)));
        s
    }
}

/// `1234567` as `1,234,567`.
fn group(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}
