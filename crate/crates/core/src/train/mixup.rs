use avscene_autodiff::Tensor;
use rand::seq::SliceRandom;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};

/// Pairing and weights for one batch: row `i` becomes
/// `lambda[i] * x[i] + (1 - lambda[i]) * x[partner[i]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixPlan {
    pub lambda: Vec<f64>,
    pub partner: Vec<usize>,
}

impl MixPlan {
    pub fn identity(batch: usize) -> Self {
        Self {
            lambda: vec![1.0; batch],
            partner: (0..batch).collect(),
        }
    }

    /// `lambda ~ Beta(alpha, alpha)`, once per batch unless `per_example`,
    /// with a random permutation as partners.
    pub fn sample(batch: usize, alpha: f64, per_example: bool, rng: &mut impl rand::Rng) -> Result<Self> {
        if batch < 2 {
            return Err(Error::Config("mixup needs a batch of at least 2".into()));
        }
        let beta = Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("mixup alpha {alpha}: {e}")))?;
        let mut partner: Vec<usize> = (0..batch).collect();
        partner.shuffle(rng);
        let lambda = if per_example {
            (0..batch).map(|_| beta.sample(rng)).collect()
        } else {
            vec![beta.sample(rng); batch]
        };
        Ok(Self { lambda, partner })
    }

    /// Mixes the rows (leading axis) of `x`.
    pub fn apply(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let b = self.lambda.len();
        if x.shape().first() != Some(&b) {
            return Err(Error::Config(format!("mixup plan for {b} rows applied to {:?}", x.shape())));
        }
        let row = x.len() / b;
        let d = x.data();
        let mut out = Vec::with_capacity(x.len());
        for i in 0..b {
            let (l, j) = (self.lambda[i], self.partner[i]);
            let (a, p) = (&d[i * row..(i + 1) * row], &d[j * row..(j + 1) * row]);
            out.extend(a.iter().zip(p).map(|(&u, &v)| (l * u as f64 + (1.0 - l) * v as f64) as f32));
        }
        Ok(Tensor::new(x.shape(), out)?)
    }
}

/// One-hot rows `[B, classes]`.
pub fn one_hot(labels: &[usize], classes: usize) -> Tensor<f32> {
    Tensor::from_fn(&[labels.len(), classes], |i| {
        if labels[i / classes] == i % classes { 1.0 } else { 0.0 }
    })
}

/// Mixes every modality and the targets with the same plan.
pub fn mixup_batch(inputs: &[Tensor<f32>], targets: &Tensor<f32>, plan: &MixPlan) -> Result<(Vec<Tensor<f32>>, Tensor<f32>)> {
    let mixed = inputs.iter().map(|x| plan.apply(x)).collect::<Result<_>>()?;
    Ok((mixed, plan.apply(targets)?))
}
