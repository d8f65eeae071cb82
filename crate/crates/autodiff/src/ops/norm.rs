use crate::error::{Error, Result};
use crate::float::Float;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Per-channel statistics of one training batch.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Tensor<T>,
    /// Biased (population) variance.
    pub variance: Tensor<T>,
    /// Elements reduced per channel.
    pub count: usize,
}

fn channel_shape(op: &'static str, shape: &[usize], param: &[usize]) -> Result<usize> {
    let c = *shape
        .last()
        .ok_or_else(|| Error::invalid(op, "rank-0 input"))?;
    if param != [c] {
        return Err(Error::shape(op, "channel axis (last)", &[c], param));
    }
    Ok(c)
}

impl<T: Float> Graph<T> {
    /// Batch normalization with batch statistics, normalizing every axis
    /// but the last. Returns the statistics so the caller can update
    /// running averages.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats<T>)> {
        let xv = self.value(x).clone();
        let gv = self.value(gamma).clone();
        let c = channel_shape("batch_norm", xv.shape(), gv.shape())?;
        channel_shape("batch_norm", xv.shape(), self.value(beta).shape())?;
        let bv = self.value(beta).clone();
        let n = xv.len() / c;
        if n == 0 {
            return Err(Error::invalid("batch_norm", "empty batch"));
        }
        let mut sum = vec![0f64; c];
        let mut sq = vec![0f64; c];
        for row in xv.data().chunks_exact(c) {
            for ch in 0..c {
                let v = row[ch].to_f64c();
                sum[ch] += v;
                sq[ch] += v * v;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let var: Vec<f64> = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n as f64 - m * m).max(0.0))
            .collect();
        let inv: Vec<T> = var.iter().map(|v| T::from_f64c(1.0 / (v + eps).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|&m| T::from_f64c(m)).collect();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for (i, &v) in xv.data().iter().enumerate() {
            let ch = i % c;
            let h = (v - mean_t[ch]) * inv[ch];
            xhat[i] = h;
            out[i] = gv.data()[ch] * h + bv.data()[ch];
        }
        let stats = BatchStats {
            mean: Tensor::new(&[c], mean_t)?,
            variance: Tensor::new(&[c], var.iter().map(|&v| T::from_f64c(v)).collect())?,
            count: n,
        };
        let shape = xv.shape().to_vec();
        let out = Tensor::new(&shape, out)?;
        let var_node = self.push(out, vec![x, gamma, beta], move |g, needs| {
            let gd = g.data();
            let mut dbeta = vec![T::zero(); c];
            let mut dgamma = vec![T::zero(); c];
            for (i, &gi) in gd.iter().enumerate() {
                let ch = i % c;
                dbeta[ch] = dbeta[ch] + gi;
                dgamma[ch] = dgamma[ch] + gi * xhat[i];
            }
            let dx = needs[0].then(|| {
                let nt = T::from_count(n);
                let mut dx = vec![T::zero(); gd.len()];
                for (i, &gi) in gd.iter().enumerate() {
                    let ch = i % c;
                    let gam = gv.data()[ch];
                    // dxhat = g * gamma; sums of dxhat are gamma * dbeta and gamma * dgamma
                    dx[i] = inv[ch] / nt * (nt * gi * gam - gam * dbeta[ch] - xhat[i] * gam * dgamma[ch]);
                }
                Tensor::new(&shape, dx).expect("shape")
            });
            vec![
                dx,
                needs[1].then(|| Tensor::new(&[c], dgamma).expect("shape")),
                needs[2].then(|| Tensor::new(&[c], dbeta).expect("shape")),
            ]
        });
        Ok((var_node, stats))
    }

    /// Batch normalization with fixed statistics: a per-channel affine map.
    pub fn batch_norm_infer(&mut self, x: Var, gamma: Var, beta: Var, mean: Var, variance: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x).clone();
        let gv = self.value(gamma).clone();
        let c = channel_shape("batch_norm", xv.shape(), gv.shape())?;
        for p in [beta, mean, variance] {
            channel_shape("batch_norm", xv.shape(), self.value(p).shape())?;
        }
        let bv = self.value(beta).clone();
        let mv = self.value(mean).clone();
        let vv = self.value(variance).clone();
        let inv: Vec<T> = vv
            .data()
            .iter()
            .map(|&v| T::one() / (v + T::from_f64c(eps)).sqrt())
            .collect();
        let xhat = |i: usize, v: T| (v - mv.data()[i % c]) * inv[i % c];
        let out = Tensor::from_fn(xv.shape(), |i| gv.data()[i % c] * xhat(i, xv.data()[i]) + bv.data()[i % c]);
        let shape = xv.shape().to_vec();
        Ok(self.push(out, vec![x, gamma, beta, mean, variance], move |g, needs| {
            let gd = g.data();
            let dx = needs[0].then(|| Tensor::from_fn(&shape, |i| gd[i] * gv.data()[i % c] * inv[i % c]));
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for (i, &gi) in gd.iter().enumerate() {
                let ch = i % c;
                dbeta[ch] = dbeta[ch] + gi;
                dgamma[ch] = dgamma[ch] + gi * (xv.data()[i] - mv.data()[ch]) * inv[ch];
            }
            vec![
                dx,
                needs[1].then(|| Tensor::new(&[c], dgamma).expect("shape")),
                needs[2].then(|| Tensor::new(&[c], dbeta).expect("shape")),
                None,
                None,
            ]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mode;

    #[test]
    fn train_mode_normalizes_each_channel() {
        let mut g = Graph::<f64>::new(Mode::Train);
        let x = g.input(Tensor::new(&[4, 2], vec![1., 10., 2., 20., 3., 30., 4., 40.]).unwrap());
        let gamma = g.input(Tensor::ones(&[2]));
        let beta = g.input(Tensor::zeros(&[2]));
        let (y, stats) = g.batch_norm_train(x, gamma, beta, 0.0).unwrap();
        assert_eq!(stats.mean.data(), &[2.5, 25.0]);
        assert_eq!(stats.count, 4);
        let y = g.value(y).data();
        let mean0: f64 = (0..4).map(|i| y[2 * i]).sum::<f64>() / 4.0;
        let var0: f64 = (0..4).map(|i| y[2 * i] * y[2 * i]).sum::<f64>() / 4.0;
        assert!(mean0.abs() < 1e-12);
        assert!((var0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infer_mode_is_affine() {
        let mut g = Graph::<f64>::new(Mode::Infer);
        let x = g.input(Tensor::new(&[2, 1], vec![3.0, 5.0]).unwrap());
        let gamma = g.input(Tensor::full(&[1], 2.0));
        let beta = g.input(Tensor::full(&[1], 1.0));
        let mean = g.input(Tensor::full(&[1], 1.0));
        let var = g.input(Tensor::full(&[1], 4.0));
        let y = g.batch_norm_infer(x, gamma, beta, mean, var, 0.0).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 5.0]);
    }
}
