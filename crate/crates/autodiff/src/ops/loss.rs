use crate::error::{Error, Result};
use crate::float::Float;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside the log.
pub const PROB_EPS: f64 = 1e-7;

impl<T: Float> Graph<T> {
    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = *xv
            .shape()
            .last()
            .ok_or_else(|| Error::invalid("softmax", "rank-0 input"))?;
        let mut out = xv.data().to_vec();
        for row in out.chunks_exact_mut(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        let y = Tensor::new(xv.shape(), out)?;
        let yv = y.clone();
        Ok(self.push(y, vec![x], move |g, _| {
            let mut dx = vec![T::zero(); yv.len()];
            for ((dst, y), g) in dx
                .chunks_exact_mut(c)
                .zip(yv.data().chunks_exact(c))
                .zip(g.data().chunks_exact(c))
            {
                let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
                for i in 0..c {
                    dst[i] = y[i] * (g[i] - dot);
                }
            }
            vec![Some(Tensor::new(yv.shape(), dx).expect("shape"))]
        }))
    }

    /// Mean over rows of `-sum(target * ln(probs))`, both `[.., C]`.
    /// `target` rows may be soft labels.
    pub fn cross_entropy(&mut self, probs: Var, target: Var) -> Result<Var> {
        let pv = self.value(probs).clone();
        let tv = self.value(target).clone();
        if pv.shape() != tv.shape() || pv.rank() == 0 {
            return Err(Error::shape("cross_entropy", "probs vs target", pv.shape(), tv.shape()));
        }
        let c = *pv.shape().last().unwrap();
        let rows = pv.len() / c;
        let (lo, hi) = (T::from_f64c(PROB_EPS), T::from_f64c(1.0 - PROB_EPS));
        let inv_rows = T::one() / T::from_count(rows);
        let loss: T = pv
            .data()
            .iter()
            .zip(tv.data())
            .map(|(&p, &t)| -t * p.max(lo).min(hi).ln())
            .sum::<T>()
            * inv_rows;
        Ok(self.push(Tensor::scalar(loss), vec![probs, target], move |g, needs| {
            let scale = g.data()[0] * inv_rows;
            let dp = needs[0].then(|| {
                Tensor::from_fn(pv.shape(), |i| {
                    let p = pv.data()[i];
                    if p < lo || p > hi {
                        T::zero()
                    } else {
                        -tv.data()[i] / p * scale
                    }
                })
            });
            let dt = needs[1].then(|| Tensor::from_fn(tv.shape(), |i| -pv.data()[i].max(lo).min(hi).ln() * scale));
            vec![dp, dt]
        }))
    }
}
