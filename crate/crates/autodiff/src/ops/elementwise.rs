use rand::RngExt;

use super::{broadcast_shape, broadcast_strides, walk2};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }

    fn apply<T: Float>(self, a: T, b: T) -> T {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
        }
    }

    fn grad_a<T: Float>(self, _a: T, b: T, g: T) -> T {
        match self {
            Binary::Add | Binary::Sub => g,
            Binary::Mul => g * b,
        }
    }

    fn grad_b<T: Float>(self, a: T, _b: T, g: T) -> T {
        match self {
            Binary::Add => g,
            Binary::Sub => -g,
            Binary::Mul => g * a,
        }
    }
}

impl<T: Float> Graph<T> {
    /// `a + b` with broadcasting over axes of extent 1 (equal ranks).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        if av.shape() == bv.shape() {
            let out = av.zip_map(&bv, |x, y| op.apply(x, y));
            return Ok(self.push(out, vec![a, b], move |g, needs| {
                let ga = needs[0].then(|| {
                    Tensor::from_fn(av.shape(), |i| op.grad_a(av.data()[i], bv.data()[i], g.data()[i]))
                });
                let gb = needs[1].then(|| {
                    Tensor::from_fn(bv.shape(), |i| op.grad_b(av.data()[i], bv.data()[i], g.data()[i]))
                });
                vec![ga, gb]
            }));
        }
        let out_shape = broadcast_shape(op.name(), av.shape(), bv.shape())?;
        let sa = broadcast_strides(av.shape(), &out_shape);
        let sb = broadcast_strides(bv.shape(), &out_shape);
        let mut out = vec![T::zero(); out_shape.iter().product()];
        {
            let (ad, bd) = (av.data(), bv.data());
            walk2(&out_shape, &sa, &sb, |o, ia, ib| out[o] = op.apply(ad[ia], bd[ib]));
        }
        let out = Tensor::new(&out_shape, out)?;
        Ok(self.push(out, vec![a, b], move |g, needs| {
            let (ad, bd, gd) = (av.data(), bv.data(), g.data());
            let mut ga = needs[0].then(|| vec![T::zero(); av.len()]);
            let mut gb = needs[1].then(|| vec![T::zero(); bv.len()]);
            walk2(&out_shape, &sa, &sb, |o, ia, ib| {
                if let Some(ga) = ga.as_mut() {
                    ga[ia] = ga[ia] + op.grad_a(ad[ia], bd[ib], gd[o]);
                }
                if let Some(gb) = gb.as_mut() {
                    gb[ib] = gb[ib] + op.grad_b(ad[ia], bd[ib], gd[o]);
                }
            });
            vec![
                ga.map(|v| Tensor::new(av.shape(), v).expect("shape")),
                gb.map(|v| Tensor::new(bv.shape(), v).expect("shape")),
            ]
        }))
    }

    /// Elementwise maximum of equally shaped values. Ties send the
    /// gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        if av.shape() != bv.shape() {
            return Err(Error::shape("maximum", "all", av.shape(), bv.shape()));
        }
        let out = av.zip_map(&bv, |x, y| if x >= y { x } else { y });
        Ok(self.push(out, vec![a, b], move |g, needs| {
            let pick_a = |i: usize| av.data()[i] >= bv.data()[i];
            let ga = needs[0].then(|| {
                Tensor::from_fn(av.shape(), |i| if pick_a(i) { g.data()[i] } else { T::zero() })
            });
            let gb = needs[1].then(|| {
                Tensor::from_fn(bv.shape(), |i| if pick_a(i) { T::zero() } else { g.data()[i] })
            });
            vec![ga, gb]
        }))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push(out, vec![x], move |g, _| vec![Some(g.map(|v| v * scale))])
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var {
        let xv = self.value(x).clone();
        let y = xv.map(f);
        let yv = y.clone();
        self.push(y, vec![x], move |g, _| {
            let (xd, yd, gd) = (xv.data(), yv.data(), g.data());
            vec![Some(Tensor::from_fn(xv.shape(), |i| gd[i] * df(xd[i], yd[i])))]
        })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { T::zero() },
            |v, _| if v > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// Exponential linear unit with alpha = 1.
    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { v.exp_m1() },
            |v, y| if v > T::zero() { T::one() } else { y + T::one() },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), |_, y| T::one() - y * y)
    }

    /// Sum of all elements, as a rank-0 value.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let out = Tensor::scalar(xv.sum());
        self.push(out, vec![x], move |g, _| vec![Some(Tensor::full(&shape, g.data()[0]))])
    }

    /// Inverted dropout: in training, zeroes each entry with probability
    /// `rate` and scales survivors by `1 / (1 - rate)`. Identity at inference.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid("dropout", format!("rate {rate} not in [0, 1)")));
        }
        if !self.is_training() || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64c(1.0 / (1.0 - rate));
        let n = self.value(x).len();
        let rng = self.rng();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let mask = Tensor::new(self.value(x).shape(), mask)?;
        let out = self.value(x).zip_map(&mask, |a, m| a * m);
        Ok(self.push(out, vec![x], move |g, _| vec![Some(g.zip_map(&mask, |a, m| a * m))]))
    }
}

pub(crate) fn sigmoid<T: Float>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use crate::{Graph, Mode, Tensor};

    #[test]
    fn broadcast_add_bias_and_gradient() {
        let mut g = Graph::<f64>::new(Mode::Infer);
        let x = g.leaf(Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap(), true);
        let b = g.leaf(Tensor::new(&[1, 3], vec![10., 20., 30.]).unwrap(), true);
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y).data(), &[11., 22., 33., 14., 25., 36.]);
        let s = g.sum_all(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(b).unwrap().data(), &[2., 2., 2.]);
        assert_eq!(grads.get(x).unwrap().data(), &[1.; 6]);
    }

    #[test]
    fn dropout_is_identity_at_inference() {
        let mut g = Graph::<f32>::new(Mode::Infer);
        let x = g.input(Tensor::ones(&[10]));
        let y = g.dropout(x, 0.5).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_rejects_bad_rate() {
        let mut g = Graph::<f32>::new(Mode::Train);
        let x = g.input(Tensor::ones(&[10]));
        assert!(g.dropout(x, 1.0).is_err());
        assert!(g.dropout(x, -0.1).is_err());
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(super::sigmoid(-1000.0f64), 0.0);
        assert_eq!(super::sigmoid(1000.0f64), 1.0);
        assert_eq!(super::sigmoid(0.0f32), 0.5);
    }
}
