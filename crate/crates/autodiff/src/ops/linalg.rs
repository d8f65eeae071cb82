use crate::error::{Error, Result};
use crate::float::Float;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

impl<T: Float> Graph<T> {
    /// `a[.., k] @ b[k, n] -> [.., n]`; leading axes of `a` are treated as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        if bv.rank() != 2 || av.rank() == 0 {
            return Err(Error::invalid(
                "matmul",
                format!("expected a[.., k] and b[k, n], got {:?} and {:?}", av.shape(), bv.shape()),
            ));
        }
        let k = *av.shape().last().unwrap();
        let (bk, n) = (bv.shape()[0], bv.shape()[1]);
        if k != bk {
            return Err(Error::shape("matmul", "inner dimension", &[k], &[bk]));
        }
        let m = av.len() / k.max(1);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), av.data(), (k as isize, 1), bv.data(), (n as isize, 1), T::zero(), &mut out, (n as isize, 1));
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(out, vec![a, b], move |g, needs| {
            let ga = needs[0].then(|| {
                let mut ga = vec![T::zero(); m * k];
                // g[m,n] @ b^T[n,k]
                T::gemm(m, n, k, T::one(), g.data(), (n as isize, 1), bv.data(), (1, n as isize), T::zero(), &mut ga, (k as isize, 1));
                Tensor::new(av.shape(), ga).expect("shape")
            });
            let gb = needs[1].then(|| {
                let mut gb = vec![T::zero(); k * n];
                // a^T[k,m] @ g[m,n]
                T::gemm(k, m, n, T::one(), av.data(), (1, k as isize), g.data(), (n as isize, 1), T::zero(), &mut gb, (n as isize, 1));
                Tensor::new(bv.shape(), gb).expect("shape")
            });
            vec![ga, gb]
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::{Graph, Mode, Tensor};

    #[test]
    fn batched_rows_multiply() {
        let mut g = Graph::<f64>::new(Mode::Infer);
        let a = g.input(Tensor::new(&[2, 1, 2], vec![1., 2., 3., 4.]).unwrap());
        let b = g.input(Tensor::new(&[2, 3], vec![1., 0., 1., 0., 1., 1.]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 1, 3]);
        assert_eq!(g.value(c).data(), &[1., 2., 3., 3., 4., 7.]);
    }

    #[test]
    fn inner_dimension_mismatch_is_reported() {
        let mut g = Graph::<f64>::new(Mode::Infer);
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[4, 3]));
        assert!(g.matmul(a, b).is_err());
    }
}
