use super::{check_axis, split_axis};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

impl<T: Float> Graph<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let in_shape = xv.shape().to_vec();
        let out = xv.reshape(shape)?;
        Ok(self.push(out, vec![x], move |g, _| vec![Some(g.reshape(&in_shape).expect("shape"))]))
    }

    /// Joins values along an existing axis; all other axes must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::invalid("concat", "empty input list"))?;
        let base = self.shape(first).to_vec();
        check_axis("concat", &base, axis)?;
        let mut lens = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(a, (p, q))| a == axis || p == q);
            if !compatible {
                return Err(Error::shape("concat", format!("all axes but {axis}"), &base, s));
            }
            lens.push(s[axis]);
        }
        let total: usize = lens.iter().sum();
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&x, &len) in xs.iter().zip(&lens) {
                out.extend_from_slice(&self.value(x).data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let out = Tensor::new(&shape, out)?;
        let in_shapes: Vec<Vec<usize>> = xs.iter().map(|&x| self.shape(x).to_vec()).collect();
        Ok(self.push(out, xs.to_vec(), move |g, needs| {
            let mut offset = 0;
            let mut grads = Vec::with_capacity(lens.len());
            for ((&len, need), shape) in lens.iter().zip(needs).zip(&in_shapes) {
                if *need {
                    let mut d = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        d.extend_from_slice(&g.data()[start..start + len * inner]);
                    }
                    grads.push(Some(Tensor::new(shape, d).expect("shape")));
                } else {
                    grads.push(None);
                }
                offset += len;
            }
            grads
        }))
    }

    /// Contiguous range `[start, start + len)` of `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x).clone();
        check_axis("slice", xv.shape(), axis)?;
        let (outer, full, inner) = split_axis(xv.shape(), axis);
        if start + len > full {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{} exceeds axis {axis} of length {full}", start + len),
            ));
        }
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * full + start) * inner;
            out.extend_from_slice(&xv.data()[s..s + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(out, vec![x], move |g, _| {
            let mut dx = vec![T::zero(); xv.len()];
            for o in 0..outer {
                let s = (o * full + start) * inner;
                dx[s..s + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::new(xv.shape(), dx).expect("shape"))]
        }))
    }

    /// Index `index` of `axis`, with the axis removed.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let s = self.slice(x, axis, index, 1)?;
        let mut shape = self.shape(s).to_vec();
        shape.remove(axis);
        self.reshape(s, &shape)
    }

    /// Stacks equally shaped values along a new axis.
    pub fn stack(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::invalid("stack", "empty input list"))?;
        let base = self.shape(first).to_vec();
        if axis > base.len() {
            return Err(Error::invalid("stack", format!("axis {axis} out of range for {base:?}")));
        }
        let mut expanded = base.clone();
        expanded.insert(axis, 1);
        let mut parts = Vec::with_capacity(xs.len());
        for &x in xs {
            if self.shape(x) != base.as_slice() {
                return Err(Error::shape("stack", "item", &base, self.shape(x)));
            }
            parts.push(self.reshape(x, &expanded)?);
        }
        self.concat(&parts, axis)
    }
}
