use super::{check_axis, split_axis, walk2};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::graph::{Graph, Var};
use crate::tensor::{strides_of, Tensor};

struct Window {
    b: usize,
    h: usize,
    w: usize,
    c: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl Window {
    fn new(op: &'static str, shape: &[usize], window: (usize, usize)) -> Result<Self> {
        if shape.len() != 4 {
            return Err(Error::invalid(op, format!("input must be [B, H, W, C], got {shape:?}")));
        }
        let (ph, pw) = window;
        if ph == 0 || pw == 0 || ph > shape[1] || pw > shape[2] {
            return Err(Error::invalid(op, format!("window {window:?} does not fit {shape:?}")));
        }
        Ok(Self {
            b: shape[0],
            h: shape[1],
            w: shape[2],
            c: shape[3],
            ph,
            pw,
            oh: shape[1] / ph,
            ow: shape[2] / pw,
        })
    }

    fn out_shape(&self) -> [usize; 4] {
        [self.b, self.oh, self.ow, self.c]
    }

    /// Calls `f(out_index, in_index)` for every input element inside a
    /// window. Trailing rows/columns that do not fill a window are skipped.
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        for n in 0..self.b {
            for oy in 0..self.oh {
                for ox in 0..self.ow {
                    let o = ((n * self.oh + oy) * self.ow + ox) * self.c;
                    for dy in 0..self.ph {
                        for dx in 0..self.pw {
                            let iy = oy * self.ph + dy;
                            let ix = ox * self.pw + dx;
                            let i = ((n * self.h + iy) * self.w + ix) * self.c;
                            for ch in 0..self.c {
                                f(o + ch, i + ch);
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Float> Graph<T> {
    /// Max pooling over non-overlapping `(height, width)` windows, stride
    /// equal to the window, floor on lengths that do not divide.
    pub fn max_pool2d(&mut self, x: Var, window: (usize, usize)) -> Result<Var> {
        let xv = self.value(x).clone();
        let win = Window::new("max_pool2d", xv.shape(), window)?;
        let out_shape = win.out_shape();
        let n_out: usize = out_shape.iter().product();
        let mut out = vec![T::neg_infinity(); n_out];
        let mut arg = vec![usize::MAX; n_out];
        let xd = xv.data();
        win.for_each(|o, i| {
            if arg[o] == usize::MAX || xd[i] > out[o] {
                out[o] = xd[i];
                arg[o] = i;
            }
        });
        let in_shape = xv.shape().to_vec();
        let out = Tensor::new(&out_shape, out)?;
        Ok(self.push(out, vec![x], move |g, _| {
            let mut dx = vec![T::zero(); in_shape.iter().product()];
            for (o, &i) in arg.iter().enumerate() {
                dx[i] = dx[i] + g.data()[o];
            }
            vec![Some(Tensor::new(&in_shape, dx).expect("shape"))]
        }))
    }

    /// Average pooling with the same window rules as [`Graph::max_pool2d`].
    pub fn avg_pool2d(&mut self, x: Var, window: (usize, usize)) -> Result<Var> {
        let xv = self.value(x).clone();
        let win = Window::new("avg_pool2d", xv.shape(), window)?;
        let out_shape = win.out_shape();
        let scale = T::one() / T::from_count(win.ph * win.pw);
        let mut out = vec![T::zero(); out_shape.iter().product()];
        let xd = xv.data();
        win.for_each(|o, i| out[o] = out[o] + xd[i] * scale);
        let in_shape = xv.shape().to_vec();
        let out = Tensor::new(&out_shape, out)?;
        Ok(self.push(out, vec![x], move |g, _| {
            let mut dx = vec![T::zero(); in_shape.iter().product()];
            win.for_each(|o, i| dx[i] = g.data()[o] * scale);
            vec![Some(Tensor::new(&in_shape, dx).expect("shape"))]
        }))
    }

    /// Mean over the listed axes, which are removed from the shape.
    pub fn mean_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let xv = self.value(x).clone();
        let shape = xv.shape().to_vec();
        for &a in axes {
            check_axis("mean_axes", &shape, a)?;
        }
        let kept: Vec<usize> = (0..shape.len()).filter(|a| !axes.contains(a)).collect();
        let out_shape: Vec<usize> = kept.iter().map(|&a| shape[a]).collect();
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        if count == 0 {
            return Err(Error::invalid("mean_axes", "reducing an empty axis"));
        }
        // strides of the output expanded to the input rank, zero on reduced axes
        let out_strides = strides_of(&out_shape);
        let mut expanded = vec![0usize; shape.len()];
        for (i, &a) in kept.iter().enumerate() {
            expanded[a] = out_strides[i];
        }
        let in_strides = strides_of(&shape);
        let scale = T::one() / T::from_count(count);
        let mut out = vec![T::zero(); out_shape.iter().product::<usize>().max(1)];
        walk2(&shape, &in_strides, &expanded, |_, i, o| out[o] = out[o] + xv.data()[i]);
        for v in out.iter_mut() {
            *v = *v * scale;
        }
        let out = Tensor::new(&out_shape, out)?;
        Ok(self.push(out, vec![x], move |g, _| {
            let mut dx = vec![T::zero(); xv.len()];
            walk2(&shape, &in_strides, &expanded, |_, i, o| dx[i] = g.data()[o] * scale);
            vec![Some(Tensor::new(&shape, dx).expect("shape"))]
        }))
    }

    /// Averages `axis` into `bins` contiguous groups; bin `b` covers
    /// `[floor(b * L / bins), floor((b + 1) * L / bins))`.
    pub fn adaptive_avg_pool(&mut self, x: Var, axis: usize, bins: usize) -> Result<Var> {
        let xv = self.value(x).clone();
        check_axis("adaptive_avg_pool", xv.shape(), axis)?;
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        if bins == 0 || len < bins {
            return Err(Error::invalid(
                "adaptive_avg_pool",
                format!("cannot split an axis of {len} into {bins} bins"),
            ));
        }
        let bounds = adaptive_bounds(len, bins);
        let mut out_shape = xv.shape().to_vec();
        out_shape[axis] = bins;
        let mut out = vec![T::zero(); outer * bins * inner];
        for o in 0..outer {
            for (bin, &(start, end)) in bounds.iter().enumerate() {
                let scale = T::one() / T::from_count(end - start);
                let dst = &mut out[(o * bins + bin) * inner..][..inner];
                for t in start..end {
                    let src = &xv.data()[(o * len + t) * inner..][..inner];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = *d + s * scale;
                    }
                }
            }
        }
        let out = Tensor::new(&out_shape, out)?;
        Ok(self.push(out, vec![x], move |g, _| {
            let mut dx = vec![T::zero(); xv.len()];
            for o in 0..outer {
                for (bin, &(start, end)) in bounds.iter().enumerate() {
                    let scale = T::one() / T::from_count(end - start);
                    let src = &g.data()[(o * bins + bin) * inner..][..inner];
                    for t in start..end {
                        let dst = &mut dx[(o * len + t) * inner..][..inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = s * scale;
                        }
                    }
                }
            }
            vec![Some(Tensor::new(xv.shape(), dx).expect("shape"))]
        }))
    }
}

/// Half-open `[start, end)` ranges of adaptive pooling bins.
pub fn adaptive_bounds(len: usize, bins: usize) -> Vec<(usize, usize)> {
    (0..bins).map(|b| (b * len / bins, (b + 1) * len / bins)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mode;

    #[test]
    fn time_axis_pool_halves_width_only() {
        let mut g = Graph::<f32>::new(Mode::Infer);
        let x = g.input(Tensor::zeros(&[1, 64, 50, 4]));
        let y = g.max_pool2d(x, (1, 2)).unwrap();
        assert_eq!(g.shape(y), &[1, 64, 25, 4]);
        let z = g.max_pool2d(y, (1, 2)).unwrap();
        assert_eq!(g.shape(z), &[1, 64, 12, 4]);
    }

    #[test]
    fn max_pool_picks_window_maximum() {
        let mut g = Graph::<f64>::new(Mode::Infer);
        let x = g.input(Tensor::new(&[1, 1, 4, 1], vec![1., 5., 3., 2.]).unwrap());
        let y = g.max_pool2d(x, (1, 2)).unwrap();
        assert_eq!(g.value(y).data(), &[5., 3.]);
    }

    #[test]
    fn bins_of_twelve_into_five() {
        let sizes: Vec<usize> = adaptive_bounds(12, 5).iter().map(|(s, e)| e - s).collect();
        assert_eq!(sizes, vec![2, 2, 3, 2, 3]);
    }

    #[test]
    fn mean_axes_removes_reduced_axes() {
        let mut g = Graph::<f64>::new(Mode::Infer);
        let x = g.input(Tensor::from_fn(&[2, 3, 4], |i| i as f64));
        let y = g.mean_axes(x, &[1]).unwrap();
        assert_eq!(g.shape(y), &[2, 4]);
        assert_eq!(g.value(y).data()[0], (0.0 + 4.0 + 8.0) / 3.0);
    }
}
