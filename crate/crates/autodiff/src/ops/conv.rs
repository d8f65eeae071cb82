use crate::error::{Error, Result};
use crate::float::Float;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Zero padding so the output keeps the input's height and width.
    Same,
    Valid,
}

#[derive(Clone, Copy)]
struct Geometry {
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.k * self.k * self.cin
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// A 1x1 unpadded kernel reads the input directly as its patch matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.pad == 0
    }

    fn im2col<T: Float>(&self, x: &[T], cols: &mut [T]) {
        let patch = self.patch();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &mut cols[(oy * self.ow + ox) * patch..][..patch];
                let x0 = ox as isize - self.pad as isize;
                let row_inside = x0 >= 0 && x0 as usize + self.k <= self.w;
                for ky in 0..self.k {
                    let iy = (oy + ky) as isize - self.pad as isize;
                    if row_inside && iy >= 0 && iy < self.h as isize {
                        // the kernel row is contiguous in the input
                        let len = self.k * self.cin;
                        let src = (iy as usize * self.w + x0 as usize) * self.cin;
                        row[ky * len..(ky + 1) * len].copy_from_slice(&x[src..src + len]);
                        continue;
                    }
                    for kx in 0..self.k {
                        let ix = (ox + kx) as isize - self.pad as isize;
                        let dst = &mut row[(ky * self.k + kx) * self.cin..][..self.cin];
                        if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
                            dst.fill(T::zero());
                        } else {
                            let src = (iy as usize * self.w + ix as usize) * self.cin;
                            dst.copy_from_slice(&x[src..src + self.cin]);
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Float>(&self, cols: &[T], dx: &mut [T]) {
        let patch = self.patch();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &cols[(oy * self.ow + ox) * patch..][..patch];
                for ky in 0..self.k {
                    let iy = (oy + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= self.h as isize {
                        continue;
                    }
                    for kx in 0..self.k {
                        let ix = (ox + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= self.w as isize {
                            continue;
                        }
                        let src = &row[(ky * self.k + kx) * self.cin..][..self.cin];
                        let dst = &mut dx[(iy as usize * self.w + ix as usize) * self.cin..][..self.cin];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                }
            }
        }
    }
}

impl<T: Float> Graph<T> {
    /// 2-D cross-correlation with stride 1.
    ///
    /// `x: [B, H, W, Cin]`, `kernel: [k, k, Cin, Cout]` (k odd), `bias: [Cout]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, padding: Padding) -> Result<Var> {
        let xv = self.value(x).clone();
        let kv = self.value(kernel).clone();
        let bv = self.value(bias).clone();
        if xv.rank() != 4 {
            return Err(Error::invalid("conv2d", format!("input must be [B, H, W, C], got {:?}", xv.shape())));
        }
        if kv.rank() != 4 || kv.shape()[0] != kv.shape()[1] || kv.shape()[0] % 2 == 0 {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel must be [k, k, Cin, Cout] with odd k, got {:?}", kv.shape()),
            ));
        }
        let (b, h, w, cin) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let (k, kcin, cout) = (kv.shape()[0], kv.shape()[2], kv.shape()[3]);
        if kcin != cin {
            return Err(Error::shape("conv2d", "input channels (axis 3) vs kernel Cin (axis 2)", &[kcin], &[cin]));
        }
        if bv.shape() != [cout] {
            return Err(Error::shape("conv2d", "bias vs kernel Cout (axis 3)", &[cout], bv.shape()));
        }
        let pad = match padding {
            Padding::Same => (k - 1) / 2,
            Padding::Valid => 0,
        };
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::invalid("conv2d", format!("kernel {k} larger than input {h}x{w}")));
        }
        let geo = Geometry {
            h,
            w,
            cin,
            k,
            pad,
            oh: h + 2 * pad - k + 1,
            ow: w + 2 * pad - k + 1,
        };
        let (patch, pos) = (geo.patch(), geo.positions());
        let in_len = h * w * cin;
        let mut out = vec![T::zero(); b * pos * cout];
        let mut cols = if geo.is_pointwise() { Vec::new() } else { vec![T::zero(); pos * patch] };
        for n in 0..b {
            let xs = &xv.data()[n * in_len..(n + 1) * in_len];
            let ys = &mut out[n * pos * cout..(n + 1) * pos * cout];
            for row in ys.chunks_exact_mut(cout) {
                row.copy_from_slice(bv.data());
            }
            let a = if geo.is_pointwise() {
                xs
            } else {
                geo.im2col(xs, &mut cols);
                &cols
            };
            T::gemm(pos, patch, cout, T::one(), a, (patch as isize, 1), kv.data(), (cout as isize, 1), T::one(), ys, (cout as isize, 1));
        }
        let out = Tensor::new(&[b, geo.oh, geo.ow, cout], out)?;
        Ok(self.push(out, vec![x, kernel, bias], move |g, needs| {
            let gd = g.data();
            let mut dx = needs[0].then(|| vec![T::zero(); xv.len()]);
            let mut dk = needs[1].then(|| vec![T::zero(); kv.len()]);
            let db = needs[2].then(|| {
                let mut db = vec![T::zero(); cout];
                for row in gd.chunks_exact(cout) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d = *d + v;
                    }
                }
                Tensor::new(&[cout], db).expect("shape")
            });
            let mut cols = if geo.is_pointwise() { Vec::new() } else { vec![T::zero(); pos * patch] };
            let mut dcols = vec![T::zero(); pos * patch];
            for n in 0..b {
                let xs = &xv.data()[n * in_len..(n + 1) * in_len];
                let gs = &gd[n * pos * cout..(n + 1) * pos * cout];
                if let Some(dk) = dk.as_mut() {
                    let a = if geo.is_pointwise() {
                        xs
                    } else {
                        geo.im2col(xs, &mut cols);
                        &cols
                    };
                    // cols^T[patch, pos] @ g[pos, cout]
                    T::gemm(patch, pos, cout, T::one(), a, (1, patch as isize), gs, (cout as isize, 1), T::one(), dk, (cout as isize, 1));
                }
                if let Some(dx) = dx.as_mut() {
                    let dxs = &mut dx[n * in_len..(n + 1) * in_len];
                    // g[pos, cout] @ kernel^T[cout, patch]
                    if geo.is_pointwise() {
                        T::gemm(pos, cout, patch, T::one(), gs, (cout as isize, 1), kv.data(), (1, cout as isize), T::zero(), dxs, (patch as isize, 1));
                    } else {
                        T::gemm(pos, cout, patch, T::one(), gs, (cout as isize, 1), kv.data(), (1, cout as isize), T::zero(), &mut dcols, (patch as isize, 1));
                        geo.col2im(&dcols, dxs);
                    }
                }
            }
            vec![
                dx.map(|v| Tensor::new(xv.shape(), v).expect("shape")),
                dk.map(|v| Tensor::new(kv.shape(), v).expect("shape")),
                db,
            ]
        }))
    }
}
