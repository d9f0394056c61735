//! 2D cross-correlation and its transpose via im2col + GEMM.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::tape::{Backward, BackwardArgs};
use crate::{Error, Result, Scalar, Tape, Tensor, Var};

/// Square-kernel convolution geometry. Padding is symmetric zero fill.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad: usize,
}

impl Conv2dGeometry {
    /// Stride 1 with `floor(d (k - 1) / 2)` padding on each side.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self {
            kernel,
            stride: 1,
            dilation,
            pad: dilation * (kernel - 1) / 2,
        }
    }

    pub fn valid(kernel: usize, stride: usize, dilation: usize) -> Self {
        Self {
            kernel,
            stride,
            dilation,
            pad: 0,
        }
    }

    /// Effective kernel extent `k + (k - 1)(d - 1)`.
    pub fn span(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

pub fn conv_out_size(input: usize, g: &Conv2dGeometry) -> Option<usize> {
    let padded = input + 2 * g.pad;
    (padded >= g.span()).then(|| (padded - g.span()) / g.stride + 1)
}

pub fn conv_transpose_out_size(input: usize, g: &Conv2dGeometry, output_padding: usize) -> usize {
    (input - 1) * g.stride + g.span() + output_padding - 2 * g.pad
}

#[derive(Clone, Copy, Debug)]
struct Plane {
    channels: usize,
    height: usize,
    width: usize,
}

impl Plane {
    fn len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `off`.
fn valid_range(off: isize, stride: usize, input: usize, output: usize) -> (usize, usize) {
    let s = stride as isize;
    // smallest o with o*s + off >= 0
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    // largest o with o*s + off < input, plus one
    let hi = if off >= input as isize {
        0
    } else {
        ((input as isize - 1 - off) / s + 1).max(0)
    };
    let lo = (lo as usize).min(output);
    let hi = (hi as usize).min(output);
    (lo, hi.max(lo))
}

/// Unfolds one (C, H, W) image into a `(C k k) x (oh ow)` matrix.
fn im2col<T: Scalar>(x: &[T], src: Plane, g: &Conv2dGeometry, oh: usize, ow: usize, cols: &mut [T]) {
    let k = g.kernel;
    let p = oh * ow;
    for c in 0..src.channels {
        let plane = &x[c * src.height * src.width..(c + 1) * src.height * src.width];
        for ki in 0..k {
            let off_y = (ki * g.dilation) as isize - g.pad as isize;
            let (y_lo, y_hi) = valid_range(off_y, g.stride, src.height, oh);
            for kj in 0..k {
                let off_x = (kj * g.dilation) as isize - g.pad as isize;
                let (x_lo, x_hi) = valid_range(off_x, g.stride, src.width, ow);
                let row = ((c * k + ki) * k + kj) * p;
                let dst = &mut cols[row..row + p];
                for oy in 0..oh {
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if oy < y_lo || oy >= y_hi {
                        line.fill(T::zero());
                        continue;
                    }
                    let iy = (oy * g.stride) as isize + off_y;
                    let src_row = &plane[iy as usize * src.width..(iy as usize + 1) * src.width];
                    line[..x_lo].fill(T::zero());
                    line[x_hi..].fill(T::zero());
                    if x_lo == x_hi {
                        // the tap misses the image on this axis (dilation wider than the input)
                    } else if g.stride == 1 {
                        let start = (x_lo as isize + off_x) as usize;
                        line[x_lo..x_hi].copy_from_slice(&src_row[start..start + (x_hi - x_lo)]);
                    } else {
                        for ox in x_lo..x_hi {
                            line[ox] = src_row[((ox * g.stride) as isize + off_x) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
fn col2im<T: Scalar>(cols: &[T], dst: Plane, g: &Conv2dGeometry, oh: usize, ow: usize, x: &mut [T]) {
    let k = g.kernel;
    let p = oh * ow;
    for c in 0..dst.channels {
        let plane = &mut x[c * dst.height * dst.width..(c + 1) * dst.height * dst.width];
        for ki in 0..k {
            let off_y = (ki * g.dilation) as isize - g.pad as isize;
            let (y_lo, y_hi) = valid_range(off_y, g.stride, dst.height, oh);
            for kj in 0..k {
                let off_x = (kj * g.dilation) as isize - g.pad as isize;
                let (x_lo, x_hi) = valid_range(off_x, g.stride, dst.width, ow);
                let row = ((c * k + ki) * k + kj) * p;
                let src = &cols[row..row + p];
                for oy in y_lo..y_hi {
                    let iy = ((oy * g.stride) as isize + off_y) as usize;
                    let line = &src[oy * ow..(oy + 1) * ow];
                    let dst_row = &mut plane[iy * dst.width..(iy + 1) * dst.width];
                    for ox in x_lo..x_hi {
                        dst_row[((ox * g.stride) as isize + off_x) as usize] += line[ox];
                    }
                }
            }
        }
    }
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], per_channel: usize) {
    for (chunk, &b) in out.chunks_mut(per_channel).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad<T: Scalar>(grad: &[T], channels: usize, per_channel: usize) -> Vec<T> {
    let mut db = vec![T::zero(); channels];
    for (i, chunk) in grad.chunks(per_channel).enumerate() {
        db[i % channels] += chunk.iter().copied().sum::<T>();
    }
    db
}

struct Conv2dOp {
    geom: Conv2dGeometry,
    batch: usize,
    src: Plane,
    out: Plane,
}

impl<T: Scalar> Backward<T> for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, args: BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> {
        let (x, w) = (args.inputs[0].data(), args.inputs[1].data());
        let g = args.grad;
        let ckk = self.src.channels * self.geom.kernel * self.geom.kernel;
        let p = self.out.height * self.out.width;
        let cout = self.out.channels;
        let pointwise = self.geom.is_pointwise();
        let mut dx = args.needs[0].then(|| vec![T::zero(); x.len()]);
        let mut dw = args.needs[1].then(|| vec![T::zero(); w.len()]);
        let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); ckk * p] };
        let mut dcols = if pointwise { Vec::new() } else { vec![T::zero(); ckk * p] };
        for n in 0..self.batch {
            let xn = &x[n * self.src.len()..(n + 1) * self.src.len()];
            let gn = &g[n * self.out.len()..(n + 1) * self.out.len()];
            if let Some(dw) = dw.as_mut() {
                let cols_ref: &[T] = if pointwise {
                    xn
                } else {
                    im2col(xn, self.src, &self.geom, self.out.height, self.out.width, &mut cols);
                    &cols
                };
                T::gemm(cout, p, ckk, gn, (p as isize, 1), cols_ref, (1, p as isize), T::one(), dw, (ckk as isize, 1));
            }
            if let Some(dx) = dx.as_mut() {
                let dxn = &mut dx[n * self.src.len()..(n + 1) * self.src.len()];
                if pointwise {
                    T::gemm(ckk, cout, p, w, (1, ckk as isize), gn, (p as isize, 1), T::zero(), dxn, (p as isize, 1));
                } else {
                    T::gemm(ckk, cout, p, w, (1, ckk as isize), gn, (p as isize, 1), T::zero(), &mut dcols, (p as isize, 1));
                    col2im(&dcols, self.src, &self.geom, self.out.height, self.out.width, dxn);
                }
            }
        }
        let mut grads = vec![dx, dw];
        if args.inputs.len() == 3 {
            grads.push(args.needs[2].then(|| bias_grad(g, cout, p)));
        }
        grads
    }
}

struct ConvTranspose2dOp {
    geom: Conv2dGeometry,
    batch: usize,
    src: Plane,
    out: Plane,
}

impl<T: Scalar> Backward<T> for ConvTranspose2dOp {
    fn name(&self) -> &'static str {
        "conv_transpose2d"
    }

    fn backward(&self, args: BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>> {
        let (x, w) = (args.inputs[0].data(), args.inputs[1].data());
        let g = args.grad;
        let k = self.geom.kernel;
        let cin = self.src.channels;
        let coutkk = self.out.channels * k * k;
        let p = self.src.height * self.src.width;
        let mut dx = args.needs[0].then(|| vec![T::zero(); x.len()]);
        let mut dw = args.needs[1].then(|| vec![T::zero(); w.len()]);
        let mut dcols = vec![T::zero(); coutkk * p];
        for n in 0..self.batch {
            let gn = &g[n * self.out.len()..(n + 1) * self.out.len()];
            im2col(gn, self.out, &self.geom, self.src.height, self.src.width, &mut dcols);
            if let Some(dx) = dx.as_mut() {
                let dxn = &mut dx[n * self.src.len()..(n + 1) * self.src.len()];
                T::gemm(cin, coutkk, p, w, (coutkk as isize, 1), &dcols, (p as isize, 1), T::zero(), dxn, (p as isize, 1));
            }
            if let Some(dw) = dw.as_mut() {
                let xn = &x[n * self.src.len()..(n + 1) * self.src.len()];
                T::gemm(cin, p, coutkk, xn, (p as isize, 1), &dcols, (1, p as isize), T::one(), dw, (coutkk as isize, 1));
            }
        }
        let mut grads = vec![dx, dw];
        if args.inputs.len() == 3 {
            grads.push(args.needs[2].then(|| bias_grad(g, self.out.channels, self.out.height * self.out.width)));
        }
        grads
    }
}

impl<T: Scalar> Tape<T> {
    /// Cross-correlation of `x` (N, C, H, W) with weights (n, C, k, k) and
    /// optional per-output-channel bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: Conv2dGeometry) -> Result<Var> {
        let (batch, cin, h, wd) = self.value(x).dims4()?;
        let (cout, wcin, kh, kw) = self.value(w).dims4()?;
        if wcin != cin {
            return Err(Error::ChannelMismatch {
                op: "conv2d",
                expected: wcin,
                got: cin,
            });
        }
        if kh != geom.kernel || kw != geom.kernel {
            return Err(Error::shape("conv2d", self.value(w).shape(), &[cout, cin, geom.kernel, geom.kernel]));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(Error::shape("conv2d bias", self.value(b).shape(), &[cout]));
            }
        }
        let (Some(oh), Some(ow)) = (conv_out_size(h, &geom), conv_out_size(wd, &geom)) else {
            return Err(Error::shape("conv2d", self.value(x).shape(), self.value(w).shape()));
        };
        let src = Plane { channels: cin, height: h, width: wd };
        let out = Plane { channels: cout, height: oh, width: ow };
        let ckk = cin * geom.kernel * geom.kernel;
        let p = oh * ow;
        let xd = self.value(x).data();
        let wdata = self.value(w).data();
        let mut y = vec![T::zero(); batch * out.len()];
        let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![T::zero(); ckk * p] };
        for n in 0..batch {
            let xn = &xd[n * src.len()..(n + 1) * src.len()];
            let cols_ref: &[T] = if geom.is_pointwise() {
                xn
            } else {
                im2col(xn, src, &geom, oh, ow, &mut cols);
                &cols
            };
            let yn = &mut y[n * out.len()..(n + 1) * out.len()];
            T::gemm(cout, ckk, p, wdata, (ckk as isize, 1), cols_ref, (p as isize, 1), T::zero(), yn, (p as isize, 1));
        }
        let mut inputs = vec![x, w];
        if let Some(b) = b {
            add_bias(&mut y, self.value(b).data(), p);
            inputs.push(b);
        }
        let value = Tensor::new(&[batch, cout, oh, ow], y)?;
        Ok(self.push(value, &inputs, Box::new(Conv2dOp { geom, batch, src, out })))
    }

    /// Transposed convolution (adjoint of [`Tape::conv2d`] with the same
    /// geometry); weights are (C_in, n, k, k).
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Conv2dGeometry,
        output_padding: usize,
    ) -> Result<Var> {
        let (batch, cin, h, wd) = self.value(x).dims4()?;
        let (wcin, cout, kh, kw) = self.value(w).dims4()?;
        if wcin != cin {
            return Err(Error::ChannelMismatch {
                op: "conv_transpose2d",
                expected: wcin,
                got: cin,
            });
        }
        if kh != geom.kernel || kw != geom.kernel || output_padding >= geom.stride.max(geom.dilation) {
            return Err(Error::shape("conv_transpose2d", self.value(w).shape(), &[cin, cout, geom.kernel, geom.kernel]));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(Error::shape("conv_transpose2d bias", self.value(b).shape(), &[cout]));
            }
        }
        let oh = conv_transpose_out_size(h, &geom, output_padding);
        let ow = conv_transpose_out_size(wd, &geom, output_padding);
        let src = Plane { channels: cin, height: h, width: wd };
        let out = Plane { channels: cout, height: oh, width: ow };
        let coutkk = cout * geom.kernel * geom.kernel;
        let p = h * wd;
        let xd = self.value(x).data();
        let wdata = self.value(w).data();
        let mut y = vec![T::zero(); batch * out.len()];
        let mut cols = vec![T::zero(); coutkk * p];
        for n in 0..batch {
            let xn = &xd[n * src.len()..(n + 1) * src.len()];
            T::gemm(coutkk, cin, p, wdata, (1, coutkk as isize), xn, (p as isize, 1), T::zero(), &mut cols, (p as isize, 1));
            col2im(&cols, out, &geom, h, wd, &mut y[n * out.len()..(n + 1) * out.len()]);
        }
        let mut inputs = vec![x, w];
        if let Some(b) = b {
            add_bias(&mut y, self.value(b).data(), oh * ow);
            inputs.push(b);
        }
        let value = Tensor::new(&[batch, cout, oh, ow], y)?;
        Ok(self.push(value, &inputs, Box::new(ConvTranspose2dOp { geom, batch, src, out })))
    }
}
