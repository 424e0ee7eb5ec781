//! Building blocks with explicit backward passes.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::real::Real;
use crate::tensor::Tensor3;

/// Square convolution, stride 1, "same" zero padding (kernel 1 or 3).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// `[out, in * kernel * kernel]`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    /// Kaiming-normal weights (`std = sqrt(2 / fan_in)`), zero bias.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "only odd kernels are supported");
        let fan_in = in_channels * kernel * kernel;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        let weight = (0..out_channels * fan_in)
            .map(|_| T::from_f64(normal.sample(rng)))
            .collect();
        Self {
            name: name.to_string(),
            in_channels,
            out_channels,
            kernel,
            weight,
            bias: vec![T::zero(); out_channels],
        }
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Unfolds the padded receptive fields into a `[in*k*k, h*w]` matrix.
    fn im2col(&self, x: &Tensor3<T>, cols: &mut Vec<T>) {
        let (h, w) = (x.height, x.width);
        let hw = h * w;
        let k = self.kernel;
        let r = (k / 2) as isize;
        cols.clear();
        cols.resize(self.patch() * hw, T::zero());
        for ci in 0..self.in_channels {
            let plane = x.plane(ci);
            for ky in 0..k {
                let dy = ky as isize - r;
                for kx in 0..k {
                    let dx = kx as isize - r;
                    let row = ((ci * k + ky) * k + kx) * hw;
                    let dst = &mut cols[row..row + hw];
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize) as usize;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                            continue;
                        }
                        let src_row = sy as usize * w;
                        let src = &plane[(src_row as isize + x_lo as isize + dx) as usize
                            ..(src_row as isize + x_hi as isize + dx) as usize];
                        dst[y * w + x_lo..y * w + x_hi].copy_from_slice(src);
                    }
                }
            }
        }
    }

    /// Adds the columns back onto the (padded-away) input positions.
    fn col2im(&self, cols: &[T], h: usize, w: usize) -> Tensor3<T> {
        let hw = h * w;
        let k = self.kernel;
        let r = (k / 2) as isize;
        let mut dx_t = Tensor3::zeros(self.in_channels, h, w);
        for ci in 0..self.in_channels {
            let plane = dx_t.plane_mut(ci);
            for ky in 0..k {
                let dy = ky as isize - r;
                for kx in 0..k {
                    let dx = kx as isize - r;
                    let row = ((ci * k + ky) * k + kx) * hw;
                    let src = &cols[row..row + hw];
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize) as usize;
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                            continue;
                        }
                        let base = (sy as usize * w) as isize + dx;
                        let dst = &mut plane[(base + x_lo as isize) as usize..(base + x_hi as isize) as usize];
                        for (d, &v) in dst.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                            *d = *d + v;
                        }
                    }
                }
            }
        }
        dx_t
    }

    pub fn forward(&self, x: &Tensor3<T>) -> Tensor3<T> {
        debug_assert_eq!(x.channels, self.in_channels);
        let hw = x.pixels();
        let mut out = Tensor3::zeros(self.out_channels, x.height, x.width);
        for (o, &b) in self.bias.iter().enumerate() {
            out.plane_mut(o).fill(b);
        }
        let p = self.patch();
        if self.kernel == 1 {
            T::gemm(self.out_channels, p, hw, T::one(), &self.weight, p as isize, 1, &x.data, hw as isize, 1, T::one(), &mut out.data, hw as isize, 1);
        } else {
            let mut cols = Vec::new();
            self.im2col(x, &mut cols);
            T::gemm(self.out_channels, p, hw, T::one(), &self.weight, p as isize, 1, &cols, hw as isize, 1, T::one(), &mut out.data, hw as isize, 1);
        }
        out
    }

    /// Accumulates weight/bias gradients and returns the input gradient when
    /// `need_input_grad`.
    pub fn backward(
        &self,
        x: &Tensor3<T>,
        grad_out: &Tensor3<T>,
        grad_weight: &mut [T],
        grad_bias: &mut [T],
        need_input_grad: bool,
    ) -> Option<Tensor3<T>> {
        let hw = x.pixels();
        let p = self.patch();
        for (o, gb) in grad_bias.iter_mut().enumerate() {
            *gb = *gb + grad_out.plane(o).iter().copied().sum::<T>();
        }
        let owned;
        let cols: &[T] = if self.kernel == 1 {
            &x.data
        } else {
            let mut c = Vec::new();
            self.im2col(x, &mut c);
            owned = c;
            &owned
        };
        // dW += dY * cols^T
        T::gemm(self.out_channels, hw, p, T::one(), &grad_out.data, hw as isize, 1, cols, 1, hw as isize, T::one(), grad_weight, p as isize, 1);
        if !need_input_grad {
            return None;
        }
        if self.kernel == 1 {
            // dX = W^T * dY
            let mut dx = Tensor3::zeros(self.in_channels, x.height, x.width);
            T::gemm(self.in_channels, self.out_channels, hw, T::one(), &self.weight, 1, p as isize, &grad_out.data, hw as isize, 1, T::zero(), &mut dx.data, hw as isize, 1);
            return Some(dx);
        }
        if self.in_channels > self.out_channels {
            // dX is the "same" convolution of dY with the spatially flipped,
            // channel-transposed kernel; cheaper when the layer narrows.
            return Some(self.flipped().forward_no_bias(grad_out));
        }
        // dcols = W^T * dY, folded back onto the input grid.
        let mut dcols = vec![T::zero(); p * hw];
        T::gemm(p, self.out_channels, hw, T::one(), &self.weight, 1, p as isize, &grad_out.data, hw as isize, 1, T::zero(), &mut dcols, hw as isize, 1);
        Some(self.col2im(&dcols, x.height, x.width))
    }

    fn flipped(&self) -> Conv2d<T> {
        let k = self.kernel;
        let kk = k * k;
        let mut weight = vec![T::zero(); self.weight.len()];
        for o in 0..self.out_channels {
            for i in 0..self.in_channels {
                for t in 0..kk {
                    weight[(i * self.out_channels + o) * kk + (kk - 1 - t)] =
                        self.weight[(o * self.in_channels + i) * kk + t];
                }
            }
        }
        Conv2d {
            name: String::new(),
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            kernel: k,
            weight,
            bias: Vec::new(),
        }
    }

    fn forward_no_bias(&self, x: &Tensor3<T>) -> Tensor3<T> {
        let hw = x.pixels();
        let p = self.patch();
        let mut out = Tensor3::zeros(self.out_channels, x.height, x.width);
        let mut cols = Vec::new();
        self.im2col(x, &mut cols);
        T::gemm(self.out_channels, p, hw, T::one(), &self.weight, p as isize, 1, &cols, hw as isize, 1, T::zero(), &mut out.data, hw as isize, 1);
        out
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Negative-side slope of the activation.
pub const LEAK: f64 = 0.01;

pub fn leaky_relu_inplace<T: Real>(x: &mut Tensor3<T>) {
    let slope = T::from_f64(LEAK);
    for v in &mut x.data {
        if *v < T::zero() {
            *v = *v * slope;
        }
    }
}

/// Scales gradient entries by the negative-side slope where the output was
/// not positive.
pub fn leaky_relu_backward_inplace<T: Real>(output: &Tensor3<T>, grad: &mut Tensor3<T>) {
    let slope = T::from_f64(LEAK);
    for (g, &o) in grad.data.iter_mut().zip(&output.data) {
        if o <= T::zero() {
            *g = *g * slope;
        }
    }
}

/// 2x2 max pooling with stride 2. Returns the pooled map and, per output
/// element, the flat input index that won.
pub fn max_pool2<T: Real>(x: &Tensor3<T>) -> (Tensor3<T>, Vec<u32>) {
    let (h, w) = (x.height / 2, x.width / 2);
    let mut out = Tensor3::zeros(x.channels, h, w);
    let mut arg = vec![0u32; x.channels * h * w];
    let in_hw = x.pixels();
    for c in 0..x.channels {
        let plane = x.plane(c);
        for y in 0..h {
            for xx in 0..w {
                let mut best = 2 * y * x.width + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (2 * y + dy) * x.width + 2 * xx + dx;
                    if plane[i] > plane[best] {
                        best = i;
                    }
                }
                let o = (c * h + y) * w + xx;
                out.data[o] = plane[best];
                arg[o] = (c * in_hw + best) as u32;
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward<T: Real>(
    argmax: &[u32],
    grad_out: &Tensor3<T>,
    in_channels: usize,
    in_h: usize,
    in_w: usize,
) -> Tensor3<T> {
    let mut g = Tensor3::zeros(in_channels, in_h, in_w);
    for (&i, &v) in argmax.iter().zip(&grad_out.data) {
        let t = &mut g.data[i as usize];
        *t = *t + v;
    }
    g
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<T: Real>(x: &Tensor3<T>) -> Tensor3<T> {
    let (h, w) = (x.height * 2, x.width * 2);
    let mut out = Tensor3::zeros(x.channels, h, w);
    for c in 0..x.channels {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            let srow = &src[(y / 2) * x.width..(y / 2 + 1) * x.width];
            for (xx, d) in dst[y * w..(y + 1) * w].iter_mut().enumerate() {
                *d = srow[xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(grad_out: &Tensor3<T>) -> Tensor3<T> {
    let (h, w) = (grad_out.height / 2, grad_out.width / 2);
    let mut g = Tensor3::zeros(grad_out.channels, h, w);
    for c in 0..grad_out.channels {
        let src = grad_out.plane(c);
        let dst = g.plane_mut(c);
        for y in 0..grad_out.height {
            for x in 0..grad_out.width {
                let t = &mut dst[(y / 2) * w + x / 2];
                *t = *t + src[y * grad_out.width + x];
            }
        }
    }
    g
}

/// Stacks `a` on top of `b` along the channel axis.
pub fn concat<T: Real>(a: &Tensor3<T>, b: &Tensor3<T>) -> Tensor3<T> {
    debug_assert!(a.height == b.height && a.width == b.width);
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor3 {
        channels: a.channels + b.channels,
        height: a.height,
        width: a.width,
        data,
    }
}

/// Splits a concatenated gradient back into its `a` and `b` parts.
pub fn split<T: Real>(g: Tensor3<T>, a_channels: usize) -> (Tensor3<T>, Tensor3<T>) {
    let n = a_channels * g.pixels();
    let mut data = g.data;
    let rest = data.split_off(n);
    (
        Tensor3 {
            channels: a_channels,
            height: g.height,
            width: g.width,
            data,
        },
        Tensor3 {
            channels: g.channels - a_channels,
            height: g.height,
            width: g.width,
            data: rest,
        },
    )
}
