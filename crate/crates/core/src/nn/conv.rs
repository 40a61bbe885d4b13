use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Mat, Scalar, Tensor};

/// Geometry of a strided, zero-padded sliding window over a (C, H, W) input.
#[derive(Clone, Copy, Debug)]
struct Window {
    channels: usize,
    in_h: usize,
    in_w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output indices `o` with `o * stride + k - pad` inside `[0, n)`.
    fn valid_range(&self, k: usize, n: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        // largest o with o*s + off <= n-1
        let last = n as isize - 1 - off;
        let hi = if last < 0 { 0 } else { last / s + 1 };
        (
            lo.clamp(0, out as isize) as usize,
            hi.clamp(0, out as isize) as usize,
        )
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Window) -> Vec<T> {
    let mut cols = vec![T::zero(); g.rows() * g.cols()];
    let plane = g.in_h * g.in_w;
    for c in 0..g.channels {
        let src = &x[c * plane..(c + 1) * plane];
        for ky in 0..g.kernel {
            let (oy0, oy1) = g.valid_range(ky, g.in_h, g.out_h);
            for kx in 0..g.kernel {
                let (ox0, ox1) = g.valid_range(kx, g.in_w, g.out_w);
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut cols[row * g.cols()..(row + 1) * g.cols()];
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.pad;
                    let src_row = &src[iy * g.in_w..(iy + 1) * g.in_w];
                    let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if g.stride == 1 {
                        let ix0 = ox0 + kx - g.pad;
                        dst_row[ox0..ox1].copy_from_slice(&src_row[ix0..ix0 + (ox1 - ox0)]);
                    } else {
                        for ox in ox0..ox1 {
                            dst_row[ox] = src_row[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto an input-shaped buffer.
fn col2im<T: Scalar>(cols: &[T], g: &Window, out: &mut [T]) {
    let plane = g.in_h * g.in_w;
    for c in 0..g.channels {
        let dst = &mut out[c * plane..(c + 1) * plane];
        for ky in 0..g.kernel {
            let (oy0, oy1) = g.valid_range(ky, g.in_h, g.out_h);
            for kx in 0..g.kernel {
                let (ox0, ox1) = g.valid_range(kx, g.in_w, g.out_w);
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &cols[row * g.cols()..(row + 1) * g.cols()];
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.pad;
                    let src_row = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    let dst_row = &mut dst[iy * g.in_w..(iy + 1) * g.in_w];
                    for ox in ox0..ox1 {
                        dst_row[ox * g.stride + kx - g.pad] += src_row[ox];
                    }
                }
            }
        }
    }
}

fn add_bias<T: Scalar>(y: &mut Tensor<T>, bias: &[T]) {
    for (c, &b) in bias.iter().enumerate() {
        y.plane_mut(c).iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_bias_grad<T: Scalar>(dy: &Tensor<T>, grad: &mut [T]) {
    for (c, g) in grad.iter_mut().enumerate() {
        *g += dy.plane(c).iter().copied().sum::<T>();
    }
}

pub(crate) fn normal_init<T: Scalar, R: Rng + ?Sized>(buf: &mut [T], std: f64, rng: &mut R) {
    let dist = Normal::new(0.0, std).expect("valid std");
    for v in buf.iter_mut() {
        *v = T::lit(dist.sample(rng));
    }
}

/// 2-D convolution with zero padding. Weight layout `[out, in, k, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            weight: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![T::zero(); out_channels],
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    /// Gaussian weights, zero bias.
    pub fn init_normal<R: Rng + ?Sized>(&mut self, std: f64, rng: &mut R) {
        normal_init(&mut self.weight, std, rng);
        self.bias.iter_mut().for_each(|b| *b = T::zero());
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let span_h = h + 2 * self.padding;
        let span_w = w + 2 * self.padding;
        if span_h < self.kernel || span_w < self.kernel {
            return Err(Error::Shape(format!(
                "{}x{} input too small for {}x{} kernel with padding {}",
                h, w, self.kernel, self.kernel, self.padding
            )));
        }
        Ok((
            (span_h - self.kernel) / self.stride + 1,
            (span_w - self.kernel) / self.stride + 1,
        ))
    }

    fn window(&self, h: usize, w: usize) -> Result<Window> {
        let (out_h, out_w) = self.output_size(h, w)?;
        Ok(Window {
            channels: self.in_channels,
            in_h: h,
            in_w: w,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.padding,
            out_h,
            out_w,
        })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let g = self.window(x.height(), x.width())?;
        let mut y = Tensor::zeros(self.out_channels, g.out_h, g.out_w);
        let w = Mat::new(&self.weight, self.out_channels, g.rows());
        if self.kernel == 1 && self.stride == 1 && self.padding == 0 {
            gemm(w, Mat::new(x.data(), g.rows(), g.cols()), T::zero(), y.data_mut());
        } else {
            let cols = im2col(x.data(), &g);
            gemm(w, Mat::new(&cols, g.rows(), g.cols()), T::zero(), y.data_mut());
        }
        add_bias(&mut y, &self.bias);
        Ok(y)
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient when `want_input_grad` is set.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grad: Option<&mut Conv2d<T>>,
        want_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        self.check_input(x)?;
        let g = self.window(x.height(), x.width())?;
        if dy.shape() != (self.out_channels, g.out_h, g.out_w) {
            return Err(Error::Shape(format!(
                "conv output gradient {:?} does not match {:?}",
                dy.shape(),
                (self.out_channels, g.out_h, g.out_w)
            )));
        }
        let dy_mat = Mat::new(dy.data(), self.out_channels, g.cols());
        if let Some(grad) = grad {
            let cols = im2col(x.data(), &g);
            gemm(
                dy_mat,
                Mat::new(&cols, g.rows(), g.cols()).t(),
                T::one(),
                &mut grad.weight,
            );
            accumulate_bias_grad(dy, &mut grad.bias);
        }
        if !want_input_grad {
            return Ok(None);
        }
        let mut dcols = vec![T::zero(); g.rows() * g.cols()];
        gemm(
            Mat::new(&self.weight, self.out_channels, g.rows()).t(),
            dy_mat,
            T::zero(),
            &mut dcols,
        );
        let mut dx = x.zeros_like();
        col2im(&dcols, &g, dx.data_mut());
        Ok(Some(dx))
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Transposed convolution (fractionally strided). Weight layout `[in, out, k, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Self {
        Self {
            weight: vec![T::zero(); in_channels * out_channels * kernel * kernel],
            bias: vec![T::zero(); out_channels],
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            output_padding,
        }
    }

    pub fn init_normal<R: Rng + ?Sized>(&mut self, std: f64, rng: &mut R) {
        normal_init(&mut self.weight, std, rng);
        self.bias.iter_mut().for_each(|b| *b = T::zero());
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let size = |n: usize| -> Option<usize> {
            ((n.checked_sub(1)?) * self.stride + self.kernel + self.output_padding)
                .checked_sub(2 * self.padding)
        };
        match (size(h), size(w)) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
            _ => Err(Error::Shape(format!(
                "{}x{} input invalid for transposed conv",
                h, w
            ))),
        }
    }

    /// The window that maps the output grid back onto the input grid.
    fn window(&self, h: usize, w: usize) -> Result<Window> {
        let (out_h, out_w) = self.output_size(h, w)?;
        Ok(Window {
            channels: self.out_channels,
            in_h: out_h,
            in_w: out_w,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.padding,
            out_h: h,
            out_w: w,
        })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "transposed conv expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let g = self.window(x.height(), x.width())?;
        let mut cols = vec![T::zero(); g.rows() * g.cols()];
        gemm(
            Mat::new(&self.weight, self.in_channels, g.rows()).t(),
            Mat::new(x.data(), self.in_channels, g.cols()),
            T::zero(),
            &mut cols,
        );
        let mut y = Tensor::zeros(self.out_channels, g.in_h, g.in_w);
        col2im(&cols, &g, y.data_mut());
        add_bias(&mut y, &self.bias);
        Ok(y)
    }

    pub fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grad: Option<&mut ConvTranspose2d<T>>,
        want_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        self.check_input(x)?;
        let g = self.window(x.height(), x.width())?;
        if dy.shape() != (self.out_channels, g.in_h, g.in_w) {
            return Err(Error::Shape(format!(
                "transposed conv output gradient {:?} does not match {:?}",
                dy.shape(),
                (self.out_channels, g.in_h, g.in_w)
            )));
        }
        let dcols = im2col(dy.data(), &g);
        let dcols_mat = Mat::new(&dcols, g.rows(), g.cols());
        if let Some(grad) = grad {
            gemm(
                Mat::new(x.data(), self.in_channels, g.cols()),
                dcols_mat.t(),
                T::one(),
                &mut grad.weight,
            );
            accumulate_bias_grad(dy, &mut grad.bias);
        }
        if !want_input_grad {
            return Ok(None);
        }
        let mut dx = x.zeros_like();
        gemm(
            Mat::new(&self.weight, self.in_channels, g.rows()),
            dcols_mat,
            T::zero(),
            dx.data_mut(),
        );
        Ok(Some(dx))
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Mirror padding that excludes the edge pixel (`dcb|abcd|cba`).
pub fn reflection_pad<T: Scalar>(x: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.shape();
    if pad >= h || pad >= w {
        return Err(Error::Shape(format!(
            "reflection padding {} needs input larger than {}x{}",
            pad, h, w
        )));
    }
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    Ok(Tensor::from_fn(c, oh, ow, |ch, y, xx| {
        x.get(
            ch,
            reflect(y as isize - pad as isize, h),
            reflect(xx as isize - pad as isize, w),
        )
    }))
}

/// Adjoint of [`reflection_pad`].
pub fn reflection_pad_backward<T: Scalar>(
    dy: &Tensor<T>,
    pad: usize,
    height: usize,
    width: usize,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(dy.channels(), height, width);
    for c in 0..dy.channels() {
        for y in 0..dy.height() {
            let sy = reflect(y as isize - pad as isize, height);
            for xx in 0..dy.width() {
                let sx = reflect(xx as isize - pad as isize, width);
                let v = dx.get(c, sy, sx) + dy.get(c, y, xx);
                dx.set(c, sy, sx, v);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(c, h, w, |ch, y, x| {
            ((ch * 31 + y * 7 + x * 3) % 11) as f64 * 0.1 - 0.5
        })
    }

    /// Direct nested-loop convolution used as the reference.
    fn naive_conv(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (oh, ow) = conv.output_size(x.height(), x.width()).unwrap();
        let k = conv.kernel;
        Tensor::from_fn(conv.out_channels, oh, ow, |o, oy, ox| {
            let mut acc = conv.bias[o];
            for i in 0..conv.in_channels {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * conv.stride + ky) as isize - conv.padding as isize;
                        let ix = (ox * conv.stride + kx) as isize - conv.padding as isize;
                        if iy < 0 || ix < 0 || iy >= x.height() as isize || ix >= x.width() as isize
                        {
                            continue;
                        }
                        acc += conv.weight[((o * conv.in_channels + i) * k + ky) * k + kx]
                            * x.get(i, iy as usize, ix as usize);
                    }
                }
            }
            acc
        })
    }

    fn naive_conv_transpose(conv: &ConvTranspose2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (oh, ow) = conv.output_size(x.height(), x.width()).unwrap();
        let k = conv.kernel;
        let mut y = Tensor::from_fn(conv.out_channels, oh, ow, |o, _, _| conv.bias[o]);
        for i in 0..conv.in_channels {
            for iy in 0..x.height() {
                for ix in 0..x.width() {
                    for o in 0..conv.out_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = (iy * conv.stride + ky) as isize - conv.padding as isize;
                                let ox = (ix * conv.stride + kx) as isize - conv.padding as isize;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                let w = conv.weight[((i * conv.out_channels + o) * k + ky) * k + kx];
                                let v = y.get(o, oy as usize, ox as usize) + w * x.get(i, iy, ix);
                                y.set(o, oy as usize, ox as usize, v);
                            }
                        }
                    }
                }
            }
        }
        y
    }

    fn seeded_conv(i: usize, o: usize, k: usize, s: usize, p: usize) -> Conv2d<f64> {
        let mut conv = Conv2d::new(i, o, k, s, p);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        conv.init_normal(0.3, &mut rng);
        conv.bias.iter_mut().enumerate().for_each(|(j, b)| *b = j as f64 * 0.1);
        conv
    }

    use rand::SeedableRng;

    #[test]
    fn conv_matches_naive_loops() {
        for &(k, s, p, h) in &[(3, 1, 1, 5), (3, 2, 1, 8), (4, 2, 1, 8), (7, 1, 0, 9), (1, 1, 0, 4)] {
            let conv = seeded_conv(2, 3, k, s, p);
            let x = ramp(2, h, h + 1);
            let fast = conv.forward(&x).unwrap();
            let slow = naive_conv(&conv, &x);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "k{k} s{s} p{p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_transpose_matches_naive_loops() {
        let mut conv = ConvTranspose2d::new(3, 2, 3, 2, 1, 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        conv.init_normal(0.3, &mut rng);
        conv.bias = vec![0.2, -0.1];
        let x = ramp(3, 4, 5);
        let fast = conv.forward(&x).unwrap();
        assert_eq!(fast.shape(), (2, 8, 10));
        let slow = naive_conv_transpose(&conv, &x);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// <dy, conv(x)> linear part must equal <backward(dy), x>.
    #[test]
    fn conv_backward_is_adjoint() {
        let mut conv = seeded_conv(2, 3, 3, 2, 1);
        conv.bias.iter_mut().for_each(|b| *b = 0.0);
        let x = ramp(2, 6, 6);
        let y = conv.forward(&x).unwrap();
        let dy = Tensor::from_fn(3, y.height(), y.width(), |c, a, b| (c + 2 * a + b) as f64 * 0.05);
        let mut grad = Conv2d::new(2, 3, 3, 2, 1);
        let dx = conv.backward(&x, &dy, Some(&mut grad), true).unwrap().unwrap();
        let lhs: f64 = y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn reflection_pad_layout() {
        let x = Tensor::from_vec(1, 1, 4, vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let x = x.reshaped(1, 1, 4).unwrap();
        // pad only along width is not possible with height 1 and pad 1, so use 2 rows
        let x2 = Tensor::from_vec(1, 2, 4, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let p = reflection_pad(&x2, 1).unwrap();
        assert_eq!(p.shape(), (1, 4, 6));
        assert_eq!(&p.data()[6..12], &[2.0, 1.0, 2.0, 3.0, 4.0, 3.0]);
        assert_eq!(&p.data()[0..6], &[6.0, 5.0, 6.0, 7.0, 8.0, 7.0]);
        assert!(reflection_pad(&x, 1).is_err());
    }

    #[test]
    fn reflection_pad_backward_is_adjoint() {
        let x = ramp(2, 5, 6);
        let y = reflection_pad(&x, 3).unwrap();
        let dy = Tensor::from_fn(2, y.height(), y.width(), |c, a, b| ((c + a * 3 + b) % 5) as f64);
        let dx = reflection_pad_backward(&dy, 3, 5, 6);
        let lhs: f64 = y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn stride_two_halves_even_sizes() {
        let conv: Conv2d<f32> = Conv2d::new(3, 4, 3, 2, 1);
        assert_eq!(conv.output_size(128, 64).unwrap(), (64, 32));
        let disc: Conv2d<f32> = Conv2d::new(3, 4, 4, 2, 1);
        assert_eq!(disc.output_size(8, 8).unwrap(), (4, 4));
        let up: ConvTranspose2d<f32> = ConvTranspose2d::new(4, 2, 3, 2, 1, 1);
        assert_eq!(up.output_size(16, 8).unwrap(), (32, 16));
    }
}
