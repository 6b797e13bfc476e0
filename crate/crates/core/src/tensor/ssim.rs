use serde::{Deserialize, Serialize};

use super::tape::{Grads, Op, Var};
use super::{lit, Real, Result, Tape, Tensor, TensorError};

/// Stabilizing constants of the SSIM ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConstants {
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimConstants {
    /// `(0.01 L)^2` and `(0.03 L)^2` for dynamic range `L = 1`.
    fn default() -> Self {
        Self { c1: 1e-4, c2: 9e-4 }
    }
}

impl SsimConstants {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0 && c1.is_finite() && c2.is_finite()) {
            return Err(TensorError::InvalidArgument {
                op: "ssim",
                detail: format!("constants must be positive, got c1={c1}, c2={c2}"),
            });
        }
        Ok(Self { c1, c2 })
    }
}

/// Population statistics of one plane pair.
struct PlaneStats<T> {
    mx: T,
    my: T,
    vx: T,
    vy: T,
    cov: T,
}

fn plane_stats<T: Real>(x: &[T], y: &[T]) -> PlaneStats<T> {
    let n = lit::<T>(x.len() as f64);
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut vx, mut vy, mut cov) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        vx = vx + da * da;
        vy = vy + db * db;
        cov = cov + da * db;
    }
    PlaneStats { mx, my, vx: vx / n, vy: vy / n, cov: cov / n }
}

/// SSIM of two equally sized planes using global population statistics.
pub fn ssim_plane<T: Real>(x: &[T], y: &[T], k: SsimConstants) -> T {
    let s = plane_stats(x, y);
    let (c1, c2) = (lit::<T>(k.c1), lit::<T>(k.c2));
    let two = lit::<T>(2.0);
    let num = (two * s.mx * s.my + c1) * (two * s.cov + c2);
    let den = (s.mx * s.mx + s.my * s.my + c1) * (s.vx + s.vy + c2);
    num / den
}

fn plane_geometry(op: &'static str, x: &[usize], y: &[usize]) -> Result<(usize, usize)> {
    if x != y {
        return Err(TensorError::ShapeMismatch { op, detail: format!("{x:?} vs {y:?}") });
    }
    if x.len() < 2 {
        return Err(TensorError::ShapeMismatch { op, detail: format!("need [.., H, W], got {x:?}") });
    }
    let plane = x[x.len() - 2] * x[x.len() - 1];
    if plane < 2 {
        return Err(TensorError::InvalidArgument { op, detail: format!("H*W = {plane} < 2") });
    }
    Ok((x[..x.len() - 2].iter().product(), plane))
}

impl<T: Real> Tape<T> {
    /// Channel-wise SSIM: one value per leading index (e.g. `[C, H, W]` -> `[C]`),
    /// statistics taken over the whole `H x W` plane.
    pub fn channel_ssim(&mut self, x: Var, y: Var, k: SsimConstants) -> Result<Var> {
        self.check_live()?;
        let out = channel_ssim_forward(self.value(x), self.value(y), k)?;
        self.push("channel_ssim", out, Op::ChannelSsim { x, y, k }, &[x, y])
    }
}

pub(crate) fn channel_ssim_forward<T: Real>(x: &Tensor<T>, y: &Tensor<T>, k: SsimConstants) -> Result<Tensor<T>> {
    let (channels, plane) = plane_geometry("channel_ssim", x.shape(), y.shape())?;
    let out = (0..channels)
        .map(|c| {
            let r = c * plane..(c + 1) * plane;
            ssim_plane(&x.data()[r.clone()], &y.data()[r], k)
        })
        .collect();
    Tensor::new(x.shape()[..x.rank() - 2].to_vec(), out)
}

pub(crate) fn channel_ssim_backward<T: Real>(
    (xv, x): (Var, &Tensor<T>),
    (yv, y): (Var, &Tensor<T>),
    k: SsimConstants,
    gout: &[T],
    grads: &mut Grads<'_, T>,
) {
    let (channels, plane) = plane_geometry("channel_ssim", x.shape(), y.shape()).expect("validated in forward");
    let (c1, c2) = (lit::<T>(k.c1), lit::<T>(k.c2));
    let two = lit::<T>(2.0);
    let inv_p = T::one() / lit::<T>(plane as f64);
    // S = A1 A2 / (B1 B2); for a position p of x:
    // dS/dx_p = (2/P) [ (my A2 + A1 (y_p - my)) / (B1 B2) - S (mx / B1 + (x_p - mx) / B2) ]
    let mut dx = vec![T::zero(); x.len()];
    let mut dy = vec![T::zero(); y.len()];
    for c in 0..channels {
        let r = c * plane..(c + 1) * plane;
        let (xs, ys) = (&x.data()[r.clone()], &y.data()[r.clone()]);
        let s = plane_stats(xs, ys);
        let a1 = two * s.mx * s.my + c1;
        let a2 = two * s.cov + c2;
        let b1 = s.mx * s.mx + s.my * s.my + c1;
        let b2 = s.vx + s.vy + c2;
        let den = b1 * b2;
        let ssim = a1 * a2 / den;
        let g = gout[c] * two * inv_p;
        for p in 0..plane {
            let (xp, yp) = (xs[p] - s.mx, ys[p] - s.my);
            dx[r.start + p] = g * ((s.my * a2 + a1 * yp) / den - ssim * (s.mx / b1 + xp / b2));
            dy[r.start + p] = g * ((s.mx * a2 + a1 * xp) / den - ssim * (s.my / b1 + yp / b2));
        }
    }
    grads.acc(xv, |g| g.iter_mut().zip(&dx).for_each(|(g, &d)| *g = *g + d));
    grads.acc(yv, |g| g.iter_mut().zip(&dy).for_each(|(g, &d)| *g = *g + d));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_similarity_is_one() {
        let x = Tensor::<f64>::from_fn(&[3, 4, 4], |i| ((i * 7) % 11) as f64 * 0.13 - 0.4);
        let out = channel_ssim_forward(&x, &x, SsimConstants::default()).unwrap();
        assert_eq!(out.shape(), &[3]);
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_planes_are_one() {
        let z = Tensor::<f64>::zeros(&[2, 3, 3]);
        let out = channel_ssim_forward(&z, &z, SsimConstants::default()).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn symmetric() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 3], |i| (i as f64 * 0.37).sin());
        let y = Tensor::<f64>::from_fn(&[2, 3, 3], |i| (i as f64 * 0.91).cos());
        let k = SsimConstants::default();
        assert_eq!(channel_ssim_forward(&x, &y, k).unwrap(), channel_ssim_forward(&y, &x, k).unwrap());
    }

    #[test]
    fn rejects_degenerate_planes() {
        let x = Tensor::<f64>::zeros(&[2, 1, 1]);
        assert!(channel_ssim_forward(&x, &x, SsimConstants::default()).is_err());
        let y = Tensor::<f64>::zeros(&[2, 2, 1]);
        assert!(channel_ssim_forward(&x, &y, SsimConstants::default()).is_err());
    }

    #[test]
    fn constants_must_be_positive() {
        assert!(SsimConstants::new(0.0, 1.0).is_err());
        assert!(SsimConstants::new(1e-4, -1.0).is_err());
        assert!(SsimConstants::new(1e-4, 9e-4).is_ok());
    }
}
