//! Closed-form matting Laplacian and the photorealism regularizer.

use crate::error::{Error, Result};
use crate::image::Image;

/// Window radius (3×3 windows).
pub const WINDOW_RADIUS: usize = 1;
pub const DEFAULT_EPS: f64 = 1e-7;
/// Side of the working resolution the Laplacian is built at.
pub const WORKING_RESOLUTION: usize = 256;

const SPAN: isize = 2 * WINDOW_RADIUS as isize;
const BAND: usize = (2 * SPAN as usize + 1) * (2 * SPAN as usize + 1);

/// Sparse symmetric Laplacian over the pixels of a `width × height` image.
/// Row `i` stores its entries for every neighbour within a 5×5 box.
#[derive(Clone, Debug)]
pub struct MattingLaplacian {
    width: usize,
    height: usize,
    eps: f64,
    values: Vec<f64>,
}

#[inline]
fn slot(dx: isize, dy: isize) -> usize {
    ((dy + SPAN) * (2 * SPAN + 1) + dx + SPAN) as usize
}

fn invert3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    let inv = 1.0 / det;
    [
        [
            c00 * inv,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv,
        ],
        [
            c01 * inv,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv,
        ],
        [
            c02 * inv,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv,
        ],
    ]
}

/// Builds the Laplacian of an RGB image with 3×3 windows and regularizer `eps`.
pub fn matting_laplacian(img: &Image, eps: f64) -> Result<MattingLaplacian> {
    let (w, h) = img.dims();
    let win = 2 * WINDOW_RADIUS + 1;
    if img.channels() != 3 || w < win || h < win {
        return Err(Error::InvalidArgument(format!(
            "matting Laplacian needs an RGB image of at least {win}x{win}, got {}x{}x{}",
            w,
            h,
            img.channels()
        )));
    }
    let n_win = (win * win) as f64;
    let mut values = vec![0.0; w * h * BAND];
    let r = WINDOW_RADIUS as isize;
    for cy in WINDOW_RADIUS..h - WINDOW_RADIUS {
        for cx in WINDOW_RADIUS..w - WINDOW_RADIUS {
            let mut idx = [0usize; 9];
            let mut col = [[0.0; 3]; 9];
            let mut k = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let p = (cy as isize + dy) as usize * w + (cx as isize + dx) as usize;
                    idx[k] = p;
                    col[k] = img.rgb(p);
                    k += 1;
                }
            }
            let mut mu = [0.0; 3];
            for c in &col {
                for ch in 0..3 {
                    mu[ch] += c[ch] / n_win;
                }
            }
            let mut cov = [[0.0; 3]; 3];
            for c in &col {
                for a in 0..3 {
                    for b in 0..3 {
                        cov[a][b] += (c[a] - mu[a]) * (c[b] - mu[b]) / n_win;
                    }
                }
            }
            for (a, row) in cov.iter_mut().enumerate() {
                row[a] += eps / n_win;
            }
            let inv = invert3(cov);
            let mut d = [[0.0; 3]; 9];
            for k in 0..9 {
                for ch in 0..3 {
                    d[k][ch] = col[k][ch] - mu[ch];
                }
            }
            // A·d_b for each window pixel
            let mut ad = [[0.0; 3]; 9];
            for k in 0..9 {
                for a in 0..3 {
                    ad[k][a] = inv[a][0] * d[k][0] + inv[a][1] * d[k][1] + inv[a][2] * d[k][2];
                }
            }
            for a in 0..9 {
                for b in a..9 {
                    let q = d[a][0] * ad[b][0] + d[a][1] * ad[b][1] + d[a][2] * ad[b][2];
                    let v = if a == b { 1.0 } else { 0.0 } - (1.0 + q) / n_win;
                    let (pa, pb) = (idx[a], idx[b]);
                    let (ax, ay) = ((pa % w) as isize, (pa / w) as isize);
                    let (bx, by) = ((pb % w) as isize, (pb / w) as isize);
                    values[pa * BAND + slot(bx - ax, by - ay)] += v;
                    if a != b {
                        values[pb * BAND + slot(ax - bx, ay - by)] += v;
                    }
                }
            }
        }
    }
    Ok(MattingLaplacian {
        width: w,
        height: h,
        eps,
        values,
    })
}

impl MattingLaplacian {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Entry `M[i, j]` (zero outside the 5×5 band).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let w = self.width as isize;
        let dx = (j as isize % w) - (i as isize % w);
        let dy = (j as isize / w) - (i as isize / w);
        if dx.abs() > SPAN || dy.abs() > SPAN {
            0.0
        } else {
            self.values[i * BAND + slot(dx, dy)]
        }
    }

    /// `M·x` for a single-channel vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width as isize, self.height as isize);
        let mut y = vec![0.0; x.len()];
        for py in 0..h {
            for px in 0..w {
                let i = (py * w + px) as usize;
                let row = &self.values[i * BAND..(i + 1) * BAND];
                let mut s = 0.0;
                for dy in -SPAN..=SPAN {
                    let qy = py + dy;
                    if qy < 0 || qy >= h {
                        continue;
                    }
                    for dx in -SPAN..=SPAN {
                        let qx = px + dx;
                        if qx < 0 || qx >= w {
                            continue;
                        }
                        s += row[slot(dx, dy)] * x[(qy * w + qx) as usize];
                    }
                }
                y[i] = s;
            }
        }
        y
    }

    /// Dense copy, for small images.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.width * self.height;
        (0..n).map(|i| (0..n).map(|j| self.get(i, j)).collect()).collect()
    }
}

fn check_dims(z: &Image, m: &MattingLaplacian) -> Result<()> {
    if z.dims() != m.dims() {
        return Err(Error::DimensionMismatch {
            what: "photorealism input",
            found: z.dims(),
            expected: m.dims(),
        });
    }
    Ok(())
}

/// `Σ_h V_hᵀ M V_h` over the channels of `z`.
pub fn photorealism_loss(z: &Image, m: &MattingLaplacian) -> Result<f64> {
    check_dims(z, m)?;
    Ok((0..z.channels())
        .map(|c| {
            let v = z.plane(c);
            m.apply(v).iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
        })
        .sum())
}

/// Loss and gradient `2·M·V_h` per channel.
pub fn photorealism_loss_with_grad(z: &Image, m: &MattingLaplacian) -> Result<(f64, Image)> {
    check_dims(z, m)?;
    let mut grad = Image::zeros(z.width(), z.height(), z.channels());
    let mut loss = 0.0;
    for c in 0..z.channels() {
        let v = z.plane(c);
        let mv = m.apply(v);
        loss += mv.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        for (g, x) in grad.plane_mut(c).iter_mut().zip(&mv) {
            *g = 2.0 * x;
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_sum_to_zero_and_matrix_is_symmetric() {
        let m = matting_laplacian(&Image::random(9, 7, 3, 1), DEFAULT_EPS).unwrap();
        let ones = vec![1.0; 63];
        assert!(m.apply(&ones).iter().all(|v| v.abs() <= 1e-8));
        let d = m.to_dense();
        for i in 0..63 {
            for j in 0..63 {
                assert_eq!(d[i][j], d[j][i]);
            }
        }
    }

    #[test]
    fn constant_image_matches_uniform_window_laplacian() {
        // With zero color variance every window contributes δ_ij − 1/9, so
        // M[i,j] = n_ij·(δ_ij − 1/9) where n_ij counts windows holding both.
        let img = Image::filled(5, 5, &[0.3, 0.6, 0.2]);
        let m = matting_laplacian(&img, DEFAULT_EPS).unwrap();
        let windows = |p: usize| -> Vec<(usize, usize)> {
            let (x, y) = (p % 5, p / 5);
            let mut out = Vec::new();
            for cy in 1..4usize {
                for cx in 1..4usize {
                    if x.abs_diff(cx) <= 1 && y.abs_diff(cy) <= 1 {
                        out.push((cx, cy));
                    }
                }
            }
            out
        };
        for i in 0..25 {
            for j in 0..25 {
                let wi = windows(i);
                let shared = windows(j).iter().filter(|c| wi.contains(c)).count() as f64;
                let expect = shared * (if i == j { 1.0 } else { 0.0 } - 1.0 / 9.0);
                assert!(
                    (m.get(i, j) - expect).abs() < 1e-12,
                    "({i},{j}) {} vs {expect}",
                    m.get(i, j)
                );
            }
        }
    }

    #[test]
    fn loss_is_shift_invariant_and_nonnegative() {
        let c = Image::random(8, 8, 3, 2);
        let m = matting_laplacian(&c, DEFAULT_EPS).unwrap();
        let z = Image::random(8, 8, 3, 3);
        let a = photorealism_loss(&z, &m).unwrap();
        let mut shifted = z.clone();
        for v in shifted.plane_mut(1) {
            *v += 0.25;
        }
        let b = photorealism_loss(&shifted, &m).unwrap();
        assert!(a >= 0.0);
        assert!((a - b).abs() <= 1e-6 * a.max(1.0));
        let flat = Image::filled(8, 8, &[0.1, 0.9, 0.4]);
        assert!(photorealism_loss(&flat, &m).unwrap().abs() < 1e-6);
        assert!(photorealism_loss(&Image::random(4, 4, 3, 1), &m).is_err());
    }
}
