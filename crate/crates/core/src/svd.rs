//! Truncated singular value decomposition used as image preprocessing:
//! per channel, keep the largest singular values and reconstruct.
//!
//! The decomposition is a one-sided Jacobi iteration: simple, robust, and
//! plenty fast for the matrix sizes involved (image sides <= 64).

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAX_SWEEPS: usize = 60;
const CONVERGENCE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum SvdConfig {
    Off,
    /// Keep the smallest rank whose squared singular values reach this
    /// fraction of total squared energy; must lie in (0, 1].
    Energy(f64),
    /// Keep exactly this many singular values.
    Rank(usize),
}

impl SvdConfig {
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        match *self {
            SvdConfig::Off => Ok(()),
            SvdConfig::Energy(f) if f > 0.0 && f <= 1.0 => Ok(()),
            SvdConfig::Energy(f) => Err(FlowError::Manifest(format!(
                "svd energy fraction {f} outside (0, 1]"
            ))),
            SvdConfig::Rank(k) if k >= 1 && k <= h.min(w) => Ok(()),
            SvdConfig::Rank(k) => Err(FlowError::Manifest(format!(
                "svd rank {k} outside 1..={}",
                h.min(w)
            ))),
        }
    }

    pub fn is_off(&self) -> bool {
        matches!(self, SvdConfig::Off)
    }
}

impl std::str::FromStr for SvdConfig {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("off") {
            return Ok(SvdConfig::Off);
        }
        let f: f64 = s.parse().map_err(|_| format!("svd energy must be a number or 'off', got {s:?}"))?;
        if f > 0.0 && f <= 1.0 {
            Ok(SvdConfig::Energy(f))
        } else {
            Err(format!("svd energy fraction {f} outside (0, 1]"))
        }
    }
}

/// Full decomposition of an m x n row-major matrix. Returns (u, sigma, v)
/// with u: m x r, v: n x r (both column-major by singular vector index r),
/// sigma descending, r = min(m, n).
pub struct Svd {
    pub u: Vec<f64>,
    pub sigma: Vec<f64>,
    pub v: Vec<f64>,
    pub m: usize,
    pub n: usize,
}

impl Svd {
    /// Reconstruct keeping the top `k` singular values.
    pub fn reconstruct(&self, k: usize) -> Vec<f64> {
        let r = self.sigma.len();
        let k = k.min(r);
        let mut out = vec![0.0; self.m * self.n];
        for t in 0..k {
            let s = self.sigma[t];
            for i in 0..self.m {
                let us = self.u[t * self.m + i] * s;
                for j in 0..self.n {
                    out[i * self.n + j] += us * self.v[t * self.n + j];
                }
            }
        }
        out
    }
}

pub fn svd(matrix: &[f64], m: usize, n: usize) -> Result<Svd> {
    if m < n {
        // decompose the transpose and swap factors
        let mut at = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                at[j * m + i] = matrix[i * n + j];
            }
        }
        let t = svd(&at, n, m)?;
        return Ok(Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
            m,
            n,
        });
    }

    // columns of A, and V accumulated from the applied rotations
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| matrix[i * n + j]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    // columns this small relative to the whole matrix are numerically zero
    // singular vectors; rotating them against each other never converges
    let total2: f64 = a.iter().flat_map(|col| col.iter()).map(|x| x * x).sum();
    let col_eps = total2 * 1e-26;

    let mut converged = false;
    let mut last_mass = 0.0;
    for _sweep in 0..MAX_SWEEPS {
        let mut max_ratio: f64 = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                let beta: f64 = a[q].iter().map(|x| x * x).sum();
                let gamma: f64 = a[p].iter().zip(a[q].iter()).map(|(x, y)| x * y).sum();
                let scale = (alpha * beta).sqrt();
                if scale <= 0.0 || alpha <= col_eps || beta <= col_eps {
                    continue;
                }
                let ratio = gamma.abs() / scale;
                max_ratio = max_ratio.max(ratio);
                if ratio <= CONVERGENCE_TOL {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (ap, aq) = (a[p][i], a[q][i]);
                    a[p][i] = c * ap - s * aq;
                    a[q][i] = s * ap + c * aq;
                }
                for i in 0..n {
                    let (vp, vq) = (v[p][i], v[q][i]);
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
            }
        }
        last_mass = max_ratio;
        if max_ratio <= CONVERGENCE_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(FlowError::SvdNoConvergence {
            sweeps: MAX_SWEEPS,
            mass: last_mass,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = a.iter().map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let mut u = vec![0.0; n * m];
    let mut sigma = vec![0.0; n];
    let mut vv = vec![0.0; n * n];
    for (t, &j) in order.iter().enumerate() {
        let s = norms[j];
        sigma[t] = s;
        let inv = if s > 0.0 { 1.0 / s } else { 0.0 };
        for i in 0..m {
            u[t * m + i] = a[j][i] * inv;
        }
        for i in 0..n {
            vv[t * n + i] = v[j][i];
        }
    }
    Ok(Svd {
        u,
        sigma,
        v: vv,
        m,
        n,
    })
}

/// Singular values of an H x W matrix tensor, descending.
pub fn singular_values<T: Scalar>(matrix: &Tensor<T>) -> Result<Vec<f64>> {
    let (h, w) = match *matrix.shape() {
        [h, w] => (h, w),
        _ => {
            return Err(FlowError::ShapeMismatch {
                context: "singular_values (want [H,W])".into(),
                expected: vec![2],
                got: matrix.shape().to_vec(),
            })
        }
    };
    let data: Vec<f64> = matrix.data().iter().map(|v| v.as_f64()).collect();
    Ok(svd(&data, h, w)?.sigma)
}

fn retained_rank(sigma: &[f64], cfg: SvdConfig) -> usize {
    match cfg {
        SvdConfig::Off => sigma.len(),
        SvdConfig::Rank(k) => k.min(sigma.len()),
        SvdConfig::Energy(f) => {
            let total: f64 = sigma.iter().map(|s| s * s).sum();
            if total <= 0.0 {
                return sigma.len();
            }
            let mut acc = 0.0;
            for (i, s) in sigma.iter().enumerate() {
                acc += s * s;
                if acc >= f * total - 1e-12 {
                    return i + 1;
                }
            }
            sigma.len()
        }
    }
}

/// Per-channel truncated-SVD reconstruction of a [C,H,W] image tensor.
pub fn svd_truncate<T: Scalar>(image: &Tensor<T>, cfg: &SvdConfig) -> Result<Tensor<T>> {
    let (c, h, w) = crate::reshape::dims3(image, "svd_truncate")?;
    cfg.validate(h, w)?;
    if cfg.is_off() {
        return Ok(image.clone());
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(c * hw);
    for ch in 0..c {
        let plane: Vec<f64> = image.data()[ch * hw..(ch + 1) * hw].iter().map(|v| v.as_f64()).collect();
        let dec = svd(&plane, h, w)?;
        let k = retained_rank(&dec.sigma, *cfg);
        let rec = dec.reconstruct(k);
        out.extend(rec.iter().map(|&v| T::from_f64(v)));
    }
    Tensor::new(vec![c, h, w], out)
}
