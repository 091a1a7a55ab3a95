//! PSD features from multicoset samples.
//!
//! Each coset row is transformed with an N_s-point DFT and phase-compensated
//! for its delay, which yields `V = A·S`: the P coset spectra are a known
//! mixture (the measurement matrix `A`, P×L) of the L spectral slices `S`,
//! each slice being one width-B segment of the Nyquist band. For a sparse
//! multiband signal only a few slices are active, so `S` is recovered with
//! simultaneous orthogonal matching pursuit (SOMP) and the slice powers are
//! folded into per-subband features.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureVector};
use crate::linalg::CMatrix;
use crate::mcs::{measurement_matrix, SampleMatrix};

/// Columns whose component orthogonal to the current basis falls below this
/// fraction of their norm are treated as linearly dependent.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSliceEstimate {
    pub support: BTreeSet<usize>,
    /// Estimated power per slice, zero off the support.
    pub powers: Vec<f64>,
    /// `‖R‖²/‖V‖²` before the first and after every accepted selection.
    pub residual_history: Vec<f64>,
    /// Set when a selected column was linearly dependent on the support and
    /// recovery stopped early.
    pub truncated: bool,
}

/// Per-row N_s-point DFT of the sample matrix, without delay compensation.
pub(crate) fn row_dfts(y: &SampleMatrix) -> CMatrix {
    let ns = y.samples_per_coset();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(ns);
    let mut out = CMatrix::zeros(y.rows(), ns);
    for p in 0..y.rows() {
        let row = out.row_mut(p);
        for (o, &v) in row.iter_mut().zip(y.row(p)) {
            *o = Complex64::new(v, 0.0);
        }
        fft.process(row);
    }
    out
}

/// Delay-compensated coset spectra:
/// `V[p][k] = DFT(Y[p])[k] · exp(-j·2π·c_p·k / (L·N_s))`.
pub fn coset_spectra(y: &SampleMatrix) -> Result<CMatrix> {
    let ns = y.samples_per_coset();
    if ns < 2 {
        return Err(Error::InvalidArgument("coset spectra need N_s >= 2".into()));
    }
    let l = y.pattern().decimation();
    let mut v = row_dfts(y);
    let denom = (l * ns) as f64;
    for (p, &c) in y.pattern().cosets().iter().enumerate() {
        for (k, z) in v.row_mut(p).iter_mut().enumerate() {
            let phase = -2.0 * PI * ((c * k) % (l * ns)) as f64 / denom;
            *z *= Complex64::from_polar(1.0, phase);
        }
    }
    Ok(v)
}

fn dot_h(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Removes from `w` its components along the orthonormal vectors `basis`.
fn project_out(w: &mut [Complex64], basis: &[Vec<Complex64>]) {
    for q in basis {
        let h = dot_h(q, w);
        for (wi, qi) in w.iter_mut().zip(q) {
            *wi -= h * qi;
        }
    }
}

/// Conjugate partner of slice `c` among `l` slices. For a real input, DFT bin
/// `k + c·N_s` of the Nyquist-rate spectrum mirrors to `(N_s - k) + (L - 1 - c)·N_s`,
/// so slice `c` pairs with `L - 1 - c` (subband `m` is slices `m - 1` and `L - m`).
fn mirror_slice(l: usize, c: usize) -> usize {
    l - 1 - c
}

/// Greedy SOMP over conjugate slice pairs.
///
/// Each iteration scores every unselected pair `{l, L - 1 - l}` by the
/// residual energy it would remove, `‖P R‖²_F` with `P` the projector onto
/// the pair's columns after orthogonalizing them against the current support,
/// adds the best pair, and projects `V` off the enlarged support. Recovery stops once the support
/// holds `k_max` slices (a pair that would overflow it is not added), or the
/// relative residual energy is at most `tol`.
pub fn somp(v: &CMatrix, a: &CMatrix, k_max: usize, tol: f64) -> Result<SpectralSliceEstimate> {
    let p = a.rows();
    let l = a.cols();
    let ns = v.cols();
    if v.rows() != p {
        return Err(Error::InvalidArgument(format!(
            "spectra have {} rows but the measurement matrix has {p}",
            v.rows()
        )));
    }
    if k_max > p {
        return Err(Error::InvalidArgument(format!("k_max {k_max} exceeds coset count {p}")));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidArgument(format!("tol must lie in (0, 1), got {tol}")));
    }

    let energy = v.frobenius_sq();
    let mut estimate = SpectralSliceEstimate {
        support: BTreeSet::new(),
        powers: vec![0.0; l],
        residual_history: vec![if energy > 0.0 { 1.0 } else { 0.0 }],
        truncated: false,
    };
    if energy == 0.0 {
        return Ok(estimate);
    }

    // Columns of A and the residual stored column-major (per DFT bin).
    let columns: Vec<Vec<Complex64>> = (0..l).map(|c| a.column(c)).collect();
    let mut residual: Vec<Vec<Complex64>> = (0..ns).map(|k| v.column(k)).collect();
    let rhs = residual.clone();

    // Incremental QR of the selected columns: A_S = Q·Rf.
    let mut order: Vec<usize> = Vec::new();
    let mut q_basis: Vec<Vec<Complex64>> = Vec::new();
    let mut r_factor: Vec<Vec<Complex64>> = Vec::new(); // r_factor[j][i] = Rf[i][j]

    'outer: while order.len() < k_max {
        let rel = *estimate.residual_history.last().unwrap();
        if rel <= tol {
            break;
        }
        let mut best: Option<(usize, f64)> = None;
        for c in 0..l {
            let mirror = mirror_slice(l, c);
            if estimate.support.contains(&c) || mirror < c {
                continue;
            }
            let members = if mirror == c { vec![c] } else { vec![c, mirror] };
            let mut basis: Vec<Vec<Complex64>> = Vec::new();
            for j in members {
                let mut w = columns[j].clone();
                let col_norm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                project_out(&mut w, &q_basis);
                project_out(&mut w, &basis);
                let norm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if norm > RANK_TOL * col_norm {
                    basis.push(w.into_iter().map(|z| z / norm).collect());
                }
            }
            let score: f64 = basis
                .iter()
                .map(|b| residual.iter().map(|r| dot_h(b, r).norm_sqr()).sum::<f64>())
                .sum();
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((c, score));
            }
        }
        let Some((pick, score)) = best else { break };
        if score <= 0.0 {
            break;
        }
        let mirror = mirror_slice(l, pick);
        let mut pair = vec![pick];
        if mirror != pick && !estimate.support.contains(&mirror) {
            pair.push(mirror);
        }
        if order.len() + pair.len() > k_max {
            break;
        }

        for c in pair {
            let col = &columns[c];
            let col_norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let mut w = col.clone();
            let mut coeffs = vec![Complex64::new(0.0, 0.0); q_basis.len()];
            // two Gram-Schmidt passes
            for _ in 0..2 {
                for (i, q) in q_basis.iter().enumerate() {
                    let h = dot_h(q, &w);
                    coeffs[i] += h;
                    for (wi, qi) in w.iter_mut().zip(q) {
                        *wi -= h * qi;
                    }
                }
            }
            let norm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm <= RANK_TOL * col_norm {
                estimate.truncated = true;
                break 'outer;
            }
            for wi in &mut w {
                *wi /= norm;
            }
            coeffs.push(Complex64::new(norm, 0.0));
            for r in residual.iter_mut() {
                let h = dot_h(&w, r);
                for (ri, wi) in r.iter_mut().zip(&w) {
                    *ri -= h * wi;
                }
            }
            q_basis.push(w);
            r_factor.push(coeffs);
            order.push(c);
            estimate.support.insert(c);
        }
        let rem: f64 = residual.iter().flatten().map(|z| z.norm_sqr()).sum();
        estimate.residual_history.push(rem / energy);
    }

    if estimate.truncated {
        // part of the last pair may have been accepted
        let rem: f64 = residual.iter().flatten().map(|z| z.norm_sqr()).sum();
        estimate.residual_history.push(rem / energy);
    }
    if order.is_empty() {
        return Ok(estimate);
    }

    // Least-squares slice coefficients: Rf·S = Qᴴ·V, solved per bin.
    let kk = order.len();
    let mut power = vec![0.0; kk];
    for b in &rhs {
        let c: Vec<Complex64> = q_basis.iter().map(|q| dot_h(q, b)).collect();
        let mut s = vec![Complex64::new(0.0, 0.0); kk];
        for i in (0..kk).rev() {
            let mut acc = c[i];
            for j in i + 1..kk {
                acc -= r_factor[j][i] * s[j];
            }
            s[i] = acc / r_factor[i][i];
        }
        for (pw, si) in power.iter_mut().zip(&s) {
            *pw += si.norm_sqr();
        }
    }
    for (&slice, pw) in order.iter().zip(power) {
        estimate.powers[slice] = pw / ns as f64;
    }
    Ok(estimate)
}

/// Folds slice powers into subband features: `f_m = p[m-1] + p[L-m]`.
pub fn fold_slices(powers: &[f64]) -> Result<Vec<f64>> {
    let l = powers.len();
    if l == 0 || l % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "slice count must be even (L = 2M), got {l}"
        )));
    }
    let m = l / 2;
    Ok((1..=m).map(|band| powers[band - 1] + powers[l - band]).collect())
}

/// Full PSD feature pipeline: coset spectra, SOMP, folding to M = L/2 subbands.
pub fn psd_features(y: &SampleMatrix, k_max: usize, tol: f64) -> Result<FeatureVector> {
    let a = measurement_matrix(y.pattern());
    let v = coset_spectra(y)?;
    let est = somp(&v, &a, k_max, tol)?;
    Ok(FeatureVector::new(fold_slices(&est.powers)?, FeatureKind::Psd))
}
