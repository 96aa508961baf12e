//! Independent checks on constructed potentials and solutions: power-law
//! fits of the Prüfer radius, oscillatory partial sums, ℓ² tails, and a
//! truncated Jacobi-matrix eigensolver (Sturm bisection plus inverse
//! iteration) that sees the prescribed energies as eigenvalues.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{BoundaryAngle, EnergyPoint, Potential, SolutionTrace};
use crate::prufer::{transfer_step, SolutionPair};

/// Least-squares fit `ln R ≈ slope · ln(n - b) + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayReport {
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
    /// Smallest and largest `n` used.
    pub sample_range: (u64, u64),
    pub samples: usize,
}

/// Ordinary least squares `y ≈ a x + c`, returning `(a, c, rms residual)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    (slope, intercept, (rss / n).sqrt())
}

/// Fitted decay exponent of the Prüfer radius along a trace.
pub fn decay_exponent(trace: &SolutionTrace, b: i64) -> Result<DecayReport> {
    let samples: Vec<_> = trace.samples.iter().filter(|s| s.n as i64 > b).collect();
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
        return Err(Error::InsufficientSpan { samples: 0, span: 0.0 });
    };
    let span = (last.n as i64 - b) as f64 / (first.n as i64 - b) as f64;
    if samples.len() < 50 || span < 10.0 {
        return Err(Error::InsufficientSpan { samples: samples.len(), span });
    }
    let xs: Vec<f64> = samples.iter().map(|s| ((s.n as i64 - b) as f64).ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.log_r).collect();
    let (slope, intercept, residual_rms) = linear_fit(&xs, &ys);
    Ok(DecayReport { slope, intercept, residual_rms, sample_range: (first.n, last.n), samples: samples.len() })
}

/// `sup_n |S(n)|` and `sup_n |S(n)| (n0 - b)` for partial sums starting at `n0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatoryReport {
    pub sup_abs_partial_sum: f64,
    pub certified_c: f64,
    pub terms: usize,
}

fn dense_from(trace: &SolutionTrace, n0: u64) -> Result<&[crate::model::TraceSample]> {
    let window = trace.window(n0, u64::MAX);
    match window.first() {
        Some(s) if s.n == n0 => {}
        _ => return Err(Error::DecimatedTrace(n0)),
    }
    for pair in window.windows(2) {
        if pair[1].n != pair[0].n + 1 {
            // Dense prefix only: stop at the first gap past the start.
            let end = pair[0].n;
            let cut = window.partition_point(|s| s.n <= end);
            return Ok(&window[..cut]);
        }
    }
    Ok(window)
}

fn partial_sum_report(terms: impl Iterator<Item = f64>, b: i64, n0: u64) -> OscillatoryReport {
    let mut sum = 0.0;
    let mut sup: f64 = 0.0;
    let mut count = 0;
    for t in terms {
        sum += t;
        sup = sup.max(sum.abs());
        count += 1;
    }
    OscillatoryReport { sup_abs_partial_sum: sup, certified_c: sup * (n0 as i64 - b) as f64, terms: count }
}

/// Partial sums of `sin 2πθ(l)/(l - b)` from `n0` over the dense part of the
/// trace that starts at `n0`.
pub fn oscillatory_sum(trace: &SolutionTrace, b: i64, n0: u64) -> Result<OscillatoryReport> {
    let dense = dense_from(trace, n0)?;
    if dense.len() < 2 {
        return Err(Error::DecimatedTrace(n0));
    }
    let terms = dense.iter().map(|s| (2.0 * PI * s.phase.frac()).sin() / (s.n as i64 - b) as f64);
    Ok(partial_sum_report(terms, b, n0))
}

/// Cross-term variant `sin 2πθ(l) sin 2πθ_j(l)/(l - b)`, evaluated through
/// `(cos 2π(θ - θ_j) - cos 2π(θ + θ_j))/2`.
pub fn oscillatory_cross_sum(
    trace: &SolutionTrace,
    other: &SolutionTrace,
    b: i64,
    n0: u64,
) -> Result<OscillatoryReport> {
    let a = dense_from(trace, n0)?;
    let c = dense_from(other, n0)?;
    let len = a.len().min(c.len());
    if len < 2 {
        return Err(Error::DecimatedTrace(n0));
    }
    let terms = a[..len].iter().zip(&c[..len]).map(|(x, y)| {
        debug_assert_eq!(x.n, y.n);
        let (t, tj) = (x.phase.frac(), y.phase.frac());
        0.5 * ((2.0 * PI * (t - tj)).cos() - (2.0 * PI * (t + tj)).cos()) / (x.n as i64 - b) as f64
    });
    Ok(partial_sum_report(terms, b, n0))
}

/// ℓ² summary of one solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2Report {
    pub total: f64,
    /// Share of `Σ u²` from sites in `[last/10, last]`.
    pub last_decade_fraction: f64,
    /// Fitted exponent of the envelope of `|u(n)|` against `n`.
    pub abs_exponent: f64,
}

/// Exact running sums of `u(n)²`, split at the start of the last decade.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2Accumulator {
    pub horizon: u64,
    pub total: f64,
    pub last_decade: f64,
}

impl L2Accumulator {
    pub fn new(horizon: u64) -> Self {
        L2Accumulator { horizon, total: 0.0, last_decade: 0.0 }
    }

    #[inline]
    pub fn add(&mut self, n: u64, u: f64) {
        let sq = u * u;
        self.total += sq;
        if n >= self.horizon / 10 {
            self.last_decade += sq;
        }
    }

    pub fn fraction(&self) -> f64 {
        if self.total > 0.0 {
            self.last_decade / self.total
        } else {
            0.0
        }
    }
}

/// Exponent of the running envelope of `|u|`: maxima over log-spaced bins
/// (ten per decade) fitted against `ln n`.
pub fn envelope_exponent(samples: &[(u64, f64)]) -> f64 {
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut current: Option<(i64, f64, f64)> = None;
    for &(n, u) in samples.iter().filter(|s| s.0 > 0) {
        let x = (n as f64).ln();
        let bin = (x / (10f64.ln() / 10.0)).floor() as i64;
        match current {
            Some((b, _, m)) if b == bin => current = Some((b, x, m.max(u.abs()))),
            _ => {
                if let Some((_, bx, m)) = current {
                    bins.push((bx, m));
                }
                current = Some((bin, x, u.abs()));
            }
        }
    }
    if let Some((_, bx, m)) = current {
        bins.push((bx, m));
    }
    let pts: Vec<(f64, f64)> = bins.into_iter().filter(|b| b.1 > 0.0).map(|(x, m)| (x, m.ln())).collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    linear_fit(&xs, &ys).0
}

/// ℓ² report from dense samples `(n, u(n))` covering every site.
pub fn l2_report(samples: &[(u64, f64)]) -> L2Report {
    let last = samples.last().map(|s| s.0).unwrap_or(0);
    let mut acc = L2Accumulator::new(last);
    for &(n, u) in samples {
        acc.add(n, u);
    }
    L2Report { total: acc.total, last_decade_fraction: acc.fraction(), abs_exponent: envelope_exponent(samples) }
}

/// ℓ² report for decimated samples combined with exact running sums.
pub fn l2_report_with_sums(samples: &[(u64, f64)], sums: &L2Accumulator) -> L2Report {
    L2Report { total: sums.total, last_decade_fraction: sums.fraction(), abs_exponent: envelope_exponent(samples) }
}

// ---------------------------------------------------------------------------
// Truncated Jacobi matrix

/// Symmetric tridiagonal matrix with diagonal `diag` and off-diagonal `off`
/// (`off.len() == diag.len() - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Self {
        assert_eq!(off.len() + 1, diag.len());
        Tridiagonal { diag, off }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Number of eigenvalues strictly below `x` (negative pivots of the
    /// `LDLᵀ` factorisation of `T - x`).
    pub fn count_below(&self, x: f64) -> usize {
        let tiny = f64::MIN_POSITIVE.sqrt();
        let mut count = 0;
        let mut q = self.diag[0] - x;
        for i in 0..self.diag.len() {
            if i > 0 {
                q = self.diag[i] - x - self.off[i - 1] * self.off[i - 1] / q;
            }
            if q == 0.0 {
                q = -tiny;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Gershgorin interval containing the spectrum.
    pub fn bounds(&self) -> (f64, f64) {
        let n = self.diag.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 } + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// The `j`-th smallest eigenvalue (0-based) by bisection.
    pub fn eigenvalue(&self, j: usize) -> f64 {
        let (mut lo, mut hi) = self.bounds();
        lo -= 1e-12;
        hi += 1e-12;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > j {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Every eigenvalue in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.eigenvalue(j)).collect()
    }

    /// Eigenvalue closest to `x`.
    pub fn nearest_eigenvalue(&self, x: f64) -> f64 {
        let below = self.count_below(x);
        let mut best = f64::NAN;
        for j in [below.checked_sub(1), (below < self.len()).then_some(below)].into_iter().flatten() {
            let lambda = self.eigenvalue(j);
            if best.is_nan() || (lambda - x).abs() < (best - x).abs() {
                best = lambda;
            }
        }
        best
    }

    /// `(T - shift) y`.
    pub fn apply_shifted(&self, x: &[f64], shift: f64) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut y = (self.diag[i] - shift) * x[i];
                if i > 0 {
                    y += self.off[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    y += self.off[i] * x[i + 1];
                }
                y
            })
            .collect()
    }

    /// Solves `(T - shift) x = rhs` by Gaussian elimination with partial
    /// pivoting; zero pivots are nudged to a tiny value.
    pub fn solve_shifted(&self, shift: f64, rhs: &[f64]) -> Vec<f64> {
        let n = self.len();
        let tiny = 1e-300_f64.max(f64::EPSILON * self.bounds().1.abs().max(1.0) * 1e-3);
        // Rows hold (sub, diag, sup, sup2) after pivoting.
        let mut d: Vec<f64> = self.diag.iter().map(|a| a - shift).collect();
        let mut du: Vec<f64> = self.off.clone();
        du.push(0.0);
        let mut du2 = vec![0.0; n];
        let mut dl: Vec<f64> = self.off.clone();
        let mut b = rhs.to_vec();
        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    d[i] = tiny;
                }
                let f = dl[i] / d[i];
                d[i + 1] -= f * du[i];
                b[i + 1] -= f * b[i];
                dl[i] = 0.0;
            } else {
                // Swap rows i and i + 1.
                let f = d[i] / dl[i];
                d[i] = dl[i];
                let tmp = d[i + 1];
                d[i + 1] = du[i] - f * tmp;
                du[i] = tmp;
                if i + 1 < n - 1 {
                    du2[i] = du[i + 1];
                    du[i + 1] = -f * du2[i];
                }
                b.swap(i, i + 1);
                b[i + 1] -= f * b[i];
            }
        }
        if d[n - 1] == 0.0 {
            d[n - 1] = tiny;
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = b[i];
            if i + 1 < n {
                s -= du[i] * x[i + 1];
            }
            if i + 2 < n {
                s -= du2[i] * x[i + 2];
            }
            x[i] = s / d[i];
        }
        x
    }

    /// Unit eigenvector for an eigenvalue estimate `lambda`, from a fixed
    /// deterministic start vector.
    pub fn inverse_iteration(&self, lambda: f64, iterations: usize) -> Vec<f64> {
        let n = self.len();
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64 + 1.0) * 0.618_033_988_749_895).fract()).collect();
        normalize(&mut x);
        for _ in 0..iterations {
            let mut y = self.solve_shifted(lambda, &x);
            normalize(&mut y);
            x = y;
        }
        x
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn normalize(x: &mut [f64]) {
    let n = norm(x);
    if n > 0.0 {
        let max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // Rescale first to avoid overflow in the squared norm.
        if !n.is_finite() {
            x.iter_mut().for_each(|v| *v /= max);
            let n = norm(x);
            x.iter_mut().for_each(|v| *v /= n);
        } else {
            x.iter_mut().for_each(|v| *v /= n);
        }
    }
}

/// First lattice site of the truncated problem: 1, or 2 when `θ = 0` forces
/// `u(1) = 0`.
fn first_site(theta: BoundaryAngle) -> u64 {
    if theta.radians() == 0.0 {
        2
    } else {
        1
    }
}

/// `M × M` Jacobi matrix of `Δ + V` on the half line with the boundary
/// condition folded into the first diagonal entry.
///
/// `θ = π/2` is Dirichlet (`u(0) = 0`); other `θ` add `cot θ` from
/// `u(0) = u(1) cot θ`; `θ = 0` shifts the lattice to start at `n = 2`
/// with `u(1) = 0`.
pub fn jacobi_matrix(v: &Potential, theta: BoundaryAngle, m: usize) -> Result<Tridiagonal> {
    if m < 1 {
        return Err(Error::Size("truncation size must be positive".into()));
    }
    let first = first_site(theta);
    let needed = first + m as u64;
    if needed > v.horizon() {
        return Err(Error::Size(format!("truncation {m} needs sites up to {needed} beyond horizon {}", v.horizon())));
    }
    let values = v.values(needed)?;
    let mut diag: Vec<f64> = values[first as usize..needed as usize].to_vec();
    let t = theta.radians();
    if first == 1 && (t - PI / 2.0).abs() > 0.0 {
        diag[0] += t.cos() / t.sin();
    }
    Ok(Tridiagonal::new(diag, vec![1.0; m - 1]))
}

/// Exact solution `u(0..=last)` of `Hu = Eu` with boundary angle `θ`, by the
/// three-term recursion.
pub fn solution_by_transfer(v: &Potential, theta: BoundaryAngle, energy: f64, last: u64) -> Result<Vec<f64>> {
    if last > v.horizon() {
        return Err(Error::Size(format!("solution up to {last} needs V beyond horizon {}", v.horizon())));
    }
    let (s, c) = theta.radians().sin_cos();
    let mut out = Vec::with_capacity(last as usize + 1);
    out.push(c);
    if last == 0 {
        return Ok(out);
    }
    out.push(s);
    let mut pair = SolutionPair::new(c, s);
    for (n, vn) in v.iter().skip(1).take(last as usize - 1) {
        debug_assert!(n >= 1);
        pair = transfer_step(pair, vn, energy);
        out.push(pair.u_cur);
    }
    Ok(out)
}

/// Result of comparing one constructed eigenfunction with the truncated matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSpectrum {
    pub energy: f64,
    pub nearest_eigenvalue: f64,
    pub eigenvector_overlap: f64,
    /// `‖(H_M - E) u‖ / ‖u‖`.
    pub residual_norm: f64,
    /// `|u(M+1)| / ‖u‖`, the only row where `u` fails the truncated equation.
    pub boundary_term: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReport {
    pub truncation: usize,
    pub targets: Vec<TargetSpectrum>,
}

/// Nearest eigenvalue, eigenvector overlap and residual for each target, each
/// with its own boundary angle.
pub fn truncated_spectrum(
    v: &Potential,
    targets: &[(EnergyPoint, BoundaryAngle)],
    m: usize,
) -> Result<SpectralReport> {
    let mut out = Vec::with_capacity(targets.len());
    for &(ep, theta) in targets {
        let matrix = jacobi_matrix(v, theta, m)?;
        let first = first_site(theta) as usize;
        let full = solution_by_transfer(v, theta, ep.energy(), (first + m) as u64)?;
        let mut u: Vec<f64> = full[first..first + m].to_vec();
        let tail = full[first + m];
        let scale = u.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        u.iter_mut().for_each(|x| *x /= scale);
        let tail = tail / scale;
        let unorm = norm(&u);

        let lambda = matrix.nearest_eigenvalue(ep.energy());
        let vec = matrix.inverse_iteration(lambda, 4);
        let dot: f64 = vec.iter().zip(&u).map(|(a, b)| a * b).sum();
        let residual = norm(&matrix.apply_shifted(&u, ep.energy())) / unorm;
        out.push(TargetSpectrum {
            energy: ep.energy(),
            nearest_eigenvalue: lambda,
            eigenvector_overlap: (dot.abs() / unorm).min(1.0),
            residual_norm: residual,
            boundary_term: tail.abs() / unorm,
        });
    }
    Ok(SpectralReport { truncation: m, targets: out })
}
