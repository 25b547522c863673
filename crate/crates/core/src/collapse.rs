//! Finite-size-scaling data collapse with a polynomial residue objective,
//! Nelder–Mead minimization and threshold-based uncertainty intervals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub p: f64,
    pub l: usize,
    pub value: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

impl ScanPoint {
    pub fn new(p: f64, l: usize, value: f64) -> Self {
        Self { p, l, value, stderr: 0.0, n_samples: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseOptions {
    pub poly_order: usize,
    /// Weight residuals by `1/stderr²` (points with zero stderr get weight 1).
    pub weighted: bool,
    pub threshold: f64,
    pub max_iterations: usize,
    /// Absolute spread of simplex values at which Nelder–Mead stops.
    pub tolerance: f64,
    pub nu_range: (f64, f64),
    pub grid: usize,
}

impl Default for CollapseOptions {
    fn default() -> Self {
        Self {
            poly_order: 12,
            weighted: false,
            threshold: 1.01,
            max_iterations: 10_000,
            tolerance: 1e-10,
            nu_range: (0.5, 1.5),
            grid: 101,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseResult {
    pub p_c: f64,
    pub nu: f64,
    pub eps_min: f64,
    pub p_c_lo: f64,
    pub p_c_hi: f64,
    pub nu_lo: f64,
    pub nu_hi: f64,
}

impl CollapseResult {
    pub fn p_c_interval(&self) -> (f64, f64) {
        (self.p_c_lo, self.p_c_hi)
    }

    pub fn nu_interval(&self) -> (f64, f64) {
        (self.nu_lo, self.nu_hi)
    }
}

/// Least-squares polynomial fit. Returns coefficients (ascending powers of
/// `x / scale`), the scale and the weighted sum of squared residuals.
pub fn polyfit(x: &[f64], y: &[f64], w: Option<&[f64]>, order: usize) -> Result<(Vec<f64>, f64, f64)> {
    let m = x.len();
    if m != y.len() || w.is_some_and(|w| w.len() != m) {
        return Err(Error::InvalidInput("mismatched fit inputs".into()));
    }
    if m < order + 1 {
        return Err(Error::Fit(format!("{m} points cannot determine a degree-{order} polynomial")));
    }
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let sw: Vec<f64> = (0..m).map(|i| w.map_or(1.0, |w| w[i].sqrt())).collect();
    let a = DMatrix::from_fn(m, order + 1, |i, j| sw[i] * (x[i] / scale).powi(j as i32));
    let b = DVector::from_fn(m, |i, _| sw[i] * y[i]);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-12 * (m.max(order + 1) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < order + 1 {
        return Err(Error::Fit(format!(
            "rank-deficient design matrix ({rank} < {}): insufficient or degenerate data",
            order + 1
        )));
    }
    let c = svd.solve(&b, tol).map_err(|e| Error::Fit(e.to_string()))?;
    let r = &a * &c - &b;
    Ok((c.iter().copied().collect(), scale, r.norm_squared()))
}

pub fn poly_eval(coeffs: &[f64], scale: f64, x: f64) -> f64 {
    let t = x / scale;
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

fn weights(points: &[ScanPoint], opts: &CollapseOptions) -> Option<Vec<f64>> {
    opts.weighted
        .then(|| points.iter().map(|p| if p.stderr > 0.0 { 1.0 / (p.stderr * p.stderr) } else { 1.0 }).collect())
}

/// Sum of squared residuals of the best polynomial fit to the rescaled data
/// `x = (p - p_c) L^{1/ν}`, `y = value`.
pub fn collapse_residue(points: &[ScanPoint], p_c: f64, nu: f64, opts: &CollapseOptions) -> Result<f64> {
    if !(nu > 0.0) || !nu.is_finite() || !p_c.is_finite() {
        return Err(Error::InvalidInput(format!("invalid scaling parameters p_c = {p_c}, nu = {nu}")));
    }
    if points.len() < opts.poly_order + 2 {
        return Err(Error::Fit(format!("need at least {} points, got {}", opts.poly_order + 2, points.len())));
    }
    let x: Vec<f64> = points.iter().map(|pt| (pt.p - p_c) * (pt.l as f64).powf(1.0 / nu)).collect();
    let y: Vec<f64> = points.iter().map(|pt| pt.value).collect();
    let w = weights(points, opts);
    Ok(polyfit(&x, &y, w.as_deref(), opts.poly_order)?.2)
}

fn sorted(points: &[ScanPoint]) -> Vec<ScanPoint> {
    let mut v = points.to_vec();
    v.sort_by(|a, b| {
        a.l.cmp(&b.l)
            .then(a.p.total_cmp(&b.p))
            .then(a.value.total_cmp(&b.value))
            .then(a.stderr.total_cmp(&b.stderr))
    });
    v
}

/// Objective used by the optimizer: infinite where the residue is undefined.
fn objective(points: &[ScanPoint], opts: &CollapseOptions, v: [f64; 2]) -> f64 {
    collapse_residue(points, v[0], v[1], opts).unwrap_or(f64::INFINITY)
}

/// Outcome of a single Nelder–Mead run.
#[derive(Clone, Copy, Debug)]
pub struct Simplex {
    pub best: [f64; 2],
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder–Mead in two dimensions with coefficients (1, 2, 0.5, 0.5).
pub fn nelder_mead<F: Fn([f64; 2]) -> f64>(f: F, start: [f64; 2], step: [f64; 2], tol: f64, max_iter: usize) -> Simplex {
    let mut s = [start, [start[0] + step[0], start[1]], [start[0], start[1] + step[1]]];
    let mut fs = s.map(&f);
    let mut it = 0;
    let comb = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    loop {
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&i, &j| fs[i].total_cmp(&fs[j]));
        s = idx.map(|i| s[i]);
        fs = idx.map(|i| fs[i]);
        let spread = fs[2] - fs[0];
        let size = (s[1][0] - s[0][0]).abs().max((s[1][1] - s[0][1]).abs()).max((s[2][0] - s[0][0]).abs()).max((s[2][1] - s[0][1]).abs());
        if fs[0].is_finite() && (spread <= tol || size < 1e-15) {
            return Simplex { best: s[0], value: fs[0], iterations: it, converged: true };
        }
        if it >= max_iter {
            return Simplex { best: s[0], value: fs[0], iterations: it, converged: false };
        }
        it += 1;
        let c = [(s[0][0] + s[1][0]) / 2.0, (s[0][1] + s[1][1]) / 2.0];
        let xr = comb(c, s[2], -1.0);
        let fr = f(xr);
        if fr < fs[0] {
            let xe = comb(c, s[2], -2.0);
            let fe = f(xe);
            if fe < fr {
                s[2] = xe;
                fs[2] = fe;
            } else {
                s[2] = xr;
                fs[2] = fr;
            }
        } else if fr < fs[1] {
            s[2] = xr;
            fs[2] = fr;
        } else {
            let (xc, fc) = if fr < fs[2] {
                let xc = comb(c, xr, 0.5);
                (xc, f(xc))
            } else {
                let xc = comb(c, s[2], 0.5);
                (xc, f(xc))
            };
            if fc < fs[2].min(fr) {
                s[2] = xc;
                fs[2] = fc;
            } else {
                for i in 1..3 {
                    s[i] = comb(s[0], s[i], 0.5);
                    fs[i] = f(s[i]);
                }
            }
        }
    }
}

fn distinct_sizes(points: &[ScanPoint]) -> usize {
    let mut ls: Vec<usize> = points.iter().map(|p| p.l).collect();
    ls.sort_unstable();
    ls.dedup();
    ls.len()
}

/// Minimizes the residue from a 5×5 grid of starts over the data's p range
/// and `opts.nu_range`, then fills in the uncertainty intervals.
pub fn fit_collapse(points: &[ScanPoint], opts: &CollapseOptions) -> Result<CollapseResult> {
    let pts = sorted(points);
    if distinct_sizes(&pts) < 3 {
        return Err(Error::Fit("collapse needs at least three distinct sizes".into()));
    }
    let (pmin, pmax) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), q| (a.min(q.p), b.max(q.p)));
    let range = (pmax - pmin).max(1e-6);
    let (nlo, nhi) = opts.nu_range;
    let mut best: Option<Simplex> = None;
    let mut best_failed: Option<Simplex> = None;
    for i in 0..5 {
        for j in 0..5 {
            let start = [pmin + range * (i as f64 + 0.5) / 5.0, nlo + (nhi - nlo) * j as f64 / 4.0];
            let run = nelder_mead(
                |v| objective(&pts, opts, v),
                start,
                [0.05 * range, 0.1 * (nhi - nlo).max(0.1)],
                opts.tolerance,
                opts.max_iterations,
            );
            let slot = if run.converged { &mut best } else { &mut best_failed };
            if slot.is_none_or(|b| run.value < b.value) {
                *slot = Some(run);
            }
        }
    }
    let Some(b) = best else {
        let f = best_failed.expect("at least one start");
        return Err(Error::NoConvergence {
            iterations: opts.max_iterations,
            best_pc: f.best[0],
            best_nu: f.best[1],
            best_value: f.value,
        });
    };
    if !b.value.is_finite() {
        return Err(Error::Fit("residue undefined everywhere on the start grid".into()));
    }
    let mut result = CollapseResult {
        p_c: b.best[0],
        nu: b.best[1],
        eps_min: b.value,
        p_c_lo: b.best[0],
        p_c_hi: b.best[0],
        nu_lo: b.best[1],
        nu_hi: b.best[1],
    };
    let ((plo, phi), (nlo, nhi)) = uncertainty_region(&pts, &mut result, opts)?;
    result.p_c_lo = plo;
    result.p_c_hi = phi;
    result.nu_lo = nlo;
    result.nu_hi = nhi;
    Ok(result)
}

/// Distance along `dir` from `center` at which the objective first exceeds
/// `level` (searching up to `cap`).
fn axis_reach<F: Fn([f64; 2]) -> f64>(f: &F, center: [f64; 2], dir: [f64; 2], level: f64, h0: f64, cap: f64) -> f64 {
    let at = |h: f64| f([center[0] + h * dir[0], center[1] + h * dir[1]]);
    let mut lo = 0.0;
    let mut hi = h0;
    while at(hi) <= level {
        lo = hi;
        hi *= 2.0;
        if hi > cap {
            return cap;
        }
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if at(mid) <= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

struct GridScan {
    box_p: (f64, f64),
    box_nu: (f64, f64),
    touches: bool,
    lowest: (f64, [f64; 2]),
}

fn scan<F: Fn([f64; 2]) -> f64 + Sync>(f: &F, center: [f64; 2], hw: [f64; 2], level: f64, n: usize) -> GridScan {
    use rayon::prelude::*;
    let coord = |i: usize, c: f64, h: f64| c - h + 2.0 * h * i as f64 / (n - 1) as f64;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| f([coord(i, center[0], hw[0]), coord(j, center[1], hw[1])])).collect())
        .collect();
    let mut out = GridScan {
        box_p: (center[0], center[0]),
        box_nu: (center[1], center[1]),
        touches: false,
        lowest: (f64::INFINITY, center),
    };
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let pt = [coord(i, center[0], hw[0]), coord(j, center[1], hw[1])];
            if v < out.lowest.0 {
                out.lowest = (v, pt);
            }
            if v <= level {
                out.box_p = (out.box_p.0.min(pt[0]), out.box_p.1.max(pt[0]));
                out.box_nu = (out.box_nu.0.min(pt[1]), out.box_nu.1.max(pt[1]));
                if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                    out.touches = true;
                }
            }
        }
    }
    out
}

/// Bounding box of `{residue ≤ threshold · eps_min}` from a grid scan around
/// the minimizer, refined once. If the scan finds a value below `eps_min`
/// the minimum in `result` is updated first.
pub fn uncertainty_region(
    points: &[ScanPoint],
    result: &mut CollapseResult,
    opts: &CollapseOptions,
) -> Result<((f64, f64), (f64, f64))> {
    let pts = sorted(points);
    let f = |v: [f64; 2]| objective(&pts, opts, v);
    let n = opts.grid.max(3);
    for _attempt in 0..3 {
        let center = [result.p_c, result.nu];
        if opts.threshold <= 1.0 {
            return Ok(((center[0], center[0]), (center[1], center[1])));
        }
        let level = opts.threshold * result.eps_min;
        let hp = axis_reach(&f, center, [1.0, 0.0], level, 1e-6, 1.0)
            .max(axis_reach(&f, center, [-1.0, 0.0], level, 1e-6, 1.0));
        let hn = axis_reach(&f, center, [0.0, 1.0], level, 1e-6, 2.0)
            .max(axis_reach(&f, center, [0.0, -1.0], level, 1e-6, 0.999 * center[1]));
        let mut hw = [5.0 * hp, (5.0 * hn).min(0.999 * center[1])];
        let mut coarse = scan(&f, center, hw, level, n);
        if coarse.touches {
            hw = [2.0 * hw[0], (2.0 * hw[1]).min(0.999 * center[1])];
            coarse = scan(&f, center, hw, level, n);
            if coarse.touches {
                return Err(Error::Fit("uncertainty region touches the widened scan boundary".into()));
            }
        }
        if coarse.lowest.0 < result.eps_min {
            relocate(result, &f, coarse.lowest.1, opts);
            continue;
        }
        // refine over the coarse box plus one coarse cell on each side
        let cell = [2.0 * hw[0] / (n - 1) as f64, 2.0 * hw[1] / (n - 1) as f64];
        let c2 = [0.5 * (coarse.box_p.0 + coarse.box_p.1), 0.5 * (coarse.box_nu.0 + coarse.box_nu.1)];
        let hw2 = [
            0.5 * (coarse.box_p.1 - coarse.box_p.0) + cell[0],
            (0.5 * (coarse.box_nu.1 - coarse.box_nu.0) + cell[1]).min(0.999 * c2[1]),
        ];
        let fine = scan(&f, c2, hw2, level, n);
        if fine.lowest.0 < result.eps_min {
            relocate(result, &f, fine.lowest.1, opts);
            continue;
        }
        let p = (fine.box_p.0.min(center[0]), fine.box_p.1.max(center[0]));
        let nu = (fine.box_nu.0.min(center[1]), fine.box_nu.1.max(center[1]));
        return Ok((p, nu));
    }
    Err(Error::Fit("minimum kept moving during the uncertainty scan".into()))
}

fn relocate<F: Fn([f64; 2]) -> f64>(result: &mut CollapseResult, f: &F, start: [f64; 2], opts: &CollapseOptions) {
    let step = [1e-3 * start[0].abs().max(1e-3), 1e-2 * start[1]];
    let run = nelder_mead(f, start, step, opts.tolerance, opts.max_iterations);
    let (best, value) = if run.value < f(start) { (run.best, run.value) } else { (start, f(start)) };
    result.p_c = best[0];
    result.nu = best[1];
    result.eps_min = value;
}

/// Crossing abscissae of two piecewise-linear curves sampled at the same
/// `p` values (sorted ascending).
pub fn crossings(p: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..p.len().saturating_sub(1) {
        let d0 = a[i] - b[i];
        let d1 = a[i + 1] - b[i + 1];
        if d0 == 0.0 {
            out.push(p[i]);
        } else if d0 * d1 < 0.0 {
            out.push(p[i] + (p[i + 1] - p[i]) * d0 / (d0 - d1));
        }
    }
    if let (Some(&pl), Some(&al), Some(&bl)) = (p.last(), a.last(), b.last()) {
        if al == bl && p.len() > 1 {
            out.push(pl);
        }
    }
    out
}

/// Curves keyed by size, each as `(p, value)` sorted by `p`.
pub fn curves_by_size(points: &[ScanPoint]) -> Vec<(usize, Vec<(f64, f64)>)> {
    let pts = sorted(points);
    let mut out: Vec<(usize, Vec<(f64, f64)>)> = Vec::new();
    for q in pts {
        match out.last_mut() {
            Some((l, v)) if *l == q.l => v.push((q.p, q.value)),
            _ => out.push((q.l, vec![(q.p, q.value)])),
        }
    }
    out
}

/// Crossing points of every pair of size curves, found on the p values the
/// pair shares.
pub fn pairwise_crossings(points: &[ScanPoint]) -> Vec<(usize, usize, Vec<f64>)> {
    let curves = curves_by_size(points);
    let mut out = Vec::new();
    for i in 0..curves.len() {
        for j in i + 1..curves.len() {
            let (li, ci) = &curves[i];
            let (lj, cj) = &curves[j];
            let mut p = Vec::new();
            let mut a = Vec::new();
            let mut b = Vec::new();
            for &(pi, vi) in ci {
                if let Some(&(_, vj)) = cj.iter().find(|(pj, _)| (pj - pi).abs() < 1e-12) {
                    p.push(pi);
                    a.push(vi);
                    b.push(vj);
                }
            }
            out.push((*li, *lj, crossings(&p, &a, &b)));
        }
    }
    out
}
