//! Minima, saddles and scans of the variational norm.
//!
//! All searches run in the coordinates of the model's free Bloch components
//! (one to three of them) inside the unit ball. The optimizers are written
//! against the small [`Objective`] trait so the analytic double well used in
//! tests and the variational norm share the same code path.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::opalg::BlochVector;
use crate::varnorm::NormEvaluator;

/// Smooth scalar function on a convex domain.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> Result<f64>;

    /// Radius of the ball domain, or `None` when unconstrained.
    fn radius(&self) -> Option<f64> {
        Some(1.0)
    }

    fn fd_step(&self) -> f64 {
        1e-5
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let h = self.fd_step();
        let mut g = vec![0.0; x.len()];
        let f0 = self.value(x)?;
        for k in 0..x.len() {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[k] += h;
            m[k] -= h;
            g[k] = match (self.contains(&p), self.contains(&m)) {
                (true, true) => (self.value(&p)? - self.value(&m)?) / (2.0 * h),
                (true, false) => (self.value(&p)? - f0) / h,
                (false, true) => (f0 - self.value(&m)?) / h,
                (false, false) => 0.0,
            };
        }
        Ok(g)
    }

    fn contains(&self, x: &[f64]) -> bool {
        match self.radius() {
            Some(r) => norm(x) <= r,
            None => true,
        }
    }

    fn project(&self, x: &mut [f64]) {
        if let Some(r) = self.radius() {
            let n = norm(x);
            if n > r {
                x.iter_mut().for_each(|v| *v *= r / n);
            }
        }
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The variational norm restricted to a model's free components.
pub struct RestrictedNorm<'a> {
    ev: &'a NormEvaluator,
    axes: Vec<usize>,
}

impl<'a> RestrictedNorm<'a> {
    pub fn new(ev: &'a NormEvaluator) -> Self {
        RestrictedNorm {
            axes: ev.model().restriction.free_axes(),
            ev,
        }
    }

    pub fn to_bloch(&self, x: &[f64]) -> BlochVector {
        let mut a = [0.0; 3];
        for (k, &ax) in self.axes.iter().enumerate() {
            a[ax] = x[k];
        }
        BlochVector::from_array(a)
    }

    pub fn from_bloch(&self, a: BlochVector) -> Vec<f64> {
        let arr = a.to_array();
        self.axes.iter().map(|&k| arr[k]).collect()
    }
}

impl Objective for RestrictedNorm<'_> {
    fn dim(&self) -> usize {
        self.axes.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let mut a = self.to_bloch(x);
        // FD probes may graze the sphere by rounding
        let n = a.norm();
        if n > 1.0 && n < 1.0 + 1e-9 {
            a = BlochVector::new(a.x / n, a.y / n, a.z / n);
        }
        Ok(self.ev.f_v(a)?.value)
    }
}

/// Knobs of the local optimizer and multi-start driver.
#[derive(Clone, Debug, PartialEq)]
pub struct MinimizeOptions {
    /// Start lattice points per free axis (13 for three axes, 41 for two).
    pub starts_per_axis: Option<usize>,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub dedup_tol: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            starts_per_axis: None,
            grad_tol: 1e-8,
            max_iter: 10_000,
            dedup_tol: 1e-3,
        }
    }
}

impl MinimizeOptions {
    fn starts_for(&self, dim: usize) -> usize {
        self.starts_per_axis.unwrap_or(match dim {
            3 => 13,
            2 => 41,
            _ => 41,
        })
    }
}

/// Outcome of a single local minimization.
#[derive(Clone, Debug)]
pub struct LocalMin {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Projected gradient norm `|x - P(x - g)|`; equals `|g|` in the interior.
fn projected_grad_norm<O: Objective + ?Sized>(obj: &O, x: &[f64], g: &[f64]) -> f64 {
    let mut y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    obj.project(&mut y);
    dist(x, &y)
}

/// Quasi-Newton (BFGS) descent with Armijo backtracking and projection onto
/// the domain; falls back to steepest descent whenever the BFGS direction is
/// not a descent direction.
pub fn local_minimize<O: Objective + ?Sized>(
    obj: &O,
    start: &[f64],
    opts: &MinimizeOptions,
) -> Result<LocalMin> {
    let n = obj.dim();
    let mut x = start.to_vec();
    obj.project(&mut x);
    let mut f = obj.value(&x)?;
    let mut g = obj.gradient(&x)?;
    let mut hinv = identity_matrix(n);
    let mut iterations = 0;
    let mut stalled = 0;
    while iterations < opts.max_iter {
        let pg = projected_grad_norm(obj, &x, &g);
        if pg < opts.grad_tol {
            return Ok(LocalMin {
                value: f,
                grad_norm: pg,
                iterations,
                converged: true,
                x,
            });
        }
        iterations += 1;
        let mut dir: Vec<f64> = (0..n).map(|i| -dot(&hinv[i], &g)).collect();
        if dot(&dir, &g) >= 0.0 {
            hinv = identity_matrix(n);
            dir = g.iter().map(|v| -v).collect();
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut y: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            obj.project(&mut y);
            let fy = obj.value(&y)?;
            let decrease = dot(
                &g,
                &y.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>(),
            );
            if fy <= f + 1e-4 * decrease.min(0.0) && fy <= f {
                accepted = Some((y, fy));
                break;
            }
            t *= 0.5;
        }
        let Some((y, fy)) = accepted else {
            // no progress along either direction: at the noise floor
            if hinv != identity_matrix(n) {
                hinv = identity_matrix(n);
                continue;
            }
            stalled += 1;
            if stalled > 2 {
                break;
            }
            continue;
        };
        let gy = obj.gradient(&y)?;
        let s: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gy.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-16 * norm(&s) * norm(&yv) && sy > 0.0 {
            bfgs_update(&mut hinv, &s, &yv, sy);
        } else {
            hinv = identity_matrix(n);
        }
        if norm(&s) < 1e-15 {
            stalled += 1;
            if stalled > 2 {
                x = y;
                f = fy;
                g = gy;
                break;
            }
        } else {
            stalled = 0;
        }
        x = y;
        f = fy;
        g = gy;
    }
    let pg = projected_grad_norm(obj, &x, &g);
    Ok(LocalMin {
        value: f,
        grad_norm: pg,
        iterations,
        converged: pg < opts.grad_tol,
        x,
    })
}

fn identity_matrix(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// Symmetric FD Hessian with step `h`.
pub fn hessian<O: Objective + ?Sized>(obj: &O, x: &[f64], h: f64) -> Result<Vec<Vec<f64>>> {
    let n = x.len();
    let mut out = vec![vec![0.0; n]; n];
    let f0 = obj.value(x)?;
    let at = |d: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(k, v) in d {
            y[k] += v;
        }
        obj.value(&y)
    };
    for i in 0..n {
        out[i][i] = (at(&[(i, h)])? - 2.0 * f0 + at(&[(i, -h)])?) / (h * h);
        for j in 0..i {
            let v = (at(&[(i, h), (j, h)])? - at(&[(i, h), (j, -h)])? - at(&[(i, -h), (j, h)])?
                + at(&[(i, -h), (j, -h)])?)
                / (4.0 * h * h);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    Ok(out)
}

/// Eigenvalues and eigenvectors (columns) of a small symmetric matrix by
/// cyclic Jacobi rotations, eigenvalues ascending.
pub fn symmetric_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v = identity_matrix(n);
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| m[i][i].total_cmp(&m[j][j]));
    let vals = idx.iter().map(|&i| m[i][i]).collect();
    let vecs = idx
        .iter()
        .map(|&i| (0..n).map(|k| v[k][i]).collect())
        .collect();
    (vals, vecs)
}

fn start_lattice(dim: usize, per_axis: usize) -> Vec<Vec<f64>> {
    let coord = |i: usize| {
        if per_axis == 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (per_axis - 1) as f64
        }
    };
    let mut out = vec![vec![]];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..per_axis).map(move |i| {
                    let mut q = p.clone();
                    q.push(coord(i));
                    q
                })
            })
            .collect();
    }
    out.into_iter().filter(|p| norm(p) <= 1.0 + 1e-12).collect()
}

/// Multi-start minimization returning deduplicated minima sorted by value.
pub fn find_minima_obj<O: Objective + ?Sized>(
    obj: &O,
    opts: &MinimizeOptions,
) -> Result<Vec<LocalMin>> {
    let starts = start_lattice(obj.dim(), opts.starts_for(obj.dim()));
    let results: Vec<Result<LocalMin>> = starts
        .par_iter()
        .map(|s| refine_to_minimum(obj, s, opts))
        .collect();
    let mut found: Vec<LocalMin> = Vec::new();
    let mut failed: Vec<LocalMin> = Vec::new();
    for r in results {
        let m = r?;
        if m.converged {
            found.push(m);
        } else {
            failed.push(m);
        }
    }
    found.sort_by(|a, b| a.value.total_cmp(&b.value));
    let mut minima: Vec<LocalMin> = Vec::new();
    for m in found {
        if !minima.iter().any(|k| dist(&k.x, &m.x) < opts.dedup_tol) {
            minima.push(m);
        }
    }
    let stray: Vec<&LocalMin> = failed
        .iter()
        .filter(|m| !minima.iter().any(|k| dist(&k.x, &m.x) < opts.dedup_tol))
        .collect();
    // points held only by the ball constraint are not stationary
    let mut pinned = Vec::new();
    for m in &minima {
        pinned.push(boundary_distance(obj, &m.x) < 1e-6 && wall_slope(obj, &m.x)? < -1e-3);
    }
    let mut keep = pinned.iter().map(|p| !p);
    minima.retain(|m| {
        let k = keep.next().unwrap_or(true);
        if !k {
            log::debug!("dropping constraint-held point {:?}", m.x);
        }
        k
    });
    if minima.is_empty() || !stray.is_empty() {
        let list: Vec<String> = stray
            .iter()
            .take(8)
            .map(|m| format!("{:?} (|∇|={:.2e})", m.x, m.grad_norm))
            .collect();
        return Err(Error::Convergence(format!(
            "{} of {} starts failed to converge: {}",
            stray.len().max(failed.len()),
            starts_count(obj, opts),
            list.join(", ")
        )));
    }
    Ok(minima)
}

fn starts_count<O: Objective + ?Sized>(obj: &O, opts: &MinimizeOptions) -> usize {
    start_lattice(obj.dim(), opts.starts_for(obj.dim())).len()
}

/// Local minimization followed by a second-order check; stationary points
/// with a negative curvature direction are kicked off along it.
fn refine_to_minimum<O: Objective + ?Sized>(
    obj: &O,
    start: &[f64],
    opts: &MinimizeOptions,
) -> Result<LocalMin> {
    let mut m = local_minimize(obj, start, opts)?;
    for _ in 0..4 {
        if !m.converged || !obj.contains(&m.x) || boundary_distance(obj, &m.x) < 1e-3 {
            return Ok(m);
        }
        let hs = hessian(obj, &m.x, 1e-4)?;
        let (vals, vecs) = symmetric_eigen(&hs);
        if vals[0] >= -1e-6 {
            return Ok(m);
        }
        let kick: Vec<f64> =
            m.x.iter()
                .zip(&vecs[0])
                .map(|(a, v)| a + 1e-2 * v)
                .collect();
        m = local_minimize(obj, &kick, opts)?;
    }
    Ok(m)
}

/// One-sided outward radial derivative at a boundary point.
fn wall_slope<O: Objective + ?Sized>(obj: &O, x: &[f64]) -> Result<f64> {
    let h = obj.fd_step();
    let inner: Vec<f64> = x.iter().map(|v| v * (1.0 - h)).collect();
    Ok((obj.value(x)? - obj.value(&inner)?) / (h * norm(x)))
}

fn boundary_distance<O: Objective + ?Sized>(obj: &O, x: &[f64]) -> f64 {
    match obj.radius() {
        Some(r) => r - norm(x),
        None => f64::INFINITY,
    }
}

/// A located minimum in Bloch coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Minimum {
    pub alpha: BlochVector,
    pub f_v: f64,
}

pub fn find_minima(ev: &NormEvaluator, opts: &MinimizeOptions) -> Result<Vec<Minimum>> {
    let obj = RestrictedNorm::new(ev);
    Ok(find_minima_obj(&obj, opts)?
        .into_iter()
        .map(|m| Minimum {
            alpha: obj.to_bloch(&m.x),
            f_v: m.value,
        })
        .collect())
}

/// Re-minimizes from a known point; used to follow a branch across parameters.
pub fn follow_minimum(
    ev: &NormEvaluator,
    guess: BlochVector,
    opts: &MinimizeOptions,
) -> Result<Minimum> {
    let obj = RestrictedNorm::new(ev);
    let m = refine_to_minimum(&obj, &obj.from_bloch(guess), opts)?;
    if !m.converged {
        return Err(Error::Convergence(format!(
            "minimum near {guess:?} did not converge (|∇|={:.2e})",
            m.grad_norm
        )));
    }
    Ok(Minimum {
        alpha: obj.to_bloch(&m.x),
        f_v: m.value,
    })
}

/// Knobs of the climbing-image string method.
#[derive(Clone, Debug, PartialEq)]
pub struct SaddleOptions {
    pub images: usize,
    pub string_iter: usize,
    pub climb_iter: usize,
    pub grad_tol: f64,
    pub hessian_step: f64,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        SaddleOptions {
            images: 32,
            string_iter: 4000,
            climb_iter: 200_000,
            grad_tol: 1e-6,
            hessian_step: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SaddlePoint {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub hessian_eigenvalues: Vec<f64>,
    /// Final string, endpoints included.
    pub path: Vec<Vec<f64>>,
}

fn reparametrize(images: &mut [Vec<f64>]) {
    let n = images.len();
    if n < 3 {
        return;
    }
    let mut arc = vec![0.0; n];
    for k in 1..n {
        arc[k] = arc[k - 1] + dist(&images[k], &images[k - 1]);
    }
    let total = arc[n - 1];
    if total == 0.0 {
        return;
    }
    let old = images.to_vec();
    let mut seg = 0;
    for (k, img) in images.iter_mut().enumerate().take(n - 1).skip(1) {
        let target = total * k as f64 / (n - 1) as f64;
        while seg < n - 2 && arc[seg + 1] < target {
            seg += 1;
        }
        let len = arc[seg + 1] - arc[seg];
        let w = if len > 0.0 {
            (target - arc[seg]) / len
        } else {
            0.0
        };
        *img = old[seg]
            .iter()
            .zip(&old[seg + 1])
            .map(|(a, b)| a + w * (b - a))
            .collect();
    }
}

/// Step size from the largest curvature at the endpoints.
fn string_step<O: Objective + ?Sized>(obj: &O, a: &[f64], b: &[f64]) -> Result<f64> {
    let mut lmax: f64 = 1e-3;
    for p in [a, b] {
        let safe = boundary_distance(obj, p) > 1e-3;
        if safe {
            let (vals, _) = symmetric_eigen(&hessian(obj, p, 1e-4)?);
            lmax = lmax.max(vals.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
        }
    }
    Ok(0.2 / lmax)
}

/// Climbing-image string method between two minima of `obj`.
pub fn find_saddle_obj<O: Objective + ?Sized>(
    obj: &O,
    m1: &[f64],
    m2: &[f64],
    opts: &SaddleOptions,
) -> Result<SaddlePoint> {
    if dist(m1, m2) < 1e-3 {
        return Err(Error::Degenerate(
            "saddle search needs two distinct minima".into(),
        ));
    }
    let n = opts.images.max(3);
    let mut images: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let w = k as f64 / (n - 1) as f64;
            m1.iter().zip(m2).map(|(a, b)| a + w * (b - a)).collect()
        })
        .collect();
    let dt = string_step(obj, m1, m2)?;
    let descend = |x: &[f64]| -> Result<Vec<f64>> {
        let g = obj.gradient(x)?;
        let mut y: Vec<f64> = x.iter().zip(&g).map(|(a, gv)| a - dt * gv).collect();
        obj.project(&mut y);
        Ok(y)
    };
    // plain string: relax interior images, redistribute by arclength
    for _ in 0..opts.string_iter {
        let moved: Vec<Vec<f64>> = images[1..n - 1]
            .par_iter()
            .map(|x| descend(x))
            .collect::<Result<_>>()?;
        let shift = moved
            .iter()
            .zip(&images[1..n - 1])
            .map(|(a, b)| dist(a, b))
            .fold(0.0, f64::max);
        images[1..n - 1].clone_from_slice(&moved);
        reparametrize(&mut images);
        if shift < 1e-7 * dt.max(1e-12).sqrt().max(1.0) {
            break;
        }
    }
    let values: Vec<f64> = images.iter().map(|x| obj.value(x)).collect::<Result<_>>()?;
    let top = (0..n)
        .max_by(|&i, &j| values[i].total_cmp(&values[j]))
        .unwrap();
    if top == 0 || top == n - 1 {
        return Err(Error::Degenerate(
            "string has no interior maximum; the endpoints share a basin".into(),
        ));
    }
    // climbing image: ascend along the path tangent, descend across it
    let mut x = images[top].clone();
    let mut tau: Vec<f64> = images[top + 1]
        .iter()
        .zip(&images[top - 1])
        .map(|(a, b)| a - b)
        .collect();
    let tn = norm(&tau);
    tau.iter_mut().for_each(|v| *v /= tn);
    let mut g = obj.gradient(&x)?;
    let mut step = dt;
    for it in 0..opts.climb_iter {
        if norm(&g) < opts.grad_tol {
            break;
        }
        // track the unstable mode: refresh the tangent from the local Hessian
        if it % 50 == 0 && boundary_distance(obj, &x) > opts.hessian_step * 2.0 {
            let (vals, vecs) = symmetric_eigen(&hessian(obj, &x, opts.hessian_step)?);
            if vals[0] < 0.0 {
                let s = dot(&vecs[0], &tau).signum();
                tau = vecs[0].iter().map(|v| s * v).collect();
            }
        }
        let gt = dot(&g, &tau);
        let force: Vec<f64> = g
            .iter()
            .zip(&tau)
            .map(|(gv, t)| -(gv - 2.0 * gt * t))
            .collect();
        let y: Vec<f64> = x.iter().zip(&force).map(|(a, f)| a + step * f).collect();
        let gy = obj.gradient(&y)?;
        if norm(&gy) > 2.0 * norm(&g) {
            step *= 0.5;
            continue;
        }
        x = y;
        g = gy;
        step = (step * 1.05).min(dt * 4.0);
    }
    images[top] = x.clone();
    let grad_norm = norm(&g);
    let hs = hessian(obj, &x, opts.hessian_step)?;
    let (eig, _) = symmetric_eigen(&hs);
    if grad_norm >= opts.grad_tol {
        return Err(Error::Convergence(format!(
            "climbing image stalled at {x:?} with |∇f|={grad_norm:.2e}"
        )));
    }
    let negatives = eig.iter().filter(|&&v| v < 0.0).count();
    if negatives != 1 {
        return Err(Error::Convergence(format!(
            "stationary point at {x:?} has {negatives} negative Hessian eigenvalues ({eig:?})"
        )));
    }
    Ok(SaddlePoint {
        value: obj.value(&x)?,
        x,
        grad_norm,
        hessian_eigenvalues: eig,
        path: images,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Saddle {
    pub alpha: BlochVector,
    pub f_v: f64,
    pub grad_norm: f64,
}

pub fn find_saddle(
    ev: &NormEvaluator,
    m1: BlochVector,
    m2: BlochVector,
    opts: &SaddleOptions,
) -> Result<Saddle> {
    let obj = RestrictedNorm::new(ev);
    let s = find_saddle_obj(&obj, &obj.from_bloch(m1), &obj.from_bloch(m2), opts)?;
    Ok(Saddle {
        alpha: obj.to_bloch(&s.x),
        f_v: s.value,
        grad_norm: s.grad_norm,
    })
}

/// Stable minimum, metastable minimum and the saddle between them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticalProfile {
    pub stable: Minimum,
    pub metastable: Minimum,
    pub saddle: Saddle,
}

impl CriticalProfile {
    pub fn values(&self) -> (f64, f64, f64) {
        (self.stable.f_v, self.metastable.f_v, self.saddle.f_v)
    }
}

/// Lowest two minima plus the saddle connecting them, if two minima exist.
pub fn critical_profile(
    ev: &NormEvaluator,
    mopts: &MinimizeOptions,
    sopts: &SaddleOptions,
) -> Result<Option<CriticalProfile>> {
    let minima = find_minima(ev, mopts)?;
    if minima.len() < 2 {
        return Ok(None);
    }
    let saddle = find_saddle(ev, minima[0].alpha, minima[1].alpha, sopts)?;
    Ok(Some(CriticalProfile {
        stable: minima[0],
        metastable: minima[1],
        saddle,
    }))
}

/// Affine plane `p0 + u·e1 + v·e2` in Bloch space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub origin: [f64; 3],
    pub e1: [f64; 3],
    pub e2: [f64; 3],
}

impl Plane {
    pub fn point(&self, u: f64, v: f64) -> [f64; 3] {
        std::array::from_fn(|k| self.origin[k] + u * self.e1[k] + v * self.e2[k])
    }

    /// Plane through three points with orthonormal in-plane axes; `e1` runs
    /// from `a` to `b`.
    pub fn through(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> Result<Plane> {
        let d1: [f64; 3] = std::array::from_fn(|k| b[k] - a[k]);
        let n1 = norm(&d1);
        if n1 < 1e-12 {
            return Err(Error::Degenerate("coincident plane points".into()));
        }
        let e1: [f64; 3] = d1.map(|v| v / n1);
        let d2: [f64; 3] = std::array::from_fn(|k| c[k] - a[k]);
        let p = dot(&d2, &e1);
        let r: [f64; 3] = std::array::from_fn(|k| d2[k] - p * e1[k]);
        let n2 = norm(&r);
        if n2 < 1e-12 {
            return Err(Error::Degenerate("collinear plane points".into()));
        }
        Ok(Plane {
            origin: a,
            e1,
            e2: r.map(|v| v / n2),
        })
    }

    pub fn coords(&self, p: [f64; 3]) -> (f64, f64) {
        let d: [f64; 3] = std::array::from_fn(|k| p[k] - self.origin[k]);
        (dot(&d, &self.e1), dot(&d, &self.e2))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanGrid {
    pub n1: usize,
    pub n2: usize,
    pub u_range: (f64, f64),
    pub v_range: (f64, f64),
}

/// `f_v` on a plane grid; points outside the Bloch ball are `None`.
#[derive(Clone, Debug)]
pub struct PlaneScan {
    pub plane: Plane,
    pub grid: ScanGrid,
    /// Row-major: `values[i * n2 + j]` at `(u_i, v_j)`.
    pub values: Vec<Option<f64>>,
}

impl PlaneScan {
    pub fn u(&self, i: usize) -> f64 {
        lin(self.grid.u_range, i, self.grid.n1)
    }

    pub fn v(&self, j: usize) -> f64 {
        lin(self.grid.v_range, j, self.grid.n2)
    }

    pub fn at(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.grid.n2 + j]
    }

    /// Grid indices of strict local minima among present points.
    pub fn local_minima(&self) -> Vec<(usize, usize)> {
        let (n1, n2) = (self.grid.n1, self.grid.n2);
        let mut out = Vec::new();
        for i in 0..n1 {
            for j in 0..n2 {
                let Some(v) = self.at(i, j) else { continue };
                let mut lower = true;
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        let (a, b) = (i as i64 + di, j as i64 + dj);
                        if (di, dj) == (0, 0) || a < 0 || b < 0 || a >= n1 as i64 || b >= n2 as i64
                        {
                            continue;
                        }
                        if let Some(w) = self.at(a as usize, b as usize) {
                            if w <= v {
                                lower = false;
                            }
                        }
                    }
                }
                if lower {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

fn lin(range: (f64, f64), i: usize, n: usize) -> f64 {
    if n <= 1 {
        range.0
    } else {
        range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64
    }
}

pub fn scan_plane(ev: &NormEvaluator, plane: Plane, grid: ScanGrid) -> Result<PlaneScan> {
    let e1 = plane.e1;
    let e2 = plane.e2;
    let cross = [
        e1[1] * e2[2] - e1[2] * e2[1],
        e1[2] * e2[0] - e1[0] * e2[2],
        e1[0] * e2[1] - e1[1] * e2[0],
    ];
    if norm(&cross) < 1e-12 {
        return Err(Error::Degenerate("scan axes are linearly dependent".into()));
    }
    let values = (0..grid.n1 * grid.n2)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / grid.n2, k % grid.n2);
            let p = plane.point(lin(grid.u_range, i, grid.n1), lin(grid.v_range, j, grid.n2));
            let a = BlochVector::from_array(p);
            if a.norm() > 1.0 {
                Ok(None)
            } else {
                Ok(Some(ev.f_v(a)?.value))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PlaneScan {
        plane,
        grid,
        values,
    })
}

/// Rotation of the `(α_z, α_y)` plane onto the effective field axis:
/// `φ = cosθ·α_z + sinθ·α_y`, `φ⊥ = -sinθ·α_z + cosθ·α_y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldRotation {
    pub theta: f64,
    pub origin: BlochVector,
    /// Unit axis as `(z, y)` components.
    pub axis: (f64, f64),
}

impl FieldRotation {
    pub const IDENTITY: FieldRotation = FieldRotation {
        theta: 0.0,
        origin: BlochVector::new(0.0, 0.0, 0.0),
        axis: (1.0, 0.0),
    };

    pub fn phi(&self, a: BlochVector) -> f64 {
        let (c, s) = self.axis;
        c * (a.z - self.origin.z) + s * (a.y - self.origin.y)
    }

    pub fn phi_perp(&self, a: BlochVector) -> f64 {
        let (c, s) = self.axis;
        -s * (a.z - self.origin.z) + c * (a.y - self.origin.y)
    }

    pub fn to_bloch(&self, phi: f64, perp: f64) -> BlochVector {
        let (c, s) = self.axis;
        BlochVector::new(
            self.origin.x,
            self.origin.y + s * phi + c * perp,
            self.origin.z + c * phi - s * perp,
        )
    }
}

/// Field axis along `m2 - m1` in the `(α_z, α_y)` plane, `θ ∈ (-π/2, π/2]`.
pub fn rotate_to_field(m1: BlochVector, m2: BlochVector) -> Result<FieldRotation> {
    if m1.x.abs() > 1e-9 || m2.x.abs() > 1e-9 {
        return Err(Error::param("minima", "field rotation needs α_x = 0"));
    }
    let (dz, dy) = (m2.z - m1.z, m2.y - m1.y);
    let n = (dz * dz + dy * dy).sqrt();
    if n < 1e-12 {
        return Err(Error::Degenerate(
            "field rotation needs two distinct minima".into(),
        ));
    }
    let (mut c, mut s) = (dz / n, dy / n);
    if c < 0.0 || (c == 0.0 && s < 0.0) {
        c = -c;
        s = -s;
    }
    Ok(FieldRotation {
        theta: s.atan2(c),
        origin: BlochVector::new(0.0, 0.0, 0.0),
        axis: (c, s),
    })
}

/// Natural cubic spline through `(x_k, y_k)` on an increasing grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
    /// `1/h` when the knots are evenly spaced.
    inv_h: Option<f64>,
}

impl CubicSpline {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::param("spline", "needs at least two matching points"));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("spline", "abscissae must increase"));
        }
        // tridiagonal solve for second derivatives, natural ends
        let mut m = vec![0.0; n];
        if n > 2 {
            let mut c = vec![0.0; n];
            let mut d = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                let a = h0 / 6.0;
                let b = (h0 + h1) / 3.0;
                let cc = h1 / 6.0;
                let r = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
                let denom = b - a * c[i - 1];
                c[i] = cc / denom;
                d[i] = (r - a * d[i - 1]) / denom;
            }
            for i in (1..n - 1).rev() {
                m[i] = d[i] - c[i] * m[i + 1];
            }
        }
        let h = (x[n - 1] - x[0]) / (n - 1) as f64;
        let even = x
            .iter()
            .enumerate()
            .all(|(k, v)| (v - (x[0] + k as f64 * h)).abs() <= 1e-12 * h);
        Ok(CubicSpline {
            inv_h: even.then(|| 1.0 / h),
            x,
            y,
            m,
        })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.x.len();
        if let Some(inv) = self.inv_h {
            let i = ((t - self.x[0]) * inv) as usize;
            let i = i.min(n - 2);
            // guard against rounding at knot boundaries
            if t >= self.x[i] && t <= self.x[i + 1] {
                return i;
            }
        }
        match self.x.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    /// Value at `t`, clamped into the tabulated range.
    pub fn value(&self, t: f64) -> f64 {
        let (lo, hi) = self.range();
        let t = t.clamp(lo, hi);
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    /// First derivative at `t`, clamped into the tabulated range.
    pub fn derivative(&self, t: f64) -> f64 {
        let (lo, hi) = self.range();
        let t = t.clamp(lo, hi);
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        (self.y[i + 1] - self.y[i]) / h - (3.0 * a * a - 1.0) / 6.0 * h * self.m[i]
            + (3.0 * b * b - 1.0) / 6.0 * h * self.m[i + 1]
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        let (lo, hi) = self.range();
        let t = t.clamp(lo, hi);
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        a * self.m[i] + (1.0 - a) * self.m[i + 1]
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.x, &self.y)
    }
}

/// Tabulated `f₀(φ)` with the orthogonal coordinate minimized out.
#[derive(Clone, Debug)]
pub struct EffectiveProfile {
    pub rotation: FieldRotation,
    pub phi: Vec<f64>,
    /// `None` where the admissible section is empty.
    pub f0: Vec<Option<f64>>,
    pub perp: Vec<Option<f64>>,
    spline: CubicSpline,
    perp_spline: CubicSpline,
}

impl EffectiveProfile {
    pub fn value(&self, phi: f64) -> f64 {
        self.spline.value(phi)
    }

    pub fn derivative(&self, phi: f64) -> f64 {
        self.spline.derivative(phi)
    }

    pub fn second_derivative(&self, phi: f64) -> f64 {
        self.spline.second_derivative(phi)
    }

    /// Minimizing orthogonal coordinate at `φ`.
    pub fn perp_at(&self, phi: f64) -> f64 {
        self.perp_spline.value(phi)
    }

    pub fn range(&self) -> (f64, f64) {
        self.spline.range()
    }

    /// Bloch vector on the effective-field manifold.
    pub fn bloch(&self, phi: f64) -> BlochVector {
        self.rotation.to_bloch(phi, self.perp_at(phi))
    }

    pub fn spline(&self) -> &CubicSpline {
        &self.spline
    }

    /// Local minima of the tabulated profile (grid resolution, then refined
    /// on the spline by golden section).
    pub fn minima(&self) -> Vec<(f64, f64)> {
        let (xs, ys) = self.spline.knots();
        let n = xs.len();
        let mut out = Vec::new();
        for i in 0..n {
            let left = i == 0 || ys[i - 1] > ys[i];
            let right = i == n - 1 || ys[i + 1] > ys[i];
            if left && right {
                let lo = xs[i.saturating_sub(1)];
                let hi = xs[(i + 1).min(n - 1)];
                let p = golden_min(|t| self.value(t), lo, hi, 1e-12);
                out.push((p, self.value(p)));
            }
        }
        out
    }
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - r * (hi - lo);
    let mut d = lo + r * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - r * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + r * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Local minimum of `f` on `[lo, hi]` reached downhill from `x0`.
pub fn local_min_1d(f: impl Fn(f64) -> f64, x0: f64, lo: f64, hi: f64) -> f64 {
    let h0 = 1e-2 * (hi - lo).max(1e-12);
    let f0 = f(x0);
    let dir = if f((x0 + h0).min(hi)) < f0 {
        1.0
    } else if f((x0 - h0).max(lo)) < f0 {
        -1.0
    } else {
        return golden_min(&f, (x0 - h0).max(lo), (x0 + h0).min(hi), 1e-10);
    };
    let mut prev = x0;
    let mut cur = x0;
    let mut fc = f0;
    let mut h = h0;
    loop {
        let next = (cur + dir * h).clamp(lo, hi);
        let fnext = f(next);
        if fnext >= fc || next == cur {
            let (a, b) = if dir > 0.0 {
                (prev, next)
            } else {
                (next, prev)
            };
            return golden_min(&f, a, b, 1e-10);
        }
        prev = cur;
        cur = next;
        fc = fnext;
        h *= 2.0;
    }
}

/// Evenly spaced `n`-point grid over `[lo, hi]`.
pub fn phi_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lin((lo, hi), k, n)).collect()
}

pub const DEFAULT_PROFILE_POINTS: usize = 401;

/// `f₀(φ) = min_{φ⊥} f_v` along the rotated axis, tabulated on `grid`.
pub fn effective_f0(
    ev: &NormEvaluator,
    rotation: FieldRotation,
    grid: &[f64],
) -> Result<EffectiveProfile> {
    let free_perp = ev.model().restriction.y && ev.model().restriction.z;
    let eval = |phi: f64, perp: f64| -> Result<Option<f64>> {
        let a = rotation.to_bloch(phi, perp);
        if a.norm() > 1.0 {
            return Ok(None);
        }
        Ok(Some(ev.f_v(a)?.value))
    };
    let n = grid.len();
    let mut rows: Vec<(Option<f64>, Option<f64>)> = vec![(None, None); n];
    let half_chord = |phi: f64| (1.0 - phi * phi).max(0.0).sqrt() * (1.0 - 1e-12);
    if !free_perp {
        for (row, &phi) in rows.iter_mut().zip(grid) {
            if let Some(v) = eval(phi, 0.0)? {
                *row = (Some(v), Some(0.0));
            }
        }
    } else {
        // seed on the lowest interior chord point, then continue the local
        // minimizer outward so the branch stays smooth
        let mut seed: Option<(usize, f64, f64)> = None;
        for (k, &phi) in grid.iter().enumerate().step_by(n.div_ceil(40).max(1)) {
            let half = half_chord(phi);
            for i in 1..40 {
                let p = -half + 2.0 * half * i as f64 / 40.0;
                if let Some(v) = eval(phi, p)? {
                    if seed.is_none_or(|s| v < s.2) {
                        seed = Some((k, p, v));
                    }
                }
            }
        }
        let Some((k0, p0, _)) = seed else {
            return Err(Error::Degenerate(
                "no admissible point on the profile grid".into(),
            ));
        };
        let mut solve = |k: usize, start: f64| -> Result<Option<f64>> {
            let phi = grid[k];
            let half = half_chord(phi);
            if half <= 0.0 {
                return Ok(None);
            }
            let f = |q: f64| eval(phi, q).ok().flatten().unwrap_or(f64::INFINITY);
            let p = local_min_1d(f, start.clamp(-half, half), -half, half);
            rows[k] = (eval(phi, p)?, Some(p));
            Ok(Some(p))
        };
        let mut p = solve(k0, p0)?.unwrap_or(p0);
        let p_seed = p;
        for k in k0 + 1..n {
            if let Some(q) = solve(k, p)? {
                p = q;
            }
        }
        p = p_seed;
        for k in (0..k0).rev() {
            if let Some(q) = solve(k, p)? {
                p = q;
            }
        }
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ps = Vec::new();
    for (phi, (v, p)) in grid.iter().zip(&rows) {
        if let (Some(v), Some(p)) = (v, p) {
            xs.push(*phi);
            ys.push(*v);
            ps.push(*p);
        }
    }
    let spline = CubicSpline::new(xs.clone(), ys)?;
    let perp_spline = CubicSpline::new(xs, ps)?;
    Ok(EffectiveProfile {
        rotation,
        phi: grid.to_vec(),
        f0: rows.iter().map(|r| r.0).collect(),
        perp: rows.iter().map(|r| r.1).collect(),
        spline,
        perp_spline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exactref::single_site_steady;
    use crate::models::{build_ising, build_toom_classical, build_toom_quantum};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct DoubleWell;

    impl Objective for DoubleWell {
        fn dim(&self) -> usize {
            2
        }
        fn value(&self, x: &[f64]) -> Result<f64> {
            Ok((x[0] * x[0] - 1.0).powi(2) + x[1] * x[1])
        }
        fn radius(&self) -> Option<f64> {
            None
        }
    }

    #[test]
    fn double_well_saddle() {
        let s = find_saddle_obj(
            &DoubleWell,
            &[-1.0, 0.0],
            &[1.0, 0.0],
            &SaddleOptions::default(),
        )
        .unwrap();
        assert!(norm(&s.x) < 1e-6, "{:?}", s.x);
        assert_abs_diff_eq!(s.value, 1.0, epsilon = 1e-10);
        assert_eq!(
            s.hessian_eigenvalues.iter().filter(|v| **v < 0.0).count(),
            1
        );
        assert!(find_saddle_obj(
            &DoubleWell,
            &[1.0, 0.0],
            &[1.0, 0.0],
            &SaddleOptions::default()
        )
        .is_err());
    }

    #[test]
    fn double_well_saddle_off_axis_start() {
        // bent initial path: minima shifted off the symmetry line do not exist,
        // so perturb by starting from slightly displaced endpoints
        let s = find_saddle_obj(
            &DoubleWell,
            &[-1.0, 0.05],
            &[0.999, -0.03],
            &SaddleOptions::default(),
        )
        .unwrap();
        assert!(norm(&s.x) < 1e-6);
    }

    #[test]
    fn jacobi_eigen() {
        let (vals, vecs) = symmetric_eigen(&[
            vec![2.0, 1.0, 0.0],
            vec![1.0, 2.0, 0.0],
            vec![0.0, 0.0, -1.0],
        ]);
        assert_abs_diff_eq!(vals[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[2], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vecs[2][0].abs(), 0.5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn decoupled_ising_single_minimum() {
        let ev = NormEvaluator::new(build_ising(1.0, 0.0, 1.0).unwrap());
        let minima = find_minima(&ev, &MinimizeOptions::default()).unwrap();
        assert_eq!(minima.len(), 1, "{minima:?}");
        let exact = single_site_steady(1.0, 1.0).unwrap();
        assert!(minima[0].alpha.distance(exact) < 1e-6);
        assert!(minima[0].f_v.abs() < 1e-10);
    }

    #[test]
    fn minima_pass_perturbation_check() {
        let ev = NormEvaluator::new(build_toom_quantum(0.15, 0.0, 0.15, 1.0).unwrap());
        let minima = find_minima(&ev, &MinimizeOptions::default()).unwrap();
        assert_eq!(minima.len(), 2, "{minima:?}");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in &minima {
            for _ in 0..20 {
                let (y, z): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let n = (y * y + z * z).sqrt();
                let p = BlochVector::new(0.0, m.alpha.y + 1e-3 * y / n, m.alpha.z + 1e-3 * z / n);
                assert!(ev.f_v(p).unwrap().value > m.f_v);
            }
        }
        for (i, a) in minima.iter().enumerate() {
            for b in &minima[..i] {
                assert!(a.alpha.distance(b.alpha) >= 1e-3);
            }
        }
    }

    #[test]
    fn rotation_examples() {
        let r = rotate_to_field(
            BlochVector::new(0.0, 0.0, -0.5),
            BlochVector::new(0.0, 0.0, 0.7),
        )
        .unwrap();
        assert_abs_diff_eq!(r.theta, 0.0);
        assert_abs_diff_eq!(r.phi(BlochVector::new(0.0, 0.3, 0.4)), 0.4);

        let r = rotate_to_field(
            BlochVector::new(0.0, 0.1, 0.1),
            BlochVector::new(0.0, 0.3, 0.3),
        )
        .unwrap();
        assert_abs_diff_eq!(r.theta, std::f64::consts::FRAC_PI_4, epsilon = 1e-15);
        let r2 = rotate_to_field(
            BlochVector::new(0.0, 0.3, 0.3),
            BlochVector::new(0.0, 0.1, 0.1),
        )
        .unwrap();
        assert_abs_diff_eq!(r2.theta, r.theta, epsilon = 1e-15);

        let m = BlochVector::new(0.0, 0.2, -0.6);
        let back = r.to_bloch(r.phi(m), r.phi_perp(m));
        assert!(back.distance(m) < 1e-15);

        assert!(rotate_to_field(m, m).is_err());
        assert!(rotate_to_field(BlochVector::new(0.1, 0.0, 0.0), m).is_err());
    }

    #[test]
    fn classical_profile_symmetry() {
        let ev = NormEvaluator::new(build_toom_classical(0.0, 0.0, 1.0).unwrap());
        let grid = phi_grid(-1.0, 1.0, 201);
        let prof = effective_f0(&ev, FieldRotation::IDENTITY, &grid).unwrap();
        assert!(prof.value(1.0).abs() < 1e-12);
        assert!(prof.value(-1.0).abs() < 1e-12);
        for &p in &grid {
            assert!((prof.value(p) - prof.value(-p)).abs() < 1e-12);
        }
    }

    #[test]
    fn quantum_profile_reduces_to_classical() {
        let grid = phi_grid(-0.9, 0.9, 61);
        let cl = NormEvaluator::new(build_toom_classical(0.6, 0.1, 1.0).unwrap());
        let qu = NormEvaluator::new(build_toom_quantum(0.6, 0.1, 0.0, 1.0).unwrap());
        let a = effective_f0(&cl, FieldRotation::IDENTITY, &grid).unwrap();
        let b = effective_f0(&qu, FieldRotation::IDENTITY, &grid).unwrap();
        for k in 0..grid.len() {
            let direct = cl.f_v(BlochVector::new(0.0, 0.0, grid[k])).unwrap().value;
            assert!((a.f0[k].unwrap() - direct).abs() < 1e-14);
            assert!((b.f0[k].unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn profile_follows_local_perp_minimum() {
        let ev = NormEvaluator::new(build_toom_quantum(0.15, 0.0, 0.15, 1.0).unwrap());
        let minima = find_minima(&ev, &MinimizeOptions::default()).unwrap();
        let rot = rotate_to_field(minima[0].alpha, minima[1].alpha).unwrap();
        let grid = phi_grid(-0.95, 0.95, 39);
        let prof = effective_f0(&ev, rot, &grid).unwrap();
        for (k, &phi) in grid.iter().enumerate() {
            let (v, p) = (prof.f0[k].unwrap(), prof.perp[k].unwrap());
            for dp in [-1e-3, 1e-3] {
                let a = rot.to_bloch(phi, p + dp);
                if a.norm() <= 1.0 {
                    assert!(v <= ev.f_v(a).unwrap().value + 1e-12);
                }
            }
        }
        let found = prof.minima();
        for m in &minima {
            let phi = rot.phi(m.alpha);
            assert!(
                found
                    .iter()
                    .any(|(p, v)| (p - phi).abs() < 1e-2 && (v - m.f_v).abs() < 1e-4),
                "{found:?}"
            );
        }
    }

    #[test]
    fn spline_reproduces_cubic() {
        let xs = phi_grid(-1.0, 1.0, 101);
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let s = CubicSpline::new(xs, ys).unwrap();
        assert_abs_diff_eq!(s.value(0.3), 0.09, epsilon = 1e-5);
        assert_abs_diff_eq!(s.derivative(0.3), 0.6, epsilon = 1e-4);
    }

    #[test]
    fn ising_scan_minimized_at_single_site_state() {
        let ev = NormEvaluator::new(build_ising(1.0, 0.0, 1.0).unwrap());
        let exact = single_site_steady(1.0, 1.0).unwrap();
        let plane = Plane {
            origin: exact.to_array(),
            e1: [0.0, 0.0, 1.0],
            e2: [0.0, 1.0, 0.0],
        };
        let grid = ScanGrid {
            n1: 21,
            n2: 21,
            u_range: (-0.2, 0.2),
            v_range: (-0.2, 0.2),
        };
        let scan = scan_plane(&ev, plane, grid).unwrap();
        assert_eq!(scan.local_minima(), vec![(10, 10)]);
        let bad = Plane {
            e2: [0.0, 0.0, 2.0],
            ..plane
        };
        assert!(scan_plane(&ev, bad, grid).is_err());
    }
}
