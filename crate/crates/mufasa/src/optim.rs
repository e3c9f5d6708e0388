//! Box-constrained local optimizers used for likelihood fitting and
//! acquisition searches. Both minimize.

/// Result of a local search.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Initial simplex edge, as a fraction of each box side.
    pub initial_step: f64,
    pub max_evals: usize,
    /// Stop once the simplex diameter (box-relative) drops below this.
    pub xtol: f64,
    pub ftol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { initial_step: 0.05, max_evals: 400, xtol: 1e-7, ftol: 1e-12 }
    }
}

fn clamp_into(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(lo, hi);
    }
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Nelder–Mead with vertices projected onto the box.
pub fn nelder_mead_bounded<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        sanitize(f(x))
    };
    let mut start = x0.to_vec();
    clamp_into(&mut start, lower, upper);
    if d == 0 {
        let v = eval(&start, &mut evals);
        return Minimum { x: start, value: v, evals };
    }

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let v0 = eval(&start, &mut evals);
    simplex.push((start.clone(), v0));
    for i in 0..d {
        let mut p = start.clone();
        let width = upper[i] - lower[i];
        let step = opts.initial_step * if width.is_finite() && width > 0.0 { width } else { 1.0 };
        // step away from a bound we are sitting on
        p[i] = if p[i] + step <= upper[i] { p[i] + step } else { p[i] - step };
        clamp_into(&mut p, lower, upper);
        let v = eval(&p, &mut evals);
        simplex.push((p, v));
    }

    let scale: Vec<f64> = lower
        .iter()
        .zip(upper)
        .map(|(lo, hi)| {
            let w = hi - lo;
            if w.is_finite() && w > 0.0 {
                w
            } else {
                1.0
            }
        })
        .collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[d].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(p, _)| {
                p.iter().zip(&simplex[0].0).zip(&scale).map(|((a, b), s)| ((a - b) / s).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if diameter < opts.xtol || (worst - best).abs() <= opts.ftol * (best.abs() + opts.ftol) && diameter < 1e-3 {
            break;
        }

        let mut centroid = vec![0.0; d];
        for (p, _) in &simplex[..d] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / d as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid.iter().zip(&simplex[d].0).map(|(c, w)| c + t * (c - w)).collect();
            clamp_into(&mut p, lower, upper);
            p
        };

        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(gamma);
            let fe = eval(&xe, &mut evals);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[d].1 {
            let xc = along(rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < simplex[d].1.min(fr) {
            simplex[d] = (xc, fc);
            continue;
        }
        // shrink toward the best vertex
        let head = simplex[0].0.clone();
        for (p, v) in simplex.iter_mut().skip(1) {
            for (pi, hi) in p.iter_mut().zip(&head) {
                *pi = hi + sigma * (*pi - hi);
            }
            *v = eval(p, &mut evals);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum { x, value, evals }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iters: usize,
    /// Projected-gradient infinity norm at which the search stops.
    pub gtol: f64,
    /// Largest coordinate change on the first step.
    pub max_step: f64,
    /// Stop when one iteration lowers the objective by less than this,
    /// relative to `max(|f|, 1)`.
    pub ftol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iters: 200, gtol: 1e-6, max_step: 1.0, ftol: 1e-10 }
    }
}

fn projected_gradient(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&lo, &hi))| if (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0) { 0.0 } else { gi })
        .collect()
}

/// Infinity norm of the gradient with components blocked by an active bound removed.
pub fn projected_gradient_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    projected_gradient(x, g, lower, upper).iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Projected quasi-Newton (BFGS) with an active-set step and Armijo
/// backtracking along the projected path. `fg(x, with_grad)` returns `None`
/// where the objective is undefined; such points are rejected by the line
/// search. The gradient may be left empty when `with_grad` is false.
pub fn bfgs_bounded<F>(mut fg: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: BfgsOptions) -> Option<Minimum>
where
    F: FnMut(&[f64], bool) -> Option<(f64, Vec<f64>)>,
{
    let d = x0.len();
    let mut evals = 0usize;
    let mut x = x0.to_vec();
    clamp_into(&mut x, lower, upper);
    let (mut fx, mut g) = {
        evals += 1;
        fg(&x, true)?
    };
    if !fx.is_finite() {
        return None;
    }
    let mut h = identity(d);
    let mut first = true;

    for _ in 0..opts.max_iters {
        let pg = projected_gradient(&x, &g, lower, upper);
        if pg.iter().fold(0.0f64, |m, v| m.max(v.abs())) < opts.gtol {
            break;
        }
        let active: Vec<bool> = pg.iter().zip(&g).map(|(p, gi)| *p == 0.0 && *gi != 0.0).collect();

        let mut dir = vec![0.0; d];
        for i in 0..d {
            if active[i] {
                continue;
            }
            for j in 0..d {
                if !active[j] {
                    dir[i] -= h[i * d + j] * g[j];
                }
            }
        }
        let mut slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            h = identity(d);
            dir = pg.iter().map(|v| -v).collect();
            slope = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                break;
            }
        }
        let mut t = 1.0;
        let longest = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if first && longest > opts.max_step {
            t = opts.max_step / longest;
        }
        first = false;

        let mut accepted = None;
        for attempt in 0..40 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            clamp_into(&mut trial, lower, upper);
            let decrease: f64 = trial.iter().zip(&x).zip(&g).map(|((a, b), gi)| (a - b) * gi).sum();
            evals += 1;
            // full steps usually pass, so only they pay for a gradient up front
            if let Some((ft, gt)) = fg(&trial, attempt == 0) {
                if ft.is_finite() && ft <= fx + 1e-4 * decrease.min(0.0) {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fnew, mut gn)) = accepted else {
            break;
        };
        if gn.len() != d {
            evals += 1;
            match fg(&xn, true) {
                Some((_, g)) if g.len() == d => gn = g,
                _ => break,
            }
        }

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let yy = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-10 * ss * yy {
            bfgs_update(&mut h, &s, &y, sy);
        }

        let change = (fx - fnew).abs();
        x = xn;
        fx = fnew;
        g = gn;
        if (ss < 1e-14 && change < 1e-14 * (1.0 + fx.abs())) || change <= opts.ftol * fx.abs().max(1.0) {
            break;
        }
    }
    Some(Minimum { x, value: fx, evals })
}

fn identity(d: usize) -> Vec<f64> {
    let mut h = vec![0.0; d * d];
    for i in 0..d {
        h[i * d + i] = 1.0;
    }
    h
}

/// Inverse-Hessian BFGS update.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let d = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..d).map(|i| (0..d).map(|j| h[i * d + j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..d {
        for j in 0..d {
            h[i * d + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosen(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    fn rosen_grad(x: &[f64]) -> Vec<f64> {
        vec![-2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]), 200.0 * (x[1] - x[0] * x[0])]
    }

    #[test]
    fn nelder_mead_finds_rosenbrock_minimum() {
        let opts = NelderMeadOptions { max_evals: 5000, xtol: 1e-10, ..Default::default() };
        let m = nelder_mead_bounded(rosen, &[-1.2, 1.0], &[-2.0, -2.0], &[2.0, 2.0], opts);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn nelder_mead_respects_bounds() {
        let m = nelder_mead_bounded(
            |x| -(x[0] + x[1]),
            &[0.5, 0.5],
            &[0.0, 0.0],
            &[1.0, 1.0],
            NelderMeadOptions::default(),
        );
        assert!(m.x.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!((m.value + 2.0).abs() < 1e-6);
    }

    #[test]
    fn bfgs_finds_rosenbrock_minimum() {
        let m = bfgs_bounded(
            |x, _| Some((rosen(x), rosen_grad(x))),
            &[-1.2, 1.0],
            &[-5.0, -5.0],
            &[5.0, 5.0],
            BfgsOptions { max_iters: 500, gtol: 1e-9, max_step: 1.0, ftol: 0.0 },
        )
        .unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-6, "{m:?}");
    }

    #[test]
    fn bfgs_stops_on_active_bound() {
        // unconstrained minimum at (2, -3); box caps x0 at 1
        let f = |x: &[f64], _| {
            let v = (x[0] - 2.0).powi(2) + (x[1] + 3.0).powi(2);
            Some((v, vec![2.0 * (x[0] - 2.0), 2.0 * (x[1] + 3.0)]))
        };
        let m = bfgs_bounded(f, &[0.0, 0.0], &[-1.0, -5.0], &[1.0, 5.0], BfgsOptions::default()).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-12);
        assert!((m.x[1] + 3.0).abs() < 1e-6);
        let g = vec![2.0 * (m.x[0] - 2.0), 2.0 * (m.x[1] + 3.0)];
        assert!(projected_gradient_norm(&m.x, &g, &[-1.0, -5.0], &[1.0, 5.0]) < 1e-5);
    }

    #[test]
    fn bfgs_rejects_undefined_region() {
        // objective undefined for x < 0.5; minimum of x² inside the valid region is 0.5
        let f = |x: &[f64], _| if x[0] < 0.5 { None } else { Some((x[0] * x[0], vec![2.0 * x[0]])) };
        let m = bfgs_bounded(f, &[2.0], &[-3.0], &[3.0], BfgsOptions::default()).unwrap();
        assert!(m.x[0] >= 0.5 && m.x[0] < 0.6);
    }
}
