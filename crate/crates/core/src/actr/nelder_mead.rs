//! Bounded Nelder–Mead simplex search.
//!
//! The search runs in the unit cube and maps to the caller's box, so every
//! coordinate shares one scale. Trial points are clamped onto the cube.

/// Axis-aligned box `[lo_j, hi_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn new(pairs: &[(f64, f64)]) -> Self {
        Bounds {
            lo: pairs.iter().map(|p| p.0).collect(),
            hi: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn to_box(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(j, &v)| self.lo[j] + v.clamp(0.0, 1.0) * (self.hi[j] - self.lo[j]))
            .collect()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                let w = self.hi[j] - self.lo[j];
                if w > 0.0 {
                    ((v - self.lo[j]) / w).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Stop once the simplex diameter in unit coordinates drops below this.
    pub diameter_tol: f64,
    pub max_iter: usize,
    /// Edge length of the initial simplex in unit coordinates.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            diameter_tol: 1e-8,
            max_iter: 2000,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    /// Best point, in box coordinates.
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn diameter(simplex: &[Vec<f64>]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..simplex.len() {
        for j in i + 1..simplex.len() {
            let s: f64 = simplex[i]
                .iter()
                .zip(&simplex[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            d = d.max(s.sqrt());
        }
    }
    d
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    // a + t (b - a), clamped to the unit cube
    a.iter()
        .zip(b)
        .map(|(x, y)| (x + t * (y - x)).clamp(0.0, 1.0))
        .collect()
}

/// Minimize `f` over `bounds` starting at `x0` (box coordinates).
///
/// Non-finite objective values are treated as `+inf`.
pub fn nelder_mead<F>(f: F, x0: &[f64], bounds: &Bounds, opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = bounds.dim();
    let eval = |u: &[f64]| {
        let v = f(&bounds.to_box(u));
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let u0 = bounds.to_unit(x0);
    let mut simplex = vec![u0.clone()];
    for j in 0..n {
        let mut v = u0.clone();
        // step inward when the start sits near the upper face
        v[j] = if v[j] + opts.initial_step <= 1.0 {
            v[j] + opts.initial_step
        } else {
            v[j] - opts.initial_step
        };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|u| eval(u)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        if diameter(&simplex) < opts.diameter_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let worst = simplex[n].clone();

        let reflected = lerp(&centroid, &worst, -1.0);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = lerp(&centroid, &worst, -2.0);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = lerp(&centroid, &worst, -0.5);
            let v = eval(&c);
            (c, v)
        } else {
            let c = lerp(&centroid, &worst, 0.5);
            let v = eval(&c);
            (c, v)
        };
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].clone();
        for i in 1..=n {
            simplex[i] = lerp(&best, &simplex[i], 0.5);
            values[i] = eval(&simplex[i]);
        }
    }

    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    NelderMeadResult {
        x: bounds.to_box(&simplex[best]),
        value: values[best],
        iterations,
        converged,
    }
}
