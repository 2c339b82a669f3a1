//! Small dense least-squares helpers.

use super::AnalysisError;

/// Solve `a·x = b` in place by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, AnalysisError> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        if a[pivot][col].abs() < 1e-300 || !a[pivot][col].is_finite() {
            return Err(AnalysisError::Degenerate("singular normal equations".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let m = a[row][col] / a[col][col];
            if m == 0.0 {
                continue;
            }
            for c in col..n {
                a[row][c] -= m * a[col][c];
            }
            b[row] -= m * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

/// Least squares over arbitrary basis functions evaluated per sample.
pub fn least_squares<F>(n_basis: usize, samples: usize, mut row: F, y: &[f64]) -> Result<Vec<f64>, AnalysisError>
where
    F: FnMut(usize, &mut [f64]),
{
    let mut ata = vec![vec![0.0; n_basis]; n_basis];
    let mut atb = vec![0.0; n_basis];
    let mut phi = vec![0.0; n_basis];
    for (s, &ys) in y.iter().enumerate().take(samples) {
        row(s, &mut phi);
        for i in 0..n_basis {
            atb[i] += phi[i] * ys;
            for j in 0..n_basis {
                ata[i][j] += phi[i] * phi[j];
            }
        }
    }
    solve_linear(ata, atb)
}

/// Coefficient of determination of `predicted` against `observed`.
pub fn r_squared(observed: &[f64], predicted: &[f64]) -> f64 {
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    let ss_tot: f64 = observed.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p).powi(2))
        .sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Polynomial fit `c0 + c1·x + … + c_d·x^d` with the fit's R².
#[derive(Clone, Debug, PartialEq)]
pub struct PolyFit {
    pub coeffs: Vec<f64>,
    pub r2: f64,
}

impl PolyFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (i, c)| acc * x + i as f64 * c)
    }
}

pub fn poly_fit(xs: &[f64], ys: &[f64], degree: usize) -> Result<PolyFit, AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::Input("x and y lengths differ".into()));
    }
    if xs.len() <= degree {
        return Err(AnalysisError::Insufficient {
            needed: degree + 1,
            got: xs.len(),
        });
    }
    // Fit on a rescaled abscissa for conditioning, then expand back.
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let scaled = least_squares(
        degree + 1,
        xs.len(),
        |s, phi| {
            let u = (xs[s] - lo) / span;
            let mut p = 1.0;
            for v in phi.iter_mut() {
                *v = p;
                p *= u;
            }
        },
        ys,
    )?;
    // Substitute u = (x − lo)/span into Σ a_i u^i.
    let mut coeffs = vec![0.0; degree + 1];
    let mut term = vec![1.0];
    for (i, a) in scaled.iter().enumerate() {
        if i > 0 {
            let mut next = vec![0.0; term.len() + 1];
            for (j, t) in term.iter().enumerate() {
                next[j] += -lo / span * t;
                next[j + 1] += t / span;
            }
            term = next;
        }
        for (j, t) in term.iter().enumerate() {
            coeffs[j] += a * t;
        }
    }
    let predicted: Vec<f64> = xs
        .iter()
        .map(|&x| coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c))
        .collect();
    Ok(PolyFit {
        r2: r_squared(ys, &predicted),
        coeffs,
    })
}
