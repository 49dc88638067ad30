//! Small numerical kernels shared by the solvers.

/// Uniform one-dimensional grid `x_j = start + j * step`, `j = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UniformGrid {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl UniformGrid {
    pub fn new(start: f64, step: f64, len: usize) -> Self {
        Self { start, step, len }
    }

    /// Grid with `len` nodes spanning `[lo, hi]`.
    pub fn spanning(lo: f64, hi: f64, len: usize) -> Self {
        Self::new(lo, (hi - lo) / (len as f64 - 1.0), len)
    }

    #[inline]
    pub fn node(&self, j: usize) -> f64 {
        self.start + self.step * j as f64
    }

    pub fn end(&self) -> f64 {
        self.node(self.len - 1)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len).map(|j| self.node(j)).collect()
    }

    /// Index of the node nearest to `x`, clamped to the grid.
    pub fn nearest(&self, x: f64) -> usize {
        let j = ((x - self.start) / self.step).round();
        j.clamp(0.0, (self.len - 1) as f64) as usize
    }

    /// Cubic interpolation weights at `x`, reusable across arrays on this grid.
    pub fn stencil(&self, x: f64) -> Stencil {
        let n = self.len;
        let s = (x - self.start) / self.step;
        if s <= 0.0 {
            return Stencil { index: [0; 4], weight: [1.0, 0.0, 0.0, 0.0] };
        }
        if s >= (n - 1) as f64 {
            return Stencil { index: [n - 1; 4], weight: [1.0, 0.0, 0.0, 0.0] };
        }
        let i = (s.floor() as usize).min(n - 2);
        let t = s - i as f64;
        let at = |k: isize| (i as isize + k).clamp(0, n as isize - 1) as usize;
        Stencil {
            index: [at(-1), at(0), at(1), at(2)],
            weight: [
                -t * (t - 1.0) * (t - 2.0) / 6.0,
                (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
                -(t + 1.0) * t * (t - 2.0) / 2.0,
                (t + 1.0) * t * (t - 1.0) / 6.0,
            ],
        }
    }

    /// Four-point cubic Lagrange interpolation with constant extension outside the grid.
    pub fn interp(&self, values: &[f64], x: f64) -> f64 {
        self.interp_with_slope(values, x).0
    }

    /// Interpolated value and its derivative in `x`.
    pub fn interp_with_slope(&self, values: &[f64], x: f64) -> (f64, f64) {
        debug_assert_eq!(values.len(), self.len);
        let n = self.len;
        let s = (x - self.start) / self.step;
        if s <= 0.0 {
            return (values[0], 0.0);
        }
        if s >= (n - 1) as f64 {
            return (values[n - 1], 0.0);
        }
        let i = (s.floor() as usize).min(n - 2);
        let t = s - i as f64;
        let at = |k: isize| -> f64 {
            let idx = (i as isize + k).clamp(0, n as isize - 1) as usize;
            values[idx]
        };
        let (fm, f0, f1, f2) = (at(-1), at(0), at(1), at(2));
        let wm = -t * (t - 1.0) * (t - 2.0) / 6.0;
        let w0 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
        let w1 = -(t + 1.0) * t * (t - 2.0) / 2.0;
        let w2 = (t + 1.0) * t * (t - 1.0) / 6.0;
        let dwm = -(3.0 * t * t - 6.0 * t + 2.0) / 6.0;
        let dw0 = (3.0 * t * t - 4.0 * t - 1.0) / 2.0;
        let dw1 = -(3.0 * t * t - 2.0 * t - 2.0) / 2.0;
        let dw2 = (3.0 * t * t - 1.0) / 6.0;
        let value = wm * fm + w0 * f0 + w1 * f1 + w2 * f2;
        let slope = (dwm * fm + dw0 * f0 + dw1 * f1 + dw2 * f2) / self.step;
        (value, slope)
    }
}

/// Precomputed four-point interpolation weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    index: [usize; 4],
    weight: [f64; 4],
}

impl Stencil {
    #[inline]
    pub fn apply(&self, values: &[f64]) -> f64 {
        let (i, w) = (&self.index, &self.weight);
        w[0] * values[i[0]] + w[1] * values[i[1]] + w[2] * values[i[2]] + w[3] * values[i[3]]
    }
}

#[inline]
fn clamped(values: &[f64], j: isize) -> f64 {
    values[j.clamp(0, values.len() as isize - 1) as usize]
}

/// Fourth-order centered first derivative with constant extension at the ends.
pub fn centered_derivative(values: &[f64], step: f64) -> Vec<f64> {
    let n = values.len() as isize;
    (0..n)
        .map(|j| {
            let f = |k: isize| clamped(values, j + k);
            (8.0 * (f(1) - f(-1)) - (f(2) - f(-2))) / (12.0 * step)
        })
        .collect()
}

/// Sixth-order centered first derivative with constant extension at the ends.
pub fn centered_derivative6(values: &[f64], step: f64) -> Vec<f64> {
    let n = values.len() as isize;
    (0..n)
        .map(|j| {
            let f = |k: isize| clamped(values, j + k);
            (45.0 * (f(1) - f(-1)) - 9.0 * (f(2) - f(-2)) + (f(3) - f(-3))) / (60.0 * step)
        })
        .collect()
}

/// Fourth-order centered second derivative with constant extension at the ends.
pub fn centered_second_derivative(values: &[f64], step: f64) -> Vec<f64> {
    let n = values.len() as isize;
    (0..n)
        .map(|j| {
            let f = |k: isize| clamped(values, j + k);
            (-f(2) + 16.0 * f(1) - 30.0 * f(0) + 16.0 * f(-1) - f(-2)) / (12.0 * step * step)
        })
        .collect()
}

/// Index of the smallest entry.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = j;
        }
    }
    best
}

/// Parabolic refinement of a discrete minimum at node `j`.
///
/// Returns the fractional offset (in units of the grid step) and the refined value.
pub fn parabolic_refine(values: &[f64], j: usize) -> (f64, f64) {
    if j == 0 || j + 1 >= values.len() {
        return (0.0, values[j]);
    }
    let (a, b, c) = (values[j - 1], values[j], values[j + 1]);
    let curvature = a - 2.0 * b + c;
    if curvature <= 0.0 {
        return (0.0, b);
    }
    let offset = 0.5 * (a - c) / curvature;
    let value = b - 0.25 * (a - c) * offset;
    (offset, value)
}

/// Interior local minima (strict on at least one side), as node indices.
pub fn local_minima(values: &[f64]) -> Vec<usize> {
    let n = values.len();
    (1..n.saturating_sub(1))
        .filter(|&j| {
            let v = values[j];
            v <= values[j - 1] && v <= values[j + 1] && (v < values[j - 1] || v < values[j + 1])
        })
        .collect()
}

/// Ordinary least-squares line `y = slope * x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        return (0.0, my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Bisection for a sign change of `f` on `[lo, hi]`, down to width `tol`.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut f_lo = f(lo);
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if (f_mid <= 0.0) == (f_lo <= 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Observed convergence orders `log2(e_k / e_{k+1})` for a dyadic refinement ladder.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Largest absolute entry.
pub fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_interpolation_is_exact_for_cubics() {
        let grid = UniformGrid::new(-1.0, 0.25, 9);
        let f = |x: f64| 2.0 * x * x * x - x * x + 0.5 * x - 3.0;
        let df = |x: f64| 6.0 * x * x - 2.0 * x + 0.5;
        let values: Vec<f64> = grid.nodes().into_iter().map(f).collect();
        for &x in &[-0.6, -0.1, 0.33, 0.7] {
            let (v, s) = grid.interp_with_slope(&values, x);
            assert!((v - f(x)).abs() < 1e-13);
            assert!((s - df(x)).abs() < 1e-12);
            assert!((grid.stencil(x).apply(&values) - f(x)).abs() < 1e-13);
        }
    }

    #[test]
    fn interpolation_extends_constantly() {
        let grid = UniformGrid::new(0.0, 1.0, 4);
        let values = [1.0, 2.0, 3.0, 5.0];
        assert_eq!(grid.interp(&values, -3.0), 1.0);
        assert_eq!(grid.interp(&values, 7.0), 5.0);
    }

    #[test]
    fn fourth_order_derivative_is_exact_for_quartics() {
        let h = 0.1;
        let xs: Vec<f64> = (0..20).map(|j| j as f64 * h).collect();
        let values: Vec<f64> = xs.iter().map(|x| x.powi(4) - x).collect();
        let d = centered_derivative(&values, h);
        let d2 = centered_second_derivative(&values, h);
        let sixth: Vec<f64> = xs.iter().map(|x| x.powi(6)).collect();
        let d6 = centered_derivative6(&sixth, h);
        for j in 3..17 {
            assert!((d6[j] - 6.0 * xs[j].powi(5)).abs() < 1e-9);
        }
        for j in 2..18 {
            assert!((d[j] - (4.0 * xs[j].powi(3) - 1.0)).abs() < 1e-10);
            assert!((d2[j] - 12.0 * xs[j] * xs[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn parabola_vertex_recovered() {
        let values: Vec<f64> = (0..7).map(|j| (j as f64 - 3.3).powi(2) + 1.0).collect();
        let j = argmin(&values);
        let (offset, value) = parabolic_refine(&values, j);
        assert!((j as f64 + offset - 3.3).abs() < 1e-12);
        assert!((value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn line_fit_and_bisection() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let (a, b) = linear_fit(&xs, &ys);
        assert!((a - 2.0).abs() < 1e-14 && (b - 1.0).abs() < 1e-14);
        let root = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14);
        assert!((root - 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn medians_and_orders() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let orders = observed_orders(&[1.0, 0.25, 0.0625]);
        assert!(orders.iter().all(|o| (o - 2.0).abs() < 1e-12));
    }
}
