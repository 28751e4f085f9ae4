use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Least-squares line through `(x, y)`: `(slope, intercept)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anova {
    pub f: f64,
    pub df_between: f64,
    pub df_within: f64,
    pub p_value: f64,
}

/// One-way ANOVA across groups. Needs at least two groups and more
/// observations than groups.
pub fn one_way_anova(groups: &[Vec<f64>]) -> Option<Anova> {
    let g = groups.len();
    let total: usize = groups.iter().map(Vec::len).sum();
    if g < 2 || total <= g || groups.iter().any(Vec::is_empty) {
        return None;
    }
    let grand = groups.iter().flatten().sum::<f64>() / total as f64;
    let mut between = 0.0;
    let mut within = 0.0;
    for grp in groups {
        let m = grp.iter().sum::<f64>() / grp.len() as f64;
        between += grp.len() as f64 * (m - grand).powi(2);
        within += grp.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    let df_between = (g - 1) as f64;
    let df_within = (total - g) as f64;
    let f = (between / df_between) / (within / df_within);
    let p_value = if f.is_finite() {
        1.0 - FisherSnedecor::new(df_between, df_within).ok()?.cdf(f)
    } else {
        0.0
    };
    Some(Anova { f, df_between, df_within, p_value })
}

/// `sqrt(v^T Sigma v)`.
pub fn sigma_norm(v: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    (v.transpose() * sigma * v)[(0, 0)].max(0.0).sqrt()
}

/// `hits / total`, zero when nothing was counted.
pub fn proportion(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}
