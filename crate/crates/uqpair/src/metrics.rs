//! Regression and uncertainty-quality metrics.
//!
//! Correlation family: Pearson, Spearman (average ranks on ties), and Lin's
//! concordance (population variances). Error: RMSE. Uncertainty family:
//! Gaussian negative log predictive density, central-interval calibration
//! error over nine coverage levels, and sharpness (mean predicted variance).
//! Separation quality of an uncertainty signal is scored with a rank-sum
//! AUROC, and group comparisons use Welch's unequal-variance t-test.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::Error;
use crate::Result;

/// Coverage levels the calibration error averages over.
pub const CENTRAL_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// All scalar metrics of one evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub pcc: f64,
    pub scc: f64,
    pub ccc: f64,
    pub rmse: f64,
    pub nlpd: f64,
    pub cal: f64,
    pub shp: f64,
}

impl MetricReport {
    /// Stable key/value view for flat serialization (manifests, CSV).
    pub fn flat(&self) -> [(&'static str, f64); 7] {
        [
            ("pcc", self.pcc),
            ("scc", self.scc),
            ("ccc", self.ccc),
            ("rmse", self.rmse),
            ("nlpd", self.nlpd),
            ("cal", self.cal),
            ("shp", self.shp),
        ]
    }
}

fn check_paired(x: &[f64], y: &[f64], min_len: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min_len {
        return Err(Error::invalid(format!(
            "need at least {min_len} samples, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in metric input"));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population (n-divisor) covariance and the two population variances.
fn pop_moments(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64, f64) {
    let mx = mean(x);
    let my = mean(y);
    let n = x.len() as f64;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..x.len() {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    (mx, my, cov / n, vx / n, vy / n)
}

fn correlation_guard(which: &'static str, vx: f64, vy: f64, y: &[f64], y_hat: &[f64]) -> Result<()> {
    if vx <= 0.0 || vy <= 0.0 {
        return Err(Error::CorrelationUndefined { which, rmse: rmse(y, y_hat)? });
    }
    Ok(())
}

/// Pearson correlation coefficient.
pub fn pearson(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_paired(y, y_hat, 2)?;
    let (_, _, cov, vx, vy) = pop_moments(y, y_hat);
    correlation_guard("pcc", vx, vy, y, y_hat)?;
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// Average ranks, 1-based; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("non-finite value in ranking"));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        // positions i..=j are one tie group; ranks are 1-based
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson over average ranks.
pub fn spearman(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_paired(y, y_hat, 2)?;
    let rx = average_ranks(y);
    let ry = average_ranks(y_hat);
    let (_, _, cov, vx, vy) = pop_moments(&rx, &ry);
    correlation_guard("scc", vx, vy, y, y_hat)?;
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// Lin's concordance correlation coefficient with population variances:
/// `2*cov / (var_y + var_yhat + (mean_y - mean_yhat)^2)`.
pub fn concordance(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_paired(y, y_hat, 2)?;
    let (my, myh, cov, vy, vyh) = pop_moments(y, y_hat);
    correlation_guard("ccc", vy, vyh, y, y_hat)?;
    let md = my - myh;
    Ok(2.0 * cov / (vy + vyh + md * md))
}

/// Root mean squared error.
pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_paired(y, y_hat, 1)?;
    let n = y.len() as f64;
    let ss: f64 = y
        .iter()
        .zip(y_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((ss / n).sqrt())
}

/// Mean Gaussian negative log predictive density:
/// `(1/N) * sum_i [ 0.5*ln(2*pi*sigma2_i) + (y_i - y_hat_i)^2 / (2*sigma2_i) ]`.
pub fn nlpd(y: &[f64], y_hat: &[f64], sigma2: &[f64]) -> Result<f64> {
    check_paired(y, y_hat, 1)?;
    check_paired(y, sigma2, 1)?;
    let mut total = 0.0;
    for i in 0..y.len() {
        let s2 = sigma2[i];
        if !(s2 > 0.0) {
            return Err(Error::invalid(format!(
                "sigma2[{i}] = {s2} must be strictly positive"
            )));
        }
        let e = y[i] - y_hat[i];
        total += 0.5 * (2.0 * std::f64::consts::PI * s2).ln() + e * e / (2.0 * s2);
    }
    Ok(total / y.len() as f64)
}

/// Calibration error over central Gaussian intervals: for each coverage
/// level p, the fraction of samples with `|y - y_hat| <= z_((1+p)/2) * sigma`
/// is compared to p; the result is the mean squared gap over the nine levels.
pub fn calibration_error(y: &[f64], y_hat: &[f64], sigma2: &[f64]) -> Result<f64> {
    check_paired(y, y_hat, 1)?;
    check_paired(y, sigma2, 1)?;
    if sigma2.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid("sigma2 must be strictly positive"));
    }
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = y.len() as f64;
    let mut total = 0.0;
    for &p in &CENTRAL_LEVELS {
        let z = std_normal.inverse_cdf((1.0 + p) / 2.0);
        let covered = y
            .iter()
            .zip(y_hat)
            .zip(sigma2)
            .filter(|((yi, yhi), s2)| (*yi - *yhi).abs() <= z * s2.sqrt())
            .count() as f64;
        let gap = covered / n - p;
        total += gap * gap;
    }
    Ok(total / CENTRAL_LEVELS.len() as f64)
}

/// Sharpness: mean predicted variance.
pub fn sharpness(sigma2: &[f64]) -> Result<f64> {
    if sigma2.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if sigma2.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("sharpness needs finite non-negative variances"));
    }
    Ok(mean(sigma2))
}

/// Full metric sweep over one prediction set.
pub fn compute_metrics(y: &[f64], y_hat: &[f64], sigma2: &[f64]) -> Result<MetricReport> {
    Ok(MetricReport {
        pcc: pearson(y, y_hat)?,
        scc: spearman(y, y_hat)?,
        ccc: concordance(y, y_hat)?,
        rmse: rmse(y, y_hat)?,
        nlpd: nlpd(y, y_hat, sigma2)?,
        cal: calibration_error(y, y_hat, sigma2)?,
        shp: sharpness(sigma2)?,
    })
}

/// Rank-sum AUROC: probability that a uniformly random noisy sample gets a
/// strictly larger uncertainty than a uniformly random clean one, with ties
/// counting one half. 1.0 means perfect separation, 0.5 chance level.
pub fn noise_separation_auroc(noisy: &[f64], clean: &[f64]) -> Result<f64> {
    if noisy.is_empty() || clean.is_empty() {
        return Err(Error::invalid("both groups must be non-empty"));
    }
    if noisy.iter().chain(clean).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite uncertainty value"));
    }
    let mut all: Vec<f64> = Vec::with_capacity(noisy.len() + clean.len());
    all.extend_from_slice(noisy);
    all.extend_from_slice(clean);
    let ranks = average_ranks(&all);
    let rank_sum: f64 = ranks[..noisy.len()].iter().sum();
    let n1 = noisy.len() as f64;
    let n0 = clean.len() as f64;
    Ok((rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0))
}

/// Result of an unequal-variance two-sample comparison.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value from the Student-t distribution at `df`.
    pub p: f64,
}

/// Welch's t-test with Satterthwaite degrees of freedom. Both groups need
/// at least two samples and at least one group must have spread.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid(format!(
            "welch test needs >= 2 samples per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in welch test input"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    // sample (n-1 divisor) variances
    let va = a.iter().map(|x| (x - ma) * (x - ma)).sum::<f64>() / (na - 1.0);
    let vb = b.iter().map(|x| (x - mb) * (x - mb)).sum::<f64>() / (nb - 1.0);
    let sa = va / na;
    let sb = vb / nb;
    let se2 = sa + sb;
    if se2 <= 0.0 {
        return Err(Error::DegenerateInput(
            "both groups have zero variance".into(),
        ));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2
        / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::invalid(format!("invalid t distribution: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(WelchTest { t, df, p: p.clamp(0.0, 1.0) })
}
