use crate::error::{ensure, Error, Result};

/// Divisor used for the across-fold standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SdKind {
    /// Divide by k. Reproduces the published fold tables.
    #[default]
    Population,
    /// Divide by k - 1.
    Sample,
}

impl SdKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "population" => Ok(SdKind::Population),
            "sample" => Ok(SdKind::Sample),
            other => Err(Error::invalid(format!("unknown sd kind {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SdKind::Population => "population",
            SdKind::Sample => "sample",
        }
    }
}

/// Per-fold values with their mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

impl FoldSummary {
    pub fn k(&self) -> usize {
        self.values.len()
    }

    /// `mean ± sd` at two decimals.
    pub fn render(&self) -> String {
        format!("{} ± {}", fmt_fixed(self.mean, 2), fmt_fixed(self.sd, 2))
    }
}

pub fn aggregate_folds(values: &[f64]) -> Result<FoldSummary> {
    aggregate_folds_with(values, SdKind::Population)
}

pub fn aggregate_folds_with(values: &[f64], kind: SdKind) -> Result<FoldSummary> {
    ensure!(!values.is_empty(), "cannot aggregate zero folds");
    ensure!(
        values.iter().all(|v| v.is_finite()),
        "fold values must be finite"
    );
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let sd = match kind {
        SdKind::Population => (ss / k).sqrt(),
        SdKind::Sample if values.len() > 1 => (ss / (k - 1.0)).sqrt(),
        SdKind::Sample => 0.0,
    };
    Ok(FoldSummary {
        values: values.to_vec(),
        mean,
        sd,
    })
}

/// Round half away from zero at `decimals` places.
///
/// Values are treated as the decimal numbers they were meant to be: a value
/// within a few ulps of a tie (88.295 stored as 88.29499999999999) rounds as
/// the tie it represents.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = x.abs() * scale;
    let nudge = scaled.max(1.0) * 1e-12;
    let r = (scaled + 0.5 + nudge).floor() / scale;
    if x < 0.0 {
        -r
    } else {
        r
    }
}

/// Fixed-point rendering with half-up rounding; never prints `-0.00`.
pub fn fmt_fixed(x: f64, decimals: u32) -> String {
    let r = round_half_up(x, decimals);
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{:.*}", decimals as usize, r)
}
