//! Simulated panels with three equal-sized latent groups.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{PanelDataset, UnitSeries};

/// Number of true groups in every design.
pub const TRUE_GROUPS: usize = 3;

/// Extra pre-sample periods simulated before the first emitted dynamic
/// observation, so that two- and three-period lags exist at every row.
const PRESAMPLE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DgpId {
    /// Static, two regressors, normal errors.
    Dgp1,
    /// As `Dgp1` with `t(3)/sqrt(3)` errors.
    Dgp2,
    /// As `Dgp1` with `(chi2(3) - 3)/sqrt(6)` errors.
    Dgp3,
    /// AR(1) with two exogenous regressors and instruments.
    Dgp4,
    /// Static, `p = 4`.
    Dgp5,
    /// Static, `p = 6`.
    Dgp6,
}

impl DgpId {
    /// Number of regressors the design produces.
    pub fn regressors(self) -> usize {
        match self {
            DgpId::Dgp1 | DgpId::Dgp2 | DgpId::Dgp3 => 2,
            DgpId::Dgp4 => 3,
            DgpId::Dgp5 => 4,
            DgpId::Dgp6 => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DgpId::Dgp1 => "dgp1",
            DgpId::Dgp2 => "dgp2",
            DgpId::Dgp3 => "dgp3",
            DgpId::Dgp4 => "dgp4",
            DgpId::Dgp5 => "dgp5",
            DgpId::Dgp6 => "dgp6",
        }
    }
}

impl fmt::Display for DgpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DgpId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dgp1" | "1" => Ok(DgpId::Dgp1),
            "dgp2" | "2" => Ok(DgpId::Dgp2),
            "dgp3" | "3" => Ok(DgpId::Dgp3),
            "dgp4" | "4" => Ok(DgpId::Dgp4),
            "dgp5" | "5" => Ok(DgpId::Dgp5),
            "dgp6" | "6" => Ok(DgpId::Dgp6),
            other => Err(Error::InvalidSpec(format!("unknown design '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub id: DgpId,
    pub n: usize,
    pub t: usize,
    pub delta: f64,
    /// Spread of the autoregressive coefficient; `Dgp4` only.
    pub kappa: f64,
    pub p: usize,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(id: DgpId, n: usize, t: usize, delta: f64, seed: u64) -> Self {
        DgpSpec {
            id,
            n,
            t,
            delta,
            kappa: 0.0,
            p: id.regressors(),
            seed,
        }
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n == 0 || !self.n.is_multiple_of(TRUE_GROUPS) {
            return bad(format!("N = {} must be a positive multiple of {TRUE_GROUPS}", self.n));
        }
        if self.p != self.id.regressors() {
            return bad(format!("{} has p = {}, got {}", self.id, self.id.regressors(), self.p));
        }
        if self.t < self.p + 2 {
            return bad(format!("T = {} is too short for p = {}", self.t, self.p));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be finite and non-negative, got {}", self.delta));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa must be finite and non-negative, got {}", self.kappa));
        }
        if self.kappa > 0.0 && self.id != DgpId::Dgp4 {
            return bad(format!("kappa only applies to dgp4, got {} for {}", self.kappa, self.id));
        }
        if self.id == DgpId::Dgp4 && 0.6 + self.kappa >= 1.0 {
            return bad(format!("kappa = {} makes the autoregression non-stationary", self.kappa));
        }
        Ok(())
    }

    /// Slope vector of each true group.
    pub fn group_slopes(&self) -> Vec<DVector<f64>> {
        let d = self.delta;
        let s3 = 3f64.sqrt();
        match self.id {
            DgpId::Dgp1 | DgpId::Dgp2 | DgpId::Dgp3 => vec![
                DVector::from_vec(vec![1.0 - d, 1.0]),
                DVector::from_vec(vec![1.0, 1.0 + s3 * d]),
                DVector::from_vec(vec![1.0 + d, 1.0]),
            ],
            DgpId::Dgp4 => {
                let k = self.kappa;
                vec![
                    DVector::from_vec(vec![0.6 - k, 1.0 - d, 1.0]),
                    DVector::from_vec(vec![0.6, 1.0, 1.0 + s3 * d]),
                    DVector::from_vec(vec![0.6 + k, 1.0 + d, 1.0]),
                ]
            }
            DgpId::Dgp5 | DgpId::Dgp6 => {
                let h = self.p / 2;
                let halves = |a: f64, b: f64| DVector::from_fn(self.p, |r, _| if r < h { a } else { b });
                vec![halves(1.0 - d, 1.0), halves(1.0, 1.0 + d), halves(1.0 + d, 1.0)]
            }
        }
    }

    /// True group of each unit: consecutive thirds.
    pub fn true_labels(&self) -> Vec<usize> {
        let m = self.n / TRUE_GROUPS;
        (0..self.n).map(|i| i / m).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub spec: DgpSpec,
    pub data: PanelDataset,
    pub true_labels: Vec<usize>,
    pub true_slopes: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, Copy)]
enum ErrorLaw {
    Normal,
    ScaledT3,
    CenteredChi3,
}

impl ErrorLaw {
    fn of(id: DgpId) -> Self {
        match id {
            DgpId::Dgp2 => ErrorLaw::ScaledT3,
            DgpId::Dgp3 => ErrorLaw::CenteredChi3,
            _ => ErrorLaw::Normal,
        }
    }

    fn draw<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            ErrorLaw::Normal => rng.sample(StandardNormal),
            ErrorLaw::ScaledT3 => StudentT::new(3.0).expect("valid dof").sample(rng) / 3f64.sqrt(),
            ErrorLaw::CenteredChi3 => (ChiSquared::new(3.0).expect("valid dof").sample(rng) - 3.0) / 6f64.sqrt(),
        }
    }
}

pub fn dgp_generate(spec: &DgpSpec) -> Result<SimulatedPanel> {
    generate(spec, 1.0)
}

/// Same draws as [`dgp_generate`] with the idiosyncratic errors zeroed.
pub fn dgp_generate_noiseless(spec: &DgpSpec) -> Result<SimulatedPanel> {
    generate(spec, 0.0)
}

fn generate(spec: &DgpSpec, noise: f64) -> Result<SimulatedPanel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let law = ErrorLaw::of(spec.id);
    let slopes = spec.group_slopes();
    let labels = spec.true_labels();
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let mut series = Vec::with_capacity(spec.n);
    for &g in &labels {
        let beta = &slopes[g];
        let eta = normal(&mut rng);
        let s = if spec.id == DgpId::Dgp4 {
            dynamic_unit(spec.t, beta, eta, noise, &mut rng)
        } else {
            let p = spec.p;
            let x = DMatrix::from_fn(spec.t, p, |_, _| 0.2 * eta + normal(&mut rng));
            let u = DVector::from_fn(spec.t, |_, _| noise * law.draw(&mut rng));
            let y = &x * beta + u.add_scalar(eta);
            UnitSeries { y, x, z: None }
        };
        series.push(s);
    }
    let (names, instruments, times): (Vec<String>, Vec<String>, Vec<i64>) = if spec.id == DgpId::Dgp4 {
        (
            // x1 = y_{t-1}; z = (y_{t-2}, y_{t-3}, dx1, dx2)
            (1..=3).map(|j| format!("x{j}")).collect(),
            (1..=4).map(|j| format!("z{j}")).collect(),
            (0..=spec.t as i64).collect(),
        )
    } else {
        ((1..=spec.p).map(|j| format!("x{j}")).collect(), vec![], (1..=spec.t as i64).collect())
    };
    let units = (1..=spec.n).map(|i| format!("{i}")).collect();
    let data = PanelDataset::new(units, times, names, instruments, series)?;
    Ok(SimulatedPanel {
        spec: *spec,
        data,
        true_labels: labels,
        true_slopes: slopes,
    })
}

/// Emits periods `0..=T`; the recursion starts `PRESAMPLE + 1` periods
/// earlier from the stationary-mean initial condition.
fn dynamic_unit(t: usize, beta: &DVector<f64>, eta: f64, noise: f64, rng: &mut ChaCha8Rng) -> UnitSeries {
    let total = t + 1 + PRESAMPLE + 1;
    let mut x1 = Vec::with_capacity(total);
    let mut x2 = Vec::with_capacity(total);
    let mut y = Vec::with_capacity(total);
    for s in 0..total {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        let u: f64 = noise * rng.sample::<f64, _>(StandardNormal);
        x1.push(a);
        x2.push(b);
        let level = beta[1] * a + beta[2] * b;
        let v = if s == 0 {
            level + eta + u
        } else {
            y[s - 1] * beta[0] + level + eta * (1.0 - beta[0]) + u
        };
        y.push(v);
    }
    // emitted row r sits at absolute index r + PRESAMPLE + 1
    let off = PRESAMPLE + 1;
    let rows = t + 1;
    let yv = DVector::from_fn(rows, |r, _| y[r + off]);
    let x = DMatrix::from_fn(rows, 3, |r, c| match c {
        0 => y[r + off - 1],
        1 => x1[r + off],
        _ => x2[r + off],
    });
    let z = DMatrix::from_fn(rows, 4, |r, c| match c {
        0 => y[r + off - 2],
        1 => y[r + off - 3],
        2 => x1[r + off] - x1[r + off - 1],
        _ => x2[r + off] - x2[r + off - 1],
    });
    UnitSeries { y: yv, x, z: Some(z) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{fit_individuals, Estimator};

    #[test]
    fn null_slopes_are_homogeneous() {
        let spec = DgpSpec::new(DgpId::Dgp1, 6, 10, 0.0, 1);
        assert!(spec.group_slopes().iter().all(|a| a == &DVector::from_vec(vec![1.0, 1.0])));
    }

    #[test]
    fn dgp5_slopes() {
        let spec = DgpSpec::new(DgpId::Dgp5, 6, 10, 0.5, 1);
        let got: Vec<Vec<f64>> = spec.group_slopes().iter().map(|a| a.iter().copied().collect()).collect();
        assert_eq!(
            got,
            vec![vec![0.5, 0.5, 1.0, 1.0], vec![1.0, 1.0, 1.5, 1.5], vec![1.5, 1.5, 1.0, 1.0]]
        );
    }

    #[test]
    fn noiseless_static_panel_is_fit_exactly() {
        for id in [DgpId::Dgp1, DgpId::Dgp5] {
            let spec = DgpSpec::new(id, 9, 8, 0.7, 3);
            let sim = dgp_generate_noiseless(&spec).unwrap();
            let fits = fit_individuals(&sim.data, Estimator::Ls).unwrap();
            for (f, &g) in fits.iter().zip(&sim.true_labels) {
                assert!((&f.beta - &sim.true_slopes[g]).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = DgpSpec::new(DgpId::Dgp4, 6, 8, 0.3, 42).with_kappa(0.2);
        let a = dgp_generate(&spec).unwrap();
        let b = dgp_generate(&spec).unwrap();
        assert_eq!(a.data, b.data);
        let c = dgp_generate(&spec.with_seed(43)).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn labels_are_consecutive_thirds() {
        let spec = DgpSpec::new(DgpId::Dgp2, 12, 6, 0.0, 0);
        assert_eq!(spec.true_labels(), vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
    }

    #[test]
    fn invalid_specs() {
        assert!(DgpSpec::new(DgpId::Dgp1, 10, 10, 0.0, 0).validate().is_err());
        assert!(DgpSpec::new(DgpId::Dgp1, 9, 10, -1.0, 0).validate().is_err());
        assert!(DgpSpec::new(DgpId::Dgp1, 9, 10, 0.0, 0).with_kappa(0.1).validate().is_err());
        assert!(DgpSpec::new(DgpId::Dgp4, 9, 10, 0.0, 0).with_kappa(0.5).validate().is_err());
        let mut s = DgpSpec::new(DgpId::Dgp5, 9, 10, 0.0, 0);
        s.p = 6;
        assert!(matches!(dgp_generate(&s), Err(Error::InvalidSpec(_))));
        assert!("dgp7".parse::<DgpId>().is_err());
        assert_eq!("DGP3".parse::<DgpId>().unwrap(), DgpId::Dgp3);
    }

    #[test]
    fn dynamic_rows_line_up() {
        let spec = DgpSpec::new(DgpId::Dgp4, 3, 6, 0.0, 9);
        let sim = dgp_generate(&spec).unwrap();
        let s = &sim.data.series()[0];
        assert_eq!(s.y.len(), 7);
        let z = s.z.as_ref().unwrap();
        for r in 1..7 {
            assert_eq!(s.x[(r, 0)], s.y[r - 1]);
            assert_eq!(z[(r, 0)], s.x[(r - 1, 0)]);
        }
        for r in 2..7 {
            assert_eq!(z[(r, 1)], z[(r - 1, 0)]);
        }
        // the recursion holds on emitted rows, up to the error
        let sim0 = dgp_generate_noiseless(&spec).unwrap();
        let s0 = &sim0.data.series()[0];
        let b = &sim0.true_slopes[0];
        let eta = (s0.y[3] - s0.x.row(3).transpose().dot(b)) / (1.0 - b[0]);
        for r in 0..7 {
            let fitted = s0.x.row(r).transpose().dot(b) + eta * (1.0 - b[0]);
            assert!((s0.y[r] - fitted).abs() < 1e-12);
        }
    }

    #[test]
    fn error_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for law in [ErrorLaw::ScaledT3, ErrorLaw::CenteredChi3] {
            let n = 200_000;
            let draws: Vec<f64> = (0..n).map(|_| law.draw(&mut rng)).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
            assert!(mean.abs() < 0.02, "{law:?} mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "{law:?} var {var}");
            if let ErrorLaw::CenteredChi3 = law {
                let skew = draws.iter().map(|d| (d - mean).powi(3)).sum::<f64>() / n as f64;
                assert!(skew > 1.0);
            }
        }
    }

    #[test]
    fn dynamic_coefficients_are_stationary() {
        for kappa in [0.0, 0.2, 0.39] {
            let spec = DgpSpec::new(DgpId::Dgp4, 3, 6, 0.5, 0).with_kappa(kappa);
            assert!(spec.group_slopes().iter().all(|a| a[0].abs() < 1.0));
        }
    }
}
