//! Fixed-effect eliminating transforms.

use nalgebra::{DMatrix, DVector};

use super::dataset::{PanelDataset, UnitSeries};

/// Per-unit transformed response, regressors and (aligned) instruments.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitBlock {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: Option<DMatrix<f64>>,
}

/// Panel after subtracting unit time-averages.
#[derive(Debug, Clone, PartialEq)]
pub struct DemeanedPanel {
    pub units: Vec<String>,
    pub blocks: Vec<UnitBlock>,
}

/// Panel after first-differencing; row `t` holds `v_t - v_{t-1}` for
/// `t = 1..T`, with instrument rows taken in levels at the same `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferencedPanel {
    pub units: Vec<String>,
    pub blocks: Vec<UnitBlock>,
}

fn demean_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

fn demean_series(s: &UnitSeries) -> UnitBlock {
    let mean = s.y.mean();
    UnitBlock {
        y: s.y.add_scalar(-mean),
        x: demean_columns(&s.x),
        z: s.z.clone(),
    }
}

pub fn within_demean(data: &PanelDataset) -> DemeanedPanel {
    DemeanedPanel {
        units: data.units().to_vec(),
        blocks: data.series().iter().map(demean_series).collect(),
    }
}

fn difference_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let t = m.nrows();
    DMatrix::from_fn(t - 1, m.ncols(), |r, c| m[(r + 1, c)] - m[(r, c)])
}

pub fn first_difference(data: &PanelDataset) -> DifferencedPanel {
    let blocks = data
        .series()
        .iter()
        .map(|s| {
            let t = s.y.len();
            UnitBlock {
                y: DVector::from_fn(t - 1, |r, _| s.y[r + 1] - s.y[r]),
                x: difference_rows(&s.x),
                z: s.z.as_ref().map(|z| z.rows(1, t - 1).into_owned()),
            }
        })
        .collect();
    DifferencedPanel {
        units: data.units().to_vec(),
        blocks,
    }
}
