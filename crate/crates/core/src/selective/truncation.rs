//! The set of path values `phi >= 0` for which k-means, replayed from the
//! same initial units, makes every decision it made on the observed data.
//!
//! Along the path each unit's coefficients are affine in `phi`, and so is
//! every centroid: the initial centroids are single units and later ones are
//! fixed matrix-weighted combinations of the members recorded in the trace.
//! Every weighted distance is therefore a quadratic in `phi`, and each
//! recorded decision is a quadratic inequality.

use nalgebra::{DMatrix, DVector};

use super::contrast::PerturbationPath;
use crate::error::{Error, Result};
use crate::interval::{Interval, IntervalUnion, DEGENERACY_TOL};
use crate::kmeans::ClusterRun;
use crate::linalg::spd_inverse;

/// `a t^2 + b t + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Quadratic {
    pub fn eval(&self, t: f64) -> f64 {
        (self.a * t + self.b) * t + self.c
    }

    fn minus(&self, other: &Quadratic) -> Quadratic {
        Quadratic {
            a: self.a - other.a,
            b: self.b - other.b,
            c: self.c - other.c,
        }
    }

    /// Re-expresses `q(t)` in `t = phi - shift` as a quadratic in `phi`.
    fn unshift(&self, shift: f64) -> Quadratic {
        Quadratic {
            a: self.a,
            b: self.b - 2.0 * self.a * shift,
            c: self.c - self.b * shift + self.a * shift * shift,
        }
    }
}

/// `value + slope * t`, with `t = phi - statistic`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub value: DVector<f64>,
    pub slope: DVector<f64>,
}

fn unit_affine(path: &PerturbationPath, i: usize) -> Affine {
    Affine {
        value: path.unit_base(i),
        slope: path.unit_direction(i),
    }
}

/// `||beta_i(t) - m(t)||^2_{Q_i}` as a quadratic in `t`.
fn distance(unit: &Affine, gram: &DMatrix<f64>, centroid: &Affine) -> Quadratic {
    let dd = &unit.slope - &centroid.slope;
    let dv = &unit.value - &centroid.value;
    let qdd = gram * &dd;
    Quadratic {
        a: dd.dot(&qdd),
        b: 2.0 * dv.dot(&qdd),
        c: dv.dot(&(gram * &dv)),
    }
}

/// Centroids used by every assignment step, as functions of `t`.
pub fn centroid_paths(run: &ClusterRun, path: &PerturbationPath) -> Result<Vec<Vec<Affine>>> {
    let traj = &run.trajectory;
    let n = run.n();
    let p = run.p();
    let units: Vec<Affine> = (0..n).map(|i| unit_affine(path, i)).collect();
    let mut out = Vec::with_capacity(traj.trace.len());
    out.push(traj.init_indices.iter().map(|&i| units[i].clone()).collect::<Vec<_>>());
    for s in 1..traj.trace.len() {
        let labels = &traj.trace[s - 1];
        let mut gram_sum = vec![DMatrix::<f64>::zeros(p, p); run.k];
        let mut value = vec![DVector::<f64>::zeros(p); run.k];
        let mut slope = vec![DVector::<f64>::zeros(p); run.k];
        for (i, &g) in labels.iter().enumerate() {
            gram_sum[g] += &run.grams[i];
            value[g] += &run.grams[i] * &units[i].value;
            slope[g] += &run.grams[i] * &units[i].slope;
        }
        let mut centroids = Vec::with_capacity(run.k);
        for g in 0..run.k {
            if let Some(r) = traj.reseeds.iter().find(|r| r.iteration == s && r.group == g) {
                centroids.push(units[r.unit].clone());
            } else {
                let inv = spd_inverse(&gram_sum[g], || format!("summed Gram of cluster {}", g + 1))?;
                centroids.push(Affine {
                    value: &inv * &value[g],
                    slope: &inv * &slope[g],
                });
            }
        }
        out.push(centroids);
    }
    Ok(out)
}

/// `||beta_i(phi) - beta_i'(phi)||^2_{Q_i}` as a quadratic in `phi`.
pub fn lemma1_coeffs(i: usize, i_prime: usize, path: &PerturbationPath, run: &ClusterRun) -> Quadratic {
    distance(&unit_affine(path, i), &run.grams[i], &unit_affine(path, i_prime)).unshift(path.statistic)
}

/// `||beta_i(phi) - m_k^(s)(phi)||^2_{Q_i}` for an update step `s >= 1`, as
/// a quadratic in `phi`.
pub fn lemma2_coeffs(
    i: usize,
    k: usize,
    s: usize,
    path: &PerturbationPath,
    run: &ClusterRun,
) -> Result<Quadratic> {
    if s == 0 || s >= run.trajectory.trace.len() {
        return Err(Error::InvalidArgument(format!(
            "iteration {s} outside 1..={}",
            run.iterations()
        )));
    }
    let centroids = centroid_paths(run, path)?;
    Ok(distance(&unit_affine(path, i), &run.grams[i], &centroids[s][k]).unshift(path.statistic))
}

/// One recorded decision: `lhs(t) <= rhs(t)` must keep holding.
struct Constraint {
    iteration: usize,
    unit: usize,
    group: usize,
    gap: Quadratic,
}

fn constraints(run: &ClusterRun, path: &PerturbationPath) -> Result<Vec<Constraint>> {
    let traj = &run.trajectory;
    let centroids = centroid_paths(run, path)?;
    let units: Vec<Affine> = (0..run.n()).map(|i| unit_affine(path, i)).collect();
    let mut out = Vec::new();
    for (s, labels) in traj.trace.iter().enumerate() {
        for (i, &winner) in labels.iter().enumerate() {
            let d: Vec<Quadratic> = centroids[s].iter().map(|m| distance(&units[i], &run.grams[i], m)).collect();
            for (k, dk) in d.iter().enumerate() {
                if k != winner {
                    out.push(Constraint {
                        iteration: s,
                        unit: i,
                        group: k,
                        gap: d[winner].minus(dk),
                    });
                }
            }
        }
        // re-seeding picked the unit farthest from its previous centroid
        let mut taken = Vec::new();
        for r in traj.reseeds.iter().filter(|r| r.iteration == s) {
            let prev_labels = &traj.trace[s - 1];
            let far = |i: usize| distance(&units[i], &run.grams[i], &centroids[s - 1][prev_labels[i]]);
            let chosen = far(r.unit);
            for i in 0..run.n() {
                if i != r.unit && !taken.contains(&i) {
                    out.push(Constraint {
                        iteration: s,
                        unit: i,
                        group: r.group,
                        gap: far(i).minus(&chosen),
                    });
                }
            }
            taken.push(r.unit);
        }
    }
    Ok(out)
}

/// Truncation set on the `phi` scale, clipped to `[0, inf)`.
pub fn truncation_set(run: &ClusterRun, path: &PerturbationPath) -> Result<IntervalUnion> {
    let shift = path.statistic;
    let mut set = IntervalUnion::single(-shift, f64::INFINITY);
    for con in constraints(run, path)? {
        let q = con.gap;
        let piece = IntervalUnion::solve_quadratic_leq(q.a, q.b, q.c, DEGENERACY_TOL);
        if !piece.contains(0.0) {
            return Err(Error::ObservedStatExcluded {
                stat: shift,
                iteration: con.iteration,
                unit: con.unit + 1,
                group: con.group + 1,
            });
        }
        set = set.intersect(&piece);
    }
    let shifted = set
        .intervals()
        .iter()
        .map(|iv| Interval::new((iv.lo + shift).max(0.0), iv.hi + shift))
        .collect();
    Ok(IntervalUnion::from_intervals(shifted).clip_nonnegative())
}
