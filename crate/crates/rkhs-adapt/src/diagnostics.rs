//! Post-run diagnostics for a center placement: persistence-of-excitation
//! occupancy over sliding time windows, fill distance, minimum separation,
//! Grammian conditioning, and Hausdorff distance to the sampled limit set.

use crate::dynamics::Trajectory;
use crate::kernels::CenterSet;
use crate::numerics::Vector;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("point set is empty")]
    EmptySet,
    #[error("ball radius {epsilon} is not below half the minimum separation {bound}")]
    EpsilonTooLarge { epsilon: f64, bound: f64 },
    #[error("window length {delta} does not cover a trajectory step of {dt}")]
    BadWindow { delta: f64, dt: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Largest distance from any sample to its nearest center: how far the
/// sampled set strays from the center placement.
pub fn fill_distance(samples: &[Vector], centers: &[Vector]) -> Result<f64, DiagnosticsError> {
    if samples.is_empty() || centers.is_empty() {
        return Err(DiagnosticsError::EmptySet);
    }
    check_dims(samples, centers)?;
    Ok(samples
        .iter()
        .map(|s| centers.iter().map(|c| (s - c).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0_f64, f64::max))
}

/// Smallest pairwise distance between centers.
pub fn min_separation(centers: &[Vector]) -> Result<f64, DiagnosticsError> {
    if centers.len() < 2 {
        return Err(DiagnosticsError::EmptySet);
    }
    let mut best = f64::INFINITY;
    for i in 0..centers.len() {
        for j in (i + 1)..centers.len() {
            best = best.min((&centers[i] - &centers[j]).norm());
        }
    }
    Ok(best)
}

/// Hausdorff distance between finite nonempty point sets of any dimension.
pub fn hausdorff_distance(a: &[Vector], b: &[Vector]) -> Result<f64, DiagnosticsError> {
    if a.is_empty() || b.is_empty() {
        return Err(DiagnosticsError::EmptySet);
    }
    check_dims(a, b)?;
    let directed = |from: &[Vector], to: &[Vector]| {
        from.iter()
            .map(|p| to.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0_f64, f64::max)
    };
    Ok(directed(a, b).max(directed(b, a)))
}

fn check_dims(a: &[Vector], b: &[Vector]) -> Result<(), DiagnosticsError> {
    let d = a[0].len();
    for v in a.iter().chain(b.iter()) {
        if v.len() != d {
            return Err(DiagnosticsError::DimensionMismatch { expected: d, got: v.len() });
        }
    }
    Ok(())
}

/// Occupancy evidence for persistence of excitation: for each center, the
/// minimum over all sliding windows of length `delta` of the time the
/// trajectory spends inside the epsilon-ball around that center.
#[derive(Debug, Clone, Serialize)]
pub struct PeReport {
    pub epsilon: f64,
    pub delta: f64,
    pub per_center_min_occupancy: Vec<f64>,
    /// True when every center's minimum occupancy clears twice the sample
    /// step, a floor that rules out single-sample coincidences.
    pub verdict: bool,
}

/// The epsilon-balls must be disjoint for the occupancy of one center to be
/// attributable to that center alone, hence the half-separation guard.
pub fn pe_occupancy(
    traj: &Trajectory,
    centers: &[Vector],
    epsilon: f64,
    delta: f64,
) -> Result<PeReport, DiagnosticsError> {
    if centers.is_empty() || traj.len() == 0 {
        return Err(DiagnosticsError::EmptySet);
    }
    if centers.len() >= 2 {
        let bound = 0.5 * min_separation(centers)?;
        if epsilon >= bound {
            return Err(DiagnosticsError::EpsilonTooLarge { epsilon, bound });
        }
    }
    let dt = traj.dt;
    let window = (delta / dt).round() as usize;
    if window == 0 {
        return Err(DiagnosticsError::BadWindow { delta, dt });
    }
    let window = window.min(traj.len());
    let n = traj.len();
    let mut per_center_min_occupancy = Vec::with_capacity(centers.len());
    for c in centers {
        if c.len() != traj.dim() {
            return Err(DiagnosticsError::DimensionMismatch { expected: traj.dim(), got: c.len() });
        }
        // Prefix counts of samples inside the ball.
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0u64);
        for s in &traj.states {
            let inside = (s - c).norm() <= epsilon;
            prefix.push(prefix.last().unwrap() + inside as u64);
        }
        let mut min_count = u64::MAX;
        for start in 0..=(n - window) {
            min_count = min_count.min(prefix[start + window] - prefix[start]);
        }
        per_center_min_occupancy.push(dt * min_count as f64);
    }
    let floor = 2.0 * dt;
    let verdict = per_center_min_occupancy.iter().all(|&m| m >= floor);
    Ok(PeReport { epsilon, delta, per_center_min_occupancy, verdict })
}

/// Default ball radius: just under the disjointness bound.
pub fn default_epsilon(centers: &[Vector]) -> Result<f64, DiagnosticsError> {
    Ok(0.49 * min_separation(centers)?)
}

/// Summary of a center placement against the sampled limit set.
#[derive(Debug, Clone, Serialize)]
pub struct PlacementReport {
    pub fill_distance: f64,
    pub min_separation: f64,
    pub grammian_condition: f64,
    pub hausdorff_to_limit_set: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pe: Option<PeReport>,
}

pub fn placement_report(
    centers: &CenterSet,
    limit_samples: &[Vector],
    pe: Option<PeReport>,
) -> Result<PlacementReport, DiagnosticsError> {
    let pts = centers.centers();
    Ok(PlacementReport {
        fill_distance: fill_distance(limit_samples, pts)?,
        min_separation: min_separation(pts)?,
        grammian_condition: centers.condition_number(),
        hausdorff_to_limit_set: hausdorff_distance(pts, limit_samples)?,
        pe,
    })
}
