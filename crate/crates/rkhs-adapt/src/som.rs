//! Self-organizing-map center selection driven online by trajectory samples:
//! a one-dimensional ring (or line) of prototype weights updated by a
//! winner-take-most rule with a piecewise-constant learning schedule.

use crate::cvt::{hausdorff_distance, CvtError, P2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SomError {
    #[error("map needs at least one node")]
    EmptyMap,
    #[error("unstable update at t = {t}: dt * beta = {gain} >= 1")]
    UnstableStep { t: f64, gain: f64 },
    #[error("dimension mismatch: weights are {expected}-dimensional, sample is {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("schedule must be nonempty with nonnegative rates")]
    BadSchedule,
    #[error(transparent)]
    Geometry(#[from] CvtError),
}

/// Lattice topology of the one-dimensional map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// Indices wrap: node 1 and node n_m are neighbors.
    Ring,
    /// Indices clip at the ends.
    Line,
}

/// Piecewise-constant learning rate beta(t): `pieces[k] = (t_end, beta)`
/// means beta applies for t <= t_end; past the last breakpoint the rate is
/// `tail`.
#[derive(Debug, Clone)]
pub struct BetaSchedule {
    pieces: Vec<(f64, f64)>,
    tail: f64,
}

impl BetaSchedule {
    pub fn new(pieces: Vec<(f64, f64)>, tail: f64) -> Result<Self, SomError> {
        if pieces.iter().any(|&(_, b)| !(b >= 0.0)) || !(tail >= 0.0) {
            return Err(SomError::BadSchedule);
        }
        Ok(Self { pieces, tail })
    }

    pub fn constant(beta: f64) -> Result<Self, SomError> {
        Self::new(Vec::new(), beta)
    }

    pub fn eval(&self, t: f64) -> f64 {
        for &(t_end, beta) in &self.pieces {
            if t <= t_end {
                return beta;
            }
        }
        self.tail
    }
}

/// Map state: prototype weights indexed 0..n_m, the lattice topology, the
/// learning schedule, and the current time.
#[derive(Debug, Clone)]
pub struct SomState {
    weights: Vec<P2>,
    topology: Topology,
    schedule: BetaSchedule,
    t: f64,
}

impl SomState {
    pub fn new(weights: Vec<P2>, topology: Topology, schedule: BetaSchedule) -> Result<Self, SomError> {
        if weights.is_empty() {
            return Err(SomError::EmptyMap);
        }
        Ok(Self { weights, topology, schedule, t: 0.0 })
    }

    pub fn weights(&self) -> &[P2] {
        &self.weights
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Index of the nearest weight; ties break to the lowest index.
    pub fn winner(&self, x: P2) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, w) in self.weights.iter().enumerate() {
            let d = (x - w).norm();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Winner plus its lattice neighbors: {i-1, i, i+1} with wraparound for
    /// the ring, clipped at the ends for the line.
    pub fn neighborhood(&self, winner: usize) -> Vec<usize> {
        let n = self.weights.len();
        if n == 1 {
            return vec![0];
        }
        match self.topology {
            Topology::Ring => {
                let prev = (winner + n - 1) % n;
                let next = (winner + 1) % n;
                if n == 2 {
                    return vec![0, 1];
                }
                vec![prev, winner, next]
            }
            Topology::Line => {
                let lo = winner.saturating_sub(1);
                let hi = (winner + 1).min(n - 1);
                (lo..=hi).collect()
            }
        }
    }

    /// One explicit-Euler update p_j <- p_j + dt * beta(t) (x - p_j) for the
    /// winner's neighborhood, then advance the clock by dt.
    pub fn step(&mut self, x: P2, dt: f64) -> Result<(), SomError> {
        let beta = self.schedule.eval(self.t);
        let gain = dt * beta;
        if gain >= 1.0 {
            return Err(SomError::UnstableStep { t: self.t, gain });
        }
        let winner = self.winner(x);
        for j in self.neighborhood(winner) {
            let w = self.weights[j];
            self.weights[j] = w + (x - w) * gain;
        }
        self.t += dt;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Algorithm2Output {
    pub centers: Vec<P2>,
    /// Maximum weight displacement per input sample.
    pub displacement_trace: Vec<f64>,
    /// Set when the initial prototypes were not all inside the sample hull.
    pub init_outside_domain: bool,
}

/// Online SOM center selection: initialize the prototypes on a small circle
/// at the early-sample mean, then feed the trajectory samples in order.
pub fn algorithm2(
    samples: &[P2],
    dt: f64,
    n_m: usize,
    topology: Topology,
    schedule: BetaSchedule,
) -> Result<Algorithm2Output, SomError> {
    if n_m == 0 {
        return Err(SomError::EmptyMap);
    }
    if samples.is_empty() {
        return Err(SomError::Geometry(CvtError::EmptySet));
    }
    let warmup = samples.len().min(200);
    let mut mean = P2::new(0.0, 0.0);
    for p in &samples[..warmup] {
        mean += p;
    }
    mean /= warmup as f64;
    let mean_r =
        samples[..warmup].iter().map(|p| (p - mean).norm()).sum::<f64>() / warmup as f64;
    let r = 0.5 * mean_r.max(f64::MIN_POSITIVE);
    let weights: Vec<P2> = (0..n_m)
        .map(|k| {
            let th = std::f64::consts::TAU * k as f64 / n_m as f64;
            mean + P2::new(r * th.cos(), r * th.sin())
        })
        .collect();
    let init_outside_domain = match crate::cvt::convex_hull(samples) {
        Ok(hull) => weights.iter().any(|w| !hull.contains(*w)),
        Err(_) => true,
    };
    let mut state = SomState::new(weights, topology, schedule)?;
    let mut displacement_trace = Vec::with_capacity(samples.len());
    for &x in samples {
        let before = state.weights.clone();
        state.step(x, dt)?;
        let disp = state
            .weights
            .iter()
            .zip(&before)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0_f64, f64::max);
        displacement_trace.push(disp);
    }
    Ok(Algorithm2Output { centers: state.weights, displacement_trace, init_outside_domain })
}

/// Hausdorff distance from the map weights to a reference sample set.
pub fn map_distance(state: &SomState, reference: &[P2]) -> Result<f64, SomError> {
    Ok(hausdorff_distance(state.weights(), reference)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ring_state(weights: Vec<P2>, beta: f64) -> SomState {
        SomState::new(weights, Topology::Ring, BetaSchedule::constant(beta).unwrap()).unwrap()
    }

    fn circle_samples(n: usize, r: f64) -> Vec<P2> {
        (0..n)
            .map(|k| {
                let th = std::f64::consts::TAU * k as f64 / n as f64;
                P2::new(r * th.cos(), r * th.sin())
            })
            .collect()
    }

    #[test]
    fn ring_neighborhood_wraps() {
        // Five nodes, 1-based in the description, 0-based here.
        let st = ring_state(circle_samples(5, 1.0), 0.5);
        assert_eq!(st.neighborhood(0), vec![4, 0, 1]);
        assert_eq!(st.neighborhood(2), vec![1, 2, 3]);
        assert_eq!(st.neighborhood(4), vec![3, 4, 0]);
    }

    #[test]
    fn line_neighborhood_clips() {
        let st = SomState::new(
            circle_samples(5, 1.0),
            Topology::Line,
            BetaSchedule::constant(0.5).unwrap(),
        )
        .unwrap();
        assert_eq!(st.neighborhood(0), vec![0, 1]);
        assert_eq!(st.neighborhood(2), vec![1, 2, 3]);
        assert_eq!(st.neighborhood(4), vec![3, 4]);
    }

    #[test]
    fn winner_tie_breaks_low_index() {
        let st = ring_state(vec![P2::new(-1.0, 0.0), P2::new(1.0, 0.0)], 0.5);
        assert_eq!(st.winner(P2::new(0.0, 0.0)), 0);
        assert_eq!(st.winner(P2::new(0.6, 0.0)), 1);
    }

    #[test]
    fn step_moves_only_neighborhood() {
        let mut st = ring_state(circle_samples(6, 1.0), 0.5);
        let before = st.weights().to_vec();
        let x = P2::new(1.2, 0.05);
        st.step(x, 0.1).unwrap();
        let winner = 0;
        let moved: Vec<usize> = (0..6)
            .filter(|&i| (st.weights()[i] - before[i]).norm() > 0.0)
            .collect();
        assert_eq!(moved, vec![0, 1, 5]);
        // Exact Euler update for the winner, bit identical.
        let expected = before[winner] + (x - before[winner]) * (0.1 * 0.5);
        assert_eq!(st.weights()[winner], expected);
    }

    #[test]
    fn unstable_step_rejected() {
        let mut st = ring_state(circle_samples(4, 1.0), 2.0);
        let err = st.step(P2::new(0.0, 0.0), 0.5).unwrap_err();
        assert!(matches!(err, SomError::UnstableStep { .. }));
    }

    #[test]
    fn schedule_freeze_stops_motion() {
        // beta drops to zero after t = 1: weights are frozen afterwards.
        let schedule = BetaSchedule::new(vec![(1.0, 0.9)], 0.0).unwrap();
        let mut st = SomState::new(circle_samples(4, 1.0), Topology::Ring, schedule).unwrap();
        for _ in 0..30 {
            st.step(P2::new(2.0, 2.0), 0.1).unwrap();
        }
        let frozen = st.weights().to_vec();
        for _ in 0..30 {
            st.step(P2::new(-2.0, 1.0), 0.1).unwrap();
        }
        assert_eq!(st.weights(), &frozen[..]);
    }

    #[test]
    fn constant_stream_contracts_winner() {
        // Repeated identical samples pull the constant winner geometrically.
        let mut st = ring_state(circle_samples(8, 1.0), 0.5);
        let x = P2::new(1.5, 0.0);
        let mut last = (x - st.weights()[st.winner(x)]).norm();
        for _ in 0..50 {
            st.step(x, 0.1).unwrap();
            let d = (x - st.weights()[st.winner(x)]).norm();
            assert!(d <= last + 1e-15);
            last = d;
        }
        assert!(last < 0.2);
    }

    #[test]
    fn algorithm2_circle_tracks_limit_set() {
        // 20 laps of a unit-circle stream.
        let lap = circle_samples(400, 1.0);
        let mut samples = Vec::new();
        for _ in 0..20 {
            samples.extend_from_slice(&lap);
        }
        let out = algorithm2(
            &samples,
            0.01,
            16,
            Topology::Ring,
            BetaSchedule::constant(0.99).unwrap(),
        )
        .unwrap();
        let dense = circle_samples(1440, 1.0);
        let d = crate::cvt::hausdorff_distance(&out.centers, &dense).unwrap();
        assert!(d < 0.25, "Hausdorff to circle {d}");
    }

    #[test]
    fn algorithm2_displacement_trace_len() {
        let samples = circle_samples(100, 1.0);
        let out = algorithm2(
            &samples,
            0.01,
            8,
            Topology::Ring,
            BetaSchedule::constant(0.5).unwrap(),
        )
        .unwrap();
        assert_eq!(out.displacement_trace.len(), samples.len());
        assert!(!out.init_outside_domain);
    }

    proptest! {
        // Weights stay inside the convex hull of {initial weights} ∪ samples.
        #[test]
        fn weights_confined_to_convex_hull(
            seed in 0u64..1000,
            n_steps in 1usize..200,
            beta in 0.01f64..0.99,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let weights: Vec<P2> =
                (0..5).map(|_| P2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let samples: Vec<P2> = (0..n_steps)
                .map(|_| P2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let mut all: Vec<P2> = weights.clone();
            all.extend_from_slice(&samples);
            let mut st = ring_state(weights, beta);
            for &x in &samples {
                st.step(x, 0.5).unwrap();
            }
            if let Ok(hull) = crate::cvt::convex_hull(&all) {
                // Small tolerance: containment is tested against the exact hull.
                for w in st.weights() {
                    prop_assert!(hull.contains(*w), "weight {w:?} escaped the hull");
                }
            }
        }

        // The update is local: nodes outside the neighborhood are bit identical.
        #[test]
        fn non_neighbors_untouched(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let weights: Vec<P2> =
                (0..7).map(|_| P2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let x = P2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let mut st = ring_state(weights.clone(), 0.7);
            let winner = st.winner(x);
            let neigh = st.neighborhood(winner);
            st.step(x, 0.1).unwrap();
            for i in 0..7 {
                if !neigh.contains(&i) {
                    prop_assert_eq!(st.weights()[i], weights[i]);
                }
            }
        }
    }
}
