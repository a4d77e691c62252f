use crate::trajopt::{barrier, Control, ControlRegularizer, CostEval, Objective, State};

use super::track::Track;

/// Progress shortfall against a constant-speed reference, lateral excursion barrier, control terms.
#[derive(Debug, Clone)]
pub struct TrackCost<'a> {
    pub track: &'a Track,
    /// Unwrapped arc length of the start state.
    pub s0: f64,
    pub target_speed: f64,
    pub h: f64,
    pub progress_weight: f64,
    pub excursion_weight: f64,
    pub regularizer: ControlRegularizer,
}

impl TrackCost<'_> {
    /// Unwrapped arc lengths along `z`, each unwrapped against its predecessor.
    pub fn arc_lengths(&self, z: &[State]) -> Vec<f64> {
        let mut prev = self.s0;
        z.iter()
            .enumerate()
            .map(|(i, zi)| {
                if i > 0 {
                    prev = self.track.unwrap_s(self.track.progress([zi[0], zi[1]]).s, prev);
                }
                prev
            })
            .collect()
    }
}

impl Objective for TrackCost<'_> {
    fn cost_and_grad(&self, z: &[State], u: &[Control]) -> CostEval {
        let mut e = CostEval::zeros(u.len());
        let mut prev = self.s0;
        for (i, zi) in z.iter().enumerate().skip(1) {
            let p = self.track.progress([zi[0], zi[1]]);
            let s = self.track.unwrap_s(p.s, prev);
            prev = s;
            let deficit = self.s0 + self.target_speed * self.h * i as f64 - s;
            if deficit > 0.0 {
                e.value += self.progress_weight * deficit;
                e.dz[i][0] -= self.progress_weight * p.tangent[0];
                e.dz[i][1] -= self.progress_weight * p.tangent[1];
            }
            let (b, db) = barrier(p.d.abs() - self.track.half_width());
            if b > 0.0 {
                e.value += self.excursion_weight * b;
                let g = self.excursion_weight * db * p.d.signum();
                let n = p.normal();
                e.dz[i][0] += g * n[0];
                e.dz[i][1] += g * n[1];
            }
        }
        e.value += self.regularizer.accumulate(u, &mut e.du);
        e
    }
}
