//! Large-scale two-ray path loss with i.i.d. Rayleigh small-scale fading.
//!
//! Every transmitted frame gets one independent N×M received-power matrix per
//! potential receiver; the matrix is held fixed for the whole reception.

use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::units::dbm_to_watts;
use crate::{FrameId, NodeId};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Placements closer than this are evaluated at this distance.
pub const MIN_DISTANCE_M: f64 = 1.0;

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

/// Simplified two-ray ground model `Pr = Pt (ht hr)^2 / d^4` with unit
/// antenna gains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathModel {
    pub tx_power_dbm: f64,
    pub antenna_height_m: f64,
}

impl Default for PathModel {
    fn default() -> Self {
        PathModel {
            tx_power_dbm: 10.0,
            antenna_height_m: 1.2,
        }
    }
}

impl PathModel {
    pub fn tx_power_w(&self) -> f64 {
        dbm_to_watts(self.tx_power_dbm)
    }

    /// Linear power gain at distance `d` metres.
    pub fn path_gain(&self, d: f64) -> f64 {
        let d = if d < MIN_DISTANCE_M {
            if !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
                log::warn!("distance {d} m clamped to {MIN_DISTANCE_M} m");
            }
            MIN_DISTANCE_M
        } else {
            d
        };
        let h2 = self.antenna_height_m * self.antenna_height_m;
        h2 * h2 / (d * d * d * d)
    }

    /// Mean received power (total over all transmit antennas, one receive
    /// antenna) in watts.
    pub fn rx_power_w(&self, d: f64) -> f64 {
        self.tx_power_w() * self.path_gain(d)
    }

    /// Distance at which the mean received power equals `dbm`.
    pub fn range_for_power(&self, dbm: f64) -> f64 {
        let h2 = self.antenna_height_m * self.antenna_height_m;
        (self.tx_power_w() * h2 * h2 / dbm_to_watts(dbm)).powf(0.25)
    }
}

/// Received power per (receive antenna i, transmit antenna j), in watts.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerMatrix {
    n_rx: usize,
    n_tx: usize,
    entries: Vec<f64>,
    pub source: NodeId,
    pub frame: FrameId,
}

impl PowerMatrix {
    /// `entries` is row-major: `entries[i * n_tx + j]`.
    pub fn new(n_rx: usize, n_tx: usize, entries: Vec<f64>, source: NodeId, frame: FrameId) -> Self {
        assert_eq!(entries.len(), n_rx * n_tx, "matrix shape mismatch");
        assert!(entries.iter().all(|&p| p >= 0.0), "negative power entry");
        PowerMatrix {
            n_rx,
            n_tx,
            entries,
            source,
            frame,
        }
    }

    pub fn uniform(n_rx: usize, n_tx: usize, p: f64) -> Self {
        Self::new(n_rx, n_tx, vec![p; n_rx * n_tx], NodeId(0), FrameId(0))
    }

    pub fn n_rx(&self) -> usize {
        self.n_rx
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n_tx + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Power collected on receive antenna `i` from all transmit antennas.
    pub fn row_power(&self, i: usize) -> f64 {
        self.entries[i * self.n_tx..(i + 1) * self.n_tx].iter().sum()
    }

    /// Sum of all entries: `(Pt/M) · G · ‖H‖²_F`.
    pub fn frobenius_power(&self) -> f64 {
        self.entries.iter().sum()
    }
}

/// Draws one Rayleigh-faded power matrix for a link of length `distance`.
///
/// Entries are `(Pt/M) · G(d) · e_ij` with `e_ij` i.i.d. unit-mean exponential.
#[allow(clippy::too_many_arguments)]
pub fn draw_power_matrix<R: Rng + ?Sized>(
    model: &PathModel,
    source: NodeId,
    distance: f64,
    n_tx: usize,
    n_rx: usize,
    frame: FrameId,
    rng: &mut R,
) -> PowerMatrix {
    assert!(n_tx >= 1 && n_rx >= 1, "antenna counts must be positive");
    let mean = model.rx_power_w(distance) / n_tx as f64;
    let entries = (0..n_rx * n_tx)
        .map(|_| {
            let e: f64 = rng.sample(Exp1);
            mean * e
        })
        .collect();
    PowerMatrix {
        n_rx,
        n_tx,
        entries,
        source,
        frame,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::watts_to_dbm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DRAWS: usize = 100_000;

    #[test]
    fn table_thresholds_are_two_ray_powers() {
        let m = PathModel::default();
        assert!((watts_to_dbm(m.rx_power_w(150.0)) - (-73.8764)).abs() < 0.01);
        assert!((watts_to_dbm(m.rx_power_w(225.0)) - (-80.9201)).abs() < 0.01);
        assert!((m.range_for_power(-80.9201) - 225.0).abs() < 0.01);
    }

    #[test]
    fn fourth_power_law() {
        let m = PathModel::default();
        for d in [3.0, 40.0, 150.0, 999.0] {
            let r = m.path_gain(2.0 * d) / m.path_gain(d);
            assert!((r - 1.0 / 16.0).abs() < 1e-12);
            let slope = (m.path_gain(d * 1.01).ln() - m.path_gain(d).ln()) / 1.01f64.ln();
            assert!((slope + 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn short_distances_clamp() {
        let m = PathModel::default();
        assert_eq!(m.path_gain(0.0), m.path_gain(MIN_DISTANCE_M));
    }

    #[test]
    fn frobenius_sums_entries() {
        assert!((PowerMatrix::uniform(2, 2, 1e-3).frobenius_power() - 4e-3).abs() < 1e-15);
        assert_eq!(PowerMatrix::uniform(0, 0, 1.0).frobenius_power(), 0.0);
    }

    fn sample(n_tx: usize, n_rx: usize, seed: u64) -> Vec<PowerMatrix> {
        let m = PathModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..DRAWS)
            .map(|k| draw_power_matrix(&m, NodeId(0), 150.0, n_tx, n_rx, FrameId(k as u64), &mut rng))
            .collect()
    }

    #[test]
    fn entry_mean_matches_path_gain() {
        let target = PathModel::default().rx_power_w(150.0);
        let draws = sample(1, 1, 7);
        let mean = draws.iter().map(|p| p.get(0, 0)).sum::<f64>() / DRAWS as f64;
        assert!((mean / target - 1.0).abs() < 0.02, "mean ratio {}", mean / target);
    }

    #[test]
    fn power_split_halves_entries() {
        let target = PathModel::default().rx_power_w(150.0) / 2.0;
        let draws = sample(2, 1, 8);
        let mean = draws.iter().map(|p| p.get(0, 1)).sum::<f64>() / DRAWS as f64;
        assert!((mean / target - 1.0).abs() < 0.02);
    }

    #[test]
    fn frobenius_mean_is_n_times_m_entries() {
        let (m_tx, n_rx) = (2, 3);
        let p_entry = PathModel::default().rx_power_w(150.0) / m_tx as f64;
        let draws = sample(m_tx, n_rx, 9);
        let mean = draws.iter().map(|p| p.frobenius_power()).sum::<f64>() / DRAWS as f64;
        let expect = (n_rx * m_tx) as f64 * p_entry;
        assert!((mean / expect - 1.0).abs() < 0.01);
    }

    #[test]
    fn normalized_entries_pass_exponential_ks() {
        let mean = PathModel::default().rx_power_w(150.0);
        let mut e: Vec<f64> = sample(1, 1, 10).iter().map(|p| p.get(0, 0) / mean).collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = e.len() as f64;
        let d = e
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let cdf = 1.0 - (-x).exp();
                (cdf - k as f64 / n).abs().max(((k + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value of the one-sample KS statistic.
        assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn entries_are_uncorrelated() {
        let draws = sample(2, 2, 11);
        let col = |i, j| draws.iter().map(|p| p.get(i, j)).collect::<Vec<_>>();
        assert!(correlation(&col(0, 0), &col(0, 1)).abs() < 0.02);
        assert!(correlation(&col(0, 0), &col(1, 0)).abs() < 0.02);
        assert!(correlation(&col(1, 1), &col(0, 1)).abs() < 0.02);
        // Consecutive frames on the same link are independent as well.
        let a = col(0, 0);
        assert!(correlation(&a[..DRAWS - 1], &a[1..]).abs() < 0.02);
    }
}
