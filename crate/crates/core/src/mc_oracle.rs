//! Symbol-level Monte Carlo for flat Rayleigh MIMO links with BPSK.
//!
//! V-BLAST uses zero forcing with optimal ordering and successive
//! cancellation; Alamouti uses the standard 2×N linear combiner. Trials are
//! grouped in fixed blocks, each with its own keyed random stream, so results
//! do not depend on how blocks are scheduled across threads.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::engine::{RngFactory, StreamKey};
use crate::phy::{first_step_ber, AtTable};
use crate::units::{db_to_linear, linear_to_db};

/// Trials per random-stream block.
pub const BLOCK: u64 = 4096;

/// Largest supported antenna count.
pub const MAX_ANTENNAS: usize = 8;

pub const MIN_TRIALS: u64 = 10_000;

type C = Complex64;
type Mat = [[C; MAX_ANTENNAS]; MAX_ANTENNAS];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BerSample {
    pub m: u8,
    pub n: u8,
    pub gamma0: f64,
    pub trials: u64,
    pub bit_errors: u64,
    pub ber: f64,
    /// Normal-approximation half-width.
    pub ci95: f64,
    /// Mean post-combining SNR (Alamouti only, else 0).
    pub mean_post_snr: f64,
}

impl BerSample {
    fn new(m: u8, n: u8, gamma0: f64, trials: u64, bits_per_trial: u64, bit_errors: u64, snr_sum: f64) -> Self {
        let bits = (trials * bits_per_trial) as f64;
        let ber = bit_errors as f64 / bits;
        BerSample {
            m,
            n,
            gamma0,
            trials,
            bit_errors,
            ber,
            ci95: 1.96 * (ber * (1.0 - ber) / bits).sqrt(),
            mean_post_snr: snr_sum / trials as f64,
        }
    }

    pub fn gamma0_db(&self) -> f64 {
        linear_to_db(self.gamma0)
    }
}

fn cn<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C::new(re * s, im * s)
}

fn bpsk<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Gauss-Jordan inverse of the leading `k×k` block, with partial pivoting.
fn invert(a: &Mat, k: usize) -> Mat {
    let mut m = *a;
    let mut inv = [[C::new(0.0, 0.0); MAX_ANTENNAS]; MAX_ANTENNAS];
    for (i, row) in inv.iter_mut().enumerate().take(k) {
        row[i] = C::new(1.0, 0.0);
    }
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&x, &y| m[x][col].norm_sqr().total_cmp(&m[y][col].norm_sqr()))
            .unwrap();
        m.swap(col, pivot);
        inv.swap(col, pivot);
        let p = C::new(1.0, 0.0) / m[col][col];
        for j in 0..k {
            m[col][j] *= p;
            inv[col][j] *= p;
        }
        for r in 0..k {
            if r != col {
                let f = m[r][col];
                if f != C::new(0.0, 0.0) {
                    for j in 0..k {
                        let (mc, ic) = (m[col][j], inv[col][j]);
                        m[r][j] -= f * mc;
                        inv[r][j] -= f * ic;
                    }
                }
            }
        }
    }
    inv
}

/// One V-BLAST vector: returns the number of wrong bits among the `m`
/// streams.
fn vblast_trial<R: Rng + ?Sized>(m: usize, n: usize, noise_var: f64, rng: &mut R) -> u64 {
    let mut h: Mat = [[C::new(0.0, 0.0); MAX_ANTENNAS]; MAX_ANTENNAS];
    for row in h.iter_mut().take(n) {
        for e in row.iter_mut().take(m) {
            *e = cn(rng, 1.0);
        }
    }
    let mut x = [0.0f64; MAX_ANTENNAS];
    for v in x.iter_mut().take(m) {
        *v = bpsk(rng);
    }
    // Total transmit energy is split over the M antennas.
    let scale = 1.0 / (m as f64).sqrt();
    let mut y = [C::new(0.0, 0.0); MAX_ANTENNAS];
    for r in 0..n {
        let mut acc = cn(rng, noise_var);
        for c in 0..m {
            acc += h[r][c] * (x[c] * scale);
        }
        y[r] = acc;
    }
    let mut active: [usize; MAX_ANTENNAS] = [0; MAX_ANTENNAS];
    for (i, a) in active.iter_mut().enumerate().take(m) {
        *a = i;
    }
    let mut k = m;
    let mut errors = 0;
    while k > 0 {
        let mut gram: Mat = [[C::new(0.0, 0.0); MAX_ANTENNAS]; MAX_ANTENNAS];
        let mut hy = [C::new(0.0, 0.0); MAX_ANTENNAS];
        for a in 0..k {
            let ca = active[a];
            for b in a..k {
                let cb = active[b];
                let mut s = C::new(0.0, 0.0);
                for row in h.iter().take(n) {
                    s += row[ca].conj() * row[cb];
                }
                gram[a][b] = s;
                gram[b][a] = s.conj();
            }
            for r in 0..n {
                hy[a] += h[r][ca].conj() * y[r];
            }
        }
        let inv = invert(&gram, k);
        // Highest post-detection SNR = smallest noise enhancement; ties go
        // to the lowest stream index because `active` stays sorted.
        let mut p = 0;
        for a in 1..k {
            if inv[a][a].re < inv[p][p].re {
                p = a;
            }
        }
        let mut z = C::new(0.0, 0.0);
        for b in 0..k {
            z += inv[p][b] * hy[b];
        }
        let stream = active[p];
        let decided = if z.re >= 0.0 { 1.0 } else { -1.0 };
        if decided != x[stream] {
            errors += 1;
        }
        for r in 0..n {
            y[r] -= h[r][stream] * (decided * scale);
        }
        for a in p..k - 1 {
            active[a] = active[a + 1];
        }
        k -= 1;
    }
    errors
}

/// One Alamouti block (two symbols); returns (bit errors, post-combining
/// SNR).
fn alamouti_trial<R: Rng + ?Sized>(n: usize, noise_var: f64, rng: &mut R) -> (u64, f64) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (x1, x2) = (bpsk(rng), bpsk(rng));
    let mut z1 = C::new(0.0, 0.0);
    let mut z2 = C::new(0.0, 0.0);
    let mut frob = 0.0;
    for _ in 0..n {
        let h1 = cn(rng, 1.0);
        let h2 = cn(rng, 1.0);
        let y1 = (h1 * x1 + h2 * x2) * s + cn(rng, noise_var);
        let y2 = (h2 * x1 - h1 * x2) * s + cn(rng, noise_var);
        z1 += h1.conj() * y1 + h2 * y2.conj();
        z2 += h2.conj() * y1 - h1 * y2.conj();
        frob += h1.norm_sqr() + h2.norm_sqr();
    }
    let wrong = |z: C, x: f64| u64::from((z.re >= 0.0) != (x > 0.0));
    (wrong(z1, x1) + wrong(z2, x2), frob * s * s / noise_var)
}

fn run_blocks<F>(first_block: u64, trials: u64, seed: u64, f: F) -> (u64, f64)
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> (u64, f64) + Sync,
{
    let factory = RngFactory::new(seed);
    let blocks = trials.div_ceil(BLOCK);
    (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = factory.stream(StreamKey::MonteCarlo { block: first_block + b });
            let count = BLOCK.min(trials - b * BLOCK);
            let mut errs = 0;
            let mut snr = 0.0;
            for _ in 0..count {
                let (e, s) = f(&mut rng);
                errs += e;
                snr += s;
            }
            (errs, snr)
        })
        // Fixed reduction order keeps the float sum schedule independent.
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0, 0.0), |(a, x), (b, y)| (a + b, x + y))
}

fn check_dims(m: u8, n: u8) {
    assert!(m >= 1 && m <= n, "need 1 <= M <= N, got {m}x{n}");
    assert!(n as usize <= MAX_ANTENNAS, "at most {MAX_ANTENNAS} antennas");
}

/// `gamma0` is the average SNR per receive branch.
pub fn simulate_vblast_ber(m: u8, n: u8, gamma0: f64, trials: u64, seed: u64) -> BerSample {
    check_dims(m, n);
    assert!(gamma0 > 0.0 && trials >= 1);
    let noise = 1.0 / gamma0;
    let (errs, _) = run_blocks(0, trials, seed, |rng| (vblast_trial(m as usize, n as usize, noise, rng), 0.0));
    BerSample::new(m, n, gamma0, trials, m as u64, errs, 0.0)
}

/// Keeps adding blocks until `min_errors` bit errors or `max_trials`.
/// Stopping points fall on fixed batch boundaries, so the result is
/// deterministic.
pub fn simulate_vblast_adaptive(m: u8, n: u8, gamma0: f64, min_errors: u64, max_trials: u64, seed: u64) -> BerSample {
    check_dims(m, n);
    let noise = 1.0 / gamma0;
    let batch = 64 * BLOCK;
    let mut trials = 0;
    let mut errs = 0;
    while trials < max_trials && (errs < min_errors || trials < MIN_TRIALS) {
        let t = batch.min(max_trials - trials);
        let (e, _) = run_blocks(trials / BLOCK, t, seed, |rng| {
            (vblast_trial(m as usize, n as usize, noise, rng), 0.0)
        });
        errs += e;
        trials += t;
    }
    BerSample::new(m, n, gamma0, trials, m as u64, errs, 0.0)
}

/// `gamma_total` is total transmit energy per symbol over N0. Each trial is
/// one two-symbol block.
pub fn simulate_alamouti_ber(n: u8, gamma_total: f64, trials: u64, seed: u64) -> BerSample {
    check_dims(1, n);
    assert!(gamma_total > 0.0 && trials >= 1);
    let noise = 1.0 / gamma_total;
    let (errs, snr) = run_blocks(0, trials, seed, |rng| alamouti_trial(n as usize, noise, rng));
    BerSample::new(2, n, gamma_total, trials, 2, errs, snr)
}

/// Coherent BPSK with `l`-branch maximal-ratio combining over i.i.d. Rayleigh
/// branches of mean SNR `gamma`.
pub fn mrc_bpsk_ber(l: u32, gamma: f64) -> f64 {
    let mu = (gamma / (1.0 + gamma)).sqrt();
    let lo = (1.0 - mu) / 2.0;
    let hi = (1.0 + mu) / 2.0;
    let mut sum = 0.0;
    let mut binom = 1.0;
    for k in 0..l {
        if k > 0 {
            binom *= (l - 1 + k) as f64 / k as f64;
        }
        sum += binom * hi.powi(k as i32);
    }
    lo.powi(l as i32) * sum
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationParams {
    pub grid_db: Vec<f64>,
    pub trials: u64,
    pub min_errors: u64,
    /// Cap after automatic trial increases.
    pub max_trials: u64,
    /// Step used when a point is lowered for lack of errors.
    pub lower_step_db: f64,
    pub floor_db: f64,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        CalibrationParams {
            grid_db: vec![20.0, 25.0, 30.0],
            trials: 10_000_000,
            min_errors: 100,
            max_trials: 40_000_000,
            lower_step_db: 2.5,
            floor_db: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub m: u8,
    pub n: u8,
    pub a_t: f64,
    pub samples: Vec<BerSample>,
    /// Ratio of simulated BER to the first-step expression at each point.
    pub ratios: Vec<f64>,
    pub notes: Vec<String>,
}

impl Calibration {
    /// Relative spread `(max − min) / median` of the per-point ratios.
    pub fn spread(&self) -> f64 {
        let max = self.ratios.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.ratios.iter().cloned().fold(f64::MAX, f64::min);
        (max - min) / self.a_t
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Median over the grid of `BER_MC / P̄_e1`. A point that yields fewer than
/// `min_errors` even at `max_trials` is moved down by `lower_step_db` until
/// it does or reaches `floor_db`.
pub fn calibrate_at(m: u8, n: u8, seed: u64, p: &CalibrationParams) -> Calibration {
    check_dims(m, n);
    let mut samples: Vec<BerSample> = Vec::new();
    let mut notes = Vec::new();
    for &g0 in &p.grid_db {
        let mut g = g0;
        loop {
            if samples.iter().any(|s| (s.gamma0_db() - g).abs() < 1e-9) {
                notes.push(format!("{m}x{n}: {g0} dB lowered onto existing point {g} dB, dropped"));
                break;
            }
            let mut s = simulate_vblast_adaptive(m, n, db_to_linear(g), p.min_errors, p.trials, seed);
            if s.bit_errors < p.min_errors && p.max_trials > p.trials {
                notes.push(format!(
                    "{m}x{n}: {g} dB gave {} errors in {} trials, raised to {}",
                    s.bit_errors, s.trials, p.max_trials
                ));
                s = simulate_vblast_adaptive(m, n, db_to_linear(g), p.min_errors, p.max_trials, seed);
            }
            if s.bit_errors >= p.min_errors {
                samples.push(s);
                break;
            }
            let lower = g - p.lower_step_db;
            if lower < p.floor_db {
                notes.push(format!("{m}x{n}: {g} dB still short of errors at the floor, dropped"));
                break;
            }
            notes.push(format!("{m}x{n}: {g} dB gave {} errors, lowered to {lower} dB", s.bit_errors));
            g = lower;
        }
    }
    assert!(!samples.is_empty(), "no usable calibration point for {m}x{n}");
    let ratios: Vec<f64> = samples
        .iter()
        .map(|s| s.ber / first_step_ber(m, n, s.gamma0))
        .collect();
    let a_t = median(&mut ratios.clone());
    Calibration { m, n, a_t, samples, ratios, notes }
}

/// Calibrates every listed mode into a table whose header records the seed
/// and any grid adjustments.
pub fn calibrate_table(modes: &[(u8, u8)], seed: u64, p: &CalibrationParams) -> (AtTable, Vec<Calibration>) {
    let mut table = AtTable::default();
    table.push_header("V-BLAST error-propagation coefficients a_t(M, N)");
    table.push_header(format!(
        "zero-forcing SIC Monte Carlo, seed {seed}, grid {:?} dB, {} trials (cap {}), min {} errors",
        p.grid_db, p.trials, p.max_trials, p.min_errors
    ));
    table.push_header("columns: M N a_t");
    let mut out = Vec::new();
    for &(m, n) in modes {
        let c = calibrate_at(m, n, seed, p);
        for note in &c.notes {
            table.push_header(note.clone());
        }
        let pts: Vec<String> = c
            .samples
            .iter()
            .zip(&c.ratios)
            .map(|(s, r)| format!("{:.1}dB:{r:.4}", s.gamma0_db()))
            .collect();
        table.push_header(format!("{m}x{n} ratios {}", pts.join(" ")));
        table.insert(m, n, c.a_t);
        out.push(c);
    }
    (table, out)
}

pub const CURVE_HEADER: &str = "M,N,gamma0_db,ber,ci95";

pub fn curve_csv(samples: &[BerSample]) -> String {
    let mut s = format!("{CURVE_HEADER}\n");
    for x in samples {
        let _ = writeln!(s, "{},{},{},{},{}", x.m, x.n, x.gamma0_db(), x.ber, x.ci95);
    }
    s
}
