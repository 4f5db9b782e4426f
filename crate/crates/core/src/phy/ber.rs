use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use super::MimoMode;

/// Shipped coefficient table, produced by the Monte Carlo calibration.
const DEFAULT_TABLE: &str = include_str!("../../data/at_table.txt");

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no calibration entry for V-BLAST {m}x{n}")]
    Missing { m: u8, n: u8 },
}

/// DBPSK bit error probability `½·exp(−γ)`.
pub fn dbpsk_ber(sinr: f64) -> f64 {
    0.5 * (-sinr.max(0.0)).exp()
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// High-SNR first-step BER of ZF V-BLAST with optimal ordering:
/// `C(2(N−M)+1, N−M+1) / (4γ)^(N−M+1)`.
pub fn first_step_ber(m: u8, n: u8, gamma: f64) -> f64 {
    assert!(m >= 1 && m <= n, "V-BLAST requires 1 <= M <= N");
    let d = (n - m) as u32 + 1;
    binomial(2 * (n - m) as u32 + 1, d) / (4.0 * gamma).powi(d as i32)
}

/// Error-propagation coefficients `a_t(M, N)` keyed by antenna counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AtTable {
    entries: BTreeMap<(u8, u8), f64>,
    header: Vec<String>,
}

impl AtTable {
    pub fn shipped() -> Self {
        Self::parse(DEFAULT_TABLE).expect("shipped calibration table is valid")
    }

    /// Parses `M N a_t` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, CalibrationError> {
        let mut table = AtTable::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let (body, comment) = match raw.find('#') {
                Some(p) => (&raw[..p], Some(raw[p + 1..].trim())),
                None => (raw, None),
            };
            if body.trim().is_empty() {
                if let Some(c) = comment {
                    if table.entries.is_empty() {
                        table.header.push(c.to_string());
                    }
                }
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            let err = |message: String| CalibrationError::Parse { line, message };
            if fields.len() != 3 {
                return Err(err(format!("expected `M N a_t`, got {} fields", fields.len())));
            }
            let m: u8 = fields[0].parse().map_err(|e| err(format!("M: {e}")))?;
            let n: u8 = fields[1].parse().map_err(|e| err(format!("N: {e}")))?;
            let a: f64 = fields[2].parse().map_err(|e| err(format!("a_t: {e}")))?;
            if m == 0 || m > n {
                return Err(err(format!("need 1 <= M <= N, got {m}x{n}")));
            }
            if !(a.is_finite() && a > 0.0) {
                return Err(err(format!("a_t must be positive, got {a}")));
            }
            if table.entries.insert((m, n), a).is_some() {
                return Err(err(format!("duplicate entry {m}x{n}")));
            }
        }
        Ok(table)
    }

    pub fn insert(&mut self, m: u8, n: u8, a_t: f64) {
        self.entries.insert((m, n), a_t);
    }

    pub fn push_header(&mut self, line: impl Into<String>) {
        self.header.push(line.into());
    }

    pub fn get(&self, m: u8, n: u8) -> Option<f64> {
        self.entries.get(&(m, n)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((u8, u8), f64)> + '_ {
        self.entries.iter().map(|(k, v)| (*k, *v))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for h in &self.header {
            let _ = writeln!(out, "# {h}");
        }
        for ((m, n), a) in &self.entries {
            let _ = writeln!(out, "{m} {n} {a}");
        }
        out
    }
}

/// Maps (mode, SINR) to bit error probability.
#[derive(Clone, Debug)]
pub struct BerModel {
    table: Arc<AtTable>,
}

impl Default for BerModel {
    fn default() -> Self {
        BerModel::new(AtTable::shipped())
    }
}

impl BerModel {
    pub fn new(table: AtTable) -> Self {
        BerModel {
            table: Arc::new(table),
        }
    }

    pub fn table(&self) -> &AtTable {
        &self.table
    }

    /// Fails for V-BLAST modes without a calibrated coefficient.
    pub fn check(&self, mode: MimoMode) -> Result<(), CalibrationError> {
        match mode {
            MimoMode::Vblast { m, n } if self.table.get(m, n).is_none() => {
                Err(CalibrationError::Missing { m, n })
            }
            _ => Ok(()),
        }
    }

    /// SISO and post-combining Alamouti use the DBPSK curve. V-BLAST uses
    /// `a_t · P̄_e1`, capped at ½.
    ///
    /// Panics on an uncalibrated V-BLAST mode; call [`BerModel::check`] when
    /// loading a configuration.
    pub fn ber(&self, mode: MimoMode, sinr: f64) -> f64 {
        match mode {
            MimoMode::Siso | MimoMode::Alamouti { .. } => dbpsk_ber(sinr),
            MimoMode::Vblast { m, n } => {
                if sinr <= 0.0 {
                    return 0.5;
                }
                let a_t = self
                    .table
                    .get(m, n)
                    .unwrap_or_else(|| panic!("uncalibrated V-BLAST {m}x{n}"));
                (a_t * first_step_ber(m, n, sinr)).min(0.5)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_table() -> BerModel {
        let mut t = AtTable::default();
        for n in 1..=5 {
            for m in 1..=n {
                t.insert(m, n, 1.0);
            }
        }
        BerModel::new(t)
    }

    #[test]
    fn dbpsk_limits() {
        assert!(dbpsk_ber(1e3) < 1e-300);
        assert!((dbpsk_ber(1e-12) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn full_multiplexing_first_step_is_inverse_four_gamma() {
        for n in 1..=5u8 {
            let g = 37.0;
            assert!((first_step_ber(n, n, g) - 1.0 / (4.0 * g)).abs() < 1e-15);
        }
        // C(3,2) = 3 for one spare antenna.
        assert!((first_step_ber(2, 3, 10.0) - 3.0 / 1600.0).abs() < 1e-15);
        assert!((first_step_ber(2, 4, 10.0) - 10.0 / 64_000.0).abs() < 1e-15);
    }

    #[test]
    fn vblast_ber_is_clamped_at_half() {
        let model = unit_table();
        assert_eq!(model.ber(MimoMode::Vblast { m: 3, n: 3 }, 0.01), 0.5);
        assert_eq!(model.ber(MimoMode::Vblast { m: 3, n: 3 }, 0.0), 0.5);
    }

    #[test]
    fn ber_is_monotone_in_sinr() {
        let model = BerModel::default();
        let modes = [
            MimoMode::Siso,
            MimoMode::Alamouti { n: 3 },
            MimoMode::Vblast { m: 2, n: 2 },
            MimoMode::Vblast { m: 2, n: 3 },
            MimoMode::Vblast { m: 3, n: 4 },
            MimoMode::Vblast { m: 4, n: 4 },
        ];
        for mode in modes {
            let mut prev = f64::INFINITY;
            for k in 0..400 {
                let g = 10f64.powf(-2.0 + k as f64 * 0.02);
                let b = model.ber(mode, g);
                assert!(b <= prev, "{mode} not monotone at {g}");
                prev = b;
            }
        }
    }

    #[test]
    fn high_snr_slope_is_diversity_order() {
        let model = BerModel::default();
        for (m, n) in [(2u8, 2u8), (2, 3), (3, 4), (1, 2), (4, 4)] {
            let mode = MimoMode::Vblast { m, n };
            let (g1, g2) = (100.0, 1000.0);
            let slope = (model.ber(mode, g2).log10() - model.ber(mode, g1).log10()) / 1.0;
            let order = (n - m + 1) as f64;
            assert!((slope + order).abs() <= 0.15, "{m}x{n} slope {slope}");
        }
    }

    #[test]
    fn missing_entry_is_reported() {
        let model = BerModel::new(AtTable::default());
        assert_eq!(
            model.check(MimoMode::Vblast { m: 2, n: 3 }),
            Err(CalibrationError::Missing { m: 2, n: 3 })
        );
        assert!(model.check(MimoMode::Alamouti { n: 3 }).is_ok());
    }

    #[test]
    fn table_parse_and_format() {
        let t = AtTable::parse("# seed 1\n\n2 3 1.25 # note\n1 1 1\n").unwrap();
        assert_eq!(t.get(2, 3), Some(1.25));
        assert_eq!(AtTable::parse(&t.to_text()).unwrap(), t);
        assert!(matches!(
            AtTable::parse("2 3\n"),
            Err(CalibrationError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            AtTable::parse("1 1 1\n3 2 1.0\n"),
            Err(CalibrationError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn shipped_table_covers_simulated_modes() {
        let t = AtTable::shipped();
        for (m, n) in [(1, 1), (1, 2), (2, 2), (2, 3), (3, 3), (3, 4), (4, 4), (4, 5), (5, 5)] {
            assert!(t.get(m, n).is_some(), "missing {m}x{n}");
        }
    }
}
