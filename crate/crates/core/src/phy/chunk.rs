use crate::engine::SimTime;
use crate::FrameId;

use super::{BerModel, MimoMode};

/// Interval during which one interfering frame is on air at the receiver.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Overlap {
    pub frame: FrameId,
    pub start: SimTime,
    pub end: SimTime,
}

/// Sub-interval of a reception with a constant set of interferers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkSpan {
    pub start: SimTime,
    pub end: SimTime,
    pub interferers: Vec<FrameId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chunk {
    pub start: SimTime,
    pub end: SimTime,
    pub interferers: Vec<FrameId>,
    pub sinr: f64,
    pub n_bits: u64,
}

/// Part of a frame sent at one bit rate (e.g. the SISO-rate preamble).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateSegment {
    pub start: SimTime,
    pub end: SimTime,
    pub bits_per_sec: f64,
}

/// Splits `[start, end)` at every interferer start and end instant.
pub fn chunk_timeline(start: SimTime, end: SimTime, overlaps: &[Overlap]) -> Vec<ChunkSpan> {
    assert!(start <= end, "reception interval reversed");
    let mut cuts: Vec<SimTime> = vec![start, end];
    for o in overlaps {
        assert!(o.start <= o.end, "overlap interval reversed");
        for t in [o.start, o.end] {
            if t > start && t < end {
                cuts.push(t);
            }
        }
    }
    cuts.sort_unstable();
    cuts.dedup();
    cuts.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let interferers = overlaps
                .iter()
                .filter(|o| o.start <= a && o.end >= b && o.start < o.end)
                .map(|o| o.frame)
                .collect();
            ChunkSpan {
                start: a,
                end: b,
                interferers,
            }
        })
        .collect()
}

/// Bits carried in `[start, end)`, rounded up.
pub fn bits_in_interval(segments: &[RateSegment], start: SimTime, end: SimTime) -> u64 {
    let bits: f64 = segments
        .iter()
        .map(|s| {
            let a = s.start.max(start);
            let b = s.end.min(end);
            if b > a {
                (b - a).as_nanos() as f64 * s.bits_per_sec * 1e-9
            } else {
                0.0
            }
        })
        .sum();
    // Absorb float noise on exact integers before rounding up.
    (bits - 1e-9).ceil().max(0.0) as u64
}

/// `1 − Π (1 − BER_i)^{n_i}` over the chunks.
pub fn packet_error_rate(chunks: &[Chunk], mode: MimoMode, model: &BerModel) -> f64 {
    let log_success: f64 = chunks
        .iter()
        .filter(|c| c.n_bits > 0)
        .map(|c| {
            let ber = model.ber(mode, c.sinr);
            c.n_bits as f64 * (-ber).ln_1p()
        })
        .sum();
    (1.0 - log_success.exp()).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn us(t: u64) -> SimTime {
        SimTime::from_micros(t)
    }

    fn ov(id: u64, a: u64, b: u64) -> Overlap {
        Overlap {
            frame: FrameId(id),
            start: us(a),
            end: us(b),
        }
    }

    fn chunk(sinr: f64, n_bits: u64) -> Chunk {
        Chunk {
            start: SimTime::ZERO,
            end: SimTime::ZERO,
            interferers: vec![],
            sinr,
            n_bits,
        }
    }

    #[test]
    fn clean_reception_is_one_chunk() {
        let c = chunk_timeline(us(0), us(100), &[]);
        assert_eq!(c.len(), 1);
        assert!(c[0].interferers.is_empty());
    }

    #[test]
    fn inner_interferer_gives_three_chunks() {
        let c = chunk_timeline(us(0), us(100), &[ov(1, 30, 60)]);
        assert_eq!(c.len(), 3);
        assert_eq!(c[1].interferers, vec![FrameId(1)]);
        assert!(c[0].interferers.is_empty() && c[2].interferers.is_empty());
    }

    #[test]
    fn head_mid_tail_scenario_gives_four_unequal_chunks() {
        // A overlaps the head; B starts mid-frame and C joins it in the tail.
        let c = chunk_timeline(
            us(100),
            us(500),
            &[ov(1, 0, 200), ov(2, 260, 700), ov(3, 350, 700)],
        );
        assert_eq!(c.len(), 4);
        let lens: Vec<u64> = c.iter().map(|s| (s.end - s.start).as_nanos()).collect();
        assert_eq!(lens, vec![100_000, 60_000, 90_000, 150_000]);
        assert_eq!(c[3].interferers, vec![FrameId(2), FrameId(3)]);
    }

    #[test]
    fn per_examples() {
        let model = BerModel::default();
        let m = MimoMode::Siso;
        assert_eq!(packet_error_rate(&[chunk(1e6, 1000)], m, &model), 0.0);
        assert!((packet_error_rate(&[chunk(0.0, 1)], m, &model) - 0.5).abs() < 1e-12);
        // ½e^{−γ} = 0.001 at γ = ln 500.
        let g = 500f64.ln();
        let per = packet_error_rate(&[chunk(g, 1000), chunk(1e6, 500)], m, &model);
        let expect = 1.0 - 0.999f64.powi(1000);
        assert!((per - expect).abs() < 1e-12);
        assert!((per - 0.632).abs() < 1e-3);
    }

    #[test]
    fn bit_counts_follow_segment_rates() {
        let segs = [
            RateSegment { start: us(0), end: us(192), bits_per_sec: 1e6 },
            RateSegment { start: us(192), end: us(1192), bits_per_sec: 2e6 },
        ];
        assert_eq!(bits_in_interval(&segs, us(0), us(1192)), 192 + 2000);
        assert_eq!(bits_in_interval(&segs, us(100), us(200)), 92 + 16);
        assert_eq!(bits_in_interval(&segs, SimTime::from_nanos(1), SimTime::from_nanos(2)), 1);
    }

    proptest! {
        #[test]
        fn chunks_tile_the_reception(
            start in 0u64..1000, len in 1u64..5000,
            ivs in proptest::collection::vec((0u64..7000, 0u64..3000), 0..6)
        ) {
            let overlaps: Vec<Overlap> = ivs.iter().enumerate()
                .map(|(k, &(a, l))| ov(k as u64, a, a + l)).collect();
            let spans = chunk_timeline(us(start), us(start + len), &overlaps);
            prop_assert_eq!(spans.first().unwrap().start, us(start));
            prop_assert_eq!(spans.last().unwrap().end, us(start + len));
            for w in spans.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
            }
            for s in &spans {
                prop_assert!(s.start < s.end);
                for o in &overlaps {
                    // An interferer either covers the whole chunk or misses it.
                    let inside = o.start < s.end && o.end > s.start;
                    let listed = s.interferers.contains(&o.frame);
                    prop_assert_eq!(inside, listed);
                }
            }
        }

        #[test]
        fn per_is_a_probability_and_monotone(
            sinrs in proptest::collection::vec(0.0f64..20.0, 1..5),
            bits in proptest::collection::vec(0u64..3000, 5),
            extra in 1u64..500,
        ) {
            let model = BerModel::default();
            let chunks: Vec<Chunk> = sinrs.iter().zip(&bits).map(|(&s, &b)| chunk(s, b)).collect();
            let per = packet_error_rate(&chunks, MimoMode::Siso, &model);
            prop_assert!((0.0..=1.0).contains(&per));
            let mut more_bits = chunks.clone();
            more_bits[0].n_bits += extra;
            prop_assert!(packet_error_rate(&more_bits, MimoMode::Siso, &model) >= per);
            let mut worse = chunks.clone();
            worse[0].sinr *= 0.5;
            prop_assert!(packet_error_rate(&worse, MimoMode::Siso, &model) >= per);
        }
    }
}
