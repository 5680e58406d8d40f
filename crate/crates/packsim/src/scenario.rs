//! Product inflow scenarios: randomized synthetic generation and CSV replay.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::config::{MachineConfig, ScenarioSpec};
use crate::error::{InflowError, Result};

/// One product arrival at the detection point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arrival {
    /// Detection time in physics sub-steps.
    pub substep: i64,
    pub lane: u8,
}

/// A constant-rate stretch of one lane's inflow process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub lane: u8,
    pub start: f64,
    pub end: f64,
    pub rate_per_min: f64,
}

/// A replayable inflow timetable. Box spawn times are either explicit (from a
/// replay file) or derived from belt travel at the configured pitch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Product arrivals sorted by sub-step.
    pub products: Vec<Arrival>,
    /// Explicit box spawn sub-steps; `None` means boxes stream continuously at
    /// the configured pitch, paced by box belt travel.
    pub boxes: Option<Vec<i64>>,
    /// Inflow horizon in seconds (arrivals never exceed it).
    pub length: f64,
    /// Rate segments that generated this scenario, when synthetic.
    pub segments: Vec<Segment>,
}

/// Generate a deterministic randomized-inflow timetable.
///
/// Each lane is an independent piecewise-constant rate process; arrivals are
/// quasi-periodic at the segment rate with bounded relative jitter.
pub fn generate_scenario(spec: &ScenarioSpec, seed: u64, machine: &MachineConfig) -> Scenario {
    let mut products = Vec::new();
    let mut segments = Vec::new();
    let subtick = machine.physics_subtick;
    for lane in 1..=machine.lanes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e3779b97f4a7c15u64.wrapping_mul(lane as u64)));
        let mut t = 0.0;
        let mut next_arrival = 0.0;
        while t < spec.episode_length {
            let duration = rng.gen_range(spec.segment_min..=spec.segment_max);
            let rate = rng.gen_range(spec.rate_min..=spec.rate_max);
            let end = (t + duration).min(spec.episode_length);
            segments.push(Segment {
                lane,
                start: t,
                end,
                rate_per_min: rate,
            });
            let interval = 60.0 / rate;
            while next_arrival < end {
                let substep = (next_arrival / subtick).round() as i64;
                products.push(Arrival { substep, lane });
                let jitter = 1.0 + spec.arrival_jitter * rng.gen_range(-1.0..=1.0);
                next_arrival += interval * jitter;
            }
            t = end;
        }
    }
    products.sort_by_key(|a| (a.substep, a.lane));
    Scenario {
        products,
        boxes: None,
        length: spec.episode_length,
        segments,
    }
}

/// Parse an inflow replay file.
///
/// Format: header `time_s,lane,kind`, then time-sorted rows with
/// `kind in {product, box}`. Box rows are optional; without them boxes stream
/// synthetically at the configured pitch.
pub fn load_inflow_csv<R: BufRead>(reader: R, machine: &MachineConfig) -> Result<Scenario> {
    let mut products = Vec::new();
    let mut boxes = Vec::new();
    let mut last_time = f64::NEG_INFINITY;
    let mut length: f64 = 0.0;
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, Ok(line))) => line,
        Some((_, Err(e))) => return Err(InflowError::Io(e.to_string()).into()),
        None => return Err(InflowError::Header.into()),
    };
    if header.trim() != "time_s,lane,kind" {
        return Err(InflowError::Header.into());
    }

    for (idx, line) in lines {
        let line = line.map_err(|e| InflowError::Io(e.to_string()))?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let row = |message: String| InflowError::Row {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 3 {
            return Err(row(format!("expected 3 fields, found {}", fields.len())).into());
        }
        let time: f64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| row(format!("invalid time `{}`", fields[0])))?;
        if time < 0.0 {
            return Err(row("negative time".into()).into());
        }
        if time < last_time {
            return Err(row("rows must be sorted by time".into()).into());
        }
        last_time = time;
        let lane: u8 = fields[1]
            .trim()
            .parse()
            .map_err(|_| row(format!("invalid lane `{}`", fields[1])))?;
        if lane < 1 || lane > machine.lanes {
            return Err(row("lane out of range".into()).into());
        }
        let substep = (time / machine.physics_subtick).round() as i64;
        match fields[2].trim() {
            "product" => products.push(Arrival { substep, lane }),
            "box" => boxes.push(substep),
            other => return Err(row(format!("unknown kind `{other}`")).into()),
        }
        length = length.max(time);
    }
    products.sort_by_key(|a| (a.substep, a.lane));
    Ok(Scenario {
        products,
        boxes: if boxes.is_empty() { None } else { Some(boxes) },
        length,
        segments: Vec::new(),
    })
}

/// Write a scenario in the replay CSV format.
pub fn export_inflow_csv<W: Write>(scenario: &Scenario, machine: &MachineConfig, mut out: W) -> Result<()> {
    writeln!(out, "time_s,lane,kind")?;
    let subtick = machine.physics_subtick;
    // Merge product and box rows in time order.
    let mut rows: Vec<(i64, u8, &'static str)> = scenario
        .products
        .iter()
        .map(|a| (a.substep, a.lane, "product"))
        .collect();
    if let Some(boxes) = &scenario.boxes {
        rows.extend(boxes.iter().map(|&s| (s, 1u8, "box")));
    }
    rows.sort_by_key(|r| (r.0, r.2, r.1));
    for (substep, lane, kind) in rows {
        writeln!(out, "{},{},{}", substep as f64 * subtick, lane, kind)?;
    }
    Ok(())
}

impl Scenario {
    /// Realized rate of each generated segment in products/min, for bound checks.
    pub fn realized_segment_rates(&self, machine: &MachineConfig) -> Vec<(Segment, f64)> {
        let subtick = machine.physics_subtick;
        self.segments
            .iter()
            .map(|seg| {
                let count = self
                    .products
                    .iter()
                    .filter(|a| {
                        let t = a.substep as f64 * subtick;
                        a.lane == seg.lane && t >= seg.start && t < seg.end
                    })
                    .count();
                let rate = count as f64 / (seg.end - seg.start) * 60.0;
                (*seg, rate)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MachineConfig;
    use std::io::BufReader;

    fn machine() -> MachineConfig {
        MachineConfig::default()
    }

    #[test]
    fn same_seed_same_timetable() {
        let spec = ScenarioSpec::default();
        let a = generate_scenario(&spec, 42, &machine());
        let b = generate_scenario(&spec, 42, &machine());
        assert_eq!(a, b);
    }

    #[test]
    fn constant_rate_arrival_count() {
        let spec = ScenarioSpec {
            rate_min: 120.0,
            rate_max: 120.0,
            segment_min: 60.0,
            segment_max: 60.0,
            episode_length: 60.0,
            arrival_jitter: 0.1,
        };
        let sc = generate_scenario(&spec, 7, &machine());
        for lane in [1u8, 2] {
            let n = sc.products.iter().filter(|a| a.lane == lane).count() as i64;
            assert!((n - 120).abs() <= 2, "lane {lane}: {n} arrivals");
        }
    }

    #[test]
    fn segment_rates_stay_in_bounds() {
        let spec = ScenarioSpec::default();
        for seed in 0..50 {
            let sc = generate_scenario(&spec, seed, &machine());
            for (seg, realized) in sc.realized_segment_rates(&machine()) {
                assert!(
                    seg.rate_per_min >= spec.rate_min && seg.rate_per_min <= spec.rate_max,
                    "segment rate out of spec"
                );
                // Jittered arrivals stay close to the nominal segment rate.
                if seg.end - seg.start >= 10.0 {
                    assert!(
                        (realized - seg.rate_per_min).abs() <= 12.0,
                        "seed {seed}: realized {realized:.1} vs nominal {:.1}",
                        seg.rate_per_min
                    );
                }
            }
        }
    }

    #[test]
    fn csv_parses_valid_rows() {
        let text = "time_s,lane,kind\n0.0,1,product\n0.5,2,product\n1.0,1,box\n";
        let sc = load_inflow_csv(BufReader::new(text.as_bytes()), &machine()).unwrap();
        assert_eq!(sc.products.len(), 2);
        assert_eq!(sc.boxes.as_ref().unwrap().len(), 1);
    }

    #[test]
    fn csv_rejects_bad_lane_with_line_number() {
        let text = "time_s,lane,kind\n0.0,1,product\n5.0,3,product\n";
        let err = load_inflow_csv(BufReader::new(text.as_bytes()), &machine()).unwrap_err();
        let msg = err.to_string();
        // The bad row is the third physical line of the file.
        assert!(msg.contains("line 3") && msg.contains("lane out of range"), "{msg}");
    }

    #[test]
    fn csv_rejects_unsorted_and_unknown_kind() {
        let text = "time_s,lane,kind\n2.0,1,product\n1.0,1,product\n";
        assert!(load_inflow_csv(BufReader::new(text.as_bytes()), &machine()).is_err());
        let text = "time_s,lane,kind\n1.0,1,crate\n";
        assert!(load_inflow_csv(BufReader::new(text.as_bytes()), &machine()).is_err());
        let text = "time_s,lane,kind\n-1.0,1,product\n";
        assert!(load_inflow_csv(BufReader::new(text.as_bytes()), &machine()).is_err());
    }

    #[test]
    fn export_import_roundtrip() {
        let spec = ScenarioSpec {
            episode_length: 30.0,
            ..ScenarioSpec::default()
        };
        let sc = generate_scenario(&spec, 3, &machine());
        let mut buf = Vec::new();
        export_inflow_csv(&sc, &machine(), &mut buf).unwrap();
        let back = load_inflow_csv(BufReader::new(buf.as_slice()), &machine()).unwrap();
        assert_eq!(sc.products, back.products);
        assert_eq!(back.boxes, None);
    }
}
