//! Ground-truth RF search: given any encode-and-measure function that is
//! monotone non-increasing in RF, find the RF whose measured quality hits
//! the target.
//!
//! Both dial ends are probed first — they settle reachability and establish
//! a bracket. Inside the bracket the search runs false position with the
//! Illinois modification (a stale endpoint's residual is halved whenever
//! the same side wins twice in a row), falling back to plain midpoint when
//! the secant step degenerates. On the smooth monotone curves real encoders
//! produce this converges superlinearly, which is what keeps labeling a
//! corpus affordable: a handful of encodes per segment instead of a grid.

use crate::{RF_MAX, RF_MIN};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

/// Default quality tolerance for labeling runs.
pub const DEFAULT_LABEL_TOL: f64 = 0.1;
/// Default cap on refinement steps (bracket probes not included).
pub const DEFAULT_LABEL_MAX_ITERS: usize = 12;

/// How a search ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchStatus {
    /// |achieved − target| ≤ tol.
    Converged,
    /// Iteration budget exhausted; the result is the best point seen.
    MaxIters,
    /// The target lies outside what the RF dial can produce; the result is
    /// the nearest rail.
    Unreachable,
}

impl fmt::Display for SearchStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchStatus::Converged => "converged",
            SearchStatus::MaxIters => "max-iters",
            SearchStatus::Unreachable => "unreachable",
        })
    }
}

impl FromStr for SearchStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "converged" => Ok(SearchStatus::Converged),
            "max-iters" => Ok(SearchStatus::MaxIters),
            "unreachable" => Ok(SearchStatus::Unreachable),
            other => Err(format!("unknown search status `{other}`")),
        }
    }
}

/// Result of one RF search.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSearch {
    pub rf: f64,
    pub achieved: f64,
    pub evaluations: usize,
    pub status: SearchStatus,
}

impl LabelSearch {
    pub fn converged(&self) -> bool {
        self.status == SearchStatus::Converged
    }
}

/// The quality evaluation failed; carries the RF that was being probed.
#[derive(Debug)]
pub struct AdapterFailure<E> {
    pub rf: f64,
    pub source: E,
}

impl<E: fmt::Display> fmt::Display for AdapterFailure<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "quality evaluation failed at rf {}: {}", self.rf, self.source)
    }
}

impl<E: std::error::Error + 'static> std::error::Error for AdapterFailure<E> {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

struct Probe<'a, F> {
    quality_at: &'a mut F,
    evaluations: usize,
}

impl<'a, F, E> Probe<'a, F>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    fn at(&mut self, rf: f64) -> Result<f64, AdapterFailure<E>> {
        self.evaluations += 1;
        (self.quality_at)(rf).map_err(|source| AdapterFailure { rf, source })
    }
}

/// Searches [0, 51] for the RF whose measured quality is within `tol` of
/// `target`. `quality_at` must be monotone non-increasing in RF (a contract,
/// not verified per call). Total evaluations never exceed `max_iters + 2`.
pub fn search_rf<F, E>(
    mut quality_at: F,
    target: f64,
    tol: f64,
    max_iters: usize,
) -> Result<LabelSearch, AdapterFailure<E>>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    assert!(target.is_finite() && tol > 0.0 && max_iters >= 1);
    let mut probe = Probe { quality_at: &mut quality_at, evaluations: 0 };

    let finish = |rf: f64, achieved: f64, evaluations: usize, status: SearchStatus| LabelSearch {
        rf,
        achieved,
        evaluations,
        status,
    };

    // Quality is highest at the low end of the dial.
    let v_best = probe.at(RF_MIN)?;
    if (v_best - target).abs() <= tol {
        return Ok(finish(RF_MIN, v_best, probe.evaluations, SearchStatus::Converged));
    }
    if v_best < target {
        return Ok(finish(RF_MIN, v_best, probe.evaluations, SearchStatus::Unreachable));
    }
    let v_worst = probe.at(RF_MAX)?;
    if (v_worst - target).abs() <= tol {
        return Ok(finish(RF_MAX, v_worst, probe.evaluations, SearchStatus::Converged));
    }
    if v_worst > target {
        return Ok(finish(RF_MAX, v_worst, probe.evaluations, SearchStatus::Unreachable));
    }

    // Bracket holds: quality(0) > target > quality(51). Work on the
    // residual g = quality − target, positive at `a`, negative at `b`.
    let (mut a, mut b) = (RF_MIN, RF_MAX);
    let (mut ga, mut gb) = (v_best - target, v_worst - target);
    let (mut best_rf, mut best_v) = if ga.abs() <= gb.abs() { (a, v_best) } else { (b, v_worst) };
    let mut last_side = 0i8;

    for _ in 0..max_iters {
        // Secant through the bracket endpoints; midpoint when degenerate.
        let mut x = b - gb * (b - a) / (gb - ga);
        if !x.is_finite() || x <= a || x >= b {
            x = 0.5 * (a + b);
        }
        let v = probe.at(x)?;
        let g = v - target;
        if g.abs() < (best_v - target).abs() {
            best_rf = x;
            best_v = v;
        }
        if g.abs() <= tol {
            return Ok(finish(x, v, probe.evaluations, SearchStatus::Converged));
        }
        if g > 0.0 {
            a = x;
            ga = g;
            if last_side == 1 {
                gb *= 0.5;
            }
            last_side = 1;
        } else {
            b = x;
            gb = g;
            if last_side == -1 {
                ga *= 0.5;
            }
            last_side = -1;
        }
    }
    Ok(finish(best_rf, best_v, probe.evaluations, SearchStatus::MaxIters))
}

/// One labeled segment as persisted by labeling runs.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub source_id: u64,
    pub rf_label: f64,
    pub achieved: f64,
    pub evaluations: usize,
    pub status: SearchStatus,
}

impl LabelRecord {
    pub fn from_search(source_id: u64, search: &LabelSearch) -> Self {
        LabelRecord {
            source_id,
            rf_label: search.rf,
            achieved: search.achieved,
            evaluations: search.evaluations,
            status: search.status,
        }
    }
}

#[derive(Debug)]
pub enum LabelStoreError {
    BadLine { line: usize, message: String },
    Io(io::Error),
}

impl fmt::Display for LabelStoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelStoreError::BadLine { line, message } => {
                write!(f, "label store line {line}: {message}")
            }
            LabelStoreError::Io(e) => write!(f, "label store i/o: {e}"),
        }
    }
}

impl std::error::Error for LabelStoreError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            LabelStoreError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for LabelStoreError {
    fn from(e: io::Error) -> Self {
        LabelStoreError::Io(e)
    }
}

/// One record per line: hex source id, rf label, achieved quality,
/// evaluation count, status. Floats print round-trip exact.
pub fn write_labels<W: Write>(records: &[LabelRecord], w: &mut W) -> io::Result<()> {
    for r in records {
        writeln!(
            w,
            "{:016x} {} {} {} {}",
            r.source_id, r.rf_label, r.achieved, r.evaluations, r.status
        )?;
    }
    Ok(())
}

pub fn read_labels<R: BufRead>(r: R) -> Result<Vec<LabelRecord>, LabelStoreError> {
    let mut records = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| LabelStoreError::BadLine { line: line_no, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", fields.len())));
        }
        records.push(LabelRecord {
            source_id: u64::from_str_radix(fields[0], 16)
                .map_err(|e| bad(format!("bad source id `{}`: {e}", fields[0])))?,
            rf_label: fields[1]
                .parse()
                .map_err(|e| bad(format!("bad rf label `{}`: {e}", fields[1])))?,
            achieved: fields[2]
                .parse()
                .map_err(|e| bad(format!("bad achieved quality `{}`: {e}", fields[2])))?,
            evaluations: fields[3]
                .parse()
                .map_err(|e| bad(format!("bad evaluation count `{}`: {e}", fields[3])))?,
            status: fields[4].parse().map_err(bad)?,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{curve_from_features, synth_label, synth_quality, SyntheticCurveParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::convert::Infallible;

    fn exact<F: FnMut(f64) -> f64>(mut f: F) -> impl FnMut(f64) -> Result<f64, Infallible> {
        move |rf| Ok(f(rf))
    }

    #[test]
    fn linear_curve_lands_on_the_closed_form_root() {
        let search = search_rf(exact(|rf| 100.0 - rf), 91.0, 0.01, 12).unwrap();
        assert!(search.converged());
        assert!((search.rf - 9.0).abs() <= 0.01);
        assert!((search.achieved - 91.0).abs() <= 0.01);
        // The secant through a straight line IS the line: one refinement.
        assert_eq!(search.evaluations, 3);
    }

    #[test]
    fn logistic_reference_curve_converges_inside_the_budget() {
        let p = SyntheticCurveParams::new(30.0, 0.25).unwrap();
        let rf_star = synth_label(&p, 91.0).unwrap();
        let search = search_rf(exact(|rf| synth_quality(&p, rf, 0)), 91.0, 0.05, 12).unwrap();
        assert!(search.converged());
        assert!(search.evaluations <= 12, "used {} evaluations", search.evaluations);
        assert!(
            (search.rf - rf_star).abs() < 0.05,
            "rf {} vs closed form {rf_star}",
            search.rf
        );
    }

    #[test]
    fn whole_curve_family_converges_within_tolerance_and_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for _ in 0..200 {
            let d: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
            let p = curve_from_features(&d);
            let search = search_rf(exact(|rf| synth_quality(&p, rf, 0)), 91.0, 0.05, 12).unwrap();
            assert!(search.converged(), "failed on {p:?}");
            assert!(search.evaluations <= 12 + 2);
            assert!((search.achieved - 91.0).abs() <= 0.05);
            let rf_star = synth_label(&p, 91.0).unwrap();
            assert!((search.rf - rf_star).abs() < 0.1);
        }
    }

    #[test]
    fn flat_curves_rail_out_as_unreachable() {
        let high = search_rf(exact(|_| 95.0), 91.0, 0.1, 12).unwrap();
        assert_eq!(high.status, SearchStatus::Unreachable);
        assert_eq!(high.rf, RF_MAX);
        assert_eq!(high.achieved, 95.0);
        assert_eq!(high.evaluations, 2);

        let low = search_rf(exact(|_| 80.0), 91.0, 0.1, 12).unwrap();
        assert_eq!(low.status, SearchStatus::Unreachable);
        assert_eq!(low.rf, RF_MIN);
        assert_eq!(low.evaluations, 1);
    }

    #[test]
    fn endpoint_within_tolerance_converges_immediately() {
        let search = search_rf(exact(|rf| 100.0 - rf), 100.0, 0.1, 12).unwrap();
        assert!(search.converged());
        assert_eq!(search.rf, RF_MIN);
        assert_eq!(search.evaluations, 1);

        let search = search_rf(exact(|rf| 100.0 - rf), 49.0, 0.1, 12).unwrap();
        assert!(search.converged());
        assert_eq!(search.rf, RF_MAX);
        assert_eq!(search.evaluations, 2);
    }

    #[test]
    fn adapter_failures_carry_the_probed_rf() {
        let failure = search_rf(
            |rf: f64| {
                if rf > 40.0 {
                    Err("encoder crashed")
                } else {
                    Ok(100.0 - rf)
                }
            },
            91.0,
            0.1,
            12,
        )
        .unwrap_err();
        assert_eq!(failure.rf, RF_MAX);
        assert_eq!(failure.source, "encoder crashed");
    }

    #[test]
    fn noisy_measurements_still_produce_a_best_effort_label() {
        // With measurement noise comparable to the tolerance the search may
        // not converge, but it must return a sane in-range point and honor
        // the evaluation budget.
        let p = SyntheticCurveParams::with_all(26.0, 0.24, 100.0, 0.3).unwrap();
        let mut calls = 0u64;
        let search = search_rf(
            |rf: f64| -> Result<f64, Infallible> {
                calls += 1;
                Ok(synth_quality(&p, rf, calls))
            },
            91.0,
            0.1,
            12,
        )
        .unwrap();
        assert!(search.evaluations <= 14);
        assert!((RF_MIN..=RF_MAX).contains(&search.rf));
        let rf_star = synth_label(&p, 91.0).unwrap();
        assert!((search.rf - rf_star).abs() < 1.5, "rf {} vs {}", search.rf, rf_star);
    }

    #[test]
    fn label_store_round_trips_exactly() {
        let records = vec![
            LabelRecord {
                source_id: 0xdeadbeef,
                rf_label: 20.74659283,
                achieved: 91.003,
                evaluations: 7,
                status: SearchStatus::Converged,
            },
            LabelRecord {
                source_id: 3,
                rf_label: 51.0,
                achieved: 95.0,
                evaluations: 2,
                status: SearchStatus::Unreachable,
            },
            LabelRecord {
                source_id: 4,
                rf_label: 13.5,
                achieved: 90.4,
                evaluations: 14,
                status: SearchStatus::MaxIters,
            },
        ];
        let mut buf = Vec::new();
        write_labels(&records, &mut buf).unwrap();
        let back = read_labels(buf.as_slice()).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn label_store_rejects_malformed_lines() {
        let text = "0000000000000001 20.5 91.0 7 converged\n0000000000000002 20.5 91.0 7 wandering\n";
        match read_labels(text.as_bytes()) {
            Err(LabelStoreError::BadLine { line: 2, message }) => {
                assert!(message.contains("wandering"));
            }
            other => panic!("expected BadLine at 2, got {other:?}"),
        }
    }
}
