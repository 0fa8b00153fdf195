//! Receptive-field arithmetic for serial 1D atrous stacks.
//!
//! Two families of quantities are computed side by side:
//!
//! * the closed forms `rf_stack_paper` / `uncollected_paper`, evaluated
//!   literally as published (they do not agree with the usual recursion),
//! * a brute-force simulation (`coverage`) that tracks the exact set of
//!   input offsets feeding one output position. Ranking uses these.

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest enumeration `rank_schedules` accepts.
pub const MAX_ENUMERATION: u64 = 1_000_000;
/// Largest receptive-field span `render_coverage` draws.
pub const MAX_RENDER_SPAN: usize = 256;

/// Filter size plus ordered dilation rates of a serial atrous stack.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DilationSchedule {
    f: usize,
    rates: Vec<usize>,
}

impl DilationSchedule {
    pub fn new(f: usize, rates: Vec<usize>) -> Result<Self> {
        if f == 0 || f % 2 == 0 {
            return Err(Error::config(format!(
                "filter size must be odd and positive, got {f}"
            )));
        }
        if rates.is_empty() {
            return Err(Error::config("a schedule needs at least one rate"));
        }
        if let Some(r) = rates.iter().find(|&&r| r == 0) {
            return Err(Error::config(format!(
                "dilation rates must be >= 1, got {r}"
            )));
        }
        Ok(DilationSchedule { f, rates })
    }

    /// Parse a comma-separated rate list such as `"1,2,4"`.
    pub fn parse(f: usize, rates: &str) -> Result<Self> {
        let rates = rates
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::config(format!("invalid dilation rate {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(f, rates)
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn rates(&self) -> &[usize] {
        &self.rates
    }

    pub fn layers(&self) -> usize {
        self.rates.len()
    }

    /// Whether the rates read `[a, a*r, a*r^2, ...]` for an integer ratio `r`.
    pub fn is_geometric(&self) -> bool {
        let r = &self.rates;
        if r.len() < 2 {
            return true;
        }
        if r[1] % r[0] != 0 {
            return false;
        }
        let ratio = r[1] / r[0];
        r.windows(2).all(|w| w[0] * ratio == w[1])
    }
}

impl fmt::Display for DilationSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rates: Vec<String> = self.rates.iter().map(|r| r.to_string()).collect();
        write!(f, "[{}]", rates.join(","))
    }
}

/// Receptive field of one `f`-tap kernel at dilation `dr`.
pub fn rf_single(f: usize, dr: usize) -> usize {
    f + (dr - 1) * (f - 1)
}

/// `f + (dr0 - 1)(f - 1) + sum(dr)`, with `dr0` the first rate and the sum
/// over every rate.
pub fn rf_stack_paper(s: &DilationSchedule) -> i64 {
    let f = s.f as i64;
    let dr0 = s.rates[0] as i64;
    let total: i64 = s.rates.iter().map(|&r| r as i64).sum();
    f + (dr0 - 1) * (f - 1) + total
}

/// `(f - 1) * (dr0 - n * sum(dr))`. Negative values mean no uncollected nodes.
pub fn uncollected_paper(s: &DilationSchedule) -> i64 {
    let f = s.f as i64;
    let n = s.rates.len() as i64;
    let dr0 = s.rates[0] as i64;
    let total: i64 = s.rates.iter().map(|&r| r as i64).sum();
    (f - 1) * (dr0 - n * total)
}

/// Sets of offsets feeding the centre output, one per feature map from the
/// output (index 0, just `{0}`) back to the input (index `n`).
pub fn coverage(s: &DilationSchedule) -> Vec<BTreeSet<i64>> {
    let half = (s.f / 2) as i64;
    let mut levels = vec![BTreeSet::from([0i64])];
    for &r in s.rates.iter().rev() {
        let prev = levels.last().unwrap();
        let next: BTreeSet<i64> = prev
            .iter()
            .flat_map(|&p| (-half..=half).map(move |t| p + t * r as i64))
            .collect();
        levels.push(next);
    }
    levels
}

/// Input-level coverage as a dense mask over the receptive field.
fn input_mask(s: &DilationSchedule) -> Vec<bool> {
    let mut mask = vec![true];
    for &r in &s.rates {
        let grow = (s.f - 1) * r;
        let mut next = vec![false; mask.len() + grow];
        for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            for t in 0..s.f {
                next[i + t * r] = true;
            }
        }
        mask = next;
    }
    mask
}

fn span(set: &BTreeSet<i64>) -> usize {
    (set.last().unwrap() - set.first().unwrap() + 1) as usize
}

/// Exact receptive field: width of the input span that influences one output.
pub fn rf_oracle(s: &DilationSchedule) -> usize {
    span(coverage(s).last().unwrap())
}

/// Input positions inside the receptive field that never reach the output.
pub fn uncovered_oracle(s: &DilationSchedule) -> usize {
    let input = coverage(s).pop().unwrap();
    span(&input) - input.len()
}

/// `UN / RF` with both terms in their published closed forms.
pub fn evaluation_ratio(s: &DilationSchedule) -> Result<f64> {
    let rf = rf_stack_paper(s);
    if rf == 0 {
        return Err(Error::config(format!("receptive field of {s} is zero")));
    }
    Ok(uncollected_paper(s) as f64 / rf as f64)
}

/// `uncovered / RF` from the coverage simulation.
pub fn evaluation_ratio_oracle(s: &DilationSchedule) -> f64 {
    uncovered_oracle(s) as f64 / rf_oracle(s) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub schedule: DilationSchedule,
    pub rf_paper: i64,
    pub rf_oracle: usize,
    pub un_paper: i64,
    pub uncovered_oracle: usize,
    pub er: f64,
    pub er_oracle: f64,
    pub geometric: bool,
}

impl ScheduleReport {
    pub fn new(schedule: DilationSchedule) -> Self {
        let mask = input_mask(&schedule);
        let rf_oracle = mask.len();
        let uncovered = mask.iter().filter(|&&m| !m).count();
        let rf_paper = rf_stack_paper(&schedule);
        let un_paper = uncollected_paper(&schedule);
        ScheduleReport {
            geometric: schedule.is_geometric(),
            er: un_paper as f64 / rf_paper as f64,
            er_oracle: uncovered as f64 / rf_oracle as f64,
            rf_paper,
            rf_oracle,
            un_paper,
            uncovered_oracle: uncovered,
            schedule,
        }
    }
}

/// Enumerate every rate list in `[1, max_rate]^n` and order them by
/// (uncovered asc, receptive field desc, rates lexicographic).
pub fn rank_schedules(f: usize, n: usize, max_rate: usize) -> Result<Vec<ScheduleReport>> {
    if n == 0 || max_rate == 0 {
        return Err(Error::config("layers and max rate must be >= 1"));
    }
    let total = (max_rate as u64)
        .checked_pow(n as u32)
        .filter(|&t| t <= MAX_ENUMERATION)
        .ok_or_else(|| {
            Error::config(format!(
                "{max_rate}^{n} schedules exceeds the enumeration budget of {MAX_ENUMERATION}"
            ))
        })?;
    DilationSchedule::new(f, vec![1])?;
    let mut reports: Vec<ScheduleReport> = (0..total)
        .into_par_iter()
        .map(|mut idx| {
            let mut rates = vec![0; n];
            for slot in rates.iter_mut().rev() {
                *slot = (idx % max_rate as u64) as usize + 1;
                idx /= max_rate as u64;
            }
            ScheduleReport::new(DilationSchedule { f, rates })
        })
        .collect();
    reports.sort_by(|a, b| {
        a.uncovered_oracle
            .cmp(&b.uncovered_oracle)
            .then(b.rf_oracle.cmp(&a.rf_oracle))
            .then_with(|| a.schedule.rates.cmp(&b.schedule.rates))
    });
    Ok(reports)
}

/// Per-layer marks of the positions feeding the centre output. Row 0 is the
/// output map, the last row is the input; every row spans the input RF.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageGrid {
    pub width: usize,
    pub rows: Vec<Vec<bool>>,
}

impl CoverageGrid {
    pub fn to_ascii(&self) -> String {
        let mut s = String::new();
        for (i, row) in self.rows.iter().enumerate() {
            let label = self.rows.len() - 1 - i;
            s.push_str(&format!("F{label:<3}"));
            s.extend(row.iter().map(|&m| if m { '#' } else { '.' }));
            s.push('\n');
        }
        s
    }

    /// Binary PPM ("P6") with `cell`-pixel squares: marked cells dark blue,
    /// empty cells white, one-pixel grey grid lines.
    pub fn to_ppm(&self, cell: usize) -> Vec<u8> {
        let (w, h) = (self.width * cell, self.rows.len() * cell);
        let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
        for y in 0..h {
            for x in 0..w {
                let rgb: [u8; 3] = if x % cell == 0 || y % cell == 0 {
                    [160, 160, 160]
                } else if self.rows[y / cell][x / cell] {
                    [30, 60, 160]
                } else {
                    [255, 255, 255]
                };
                out.extend_from_slice(&rgb);
            }
        }
        out
    }
}

pub fn render_coverage(s: &DilationSchedule) -> Result<CoverageGrid> {
    let levels = coverage(s);
    let input = levels.last().unwrap();
    let width = span(input);
    if width > MAX_RENDER_SPAN {
        return Err(Error::config(format!(
            "receptive field {width} exceeds render limit {MAX_RENDER_SPAN}"
        )));
    }
    let lo = *input.first().unwrap();
    let rows = levels
        .iter()
        .map(|set| {
            let mut row = vec![false; width];
            for &p in set {
                row[(p - lo) as usize] = true;
            }
            row
        })
        .collect();
    Ok(CoverageGrid { width, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(f: usize, r: &[usize]) -> DilationSchedule {
        DilationSchedule::new(f, r.to_vec()).unwrap()
    }

    #[test]
    fn validation() {
        assert!(DilationSchedule::new(2, vec![1]).is_err());
        assert!(DilationSchedule::new(3, vec![]).is_err());
        assert!(DilationSchedule::new(3, vec![1, 0]).is_err());
        assert!(DilationSchedule::parse(3, "1,x").is_err());
        assert_eq!(
            DilationSchedule::parse(3, "1, 2,4").unwrap(),
            sched(3, &[1, 2, 4])
        );
    }

    #[test]
    fn single_layer_rf() {
        assert_eq!(rf_single(3, 1), 3);
        assert_eq!(rf_single(3, 2), 5);
        assert_eq!(rf_single(3, 9), 19);
    }

    #[test]
    fn published_closed_forms() {
        assert_eq!(rf_stack_paper(&sched(3, &[1])), 4);
        assert_eq!(rf_stack_paper(&sched(3, &[1, 2, 4])), 10);
        assert_eq!(rf_stack_paper(&sched(3, &[1, 3, 9])), 16);
        assert_eq!(uncollected_paper(&sched(1, &[5, 7])), 0);
        assert_eq!(uncollected_paper(&sched(3, &[1, 2, 4])), -40);
        assert_eq!(uncollected_paper(&sched(3, &[1, 3, 9])), -76);
        assert_eq!(evaluation_ratio(&sched(3, &[1, 2, 4])).unwrap(), -4.0);
        assert_eq!(evaluation_ratio(&sched(1, &[2, 3])).unwrap(), 0.0);
    }

    #[test]
    fn oracle_values() {
        assert_eq!(rf_oracle(&sched(3, &[1])), 3);
        assert_eq!(rf_oracle(&sched(3, &[1, 2, 4])), 15);
        assert_eq!(rf_oracle(&sched(3, &[1, 3, 9])), 27);
        assert_eq!(uncovered_oracle(&sched(3, &[1])), 0);
        assert_eq!(uncovered_oracle(&sched(3, &[1, 2, 4])), 0);
        assert!(uncovered_oracle(&sched(3, &[1, 2, 9])) > 0);
        assert_eq!(evaluation_ratio_oracle(&sched(3, &[1, 2, 4])), 0.0);
    }

    #[test]
    fn geometric_detection() {
        assert!(sched(3, &[1, 2, 4]).is_geometric());
        assert!(sched(3, &[1, 3, 9]).is_geometric());
        assert!(sched(3, &[2, 2, 2]).is_geometric());
        assert!(!sched(3, &[1, 2, 9]).is_geometric());
        assert!(!sched(3, &[2, 3]).is_geometric());
    }

    #[test]
    fn ranking_single_layer() {
        // A lone dilated layer leaves (r-1)(f-1) holes, so only [1] is dense;
        // among the rest the widest field wins.
        let r = rank_schedules(3, 1, 3).unwrap();
        let order: Vec<_> = r.iter().map(|x| x.schedule.rates()[0]).collect();
        assert_eq!(order, [1, 2, 3]);
        for x in &r {
            let rate = x.schedule.rates()[0];
            assert_eq!(x.uncovered_oracle, (rate - 1) * 2);
            assert_eq!(x.rf_oracle, rf_single(3, rate));
        }
        let widest = r.iter().max_by_key(|x| x.rf_oracle).unwrap();
        assert_eq!(widest.schedule.rates(), &[3]);
    }

    #[test]
    fn mask_and_set_agree() {
        for rates in [vec![1], vec![2, 5], vec![1, 2, 9], vec![3, 1, 4]] {
            for f in [1, 3, 5] {
                let s = sched(f, &rates);
                let set = coverage(&s).pop().unwrap();
                let mask = input_mask(&s);
                assert_eq!(mask.len(), span(&set));
                assert_eq!(mask.iter().filter(|&&m| m).count(), set.len());
            }
        }
    }

    #[test]
    fn ranking_budget() {
        assert!(matches!(rank_schedules(3, 7, 9), Err(Error::Config(_))));
        assert!(rank_schedules(3, 2, 300).is_ok());
    }

    #[test]
    fn render_marks() {
        let g = render_coverage(&sched(3, &[1])).unwrap();
        assert_eq!(g.rows.last().unwrap(), &vec![true; 3]);
        let g = render_coverage(&sched(3, &[1, 2, 4])).unwrap();
        assert_eq!(g.width, 15);
        assert!(g.rows.last().unwrap().iter().all(|&m| m));
        let g = render_coverage(&sched(3, &[1, 2, 9])).unwrap();
        assert!(g.rows.last().unwrap().iter().any(|&m| !m));
        assert!(g.to_ascii().lines().last().unwrap().contains('.'));
        assert!(render_coverage(&sched(3, &[100, 100])).is_err());
    }

    #[test]
    fn ppm_header() {
        let g = render_coverage(&sched(3, &[1, 2])).unwrap();
        let ppm = g.to_ppm(4);
        assert!(ppm.starts_with(b"P6\n28 12\n255\n"));
        assert_eq!(ppm.len(), b"P6\n28 12\n255\n".len() + 28 * 12 * 3);
    }
}
