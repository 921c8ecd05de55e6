//! Cycle-accurate simulator of the quasi-synchronous MAC array.
//!
//! Each column is a group that advances one step once all of its units have
//! accepted the step's operands (loaded or queued). Columns may drift apart by
//! at most `divergence` steps; weights are shared along a row and held in a
//! per-row buffer with `divergence + 1` entries. Every cycle runs three phases
//! in a fixed order: all units execute, eligible columns offer operands, and
//! columns whose offers were all accepted advance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::macunit::{MacUnit, MacVariant, OperandPair};
use crate::metrics::{MetricsReport, SkipStats};
use crate::smcore::SignMagnitude8;
use crate::workload::OperandStreams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
    /// E: how many steps the fastest column may run ahead of the slowest.
    pub divergence: usize,
    /// Q: operand queue slots per unit.
    pub queue_depth: usize,
    pub zero_filter: bool,
    pub variant: MacVariant,
    /// N: steps every column processes.
    pub steps: usize,
    /// Seed of the streams fed to the array; echoed in reports.
    pub seed: u64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            rows: 16,
            cols: 32,
            divergence: 3,
            queue_depth: 2,
            zero_filter: false,
            variant: MacVariant::Exact,
            steps: 20_000,
            seed: 1,
        }
    }
}

impl ArrayConfig {
    pub fn with_elasticity(mut self, divergence: usize, queue_depth: usize) -> Self {
        self.divergence = divergence;
        self.queue_depth = queue_depth;
        self
    }

    /// `ExQy` label.
    pub fn label(&self) -> String {
        format!("E{}Q{}", self.divergence, self.queue_depth)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.steps == 0 {
            return Err(Error::Config(format!(
                "rows, cols and steps must be >= 1 (got {}x{}, N={})",
                self.rows, self.cols, self.steps
            )));
        }
        Ok(())
    }
}

/// Per-row ring holding the weights of steps `[base, base + depth)`.
#[derive(Clone, Debug)]
pub struct WeightBuffer {
    depth: usize,
    base: usize,
    end: usize,
    slots: Vec<Option<(usize, SignMagnitude8)>>,
}

impl WeightBuffer {
    pub fn new(rows: usize, depth: usize) -> Self {
        Self {
            depth,
            base: 0,
            end: 0,
            slots: vec![None; rows * depth],
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Oldest step still held.
    pub fn base(&self) -> usize {
        self.base
    }

    /// Drops weights older than `base` and fetches up to `depth` steps from there.
    pub fn slide_to(&mut self, base: usize, streams: &OperandStreams) {
        debug_assert!(base >= self.base);
        let rows = streams.rows();
        let end = (base + self.depth).min(streams.steps());
        for step in self.end.max(base)..end {
            let slot = step % self.depth;
            for r in 0..rows {
                self.slots[r * self.depth + slot] = Some((step, streams.weight(r, step)));
            }
        }
        self.base = base;
        self.end = self.end.max(end);
    }

    pub fn get(&self, row: usize, step: usize) -> Option<SignMagnitude8> {
        if step < self.base || step >= self.base + self.depth {
            return None;
        }
        match self.slots[row * self.depth + step % self.depth] {
            Some((s, w)) if s == step => Some(w),
            _ => None,
        }
    }
}

/// Scheduler invariants observed during a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instrumentation {
    /// Largest `col_step - min` over columns that offered in some cycle.
    pub max_offer_lead: usize,
    /// Largest `max - min` of the column step counters over unfinished columns.
    pub max_counter_spread: usize,
    /// Offers whose weight was not in the buffer.
    pub weight_misses: u64,
    /// Offers per unit that arrived out of step order.
    pub order_violations: u64,
}

pub struct Simulator<'a> {
    cfg: ArrayConfig,
    streams: &'a OperandStreams,
    units: Vec<MacUnit>,
    col_step: Vec<usize>,
    accepted: Vec<bool>,
    last_offered: Vec<Option<usize>>,
    weights: WeightBuffer,
    cycle: u64,
    stats: Instrumentation,
}

impl<'a> Simulator<'a> {
    pub fn new(cfg: ArrayConfig, streams: &'a OperandStreams) -> Result<Self> {
        cfg.validate()?;
        if streams.rows() != cfg.rows || streams.cols() != cfg.cols {
            return Err(Error::Config(format!(
                "streams are {}x{}, array is {}x{}",
                streams.rows(),
                streams.cols(),
                cfg.rows,
                cfg.cols
            )));
        }
        if streams.steps() < cfg.steps {
            return Err(Error::Config(format!(
                "streams provide {} steps, {} requested",
                streams.steps(),
                cfg.steps
            )));
        }
        let n = cfg.rows * cfg.cols;
        let mut sim = Self {
            cfg,
            streams,
            units: (0..n).map(|_| MacUnit::new(cfg.variant, cfg.queue_depth)).collect(),
            col_step: vec![0; cfg.cols],
            accepted: vec![false; n],
            last_offered: vec![None; n],
            weights: WeightBuffer::new(cfg.rows, cfg.divergence + 1),
            cycle: 0,
            stats: Instrumentation::default(),
        };
        // cycle 0: operands of the first step are written; nothing computes yet
        sim.offer_and_advance();
        Ok(sim)
    }

    fn idx(&self, r: usize, c: usize) -> usize {
        r * self.cfg.cols + c
    }

    pub fn config(&self) -> &ArrayConfig {
        &self.cfg
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn col_steps(&self) -> &[usize] {
        &self.col_step
    }

    pub fn unit(&self, r: usize, c: usize) -> &MacUnit {
        &self.units[self.idx(r, c)]
    }

    pub fn instrumentation(&self) -> Instrumentation {
        self.stats
    }

    /// Slowest unfinished column, or `None` once every column is done.
    pub fn window_base(&self) -> Option<usize> {
        self.col_step.iter().copied().filter(|&s| s < self.cfg.steps).min()
    }

    /// Column `c` may offer its next step.
    pub fn window_check(&self, c: usize) -> bool {
        let s = self.col_step[c];
        s < self.cfg.steps && self.window_base().is_some_and(|min| s <= min + self.cfg.divergence)
    }

    /// Offers column `c`'s pending step to every row that has not yet accepted
    /// it. Returns whether all rows have now accepted.
    pub fn offer_phase(&mut self, c: usize) -> bool {
        let s = self.col_step[c];
        let a = self.streams.activation(c, s);
        let mut all = true;
        for r in 0..self.cfg.rows {
            let i = self.idx(r, c);
            if self.accepted[i] {
                continue;
            }
            let w = match self.weights.get(r, s) {
                Some(w) => w,
                None => {
                    self.stats.weight_misses += 1;
                    self.streams.weight(r, s)
                }
            };
            if self.last_offered[i].is_some_and(|prev| prev >= s) {
                self.stats.order_violations += 1;
            }
            if self.units[i].offer(OperandPair::new(a, w), self.cfg.zero_filter) {
                self.accepted[i] = true;
                self.last_offered[i] = Some(s);
            } else {
                all = false;
            }
        }
        all
    }

    fn advance(&mut self, c: usize) {
        self.col_step[c] += 1;
        for r in 0..self.cfg.rows {
            let i = self.idx(r, c);
            self.accepted[i] = false;
        }
    }

    fn offer_and_advance(&mut self) {
        let Some(min) = self.window_base() else { return };
        self.weights.slide_to(min, self.streams);
        let max = self.col_step.iter().copied().filter(|&s| s < self.cfg.steps).max().unwrap_or(min);
        self.stats.max_counter_spread = self.stats.max_counter_spread.max(max - min);

        let eligible: Vec<usize> = (0..self.cfg.cols).filter(|&c| self.window_check(c)).collect();
        let mut ready = Vec::with_capacity(eligible.len());
        for c in eligible {
            self.stats.max_offer_lead = self.stats.max_offer_lead.max(self.col_step[c] - min);
            if self.offer_phase(c) {
                ready.push(c);
            }
        }
        for c in ready {
            self.advance(c);
        }
    }

    pub fn is_done(&self) -> bool {
        self.col_step.iter().all(|&s| s == self.cfg.steps) && self.units.iter().all(MacUnit::is_drained)
    }

    /// Runs one clock cycle.
    pub fn step_cycle(&mut self) {
        self.cycle += 1;
        for u in &mut self.units {
            u.step();
        }
        self.offer_and_advance();
    }

    pub fn run_to_completion(&mut self) {
        // every step costs at most 4 compute cycles plus one to reach the unit
        let limit = 5 * self.cfg.steps as u64 + 8;
        while !self.is_done() {
            self.step_cycle();
            assert!(self.cycle <= limit, "array failed to drain within {limit} cycles");
        }
    }

    pub fn accumulators(&self) -> Vec<i32> {
        self.units.iter().map(MacUnit::accumulator).collect()
    }

    pub fn report(&self) -> MetricsReport {
        let units = self.units.len() as u64;
        let busy: u64 = self.units.iter().map(MacUnit::busy_cycles).sum();
        let executed: u64 = self.units.iter().map(MacUnit::ops_loaded).sum();
        let filtered: u64 = self.units.iter().map(MacUnit::ops_filtered).sum();
        let mean_steps = self.col_step.iter().sum::<usize>() as f64 / self.cfg.cols as f64;
        let total = self.cycle;
        let per_step = if mean_steps > 0.0 { total as f64 / mean_steps } else { 0.0 };
        MetricsReport {
            total_cycles: total,
            column_steps: self.col_step.clone(),
            utilization: if total == 0 { 0.0 } else { busy as f64 / (units * total) as f64 },
            avg_cycles_per_step: per_step,
            throughput_steps_per_cycle: if total == 0 { 0.0 } else { mean_steps / total as f64 },
            avg_cycles_per_op: if executed == 0 { 0.0 } else { busy as f64 / executed as f64 },
            busy_cycles: busy,
            executed_ops: executed,
            filtered_ops: filtered,
            skipped: SkipStats::over_streams(self.streams, self.cfg.steps).ratios(),
            instrumentation: self.stats,
        }
    }
}

/// Simulates the array over `streams` until every column has finished and
/// every unit has drained.
pub fn simulate(cfg: &ArrayConfig, streams: &OperandStreams) -> Result<MetricsReport> {
    let mut sim = Simulator::new(*cfg, streams)?;
    sim.run_to_completion();
    Ok(sim.report())
}
