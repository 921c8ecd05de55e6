//! Metric definitions, Monte-Carlo estimators and the stateless schedule oracles.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::macarray::Instrumentation;
use crate::macunit::{cycles_required, MacVariant};
use crate::parallel::{self, Exec};
use crate::rng::{substream, Role};
use crate::smcore::{build_ir, SignMagnitude8, PARTICLE_WIDTHS};
use crate::workload::{draw_operand, OperandStreams, SparsityProfile};

/// Single-bit multiplications in a 7x7-bit magnitude product.
pub const BIT_PRODUCTS: u32 = 49;

/// Samples per Monte-Carlo chunk; each chunk owns one random substream.
pub const CHUNK: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// Skips every bit product with a zero factor.
    Ideal,
    /// Skips the zero bits of the serial operand (the weight).
    BitSerial,
    /// Skips the bit products covered by zero IRs.
    BpExact,
    /// `BpExact` plus everything in the two dropped groups.
    BpApprox,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Ideal, Scheme::BitSerial, Scheme::BpExact, Scheme::BpApprox];
}

/// Number of the 49 bit products that `scheme` skips.
pub fn skipped_count(a: SignMagnitude8, w: SignMagnitude8, scheme: Scheme) -> u32 {
    let ones_a = a.magnitude().count_ones();
    let ones_w = w.magnitude().count_ones();
    let ir_mask = match scheme {
        Scheme::Ideal => return BIT_PRODUCTS - ones_a * ones_w,
        Scheme::BitSerial => return 7 * (7 - ones_w),
        Scheme::BpExact => MacVariant::Exact.ir_mask(),
        Scheme::BpApprox => MacVariant::Approx.ir_mask(),
    };
    let ir = build_ir(a, w);
    (0..16)
        .filter(|&id| ir.ir[id] == 0 || ir_mask & (1 << id) == 0)
        .map(|id| PARTICLE_WIDTHS[id / 4] * PARTICLE_WIDTHS[id % 4])
        .sum()
}

pub fn skipped_ratio(a: SignMagnitude8, w: SignMagnitude8, scheme: Scheme) -> f64 {
    skipped_count(a, w, scheme) as f64 / BIT_PRODUCTS as f64
}

/// Closed form of E[BitSerial] / E[Ideal] under i.i.d. per-bit zeroing.
pub fn bitserial_ideal_ratio_analytic(bs: f64) -> f64 {
    1.0 / (2.0 - bs)
}

// [a_mag][w_mag] -> skipped counts for the four schemes
fn skip_table() -> &'static [[u8; 4]] {
    static TABLE: OnceLock<Vec<[u8; 4]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = vec![[0u8; 4]; 128 * 128];
        for a in 0..128u8 {
            for w in 0..128u8 {
                let sa = SignMagnitude8::new(false, a).unwrap();
                let sw = SignMagnitude8::new(false, w).unwrap();
                for (slot, s) in t[a as usize * 128 + w as usize].iter_mut().zip(Scheme::ALL) {
                    *slot = skipped_count(sa, sw, s) as u8;
                }
            }
        }
        t
    })
}

/// Mean skipped fractions, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SkippedRatios {
    pub ideal: f64,
    pub bit_serial: f64,
    pub bp_exact: f64,
    pub bp_approx: f64,
}

/// Running sums of skipped counts over operand pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SkipStats {
    pub pairs: u64,
    pub ideal: u64,
    pub bit_serial: u64,
    pub bp_exact: u64,
    pub bp_approx: u64,
    // second moments for the BitSerial/Ideal ratio error
    ideal_sq: u64,
    bit_serial_sq: u64,
    cross: u64,
}

impl SkipStats {
    pub fn add(&mut self, a: SignMagnitude8, w: SignMagnitude8) {
        let [i, b, e, x] = skip_table()[a.magnitude() as usize * 128 + w.magnitude() as usize].map(u64::from);
        self.pairs += 1;
        self.ideal += i;
        self.bit_serial += b;
        self.bp_exact += e;
        self.bp_approx += x;
        self.ideal_sq += i * i;
        self.bit_serial_sq += b * b;
        self.cross += i * b;
    }

    pub fn merge(mut self, other: Self) -> Self {
        self.pairs += other.pairs;
        self.ideal += other.ideal;
        self.bit_serial += other.bit_serial;
        self.bp_exact += other.bp_exact;
        self.bp_approx += other.bp_approx;
        self.ideal_sq += other.ideal_sq;
        self.bit_serial_sq += other.bit_serial_sq;
        self.cross += other.cross;
        self
    }

    /// Every `(weight[r][s], activation[c][s])` pair of the first `steps` steps.
    pub fn over_streams(streams: &OperandStreams, steps: usize) -> Self {
        let mut st = Self::default();
        for s in 0..steps {
            for r in 0..streams.rows() {
                let w = streams.weight(r, s);
                for c in 0..streams.cols() {
                    st.add(streams.activation(c, s), w);
                }
            }
        }
        st
    }

    pub fn ratios(&self) -> SkippedRatios {
        let n = (self.pairs.max(1) * BIT_PRODUCTS as u64) as f64;
        SkippedRatios {
            ideal: self.ideal as f64 / n,
            bit_serial: self.bit_serial as f64 / n,
            bp_exact: self.bp_exact as f64 / n,
            bp_approx: self.bp_approx as f64 / n,
        }
    }

    fn relative(&self, num: u64) -> f64 {
        num as f64 / self.ideal as f64
    }

    pub fn bit_serial_vs_ideal(&self) -> f64 {
        self.relative(self.bit_serial)
    }

    pub fn bp_exact_vs_ideal(&self) -> f64 {
        self.relative(self.bp_exact)
    }

    pub fn bp_approx_vs_ideal(&self) -> f64 {
        self.relative(self.bp_approx)
    }

    /// Delta-method standard error of `bit_serial_vs_ideal`.
    pub fn bit_serial_vs_ideal_stderr(&self) -> f64 {
        let n = self.pairs as f64;
        let mi = self.ideal as f64 / n;
        let mb = self.bit_serial as f64 / n;
        let r = mb / mi;
        let var_b = self.bit_serial_sq as f64 / n - mb * mb;
        let var_i = self.ideal_sq as f64 / n - mi * mi;
        let cov = self.cross as f64 / n - mi * mb;
        let var = (var_b - 2.0 * r * cov + r * r * var_i) / (mi * mi * n);
        var.max(0.0).sqrt()
    }
}

fn draw_pair(rng: &mut crate::rng::StreamRng, p: &SparsityProfile) -> (SignMagnitude8, SignMagnitude8) {
    let w = draw_operand(rng, p.bs_w, p.vs_w, p.sign_p);
    let a = draw_operand(rng, p.bs_a, p.vs_a, p.sign_p);
    (a, w)
}

fn chunked<R, F>(samples: usize, seed: u64, exec: Exec, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(&mut crate::rng::StreamRng, usize) -> R + Sync + Send,
{
    let chunks = samples.div_ceil(CHUNK);
    parallel::map_range(exec, chunks, |i| {
        let n = CHUNK.min(samples - i * CHUNK);
        let mut rng = substream(seed, Role::OpPairs, i as u64, 0);
        f(&mut rng, n)
    })
}

/// Skipped-calculation sums over `samples` i.i.d. operand pairs.
pub fn skipped_monte_carlo(profile: &SparsityProfile, samples: usize, seed: u64, exec: Exec) -> SkipStats {
    chunked(samples, seed, exec, |rng, n| {
        let mut st = SkipStats::default();
        for _ in 0..n {
            let (a, w) = draw_pair(rng, profile);
            st.add(a, w);
        }
        st
    })
    .into_iter()
    .fold(SkipStats::default(), SkipStats::merge)
}

/// Mean standalone cycles per operation over `samples` i.i.d. pairs.
///
/// The pairs depend only on `(profile, samples, seed)`, so both variants see
/// identical operands.
pub fn avg_cycles_per_op(profile: &SparsityProfile, variant: MacVariant, samples: usize, seed: u64, exec: Exec) -> f64 {
    assert!(samples >= 1, "need at least one sample");
    let total: u64 = chunked(samples, seed, exec, |rng, n| {
        (0..n)
            .map(|_| {
                let (a, w) = draw_pair(rng, profile);
                cycles_required(a, w, variant) as u64
            })
            .sum::<u64>()
    })
    .into_iter()
    .sum();
    total as f64 / samples as f64
}

/// Average cycles per step of a fully lock-stepped array: every step waits for
/// the slowest unit anywhere in the array.
pub fn strict_sync_oracle(streams: &OperandStreams, variant: MacVariant) -> f64 {
    strict_sync_cycles(streams, variant) as f64 / streams.steps() as f64
}

pub fn strict_sync_cycles(streams: &OperandStreams, variant: MacVariant) -> u64 {
    (0..streams.steps())
        .map(|s| {
            let worst_w = (0..streams.rows())
                .flat_map(|r| (0..streams.cols()).map(move |c| (r, c)))
                .map(|(r, c)| cycles_required(streams.activation(c, s), streams.weight(r, s), variant))
                .max()
                .unwrap_or(1);
            worst_w as u64
        })
        .sum()
}

/// Total cycles of the queue-free (Q = 0) quasi-synchronous schedule,
/// computed directly from operation latencies.
///
/// Row `r` of column `c` takes step `s` at the first cycle at which (a) the
/// column took step `s - 1` in an earlier cycle, (b) every column took step
/// `s - E - 1` in an earlier cycle, and (c) the unit has finished its previous
/// operation. Cycle 0 is the initial operand write.
pub fn queue_free_schedule_cycles(streams: &OperandStreams, variant: MacVariant, divergence: usize, zero_filter: bool) -> u64 {
    let (rows, cols, n) = (streams.rows(), streams.cols(), streams.steps());
    // taken[s][c]: cycle in which column c finished accepting step s
    let mut taken = vec![vec![0u64; cols]; n];
    let mut free_at = vec![0u64; rows * cols];
    let mut last = 0u64;
    for s in 0..n {
        let window = if s > divergence {
            taken[s - divergence - 1].iter().max().copied().map(|t| t + 1)
        } else {
            None
        };
        for c in 0..cols {
            let own = if s > 0 { Some(taken[s - 1][c] + 1) } else { None };
            let eligible = own.into_iter().chain(window).max().unwrap_or(0);
            let a = streams.activation(c, s);
            let mut all = eligible;
            for r in 0..rows {
                let w = streams.weight(r, s);
                if zero_filter && (a.is_zero() || w.is_zero()) {
                    continue;
                }
                let unit = &mut free_at[r * cols + c];
                let start = eligible.max(*unit);
                *unit = start + cycles_required(a, w, variant) as u64;
                all = all.max(start);
            }
            taken[s][c] = all;
            last = last.max(all);
        }
    }
    free_at.into_iter().fold(last, u64::max)
}

/// Results of one array simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub total_cycles: u64,
    pub column_steps: Vec<usize>,
    /// Compute unit-cycles over all unit-cycles.
    pub utilization: f64,
    pub avg_cycles_per_step: f64,
    pub throughput_steps_per_cycle: f64,
    /// Compute cycles per operation that reached a datapath.
    pub avg_cycles_per_op: f64,
    pub busy_cycles: u64,
    pub executed_ops: u64,
    pub filtered_ops: u64,
    pub skipped: SkippedRatios,
    pub instrumentation: Instrumentation,
}
