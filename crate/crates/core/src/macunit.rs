//! Cycle-accurate model of a single MAC unit.
//!
//! An operation is loaded in one cycle (overlapping the last compute cycle of
//! the previous operation) and then spends 1 to 4 compute cycles. Each compute
//! cycle picks at most one surviving non-zero IR per group, concatenates the
//! set-0 and set-1 picks into two partial products, and accumulates their sum.
//! The operation completes in the cycle that empties the non-zero register.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::smcore::{build_ir, concat_pp, IrState, SignMagnitude8, GROUPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MacVariant {
    #[default]
    Exact,
    /// Drops groups 0 and 1 (IDs 0, 1 and 4) unconditionally.
    Approx,
}

impl MacVariant {
    pub const ALL: [MacVariant; 2] = [MacVariant::Exact, MacVariant::Approx];

    /// IR positions that take part in the computation.
    pub const fn ir_mask(self) -> u16 {
        match self {
            MacVariant::Exact => u16::MAX,
            MacVariant::Approx => !(GROUPS[0].mask | GROUPS[1].mask),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MacVariant::Exact => "exact",
            MacVariant::Approx => "approx",
        }
    }
}

impl std::str::FromStr for MacVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" => Ok(MacVariant::Exact),
            "approx" => Ok(MacVariant::Approx),
            other => Err(format!("unknown variant `{other}` (expected exact|approx)")),
        }
    }
}

impl std::fmt::Display for MacVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Compute cycles needed to drain a non-zero register.
pub fn selection_cycles(nonzero: u16) -> u32 {
    GROUPS.iter().map(|g| (nonzero & g.mask).count_ones()).max().unwrap_or(0).max(1)
}

pub fn cycles_required(a: SignMagnitude8, w: SignMagnitude8, variant: MacVariant) -> u32 {
    selection_cycles(build_ir(a, w).nonzero & variant.ir_mask())
}

/// One cycle's worth of one-hot picks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CycleSelection {
    /// Position ID picked from each group.
    pub ids: [Option<usize>; 7],
    /// All picked IDs as a mask; these bits are cleared for the next cycle.
    pub mask: u16,
}

impl CycleSelection {
    pub fn count(&self) -> u32 {
        self.mask.count_ones()
    }
}

/// Priority selection: the lowest surviving ID in every group.
pub fn select_cycle(nonzero_reg: u16) -> CycleSelection {
    let mut sel = CycleSelection::default();
    for (slot, g) in sel.ids.iter_mut().zip(GROUPS.iter()) {
        let live = nonzero_reg & g.mask;
        if live != 0 {
            let id = live.trailing_zeros() as usize;
            *slot = Some(id);
            sel.mask |= 1 << id;
        }
    }
    sel
}

/// Splits a selection into the two partial products.
pub fn assemble_pps(ir: &IrState, sel: &CycleSelection) -> (u16, u16) {
    let mut picks = [[None; 7]; 2];
    for (g, id) in GROUPS.iter().zip(sel.ids) {
        if let Some(id) = id {
            picks[g.set as usize][g.k] = Some(ir.ir[id]);
        }
    }
    let pp0 = concat_pp(&picks[0], 0).expect("set-0 picks always fit their fields");
    let pp1 = concat_pp(&picks[1], 1).expect("set-1 picks always fit their fields");
    (pp0, pp1)
}

/// Magnitude of the IRs an approximate unit never computes.
pub fn discarded_magnitude(ir: &IrState) -> u32 {
    ir.magnitude_of(!MacVariant::Approx.ir_mask())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OperandPair {
    /// Activation.
    pub a: SignMagnitude8,
    /// Weight.
    pub w: SignMagnitude8,
}

impl OperandPair {
    pub fn new(a: SignMagnitude8, w: SignMagnitude8) -> Self {
        Self { a, w }
    }

    pub fn has_zero(&self) -> bool {
        self.a.is_zero() || self.w.is_zero()
    }
}

#[derive(Clone, Copy, Debug)]
struct ActiveOp {
    ir: IrState,
    pending: u16,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepReport {
    /// A compute cycle ran (the unit was busy).
    pub computed: bool,
    pub finished_op: bool,
    /// A queued operation was loaded in this cycle.
    pub accepted_new_op: bool,
    pub pp0: u16,
    pub pp1: u16,
}

#[derive(Clone, Debug)]
pub struct MacUnit {
    variant: MacVariant,
    queue: VecDeque<OperandPair>,
    queue_capacity: usize,
    active: Option<ActiveOp>,
    accumulator: i32,
    busy_cycles: u64,
    ops_loaded: u64,
    ops_completed: u64,
    ops_filtered: u64,
    selections: u64,
}

impl MacUnit {
    pub fn new(variant: MacVariant, queue_capacity: usize) -> Self {
        Self {
            variant,
            queue: VecDeque::with_capacity(queue_capacity),
            queue_capacity,
            active: None,
            accumulator: 0,
            busy_cycles: 0,
            ops_loaded: 0,
            ops_completed: 0,
            ops_filtered: 0,
            selections: 0,
        }
    }

    pub fn variant(&self) -> MacVariant {
        self.variant
    }

    pub fn is_busy(&self) -> bool {
        self.active.is_some()
    }

    pub fn is_drained(&self) -> bool {
        self.active.is_none() && self.queue.is_empty()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn queue_capacity(&self) -> usize {
        self.queue_capacity
    }

    /// IRs of the current operation not yet selected.
    pub fn nonzero_reg(&self) -> u16 {
        self.active.map_or(0, |op| op.pending)
    }

    pub fn accumulator(&self) -> i32 {
        self.accumulator
    }

    pub fn reset_accumulator(&mut self) -> i32 {
        std::mem::take(&mut self.accumulator)
    }

    pub fn busy_cycles(&self) -> u64 {
        self.busy_cycles
    }

    pub fn ops_completed(&self) -> u64 {
        self.ops_completed
    }

    /// Operations that entered the datapath (excludes filtered zeros).
    pub fn ops_loaded(&self) -> u64 {
        self.ops_loaded
    }

    pub fn ops_filtered(&self) -> u64 {
        self.ops_filtered
    }

    /// Total IRs consumed across all compute cycles.
    pub fn selections(&self) -> u64 {
        self.selections
    }

    fn load(&mut self, pair: OperandPair) {
        let ir = build_ir(pair.a, pair.w);
        self.active = Some(ActiveOp {
            ir,
            pending: ir.nonzero & self.variant.ir_mask(),
        });
        self.ops_loaded += 1;
    }

    /// Hands the unit an operation. Returns whether it was accepted.
    ///
    /// With `zero_filter`, an operation with a zero operand is accepted
    /// without entering the queue. Otherwise an idle unit with an empty queue
    /// loads the operands directly, and a busy one enqueues them if there is
    /// room. Call at most once per cycle.
    pub fn offer(&mut self, pair: OperandPair, zero_filter: bool) -> bool {
        if zero_filter && pair.has_zero() {
            self.ops_filtered += 1;
            return true;
        }
        if self.active.is_none() && self.queue.is_empty() {
            self.load(pair);
            return true;
        }
        if self.queue.len() < self.queue_capacity {
            self.queue.push_back(pair);
            return true;
        }
        false
    }

    /// Advances one clock cycle.
    pub fn step(&mut self) -> StepReport {
        let mut report = StepReport::default();
        if let Some(op) = self.active.as_mut() {
            let sel = select_cycle(op.pending);
            let (pp0, pp1) = assemble_pps(&op.ir, &sel);
            op.pending &= !sel.mask;

            let magnitude = pp0 as i32 + pp1 as i32;
            let value = if op.ir.negative { -magnitude } else { magnitude };
            debug_assert!(self.accumulator.checked_add(value).is_some(), "accumulator overflow");
            self.accumulator = self.accumulator.wrapping_add(value);

            self.busy_cycles += 1;
            self.selections += sel.count() as u64;
            report.computed = true;
            report.pp0 = pp0;
            report.pp1 = pp1;

            if op.pending == 0 {
                self.active = None;
                self.ops_completed += 1;
                report.finished_op = true;
            }
        }
        if self.active.is_none() {
            if let Some(pair) = self.queue.pop_front() {
                self.load(pair);
                report.accepted_new_op = true;
            }
        }
        report
    }
}

/// Runs one operation to completion on a fresh unit and returns the product.
pub fn mac_functional(a: SignMagnitude8, w: SignMagnitude8, variant: MacVariant) -> i32 {
    mac_trace(a, w, variant).0
}

/// Product and number of compute cycles taken by the state machine.
pub fn mac_trace(a: SignMagnitude8, w: SignMagnitude8, variant: MacVariant) -> (i32, u32) {
    let mut unit = MacUnit::new(variant, 0);
    let accepted = unit.offer(OperandPair::new(a, w), false);
    debug_assert!(accepted);
    let mut cycles = 0;
    loop {
        let r = unit.step();
        cycles += r.computed as u32;
        if r.finished_op {
            return (unit.accumulator(), cycles);
        }
    }
}
