//! Named experiment presets, parameter grids, result rows and verification.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::macarray::{simulate, ArrayConfig};
use crate::macunit::{discarded_magnitude, mac_functional, MacVariant};
use crate::metrics::{avg_cycles_per_op, bitserial_ideal_ratio_analytic, queue_free_schedule_cycles, skipped_monte_carlo, MetricsReport};
use crate::parallel::{self, Exec};
use crate::smcore::{build_ir, multiply_reference, SignMagnitude8};
use crate::workload::{
    best_dataflow, gen_from_profile, gen_iid, read_profile_file, spatial_utilization, DataflowChoice, LayerShape, OperandStreams,
    ProfileRecord, SparsityProfile,
};

/// Reference values and tolerances the `verify` command checks against.
pub mod targets {
    pub const BIT_SPARSITY: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];
    pub const TABLE3_EXACT: [f64; 5] = [2.14, 1.71, 1.34, 1.10, 1.01];
    pub const TABLE3_APPROX: [f64; 5] = [2.12, 1.69, 1.33, 1.10, 1.01];
    pub const TABLE3_TOL: f64 = 0.03;
    /// Approx may undercut exact by less than this fraction.
    pub const APPROX_GAP_MAX: f64 = 0.01;

    pub const E0Q0_BAND: (f64, f64) = (0.528, 0.742);
    pub const E3Q2_BAND: (f64, f64) = (0.761, 0.917);
    /// Utilization gain E1Q0 -> E3Q0 at bs = 0.7.
    pub const E1_TO_E3_GAIN: (f64, f64) = (0.029, 0.015);
    /// Utilization gain E3Q0 -> E7Q0 at bs = 0.7.
    pub const E3_TO_E7_GAIN: (f64, f64) = (0.014, 0.010);

    pub const ZF_BIT_SPARSITY: f64 = 0.65;
    pub const ZF_VALUE_SPARSITY: [f64; 5] = [0.0, 0.2, 0.4, 0.6, 0.8];
    pub const ZF_STEP_REDUCTION: (f64, f64) = (0.274, 0.03);
    pub const ZF_THROUGHPUT_GAIN: (f64, f64) = (0.377, 0.04);

    pub const SKIP_BIT_SPARSITY: [f64; 4] = [0.6, 0.7, 0.8, 0.9];
    pub const SKIP_BP_EXACT: [f64; 4] = [0.745, 0.840, 0.920, 0.977];
    pub const SKIP_BIT_SERIAL: [f64; 4] = [0.714, 0.769, 0.833, 0.909];
    pub const SKIP_TOL: f64 = 0.01;

    pub const APPROX_MAX_ERROR: i32 = 81;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Table3Cycles,
    Fig8Utilization,
    Fig9CyclesPerStep,
    Fig7ZeroFilter,
    Fig9Skipped,
    ApproxError,
    LayerMapping,
    Custom,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::Table3Cycles,
        Preset::Fig8Utilization,
        Preset::Fig9CyclesPerStep,
        Preset::Fig7ZeroFilter,
        Preset::Fig9Skipped,
        Preset::ApproxError,
        Preset::LayerMapping,
        Preset::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Table3Cycles => "table3_cycles",
            Preset::Fig8Utilization => "fig8_utilization",
            Preset::Fig9CyclesPerStep => "fig9_cycles_per_step",
            Preset::Fig7ZeroFilter => "fig7_zero_filter",
            Preset::Fig9Skipped => "fig9_skipped",
            Preset::ApproxError => "approx_error",
            Preset::LayerMapping => "layer_mapping",
            Preset::Custom => "custom",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Preset::Table3Cycles => "standalone mean cycles per MAC, bs 0.5-0.9, exact and approx",
            Preset::Fig8Utilization => "array PE utilization over E x Q x bs",
            Preset::Fig9CyclesPerStep => "array cycles per step over E x Q x bs",
            Preset::Fig7ZeroFilter => "cycles per step with and without zero-value filtering over activation value sparsity",
            Preset::Fig9Skipped => "skipped single-bit multiplications: ideal, bit-serial, exact, approx",
            Preset::ApproxError => "exhaustive error of the approximate unit over all operand pairs",
            Preset::LayerMapping => "spatial utilization and best dataflow for example layer shapes",
            Preset::Custom => "array simulations over a user-supplied grid",
        }
    }

    fn is_array(self) -> bool {
        matches!(
            self,
            Preset::Fig8Utilization | Preset::Fig9CyclesPerStep | Preset::Fig7ZeroFilter | Preset::Custom
        )
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format `{other}` (expected csv|json)"))),
        }
    }
}

/// Parameter grid. Every combination is one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Bit sparsity, applied to both operands.
    pub bs: Vec<f64>,
    pub vs_w: Vec<f64>,
    pub vs_a: Vec<f64>,
    pub divergence: Vec<usize>,
    pub queue_depth: Vec<usize>,
    pub variant: Vec<MacVariant>,
    pub zero_filter: Vec<bool>,
    pub seeds: Vec<u64>,
}

impl Grid {
    fn single(bs: &[f64]) -> Self {
        Self {
            bs: bs.to_vec(),
            vs_w: vec![0.0],
            vs_a: vec![0.0],
            divergence: vec![3],
            queue_depth: vec![2],
            variant: vec![MacVariant::Exact],
            zero_filter: vec![false],
            seeds: vec![1],
        }
    }

    /// Replaces one axis from a `key=v1,v2,...` value list.
    pub fn set(&mut self, key: &str, values: &str) -> Result<()> {
        fn list<T: FromStr>(key: &str, values: &str) -> Result<Vec<T>> {
            values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<T>()
                        .map_err(|_| Error::Config(format!("grid {key}: cannot parse `{}`", v.trim())))
                })
                .collect()
        }
        match key.trim() {
            "bs" => self.bs = list(key, values)?,
            "vs" | "vs_a" => self.vs_a = list(key, values)?,
            "vs_w" => self.vs_w = list(key, values)?,
            "E" | "e" => self.divergence = list(key, values)?,
            "Q" | "q" => self.queue_depth = list(key, values)?,
            "zero_filter" => self.zero_filter = list(key, values)?,
            "seeds" | "seed" => self.seeds = list(key, values)?,
            "variant" => {
                self.variant = values
                    .split(',')
                    .map(|v| v.parse::<MacVariant>().map_err(Error::Config))
                    .collect::<Result<_>>()?
            }
            other => return Err(Error::Config(format!("unknown grid key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("bs", self.bs.len()),
            ("vs_w", self.vs_w.len()),
            ("vs_a", self.vs_a.len()),
            ("E", self.divergence.len()),
            ("Q", self.queue_depth.len()),
            ("variant", self.variant.len()),
            ("zero_filter", self.zero_filter.len()),
            ("seeds", self.seeds.len()),
        ];
        if let Some((name, _)) = axes.iter().find(|(_, n)| *n == 0) {
            return Err(Error::Config(format!("grid axis `{name}` is empty")));
        }
        for &p in self.bs.iter().chain(&self.vs_w).chain(&self.vs_a) {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("grid probability {p} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn array_points(&self) -> Vec<ArrayPoint> {
        let mut out = Vec::new();
        for &bs in &self.bs {
            for &vs_w in &self.vs_w {
                for &vs_a in &self.vs_a {
                    for &e in &self.divergence {
                        for &q in &self.queue_depth {
                            for &variant in &self.variant {
                                for &zf in &self.zero_filter {
                                    for &seed in &self.seeds {
                                        out.push(ArrayPoint {
                                            bs,
                                            vs_w,
                                            vs_a,
                                            e,
                                            q,
                                            variant,
                                            zf,
                                            seed,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct ArrayPoint {
    bs: f64,
    vs_w: f64,
    vs_a: f64,
    e: usize,
    q: usize,
    variant: MacVariant,
    zf: bool,
    seed: u64,
}

/// A fully resolved experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub preset: Preset,
    pub grid: Grid,
    pub rows: usize,
    pub cols: usize,
    pub steps: usize,
    /// Operand pairs for per-op Monte-Carlo statistics.
    pub samples: usize,
    pub profile: Option<PathBuf>,
}

pub const DEFAULT_STEPS: usize = 20_000;
pub const DEFAULT_SAMPLES: usize = 1_000_000;
pub const DEFAULT_SEED: u64 = 1;

impl ExperimentSpec {
    /// Preset defaults with seeds derived from `seed` (three consecutive
    /// seeds for array presets, one otherwise).
    pub fn for_preset(preset: Preset, seed: u64) -> Self {
        let bs = &targets::BIT_SPARSITY;
        let mut grid = Grid::single(bs);
        let array_seeds = vec![seed, seed + 1, seed + 2];
        match preset {
            Preset::Table3Cycles => {
                grid.variant = MacVariant::ALL.to_vec();
                grid.seeds = vec![seed];
            }
            Preset::Fig8Utilization | Preset::Fig9CyclesPerStep => {
                grid.divergence = vec![0, 1, 3, 7];
                grid.queue_depth = vec![0, 1, 2, 4];
                grid.seeds = array_seeds;
            }
            Preset::Fig7ZeroFilter => {
                grid.bs = vec![targets::ZF_BIT_SPARSITY];
                grid.vs_a = targets::ZF_VALUE_SPARSITY.to_vec();
                grid.zero_filter = vec![false, true];
                grid.seeds = array_seeds;
            }
            Preset::Fig9Skipped => {
                grid.seeds = vec![seed];
            }
            Preset::ApproxError | Preset::LayerMapping => {
                grid.bs = vec![0.0];
                grid.seeds = vec![seed];
            }
            Preset::Custom => {
                grid.bs = vec![0.7];
                grid.seeds = array_seeds;
            }
        }
        Self {
            preset,
            grid,
            rows: 16,
            cols: 32,
            steps: DEFAULT_STEPS,
            samples: DEFAULT_SAMPLES,
            profile: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.rows == 0 || self.cols == 0 || self.steps == 0 || self.samples == 0 {
            return Err(Error::Config("rows, cols, steps and samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// One output row. Columns not meaningful for a preset are left empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub preset: String,
    pub seed: u64,
    pub bs_w: Option<f64>,
    pub bs_a: Option<f64>,
    pub vs_w: Option<f64>,
    pub vs_a: Option<f64>,
    #[serde(rename = "E")]
    pub e: Option<usize>,
    #[serde(rename = "Q")]
    pub q: Option<usize>,
    pub variant: Option<MacVariant>,
    pub zero_filter: Option<bool>,
    pub rows: usize,
    pub cols: usize,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub utilization: Option<f64>,
    pub cycles_per_step: Option<f64>,
    pub cycles_per_op: Option<f64>,
    pub throughput: Option<f64>,
    pub skipped_ideal: Option<f64>,
    pub skipped_bitserial: Option<f64>,
    pub skipped_bp: Option<f64>,
    /// Preset-specific `key=value` pairs separated by `;`.
    pub extra: String,
}

impl ResultRow {
    fn blank(spec: &ExperimentSpec, seed: u64) -> Self {
        Self {
            preset: spec.preset.name().to_string(),
            seed,
            bs_w: None,
            bs_a: None,
            vs_w: None,
            vs_a: None,
            e: None,
            q: None,
            variant: None,
            zero_filter: None,
            rows: spec.rows,
            cols: spec.cols,
            n: None,
            utilization: None,
            cycles_per_step: None,
            cycles_per_op: None,
            throughput: None,
            skipped_ideal: None,
            skipped_bitserial: None,
            skipped_bp: None,
            extra: String::new(),
        }
    }

    /// Looks up a value in `extra`.
    pub fn extra_value(&self, key: &str) -> Option<&str> {
        self.extra
            .split(';')
            .filter_map(|kv| kv.split_once('='))
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
    }
}

fn streams_for(spec: &ExperimentSpec, profile: Option<&[ProfileRecord]>, p: &ArrayPoint) -> Result<OperandStreams> {
    match profile {
        Some(records) => gen_from_profile(records, 0.5, spec.rows, spec.cols, spec.steps, p.seed),
        None => {
            let sp = SparsityProfile::bit_sparsity(p.bs).with_value_sparsity(p.vs_w, p.vs_a);
            gen_iid(&sp, spec.rows, spec.cols, spec.steps, p.seed)
        }
    }
}

fn run_array(spec: &ExperimentSpec, exec: Exec) -> Result<Vec<ResultRow>> {
    let profile = spec.profile.as_deref().map(read_profile_file).transpose()?;
    let mut points = spec.grid.array_points();
    if profile.is_some() {
        // sparsity comes from the profile; keep one point per remaining axis
        let g = &spec.grid;
        points.retain(|p| p.bs == g.bs[0] && p.vs_w == g.vs_w[0] && p.vs_a == g.vs_a[0]);
    }
    let results = parallel::map(exec, &points, |p| -> Result<ResultRow> {
        let streams = streams_for(spec, profile.as_deref(), p)?;
        let cfg = ArrayConfig {
            rows: spec.rows,
            cols: spec.cols,
            divergence: p.e,
            queue_depth: p.q,
            zero_filter: p.zf,
            variant: p.variant,
            steps: spec.steps,
            seed: p.seed,
        };
        let rep = simulate(&cfg, &streams)?;
        Ok(array_row(spec, profile.is_some(), p, &rep))
    });
    results.into_iter().collect()
}

fn array_row(spec: &ExperimentSpec, from_profile: bool, p: &ArrayPoint, rep: &MetricsReport) -> ResultRow {
    let mut row = ResultRow::blank(spec, p.seed);
    if !from_profile {
        row.bs_w = Some(p.bs);
        row.bs_a = Some(p.bs);
        row.vs_w = Some(p.vs_w);
        row.vs_a = Some(p.vs_a);
    }
    row.e = Some(p.e);
    row.q = Some(p.q);
    row.variant = Some(p.variant);
    row.zero_filter = Some(p.zf);
    row.n = Some(spec.steps);
    row.utilization = Some(rep.utilization);
    row.cycles_per_step = Some(rep.avg_cycles_per_step);
    row.cycles_per_op = Some(rep.avg_cycles_per_op);
    row.throughput = Some(rep.throughput_steps_per_cycle);
    row.skipped_ideal = Some(rep.skipped.ideal);
    row.skipped_bitserial = Some(rep.skipped.bit_serial);
    row.skipped_bp = Some(match p.variant {
        MacVariant::Exact => rep.skipped.bp_exact,
        MacVariant::Approx => rep.skipped.bp_approx,
    });
    let mut extra = format!(
        "label=E{}Q{};total_cycles={};filtered_ops={}",
        p.e, p.q, rep.total_cycles, rep.filtered_ops
    );
    if let Some(path) = &spec.profile {
        extra.push_str(&format!(";profile={}", path.display()));
    }
    row.extra = extra;
    row
}

fn run_table3(spec: &ExperimentSpec, exec: Exec) -> Vec<ResultRow> {
    let mut points = Vec::new();
    for &bs in &spec.grid.bs {
        for &variant in &spec.grid.variant {
            for &seed in &spec.grid.seeds {
                points.push((bs, variant, seed));
            }
        }
    }
    // points run in order; the Monte-Carlo itself is the parallel part
    points
        .into_iter()
        .map(|(bs, variant, seed)| {
            let profile = SparsityProfile::bit_sparsity(bs);
            let mean = avg_cycles_per_op(&profile, variant, spec.samples, seed, exec);
            let mut row = ResultRow::blank(spec, seed);
            row.bs_w = Some(bs);
            row.bs_a = Some(bs);
            row.vs_w = Some(0.0);
            row.vs_a = Some(0.0);
            row.variant = Some(variant);
            row.cycles_per_op = Some(mean);
            row.extra = format!("samples={}", spec.samples);
            row
        })
        .collect()
}

fn run_skipped(spec: &ExperimentSpec, exec: Exec) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for &bs in &spec.grid.bs {
        for &seed in &spec.grid.seeds {
            let st = skipped_monte_carlo(&SparsityProfile::bit_sparsity(bs), spec.samples, seed, exec);
            let r = st.ratios();
            let mut row = ResultRow::blank(spec, seed);
            row.bs_w = Some(bs);
            row.bs_a = Some(bs);
            row.vs_w = Some(0.0);
            row.vs_a = Some(0.0);
            row.variant = Some(MacVariant::Exact);
            row.skipped_ideal = Some(r.ideal);
            row.skipped_bitserial = Some(r.bit_serial);
            row.skipped_bp = Some(r.bp_exact);
            row.extra = format!(
                "samples={};skipped_bp_approx={};bitserial_vs_ideal={};bp_exact_vs_ideal={};bp_approx_vs_ideal={};bitserial_vs_ideal_stderr={};bitserial_vs_ideal_analytic={}",
                spec.samples,
                r.bp_approx,
                st.bit_serial_vs_ideal(),
                st.bp_exact_vs_ideal(),
                st.bp_approx_vs_ideal(),
                st.bit_serial_vs_ideal_stderr(),
                bitserial_ideal_ratio_analytic(bs)
            );
            rows.push(row);
        }
    }
    rows
}

/// Exhaustive error statistics of the approximate unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxErrorStats {
    pub pairs: u64,
    pub max_abs_error: i32,
    pub mean_abs_error: f64,
    /// `histogram[e]` = number of pairs with absolute error `e`.
    pub histogram: Vec<u64>,
    /// Pairs with both low nibbles zero whose error was non-zero.
    pub nonzero_with_clear_low_nibbles: u64,
    /// Pairs where the error differs from the discarded-IR magnitude.
    pub formula_mismatches: u64,
}

/// Enumerates every pair of 8-bit encodings (including both zero encodings).
pub fn approx_error_exhaustive() -> ApproxErrorStats {
    let mut histogram = Vec::new();
    let mut stats = ApproxErrorStats {
        pairs: 0,
        max_abs_error: 0,
        mean_abs_error: 0.0,
        histogram: Vec::new(),
        nonzero_with_clear_low_nibbles: 0,
        formula_mismatches: 0,
    };
    let mut total = 0u64;
    for ab in 0..=255u8 {
        for wb in 0..=255u8 {
            let (a, w) = (SignMagnitude8::from_bits(ab), SignMagnitude8::from_bits(wb));
            let err = multiply_reference(a, w) - mac_functional(a, w, MacVariant::Approx);
            let abs = err.unsigned_abs() as usize;
            if histogram.len() <= abs {
                histogram.resize(abs + 1, 0);
            }
            histogram[abs] += 1;
            total += abs as u64;
            stats.pairs += 1;
            stats.max_abs_error = stats.max_abs_error.max(abs as i32);
            if abs as u32 != discarded_magnitude(&build_ir(a, w)) {
                stats.formula_mismatches += 1;
            }
            if a.magnitude() & 0xf == 0 && w.magnitude() & 0xf == 0 && abs != 0 {
                stats.nonzero_with_clear_low_nibbles += 1;
            }
        }
    }
    stats.mean_abs_error = total as f64 / stats.pairs as f64;
    stats.histogram = histogram;
    stats
}

fn run_approx_error(spec: &ExperimentSpec) -> Vec<ResultRow> {
    let st = approx_error_exhaustive();
    let hist: Vec<String> = st
        .histogram
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(e, n)| format!("{e}:{n}"))
        .collect();
    let mut row = ResultRow::blank(spec, spec.grid.seeds[0]);
    row.variant = Some(MacVariant::Approx);
    row.extra = format!(
        "pairs={};max_abs_error={};mean_abs_error={};formula_mismatches={};nonzero_with_clear_low_nibbles={};histogram={}",
        st.pairs,
        st.max_abs_error,
        st.mean_abs_error,
        st.formula_mismatches,
        st.nonzero_with_clear_low_nibbles,
        hist.join(" ")
    );
    vec![row]
}

/// ResNet-18-style layer shapes used by the `layer_mapping` preset.
pub fn example_layers() -> Vec<(&'static str, LayerShape)> {
    let conv = |k, c, o, f| LayerShape {
        b: 1,
        k,
        c,
        oy: o,
        ox: o,
        fy: f,
        fx: f,
    };
    vec![
        ("conv1", conv(64, 3, 112, 7)),
        ("conv2_x", conv(64, 64, 56, 3)),
        ("conv3_x", conv(128, 128, 28, 3)),
        ("conv4_x", conv(256, 256, 14, 3)),
        ("conv5_x", conv(512, 512, 7, 3)),
        (
            "fc_batch1",
            LayerShape {
                b: 1,
                k: 1000,
                c: 512,
                oy: 1,
                ox: 1,
                fy: 1,
                fx: 1,
            },
        ),
        (
            "fc_batch32",
            LayerShape {
                b: 32,
                k: 1000,
                c: 512,
                oy: 1,
                ox: 1,
                fy: 1,
                fx: 1,
            },
        ),
    ]
}

fn run_layer_mapping(spec: &ExperimentSpec) -> Vec<ResultRow> {
    example_layers()
        .into_iter()
        .map(|(name, shape)| {
            let best = best_dataflow(&shape, spec.rows, spec.cols);
            let per_choice: Vec<String> = crate::workload::dataflow_candidates(spec.cols)
                .into_iter()
                .map(|df| format!("{df}:{}", spatial_utilization(&shape, df, spec.rows, spec.cols)))
                .collect();
            let mut row = ResultRow::blank(spec, spec.grid.seeds[0]);
            row.utilization = Some(spatial_utilization(&shape, best, spec.rows, spec.cols));
            row.extra = format!(
                "layer={name};B={};K={};C={};OY={};OX={};FY={};FX={};dataflow={best};candidates={}",
                shape.b,
                shape.k,
                shape.c,
                shape.oy,
                shape.ox,
                shape.fy,
                shape.fx,
                per_choice.join(" ")
            );
            row
        })
        .collect()
}

/// Runs every grid point of `spec`. Rows come back in grid order.
pub fn run(spec: &ExperimentSpec, exec: Exec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    match spec.preset {
        Preset::Table3Cycles => Ok(run_table3(spec, exec)),
        Preset::Fig9Skipped => Ok(run_skipped(spec, exec)),
        Preset::ApproxError => Ok(run_approx_error(spec)),
        Preset::LayerMapping => Ok(run_layer_mapping(spec)),
        p if p.is_array() => run_array(spec, exec),
        p => unreachable!("preset {p} has no runner"),
    }
}

pub fn render(rows: &[ResultRow], format: Format) -> Result<String> {
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(rows)? + "\n"),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in rows {
                w.serialize(row).map_err(|e| Error::Config(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}

pub fn write_rows(rows: &[ResultRow], format: Format, out: &Path) -> Result<()> {
    std::fs::write(out, render(rows, format)?)?;
    Ok(())
}

/// Outcome of one verification check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub expected: String,
    pub pass: bool,
}

impl Check {
    fn within(name: impl Into<String>, observed: f64, target: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            observed,
            expected: format!("{target} ± {tol}"),
            pass: (observed - target).abs() <= tol + 1e-12,
        }
    }

    fn band(name: impl Into<String>, observed: f64, (lo, hi): (f64, f64)) -> Self {
        Self {
            name: name.into(),
            observed,
            expected: format!("[{lo}, {hi}]"),
            pass: (lo..=hi).contains(&observed),
        }
    }

    fn exact(name: impl Into<String>, observed: f64, expected: f64) -> Self {
        Self {
            name: name.into(),
            observed,
            expected: format!("{expected}"),
            pass: observed == expected,
        }
    }

    fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self {
            name: name.into(),
            observed: ok as u8 as f64,
            expected: "1 (holds)".into(),
            pass: ok,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: observed {:.6}, expected {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.observed,
            self.expected
        )
    }
}

fn mean_of<'a>(rows: impl Iterator<Item = &'a ResultRow>, f: impl Fn(&ResultRow) -> Option<f64>) -> f64 {
    let v: Vec<f64> = rows.filter_map(f).collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

fn array_mean(rows: &[ResultRow], bs: f64, e: usize, q: usize, f: impl Fn(&ResultRow) -> Option<f64>) -> f64 {
    mean_of(
        rows.iter()
            .filter(|r| r.bs_a.is_some_and(|x| close(x, bs)) && r.e == Some(e) && r.q == Some(q)),
        f,
    )
}

/// Runs a preset and compares it against the reference table.
pub fn verify(spec: &ExperimentSpec, exec: Exec) -> Result<Vec<Check>> {
    if spec.preset == Preset::Custom {
        return Err(Error::Config("verify needs a named preset".into()));
    }
    let rows = run(spec, exec)?;
    let mut checks = Vec::new();
    match spec.preset {
        Preset::Table3Cycles => {
            for (i, &bs) in targets::BIT_SPARSITY.iter().enumerate() {
                let pick = |v| {
                    mean_of(
                        rows.iter().filter(|r| r.variant == Some(v) && r.bs_a.is_some_and(|x| close(x, bs))),
                        |r| r.cycles_per_op,
                    )
                };
                let (exact, approx) = (pick(MacVariant::Exact), pick(MacVariant::Approx));
                checks.push(Check::within(
                    format!("exact cycles/op bs={bs}"),
                    exact,
                    targets::TABLE3_EXACT[i],
                    targets::TABLE3_TOL,
                ));
                checks.push(Check::within(
                    format!("approx cycles/op bs={bs}"),
                    approx,
                    targets::TABLE3_APPROX[i],
                    targets::TABLE3_TOL,
                ));
                let gap = (exact - approx) / exact;
                checks.push(Check {
                    name: format!("approx gap bs={bs}"),
                    observed: gap,
                    expected: format!("[0, {})", targets::APPROX_GAP_MAX),
                    pass: (0.0..targets::APPROX_GAP_MAX).contains(&gap),
                });
            }
        }
        Preset::Fig8Utilization => {
            let util = |bs, e, q| array_mean(&rows, bs, e, q, |r| r.utilization);
            for &bs in &targets::BIT_SPARSITY {
                checks.push(Check::band(format!("E0Q0 utilization bs={bs}"), util(bs, 0, 0), targets::E0Q0_BAND));
                checks.push(Check::band(format!("E3Q2 utilization bs={bs}"), util(bs, 3, 2), targets::E3Q2_BAND));
            }
            let (t, tol) = targets::E1_TO_E3_GAIN;
            checks.push(Check::within("E1Q0->E3Q0 gain bs=0.7", util(0.7, 3, 0) - util(0.7, 1, 0), t, tol));
            let (t, tol) = targets::E3_TO_E7_GAIN;
            checks.push(Check::within("E3Q0->E7Q0 gain bs=0.7", util(0.7, 7, 0) - util(0.7, 3, 0), t, tol));
            for &seed in &spec.grid.seeds {
                let p = ArrayPoint {
                    bs: 0.7,
                    vs_w: 0.0,
                    vs_a: 0.0,
                    e: 0,
                    q: 0,
                    variant: MacVariant::Exact,
                    zf: false,
                    seed,
                };
                let streams = streams_for(spec, None, &p)?;
                let oracle = queue_free_schedule_cycles(&streams, MacVariant::Exact, 0, false);
                let sim = rows
                    .iter()
                    .find(|r| r.seed == seed && r.e == Some(0) && r.q == Some(0) && r.bs_a.is_some_and(|x| close(x, 0.7)))
                    .and_then(|r| r.extra_value("total_cycles"))
                    .and_then(|v| v.parse::<f64>().ok())
                    .unwrap_or(f64::NAN);
                checks.push(Check::exact(format!("E0Q0 schedule oracle seed={seed}"), sim, oracle as f64));
            }
        }
        Preset::Fig9CyclesPerStep => {
            let cps = |bs, e, q| array_mean(&rows, bs, e, q, |r| r.cycles_per_step);
            for &bs in &spec.grid.bs {
                for &q in &spec.grid.queue_depth {
                    let seq: Vec<f64> = spec.grid.divergence.iter().map(|&e| cps(bs, e, q)).collect();
                    checks.push(Check::holds(
                        format!("cycles/step non-increasing in E (Q={q}, bs={bs})"),
                        seq.windows(2).all(|w| w[1] <= w[0]),
                    ));
                }
                for &e in &spec.grid.divergence {
                    let seq: Vec<f64> = spec.grid.queue_depth.iter().map(|&q| cps(bs, e, q)).collect();
                    checks.push(Check::holds(
                        format!("cycles/step non-increasing in Q (E={e}, bs={bs})"),
                        seq.windows(2).all(|w| w[1] <= w[0]),
                    ));
                }
            }
        }
        Preset::Fig7ZeroFilter => {
            let at = |vs: f64, zf: bool| {
                mean_of(
                    rows.iter()
                        .filter(|r| r.vs_a.is_some_and(|x| close(x, vs)) && r.zero_filter == Some(zf)),
                    |r| r.cycles_per_step,
                )
            };
            let reductions: Vec<f64> = targets::ZF_VALUE_SPARSITY
                .iter()
                .map(|&vs| 1.0 - at(vs, true) / at(vs, false))
                .collect();
            let (t, tol) = targets::ZF_STEP_REDUCTION;
            checks.push(Check::within("cycles/step reduction vs_a=0.8", reductions[4], t, tol));
            let (t, tol) = targets::ZF_THROUGHPUT_GAIN;
            checks.push(Check::within(
                "throughput gain vs_a=0.8",
                at(0.8, false) / at(0.8, true) - 1.0,
                t,
                tol,
            ));
            checks.push(Check::holds(
                "reduction non-decreasing in vs_a",
                reductions.windows(2).all(|w| w[1] >= w[0]),
            ));
        }
        Preset::Fig9Skipped => {
            for (i, &bs) in targets::SKIP_BIT_SPARSITY.iter().enumerate() {
                let Some(row) = rows.iter().find(|r| r.bs_a.is_some_and(|x| close(x, bs))) else {
                    continue;
                };
                let val = |k: &str| row.extra_value(k).and_then(|v| v.parse::<f64>().ok()).unwrap_or(f64::NAN);
                let bp = val("bp_exact_vs_ideal");
                let bser = val("bitserial_vs_ideal");
                checks.push(Check::within(
                    format!("BpExact/Ideal bs={bs}"),
                    bp,
                    targets::SKIP_BP_EXACT[i],
                    targets::SKIP_TOL,
                ));
                checks.push(Check::within(
                    format!("BitSerial/Ideal bs={bs}"),
                    bser,
                    targets::SKIP_BIT_SERIAL[i],
                    targets::SKIP_TOL,
                ));
                let sigma = val("bitserial_vs_ideal_stderr");
                checks.push(Check::within(
                    format!("BitSerial/Ideal vs 1/(2-bs) bs={bs}"),
                    bser,
                    bitserial_ideal_ratio_analytic(bs),
                    3.0 * sigma,
                ));
            }
        }
        Preset::ApproxError => {
            let st = approx_error_exhaustive();
            let bound = SignMagnitude8::all()
                .flat_map(|a| SignMagnitude8::all().map(move |w| discarded_magnitude(&build_ir(a, w))))
                .max()
                .unwrap_or(0);
            checks.push(Check::exact(
                "max |error| equals discarded bound",
                st.max_abs_error as f64,
                bound as f64,
            ));
            checks.push(Check::exact(
                "max |error|",
                st.max_abs_error as f64,
                targets::APPROX_MAX_ERROR as f64,
            ));
            checks.push(Check::exact("error != discarded magnitude", st.formula_mismatches as f64, 0.0));
            checks.push(Check::exact(
                "error with zero low nibbles",
                st.nonzero_with_clear_low_nibbles as f64,
                0.0,
            ));
        }
        Preset::LayerMapping => {
            let six = LayerShape {
                b: 1,
                k: 1,
                c: 1,
                oy: 1,
                ox: 6,
                fy: 1,
                fx: 1,
            };
            checks.push(Check::exact(
                "6 items over 4 PEs",
                spatial_utilization(&six, DataflowChoice::A { ox_u: 4, oy_u: 1 }, 1, 4),
                0.75,
            ));
            for (name, shape) in example_layers() {
                let best = best_dataflow(&shape, spec.rows, spec.cols);
                if shape.b == 1 && shape.ox * shape.oy >= spec.cols {
                    checks.push(Check::holds(
                        format!("{name} maps to dataflow A"),
                        matches!(best, DataflowChoice::A { .. }),
                    ));
                }
                if shape.ox == 1 && shape.oy == 1 && shape.b >= spec.cols {
                    checks.push(Check::holds(format!("{name} maps to dataflow B"), best == DataflowChoice::B));
                }
            }
        }
        Preset::Custom => unreachable!(),
    }
    Ok(checks)
}
