//! Operand-stream generation and layer-to-array dataflow mapping.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Role};
use crate::smcore::SignMagnitude8;

/// Per-bit and per-value zero probabilities for weights and activations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityProfile {
    pub bs_w: f64,
    pub bs_a: f64,
    pub vs_w: f64,
    pub vs_a: f64,
    /// Probability that a non-zero element is negative.
    pub sign_p: f64,
}

impl Default for SparsityProfile {
    fn default() -> Self {
        Self::bit_sparsity(0.5)
    }
}

impl SparsityProfile {
    /// Same bit sparsity on both operands, no value sparsity.
    pub fn bit_sparsity(bs: f64) -> Self {
        Self {
            bs_w: bs,
            bs_a: bs,
            vs_w: 0.0,
            vs_a: 0.0,
            sign_p: 0.5,
        }
    }

    pub fn with_value_sparsity(mut self, vs_w: f64, vs_a: f64) -> Self {
        self.vs_w = vs_w;
        self.vs_a = vs_a;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("bs_w", self.bs_w),
            ("bs_a", self.bs_a),
            ("vs_w", self.vs_w),
            ("vs_a", self.vs_a),
            ("sign_p", self.sign_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        Ok(())
    }
}

/// Draws one operand. Value-level zeroing is applied first, then each of the
/// seven magnitude bits is independently zero with probability `bs`.
///
/// Always consumes nine uniforms, so changing a probability never shifts
/// the rest of the stream.
pub fn draw_operand<R: Rng + ?Sized>(rng: &mut R, bs: f64, vs: f64, sign_p: f64) -> SignMagnitude8 {
    let value_zero = rng.random::<f64>() < vs;
    let negative = rng.random::<f64>() < sign_p;
    let mut magnitude = 0u8;
    for bit in 0..7 {
        if rng.random::<f64>() >= bs {
            magnitude |= 1 << bit;
        }
    }
    if value_zero {
        return SignMagnitude8::ZERO;
    }
    SignMagnitude8::new(negative, magnitude).expect("7-bit magnitude")
}

/// Weight rows and activation columns, indexed by array step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OperandStreams {
    rows: usize,
    cols: usize,
    steps: usize,
    weights: Vec<SignMagnitude8>,
    activations: Vec<SignMagnitude8>,
}

impl OperandStreams {
    /// `weights` is row-major `[row][step]`, `activations` is `[col][step]`.
    pub fn new(rows: usize, cols: usize, steps: usize, weights: Vec<SignMagnitude8>, activations: Vec<SignMagnitude8>) -> Result<Self> {
        if weights.len() != rows * steps || activations.len() != cols * steps {
            return Err(Error::Config(format!(
                "stream sizes {}/{} do not match {rows}x{cols} array with {steps} steps",
                weights.len(),
                activations.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            steps,
            weights,
            activations,
        })
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        steps: usize,
        mut weight: impl FnMut(usize, usize) -> SignMagnitude8,
        mut activation: impl FnMut(usize, usize) -> SignMagnitude8,
    ) -> Self {
        let weights = (0..rows)
            .flat_map(|r| (0..steps).map(move |s| (r, s)))
            .map(|(r, s)| weight(r, s))
            .collect();
        let activations = (0..cols)
            .flat_map(|c| (0..steps).map(move |s| (c, s)))
            .map(|(c, s)| activation(c, s))
            .collect();
        Self {
            rows,
            cols,
            steps,
            weights,
            activations,
        }
    }

    pub fn constant(rows: usize, cols: usize, steps: usize, w: SignMagnitude8, a: SignMagnitude8) -> Self {
        Self::from_fn(rows, cols, steps, |_, _| w, |_, _| a)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn weight(&self, row: usize, step: usize) -> SignMagnitude8 {
        self.weights[row * self.steps + step]
    }

    pub fn activation(&self, col: usize, step: usize) -> SignMagnitude8 {
        self.activations[col * self.steps + step]
    }

    pub fn weight_row(&self, row: usize) -> &[SignMagnitude8] {
        &self.weights[row * self.steps..(row + 1) * self.steps]
    }

    pub fn activation_col(&self, col: usize) -> &[SignMagnitude8] {
        &self.activations[col * self.steps..(col + 1) * self.steps]
    }

    /// Every weight then every activation.
    pub fn all_operands(&self) -> impl Iterator<Item = SignMagnitude8> + '_ {
        self.weights.iter().chain(&self.activations).copied()
    }
}

#[allow(clippy::too_many_arguments)]
fn fill_segment(out: &mut [SignMagnitude8], seed: u64, role: Role, index: usize, layer: usize, bs: f64, vs: f64, sign_p: f64) {
    let mut rng = substream(seed, role, index as u64, layer as u64);
    for x in out {
        *x = draw_operand(&mut rng, bs, vs, sign_p);
    }
}

/// I.i.d. streams for a `rows` x `cols` array.
pub fn gen_iid(profile: &SparsityProfile, rows: usize, cols: usize, steps: usize, seed: u64) -> Result<OperandStreams> {
    let record = ProfileRecord {
        layer: "iid".into(),
        macs: 1.0,
        bs_w: profile.bs_w,
        bs_a: profile.bs_a,
        vs_w: profile.vs_w,
        vs_a: profile.vs_a,
    };
    gen_from_profile(&[record], profile.sign_p, rows, cols, steps, seed)
}

/// One line of a sparsity profile file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub layer: String,
    /// Relative share of the workload.
    pub macs: f64,
    pub bs_w: f64,
    pub bs_a: f64,
    pub vs_w: f64,
    pub vs_a: f64,
}

pub const PROFILE_HEADER: [&str; 6] = ["layer_name", "macs", "bs_w", "bs_a", "vs_w", "vs_a"];

/// Parses the profile CSV. `origin` is only used in error messages.
pub fn parse_profile(text: &str, origin: &Path) -> Result<Vec<ProfileRecord>> {
    let err = |line: u64, msg: String| Error::Profile {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut records = Vec::new();
    let mut header_seen = false;
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.iter().all(str::is_empty) {
            continue;
        }
        if !header_seen {
            let names: Vec<String> = row.iter().map(|f| f.to_ascii_lowercase()).collect();
            if names != PROFILE_HEADER {
                return Err(err(line, format!("expected header `{}`", PROFILE_HEADER.join(","))));
            }
            header_seen = true;
            continue;
        }
        if row.len() != PROFILE_HEADER.len() {
            return Err(err(line, format!("expected {} fields, found {}", PROFILE_HEADER.len(), row.len())));
        }
        let num = |idx: usize| -> Result<f64> {
            row[idx]
                .parse::<f64>()
                .map_err(|_| err(line, format!("{}: `{}` is not a number", PROFILE_HEADER[idx], &row[idx])))
        };
        let rec = ProfileRecord {
            layer: row[0].to_string(),
            macs: num(1)?,
            bs_w: num(2)?,
            bs_a: num(3)?,
            vs_w: num(4)?,
            vs_a: num(5)?,
        };
        if !(rec.macs.is_finite() && rec.macs > 0.0) {
            return Err(err(line, format!("macs must be positive, got {}", rec.macs)));
        }
        for (idx, p) in [(2, rec.bs_w), (3, rec.bs_a), (4, rec.vs_w), (5, rec.vs_a)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(err(line, format!("{} = {p} is not a probability", PROFILE_HEADER[idx])));
            }
        }
        records.push(rec);
    }
    if !header_seen {
        return Err(err(1, "missing header line".into()));
    }
    if records.is_empty() {
        return Err(err(2, "no layer records".into()));
    }
    Ok(records)
}

pub fn read_profile_file(path: &Path) -> Result<Vec<ProfileRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_profile(&text, path)
}

/// Splits `steps` into contiguous per-layer segments proportional to `macs`
/// (largest-remainder rounding, ties to the earlier layer).
pub fn layer_segments(records: &[ProfileRecord], steps: usize) -> Vec<std::ops::Range<usize>> {
    let total: f64 = records.iter().map(|r| r.macs).sum();
    let quotas: Vec<f64> = records.iter().map(|r| r.macs / total * steps as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = steps - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&x, &y| {
        let rx = quotas[x] - quotas[x].floor();
        let ry = quotas[y] - quotas[y].floor();
        ry.total_cmp(&rx).then(x.cmp(&y))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    let mut start = 0;
    counts
        .into_iter()
        .map(|n| {
            let r = start..start + n;
            start += n;
            r
        })
        .collect()
}

/// Streams whose steps are split between layers in proportion to their MACs;
/// each layer's segment uses that layer's sparsities.
pub fn gen_from_profile(
    records: &[ProfileRecord],
    sign_p: f64,
    rows: usize,
    cols: usize,
    steps: usize,
    seed: u64,
) -> Result<OperandStreams> {
    if records.is_empty() {
        return Err(Error::Config("profile has no layers".into()));
    }
    let mut weights = vec![SignMagnitude8::ZERO; rows * steps];
    let mut activations = vec![SignMagnitude8::ZERO; cols * steps];
    for (layer, (rec, seg)) in records.iter().zip(layer_segments(records, steps)).enumerate() {
        SparsityProfile {
            bs_w: rec.bs_w,
            bs_a: rec.bs_a,
            vs_w: rec.vs_w,
            vs_a: rec.vs_a,
            sign_p,
        }
        .validate()?;
        for r in 0..rows {
            let out = &mut weights[r * steps + seg.start..r * steps + seg.end];
            fill_segment(out, seed, Role::Weight, r, layer, rec.bs_w, rec.vs_w, sign_p);
        }
        for c in 0..cols {
            let out = &mut activations[c * steps + seg.start..c * steps + seg.end];
            fill_segment(out, seed, Role::Activation, c, layer, rec.bs_a, rec.vs_a, sign_p);
        }
    }
    OperandStreams::new(rows, cols, steps, weights, activations)
}

pub fn gen_from_profile_file(path: &Path, rows: usize, cols: usize, steps: usize, seed: u64) -> Result<OperandStreams> {
    let records = read_profile_file(path)?;
    gen_from_profile(&records, 0.5, rows, cols, steps, seed)
}

/// Loop bounds of a convolution (or fully connected) layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub b: usize,
    pub k: usize,
    pub c: usize,
    pub oy: usize,
    pub ox: usize,
    pub fy: usize,
    pub fx: usize,
}

impl LayerShape {
    pub fn macs(&self) -> u64 {
        [self.b, self.k, self.c, self.oy, self.ox, self.fy, self.fx]
            .iter()
            .map(|&d| d as u64)
            .product()
    }

    pub fn validate(&self) -> Result<()> {
        if [self.b, self.k, self.c, self.oy, self.ox, self.fy, self.fx].contains(&0) {
            return Err(Error::Config(format!("layer dimensions must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

/// How the non-K dimensions are spread across the array columns. K is always
/// unrolled over the rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DataflowChoice {
    /// OX x OY over the columns.
    A { ox_u: usize, oy_u: usize },
    /// Batch over the columns.
    B,
}

impl fmt::Display for DataflowChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataflowChoice::A { ox_u, oy_u } => write!(f, "A({ox_u},{oy_u})"),
            DataflowChoice::B => f.write_str("B"),
        }
    }
}

/// Candidate dataflows in tie-break order.
pub fn dataflow_candidates(cols: usize) -> Vec<DataflowChoice> {
    let mut out: Vec<DataflowChoice> = [1, 2, 4]
        .into_iter()
        .filter(|&oy_u| cols.is_multiple_of(oy_u))
        .map(|oy_u| DataflowChoice::A { ox_u: cols / oy_u, oy_u })
        .collect();
    out.push(DataflowChoice::B);
    out
}

/// Fraction of a spatial extent doing useful work when `extent` items are
/// unrolled over `lanes` PEs.
pub fn unroll_efficiency(extent: usize, lanes: usize) -> f64 {
    let passes = extent.div_ceil(lanes);
    extent as f64 / (passes * lanes) as f64
}

/// Useful MACs over occupied PE slots.
pub fn spatial_utilization(shape: &LayerShape, df: DataflowChoice, rows: usize, cols: usize) -> f64 {
    let rows_eff = unroll_efficiency(shape.k, rows);
    let cols_eff = match df {
        DataflowChoice::A { ox_u, oy_u } => {
            debug_assert_eq!(ox_u * oy_u, cols);
            unroll_efficiency(shape.ox, ox_u) * unroll_efficiency(shape.oy, oy_u)
        }
        DataflowChoice::B => unroll_efficiency(shape.b, cols),
    };
    rows_eff * cols_eff
}

pub fn best_dataflow(shape: &LayerShape, rows: usize, cols: usize) -> DataflowChoice {
    let mut best = None;
    for df in dataflow_candidates(cols) {
        let u = spatial_utilization(shape, df, rows, cols);
        match best {
            Some((_, bu)) if u <= bu => {}
            _ => best = Some((df, u)),
        }
    }
    best.expect("at least one candidate").0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(b: usize, k: usize, ox: usize, oy: usize) -> LayerShape {
        LayerShape {
            b,
            k,
            c: 3,
            oy,
            ox,
            fy: 3,
            fx: 3,
        }
    }

    #[test]
    fn extreme_bit_sparsity() {
        let all_zero = gen_iid(&SparsityProfile::bit_sparsity(1.0), 4, 4, 200, 1).unwrap();
        assert!(all_zero.all_operands().all(|x| x.magnitude() == 0));
        let all_one = gen_iid(&SparsityProfile::bit_sparsity(0.0), 4, 4, 200, 1).unwrap();
        assert!(all_one.all_operands().all(|x| x.magnitude() == 127));
    }

    #[test]
    fn value_sparsity_zeroes_whole_elements() {
        let p = SparsityProfile::bit_sparsity(0.0).with_value_sparsity(1.0, 0.0);
        let s = gen_iid(&p, 3, 3, 50, 9).unwrap();
        assert!((0..3).all(|r| s.weight_row(r).iter().all(|x| x.is_zero())));
        assert!((0..3).all(|c| s.activation_col(c).iter().all(|x| x.magnitude() == 127)));
    }

    #[test]
    fn deterministic_and_column_stable() {
        let p = SparsityProfile::bit_sparsity(0.6);
        let a = gen_iid(&p, 4, 8, 100, 42).unwrap();
        let b = gen_iid(&p, 4, 8, 100, 42).unwrap();
        assert_eq!(a, b);
        // adding columns and rows leaves existing streams untouched
        let wider = gen_iid(&p, 6, 12, 100, 42).unwrap();
        for c in 0..8 {
            assert_eq!(a.activation_col(c), wider.activation_col(c));
        }
        for r in 0..4 {
            assert_eq!(a.weight_row(r), wider.weight_row(r));
        }
        let other = gen_iid(&p, 4, 8, 100, 43).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn rejects_bad_probability() {
        let p = SparsityProfile::bit_sparsity(1.5);
        assert!(gen_iid(&p, 1, 1, 1, 0).is_err());
    }

    #[test]
    fn stream_size_check() {
        assert!(OperandStreams::new(2, 2, 3, vec![SignMagnitude8::ZERO; 6], vec![SignMagnitude8::ZERO; 5]).is_err());
    }

    #[test]
    fn profile_parsing() {
        let text = "layer_name,macs,bs_w,bs_a,vs_w,vs_a\nconv1, 10, 0.6, 0.7, 0.0, 0.5\nfc,2,0.5,0.5,0.1,0.2\n";
        let recs = parse_profile(text, Path::new("p.csv")).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].layer, "conv1");
        assert_eq!(recs[1].vs_a, 0.2);
    }

    #[test]
    fn profile_errors_carry_line_numbers() {
        let missing_header = "conv1,10,0.6,0.7,0.0,0.5\n";
        let e = parse_profile(missing_header, Path::new("p.csv")).unwrap_err();
        assert!(matches!(e, Error::Profile { line: 1, .. }), "{e}");

        let bad_number = "layer_name,macs,bs_w,bs_a,vs_w,vs_a\nconv1,10,0.6,0.7,0.0,0.5\nfc,2,abc,0.5,0.1,0.2\n";
        let e = parse_profile(bad_number, Path::new("p.csv")).unwrap_err();
        assert!(matches!(e, Error::Profile { line: 3, .. }), "{e}");
        assert!(e.to_string().starts_with("p.csv:3:"));

        let bad_prob = "layer_name,macs,bs_w,bs_a,vs_w,vs_a\nconv1,10,0.6,1.7,0.0,0.5\n";
        assert!(matches!(
            parse_profile(bad_prob, Path::new("p.csv")).unwrap_err(),
            Error::Profile { line: 2, .. }
        ));

        let short = "layer_name,macs,bs_w,bs_a,vs_w,vs_a\nconv1,10,0.6\n";
        assert!(matches!(
            parse_profile(short, Path::new("p.csv")).unwrap_err(),
            Error::Profile { line: 2, .. }
        ));
    }

    #[test]
    fn single_record_profile_equals_iid() {
        let rec = ProfileRecord {
            layer: "only".into(),
            macs: 123.0,
            bs_w: 0.55,
            bs_a: 0.7,
            vs_w: 0.05,
            vs_a: 0.3,
        };
        let from_profile = gen_from_profile(&[rec], 0.5, 4, 6, 300, 17).unwrap();
        let p = SparsityProfile {
            bs_w: 0.55,
            bs_a: 0.7,
            vs_w: 0.05,
            vs_a: 0.3,
            sign_p: 0.5,
        };
        assert_eq!(from_profile, gen_iid(&p, 4, 6, 300, 17).unwrap());
    }

    #[test]
    fn segments_are_proportional() {
        let mk = |macs| ProfileRecord {
            layer: String::new(),
            macs,
            bs_w: 0.5,
            bs_a: 0.5,
            vs_w: 0.0,
            vs_a: 0.0,
        };
        let segs = layer_segments(&[mk(1.0), mk(2.0), mk(1.0)], 10);
        assert_eq!(segs, vec![0..3, 3..8, 8..10]);
        let segs = layer_segments(&[mk(1.0)], 7);
        assert_eq!(segs, vec![0..7]);
    }

    #[test]
    fn utilization_examples() {
        let exact = shape(1, 16, 32, 7);
        assert_eq!(spatial_utilization(&exact, DataflowChoice::A { ox_u: 32, oy_u: 1 }, 16, 32), 1.0);
        // six items over four PEs: the second pass has two valid lanes
        let six = shape(1, 1, 6, 1);
        assert_eq!(spatial_utilization(&six, DataflowChoice::A { ox_u: 4, oy_u: 1 }, 1, 4), 0.75);
        let k24 = shape(32, 24, 1, 1);
        assert_eq!(spatial_utilization(&k24, DataflowChoice::B, 16, 32), 0.75);
    }

    #[test]
    fn dataflow_selection() {
        assert!(matches!(best_dataflow(&shape(1, 64, 56, 56), 16, 32), DataflowChoice::A { .. }));
        assert_eq!(best_dataflow(&shape(32, 1000, 1, 1), 16, 32), DataflowChoice::B);
        assert_eq!(best_dataflow(&shape(1, 16, 8, 4), 16, 32), DataflowChoice::A { ox_u: 8, oy_u: 4 });
        // exact fit for every A variant: tie goes to (32,1)
        assert_eq!(best_dataflow(&shape(1, 16, 32, 4), 16, 32), DataflowChoice::A { ox_u: 32, oy_u: 1 });
        assert_eq!(
            dataflow_candidates(32),
            vec![
                DataflowChoice::A { ox_u: 32, oy_u: 1 },
                DataflowChoice::A { ox_u: 16, oy_u: 2 },
                DataflowChoice::A { ox_u: 8, oy_u: 4 },
                DataflowChoice::B
            ]
        );
    }
}
