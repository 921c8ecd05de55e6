//! Bit-true sign-magnitude arithmetic and the particle decomposition.
//!
//! A 7-bit magnitude is sliced into four particles, three 2-bit slices from
//! the LSB end plus the single MSB bit. Crossing the particles of two operands
//! gives a 4x4 matrix of intermediate results (IRs), each at most 9. IRs on
//! the same anti-diagonal share an LSB weight and form a group; the seven
//! groups split into two sets whose bit fields never overlap, so one IR per
//! group can be concatenated into a partial product without any adder.

use std::fmt;

use crate::error::{Error, Result};

/// Number of magnitude bits in an operand.
pub const MAGNITUDE_BITS: u32 = 7;
pub const MAX_MAGNITUDE: u8 = (1 << MAGNITUDE_BITS) - 1;

/// Bit width of each particle, LSB particle first.
pub const PARTICLE_WIDTHS: [u32; 4] = [2, 2, 2, 1];

/// Width in bits of a concatenated partial product.
pub const PP_BITS: u32 = 13;

/// An 8-bit sign-magnitude operand. Zero is always stored as +0.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SignMagnitude8 {
    negative: bool,
    magnitude: u8,
}

impl SignMagnitude8 {
    pub const ZERO: Self = Self {
        negative: false,
        magnitude: 0,
    };

    pub fn new(negative: bool, magnitude: u8) -> Result<Self> {
        if magnitude > MAX_MAGNITUDE {
            return Err(Error::MagnitudeOverflow(magnitude));
        }
        Ok(Self {
            negative: negative && magnitude != 0,
            magnitude,
        })
    }

    /// Decodes a raw byte (bit 7 = sign, bits 6:0 = magnitude); `0x80` maps to +0.
    pub fn from_bits(bits: u8) -> Self {
        let magnitude = bits & MAX_MAGNITUDE;
        Self {
            negative: bits & 0x80 != 0 && magnitude != 0,
            magnitude,
        }
    }

    pub fn to_bits(self) -> u8 {
        ((self.negative as u8) << 7) | self.magnitude
    }

    pub fn is_negative(self) -> bool {
        self.negative
    }

    pub fn magnitude(self) -> u8 {
        self.magnitude
    }

    pub fn is_zero(self) -> bool {
        self.magnitude == 0
    }

    /// Iterates over all 255 distinct values, -127 through 127.
    pub fn all() -> impl Iterator<Item = Self> + Clone {
        (-127..=127).map(|v| Self::try_from(v).unwrap())
    }
}

impl TryFrom<i32> for SignMagnitude8 {
    type Error = Error;

    fn try_from(value: i32) -> Result<Self> {
        encode_sm8(value)
    }
}

impl From<SignMagnitude8> for i32 {
    fn from(value: SignMagnitude8) -> Self {
        decode_sm8(value)
    }
}

impl fmt::Debug for SignMagnitude8 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SM8({})", decode_sm8(*self))
    }
}

impl fmt::Display for SignMagnitude8 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", decode_sm8(*self))
    }
}

pub fn encode_sm8(value: i32) -> Result<SignMagnitude8> {
    if !(-127..=127).contains(&value) {
        return Err(Error::OutOfRange(value));
    }
    SignMagnitude8::new(value < 0, value.unsigned_abs() as u8)
}

pub fn decode_sm8(x: SignMagnitude8) -> i32 {
    let m = x.magnitude as i32;
    if x.negative {
        -m
    } else {
        m
    }
}

/// The four particles of a magnitude, index 0 being the least significant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParticleSplit(pub [u8; 4]);

impl ParticleSplit {
    pub fn recompose(self) -> u8 {
        let p = self.0;
        (p[3] << 6) | (p[2] << 4) | (p[1] << 2) | p[0]
    }

    /// Bit mask of particles that are not all-zero.
    pub fn nonzero_mask(self) -> u8 {
        self.0.iter().enumerate().fold(0, |m, (i, &p)| m | (((p != 0) as u8) << i))
    }
}

pub fn particlize(magnitude: u8) -> ParticleSplit {
    debug_assert!(magnitude <= MAX_MAGNITUDE);
    ParticleSplit([
        magnitude & 0b11,
        (magnitude >> 2) & 0b11,
        (magnitude >> 4) & 0b11,
        (magnitude >> 6) & 0b1,
    ])
}

/// Position ID of the IR formed by A-side particle `i` and W-side particle `j`.
pub const fn ir_id(i: usize, j: usize) -> usize {
    4 * i + j
}

/// One anti-diagonal of the IR matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Group {
    /// `i + j` for every member.
    pub k: usize,
    pub members: &'static [usize],
    /// Bit position of the LSB of every member IR.
    pub lsb_weight: u32,
    /// 0 for even `k`, 1 for odd.
    pub set: u8,
    /// Width of the group's field in a concatenated partial product.
    pub field_width: u32,
    /// Member IDs as a 16-bit mask.
    pub mask: u16,
}

impl Group {
    pub fn capacity(&self) -> usize {
        self.members.len()
    }

    pub fn field_max(&self) -> u8 {
        ((1u16 << self.field_width) - 1) as u8
    }
}

const fn member_mask(members: &[usize]) -> u16 {
    let mut mask = 0u16;
    let mut n = 0;
    while n < members.len() {
        mask |= 1 << members[n];
        n += 1;
    }
    mask
}

macro_rules! group {
    ($k:expr, [$($id:expr),+], $width:expr) => {
        Group {
            k: $k,
            members: &[$($id),+],
            lsb_weight: 2 * $k,
            set: ($k % 2) as u8,
            field_width: $width,
            mask: member_mask(&[$($id),+]),
        }
    };
}

/// The seven IR groups, indexed by `k = i + j`.
///
/// A member's width is the bit width of the largest product of its two
/// particles: 4 bits for 2x2, 2 bits when one side is the 1-bit MSB particle,
/// and 1 bit for the MSB x MSB corner.
pub const GROUPS: [Group; 7] = [
    group!(0, [0], 4),
    group!(1, [1, 4], 4),
    group!(2, [2, 5, 8], 4),
    group!(3, [3, 6, 9, 12], 4),
    group!(4, [7, 10, 13], 4),
    group!(5, [11, 14], 2),
    group!(6, [15], 1),
];

/// Group index of every position ID.
pub const GROUP_OF_ID: [usize; 16] = [0, 1, 2, 3, 1, 2, 3, 4, 2, 3, 4, 5, 3, 4, 5, 6];

/// The IR matrix for one operand pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct IrState {
    /// IR values by position ID.
    pub ir: [u8; 16],
    /// Bit `id` set iff `ir[id] != 0`.
    pub nonzero: u16,
    /// XOR of the operand signs.
    pub negative: bool,
}

impl IrState {
    pub fn at(&self, i: usize, j: usize) -> u8 {
        self.ir[ir_id(i, j)]
    }

    /// Unsigned magnitude of the product, recomposed from the IRs restricted to `mask`.
    pub fn magnitude_of(&self, mask: u16) -> u32 {
        (0..16)
            .filter(|&id| mask & (1 << id) != 0)
            .map(|id| (self.ir[id] as u32) << GROUPS[GROUP_OF_ID[id]].lsb_weight)
            .sum()
    }

    pub fn magnitude(&self) -> u32 {
        self.magnitude_of(u16::MAX)
    }
}

pub fn build_ir(a: SignMagnitude8, w: SignMagnitude8) -> IrState {
    let pa = particlize(a.magnitude()).0;
    let pw = particlize(w.magnitude()).0;
    let mut state = IrState {
        negative: a.is_negative() ^ w.is_negative(),
        ..IrState::default()
    };
    for (i, &x) in pa.iter().enumerate() {
        for (j, &y) in pw.iter().enumerate() {
            let v = x * y;
            let id = ir_id(i, j);
            state.ir[id] = v;
            state.nonzero |= ((v != 0) as u16) << id;
        }
    }
    state
}

/// Possible products of two 2-bit particles.
pub const IR_VALUES: [u8; 7] = [0, 1, 2, 3, 4, 6, 9];

/// Packs an IR into 3 bits: 0-4 map to themselves, 6 to `0b110`, 9 to `0b111`.
pub fn ir_encode3(v: u8) -> Result<u8> {
    match v {
        0..=4 => Ok(v),
        6 => Ok(0b110),
        9 => Ok(0b111),
        _ => Err(Error::InvalidIrValue(v)),
    }
}

pub fn ir_decode3(code: u8) -> Result<u8> {
    match code {
        0..=4 => Ok(code),
        0b110 => Ok(6),
        0b111 => Ok(9),
        _ => Err(Error::InvalidIrCode(code)),
    }
}

/// Places one selected IR per group into its field of a partial product.
///
/// `picks[k]` is the IR chosen from group `k`, if any. Groups outside `set`
/// must be `None`.
pub fn concat_pp(picks: &[Option<u8>; 7], set: u8) -> Result<u16> {
    let mut pp = 0u16;
    for (group, pick) in GROUPS.iter().zip(picks) {
        let Some(value) = *pick else { continue };
        if group.set != set {
            return Err(Error::GroupNotInSet { group: group.k, set });
        }
        if value > group.field_max() {
            return Err(Error::FieldOverflow {
                group: group.k,
                value,
                width: group.field_width,
            });
        }
        pp |= (value as u16) << group.lsb_weight;
    }
    Ok(pp)
}

/// Plain integer product; the ground truth for every other path.
pub fn multiply_reference(a: SignMagnitude8, w: SignMagnitude8) -> i32 {
    decode_sm8(a) * decode_sm8(w)
}
