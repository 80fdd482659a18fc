//! Channel models and BER/SNR conversions.
//!
//! SNR conventions follow the closed forms they pair with:
//!
//! * BPSK and QPSK: `snr` is the per-bit SNR `Eb/N0`, so both share
//!   `BER = erfc(sqrt(snr)) / 2`;
//! * 16-QAM and 64-QAM: `snr` is the per-symbol SNR `Es/N0` with the
//!   constellation scaled to unit average energy, giving
//!   `d^2 / (4 N0) = 3 snr / (2 (M - 1))`.
//!
//! The Monte Carlo modem uses the same conventions so that it checks the
//! closed forms directly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{erfc, DenseTensor, SeededRng};

/// Ordered bits, each exactly 0 or 1.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BitSequence(Vec<u8>);

impl BitSequence {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(Error::invalid(format!(
                "bit {pos} has value {}, expected 0 or 1",
                bits[pos]
            )));
        }
        Ok(Self(bits))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub(crate) fn push(&mut self, bit: u8) {
        debug_assert!(bit <= 1);
        self.0.push(bit);
    }

    pub fn flip(&mut self, index: usize) {
        self.0[index] ^= 1;
    }

    /// Number of positions where `self` and `other` differ.
    pub fn hamming_distance(&self, other: &Self) -> Result<usize> {
        if self.len() != other.len() {
            return Err(Error::shape(format!(
                "hamming distance between {} and {} bits",
                self.len(),
                other.len()
            )));
        }
        Ok(self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count())
    }
}

impl fmt::Display for BitSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Bpsk,
    Qpsk,
    Qam16,
    Qam64,
}

impl Modulation {
    pub const ALL: [Modulation; 4] = [
        Modulation::Bpsk,
        Modulation::Qpsk,
        Modulation::Qam16,
        Modulation::Qam64,
    ];

    pub fn order(self) -> u32 {
        match self {
            Modulation::Bpsk => 2,
            Modulation::Qpsk => 4,
            Modulation::Qam16 => 16,
            Modulation::Qam64 => 64,
        }
    }

    pub fn bits_per_symbol(self) -> usize {
        self.order().trailing_zeros() as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Modulation::Bpsk => "bpsk",
            Modulation::Qpsk => "qpsk",
            Modulation::Qam16 => "qam16",
            Modulation::Qam64 => "qam64",
        }
    }

    /// `Es/N0` for the reference `snr` of this modulation (see module docs).
    pub fn symbol_snr(self, snr: f64) -> f64 {
        match self {
            Modulation::Qpsk => 2.0 * snr,
            _ => snr,
        }
    }

    /// Closed-form BER at linear reference SNR.
    pub fn ber(self, snr: f64) -> Result<f64> {
        match self {
            Modulation::Bpsk | Modulation::Qpsk => ber_bpsk_qpsk(snr),
            Modulation::Qam16 | Modulation::Qam64 => ber_mqam(self.order(), snr),
        }
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Modulation::Bpsk),
            "qpsk" => Ok(Modulation::Qpsk),
            "qam16" | "16qam" => Ok(Modulation::Qam16),
            "qam64" | "64qam" => Ok(Modulation::Qam64),
            other => Err(Error::invalid(format!("unknown modulation `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ChannelSpec {
    Bsc { flip_probability: f64 },
    Awgn { snr_db: f64 },
    Modulated { modulation: Modulation, snr_db: f64 },
}

impl ChannelSpec {
    pub fn bsc(flip_probability: f64) -> Result<Self> {
        check_flip_probability(flip_probability)?;
        Ok(ChannelSpec::Bsc { flip_probability })
    }

    pub fn awgn(snr_db: f64) -> Result<Self> {
        if snr_db.is_nan() {
            return Err(Error::invalid("awgn: snr_db is NaN"));
        }
        Ok(ChannelSpec::Awgn { snr_db })
    }

    pub fn modulated(modulation: Modulation, snr_db: f64) -> Result<Self> {
        if snr_db.is_nan() {
            return Err(Error::invalid("modulated: snr_db is NaN"));
        }
        Ok(ChannelSpec::Modulated { modulation, snr_db })
    }

    /// Bit flip probability a bit-level scheme sees on this channel.
    pub fn equivalent_flip_probability(&self) -> Result<f64> {
        match *self {
            ChannelSpec::Bsc { flip_probability } => Ok(flip_probability),
            ChannelSpec::Modulated { modulation, snr_db } => {
                Ok(modulation.ber(db_to_linear(snr_db))?.min(0.5))
            }
            ChannelSpec::Awgn { .. } => Err(Error::invalid(
                "an analog AWGN channel has no bit flip probability",
            )),
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

fn check_flip_probability(p: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&p) {
        return Err(Error::invalid(format!(
            "flip probability {p} outside [0, 0.5]"
        )));
    }
    Ok(())
}

/// Flips bit `i` whenever an independent uniform draw `u_i < p`.
pub fn bsc_transmit(bits: &BitSequence, p: f64, rng: &mut SeededRng) -> Result<BitSequence> {
    check_flip_probability(p)?;
    let mut out = bits.clone();
    for b in out.0.iter_mut() {
        if rng.next_f64() < p {
            *b ^= 1;
        }
    }
    Ok(out)
}

/// Adds white Gaussian noise at `snr_db` relative to the mean-square power of `s`.
///
/// `snr_db = +inf` returns `s` unchanged.
pub fn awgn_transmit(s: &DenseTensor, snr_db: f64, rng: &mut SeededRng) -> Result<DenseTensor> {
    if snr_db == f64::INFINITY {
        return Ok(s.clone());
    }
    if snr_db.is_nan() {
        return Err(Error::invalid("awgn: snr_db is NaN"));
    }
    let power = s.data().iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
    if power == 0.0 {
        return Err(Error::invalid("awgn: zero-power signal, SNR undefined"));
    }
    let sigma = (power / db_to_linear(snr_db)).sqrt();
    let mut out = s.clone();
    for v in out.data_mut() {
        *v += sigma * rng.standard_normal();
    }
    Ok(out)
}

fn check_qam_order(m: u32, allowed: &[u32]) -> Result<()> {
    if !allowed.contains(&m) {
        return Err(Error::invalid(format!(
            "unsupported modulation order {m}, expected one of {allowed:?}"
        )));
    }
    Ok(())
}

fn check_snr(snr: f64) -> Result<()> {
    if !(snr >= 0.0) {
        return Err(Error::invalid(format!("snr must be >= 0, got {snr}")));
    }
    Ok(())
}

/// Per-axis symbol error rate `(sqrt(M)-1)/sqrt(M) * erfc(sqrt(d^2/(4 N0)))`.
pub fn ser_per_axis(m: u32, snr: f64) -> Result<f64> {
    check_qam_order(m, &[4, 16, 64])?;
    check_snr(snr)?;
    let root = f64::from(m).sqrt();
    let arg = 3.0 * snr / (2.0 * (f64::from(m) - 1.0));
    Ok((root - 1.0) / root * erfc(arg.sqrt()))
}

/// Exact square-QAM symbol error rate `1 - (1 - P_axis)^2`.
pub fn ser_mqam(m: u32, snr: f64) -> Result<f64> {
    let p = ser_per_axis(m, snr)?;
    Ok(1.0 - (1.0 - p) * (1.0 - p))
}

/// The low-SER shortcut `2 * P_axis`, kept for comparison against [`ser_mqam`].
pub fn ser_mqam_approx(m: u32, snr: f64) -> Result<f64> {
    Ok(2.0 * ser_per_axis(m, snr)?)
}

/// `SER / log2(M)`: one bit error per symbol error under Gray labelling.
pub fn ber_mqam(m: u32, snr: f64) -> Result<f64> {
    check_qam_order(m, &[16, 64])?;
    let ser = ser_mqam(m, snr)?;
    Ok((ser / f64::from(m.trailing_zeros())).clamp(0.0, 1.0))
}

pub fn ber_bpsk_qpsk(snr: f64) -> Result<f64> {
    check_snr(snr)?;
    Ok(0.5 * erfc(snr.sqrt()))
}

/// Linear reference SNR at which `modulation` reaches `target_ber`, by bisection.
pub fn snr_for_ber(target_ber: f64, modulation: Modulation) -> Result<f64> {
    if !(target_ber > 0.0 && target_ber <= 0.5) {
        return Err(Error::invalid(format!(
            "target BER {target_ber} outside (0, 0.5]"
        )));
    }
    let ceiling = modulation.ber(0.0)?;
    if target_ber > ceiling {
        return Err(Error::invalid(format!(
            "BER {target_ber} unreachable for {modulation}: maximum is {ceiling}"
        )));
    }
    if target_ber == ceiling {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while modulation.ber(hi)? > target_ber {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::invalid(format!(
                "BER {target_ber} unreachable for {modulation}"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if modulation.ber(mid)? > target_ber {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Gray-labelled, unit-average-energy constellation.
///
/// A label's high `k` bits select the in-phase level and its low `k` bits
/// the quadrature level (BPSK has no quadrature axis). Along each axis the
/// `k`-bit field is a reflected-binary code of the level index, levels
/// ordered from most negative to most positive.
#[derive(Clone, Debug)]
pub struct Constellation {
    modulation: Modulation,
    levels: usize,
    bits_per_axis: usize,
    axes: usize,
    scale: f64,
}

fn gray_encode(i: usize) -> usize {
    i ^ (i >> 1)
}

fn gray_decode(mut g: usize) -> usize {
    let mut i = 0;
    while g != 0 {
        i ^= g;
        g >>= 1;
    }
    i
}

impl Constellation {
    pub fn new(modulation: Modulation) -> Self {
        match modulation {
            Modulation::Bpsk => Self {
                modulation,
                levels: 2,
                bits_per_axis: 1,
                axes: 1,
                scale: 1.0,
            },
            _ => {
                let m = f64::from(modulation.order());
                let levels = m.sqrt() as usize;
                Self {
                    modulation,
                    levels,
                    bits_per_axis: levels.trailing_zeros() as usize,
                    axes: 2,
                    scale: (3.0 / (2.0 * (m - 1.0))).sqrt(),
                }
            }
        }
    }

    pub fn modulation(&self) -> Modulation {
        self.modulation
    }

    pub fn len(&self) -> usize {
        self.modulation.order() as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// 1 for BPSK (real-only), 2 otherwise.
    pub fn axes(&self) -> usize {
        self.axes
    }

    fn level_value(&self, level: usize) -> f64 {
        (2.0 * level as f64 - (self.levels as f64 - 1.0)) * self.scale
    }

    fn nearest_level(&self, x: f64) -> usize {
        let t = ((x / self.scale) + (self.levels as f64 - 1.0)) / 2.0;
        t.round().clamp(0.0, (self.levels - 1) as f64) as usize
    }

    /// Point for `label` as `(in-phase, quadrature)`.
    pub fn point(&self, label: usize) -> (f64, f64) {
        let k = self.bits_per_axis;
        let mask = (1 << k) - 1;
        if self.axes == 1 {
            return (self.level_value(gray_decode(label & mask)), 0.0);
        }
        let i_level = gray_decode((label >> k) & mask);
        let q_level = gray_decode(label & mask);
        (self.level_value(i_level), self.level_value(q_level))
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        (0..self.len()).map(|l| self.point(l)).collect()
    }

    /// Label of the point nearest to `(i, q)` (per-axis slicing).
    pub fn nearest(&self, i: f64, q: f64) -> usize {
        let k = self.bits_per_axis;
        let il = gray_encode(self.nearest_level(i));
        if self.axes == 1 {
            return il;
        }
        (il << k) | gray_encode(self.nearest_level(q))
    }
}

/// Bit errors and bits simulated, summed across shards.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ErrorCount {
    pub errors: u64,
    pub bits: u64,
}

impl ErrorCount {
    pub fn ber(&self) -> f64 {
        self.errors as f64 / self.bits as f64
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            errors: self.errors + other.errors,
            bits: self.bits + other.bits,
        }
    }
}

const MC_SHARD_SYMBOLS: usize = 1 << 18;

/// Empirical BER of the Gray modem over complex AWGN at reference SNR `snr`.
///
/// Work is split into shards of `2^18` symbols; shard `k` draws from
/// `rng.split(k)`, so the count is the same however the shards are scheduled.
pub fn mc_modem_ber(
    modulation: Modulation,
    snr: f64,
    n_bits: usize,
    rng: &SeededRng,
) -> Result<f64> {
    Ok(mc_modem_errors(modulation, snr, n_bits, rng)?.ber())
}

pub fn mc_modem_errors(
    modulation: Modulation,
    snr: f64,
    n_bits: usize,
    rng: &SeededRng,
) -> Result<ErrorCount> {
    let bps = modulation.bits_per_symbol();
    if n_bits < 10_000 || !n_bits.is_multiple_of(bps) {
        return Err(Error::invalid(format!(
            "n_bits {n_bits} must be >= 10^4 and divisible by {bps}"
        )));
    }
    check_snr(snr)?;
    let constellation = Constellation::new(modulation);
    let n0 = 1.0 / modulation.symbol_snr(snr);
    let sigma = (n0 / 2.0).sqrt();
    let symbols = n_bits / bps;
    let shards = symbols.div_ceil(MC_SHARD_SYMBOLS);
    let mut total = ErrorCount::default();
    for shard in 0..shards {
        let count = MC_SHARD_SYMBOLS.min(symbols - shard * MC_SHARD_SYMBOLS);
        let mut local = rng.split(shard as u64);
        total = total.merge(modem_shard(&constellation, sigma, count, &mut local));
    }
    Ok(total)
}

fn modem_shard(c: &Constellation, sigma: f64, symbols: usize, rng: &mut SeededRng) -> ErrorCount {
    let bps = c.modulation.bits_per_symbol();
    let mut errors = 0u64;
    for _ in 0..symbols {
        let label = (rng.next_u64() >> (64 - bps)) as usize;
        let (i, q) = c.point(label);
        let ri = i + sigma * rng.standard_normal();
        let rq = q + sigma * rng.standard_normal();
        let detected = c.nearest(ri, rq);
        errors += u64::from((label ^ detected).count_ones());
    }
    ErrorCount {
        errors,
        bits: (symbols * bps) as u64,
    }
}

/// Exact Gray-labelled BER from per-axis Gaussian tail sums.
///
/// Unlike [`Modulation::ber`] this counts every bit of every symbol error,
/// so it stays accurate at low SNR where the one-bit-per-symbol-error
/// assumption breaks down for 16/64-QAM.
pub fn ber_gray_exact(modulation: Modulation, snr: f64) -> Result<f64> {
    check_snr(snr)?;
    let c = Constellation::new(modulation);
    let n0 = 1.0 / modulation.symbol_snr(snr);
    let sigma = (n0 / 2.0).sqrt();
    let l = c.levels;
    let cdf = |x: f64| 0.5 * erfc(-x / (sigma * std::f64::consts::SQRT_2));
    let mut bit_errors = 0.0;
    for tx in 0..l {
        let x = c.level_value(tx);
        for rx in 0..l {
            let lo = if rx == 0 {
                f64::NEG_INFINITY
            } else {
                0.5 * (c.level_value(rx - 1) + c.level_value(rx))
            };
            let hi = if rx == l - 1 {
                f64::INFINITY
            } else {
                0.5 * (c.level_value(rx) + c.level_value(rx + 1))
            };
            let p = cdf(hi - x) - cdf(lo - x);
            bit_errors += p * f64::from((gray_encode(tx) ^ gray_encode(rx)).count_ones());
        }
    }
    Ok(bit_errors / (l * c.bits_per_axis) as f64)
}
