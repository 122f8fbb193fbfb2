//! Integer mentions in raw text and their frequency distribution.
//!
//! Token rule: a maximal run of ASCII digits, value 1..=1000, no leading zero,
//! counted unless
//! - it touches a letter, digit or underscore on either side,
//! - it follows a '.', or a ',' that follows a digit (decimals, grouping),
//! - it is followed by '.' or ',' and then a digit,
//! - it follows a '+' or '-' that is not itself preceded by a letter or digit.
//!
//! Non-ASCII characters count as boundaries.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::stats::optimize::golden_section;
use crate::stats::regression::simple_ols;

pub const MAX_VALUE: usize = 1000;
pub const TOKEN_RULE: &str = "ascii digit run 1..=1000, no leading zero, word-boundary delimited, \
not adjacent to a decimal point or digit grouping, no sign";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("insufficient support: {0}")]
    Insufficient(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MagnitudeHistogram {
    /// `counts[n]` for n in 1..=1000; index 0 stays zero.
    pub counts: Vec<u64>,
    pub total_mentions: u64,
    pub docs_scanned: u64,
    pub malformed_bytes: u64,
}

impl Default for MagnitudeHistogram {
    fn default() -> Self {
        Self { counts: vec![0; MAX_VALUE + 1], total_mentions: 0, docs_scanned: 0, malformed_bytes: 0 }
    }
}

impl MagnitudeHistogram {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        let mut c = counts;
        c.resize(MAX_VALUE + 1, 0);
        c[0] = 0;
        let total = c.iter().sum();
        Self { counts: c, total_mentions: total, docs_scanned: 0, malformed_bytes: 0 }
    }

    pub fn merge(mut self, other: &Self) -> Self {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total_mentions += other.total_mentions;
        self.docs_scanned += other.docs_scanned;
        self.malformed_bytes += other.malformed_bytes;
        self
    }

    pub fn distinct_values(&self) -> usize {
        self.counts.iter().filter(|c| **c > 0).count()
    }
}

fn is_word(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum State {
    Idle,
    Digits,
    /// Run ended in '.' or ','; the next byte decides.
    Separator,
}

/// Byte-level extractor with constant memory. Chunks may split anywhere.
#[derive(Debug, Clone)]
pub struct IntegerCounter {
    hist: MagnitudeHistogram,
    state: State,
    prev1: u8,
    prev2: u8,
    run_ok: bool,
    run_len: usize,
    run_value: usize,
    leading_zero: bool,
    utf8_pending: Vec<u8>,
}

impl Default for IntegerCounter {
    fn default() -> Self {
        Self::new()
    }
}

impl IntegerCounter {
    pub fn new() -> Self {
        Self {
            hist: MagnitudeHistogram::default(),
            state: State::Idle,
            prev1: b' ',
            prev2: b' ',
            run_ok: false,
            run_len: 0,
            run_value: 0,
            leading_zero: false,
            utf8_pending: Vec::new(),
        }
    }

    fn emit(&mut self) {
        if self.run_ok && !self.leading_zero && self.run_len <= 4 && (1..=MAX_VALUE).contains(&self.run_value) {
            self.hist.counts[self.run_value] += 1;
            self.hist.total_mentions += 1;
        }
    }

    fn start_ok(&self) -> bool {
        let (b1, b2) = (self.prev1, self.prev2);
        if is_word(b1) || b1 == b'.' {
            return false;
        }
        if b1 == b',' && b2.is_ascii_digit() {
            return false;
        }
        if (b1 == b'-' || b1 == b'+') && !b2.is_ascii_alphanumeric() {
            return false;
        }
        true
    }

    fn push_byte(&mut self, b: u8) {
        match self.state {
            State::Digits => {
                if b.is_ascii_digit() {
                    self.run_len += 1;
                    if self.run_len <= 4 {
                        self.run_value = self.run_value * 10 + (b - b'0') as usize;
                    }
                } else if b == b'.' || b == b',' {
                    self.state = State::Separator;
                } else {
                    if is_word(b) {
                        self.run_ok = false;
                    }
                    self.emit();
                    self.state = State::Idle;
                }
            }
            State::Separator => {
                if b.is_ascii_digit() {
                    self.run_ok = false;
                }
                self.emit();
                self.state = State::Idle;
            }
            State::Idle => {}
        }
        if self.state == State::Idle && b.is_ascii_digit() {
            self.run_ok = self.start_ok();
            self.run_len = 1;
            self.run_value = (b - b'0') as usize;
            self.leading_zero = b == b'0';
            self.state = State::Digits;
        }
        self.prev2 = self.prev1;
        self.prev1 = b;
    }

    /// Feeds raw bytes. Invalid UTF-8 sequences are skipped and counted.
    pub fn feed(&mut self, bytes: &[u8]) {
        if self.utf8_pending.is_empty() {
            self.feed_valid(bytes);
        } else {
            let mut buf = std::mem::take(&mut self.utf8_pending);
            buf.extend_from_slice(bytes);
            self.feed_valid(&buf);
        }
    }

    fn feed_valid(&mut self, mut data: &[u8]) {
        loop {
            match std::str::from_utf8(data) {
                Ok(s) => {
                    s.bytes().for_each(|b| self.push_byte(b));
                    return;
                }
                Err(e) => {
                    let (good, rest) = data.split_at(e.valid_up_to());
                    good.iter().for_each(|b| self.push_byte(*b));
                    match e.error_len() {
                        Some(k) => {
                            self.hist.malformed_bytes += k as u64;
                            // a skipped sequence acts as a boundary
                            self.push_byte(b' ');
                            data = &rest[k..];
                        }
                        None => {
                            self.utf8_pending = rest.to_vec();
                            return;
                        }
                    }
                }
            }
        }
    }

    /// Marks the end of one document.
    pub fn end_document(&mut self) {
        if !self.utf8_pending.is_empty() {
            self.hist.malformed_bytes += self.utf8_pending.len() as u64;
            self.utf8_pending.clear();
        }
        self.push_byte(b' ');
        self.prev1 = b' ';
        self.prev2 = b' ';
        self.hist.docs_scanned += 1;
    }

    pub fn finish(mut self) -> MagnitudeHistogram {
        if self.state != State::Idle || !self.utf8_pending.is_empty() {
            self.end_document();
        }
        self.hist
    }
}

/// Counts integer mentions in one text, treated as a single document.
pub fn extract_integer_counts(text: &[u8]) -> MagnitudeHistogram {
    let mut c = IntegerCounter::new();
    c.feed(text);
    c.end_document();
    c.finish()
}

/// Streams one file, gunzipping when it starts with the gzip magic bytes.
pub fn count_file(path: &Path) -> Result<MagnitudeHistogram, CorpusError> {
    let io = |source| CorpusError::Io { path: path.display().to_string(), source };
    let mut f = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 2];
    let mut got = 0;
    while got < 2 {
        let k = f.read(&mut magic[got..]).map_err(io)?;
        if k == 0 {
            break;
        }
        got += k;
    }
    let head = std::io::Cursor::new(magic[..got].to_vec());
    let mut reader: Box<dyn Read> = if got == 2 && magic == [0x1f, 0x8b] {
        Box::new(MultiGzDecoder::new(head.chain(f)))
    } else {
        Box::new(head.chain(f))
    };
    let mut counter = IntegerCounter::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let k = reader.read(&mut buf).map_err(io)?;
        if k == 0 {
            break;
        }
        counter.feed(&buf[..k]);
    }
    counter.end_document();
    Ok(counter.finish())
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io { path: path.display().to_string(), source };
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(io)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(io)?;
        entries.sort();
        for e in entries {
            collect_files(&e, out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// Counts a file or every file under a directory, one document per file,
/// in parallel; shards are merged by summation.
pub fn count_path(path: &Path) -> Result<MagnitudeHistogram, CorpusError> {
    let mut files = Vec::new();
    collect_files(path, &mut files)?;
    let parts: Vec<MagnitudeHistogram> = files.par_iter().map(|f| count_file(f)).collect::<Result<_, _>>()?;
    Ok(parts.iter().fold(MagnitudeHistogram::default(), |acc, h| acc.merge(h)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionModel {
    PowerLaw,
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenfordResult {
    /// Leading digits 1..=9, as proportions.
    pub observed: [f64; 9],
    pub expected: [f64; 9],
    pub max_dev_pp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionFit {
    /// f(n) ∝ n^-alpha, from OLS of ln f on ln n.
    pub alpha: f64,
    /// f(n) ∝ exp(-lambda n), from OLS of ln f on n.
    pub lambda: f64,
    pub r2_power: f64,
    pub r2_exp: f64,
    pub aic_power: f64,
    pub aic_exp: f64,
    pub winner: DistributionModel,
    /// aic of the loser minus aic of the winner.
    pub delta_aic: f64,
    pub n_points: usize,
    pub zero_cells_dropped: usize,
    pub benford: BenfordResult,
    pub benford_max_dev_pp: f64,
    /// Discrete maximum-likelihood exponent on 1..=1000; sensitivity only.
    pub alpha_mle: f64,
    pub token_rule: String,
}

pub const AIC_PARAMS: usize = 3;

fn gaussian_aic(rss: f64, m: usize) -> f64 {
    let m = m as f64;
    m * (rss / m).max(1e-300).ln() + 2.0 * AIC_PARAMS as f64
}

pub fn benford(h: &MagnitudeHistogram) -> BenfordResult {
    let mut lead = [0f64; 9];
    for (n, c) in h.counts.iter().enumerate().skip(1) {
        let mut d = n;
        while d >= 10 {
            d /= 10;
        }
        lead[d - 1] += *c as f64;
    }
    let total: f64 = lead.iter().sum();
    let mut observed = [0f64; 9];
    let mut expected = [0f64; 9];
    let mut max_dev = 0f64;
    for d in 0..9 {
        observed[d] = if total > 0.0 { lead[d] / total } else { 0.0 };
        expected[d] = (1.0 + 1.0 / (d + 1) as f64).log10();
        max_dev = max_dev.max((observed[d] - expected[d]).abs() * 100.0);
    }
    BenfordResult { observed, expected, max_dev_pp: max_dev }
}

/// Discrete power-law MLE truncated to 1..=1000.
pub fn powerlaw_mle(h: &MagnitudeHistogram) -> f64 {
    let total = h.total_mentions as f64;
    let s: f64 = h.counts.iter().enumerate().skip(1).map(|(n, c)| *c as f64 * (n as f64).ln()).sum();
    let nll = |a: f64| {
        let z: f64 = (1..=MAX_VALUE).map(|n| (n as f64).powf(-a)).sum();
        a * s + total * z.ln()
    };
    golden_section(nll, 0.0, 6.0, 1e-9)
}

pub fn fit_magnitude_distribution(h: &MagnitudeHistogram) -> Result<DistributionFit, CorpusError> {
    if h.total_mentions < 100 {
        return Err(CorpusError::Insufficient(format!("{} mentions, need at least 100", h.total_mentions)));
    }
    let distinct = h.distinct_values();
    if distinct < 10 {
        return Err(CorpusError::Insufficient(format!("{distinct} distinct values, need at least 10")));
    }
    let pts: Vec<(f64, f64)> = h
        .counts
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, c)| **c > 0)
        .map(|(n, c)| (n as f64, (*c as f64).ln()))
        .collect();
    let n: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ln_n: Vec<f64> = n.iter().map(|v| v.ln()).collect();
    let ln_f: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let fit_err = || CorpusError::Insufficient("regression failed".into());
    let pow = simple_ols(&ln_n, &ln_f).ok_or_else(fit_err)?;
    let exp = simple_ols(&n, &ln_f).ok_or_else(fit_err)?;
    let m = pts.len();
    let aic_power = gaussian_aic(pow.rss, m);
    let aic_exp = gaussian_aic(exp.rss, m);
    let (winner, delta_aic) = if aic_power <= aic_exp {
        (DistributionModel::PowerLaw, aic_exp - aic_power)
    } else {
        (DistributionModel::Exponential, aic_power - aic_exp)
    };
    let b = benford(h);
    Ok(DistributionFit {
        alpha: -pow.slope,
        lambda: -exp.slope,
        r2_power: pow.r2(),
        r2_exp: exp.r2(),
        aic_power,
        aic_exp,
        winner,
        delta_aic,
        n_points: m,
        zero_cells_dropped: MAX_VALUE - m,
        benford_max_dev_pp: b.max_dev_pp,
        benford: b,
        alpha_mle: powerlaw_mle(h),
        token_rule: TOKEN_RULE.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenisation_rules() {
        let h = extract_integer_counts(b"I have 47 cats and 47 dogs, 3.5 litres");
        assert_eq!(h.counts[47], 2);
        assert_eq!(h.counts[3], 0);
        assert_eq!(h.counts[5], 0);
        let h = extract_integer_counts(b"1000 and 1001");
        assert_eq!(h.counts[1000], 1);
        assert_eq!(h.total_mentions, 1);
        let h = extract_integer_counts(b"1,000 people, -5 degrees, 007, A4, 4th, pages 10-20. End 9.");
        assert_eq!(h.total_mentions, 3, "{:?}", (1..=1000).filter(|i| h.counts[*i] > 0).collect::<Vec<_>>());
        assert_eq!((h.counts[10], h.counts[20], h.counts[9]), (1, 1, 1));
    }

    #[test]
    fn malformed_bytes_are_boundaries() {
        let h = extract_integer_counts(b"a\xff12\xfe b");
        assert_eq!(h.counts[12], 1);
        assert_eq!(h.malformed_bytes, 2);
    }

    #[test]
    fn split_utf8_across_chunks() {
        let text = "caf\u{e9} 12 na\u{ef}ve 7".as_bytes();
        for cut in 0..text.len() {
            let mut c = IntegerCounter::new();
            c.feed(&text[..cut]);
            c.feed(&text[cut..]);
            c.end_document();
            let h = c.finish();
            assert_eq!((h.counts[12], h.counts[7], h.malformed_bytes), (1, 1, 0));
        }
    }

    #[test]
    fn exact_power_law() {
        let counts: Vec<u64> = (0..=1000)
            .map(|n| if n == 0 { 0 } else { (1e12 * (n as f64).powf(-0.773)).round() as u64 })
            .collect();
        let f = fit_magnitude_distribution(&MagnitudeHistogram::from_counts(counts)).unwrap();
        assert!((f.alpha - 0.773).abs() < 1e-6);
        assert_eq!(f.winner, DistributionModel::PowerLaw);
    }

    #[test]
    fn exact_exponential() {
        let counts: Vec<u64> = (0..=1000)
            .map(|n| if n == 0 { 0 } else { (1e12 * (-0.01 * n as f64).exp()).round() as u64 })
            .collect();
        let f = fit_magnitude_distribution(&MagnitudeHistogram::from_counts(counts)).unwrap();
        assert_eq!(f.winner, DistributionModel::Exponential);
        assert!((f.lambda - 0.01).abs() < 1e-6);
    }
}
