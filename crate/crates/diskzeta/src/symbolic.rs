//! Admissible periodic itineraries: cyclic words over r obstacle symbols
//! with no immediate repetition, stored in canonical (lexicographically
//! least) rotation, with primitive/repetition bookkeeping and the exact
//! transfer-matrix counting oracle.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WordError {
    #[error("word must have at least 2 symbols, got {0}")]
    TooShort(usize),
    #[error("symbol {0} out of range (expected 1..=9)")]
    SymbolOutOfRange(u32),
    #[error("cyclically adjacent repeated symbol {symbol} at position {pos}")]
    AdjacentRepeat { pos: usize, symbol: u8 },
    #[error("invalid character {0:?} in word string")]
    InvalidChar(char),
    #[error("empty word string")]
    Empty,
}

#[derive(Debug, Error, PartialEq)]
pub enum SymbolicError {
    #[error("need at least {min} symbols, got {got}")]
    AlphabetTooSmall { min: u8, got: u8 },
    #[error("word length must be at least {min}, got {got}")]
    LengthTooSmall { min: usize, got: usize },
    #[error("periodic point count overflows 128-bit integers (r = {r}, m = {m})")]
    CountOverflow { r: u8, m: u32 },
}

/// A cyclic itinerary over obstacle indices 1..=r, canonical under rotation.
///
/// Reversal classes are NOT merged: a word and its reversal are distinct
/// oriented rays unless the class is reversal-invariant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word {
    symbols: Vec<u8>,
}

impl Word {
    /// Validates and canonicalizes a symbol sequence.
    pub fn new(symbols: Vec<u8>) -> Result<Word, WordError> {
        if symbols.len() < 2 {
            return Err(WordError::TooShort(symbols.len()));
        }
        for (pos, &s) in symbols.iter().enumerate() {
            if s < 1 || s > 9 {
                return Err(WordError::SymbolOutOfRange(s as u32));
            }
            let next = symbols[(pos + 1) % symbols.len()];
            if s == next {
                return Err(WordError::AdjacentRepeat { pos, symbol: s });
            }
        }
        let start = least_rotation(&symbols);
        let mut canon = Vec::with_capacity(symbols.len());
        canon.extend_from_slice(&symbols[start..]);
        canon.extend_from_slice(&symbols[..start]);
        Ok(Word { symbols: canon })
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    /// Number of reflections m.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_symbol(&self) -> u8 {
        *self.symbols.iter().max().expect("nonempty")
    }

    /// Unique primitive root and repetition count k with root^k = self.
    pub fn primitive_decomposition(&self) -> PrimitiveDecomposition {
        let m = self.symbols.len();
        for d in 1..=m {
            if m % d != 0 {
                continue;
            }
            let repeats = self.symbols.chunks(d).all(|c| c == &self.symbols[..d]);
            if repeats {
                let primitive = Word::new(self.symbols[..d].to_vec())
                    .expect("root of a valid word is valid");
                return PrimitiveDecomposition {
                    primitive,
                    repetition: (m / d) as u32,
                };
            }
        }
        unreachable!("d = m always repeats");
    }

    pub fn is_primitive(&self) -> bool {
        self.primitive_decomposition().repetition == 1
    }

    /// The same class traversed in the opposite orientation.
    pub fn reversed(&self) -> Word {
        let mut rev = self.symbols.clone();
        rev.reverse();
        Word::new(rev).expect("reversal of a valid word is valid")
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &s in &self.symbols {
            write!(f, "{}", s)?;
        }
        Ok(())
    }
}

impl FromStr for Word {
    type Err = WordError;

    fn from_str(s: &str) -> Result<Word, WordError> {
        if s.is_empty() {
            return Err(WordError::Empty);
        }
        let mut symbols = Vec::with_capacity(s.len());
        for ch in s.chars() {
            match ch.to_digit(10) {
                Some(d) if d >= 1 => symbols.push(d as u8),
                _ => return Err(WordError::InvalidChar(ch)),
            }
        }
        Word::new(symbols)
    }
}

impl serde::Serialize for Word {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveDecomposition {
    pub primitive: Word,
    pub repetition: u32,
}

/// Index of the lexicographically least rotation (duplicated-slice scan;
/// words are short enough that O(m^2) is irrelevant).
fn least_rotation(s: &[u8]) -> usize {
    let m = s.len();
    let mut best = 0;
    for cand in 1..m {
        for k in 0..m {
            let a = s[(cand + k) % m];
            let b = s[(best + k) % m];
            if a < b {
                best = cand;
                break;
            }
            if a > b {
                break;
            }
        }
    }
    best
}

/// Streams every canonical cyclic class of length 2..=m_max over symbols
/// 1..=r with no cyclically adjacent repeats, each class exactly once, in
/// order of (length, lexicographic canonical form).
///
/// Classic necklace generation restricted by the adjacency constraint:
/// pruning a branch whose last symbol repeats cannot lose an admissible
/// necklace, because adjacent equality in any prefix is already cyclic
/// adjacency in the finished word.
pub fn for_each_word(
    r: u8,
    m_max: usize,
    mut visit: impl FnMut(&[u8]),
) -> Result<(), SymbolicError> {
    if r < 3 {
        return Err(SymbolicError::AlphabetTooSmall { min: 3, got: r });
    }
    if m_max < 2 {
        return Err(SymbolicError::LengthTooSmall { min: 2, got: m_max });
    }
    let mut w = vec![0u8; m_max + 1]; // 1-indexed
    for m in 2..=m_max {
        for first in 1..=r {
            w[1] = first;
            gen_necklaces(&mut w, 2, 1, m, r, &mut visit);
        }
    }
    Ok(())
}

fn gen_necklaces(
    w: &mut Vec<u8>,
    t: usize,
    p: usize,
    m: usize,
    r: u8,
    visit: &mut impl FnMut(&[u8]),
) {
    if t > m {
        if m % p == 0 && w[m] != w[1] {
            visit(&w[1..=m]);
        }
        return;
    }
    let copy = w[t - p];
    if copy != w[t - 1] {
        w[t] = copy;
        gen_necklaces(w, t + 1, p, m, r, visit);
    }
    for v in (copy + 1)..=r {
        if v != w[t - 1] {
            w[t] = v;
            gen_necklaces(w, t + 1, t, m, r, visit);
        }
    }
}

/// All canonical classes up to length m_max, materialized.
pub fn enumerate_words(r: u8, m_max: usize) -> Result<Vec<Word>, SymbolicError> {
    let mut out = Vec::new();
    for_each_word(r, m_max, |syms| {
        out.push(Word { symbols: syms.to_vec() });
    })?;
    Ok(out)
}

/// Trace of A^m for the r x r matrix with zero diagonal and unit
/// off-diagonal entries: (r-1)^m + (r-1)(-1)^m. Exact count of length-m
/// linear words that are admissible read cyclically.
pub fn count_periodic_points(r: u8, m: u32) -> Result<u128, SymbolicError> {
    if r < 2 {
        return Err(SymbolicError::AlphabetTooSmall { min: 2, got: r });
    }
    if m < 1 {
        return Err(SymbolicError::LengthTooSmall { min: 1, got: m as usize });
    }
    let base = (r - 1) as i128;
    let pow = base
        .checked_pow(m)
        .ok_or(SymbolicError::CountOverflow { r, m })?;
    let sign = if m % 2 == 0 { 1 } else { -1 };
    let count = pow
        .checked_add(base * sign)
        .ok_or(SymbolicError::CountOverflow { r, m })?;
    debug_assert!(count >= 0);
    Ok(count as u128)
}
