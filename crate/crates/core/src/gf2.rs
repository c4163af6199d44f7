//! Packed GF(2) vectors and the small amount of linear algebra the
//! protocol needs: parities, Hamming weight, rank, and reduced row
//! echelon form for syndrome decoding and lineage rank checks.

use std::fmt;

/// A fixed-length vector over GF(2), packed into 64-bit words.
///
/// Used for error strings, subset masks, parity-matrix rows and key
/// lineage rows. Bit `i` lives in word `i / 64` at position `i % 64`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BitString {
    words: Vec<u64>,
    len: usize,
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        Self { words: vec![0; len.div_ceil(64)], len }
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let bits: Vec<bool> = bits.into_iter().collect();
        let mut s = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                s.set(i, true);
            }
        }
        s
    }

    /// Unit vector with a single one at `index`.
    pub fn unit(len: usize, index: usize) -> Self {
        let mut s = Self::zeros(len);
        s.set(index, true);
        s
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        self.words[i / 64] ^= 1u64 << (i % 64);
    }

    pub fn xor_assign(&mut self, other: &BitString) {
        debug_assert_eq!(self.len, other.len);
        for (w, o) in self.words.iter_mut().zip(&other.words) {
            *w ^= o;
        }
    }

    pub fn and(&self, other: &BitString) -> BitString {
        debug_assert_eq!(self.len, other.len);
        BitString {
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect(),
            len: self.len,
        }
    }

    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Parity of the AND with `mask`, i.e. the GF(2) dot product.
    pub fn dot(&self, mask: &BitString) -> bool {
        debug_assert_eq!(self.len, mask.len);
        let mut acc = 0u64;
        for (a, b) in self.words.iter().zip(&mask.words) {
            acc ^= a & b;
        }
        acc.count_ones() % 2 == 1
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.get(i))
    }

    pub fn iter_bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Keep the bit positions selected by `keep` (in index order),
    /// producing a shorter string.
    pub fn project(&self, keep: &[usize]) -> BitString {
        BitString::from_bits(keep.iter().map(|&i| self.get(i)))
    }

    /// Lowercase hex encoding, one pair of digits per byte, bit `i` at
    /// bit `i % 8` of byte `i / 8`. An empty string encodes as `-`.
    pub fn to_hex(&self) -> String {
        if self.len == 0 {
            return "-".to_string();
        }
        let n_bytes = self.len.div_ceil(8);
        let mut out = String::with_capacity(2 * n_bytes);
        for byte_idx in 0..n_bytes {
            let word = self.words[byte_idx / 8];
            let byte = (word >> ((byte_idx % 8) * 8)) as u8;
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }

    pub fn from_hex(hex: &str, len: usize) -> Option<Self> {
        let mut s = Self::zeros(len);
        if hex == "-" {
            return if len == 0 { Some(s) } else { None };
        }
        if hex.len() != 2 * len.div_ceil(8) {
            return None;
        }
        for byte_idx in 0..hex.len() / 2 {
            let byte = u8::from_str_radix(&hex[2 * byte_idx..2 * byte_idx + 2], 16).ok()?;
            for bit in 0..8 {
                let i = byte_idx * 8 + bit;
                if (byte >> bit) & 1 == 1 {
                    if i >= len {
                        return None;
                    }
                    s.set(i, true);
                }
            }
        }
        Some(s)
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter_bits() {
            write!(f, "{}", if b { '1' } else { '0' })?;
        }
        Ok(())
    }
}

/// Rank of a set of rows over GF(2). Rows are not modified.
pub fn rank(rows: &[BitString]) -> usize {
    let mut basis: Vec<BitString> = Vec::new();
    for row in rows {
        let mut r = row.clone();
        for b in &basis {
            if let Some(lead) = b.iter_ones().next() {
                if r.get(lead) {
                    r.xor_assign(b);
                }
            }
        }
        if !r.is_zero() {
            basis.push(r);
            // keep basis rows reduced so the leading-one probe works
            basis.sort_by_key(|b| b.iter_ones().next().unwrap_or(usize::MAX));
        }
    }
    basis.len()
}

/// Result of Gaussian elimination on `M x = s`.
pub struct GaussSolution {
    /// One solution (free variables set to zero).
    pub particular: BitString,
    /// Basis of the nullspace of `M`; the full solution set is
    /// `particular + span(nullspace)`.
    pub nullspace: Vec<BitString>,
}

/// Solve `M x = syndrome` over GF(2) by reduced row echelon form.
///
/// Returns `None` when the system is inconsistent.
pub fn solve(rows: &[BitString], syndrome: &BitString, n_cols: usize) -> Option<GaussSolution> {
    assert_eq!(rows.len(), syndrome.len());
    // augmented rows: [row | rhs]
    let mut aug: Vec<(BitString, bool)> = rows
        .iter()
        .zip(syndrome.iter_bits())
        .map(|(r, s)| (r.clone(), s))
        .collect();

    let mut pivot_cols: Vec<usize> = Vec::new();
    let mut pivot_row = 0usize;
    for col in 0..n_cols {
        let found = (pivot_row..aug.len()).find(|&r| aug[r].0.get(col));
        let Some(found) = found else { continue };
        aug.swap(pivot_row, found);
        let (pivot, pivot_rhs) = aug[pivot_row].clone();
        for (r, row) in aug.iter_mut().enumerate() {
            if r != pivot_row && row.0.get(col) {
                row.0.xor_assign(&pivot);
                row.1 ^= pivot_rhs;
            }
        }
        pivot_cols.push(col);
        pivot_row += 1;
        if pivot_row == aug.len() {
            break;
        }
    }
    // inconsistency: zero row with nonzero rhs
    if aug[pivot_row..].iter().any(|(row, rhs)| row.is_zero() && *rhs) {
        return None;
    }

    let mut particular = BitString::zeros(n_cols);
    for (r, &col) in pivot_cols.iter().enumerate() {
        if aug[r].1 {
            particular.set(col, true);
        }
    }

    let is_pivot = {
        let mut v = vec![false; n_cols];
        for &c in &pivot_cols {
            v[c] = true;
        }
        v
    };
    let mut nullspace = Vec::new();
    for free in (0..n_cols).filter(|&c| !is_pivot[c]) {
        let mut vec = BitString::unit(n_cols, free);
        for (r, &col) in pivot_cols.iter().enumerate() {
            if aug[r].0.get(free) {
                vec.set(col, true);
            }
        }
        nullspace.push(vec);
    }
    Some(GaussSolution { particular, nullspace })
}
