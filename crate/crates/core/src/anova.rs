//! Symmetric variance decomposition over subsets of `k` independent inputs.
//!
//! For a square-integrable `Y = h(X₁, …, X_k)` let `X̃` be a copy of the inputs
//! that shares the variables in a subset `S` with `X` and redraws the rest.
//! The coupling expectations `H_S = E[h(X) h(X̃)]` determine every ANOVA term
//! through Möbius inversion on the subset lattice:
//!
//! ```text
//! V_S = Σ_{T ⊆ S} (−1)^{|S|−|T|} H_T
//! ```
//!
//! # Mask convention
//!
//! A subset is a bit mask; bit `j` set means variable `j` is **shared** between
//! the base draw and the copy. Masks print as bit strings with character `j`
//! holding bit `j`, so for the variables `(P, X, ε)` the string `"100"` is the
//! parameter-only term `V_P` and `"111"` is the full interaction.

use std::fmt;

use crate::error::AnovaError;

pub const MAX_VARIABLES: usize = 16;

/// A subset of the variables, as a bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubsetIndex(pub u32);

impl SubsetIndex {
    pub const EMPTY: SubsetIndex = SubsetIndex(0);

    pub fn full(k: usize) -> Self {
        SubsetIndex(((1u64 << k) - 1) as u32)
    }

    pub fn contains(self, var: usize) -> bool {
        self.0 >> var & 1 == 1
    }

    pub fn len(self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: SubsetIndex) -> bool {
        self.0 & !other.0 == 0
    }

    /// All subsets of `self`, including the empty set and `self`.
    pub fn subsets(self) -> impl Iterator<Item = SubsetIndex> {
        let full = self.0;
        let mut next = Some(full);
        std::iter::from_fn(move || {
            let cur = next?;
            next = if cur == 0 { None } else { Some((cur - 1) & full) };
            Some(SubsetIndex(cur))
        })
    }

    /// Bit string with character `j` holding bit `j`.
    pub fn to_bits(self, k: usize) -> String {
        (0..k).map(|j| if self.contains(j) { '1' } else { '0' }).collect()
    }

    pub fn parse_bits(s: &str) -> Result<Self, AnovaError> {
        if s.is_empty() || s.len() > MAX_VARIABLES {
            return Err(AnovaError::BadMask(s.to_string()));
        }
        let mut mask = 0u32;
        for (j, c) in s.chars().enumerate() {
            match c {
                '1' => mask |= 1 << j,
                '0' => {}
                _ => return Err(AnovaError::BadMask(s.to_string())),
            }
        }
        Ok(SubsetIndex(mask))
    }
}

fn check_arity(k: usize) -> Result<(), AnovaError> {
    if k == 0 || k > MAX_VARIABLES {
        Err(AnovaError::BadArity(k))
    } else {
        Ok(())
    }
}

/// Estimated coupling expectations `H_S` with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct HTable {
    k: usize,
    values: Vec<Option<f64>>,
    std_errors: Vec<f64>,
    /// `E[Y²]`, if known, for the unexplained remainder.
    pub total: Option<f64>,
}

impl HTable {
    /// An empty table for `k` variables.
    pub fn new(k: usize) -> Result<Self, AnovaError> {
        check_arity(k)?;
        Ok(Self {
            k,
            values: vec![None; 1 << k],
            std_errors: vec![0.0; 1 << k],
            total: None,
        })
    }

    /// A complete table; `values[mask]` is `H_mask`.
    pub fn from_values(k: usize, values: &[f64], std_errors: Option<&[f64]>) -> Result<Self, AnovaError> {
        let mut h = Self::new(k)?;
        if values.len() != 1 << k {
            return Err(AnovaError::ArityMismatch(k, values.len().trailing_zeros() as usize));
        }
        for (i, &v) in values.iter().enumerate() {
            let se = std_errors.map_or(0.0, |s| s[i]);
            h.set(SubsetIndex(i as u32), v, se);
        }
        Ok(h)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn set(&mut self, mask: SubsetIndex, value: f64, std_error: f64) {
        self.values[mask.0 as usize] = Some(value);
        self.std_errors[mask.0 as usize] = std_error;
    }

    pub fn get(&self, mask: SubsetIndex) -> Result<f64, AnovaError> {
        self.values
            .get(mask.0 as usize)
            .copied()
            .flatten()
            .ok_or_else(|| AnovaError::MissingEntry(mask.to_bits(self.k)))
    }

    pub fn std_error(&self, mask: SubsetIndex) -> f64 {
        self.std_errors[mask.0 as usize]
    }

    pub fn masks(&self) -> impl Iterator<Item = SubsetIndex> {
        (0..1u32 << self.k).map(SubsetIndex)
    }

    /// Relabels the variables: variable `j` becomes variable `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, AnovaError> {
        if perm.len() != self.k {
            return Err(AnovaError::ArityMismatch(self.k, perm.len()));
        }
        let mut out = Self::new(self.k)?;
        out.total = self.total;
        for m in self.masks() {
            let target = permute_mask(m, perm);
            out.values[target.0 as usize] = self.values[m.0 as usize];
            out.std_errors[target.0 as usize] = self.std_errors[m.0 as usize];
        }
        Ok(out)
    }
}

pub fn permute_mask(m: SubsetIndex, perm: &[usize]) -> SubsetIndex {
    let mut out = 0u32;
    for (j, &p) in perm.iter().enumerate() {
        if m.contains(j) {
            out |= 1 << p;
        }
    }
    SubsetIndex(out)
}

/// ANOVA terms `V_S` for every nonempty subset.
#[derive(Debug, Clone, PartialEq)]
pub struct VarDecomp {
    k: usize,
    terms: Vec<f64>,
    std_errors: Vec<f64>,
    /// `E[Y²] − H_full`: variance not explained by the inputs.
    pub remainder: Option<f64>,
}

impl VarDecomp {
    pub fn k(&self) -> usize {
        self.k
    }

    /// `V_S`; the empty subset has no term and returns 0.
    pub fn get(&self, mask: SubsetIndex) -> f64 {
        self.terms[mask.0 as usize]
    }

    pub fn std_error(&self, mask: SubsetIndex) -> f64 {
        self.std_errors[mask.0 as usize]
    }

    pub fn set(&mut self, mask: SubsetIndex, value: f64) {
        self.terms[mask.0 as usize] = value;
    }

    pub fn set_std_error(&mut self, mask: SubsetIndex, std_error: f64) {
        self.std_errors[mask.0 as usize] = std_error;
    }

    /// Nonempty subsets ordered by size, then by mask.
    pub fn subsets(&self) -> Vec<SubsetIndex> {
        let mut out: Vec<SubsetIndex> = (1..1u32 << self.k).map(SubsetIndex).collect();
        out.sort_by_key(|m| (m.len(), m.0));
        out
    }

    /// Sum of all terms, `H_full − H_∅`.
    pub fn explained(&self) -> f64 {
        self.terms.iter().sum()
    }
}

impl fmt::Display for VarDecomp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in self.subsets() {
            writeln!(f, "{} {:>12.6} ± {:.2e}", m.to_bits(self.k), self.get(m), self.std_error(m))?;
        }
        Ok(())
    }
}

/// Möbius inversion of a complete H-table. Standard errors ignore the
/// correlation between entries and are an upper bound for positively
/// correlated estimates.
///
/// ```
/// use fgdd::anova::{mobius_variance, HTable, SubsetIndex};
///
/// // Y = X₁ + X₂
/// let h = HTable::from_values(2, &[0.0, 1.0, 1.0, 2.0], None).unwrap();
/// let v = mobius_variance(&h).unwrap();
/// assert_eq!(v.get(SubsetIndex(0b01)), 1.0);
/// assert_eq!(v.get(SubsetIndex(0b10)), 1.0);
/// assert_eq!(v.get(SubsetIndex(0b11)), 0.0);
/// ```
pub fn mobius_variance(h: &HTable) -> Result<VarDecomp, AnovaError> {
    let n = 1usize << h.k;
    let mut terms = vec![0.0; n];
    let mut std_errors = vec![0.0; n];
    for i in 1..n as u32 {
        let s = SubsetIndex(i);
        let mut v = 0.0;
        let mut var = 0.0;
        for t in s.subsets() {
            let sign = if (s.len() - t.len()).is_multiple_of(2) { 1.0 } else { -1.0 };
            v += sign * h.get(t)?;
            var += h.std_error(t).powi(2);
        }
        terms[i as usize] = v;
        std_errors[i as usize] = var.sqrt();
    }
    let full = h.get(SubsetIndex::full(h.k))?;
    Ok(VarDecomp {
        k: h.k,
        terms,
        std_errors,
        remainder: h.total.map(|t| t - full),
    })
}

/// Largest violation of `Σ_{s ⊆ S} V_s = H_S − H_∅` over all `S`.
pub fn subset_sum_check(v: &VarDecomp, h: &HTable) -> Result<f64, AnovaError> {
    if v.k != h.k {
        return Err(AnovaError::ArityMismatch(v.k, h.k));
    }
    let h0 = h.get(SubsetIndex::EMPTY)?;
    let mut worst: f64 = 0.0;
    for s in h.masks() {
        let sum: f64 = s.subsets().filter(|t| !t.is_empty()).map(|t| v.get(t)).sum();
        worst = worst.max((sum - (h.get(s)? - h0)).abs());
    }
    Ok(worst)
}

/// Pairs `(S, S′)` with `S ⊂ S′` whose entries are out of order by more than
/// three combined standard errors.
pub fn monotonicity_check(h: &HTable) -> Result<Vec<(SubsetIndex, SubsetIndex)>, AnovaError> {
    let mut out = Vec::new();
    for a in h.masks() {
        for b in h.masks() {
            if a != b && a.is_subset_of(b) {
                let se = (h.std_error(a).powi(2) + h.std_error(b).powi(2)).sqrt();
                if h.get(a)? > h.get(b)? + 3.0 * se {
                    out.push((a, b));
                }
            }
        }
    }
    Ok(out)
}

/// Subsets whose term is below −3 standard errors.
pub fn nonnegativity_check(v: &VarDecomp) -> Vec<SubsetIndex> {
    v.subsets()
        .into_iter()
        .filter(|&m| v.get(m) < -3.0 * v.std_error(m))
        .collect()
}
