//! Exterior derivatives on (d−q)-forms as operator tuples: multi-index
//! algebra, sign conventions, the d∘d = 0 sanity check, and witness
//! assembly for every basis form.
//!
//! Basis forms are indexed by strictly increasing multi-indices in
//! lexicographic order; all signs follow the single convention
//! `A^J f_I = (−1)^{ℓ+1} e_{j_ℓ}` when `I` is `J` with its ℓ-th entry
//! removed, and zero when `I ⊄ J`.

use num::traits::{One, Zero};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::operator::OperatorSpec;
use crate::scalar::{Rat, ScaledVec};
use crate::witness::{verify_fragment, Witness, WitnessFragment};

/// Strictly increasing tuple of coordinate labels in 1..=d.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(entries: Vec<usize>, d: usize) -> Result<Self> {
        if entries.iter().any(|&e| e == 0 || e > d) {
            return Err(Error::BadMultiIndex(format!(
                "{entries:?} has entries outside 1..={d}"
            )));
        }
        if entries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::BadMultiIndex(format!(
                "{entries:?} is not strictly increasing"
            )));
        }
        Ok(MultiIndex(entries))
    }

    pub fn entries(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// If `self ⊂ other` by insertion of exactly one label, returns the
    /// 1-based position of that label inside `other`.
    pub fn position_in(&self, other: &MultiIndex) -> Option<usize> {
        if self.len() + 1 != other.len() {
            return None;
        }
        let mut extra = None;
        let mut it = self.0.iter().peekable();
        for (pos, &o) in other.0.iter().enumerate() {
            if it.peek() == Some(&&o) {
                it.next();
            } else if extra.is_none() {
                extra = Some(pos + 1);
            } else {
                return None;
            }
        }
        it.next().is_none().then_some(extra).flatten()
    }
}

impl std::fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({})",
            self.0
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(",")
        )
    }
}

/// All length-`len` multi-indices over 1..=d in lexicographic order.
pub fn multi_indices(d: usize, len: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(len);
    fn rec(d: usize, len: usize, start: usize, current: &mut Vec<usize>, out: &mut Vec<MultiIndex>) {
        if current.len() == len {
            out.push(MultiIndex(current.clone()));
            return;
        }
        for next in start..=d {
            current.push(next);
            rec(d, len, next + 1, current, out);
            current.pop();
        }
    }
    rec(d, len, 1, &mut current, &mut out);
    out
}

/// Sorts a tuple of distinct labels, returning the permutation sign.
fn sort_with_sign(mut tuple: Vec<usize>) -> (Vec<usize>, i64) {
    let mut sign = 1i64;
    for i in 1..tuple.len() {
        let mut j = i;
        while j > 0 && tuple[j - 1] > tuple[j] {
            tuple.swap(j - 1, j);
            sign = -sign;
            j -= 1;
        }
    }
    (tuple, sign)
}

/// Source and target form bases for the exterior derivative on (d−q)-forms.
#[derive(Clone, Debug)]
pub struct FormFrame {
    pub d: usize,
    pub q: usize,
    /// (d−q)-multi-indices, lexicographic; dimension m.
    pub source: Vec<MultiIndex>,
    /// (d−q+1)-multi-indices, lexicographic; dimension n.
    pub target: Vec<MultiIndex>,
}

impl FormFrame {
    pub fn source_position(&self, idx: &MultiIndex) -> Option<usize> {
        self.source.iter().position(|i| i == idx)
    }

    pub fn target_position(&self, idx: &MultiIndex) -> Option<usize> {
        self.target.iter().position(|j| j == idx)
    }
}

fn check_grade(d: usize, q: usize) -> Result<()> {
    if d < 2 || q == 0 || q >= d {
        return Err(Error::Precondition(format!(
            "exterior derivative on (d-q)-forms needs 1 <= q <= d-1, got d={d}, q={q} \
             (q = d is the gradient case and never balanceable; q = 0 is trivial)"
        )));
    }
    Ok(())
}

/// Builds the exterior derivative on (d−q)-forms as an operator tuple with
/// integer entries in {−1, 0, 1}.
pub fn build_ext_operator(d: usize, q: usize) -> Result<(OperatorSpec<Rat>, FormFrame)> {
    check_grade(d, q)?;
    let source = multi_indices(d, d - q);
    let target = multi_indices(d, d - q + 1);
    let m = source.len();
    let mats = target
        .iter()
        .map(|j_idx| {
            let mut a = Mat::<Rat>::zeros(d, m);
            for (col, i_idx) in source.iter().enumerate() {
                if let Some(pos) = i_idx.position_in(j_idx) {
                    let label = j_idx.entries()[pos - 1];
                    let sign = if pos % 2 == 1 { Rat::one() } else { -Rat::one() };
                    a[(label - 1, col)] = sign;
                }
            }
            a
        })
        .collect();
    let op = OperatorSpec::new(mats)?;
    Ok((op, FormFrame { d, q, source, target }))
}

/// Composes the symbols of consecutive exterior derivatives at the given
/// frequencies and returns the largest entry magnitude; the composition
/// vanishes identically, and exactly so in the rational lane.
pub fn symbol_complex_check(d: usize, q: usize, xi_samples: &[Vec<Rat>]) -> Result<f64> {
    if q + 1 >= d {
        return Err(Error::Precondition(format!(
            "composition needs both grades: 1 <= q <= d-2, got d={d}, q={q}"
        )));
    }
    check_grade(d, q)?;
    let (outer, _) = build_ext_operator(d, q)?;
    let (inner, _) = build_ext_operator(d, q + 1)?;
    let mut max_abs = 0.0f64;
    for xi in xi_samples {
        let product = outer.fourier_symbol(xi)?.matmul(&inner.fourier_symbol(xi)?);
        if !product.is_zero() {
            max_abs = max_abs.max(product.max_abs_f64());
        }
    }
    Ok(max_abs)
}

/// Witness fragment for the basis form `f_I`, transported from the
/// reference index `(q+1,…,d)` by coordinate relabeling and re-verified.
///
/// With `c` the complement of `I`, the choices are `p = q`,
/// `Bᵏ = ±A^{sort({c_k}∪I)}`, `g_k = ±f_{sort({c_k}∪I∖{max I})}` with the
/// sorting signs, and `e = (−1)^{d−q}·e_{max I}`.
pub fn exterior_witness(d: usize, q: usize, index: &MultiIndex) -> Result<WitnessFragment<Rat>> {
    check_grade(d, q)?;
    if index.len() != d - q {
        return Err(Error::BadMultiIndex(format!(
            "fragment index must have length d-q = {}, got {index}",
            d - q
        )));
    }
    MultiIndex::new(index.entries().to_vec(), d)?;
    let (op, frame) = build_ext_operator(d, q)?;
    let frag = exterior_fragment_inner(&frame, index)?;
    // Relabeling is never trusted blind.
    let f = basis_vector(&frame, index)?;
    let report = verify_fragment(&op, &f, &frag)?;
    if !report.pass() {
        return Err(Error::WitnessRejected(format!(
            "relabeled fragment for {index} failed: {:?}",
            report.failed_names()
        )));
    }
    Ok(frag)
}

fn basis_vector(frame: &FormFrame, index: &MultiIndex) -> Result<Vec<Rat>> {
    let col = frame
        .source_position(index)
        .ok_or_else(|| Error::BadMultiIndex(format!("{index} is not a source index")))?;
    let mut f = vec![Rat::zero(); frame.source.len()];
    f[col] = Rat::one();
    Ok(f)
}

fn exterior_fragment_inner(frame: &FormFrame, index: &MultiIndex) -> Result<WitnessFragment<Rat>> {
    let (d, q) = (frame.d, frame.q);
    let n = frame.target.len();
    let m = frame.source.len();
    let p = q;
    let complement: Vec<usize> = (1..=d).filter(|l| !index.entries().contains(l)).collect();
    debug_assert_eq!(complement.len(), q);

    // Leading rows: Bᵏ = sign · A^{sort({c_k} ∪ I)}.
    let mut c = Mat::<Rat>::zeros(n, n);
    let mut used = vec![false; n];
    for (k, &label) in complement.iter().enumerate() {
        // Transport order: the inserted label comes first, as in the
        // reference tuple (k, q+1, …, d); the sorting sign depends on it.
        let mut tuple = vec![label];
        tuple.extend_from_slice(index.entries());
        let (sorted, sign) = sort_with_sign(tuple);
        let j_idx = MultiIndex(sorted);
        let col = frame
            .target_position(&j_idx)
            .expect("inserted index is a valid target index");
        c[(k, col)] = if sign >= 0 { Rat::one() } else { -Rat::one() };
        used[col] = true;
    }
    // Trailing rows: the remaining A^J in lexicographic order.
    let mut row = p;
    for (col, used) in used.iter().enumerate() {
        if !used {
            c[(row, col)] = Rat::one();
            row += 1;
        }
    }
    debug_assert_eq!(row, n);

    // e = (−1)^{d−q} · e_{max I}.
    let last = *index.entries().last().expect("q <= d-1 keeps I nonempty");
    let mut e = vec![Rat::zero(); d];
    e[last - 1] = if (d - q) % 2 == 0 {
        Rat::one()
    } else {
        -Rat::one()
    };

    // g_k = sign · f_{sort({c_k} ∪ I∖{max I})}.
    let mut g: Vec<ScaledVec<Rat>> = Vec::with_capacity(n);
    for &label in &complement {
        let mut tuple = vec![label];
        tuple.extend_from_slice(&index.entries()[..index.len() - 1]);
        let (sorted, sign) = sort_with_sign(tuple);
        let g_idx = MultiIndex(sorted);
        let col = frame
            .source_position(&g_idx)
            .expect("replaced index is a valid source index");
        let mut v = vec![Rat::zero(); m];
        v[col] = if sign >= 0 { Rat::one() } else { -Rat::one() };
        g.push(ScaledVec::plain(v));
    }
    g.extend((p..n).map(|_| ScaledVec::zeros(m)));

    Ok(WitnessFragment {
        c,
        c_rads: vec![Rat::one(); n],
        p,
        e: ScaledVec::plain(e),
        g,
    })
}

/// Full witness over the standard form basis; every fragment is verified
/// during assembly.
pub fn ext_condition_witness(d: usize, q: usize) -> Result<(OperatorSpec<Rat>, Witness<Rat>)> {
    let (op, frame) = build_ext_operator(d, q)?;
    let mut basis = Vec::with_capacity(frame.source.len());
    let mut fragments = Vec::with_capacity(frame.source.len());
    for index in &frame.source {
        basis.push(basis_vector(&frame, index)?);
        fragments.push(exterior_witness(d, q, index)?);
    }
    Ok((op, Witness { basis, fragments }))
}
