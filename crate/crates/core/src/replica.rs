//! Permutation calculus for the replica mapping: inner products of
//! permutation states, Möbius numbers, leading-order Weingarten weights,
//! bond weights and symmetry checks.

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element of the symmetric group S(Q) as an image array.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Permutation {
    image: Vec<usize>,
}

impl Permutation {
    pub fn new(image: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; image.len()];
        for &i in &image {
            if i >= image.len() || seen[i] {
                return Err(Error::InvalidInput(format!("{image:?} is not a bijection")));
            }
            seen[i] = true;
        }
        Ok(Self { image })
    }

    pub fn identity(q: usize) -> Self {
        Self { image: (0..q).collect() }
    }

    /// Transposition of `a` and `b` in S(q).
    pub fn transposition(q: usize, a: usize, b: usize) -> Self {
        let mut p = Self::identity(q);
        p.image.swap(a, b);
        p
    }

    /// Builds a permutation from disjoint cycles.
    pub fn from_cycles(q: usize, cycles: &[&[usize]]) -> Result<Self> {
        let mut image: Vec<usize> = (0..q).collect();
        for c in cycles {
            for (i, &a) in c.iter().enumerate() {
                if a >= q {
                    return Err(Error::InvalidInput(format!("cycle entry {a} outside S({q})")));
                }
                image[a] = c[(i + 1) % c.len()];
            }
        }
        Self::new(image)
    }

    /// `n`-cycles on `k` consecutive blocks of the first `nk` replicas,
    /// identity on the remaining one.
    pub fn block_cyclic(n: usize, k: usize) -> Self {
        let q = n * k + 1;
        let mut image: Vec<usize> = (0..q).collect();
        for b in 0..k {
            for i in 0..n {
                image[b * n + i] = b * n + (i + 1) % n;
            }
        }
        Self { image }
    }

    pub fn degree(&self) -> usize {
        self.image.len()
    }

    pub fn image(&self) -> &[usize] {
        &self.image
    }

    pub fn apply(&self, i: usize) -> usize {
        self.image[i]
    }

    /// `self ∘ other`, i.e. `other` first.
    pub fn compose(&self, other: &Permutation) -> Permutation {
        assert_eq!(self.degree(), other.degree(), "degree mismatch");
        Permutation { image: other.image.iter().map(|&i| self.image[i]).collect() }
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.degree()];
        for (i, &j) in self.image.iter().enumerate() {
            inv[j] = i;
        }
        Permutation { image: inv }
    }

    pub fn is_identity(&self) -> bool {
        self.image.iter().enumerate().all(|(i, &j)| i == j)
    }

    /// Cycle lengths in non-increasing order, fixed points included.
    pub fn cycle_type(&self) -> Vec<usize> {
        let mut seen = vec![false; self.degree()];
        let mut out = Vec::new();
        for s in 0..self.degree() {
            if seen[s] {
                continue;
            }
            let mut len = 0;
            let mut i = s;
            while !seen[i] {
                seen[i] = true;
                i = self.image[i];
                len += 1;
            }
            out.push(len);
        }
        out.sort_unstable_by(|a, b| b.cmp(a));
        out
    }

    pub fn cycle_count(&self) -> usize {
        self.cycle_type().len()
    }

    /// All elements of S(q) in lexicographic order of images.
    pub fn all(q: usize) -> Vec<Permutation> {
        let mut out = Vec::new();
        let mut cur: Vec<usize> = (0..q).collect();
        loop {
            out.push(Permutation { image: cur.clone() });
            // next lexicographic permutation
            let Some(i) = (1..q).rev().find(|&i| cur[i - 1] < cur[i]) else {
                return out;
            };
            let j = (i..q).rev().find(|&j| cur[j] > cur[i - 1]).expect("successor exists");
            cur.swap(i - 1, j);
            cur[i..].reverse();
        }
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.image)
    }
}

impl fmt::Display for Permutation {
    /// Cycle notation without fixed points, `e` for the identity.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_identity() {
            return f.write_str("e");
        }
        let mut seen = vec![false; self.degree()];
        for s in 0..self.degree() {
            if seen[s] || self.image[s] == s {
                continue;
            }
            f.write_str("(")?;
            let mut i = s;
            let mut first = true;
            while !seen[i] {
                seen[i] = true;
                if !first {
                    f.write_str(" ")?;
                }
                write!(f, "{i}")?;
                first = false;
                i = self.image[i];
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

pub fn cycle_count(g: &Permutation) -> usize {
    g.cycle_count()
}

fn pow(d: u64, e: usize) -> u64 {
    d.checked_pow(e as u32).expect("integer overflow in d^e")
}

/// `⟨σ|τ⟩ = d^{|σ τ^{-1}|}`.
pub fn inner(sigma: &Permutation, tau: &Permutation, d: u64) -> Result<u64> {
    if sigma.degree() != tau.degree() {
        return Err(Error::InvalidInput("replica counts differ".into()));
    }
    Ok(pow(d, sigma.compose(&tau.inverse()).cycle_count()))
}

fn catalan(n: usize) -> i64 {
    let mut c: i64 = 1;
    for i in 0..n as i64 {
        c = c * 2 * (2 * i + 1) / (i + 2);
    }
    c
}

/// Product over cycles of length `ℓ` of `(-1)^{ℓ-1} Catalan(ℓ-1)`.
pub fn moebius(g: &Permutation) -> i64 {
    g.cycle_type().iter().map(|&l| if l % 2 == 1 { catalan(l - 1) } else { -catalan(l - 1) }).product()
}

/// `Moeb(g) / d^{4Q - 2|g|}` as an exact fraction.
pub fn weingarten_leading(g: &Permutation, d: u64, q: usize) -> Result<Ratio<i128>> {
    if g.degree() != q {
        return Err(Error::InvalidInput(format!("permutation of degree {} used with Q = {q}", g.degree())));
    }
    if d < 2 {
        return Err(Error::InvalidInput("local dimension must be at least 2".into()));
    }
    let e = 4 * q - 2 * g.cycle_count();
    let den = (d as i128).checked_pow(e as u32).ok_or_else(|| Error::InvalidInput("d^(4Q) overflows".into()))?;
    Ok(Ratio::new(moebius(g) as i128, den))
}

/// Replica count, local dimension and the distinguished element `ℂ`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaParams {
    pub q: usize,
    pub d: u64,
    pub cyclic: Permutation,
}

impl ReplicaParams {
    /// `ℂ` made of `k` disjoint `n`-cycles, `Q = nk + 1`.
    pub fn block(n: usize, k: usize, d: u64) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::InvalidInput("n and k must be positive".into()));
        }
        Self::with_cyclic(Permutation::block_cyclic(n, k), d)
    }

    /// Arbitrary choice of `ℂ` (e.g. the transposition at `Q = 2`).
    pub fn with_cyclic(cyclic: Permutation, d: u64) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidInput("local dimension must be at least 2".into()));
        }
        Ok(Self { q: cyclic.degree(), d, cyclic })
    }

    pub fn identity(&self) -> Permutation {
        Permutation::identity(self.q)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BondKind {
    Reset,
    Depolarizing,
    DephasingAsymptotic,
}

impl BondKind {
    pub const ALL: [BondKind; 3] = [BondKind::Reset, BondKind::Depolarizing, BondKind::DephasingAsymptotic];
}

fn check_prob(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidInput(format!("{name} = {v}: probability out of range")));
    }
    Ok(())
}

/// Horizontal bond weight with total channel rate `q` split evenly between
/// the `𝕀` (noise) and `ℂ` (QE) fields.
pub fn bond_weight(sigma: &Permutation, tau: &Permutation, params: &ReplicaParams, p: f64, q: f64, kind: BondKind) -> Result<f64> {
    bond_weight_fields(sigma, tau, params, p, q / 2.0, q / 2.0, kind)
}

/// Bond weight with separate field strengths: `q_n` multiplies the `𝕀`
/// terms and `q_e` the `ℂ` terms.
pub fn bond_weight_fields(
    sigma: &Permutation,
    tau: &Permutation,
    params: &ReplicaParams,
    p: f64,
    q_n: f64,
    q_e: f64,
    kind: BondKind,
) -> Result<f64> {
    if sigma.degree() != params.q || tau.degree() != params.q {
        return Err(Error::InvalidInput(format!(
            "permutations of degree {}/{} used with Q = {}",
            sigma.degree(),
            tau.degree(),
            params.q
        )));
    }
    check_prob("p", p)?;
    check_prob("q_n", q_n)?;
    check_prob("q_e", q_e)?;
    check_prob("q_n + q_e", q_n + q_e)?;
    let d = params.d;
    let id = params.identity();
    let c = &params.cyclic;
    let ip = |a: &Permutation, b: &Permutation| inner(a, b, d).map(|v| v as f64);
    let st = ip(sigma, tau)?;
    let s_c = ip(sigma, c)?;
    let s_i = ip(sigma, &id)?;
    let df = d as f64;
    let q = q_n + q_e;
    let w = match kind {
        BondKind::Reset => (1.0 - p) * (1.0 - q) * st + (1.0 - p) * (q_e * s_c + q_n * s_i) + p * df,
        BondKind::Depolarizing => {
            let c_t = ip(c, tau)?;
            let i_t = ip(&id, tau)?;
            (1.0 - p) * (1.0 - q) * st
                + (1.0 - p) * (q_e * s_c * c_t + q_n * s_i * i_t)
                + df * p * (q_n * s_i + q_e * s_c)
                + p * (1.0 - q) * df
        }
        BondKind::DephasingAsymptotic => {
            let delta = if sigma == tau { 1.0 } else { 0.0 };
            (1.0 - p) * (1.0 - q) * st + (1.0 - p) * (q_e * s_c + q_n * s_i) * delta + p * df
        }
    };
    Ok(w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DephasingOperator {
    N,
    QOp,
}

/// Number of index assignments `i ∈ [d]^Q` fixed by both permutations.
fn fixed_assignments(a: &Permutation, b: &Permutation, d: u64) -> u64 {
    let q = a.degree();
    let mut idx = vec![0u64; q];
    let mut count = 0;
    loop {
        if (0..q).all(|l| idx[l] == idx[a.apply(l)] && idx[l] == idx[b.apply(l)]) {
            count += 1;
        }
        let mut pos = 0;
        loop {
            if pos == q {
                return count;
            }
            idx[pos] += 1;
            if idx[pos] < d {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// `⟨σ|𝒩|τ⟩` or `⟨σ|𝒬|τ⟩` by explicit enumeration of the delta-constrained
/// index sum.
pub fn dephasing_exact_inner(sigma: &Permutation, tau: &Permutation, params: &ReplicaParams, which: DephasingOperator) -> Result<u64> {
    if sigma.degree() != params.q || tau.degree() != params.q {
        return Err(Error::InvalidInput("replica counts differ".into()));
    }
    let size = (params.d as f64).powi(params.q as i32);
    if size > (1u64 << 20) as f64 {
        return Err(Error::InvalidInput(format!(
            "enumeration of d^Q = {size} assignments is too large; use a smaller Q or d"
        )));
    }
    Ok(match which {
        DephasingOperator::N => fixed_assignments(sigma, tau, params.d),
        DephasingOperator::QOp => {
            let ci = params.cyclic.inverse();
            fixed_assignments(&sigma.compose(&ci), &tau.compose(&ci), params.d)
        }
    })
}

/// True when some cycle of `tau` is not contained in a single cycle of
/// `sigma`, i.e. the cycle partition of `tau` does not refine that of `sigma`.
pub fn breaks_cycles(sigma: &Permutation, tau: &Permutation) -> bool {
    let mut label = vec![usize::MAX; sigma.degree()];
    for s in 0..sigma.degree() {
        if label[s] != usize::MAX {
            continue;
        }
        let mut i = s;
        while label[i] == usize::MAX {
            label[i] = s;
            i = sigma.apply(i);
        }
    }
    (0..tau.degree()).any(|i| label[i] != label[tau.apply(i)])
}

/// `{g : g ℂ = ℂ g}`.
pub fn centralizer(c: &Permutation) -> Vec<Permutation> {
    Permutation::all(c.degree()).into_iter().filter(|g| g.compose(c) == c.compose(g)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyResult {
    pub family: String,
    pub checked: usize,
    pub violations: usize,
    pub pass: bool,
    /// First violating `(σ, τ)` pair, in image notation.
    pub example: Option<(Vec<usize>, Vec<usize>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub q: usize,
    pub d: u64,
    pub cyclic: Vec<usize>,
    pub kind: BondKind,
    pub p: f64,
    pub q_n: f64,
    pub q_e: f64,
    pub families: Vec<FamilyResult>,
}

impl SymmetryReport {
    pub fn family(&self, name: &str) -> Option<&FamilyResult> {
        self.families.iter().find(|f| f.family == name)
    }

    pub fn all_pass(&self) -> bool {
        self.families.iter().all(|f| f.pass)
    }
}

impl fmt::Display for SymmetryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "Q={} d={} C={:?} kind={:?} p={} q_n={} q_e={}",
            self.q, self.d, self.cyclic, self.kind, self.p, self.q_n, self.q_e
        )?;
        writeln!(f, "{:<28} {:>8} {:>10}  result", "family", "checked", "violations")?;
        for r in &self.families {
            writeln!(
                f,
                "{:<28} {:>8} {:>10}  {}",
                r.family,
                r.checked,
                r.violations,
                if r.pass { "pass" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

pub const FAMILY_CENTRALIZER: &str = "centralizer_conjugation";
pub const FAMILY_INVERSE: &str = "inverse";
pub const FAMILY_INVERSE_C: &str = "inverse_times_c";

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Checks bond-weight invariance under the centralizer of `ℂ`, under
/// `σ → σ^{-1}` and, when `q_n = q_e`, under `σ → σ^{-1}ℂ`.
pub fn symmetry_check(params: &ReplicaParams, kind: BondKind, p: f64, q_n: f64, q_e: f64) -> Result<SymmetryReport> {
    if params.q > 5 {
        return Err(Error::InvalidInput("exhaustive symmetry checks need Q <= 5".into()));
    }
    let perms = Permutation::all(params.q);
    let mut table = Vec::with_capacity(perms.len() * perms.len());
    for s in &perms {
        for t in &perms {
            table.push(bond_weight_fields(s, t, params, p, q_n, q_e, kind)?);
        }
    }
    let index = |g: &Permutation| perms.binary_search(g).expect("enumerated");
    let w = |s: &Permutation, t: &Permutation| table[index(s) * perms.len() + index(t)];
    let run = |name: &str, maps: &[&dyn Fn(&Permutation) -> Permutation]| {
        let mut res = FamilyResult { family: name.into(), checked: 0, violations: 0, pass: true, example: None };
        for m in maps {
            for s in &perms {
                for t in &perms {
                    res.checked += 1;
                    if !close(w(&m(s), &m(t)), w(s, t)) {
                        res.violations += 1;
                        res.example.get_or_insert_with(|| (s.image().to_vec(), t.image().to_vec()));
                    }
                }
            }
        }
        res.pass = res.violations == 0;
        res
    };
    let cent = centralizer(&params.cyclic);
    let conj: Vec<Box<dyn Fn(&Permutation) -> Permutation>> = cent
        .iter()
        .map(|g| {
            let g = g.clone();
            let gi = g.inverse();
            Box::new(move |s: &Permutation| g.compose(s).compose(&gi)) as Box<dyn Fn(&Permutation) -> Permutation>
        })
        .collect();
    let conj_refs: Vec<&dyn Fn(&Permutation) -> Permutation> = conj.iter().map(|b| b.as_ref()).collect();
    let mut families = vec![run(FAMILY_CENTRALIZER, &conj_refs)];
    families.push(run(FAMILY_INVERSE, &[&|s: &Permutation| s.inverse()]));
    let c = params.cyclic.clone();
    let inv_c = move |s: &Permutation| s.inverse().compose(&c);
    families.push(run(FAMILY_INVERSE_C, &[&inv_c]));
    Ok(SymmetryReport {
        q: params.q,
        d: params.d,
        cyclic: params.cyclic.image().to_vec(),
        kind,
        p,
        q_n,
        q_e,
        families,
    })
}
