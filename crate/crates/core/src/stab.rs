//! Stabilizer tableau over `n` qubits with sign tracking.

use rand::Rng;

use crate::bits::BitVec;
use crate::clifford::Clifford2;
use crate::error::{Error, Result};

/// A signed Hermitian Pauli operator `(-1)^negative · ∏ X^x Z^z` with
/// `Y = iXZ` on sites where both bits are set.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PauliGenerator {
    pub x: BitVec,
    pub z: BitVec,
    pub negative: bool,
}

impl PauliGenerator {
    pub fn identity(n: usize) -> Self {
        Self { x: BitVec::zeros(n), z: BitVec::zeros(n), negative: false }
    }

    pub fn single_z(n: usize, q: usize) -> Self {
        let mut g = Self::identity(n);
        g.z.set(q, true);
        g
    }

    pub fn single_x(n: usize, q: usize) -> Self {
        let mut g = Self::identity(n);
        g.x.set(q, true);
        g
    }

    /// Parses strings such as `"+XZI"` or `"-YY"`; qubit 0 is leftmost.
    pub fn from_str_label(s: &str) -> Result<Self> {
        let (negative, body) = match s.as_bytes().first() {
            Some(b'-') => (true, &s[1..]),
            Some(b'+') => (false, &s[1..]),
            _ => (false, s),
        };
        let n = body.chars().count();
        let mut g = Self::identity(n);
        g.negative = negative;
        for (i, c) in body.chars().enumerate() {
            match c {
                'I' | '_' => {}
                'X' => g.x.set(i, true),
                'Z' => g.z.set(i, true),
                'Y' => {
                    g.x.set(i, true);
                    g.z.set(i, true);
                }
                other => return Err(Error::InvalidInput(format!("bad Pauli letter {other:?}"))),
            }
        }
        Ok(g)
    }

    pub fn num_qubits(&self) -> usize {
        self.x.len()
    }

    pub fn is_identity(&self) -> bool {
        self.x.is_zero() && self.z.is_zero()
    }

    /// Sites where the operator acts non-trivially.
    pub fn support(&self) -> Vec<usize> {
        (0..self.num_qubits()).filter(|&i| self.x.get(i) || self.z.get(i)).collect()
    }

    pub fn commutes_with(&self, other: &PauliGenerator) -> bool {
        self.x.and_parity(&other.z) == self.z.and_parity(&other.x)
    }

    /// Local pattern on sites `(a, b)` in the [`Clifford2`] encoding.
    #[inline]
    fn pattern(&self, a: usize, b: usize) -> u8 {
        (self.x.get(a) as u8)
            | (self.z.get(a) as u8) << 1
            | (self.x.get(b) as u8) << 2
            | (self.z.get(b) as u8) << 3
    }

    #[inline]
    fn set_pattern(&mut self, a: usize, b: usize, p: u8) {
        self.x.set(a, p & 1 != 0);
        self.z.set(a, p & 2 != 0);
        self.x.set(b, p & 4 != 0);
        self.z.set(b, p & 8 != 0);
    }

    /// In-place product `self ← self · other`.
    ///
    /// The sign is exact when the two operators commute; for anticommuting
    /// pairs the product is not Hermitian and the sign bit is meaningless.
    pub fn mul_assign(&mut self, other: &PauliGenerator) {
        let mut phase = 2 * (self.negative as usize + other.negative as usize)
            + self.x.and_count(&self.z)
            + other.x.and_count(&other.z)
            + 2 * self.z.and_count(&other.x);
        self.x.xor_assign(&other.x);
        self.z.xor_assign(&other.z);
        phase += 4 * self.x.len() - self.x.and_count(&self.z);
        self.negative = (phase & 3) >> 1 == 1;
    }

    fn apply_gate(&mut self, gate: &Gate) {
        match *gate {
            Gate::H(q) => {
                let (x, z) = (self.x.get(q), self.z.get(q));
                self.negative ^= x & z;
                self.x.set(q, z);
                self.z.set(q, x);
            }
            Gate::P(q) => {
                let (x, z) = (self.x.get(q), self.z.get(q));
                self.negative ^= x & z;
                self.z.set(q, z ^ x);
            }
            Gate::Cnot(c, t) => {
                let (xc, zc, xt, zt) = (self.x.get(c), self.z.get(c), self.x.get(t), self.z.get(t));
                self.negative ^= xc & zt & !(xt ^ zc);
                self.x.set(t, xt ^ xc);
                self.z.set(c, zc ^ zt);
            }
            Gate::Swap(a, b) => {
                let p = self.pattern(a, b);
                self.set_pattern(a, b, (p >> 2) | ((p & 3) << 2));
            }
            Gate::Two(ref cl, a, b) => {
                let (q, flip) = cl.conjugate(self.pattern(a, b));
                self.set_pattern(a, b, q);
                self.negative ^= flip;
            }
        }
    }

    /// Copy keeping only the listed qubits, in order.
    pub fn restricted(&self, keep: &[usize]) -> PauliGenerator {
        PauliGenerator { x: self.x.select(keep), z: self.z.select(keep), negative: self.negative }
    }

    /// Copy padded with identity on `extra` new qubits.
    pub fn extended(&self, extra: usize) -> PauliGenerator {
        let n = self.num_qubits() + extra;
        PauliGenerator { x: self.x.resized(n), z: self.z.resized(n), negative: self.negative }
    }

    /// Bit in the interleaved column ordering used by elimination
    /// (`2q` is the X bit of qubit `q`, `2q + 1` the Z bit).
    #[inline]
    fn column(&self, col: usize) -> bool {
        if col & 1 == 0 {
            self.x.get(col >> 1)
        } else {
            self.z.get(col >> 1)
        }
    }
}

impl std::fmt::Debug for PauliGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(if self.negative { "-" } else { "+" })?;
        for i in 0..self.num_qubits() {
            let c = match (self.x.get(i), self.z.get(i)) {
                (false, false) => 'I',
                (true, false) => 'X',
                (false, true) => 'Z',
                (true, true) => 'Y',
            };
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Clifford gates accepted by [`StabilizerState::apply_gate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    H(usize),
    P(usize),
    Cnot(usize, usize),
    Swap(usize, usize),
    /// Arbitrary two-qubit Clifford on `(a, b)`; `a` plays the role of local
    /// qubit 0.
    Two(Clifford2, usize, usize),
}

impl Gate {
    pub fn targets(&self) -> Vec<usize> {
        match *self {
            Gate::H(q) | Gate::P(q) => vec![q],
            Gate::Cnot(a, b) | Gate::Swap(a, b) | Gate::Two(_, a, b) => vec![a, b],
        }
    }
}

/// Initial states understood by [`StabilizerState::new`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    PureZero,
    MaximallyMixed,
}

/// A set of qubit indices inside `[0, n)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QubitRegion {
    n: usize,
    members: Vec<usize>,
}

impl QubitRegion {
    pub fn new(n: usize, members: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut members: Vec<usize> = members.into_iter().collect();
        members.sort_unstable();
        members.dedup();
        if let Some(&bad) = members.iter().find(|&&q| q >= n) {
            return Err(Error::InvalidInput(format!("qubit {bad} outside region universe of {n}")));
        }
        Ok(Self { n, members })
    }

    pub fn empty(n: usize) -> Self {
        Self { n, members: Vec::new() }
    }

    pub fn full(n: usize) -> Self {
        Self { n, members: (0..n).collect() }
    }

    pub fn universe(&self) -> usize {
        self.n
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, q: usize) -> bool {
        self.members.binary_search(&q).is_ok()
    }

    pub fn complement(&self) -> QubitRegion {
        QubitRegion { n: self.n, members: (0..self.n).filter(|&q| !self.contains(q)).collect() }
    }

    pub fn union(&self, other: &QubitRegion) -> QubitRegion {
        let mut m = self.members.clone();
        m.extend_from_slice(&other.members);
        m.sort_unstable();
        m.dedup();
        QubitRegion { n: self.n.max(other.n), members: m }
    }

    pub fn is_disjoint(&self, other: &QubitRegion) -> bool {
        self.members.iter().all(|&q| !other.contains(q))
    }
}

/// Which of the three measurement cases occurred.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeasurementCase {
    /// `Z_q` already in the stabilizer group.
    Deterministic,
    /// `Z_q` commutes with the group but is not in it; a generator was added.
    RandomNew,
    /// One generator anticommuted with `Z_q` and was replaced.
    RandomReplace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Measurement {
    pub outcome: u8,
    pub case: MeasurementCase,
}

/// Outcome of [`StabilizerState::gaussian_eliminate`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Elimination {
    /// `(row, qubit, is_z)` for every pivot, in elimination order.
    pub pivots: Vec<(usize, usize, bool)>,
    /// Number of leading pivots that sit on prioritized qubits.
    pub priority_rank: usize,
    /// Indices of rows that ended up as the identity.
    pub zero_rows: Vec<usize>,
}

/// Generator list over `n` qubits. Rows of a valid state commute and are
/// independent; the compressed representation in [`crate::channels`] reuses
/// this type with the commutation requirement dropped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StabilizerState {
    n: usize,
    generators: Vec<PauliGenerator>,
}

impl StabilizerState {
    pub fn new(n: usize, initial: InitialState) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("a stabilizer state needs at least one qubit".into()));
        }
        let generators = match initial {
            InitialState::PureZero => (0..n).map(|q| PauliGenerator::single_z(n, q)).collect(),
            InitialState::MaximallyMixed => Vec::new(),
        };
        Ok(Self { n, generators })
    }

    /// Builds a state from explicit generators without checking commutation
    /// or independence.
    pub fn from_generators(n: usize, generators: Vec<PauliGenerator>) -> Result<Self> {
        if let Some(g) = generators.iter().find(|g| g.num_qubits() != n) {
            return Err(Error::InvalidInput(format!(
                "generator on {} qubits in a {n}-qubit state",
                g.num_qubits()
            )));
        }
        Ok(Self { n, generators })
    }

    /// Parses labels such as `["XX", "ZZ"]`.
    pub fn from_labels(labels: &[&str]) -> Result<Self> {
        let gens = labels.iter().map(|s| PauliGenerator::from_str_label(s)).collect::<Result<Vec<_>>>()?;
        let n = gens.first().map(|g| g.num_qubits()).unwrap_or(0);
        Self::from_generators(n, gens)
    }

    /// The trivial state on zero qubits, produced by tracing out everything.
    pub fn empty() -> Self {
        Self { n: 0, generators: Vec::new() }
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn generators(&self) -> &[PauliGenerator] {
        &self.generators
    }

    pub fn generators_mut(&mut self) -> &mut Vec<PauliGenerator> {
        &mut self.generators
    }

    pub fn is_pure(&self) -> bool {
        self.generators.len() == self.n
    }

    pub fn push_generator(&mut self, g: PauliGenerator) -> Result<()> {
        if g.num_qubits() != self.n {
            return Err(Error::InvalidInput("generator size mismatch".into()));
        }
        self.generators.push(g);
        Ok(())
    }

    /// Adds `extra` qubits (identity on existing generators) and returns the
    /// index of the first new qubit. New qubits carry no generators.
    pub fn append_qubits(&mut self, extra: usize) -> usize {
        let first = self.n;
        self.n += extra;
        for g in &mut self.generators {
            *g = g.extended(extra);
        }
        first
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.n {
            return Err(Error::InvalidInput(format!("qubit {q} out of range for {} qubits", self.n)));
        }
        Ok(())
    }

    pub fn apply_gate(&mut self, gate: Gate) -> Result<()> {
        let t = gate.targets();
        for &q in &t {
            self.check_qubit(q)?;
        }
        if t.len() == 2 && t[0] == t[1] {
            return Err(Error::InvalidInput(format!("repeated gate target {}", t[0])));
        }
        for g in &mut self.generators {
            g.apply_gate(&gate);
        }
        Ok(())
    }

    /// Row-reduces the generator list. Columns are visited qubit by qubit in
    /// `priority` order (X bit, then Z bit), followed by all remaining qubits
    /// in ascending order, producing reduced row echelon form in that column
    /// order. The row space is unchanged.
    pub fn gaussian_eliminate(&mut self, priority: &[usize]) -> Elimination {
        let mut seen = vec![false; self.n];
        let mut order = Vec::with_capacity(self.n);
        for &q in priority {
            if q < self.n && !seen[q] {
                seen[q] = true;
                order.push(q);
            }
        }
        let n_priority = order.len();
        order.extend((0..self.n).filter(|&q| !seen[q]));

        let mut out = Elimination::default();
        let mut rank = 0;
        for (k, &q) in order.iter().enumerate() {
            for is_z in [false, true] {
                let col = 2 * q + is_z as usize;
                let Some(p) = (rank..self.generators.len()).find(|&r| self.generators[r].column(col)) else {
                    continue;
                };
                self.generators.swap(rank, p);
                let pivot = self.generators[rank].clone();
                for (r, g) in self.generators.iter_mut().enumerate() {
                    if r != rank && g.column(col) {
                        g.mul_assign(&pivot);
                    }
                }
                out.pivots.push((rank, q, is_z));
                rank += 1;
            }
            if k + 1 == n_priority {
                out.priority_rank = rank;
            }
        }
        if n_priority == 0 {
            out.priority_rank = 0;
        }
        out.zero_rows = (0..self.generators.len()).filter(|&r| self.generators[r].is_identity()).collect();
        out
    }

    /// GF(2) rank of the generator list.
    pub fn rank(&self) -> usize {
        let mut c = self.clone();
        c.gaussian_eliminate(&[]).pivots.len()
    }

    /// Z-basis measurement of qubit `q`.
    pub fn measure_z<R: Rng + ?Sized>(&mut self, q: usize, rng: &mut R) -> Result<Measurement> {
        self.check_qubit(q)?;
        let anti: Vec<usize> = (0..self.generators.len()).filter(|&r| self.generators[r].x.get(q)).collect();
        if let Some((&first, rest)) = anti.split_first() {
            let pivot = self.generators[first].clone();
            for &r in rest {
                self.generators[r].mul_assign(&pivot);
            }
            let outcome = rng.gen::<bool>();
            let mut zq = PauliGenerator::single_z(self.n, q);
            zq.negative = outcome;
            self.generators[first] = zq;
            return Ok(Measurement { outcome: outcome as u8, case: MeasurementCase::RandomReplace });
        }
        match self.z_sign_in_group(q) {
            Some(neg) => Ok(Measurement { outcome: neg as u8, case: MeasurementCase::Deterministic }),
            None => {
                let outcome = rng.gen::<bool>();
                let mut zq = PauliGenerator::single_z(self.n, q);
                zq.negative = outcome;
                self.generators.push(zq);
                Ok(Measurement { outcome: outcome as u8, case: MeasurementCase::RandomNew })
            }
        }
    }

    /// If `±Z_q` is in the group, returns whether the sign is negative.
    fn z_sign_in_group(&self, q: usize) -> Option<bool> {
        let mut reduced = self.clone();
        let elim = reduced.gaussian_eliminate(&[]);
        let mut t = PauliGenerator::single_z(self.n, q);
        for &(row, qubit, is_z) in &elim.pivots {
            let col = 2 * qubit + is_z as usize;
            if t.column(col) {
                t.mul_assign(&reduced.generators[row]);
            }
        }
        t.is_identity().then_some(t.negative)
    }

    /// Removes every generator with support on `region` (after elimination)
    /// and drops those qubits.
    pub fn trace_out(&self, region: &QubitRegion) -> StabilizerState {
        let traced: Vec<usize> = region.members().iter().copied().filter(|&q| q < self.n).collect();
        if traced.len() == self.n {
            return StabilizerState::empty();
        }
        let mut work = self.clone();
        let elim = work.gaussian_eliminate(&traced);
        let keep: Vec<usize> = (0..self.n).filter(|q| traced.binary_search(q).is_err()).collect();
        let generators = work.generators[elim.priority_rank..]
            .iter()
            .filter(|g| !g.is_identity())
            .map(|g| g.restricted(&keep))
            .collect();
        StabilizerState { n: keep.len(), generators }
    }

    /// `|M| - |G_M|` in bits.
    pub fn entropy(&self, region: &QubitRegion) -> usize {
        if region.is_empty() {
            return 0;
        }
        let reduced = self.trace_out(&region.complement());
        let l = reduced.rank();
        region.len() - l
    }

    /// Sign-free copy (used to check that entropies ignore signs).
    pub fn with_signs_flipped(&self) -> StabilizerState {
        let mut c = self.clone();
        for g in &mut c.generators {
            g.negative = !g.negative;
        }
        c
    }

    /// True if all generators commute pairwise and are independent.
    pub fn is_valid_state(&self) -> bool {
        let l = self.generators.len();
        for i in 0..l {
            for j in i + 1..l {
                if !self.generators[i].commutes_with(&self.generators[j]) {
                    return false;
                }
            }
        }
        self.rank() == l && l <= self.n
    }
}
