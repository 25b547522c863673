//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use qe_mipt::channels::{ChannelKind, ChannelRole, ChannelTag, MonitoredState};
use qe_mipt::clifford::{two_qubit_clifford_group, Elementary};
use qe_mipt::stab::{Gate, InitialState, PauliGenerator, QubitRegion, StabilizerState};
use rand::Rng;

// ---------------------------------------------------------------------------
// dense statevector

/// Pure state on `nq` qubits; qubit `i` is bit `i` of the basis index.
#[derive(Clone, Debug)]
pub struct Dense {
    pub nq: usize,
    pub amp: Vec<C64>,
}

const FRAC: f64 = std::f64::consts::FRAC_1_SQRT_2;

impl Dense {
    pub fn zero(nq: usize) -> Self {
        let mut amp = vec![C64::new(0.0, 0.0); 1 << nq];
        amp[0] = C64::new(1.0, 0.0);
        Self { nq, amp }
    }

    /// Appends a qubit in `|0⟩` and returns its index.
    pub fn add_qubit(&mut self) -> usize {
        self.amp.resize(self.amp.len() * 2, C64::new(0.0, 0.0));
        self.nq += 1;
        self.nq - 1
    }

    fn apply_1q(&mut self, q: usize, m: [[C64; 2]; 2]) {
        let bit = 1 << q;
        for i in 0..self.amp.len() {
            if i & bit == 0 {
                let (a, b) = (self.amp[i], self.amp[i | bit]);
                self.amp[i] = m[0][0] * a + m[0][1] * b;
                self.amp[i | bit] = m[1][0] * a + m[1][1] * b;
            }
        }
    }

    pub fn h(&mut self, q: usize) {
        let r = C64::new(FRAC, 0.0);
        self.apply_1q(q, [[r, r], [r, -r]]);
    }

    pub fn s(&mut self, q: usize) {
        let (o, z) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0));
        self.apply_1q(q, [[o, z], [z, C64::new(0.0, 1.0)]]);
    }

    pub fn cnot(&mut self, c: usize, t: usize) {
        let (cb, tb) = (1 << c, 1 << t);
        for i in 0..self.amp.len() {
            if i & cb != 0 && i & tb == 0 {
                self.amp.swap(i, i | tb);
            }
        }
    }

    pub fn swap(&mut self, a: usize, b: usize) {
        let (ab, bb) = (1 << a, 1 << b);
        for i in 0..self.amp.len() {
            if i & ab != 0 && i & bb == 0 {
                self.amp.swap(i, (i & !ab) | bb);
            }
        }
    }

    pub fn elementary(&mut self, e: Elementary, a: usize, b: usize) {
        let site = |k: usize| if k == 0 { a } else { b };
        match e {
            Elementary::H(k) => self.h(site(k)),
            Elementary::P(k) => self.s(site(k)),
            Elementary::Cnot(c, t) => self.cnot(site(c), site(t)),
            Elementary::Swap => self.swap(a, b),
        }
    }

    /// Projective Z measurement with Born-rule outcome.
    pub fn measure_z<R: Rng>(&mut self, q: usize, rng: &mut R) -> u8 {
        let bit = 1 << q;
        let p1: f64 = self.amp.iter().enumerate().filter(|(i, _)| i & bit != 0).map(|(_, a)| a.norm_sqr()).sum();
        let outcome = if p1 < 1e-12 {
            0
        } else if p1 > 1.0 - 1e-12 {
            1
        } else {
            (rng.gen::<f64>() < p1) as u8
        };
        let norm = if outcome == 1 { p1 } else { 1.0 - p1 }.sqrt();
        for (i, a) in self.amp.iter_mut().enumerate() {
            if ((i & bit != 0) as u8) != outcome {
                *a = C64::new(0.0, 0.0);
            } else {
                *a /= norm;
            }
        }
        outcome
    }

    /// Von Neumann entropy (bits) of the listed qubits.
    pub fn entropy(&self, set: &[usize]) -> f64 {
        let all: Vec<usize> = (0..self.nq).collect();
        let comp: Vec<usize> = all.iter().copied().filter(|q| !set.contains(q)).collect();
        let part: &[usize] = if set.len() <= comp.len() { set } else { &comp };
        if part.is_empty() {
            return 0.0;
        }
        let rest: Vec<usize> = all.iter().copied().filter(|q| !part.contains(q)).collect();
        let dk = 1 << part.len();
        let dr = 1 << rest.len();
        let mut m = DMatrix::<C64>::zeros(dk, dr);
        for (i, a) in self.amp.iter().enumerate() {
            let r: usize = part.iter().enumerate().map(|(k, &q)| ((i >> q) & 1) << k).sum();
            let c: usize = rest.iter().enumerate().map(|(k, &q)| ((i >> q) & 1) << k).sum();
            m[(r, c)] = *a;
        }
        m.singular_values().iter().map(|s| s * s).filter(|&l| l > 1e-12).map(|l| -l * l.log2()).sum()
    }
}

/// Rounds an entropy that must be an integer, panicking if it is not.
pub fn integer_entropy(s: f64) -> i64 {
    let r = s.round();
    assert!((s - r).abs() < 1e-8, "non-integer entropy {s}");
    r as i64
}

// ---------------------------------------------------------------------------
// circuits

#[derive(Clone, Copy, Debug)]
pub enum Op {
    /// Element index of the two-qubit Clifford group on `(a, b)`.
    Gate(usize, usize, usize),
    Measure(usize),
    Channel(usize, ChannelKind),
}

#[derive(Clone, Debug)]
pub struct RandomCircuit {
    pub n: usize,
    pub initial: InitialState,
    pub ops: Vec<Op>,
}

impl RandomCircuit {
    /// Qubits needed by the dense simulation (system, references for a
    /// mixed start, and every dilation qubit).
    pub fn dense_qubits(&self) -> usize {
        let refs = if self.initial == InitialState::MaximallyMixed { self.n } else { 0 };
        self.n + refs + self.ops.iter().map(|o| if let Op::Channel(_, k) = o { k.tag.fresh_qubits() } else { 0 }).sum::<usize>()
    }

    /// `n ≤ max_n` qubits, up to `max_events` measurement/noise/QE events
    /// interleaved with random gates, dense width at most `max_dense`.
    pub fn random<R: Rng>(rng: &mut R, max_n: usize, max_events: usize, max_dense: usize) -> Self {
        let n = rng.gen_range(2..=max_n);
        let initial = if 2 * n + 2 <= max_dense && rng.gen_bool(0.3) {
            InitialState::MaximallyMixed
        } else {
            InitialState::PureZero
        };
        let mut c = RandomCircuit { n, initial, ops: Vec::new() };
        let events = rng.gen_range(1..=max_events);
        let group = two_qubit_clifford_group();
        for _ in 0..events {
            for _ in 0..rng.gen_range(0..=3) {
                let a = rng.gen_range(0..n);
                let mut b = rng.gen_range(0..n - 1);
                if b >= a {
                    b += 1;
                }
                c.ops.push(Op::Gate(group.sample_index(rng), a, b));
            }
            let site = rng.gen_range(0..n);
            let tag = ChannelTag::ALL[rng.gen_range(0..3)];
            let room = max_dense - c.dense_qubits();
            let op = match rng.gen_range(0..3) {
                0 => Op::Measure(site),
                r if tag.fresh_qubits() <= room => {
                    Op::Channel(site, if r == 1 { ChannelKind::noise(tag) } else { ChannelKind::qe(tag) })
                }
                _ => Op::Measure(site),
            };
            c.ops.push(op);
        }
        c
    }

    pub fn run<S: MonitoredState>(&self, state: &mut S) {
        let group = two_qubit_clifford_group();
        for op in &self.ops {
            match *op {
                Op::Gate(idx, a, b) => state.apply_clifford(group.get(idx), a, b),
                Op::Measure(q) => state.measure(q),
                Op::Channel(s, k) => state.apply_channel(s, k),
            }
        }
    }
}

/// All contiguous regions `[i, j)` of `n` sites, including the empty one.
pub fn intervals(n: usize) -> Vec<QubitRegion> {
    let mut out = vec![QubitRegion::empty(n)];
    for i in 0..n {
        for j in i + 1..=n {
            out.push(QubitRegion::new(n, i..j).unwrap());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// explicit-ancilla stabilizer oracle

/// Full tableau of system plus every retained ancilla; environment qubits
/// are traced out right after each noise event.
pub struct Explicit {
    pub state: StabilizerState,
    pub n: usize,
    pub ancillas: Vec<usize>,
}

/// Appends the dilation register for `tag`, couples it to `s` and returns
/// the indices of the new qubits.
pub fn dilate(state: &mut StabilizerState, s: usize, tag: ChannelTag) -> Vec<usize> {
    let k = if tag == ChannelTag::Depolarizing { 2 } else { 1 };
    let first = state.append_qubits(k);
    let total = state.num_qubits();
    match tag {
        ChannelTag::Dephasing => {
            state.push_generator(PauliGenerator::single_z(total, first)).unwrap();
            state.apply_gate(Gate::Cnot(s, first)).unwrap();
        }
        ChannelTag::Resetting => {
            state.push_generator(PauliGenerator::single_z(total, first)).unwrap();
            state.apply_gate(Gate::Swap(s, first)).unwrap();
        }
        ChannelTag::Depolarizing => {
            let mut xx = PauliGenerator::identity(total);
            xx.x.set(first, true);
            xx.x.set(first + 1, true);
            let mut zz = PauliGenerator::identity(total);
            zz.z.set(first, true);
            zz.z.set(first + 1, true);
            state.push_generator(xx).unwrap();
            state.push_generator(zz).unwrap();
            state.apply_gate(Gate::Swap(s, first)).unwrap();
        }
    }
    (first..first + k).collect()
}

impl Explicit {
    pub fn new(n: usize, initial: InitialState) -> Self {
        Self { state: StabilizerState::new(n, initial).unwrap(), n, ancillas: Vec::new() }
    }

    pub fn run<R: Rng>(&mut self, c: &RandomCircuit, rng: &mut R) {
        let group = two_qubit_clifford_group();
        for op in &c.ops {
            match *op {
                Op::Gate(idx, a, b) => self.state.apply_gate(Gate::Two(*group.get(idx), a, b)).unwrap(),
                Op::Measure(q) => {
                    self.state.measure_z(q, rng).unwrap();
                }
                Op::Channel(s, k) => {
                    let fresh = dilate(&mut self.state, s, k.tag);
                    match k.role {
                        ChannelRole::Qe => self.ancillas.extend(fresh),
                        ChannelRole::Noise => {
                            let env = QubitRegion::new(self.state.num_qubits(), fresh).unwrap();
                            self.state = self.state.trace_out(&env);
                        }
                    }
                }
            }
        }
    }

    /// `S(M ∪ A) - S(A)`.
    pub fn cee(&self, m: &QubitRegion) -> i64 {
        let total = self.state.num_qubits();
        let a = QubitRegion::new(total, self.ancillas.iter().copied()).unwrap();
        let ma = QubitRegion::new(total, m.members().iter().copied().chain(self.ancillas.iter().copied())).unwrap();
        self.state.entropy(&ma) as i64 - self.state.entropy(&a) as i64
    }
}

// ---------------------------------------------------------------------------
// dense run of a random circuit

pub struct DenseRun {
    pub psi: Dense,
    pub n: usize,
    pub ancillas: Vec<usize>,
}

impl DenseRun {
    pub fn new(n: usize, initial: InitialState) -> Self {
        let mut psi = Dense::zero(n);
        if initial == InitialState::MaximallyMixed {
            for q in 0..n {
                let r = psi.add_qubit();
                psi.h(q);
                psi.cnot(q, r);
            }
        }
        Self { psi, n, ancillas: Vec::new() }
    }

    pub fn run<R: Rng>(&mut self, c: &RandomCircuit, rng: &mut R) {
        let group = two_qubit_clifford_group();
        for op in &c.ops {
            match *op {
                Op::Gate(idx, a, b) => {
                    for e in group.word(idx) {
                        self.psi.elementary(e, a, b);
                    }
                }
                Op::Measure(q) => {
                    self.psi.measure_z(q, rng);
                }
                Op::Channel(s, k) => {
                    let fresh = match k.tag {
                        ChannelTag::Dephasing => {
                            let a = self.psi.add_qubit();
                            self.psi.cnot(s, a);
                            vec![a]
                        }
                        ChannelTag::Resetting => {
                            let a = self.psi.add_qubit();
                            self.psi.swap(s, a);
                            vec![a]
                        }
                        ChannelTag::Depolarizing => {
                            let a = self.psi.add_qubit();
                            let b = self.psi.add_qubit();
                            self.psi.h(a);
                            self.psi.cnot(a, b);
                            self.psi.swap(s, a);
                            vec![a, b]
                        }
                    };
                    if k.role == ChannelRole::Qe {
                        self.ancillas.extend(fresh);
                    }
                }
            }
        }
    }

    pub fn cee(&self, m: &QubitRegion) -> i64 {
        let ma: Vec<usize> = m.members().iter().copied().chain(self.ancillas.iter().copied()).collect();
        integer_entropy(self.psi.entropy(&ma)) - integer_entropy(self.psi.entropy(&self.ancillas))
    }
}

// ---------------------------------------------------------------------------
// dense matrices

pub type Mat = DMatrix<C64>;

/// Matrix of a signed Pauli (`Y = iXZ`).
pub fn pauli_matrix(g: &PauliGenerator) -> Mat {
    let n = g.num_qubits();
    let dim = 1 << n;
    let mut xm = 0usize;
    let mut zm = 0usize;
    let mut ys = 0;
    for q in 0..n {
        if g.x.get(q) {
            xm |= 1 << q;
        }
        if g.z.get(q) {
            zm |= 1 << q;
        }
        if g.x.get(q) && g.z.get(q) {
            ys += 1;
        }
    }
    let base = C64::new(0.0, 1.0).powi(ys) * if g.negative { -1.0 } else { 1.0 };
    let mut m = Mat::zeros(dim, dim);
    for b in 0..dim {
        let sign = if (zm & b).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
        m[(b ^ xm, b)] = base * sign;
    }
    m
}

/// `M · g` for a Pauli `g`, using that `g` is monomial.
pub fn mul_pauli_right(m: &Mat, g: &PauliGenerator) -> Mat {
    let (xm, zm, base) = pauli_parts(g);
    let mut out = Mat::zeros(m.nrows(), m.ncols());
    for c in 0..m.ncols() {
        let sign = if (zm & c).count_ones() % 2 == 1 { -base } else { base };
        for r in 0..m.nrows() {
            out[(r, c)] = m[(r, c ^ xm)] * sign;
        }
    }
    out
}

/// `g M g†` for a Pauli `g`.
pub fn conj_pauli(m: &Mat, g: &PauliGenerator) -> Mat {
    let (xm, zm, _) = pauli_parts(g);
    let mut out = Mat::zeros(m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let s = ((zm & r).count_ones() + (zm & c).count_ones()) % 2;
            let v = m[(r ^ xm, c ^ xm)];
            out[(r, c)] = if s == 1 { -v } else { v };
        }
    }
    out
}

fn pauli_parts(g: &PauliGenerator) -> (usize, usize, C64) {
    let mut xm = 0usize;
    let mut zm = 0usize;
    let mut ys = 0;
    for q in 0..g.num_qubits() {
        xm |= (g.x.get(q) as usize) << q;
        zm |= (g.z.get(q) as usize) << q;
        ys += (g.x.get(q) && g.z.get(q)) as i32;
    }
    (xm, zm, C64::new(0.0, 1.0).powi(ys) * if g.negative { -1.0 } else { 1.0 })
}

/// `2^{-n} ∏ (I + g)` over the generators.
pub fn density_matrix(s: &StabilizerState) -> Mat {
    let n = s.num_qubits();
    let dim = 1 << n;
    let mut rho = Mat::identity(dim, dim);
    for g in s.generators() {
        rho = &rho + mul_pauli_right(&rho, g);
    }
    rho / C64::new(dim as f64, 0.0)
}

pub fn single(n: usize, q: usize, label: char) -> PauliGenerator {
    let mut s: String = "I".repeat(n);
    s.replace_range(q..q + 1, &label.to_string());
    PauliGenerator::from_str_label(&s).unwrap()
}

/// Direct Kraus action of the channel on site `s`.
pub fn kraus_channel(rho: &Mat, n: usize, s: usize, tag: ChannelTag) -> Mat {
    let pc = |l: char| conj_pauli(rho, &single(n, s, l));
    let half = C64::new(0.5, 0.0);
    match tag {
        ChannelTag::Dephasing => (rho + pc('Z')) * half,
        ChannelTag::Resetting => {
            // |0⟩⟨0| ⊗ Tr_s ρ
            let bit = 1 << s;
            let mut out = Mat::zeros(rho.nrows(), rho.ncols());
            for r in (0..rho.nrows()).filter(|r| r & bit == 0) {
                for c in (0..rho.ncols()).filter(|c| c & bit == 0) {
                    out[(r, c)] = rho[(r, c)] + rho[(r | bit, c | bit)];
                }
            }
            out
        }
        ChannelTag::Depolarizing => {
            (rho + pc('X') + pc('Y') + pc('Z')) * C64::new(0.25, 0.0)
        }
    }
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    (a - b).iter().map(|v| v.norm()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// stabilizer state enumeration

fn canonical_key(s: &StabilizerState) -> String {
    let mut c = s.clone();
    c.gaussian_eliminate(&[]);
    c.generators().iter().filter(|g| !g.is_identity()).map(|g| format!("{g:?}")).collect::<Vec<_>>().join(",")
}

/// Every stabilizer state (all ranks, all signs) on `n` qubits, by
/// breadth-first closure of `⟨Z_0..Z_{k-1}⟩` under H, P and CNOT.
pub fn all_stabilizer_states(n: usize, include_mixed: bool) -> Vec<StabilizerState> {
    let mut seen: HashMap<String, ()> = HashMap::new();
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    let ranks: Vec<usize> = if include_mixed { (0..=n).collect() } else { vec![n] };
    for k in ranks {
        let gens = (0..k).map(|q| PauliGenerator::single_z(n, q)).collect();
        let s = StabilizerState::from_generators(n, gens).unwrap();
        if seen.insert(canonical_key(&s), ()).is_none() {
            queue.push_back(s);
        }
    }
    let mut gates = Vec::new();
    for q in 0..n {
        gates.push(Gate::H(q));
        gates.push(Gate::P(q));
        for t in 0..n {
            if t != q {
                gates.push(Gate::Cnot(q, t));
            }
        }
    }
    while let Some(s) = queue.pop_front() {
        for g in &gates {
            let mut t = s.clone();
            t.apply_gate(*g).unwrap();
            if seen.insert(canonical_key(&t), ()).is_none() {
                queue.push_back(t);
            }
        }
        out.push(s);
    }
    out
}

// ---------------------------------------------------------------------------
// replica oracle

/// `⟨σ|𝒩|τ⟩` (`c = None`) or `⟨σ|𝒬|τ⟩` (`c = Some(ℂ)`) from the full
/// sum over system indices `i, ī` and ancilla indices `j, j̄`, with the
/// ancilla closed by `𝕀` or `ℂ` respectively.
pub fn replica_sum_brute(sigma: &[usize], tau: &[usize], c: Option<&[usize]>, d: usize) -> u64 {
    let q = sigma.len();
    let vars = 4 * q;
    let total = d.pow(vars as u32);
    let mut count = 0;
    let mut idx = vec![0usize; vars];
    for code in 0..total {
        let mut v = code;
        for slot in idx.iter_mut() {
            *slot = v % d;
            v /= d;
        }
        let (i, rest) = idx.split_at(q);
        let (ib, rest) = rest.split_at(q);
        let (j, jb) = rest.split_at(q);
        let ok = (0..q).all(|l| {
            let close = match c {
                None => j[l] == jb[l],
                Some(c) => j[l] == jb[c[l]],
            };
            i[l] == ib[sigma[l]] && i[l] == j[l] && ib[l] == jb[l] && close && i[l] == ib[tau[l]]
        });
        count += ok as u64;
    }
    count
}

