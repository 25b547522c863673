//! Noise and quantum-enhanced (QE) channels in Stinespring form, the
//! ancilla-compressed representation and the conditional entanglement
//! entropy.
//!
//! [`CompressedState`] is the literal construction: fresh qubits are
//! appended, coupled and then either traced out (noise) or compressed into
//! the system rows (QE). It is the reference for the column-major engine in
//! [`crate::tableau`].

use serde::{Deserialize, Serialize};

use crate::clifford::Clifford2;
use crate::error::{Error, Result};
use crate::stab::{Gate, InitialState, PauliGenerator, QubitRegion, StabilizerState};

/// Physical form of a channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum ChannelTag {
    /// CNOT from the site onto a fresh `|0⟩`.
    Dephasing,
    /// SWAP with a fresh `|0⟩`.
    Resetting,
    /// SWAP with one half of a fresh Bell pair.
    Depolarizing,
}

impl ChannelTag {
    pub const ALL: [ChannelTag; 3] = [ChannelTag::Dephasing, ChannelTag::Resetting, ChannelTag::Depolarizing];

    pub fn name(self) -> &'static str {
        match self {
            ChannelTag::Dephasing => "dephasing",
            ChannelTag::Resetting => "resetting",
            ChannelTag::Depolarizing => "depolarizing",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dephasing" => Some(ChannelTag::Dephasing),
            "resetting" | "reset" => Some(ChannelTag::Resetting),
            "depolarizing" => Some(ChannelTag::Depolarizing),
            _ => None,
        }
    }

    /// Number of fresh qubits in the dilation.
    pub fn fresh_qubits(self) -> usize {
        match self {
            ChannelTag::Depolarizing => 2,
            _ => 1,
        }
    }

    /// Generators of the fresh register, on qubits `first..first + k` of an
    /// `n`-qubit frame.
    pub fn fresh_generators(self, n: usize, first: usize) -> Vec<PauliGenerator> {
        match self {
            ChannelTag::Dephasing | ChannelTag::Resetting => vec![PauliGenerator::single_z(n, first)],
            ChannelTag::Depolarizing => {
                let mut xx = PauliGenerator::identity(n);
                xx.x.set(first, true);
                xx.x.set(first + 1, true);
                let mut zz = PauliGenerator::identity(n);
                zz.z.set(first, true);
                zz.z.set(first + 1, true);
                vec![xx, zz]
            }
        }
    }

    /// Coupling between system site `s` and the fresh register at `first`.
    pub fn coupling(self, s: usize, first: usize) -> Gate {
        match self {
            ChannelTag::Dephasing => Gate::Cnot(s, first),
            ChannelTag::Resetting | ChannelTag::Depolarizing => Gate::Swap(s, first),
        }
    }
}

/// Whether the dilating qubits are discarded (noise) or kept as ancillas (QE).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelRole {
    Noise,
    Qe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelKind {
    pub tag: ChannelTag,
    pub role: ChannelRole,
}

impl ChannelKind {
    pub fn noise(tag: ChannelTag) -> Self {
        Self { tag, role: ChannelRole::Noise }
    }

    pub fn qe(tag: ChannelTag) -> Self {
        Self { tag, role: ChannelRole::Qe }
    }

    /// Same coupling with the other role; used by the environment twin.
    pub fn swapped_role(self) -> Self {
        let role = match self.role {
            ChannelRole::Noise => ChannelRole::Qe,
            ChannelRole::Qe => ChannelRole::Noise,
        };
        Self { tag: self.tag, role }
    }
}

/// Operations shared by the reference and fast compressed representations.
pub trait MonitoredState {
    fn num_qubits(&self) -> usize;

    /// Number of discarded rows so far.
    fn discarded(&self) -> usize;

    fn apply_clifford(&mut self, gate: &Clifford2, a: usize, b: usize);

    /// Z measurement; the outcome has no effect on entropies and is not
    /// reported.
    fn measure(&mut self, q: usize);

    fn apply_channel(&mut self, site: usize, kind: ChannelKind);

    /// `S(M|A)` in bits.
    fn cee(&self, region: &QubitRegion) -> i64;

    /// `S'(a)+S'(b)+S'(c)-S'(ab)-S'(ac)-S'(bc)+S'(abc)` with `S' = S(·|A)`.
    fn conditional_i3(&self, a: &QubitRegion, b: &QubitRegion, c: &QubitRegion) -> i64 {
        let ab = a.union(b);
        let ac = a.union(c);
        let bc = b.union(c);
        let abc = ab.union(c);
        self.cee(a) + self.cee(b) + self.cee(c) - self.cee(&ab) - self.cee(&ac) - self.cee(&bc) + self.cee(&abc)
    }
}

/// System-only generator rows (not necessarily commuting) plus the discard
/// counter `x`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressedState {
    system: StabilizerState,
    x: usize,
}

impl CompressedState {
    pub fn new(n: usize, initial: InitialState) -> Result<Self> {
        Ok(Self { system: StabilizerState::new(n, initial)?, x: 0 })
    }

    pub fn from_parts(system: StabilizerState, x: usize) -> Self {
        Self { system, x }
    }

    pub fn system(&self) -> &StabilizerState {
        &self.system
    }

    pub fn x(&self) -> usize {
        self.x
    }

    pub fn num_rows(&self) -> usize {
        self.system.num_generators()
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.system.num_qubits() {
            return Err(Error::InvalidInput(format!("site {site} out of range")));
        }
        Ok(())
    }

    pub fn apply_gate(&mut self, gate: Gate) -> Result<()> {
        self.system.apply_gate(gate)
    }

    /// Removes rows that are the identity on the system (after a full
    /// elimination) and counts them in `x`.
    pub fn normalize_rows(&mut self) {
        let elim = self.system.gaussian_eliminate(&[]);
        if elim.zero_rows.is_empty() {
            return;
        }
        self.x += elim.zero_rows.len();
        self.system.generators_mut().retain(|g| !g.is_identity());
    }

    /// Z measurement: rows anticommuting with `Z_q` are merged into one,
    /// which is replaced by `Z_q`; otherwise `Z_q` is appended.
    pub fn measure_z(&mut self, q: usize) -> Result<()> {
        self.check_site(q)?;
        let n = self.system.num_qubits();
        let rows = self.system.generators_mut();
        let anti: Vec<usize> = (0..rows.len()).filter(|&r| rows[r].x.get(q)).collect();
        match anti.split_first() {
            Some((&first, rest)) => {
                let pivot = rows[first].clone();
                for &r in rest {
                    rows[r].mul_assign(&pivot);
                }
                rows[first] = PauliGenerator::single_z(n, q);
            }
            None => rows.push(PauliGenerator::single_z(n, q)),
        }
        self.normalize_rows();
        Ok(())
    }

    /// Appends the fresh register, applies the coupling and returns the
    /// enlarged state with the index of the first fresh qubit.
    fn dilate(&self, site: usize, tag: ChannelTag) -> (StabilizerState, usize) {
        let mut big = self.system.clone();
        let first = big.append_qubits(tag.fresh_qubits());
        let n = big.num_qubits();
        for g in tag.fresh_generators(n, first) {
            big.push_generator(g).expect("sizes match");
        }
        big.apply_gate(tag.coupling(site, first)).expect("valid coupling");
        (big, first)
    }

    pub fn apply_noise_at(&mut self, site: usize, tag: ChannelTag) -> Result<()> {
        self.check_site(site)?;
        let (big, first) = self.dilate(site, tag);
        let env = QubitRegion::new(big.num_qubits(), first..big.num_qubits())?;
        self.system = big.trace_out(&env);
        self.normalize_rows();
        Ok(())
    }

    pub fn apply_qe_at(&mut self, site: usize, tag: ChannelTag) -> Result<()> {
        self.check_site(site)?;
        let n = self.system.num_qubits();
        let (mut big, first) = self.dilate(site, tag);
        let ancillas: Vec<usize> = (first..big.num_qubits()).collect();
        big.gaussian_eliminate(&ancillas);
        let keep: Vec<usize> = (0..n).collect();
        let mut rows = Vec::with_capacity(big.num_generators());
        for g in big.generators() {
            let r = g.restricted(&keep);
            if r.is_identity() {
                if !g.is_identity() {
                    // supported on the ancillas only
                    self.x += 1;
                }
                continue;
            }
            rows.push(r);
        }
        self.system = StabilizerState::from_generators(n, rows)?;
        self.normalize_rows();
        Ok(())
    }

    pub fn apply(&mut self, site: usize, kind: ChannelKind) -> Result<()> {
        match kind.role {
            ChannelRole::Noise => self.apply_noise_at(site, kind.tag),
            ChannelRole::Qe => self.apply_qe_at(site, kind.tag),
        }
    }

    /// `|M| - y`, where `y` counts the independent rows left acting on `M`
    /// once all rows with irreducible support on the complement are set
    /// aside.
    pub fn cee(&self, region: &QubitRegion) -> i64 {
        let mut work = self.system.clone();
        let comp = region.complement();
        let elim = work.gaussian_eliminate(comp.members());
        let y = work.generators()[elim.priority_rank..].iter().filter(|g| !g.is_identity()).count();
        region.len() as i64 - y as i64
    }
}

impl MonitoredState for CompressedState {
    fn num_qubits(&self) -> usize {
        self.system.num_qubits()
    }

    fn discarded(&self) -> usize {
        self.x
    }

    fn apply_clifford(&mut self, gate: &Clifford2, a: usize, b: usize) {
        self.system.apply_gate(Gate::Two(*gate, a, b)).expect("valid targets");
    }

    fn measure(&mut self, q: usize) {
        self.measure_z(q).expect("valid site");
    }

    fn apply_channel(&mut self, site: usize, kind: ChannelKind) {
        self.apply(site, kind).expect("valid site");
    }

    fn cee(&self, region: &QubitRegion) -> i64 {
        CompressedState::cee(self, region)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plus() -> CompressedState {
        let mut s = CompressedState::new(1, InitialState::PureZero).unwrap();
        s.apply_gate(Gate::H(0)).unwrap();
        s
    }

    fn full(n: usize) -> QubitRegion {
        QubitRegion::full(n)
    }

    #[test]
    fn noise_examples() {
        let mut s = plus();
        s.apply_noise_at(0, ChannelTag::Dephasing).unwrap();
        assert_eq!(s.cee(&full(1)), 1);

        let mut s = plus();
        s.apply_noise_at(0, ChannelTag::Resetting).unwrap();
        assert_eq!(s.cee(&full(1)), 0);
        assert_eq!(format!("{:?}", s.system().generators()), "[+Z]");

        let mut s = CompressedState::new(1, InitialState::PureZero).unwrap();
        s.apply_noise_at(0, ChannelTag::Depolarizing).unwrap();
        assert_eq!(s.cee(&full(1)), 1);
    }

    #[test]
    fn qe_dephasing_examples() {
        let mut s = CompressedState::new(1, InitialState::PureZero).unwrap();
        s.apply_qe_at(0, ChannelTag::Dephasing).unwrap();
        assert_eq!(s.x(), 1);
        assert_eq!(s.num_rows(), 1);
        assert_eq!(s.cee(&full(1)), 0);

        let mut s = plus();
        s.apply_qe_at(0, ChannelTag::Dephasing).unwrap();
        assert_eq!(s.x(), 0);
        assert_eq!(s.cee(&full(1)), -1);
    }

    #[test]
    fn normalize_counts_zero_rows() {
        let sys = StabilizerState::from_labels(&["ZI", "II"]).unwrap();
        let mut s = CompressedState::from_parts(sys, 3);
        s.normalize_rows();
        assert_eq!((s.x(), s.num_rows()), (4, 1));
        s.normalize_rows();
        assert_eq!((s.x(), s.num_rows()), (4, 1));
    }

    #[test]
    fn reset_idempotent() {
        let mut s = CompressedState::new(2, InitialState::PureZero).unwrap();
        s.apply_gate(Gate::H(0)).unwrap();
        s.apply_gate(Gate::Cnot(0, 1)).unwrap();
        s.apply_noise_at(1, ChannelTag::Resetting).unwrap();
        let once = s.clone();
        s.apply_noise_at(1, ChannelTag::Resetting).unwrap();
        assert_eq!(s.cee(&full(2)), once.cee(&full(2)));
        assert_eq!(s.system().rank(), once.system().rank());
    }
}
