//! Column-major compressed tableau used for production trajectories.
//!
//! The compressed rows span a subspace `V` of `F_2^{2N}`. We keep a full basis
//! `b_0..b_{2N-1}` of `F_2^{2N}`, a dual family `d_t` with symplectic pairing
//! `<d_s, b_t> = δ_st`, and a bitmask of the basis vectors spanning `V`.
//! Both families are stored by coordinate: `bcol[k]` holds bit `k` of every
//! basis vector, so a two-qubit gate touches only four coordinate columns of
//! each family. Coordinate `2q` is the X bit of qubit `q`, `2q + 1` its Z bit.

use crate::bits::{self, get_bit, words_for};
use crate::channels::{ChannelKind, ChannelRole, ChannelTag, MonitoredState};
use crate::clifford::Clifford2;
use crate::stab::{InitialState, PauliGenerator, QubitRegion};

/// Runs `$body` with `$W` bound to the (power of two) column width.
macro_rules! with_width {
    ($w:expr, $W:ident => $body:expr) => {
        match $w {
            1 => {
                const $W: usize = 1;
                $body
            }
            2 => {
                const $W: usize = 2;
                $body
            }
            4 => {
                const $W: usize = 4;
                $body
            }
            8 => {
                const $W: usize = 8;
                $body
            }
            16 => {
                const $W: usize = 16;
                $body
            }
            32 => {
                const $W: usize = 32;
                $body
            }
            64 => {
                const $W: usize = 64;
                $body
            }
            w => panic!("unsupported column width {w}"),
        }
    };
}

/// Fixed-width inner loops.
mod kernels {
    #[inline]
    fn bit<const W: usize>(col: &[u64; W], i: usize) -> bool {
        (col[i >> 6] >> (i & 63)) & 1 == 1
    }

    pub fn apply_local<const W: usize>(store: &mut [u64], coords: [usize; 4], masks: [u8; 4]) {
        let (cols, _) = store.as_chunks_mut::<W>();
        let old = coords.map(|k| cols[k]);
        for (j, &k) in coords.iter().enumerate() {
            let mut acc = [0u64; W];
            for (i, o) in old.iter().enumerate() {
                if (masks[j] >> i) & 1 == 1 {
                    for t in 0..W {
                        acc[t] ^= o[t];
                    }
                }
            }
            cols[k] = acc;
        }
    }

    pub fn eliminate<const W: usize>(bcol: &mut [u64], dcol: &mut [u64], active: &[u64], k: usize) -> Option<usize> {
        let (bc, _) = bcol.as_chunks_mut::<W>();
        let (dc, _) = dcol.as_chunks_mut::<W>();
        let mut set = [0u64; W];
        for t in 0..W {
            set[t] = bc[k][t] & active[t];
        }
        let r = crate::bits::first_one(&set)?;
        let (rw, rb) = (r >> 6, r & 63);
        set[rw] ^= 1 << rb;
        if set == [0u64; W] {
            return Some(r);
        }
        // b_s ^= b_r for s in set; d_r ^= sum of d_s over set
        for col in bc.iter_mut() {
            if bit(col, r) {
                for t in 0..W {
                    col[t] ^= set[t];
                }
            }
        }
        for col in dc.iter_mut() {
            let mut par = 0u64;
            for t in 0..W {
                par ^= col[t] & set[t];
            }
            col[rw] ^= ((par.count_ones() & 1) as u64) << rb;
        }
        Some(r)
    }

    pub fn add<const W: usize>(bcol: &mut [u64], dcol: &mut [u64], active: &mut [u64], v: &[u64]) -> bool {
        let (bc, _) = bcol.as_chunks_mut::<W>();
        let (dc, _) = dcol.as_chunks_mut::<W>();
        // coefficients c_t = <d_t, v>
        let mut c = [0u64; W];
        for k in crate::bits::ones(v) {
            let d = &dc[k ^ 1];
            for t in 0..W {
                c[t] ^= d[t];
            }
        }
        let Some(u) = (0..W).find(|&t| c[t] & !active[t] != 0).map(|t| (t << 6) + (c[t] & !active[t]).trailing_zeros() as usize) else {
            return false;
        };
        let (uw, ub) = (u >> 6, u & 63);
        c[uw] ^= 1 << ub;
        for (kk, (d, b)) in dc.iter_mut().zip(bc.iter_mut()).enumerate() {
            if bit(d, u) {
                for t in 0..W {
                    d[t] ^= c[t];
                }
            }
            let vb = (v[kk >> 6] >> (kk & 63)) & 1;
            b[uw] = (b[uw] & !(1 << ub)) | (vb << ub);
        }
        active[uw] |= 1 << ub;
        true
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressedTableau {
    n: usize,
    /// Words per coordinate column (covers `2n` basis indices).
    w: usize,
    bcol: Vec<u64>,
    dcol: Vec<u64>,
    active: Vec<u64>,
    x: usize,
}

#[inline]
fn xcoord(q: usize) -> usize {
    2 * q
}

#[inline]
fn zcoord(q: usize) -> usize {
    2 * q + 1
}

impl CompressedTableau {
    pub fn new(n: usize, initial: InitialState) -> Self {
        assert!(n > 0, "need at least one qubit");
        let dim = 2 * n;
        let w = words_for(dim).next_power_of_two();
        let mut bcol = vec![0u64; dim * w];
        let mut dcol = vec![0u64; dim * w];
        for t in 0..dim {
            bits::set_bit(&mut bcol[t * w..(t + 1) * w], t, true);
            // dual of e_{2q} is e_{2q+1} and vice versa
            bits::set_bit(&mut dcol[(t ^ 1) * w..((t ^ 1) + 1) * w], t, true);
        }
        let mut active = vec![0u64; w];
        if initial == InitialState::PureZero {
            for q in 0..n {
                bits::set_bit(&mut active, zcoord(q), true);
            }
        }
        Self { n, w, bcol, dcol, active, x: 0 }
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn x(&self) -> usize {
        self.x
    }

    /// Dimension of the compressed row space.
    pub fn rank(&self) -> usize {
        self.active.iter().map(|w| w.count_ones() as usize).sum()
    }

    #[inline]
    fn bc(&self, k: usize) -> &[u64] {
        &self.bcol[k * self.w..(k + 1) * self.w]
    }

    #[inline]
    fn dc(&self, k: usize) -> &[u64] {
        &self.dcol[k * self.w..(k + 1) * self.w]
    }

    /// Basis vector `t` as a signless Pauli over the system.
    fn basis_vector(&self, t: usize) -> Vec<u64> {
        let mut v = vec![0u64; self.w];
        for k in 0..2 * self.n {
            if get_bit(self.bc(k), t) {
                bits::set_bit(&mut v, k, true);
            }
        }
        v
    }

    /// Spanning rows of the compressed space (signs are not tracked here).
    pub fn rows(&self) -> Vec<PauliGenerator> {
        bits::ones(&self.active)
            .map(|t| {
                let v = self.basis_vector(t);
                let mut g = PauliGenerator::identity(self.n);
                for q in 0..self.n {
                    g.x.set(q, get_bit(&v, xcoord(q)));
                    g.z.set(q, get_bit(&v, zcoord(q)));
                }
                g
            })
            .collect()
    }

    pub fn apply_clifford(&mut self, c: &Clifford2, a: usize, b: usize) {
        debug_assert!(a != b && a < self.n && b < self.n);
        let coords = [xcoord(a), zcoord(a), xcoord(b), zcoord(b)];
        let masks = c.column_masks();
        with_width!(self.w, W => {
            kernels::apply_local::<W>(&mut self.bcol, coords, masks);
            kernels::apply_local::<W>(&mut self.dcol, coords, masks);
        })
    }

    /// Makes at most one active basis vector non-zero at coordinate `k` and
    /// returns it.
    fn eliminate(&mut self, k: usize) -> Option<usize> {
        with_width!(self.w, W => kernels::eliminate::<W>(&mut self.bcol, &mut self.dcol, &self.active, k))
    }

    #[inline]
    fn deactivate(&mut self, r: usize) {
        bits::set_bit(&mut self.active, r, false);
    }

    /// Adds the vector `v` (given by coordinates) to the active span;
    /// dependent additions increment `x`.
    fn add_vector(&mut self, v: &[u64]) {
        let added = with_width!(self.w, W => kernels::add::<W>(&mut self.bcol, &mut self.dcol, &mut self.active, v));
        if !added {
            self.x += 1;
        }
    }

    fn unit(&self, k: usize) -> Vec<u64> {
        let mut v = vec![0u64; self.w];
        bits::set_bit(&mut v, k, true);
        v
    }

    pub fn measure_z(&mut self, q: usize) {
        if let Some(r) = self.eliminate(xcoord(q)) {
            self.deactivate(r);
        }
        let v = self.unit(zcoord(q));
        self.add_vector(&v);
    }

    /// Removes the active pivots on both coordinates of `s` and returns them.
    fn take_site_pivots(&mut self, s: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(2);
        if let Some(r) = self.eliminate(xcoord(s)) {
            self.deactivate(r);
            out.push(r);
        }
        if let Some(r) = self.eliminate(zcoord(s)) {
            self.deactivate(r);
            out.push(r);
        }
        out
    }

    pub fn apply_noise(&mut self, s: usize, tag: ChannelTag) {
        match tag {
            ChannelTag::Dephasing => {
                if let Some(r) = self.eliminate(xcoord(s)) {
                    self.deactivate(r);
                }
            }
            ChannelTag::Resetting => {
                self.take_site_pivots(s);
                let v = self.unit(zcoord(s));
                self.add_vector(&v);
            }
            ChannelTag::Depolarizing => {
                self.take_site_pivots(s);
            }
        }
    }

    pub fn apply_qe(&mut self, s: usize, tag: ChannelTag) {
        match tag {
            ChannelTag::Dephasing => {
                let v = self.unit(zcoord(s));
                self.add_vector(&v);
            }
            ChannelTag::Resetting => {
                let pivots = self.take_site_pivots(s);
                let projected: Vec<Vec<u64>> = pivots
                    .iter()
                    .map(|&r| {
                        let mut v = self.basis_vector(r);
                        bits::set_bit(&mut v, xcoord(s), false);
                        bits::set_bit(&mut v, zcoord(s), false);
                        v
                    })
                    .collect();
                for v in &projected {
                    self.add_vector(v);
                }
                let v = self.unit(zcoord(s));
                self.add_vector(&v);
            }
            ChannelTag::Depolarizing => {
                let v = self.unit(xcoord(s));
                self.add_vector(&v);
                let v = self.unit(zcoord(s));
                self.add_vector(&v);
            }
        }
    }

    pub fn apply_channel(&mut self, s: usize, kind: ChannelKind) {
        match kind.role {
            ChannelRole::Noise => self.apply_noise(s, kind.tag),
            ChannelRole::Qe => self.apply_qe(s, kind.tag),
        }
    }

    /// Accumulator for the rank of `V` restricted to a growing set of qubits.
    pub fn restricted_rank(&self) -> RestrictedRank<'_> {
        RestrictedRank { tab: self, basis: XorBasis::new(self.w) }
    }

    /// `|M| - rank(V) + rank(V restricted to the complement of M)`.
    pub fn cee(&self, region: &QubitRegion) -> i64 {
        let mut acc = self.restricted_rank();
        acc.add_qubits(region.complement().members());
        region.len() as i64 - self.rank() as i64 + acc.rank() as i64
    }

    /// Conditional I₃ over regions `a, b, c`, with `d` the rest of the system.
    /// Shares elimination work across the seven complements.
    pub fn conditional_i3(&self, a: &QubitRegion, b: &QubitRegion, c: &QubitRegion) -> i64 {
        let d = a.union(b).union(c).complement();
        let mut r_d = self.restricted_rank();
        r_d.add_qubits(d.members());
        let mut r_cd = r_d.clone();
        r_cd.add_qubits(c.members());
        let mut r_bcd = r_cd.clone();
        r_bcd.add_qubits(b.members());
        let mut r_acd = r_cd.clone();
        r_acd.add_qubits(a.members());
        let mut r_bd = r_d.clone();
        r_bd.add_qubits(b.members());
        let mut r_abd = r_bd.clone();
        r_abd.add_qubits(a.members());
        let mut r_ad = r_d.clone();
        r_ad.add_qubits(a.members());
        let rank = self.rank() as i64;
        let term = |m: usize, r: &RestrictedRank<'_>| m as i64 - rank + r.rank() as i64;
        let (na, nb, nc) = (a.len(), b.len(), c.len());
        term(na, &r_bcd) + term(nb, &r_acd) + term(nc, &r_abd)
            - term(na + nb, &r_cd)
            - term(na + nc, &r_bd)
            - term(nb + nc, &r_ad)
            + term(na + nb + nc, &r_d)
    }

    /// Checks the dual relation and returns false if it is broken.
    pub fn check_invariants(&self) -> bool {
        let dim = 2 * self.n;
        for s in 0..dim {
            for t in 0..dim {
                let mut pair = false;
                for q in 0..self.n {
                    pair ^= get_bit(self.dc(xcoord(q)), s) & get_bit(self.bc(zcoord(q)), t);
                    pair ^= get_bit(self.dc(zcoord(q)), s) & get_bit(self.bc(xcoord(q)), t);
                }
                if pair != (s == t) {
                    return false;
                }
            }
        }
        true
    }
}

/// Incremental GF(2) basis over fixed-width word vectors.
#[derive(Clone, Debug)]
pub struct XorBasis {
    w: usize,
    vecs: Vec<u64>,
    pivots: Vec<usize>,
}

impl XorBasis {
    pub fn new(w: usize) -> Self {
        Self { w, vecs: Vec::new(), pivots: Vec::new() }
    }

    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    /// Inserts `v` (clobbered); returns true if it was independent.
    pub fn insert(&mut self, v: &mut [u64]) -> bool {
        let w = self.w;
        for (i, &p) in self.pivots.iter().enumerate() {
            if get_bit(v, p) {
                for (a, b) in v.iter_mut().zip(&self.vecs[i * w..(i + 1) * w]) {
                    *a ^= b;
                }
            }
        }
        match bits::first_one(v) {
            Some(p) => {
                self.vecs.extend_from_slice(v);
                self.pivots.push(p);
                true
            }
            None => false,
        }
    }
}

/// Rank of the active space projected onto the coordinates of the qubits
/// added so far.
#[derive(Clone)]
pub struct RestrictedRank<'a> {
    tab: &'a CompressedTableau,
    basis: XorBasis,
}

impl RestrictedRank<'_> {
    pub fn add_qubits(&mut self, qubits: &[usize]) {
        let mut buf = vec![0u64; self.tab.w];
        for &q in qubits {
            for k in [xcoord(q), zcoord(q)] {
                if self.basis.rank() == self.tab.rank() {
                    return;
                }
                for ((b, c), a) in buf.iter_mut().zip(self.tab.bc(k)).zip(&self.tab.active) {
                    *b = c & a;
                }
                self.basis.insert(&mut buf);
            }
        }
    }

    pub fn rank(&self) -> usize {
        self.basis.rank()
    }
}

impl MonitoredState for CompressedTableau {
    fn num_qubits(&self) -> usize {
        self.n
    }

    fn discarded(&self) -> usize {
        self.x
    }

    fn apply_clifford(&mut self, gate: &Clifford2, a: usize, b: usize) {
        CompressedTableau::apply_clifford(self, gate, a, b)
    }

    fn measure(&mut self, q: usize) {
        self.measure_z(q)
    }

    fn apply_channel(&mut self, site: usize, kind: ChannelKind) {
        CompressedTableau::apply_channel(self, site, kind)
    }

    fn cee(&self, region: &QubitRegion) -> i64 {
        CompressedTableau::cee(self, region)
    }

    fn conditional_i3(&self, a: &QubitRegion, b: &QubitRegion, c: &QubitRegion) -> i64 {
        CompressedTableau::conditional_i3(self, a, b, c)
    }
}
