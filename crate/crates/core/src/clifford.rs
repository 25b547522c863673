//! Two-qubit Clifford group: conjugation tables, enumeration and uniform
//! sampling.
//!
//! Local Paulis on a qubit pair are encoded as 4-bit patterns
//! `x0 | z0 << 1 | x1 << 2 | z1 << 3`. A Hermitian Pauli with pattern `p` and
//! sign bit `s` stands for `(-1)^s` times the tensor product of single-qubit
//! factors `I, X, Z, Y` (with `Y = iXZ`).

use std::collections::HashMap;
use std::collections::VecDeque;
use std::sync::OnceLock;

use rand::Rng;

/// Order of the two-qubit Clifford group modulo global phase.
pub const TWO_QUBIT_CLIFFORD_ORDER: usize = 11520;

const SIGN: u8 = 1 << 4;

#[inline]
fn split(p: u8) -> (u8, u8) {
    let x = (p & 1) | ((p >> 1) & 2);
    let z = ((p >> 1) & 1) | ((p >> 2) & 2);
    (x, z)
}

#[inline]
fn join(x: u8, z: u8) -> u8 {
    (x & 1) | ((z & 1) << 1) | ((x & 2) << 1) | ((z & 2) << 2)
}

/// Pauli in raw form `i^phase X^x Z^z`.
#[derive(Clone, Copy)]
struct Raw {
    phase: u8,
    x: u8,
    z: u8,
}

impl Raw {
    fn from_hermitian(p: u8, negative: bool) -> Self {
        let (x, z) = split(p);
        Raw { phase: (2 * negative as u8 + (x & z).count_ones() as u8) & 3, x, z }
    }

    fn mul(self, o: Raw) -> Raw {
        Raw {
            phase: (self.phase + o.phase + 2 * (self.z & o.x).count_ones() as u8) & 3,
            x: self.x ^ o.x,
            z: self.z ^ o.z,
        }
    }

    /// Back to `(pattern, negative)`; the operator must be Hermitian.
    fn to_hermitian(self) -> (u8, bool) {
        let d = (self.phase + 4 - ((self.x & self.z).count_ones() as u8 & 3)) & 3;
        assert!(d & 1 == 0, "conjugation produced a non-Hermitian Pauli");
        (join(self.x, self.z), d == 2)
    }
}

/// Element of the two-qubit Clifford group, stored as the signed images of
/// `X0, Z0, X1, Z1` under conjugation, together with derived lookup tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Clifford2 {
    images: [u8; 4],
    /// `table[p] = image pattern | sign flip << 4` for every local pattern.
    table: [u8; 16],
    /// `masks[j]`: input bits (x0, z0, x1, z1) whose XOR gives output bit `j`.
    masks: [u8; 4],
}

impl Clifford2 {
    /// Builds an element from the signed images of `X0, Z0, X1, Z1`.
    ///
    /// Returns `None` if the images do not define a symplectic map.
    pub fn from_images(images: [(u8, bool); 4]) -> Option<Self> {
        let enc = images.map(|(p, s)| (p & 15) | if s { SIGN } else { 0 });
        // symplectic check: <img(a), img(b)> must equal <a, b>
        let basis = [1u8, 2, 4, 8];
        for i in 0..4 {
            for j in 0..4 {
                if symplectic(enc[i] & 15, enc[j] & 15) != symplectic(basis[i], basis[j]) {
                    return None;
                }
            }
        }
        Some(Self::build(enc))
    }

    fn build(images: [u8; 4]) -> Self {
        let mut table = [0u8; 16];
        for (p, slot) in table.iter_mut().enumerate() {
            let p = p as u8;
            let (x, z) = split(p);
            let mut acc = Raw { phase: (x & z).count_ones() as u8 & 3, x: 0, z: 0 };
            // X0^x0 Z0^z0 X1^x1 Z1^z1 in that order
            for (bit, &img) in images.iter().enumerate() {
                if (p >> bit) & 1 == 1 {
                    acc = acc.mul(Raw::from_hermitian(img & 15, img & SIGN != 0));
                }
            }
            let (q, neg) = acc.to_hermitian();
            *slot = q | if neg { SIGN } else { 0 };
        }
        let mut masks = [0u8; 4];
        for (j, m) in masks.iter_mut().enumerate() {
            for (i, &img) in images.iter().enumerate() {
                if (img >> j) & 1 == 1 {
                    *m |= 1 << i;
                }
            }
        }
        Clifford2 { images, table, masks }
    }

    pub fn identity() -> Self {
        Self::build([1, 2, 4, 8])
    }

    pub fn hadamard(qubit: usize) -> Self {
        let mut im = [1u8, 2, 4, 8];
        im[2 * qubit] = 2 << (2 * qubit);
        im[2 * qubit + 1] = 1 << (2 * qubit);
        Self::build(im)
    }

    pub fn phase(qubit: usize) -> Self {
        let mut im = [1u8, 2, 4, 8];
        im[2 * qubit] = 3 << (2 * qubit);
        Self::build(im)
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        assert!(control != target && control < 2 && target < 2);
        let mut im = [1u8, 2, 4, 8];
        let xc = 1u8 << (2 * control);
        let zc = 2u8 << (2 * control);
        let xt = 1u8 << (2 * target);
        let zt = 2u8 << (2 * target);
        im[2 * control] = xc | xt;
        im[2 * target + 1] = zc | zt;
        Self::build(im)
    }

    pub fn swap() -> Self {
        Self::build([4, 8, 1, 2])
    }

    /// Signed images of `X0, Z0, X1, Z1`.
    pub fn images(&self) -> [(u8, bool); 4] {
        self.images.map(|v| (v & 15, v & SIGN != 0))
    }

    /// Conjugates a signed local Pauli: returns `(pattern', sign flip)`.
    #[inline]
    pub fn conjugate(&self, pattern: u8) -> (u8, bool) {
        let v = self.table[(pattern & 15) as usize];
        (v & 15, v & SIGN != 0)
    }

    /// Input-bit masks defining the symplectic part column by column.
    #[inline]
    pub fn column_masks(&self) -> [u8; 4] {
        self.masks
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Clifford2) -> Clifford2 {
        let images = other.images.map(|img| {
            let (q, flip) = self.conjugate(img & 15);
            q | if (img & SIGN != 0) ^ flip { SIGN } else { 0 }
        });
        Self::build(images)
    }

    fn key(&self) -> u32 {
        u32::from_le_bytes(self.images)
    }
}

/// Symplectic form of two local patterns.
#[inline]
pub fn symplectic(a: u8, b: u8) -> bool {
    let (ax, az) = split(a);
    let (bx, bz) = split(b);
    ((ax & bz).count_ones() + (az & bx).count_ones()) & 1 == 1
}

/// Generators used to enumerate the group; also the alphabet of the words
/// returned by [`CliffordGroup2::word`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementary {
    H(usize),
    P(usize),
    Cnot(usize, usize),
    Swap,
}

impl Elementary {
    pub const ALL: [Elementary; 7] = [
        Elementary::H(0),
        Elementary::H(1),
        Elementary::P(0),
        Elementary::P(1),
        Elementary::Cnot(0, 1),
        Elementary::Cnot(1, 0),
        Elementary::Swap,
    ];

    pub fn clifford(self) -> Clifford2 {
        match self {
            Elementary::H(q) => Clifford2::hadamard(q),
            Elementary::P(q) => Clifford2::phase(q),
            Elementary::Cnot(c, t) => Clifford2::cnot(c, t),
            Elementary::Swap => Clifford2::swap(),
        }
    }
}

/// The full two-qubit Clifford group (with Pauli signs), enumerated by
/// breadth-first closure over [`Elementary::ALL`].
pub struct CliffordGroup2 {
    elements: Vec<Clifford2>,
    parent: Vec<(u32, u8)>,
}

impl CliffordGroup2 {
    fn enumerate() -> Self {
        let gens: Vec<Clifford2> = Elementary::ALL.iter().map(|g| g.clifford()).collect();
        let id = Clifford2::identity();
        let mut elements = vec![id];
        let mut parent = vec![(u32::MAX, 0u8)];
        let mut seen: HashMap<u32, u32> = HashMap::new();
        seen.insert(id.key(), 0);
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            let cur = elements[i];
            for (gi, g) in gens.iter().enumerate() {
                let next = g.compose(&cur);
                if let std::collections::hash_map::Entry::Vacant(e) = seen.entry(next.key()) {
                    e.insert(elements.len() as u32);
                    elements.push(next);
                    parent.push((i as u32, gi as u8));
                    queue.push_back(elements.len() - 1);
                }
            }
        }
        CliffordGroup2 { elements, parent }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn get(&self, index: usize) -> &Clifford2 {
        &self.elements[index]
    }

    pub fn elements(&self) -> &[Clifford2] {
        &self.elements
    }

    /// Generator word realizing element `index`, in time order.
    pub fn word(&self, index: usize) -> Vec<Elementary> {
        let mut out = Vec::new();
        let mut i = index;
        while self.parent[i].0 != u32::MAX {
            let (p, g) = self.parent[i];
            out.push(Elementary::ALL[g as usize]);
            i = p as usize;
        }
        out.reverse();
        out
    }

    /// Index of a uniformly random element.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.gen_range(0..self.elements.len())
    }
}

/// Lazily enumerated group shared by all threads.
pub fn two_qubit_clifford_group() -> &'static CliffordGroup2 {
    static GROUP: OnceLock<CliffordGroup2> = OnceLock::new();
    GROUP.get_or_init(CliffordGroup2::enumerate)
}

/// Draws a two-qubit Clifford uniformly (Pauli signs included).
pub fn sample_two_qubit_clifford<R: Rng + ?Sized>(rng: &mut R) -> Clifford2 {
    let g = two_qubit_clifford_group();
    *g.get(g.sample_index(rng))
}
