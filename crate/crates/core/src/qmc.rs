//! Digitally shifted Sobol points in up to six dimensions.

use crate::error::{Error, Result};

/// Maximum supported dimension.
pub const MAX_DIM: usize = 6;
const BITS: usize = 32;

/// Primitive-polynomial data `(degree, coefficient bits, initial m values)`
/// for dimensions 2..=6 (Joe & Kuo); dimension 1 is the van der Corput sequence.
const POLY: [(usize, u32, &[u32]); MAX_DIM - 1] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
];

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1u32 << (BITS - 1 - k);
        }
        return v;
    }
    let (s, a, m) = POLY[dim - 1];
    for k in 0..s.min(BITS) {
        v[k] = m[k] << (BITS - 1 - k);
    }
    for k in s..BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for i in 1..s {
            if (a >> (s - 1 - i)) & 1 == 1 {
                x ^= v[k - i];
            }
        }
        v[k] = x;
    }
    v
}

/// Gray-code Sobol generator with a digital (XOR) shift per coordinate.
#[derive(Debug, Clone)]
pub struct Sobol {
    dirs: Vec<[u32; BITS]>,
    state: Vec<u32>,
    shift: Vec<u32>,
    index: u64,
}

impl Sobol {
    /// A generator in `dim` dimensions with the given digital shift
    /// (one word per coordinate; use zeros for the unshifted sequence).
    pub fn new(dim: usize, shift: &[u32]) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::domain("Sobol::new", format!("dimension must be in 1..={MAX_DIM}, got {dim}")));
        }
        if shift.len() != dim {
            return Err(Error::Precondition(format!("need {dim} shift words, got {}", shift.len())));
        }
        Ok(Sobol {
            dirs: (0..dim).map(direction_numbers).collect(),
            state: vec![0; dim],
            shift: shift.to_vec(),
            index: 0,
        })
    }

    /// Writes the next point into `out`, with coordinates in the open unit cube.
    pub fn next_into(&mut self, out: &mut [f64]) {
        const SCALE: f64 = 1.0 / 4_294_967_296.0;
        for ((o, s), sh) in out.iter_mut().zip(&self.state).zip(&self.shift) {
            *o = ((s ^ sh) as f64 + 0.5) * SCALE;
        }
        let c = (!self.index).trailing_zeros() as usize;
        for (s, d) in self.state.iter_mut().zip(&self.dirs) {
            *s ^= d[c.min(BITS - 1)];
        }
        self.index += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_leading_points() {
        let mut g = Sobol::new(2, &[0, 0]).unwrap();
        let mut p = [0.0; 2];
        let want = [(0.0, 0.0), (0.5, 0.5), (0.75, 0.25), (0.25, 0.75), (0.375, 0.375), (0.875, 0.875)];
        for (a, b) in want {
            g.next_into(&mut p);
            assert!((p[0] - a).abs() < 1e-9 && (p[1] - b).abs() < 1e-9, "{p:?} vs ({a}, {b})");
        }
    }

    #[test]
    fn every_dimension_is_stratified() {
        // the first 2^m points fill each of the 2^m dyadic cells once, per coordinate
        for shift in [[0u32; 6], [0x9e37_79b9, 0x7f4a_7c15, 0x1234_5678, 0xdead_beef, 0x0bad_f00d, 0x5555_aaaa]] {
            let mut g = Sobol::new(6, &shift).unwrap();
            let m = 10;
            let mut seen = vec![vec![false; 1 << m]; 6];
            let mut p = [0.0; 6];
            for _ in 0..(1 << m) {
                g.next_into(&mut p);
                for d in 0..6 {
                    let cell = (p[d] * (1 << m) as f64) as usize;
                    assert!(!seen[d][cell], "dimension {d} cell {cell} hit twice");
                    seen[d][cell] = true;
                }
            }
        }
    }

    #[test]
    fn integrates_smooth_product() {
        let mut g = Sobol::new(6, &[0; 6]).unwrap();
        let mut p = [0.0; 6];
        let n = 1 << 14;
        let mut s = 0.0;
        for _ in 0..n {
            g.next_into(&mut p);
            s += p.iter().map(|x| 1.5 * x.sqrt()).product::<f64>();
        }
        assert!((s / n as f64 - 1.0).abs() < 2e-3);
    }

    #[test]
    fn rejects_bad_dimension() {
        assert!(Sobol::new(0, &[]).is_err());
        assert!(Sobol::new(7, &[0; 7]).is_err());
        assert!(Sobol::new(2, &[0]).is_err());
    }
}
