use super::{CMatrix, CVector, C64, I, ONE, ZERO};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn label(self) -> &'static str {
        match self {
            Pauli::I => "I",
            Pauli::X => "X",
            Pauli::Y => "Y",
            Pauli::Z => "Z",
        }
    }
}

/// Pauli matrix in the `{|g⟩ = |0⟩, |e⟩ = |1⟩}` basis; σz|e⟩ = −|e⟩.
pub fn sigma(p: Pauli) -> CMatrix {
    match p {
        Pauli::I => CMatrix::identity(2, 2),
        Pauli::X => CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
        Pauli::Y => CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]),
        Pauli::Z => CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]),
    }
}

pub fn pauli_basis() -> [CMatrix; 4] {
    Pauli::ALL.map(sigma)
}

/// Identity followed by the eight Gell-Mann matrices λ₁..λ₈.
pub fn gell_mann_basis() -> [CMatrix; 9] {
    let mut out: [CMatrix; 9] = std::array::from_fn(|_| CMatrix::zeros(3, 3));
    out[0] = CMatrix::identity(3, 3);
    let sym = |i: usize, j: usize| {
        let mut m = CMatrix::zeros(3, 3);
        m[(i, j)] = ONE;
        m[(j, i)] = ONE;
        m
    };
    let asym = |i: usize, j: usize| {
        let mut m = CMatrix::zeros(3, 3);
        m[(i, j)] = -I;
        m[(j, i)] = I;
        m
    };
    out[1] = sym(0, 1);
    out[2] = asym(0, 1);
    out[3] = CMatrix::from_diagonal(&CVector::from_vec(vec![ONE, -ONE, ZERO]));
    out[4] = sym(0, 2);
    out[5] = asym(0, 2);
    out[6] = sym(1, 2);
    out[7] = asym(1, 2);
    let s = 1.0 / 3f64.sqrt();
    out[8] = CMatrix::from_diagonal(&CVector::from_vec(vec![
        C64::new(s, 0.0),
        C64::new(s, 0.0),
        C64::new(-2.0 * s, 0.0),
    ]));
    out
}

/// `|to⟩⟨from|` on a `dim`-level system.
pub fn transition(dim: usize, to: usize, from: usize) -> CMatrix {
    let mut m = CMatrix::zeros(dim, dim);
    m[(to, from)] = ONE;
    m
}

pub fn projector(dim: usize, level: usize) -> CMatrix {
    transition(dim, level, level)
}

/// Truncated bosonic lowering operator on `dim` Fock levels.
pub fn annihilation(dim: usize) -> CMatrix {
    let mut m = CMatrix::zeros(dim, dim);
    for n in 1..dim {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    m
}

pub fn ket(dim: usize, level: usize) -> CVector {
    let mut v = CVector::zeros(dim);
    v[level] = ONE;
    v
}

/// Two-level block of a qutrit addressed by a rotation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QutritTransition {
    Ge,
    Ef,
}

impl QutritTransition {
    fn levels(self) -> (usize, usize) {
        match self {
            QutritTransition::Ge => (0, 1),
            QutritTransition::Ef => (1, 2),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RotationAxis {
    X,
    Y,
}

/// `exp(−iθσₙ/2)` on one transition of a qutrit, identity on the third level.
pub fn qutrit_rotation(transition: QutritTransition, axis: RotationAxis, theta: f64) -> CMatrix {
    let (lo, hi) = transition.levels();
    let c = C64::new((theta / 2.0).cos(), 0.0);
    let s = (theta / 2.0).sin();
    let (off_lo_hi, off_hi_lo) = match axis {
        RotationAxis::X => (C64::new(0.0, -s), C64::new(0.0, -s)),
        RotationAxis::Y => (C64::new(-s, 0.0), C64::new(s, 0.0)),
    };
    let mut u = CMatrix::identity(3, 3);
    u[(lo, lo)] = c;
    u[(hi, hi)] = c;
    u[(lo, hi)] = off_lo_hi;
    u[(hi, lo)] = off_hi_lo;
    u
}
