//! Finite-dimensional spin operators and tensor-product registers.
//!
//! Every single-spin basis is ordered by descending magnetic quantum number,
//! `m = I, I-1, ..., -I`. Composite registers are Kronecker products in
//! register order, so the first subsystem is the slowest-varying index.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Spin quantum number stored as `2I` so half-integers are exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct SpinQuantum {
    two_i: u32,
}

impl SpinQuantum {
    pub const HALF: SpinQuantum = SpinQuantum { two_i: 1 };
    pub const ONE: SpinQuantum = SpinQuantum { two_i: 2 };

    pub fn new(two_i: u32) -> Result<Self> {
        if two_i == 0 {
            return Err(Error::invalid("spin quantum number must satisfy 2I >= 1"));
        }
        Ok(SpinQuantum { two_i })
    }

    pub fn two_i(self) -> u32 {
        self.two_i
    }

    pub fn value(self) -> f64 {
        f64::from(self.two_i) / 2.0
    }

    pub fn multiplicity(self) -> usize {
        self.two_i as usize + 1
    }

    /// `2m` for each basis state, descending.
    pub fn two_m_values(self) -> impl Iterator<Item = i32> {
        let two_i = self.two_i as i32;
        (0..=two_i).map(move |k| two_i - 2 * k)
    }

    /// Magnetic quantum numbers in basis order (descending).
    pub fn m_values(self) -> Vec<f64> {
        self.two_m_values().map(|tm| f64::from(tm) / 2.0).collect()
    }
}

impl TryFrom<u32> for SpinQuantum {
    type Error = Error;
    fn try_from(two_i: u32) -> Result<Self> {
        SpinQuantum::new(two_i)
    }
}

impl From<SpinQuantum> for u32 {
    fn from(s: SpinQuantum) -> u32 {
        s.two_i
    }
}

impl fmt::Display for SpinQuantum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.two_i % 2 == 0 {
            write!(f, "{}", self.two_i / 2)
        } else {
            write!(f, "{}/2", self.two_i)
        }
    }
}

/// Dense complex square matrix acting on a spin Hilbert space.
///
/// Operators are immutable values; arithmetic produces new operators. The
/// Hermitian flag is set only by constructors that verify it.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    matrix: CMatrix,
    hermitian: bool,
}

/// Relative tolerance for the Hermitian flag.
pub const HERMITIAN_TOL: f64 = 1e-12;

impl Operator {
    /// Wraps a matrix without claiming Hermiticity.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                actual: matrix.ncols(),
            });
        }
        Ok(Operator {
            matrix,
            hermitian: false,
        })
    }

    /// Wraps a matrix and verifies it is Hermitian to [`HERMITIAN_TOL`].
    pub fn hermitian(matrix: CMatrix) -> Result<Self> {
        let mut op = Operator::new(matrix)?;
        let defect = op.hermiticity_defect();
        if defect > HERMITIAN_TOL {
            return Err(Error::invalid(format!(
                "matrix is not Hermitian (relative defect {defect:.3e})"
            )));
        }
        op.hermitian = true;
        Ok(op)
    }

    pub fn identity(dim: usize) -> Self {
        Operator {
            matrix: CMatrix::identity(dim, dim),
            hermitian: true,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Operator {
            matrix: CMatrix::zeros(dim, dim),
            hermitian: true,
        }
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let matrix = CMatrix::from_fn(n, n, |r, c| {
            if r == c {
                Complex64::new(diag[r], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        Operator {
            matrix,
            hermitian: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.matrix[(row, col)]
    }

    /// `max|A - A^dagger| / max|A|` (0 for the zero matrix).
    pub fn hermiticity_defect(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let n = self.dim();
        let mut worst = 0.0f64;
        for r in 0..n {
            for c in r..n {
                let d = (self.matrix[(r, c)] - self.matrix[(c, r)].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst / scale
    }

    pub fn max_abs(&self) -> f64 {
        self.matrix.iter().fold(0.0f64, |m, z| m.max(z.norm()))
    }

    pub fn adjoint(&self) -> Operator {
        Operator {
            matrix: self.matrix.adjoint(),
            hermitian: self.hermitian,
        }
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    pub fn scale(&self, factor: f64) -> Operator {
        Operator {
            matrix: &self.matrix * Complex64::new(factor, 0.0),
            hermitian: self.hermitian,
        }
    }

    pub fn scale_complex(&self, factor: Complex64) -> Operator {
        Operator {
            matrix: &self.matrix * factor,
            hermitian: self.hermitian && factor.im == 0.0,
        }
    }

    /// `self * other - other * self`.
    pub fn commutator(&self, other: &Operator) -> Result<Operator> {
        self.check_same_dim(other)?;
        Operator::new(&self.matrix * &other.matrix - &other.matrix * &self.matrix)
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        assert_eq!(self.dim(), other.dim(), "operator dimensions differ");
        self.matrix
            .iter()
            .zip(other.matrix.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).norm()))
    }

    /// Re-checks Hermiticity of an operator built by arithmetic.
    pub fn into_hermitian(self) -> Result<Operator> {
        Operator::hermitian(self.matrix)
    }

    /// Expectation `<psi| A |psi>` for a column state.
    pub fn expectation(&self, psi: &nalgebra::DVector<Complex64>) -> Complex64 {
        (psi.adjoint() * &self.matrix * psi)[(0, 0)]
    }

    fn check_same_dim(&self, other: &Operator) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(())
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimensions differ");
        Operator {
            matrix: &self.matrix + &rhs.matrix,
            hermitian: self.hermitian && rhs.hermitian,
        }
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimensions differ");
        Operator {
            matrix: &self.matrix - &rhs.matrix,
            hermitian: self.hermitian && rhs.hermitian,
        }
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimensions differ");
        Operator {
            matrix: &self.matrix * &rhs.matrix,
            hermitian: false,
        }
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        self.scale(-1.0)
    }
}

/// Cartesian and ladder operators of one spin.
#[derive(Clone, Debug)]
pub struct SpinMatrices {
    pub sx: Operator,
    pub sy: Operator,
    pub sz: Operator,
    pub splus: Operator,
    pub sminus: Operator,
}

/// Standard angular-momentum matrices in the descending-`m` basis.
pub fn spin_matrices(spin: SpinQuantum) -> SpinMatrices {
    let n = spin.multiplicity();
    let i = spin.value();
    let ms = spin.m_values();

    let mut plus = CMatrix::zeros(n, n);
    // S+ |m> = sqrt(I(I+1) - m(m+1)) |m+1>; |m+1> sits one row above |m>.
    for col in 1..n {
        let m = ms[col];
        plus[(col - 1, col)] = Complex64::new((i * (i + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
    }
    let minus = plus.adjoint();
    let half = Complex64::new(0.5, 0.0);
    let sx = (&plus + &minus) * half;
    // (S+ - S-) / 2i
    let sy = (&plus - &minus) * Complex64::new(0.0, -0.5);
    let sz = CMatrix::from_fn(n, n, |r, c| {
        if r == c {
            Complex64::new(ms[r], 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });

    SpinMatrices {
        sx: Operator {
            matrix: sx,
            hermitian: true,
        },
        sy: Operator {
            matrix: sy,
            hermitian: true,
        },
        sz: Operator {
            matrix: sz,
            hermitian: true,
        },
        splus: Operator {
            matrix: plus,
            hermitian: false,
        },
        sminus: Operator {
            matrix: minus,
            hermitian: false,
        },
    }
}

/// Ordered list of spins; position 0 is the electronic spin.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpinRegister {
    subsystems: Vec<SpinQuantum>,
}

impl SpinRegister {
    pub fn new(subsystems: Vec<SpinQuantum>) -> Result<Self> {
        if subsystems.is_empty() {
            return Err(Error::invalid("spin register needs at least one subsystem"));
        }
        Ok(SpinRegister { subsystems })
    }

    pub fn subsystems(&self) -> &[SpinQuantum] {
        &self.subsystems
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn total_dim(&self) -> usize {
        self.subsystems.iter().map(|s| s.multiplicity()).product()
    }

    /// Per-subsystem `2m` values of a product-basis index.
    pub fn decode(&self, mut index: usize) -> Vec<i32> {
        let mut digits = vec![0usize; self.subsystems.len()];
        for (slot, spin) in self.subsystems.iter().enumerate().rev() {
            let mult = spin.multiplicity();
            digits[slot] = index % mult;
            index /= mult;
        }
        digits
            .iter()
            .zip(&self.subsystems)
            .map(|(&d, s)| s.two_i() as i32 - 2 * d as i32)
            .collect()
    }

    /// Inverse of [`SpinRegister::decode`].
    pub fn encode(&self, two_ms: &[i32]) -> Result<usize> {
        if two_ms.len() != self.subsystems.len() {
            return Err(Error::DimensionMismatch {
                expected: self.subsystems.len(),
                actual: two_ms.len(),
            });
        }
        let mut index = 0usize;
        for (&tm, spin) in two_ms.iter().zip(&self.subsystems) {
            let two_i = spin.two_i() as i32;
            let digit = two_i - tm;
            if digit < 0 || digit > 2 * two_i || digit % 2 != 0 {
                return Err(Error::invalid(format!(
                    "2m = {tm} is not a valid projection of spin {spin}"
                )));
            }
            index = index * spin.multiplicity() + (digit / 2) as usize;
        }
        Ok(index)
    }
}

/// Places a single-site operator at `site`, padding with identities.
pub fn embed(op: &Operator, register: &SpinRegister, site: usize) -> Result<Operator> {
    let subsystems = register.subsystems();
    let target = subsystems.get(site).ok_or_else(|| {
        Error::invalid(format!(
            "site {site} out of range for a register of {} subsystems",
            subsystems.len()
        ))
    })?;
    if op.dim() != target.multiplicity() {
        return Err(Error::DimensionMismatch {
            expected: target.multiplicity(),
            actual: op.dim(),
        });
    }
    let factors: Vec<Operator> = subsystems
        .iter()
        .enumerate()
        .map(|(k, s)| {
            if k == site {
                op.clone()
            } else {
                Operator::identity(s.multiplicity())
            }
        })
        .collect();
    let mut out = kron_chain(&factors)?;
    out.hermitian = op.hermitian;
    Ok(out)
}

/// Left-associated Kronecker product of a non-empty operator list.
pub fn kron_chain(ops: &[Operator]) -> Result<Operator> {
    let (first, rest) = ops
        .split_first()
        .ok_or_else(|| Error::invalid("kron_chain needs at least one operator"))?;
    let mut acc = first.matrix.clone();
    let mut hermitian = first.hermitian;
    for op in rest {
        acc = acc.kronecker(&op.matrix);
        hermitian &= op.hermitian;
    }
    Ok(Operator {
        matrix: acc,
        hermitian,
    })
}

/// Spin operators of every register site, embedded in the full space.
#[derive(Clone, Debug)]
pub struct EmbeddedSpins {
    pub register: SpinRegister,
    pub sites: Vec<SpinMatrices>,
}

impl EmbeddedSpins {
    pub fn new(register: &SpinRegister) -> Result<Self> {
        let sites = register
            .subsystems()
            .iter()
            .enumerate()
            .map(|(k, &s)| {
                let local = spin_matrices(s);
                Ok(SpinMatrices {
                    sx: embed(&local.sx, register, k)?,
                    sy: embed(&local.sy, register, k)?,
                    sz: embed(&local.sz, register, k)?,
                    splus: embed(&local.splus, register, k)?,
                    sminus: embed(&local.sminus, register, k)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EmbeddedSpins {
            register: register.clone(),
            sites,
        })
    }

    pub fn electron(&self) -> &SpinMatrices {
        &self.sites[0]
    }

    pub fn nucleus(&self, j: usize) -> &SpinMatrices {
        &self.sites[j + 1]
    }

    pub fn nuclei_count(&self) -> usize {
        self.sites.len() - 1
    }
}
