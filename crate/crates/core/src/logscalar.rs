use std::cmp::Ordering;
use std::fmt;
use std::ops::{Div, Mul, Neg};

use serde::{Deserialize, Serialize};

/// A real number stored as sign and natural log of its magnitude.
///
/// Partition functions of large lattices overflow every floating range, so
/// all cross-level accumulation happens in this representation.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogScalar {
    sign: i8,
    log_abs: f64,
}

impl fmt::Debug for LogScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sign {
            0 => write!(f, "0"),
            1 => write!(f, "exp({})", self.log_abs),
            _ => write!(f, "-exp({})", self.log_abs),
        }
    }
}

impl Default for LogScalar {
    fn default() -> Self {
        Self::one()
    }
}

impl LogScalar {
    pub const fn zero() -> Self {
        Self { sign: 0, log_abs: f64::NEG_INFINITY }
    }

    pub const fn one() -> Self {
        Self { sign: 1, log_abs: 0.0 }
    }

    /// `sign · exp(log_abs)`; a zero sign forces the canonical zero.
    pub fn new(sign: i8, log_abs: f64) -> Self {
        if sign == 0 || log_abs == f64::NEG_INFINITY {
            Self::zero()
        } else {
            Self { sign: sign.signum(), log_abs }
        }
    }

    pub fn from_log(log_abs: f64) -> Self {
        Self::new(1, log_abs)
    }

    pub fn from_f64(v: f64) -> Self {
        if v == 0.0 {
            Self::zero()
        } else {
            Self { sign: if v > 0.0 { 1 } else { -1 }, log_abs: v.abs().ln() }
        }
    }

    pub fn sign(&self) -> i8 {
        self.sign
    }

    pub fn log_abs(&self) -> f64 {
        self.log_abs
    }

    pub fn is_zero(&self) -> bool {
        self.sign == 0
    }

    pub fn to_f64(&self) -> f64 {
        self.sign as f64 * self.log_abs.exp()
    }

    /// Raises to a real power; only defined for positive values (and zero
    /// with a positive exponent).
    pub fn powf(&self, p: f64) -> Self {
        match self.sign {
            0 => Self::zero(),
            1 => Self { sign: 1, log_abs: self.log_abs * p },
            _ => panic!("powf of a negative LogScalar"),
        }
    }

    /// Sum of two values, done in the log domain.
    pub fn add(&self, other: &Self) -> Self {
        if self.sign == 0 {
            return *other;
        }
        if other.sign == 0 {
            return *self;
        }
        let (big, small) = if self.log_abs >= other.log_abs { (self, other) } else { (other, self) };
        let r = (small.log_abs - big.log_abs).exp();
        if big.sign == small.sign {
            Self { sign: big.sign, log_abs: big.log_abs + r.ln_1p() }
        } else if r == 1.0 {
            Self::zero()
        } else {
            Self { sign: big.sign, log_abs: big.log_abs + (-r).ln_1p() }
        }
    }

    /// Ratio `self / other` as a plain number, the form every observable takes.
    pub fn ratio(&self, other: &Self) -> f64 {
        (*self / *other).to_f64()
    }
}

impl Mul for LogScalar {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        if self.sign == 0 || rhs.sign == 0 {
            return Self::zero();
        }
        Self { sign: self.sign * rhs.sign, log_abs: self.log_abs + rhs.log_abs }
    }
}

impl Div for LogScalar {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        assert!(rhs.sign != 0, "division by a zero LogScalar");
        if self.sign == 0 {
            return Self::zero();
        }
        Self { sign: self.sign * rhs.sign, log_abs: self.log_abs - rhs.log_abs }
    }
}

impl Neg for LogScalar {
    type Output = Self;
    fn neg(self) -> Self {
        Self { sign: -self.sign, log_abs: self.log_abs }
    }
}

impl PartialOrd for LogScalar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        let key = |s: &Self| -> (i8, f64) { (s.sign, if s.sign >= 0 { s.log_abs } else { -s.log_abs }) };
        let (a, b) = (key(self), key(other));
        match a.0.cmp(&b.0) {
            Ordering::Equal if a.0 == 0 => Some(Ordering::Equal),
            Ordering::Equal => a.1.partial_cmp(&b.1),
            o => Some(o),
        }
    }
}
