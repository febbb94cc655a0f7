use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

const MILLICENTS_PER_EUR: f64 = 100_000.0;

/// Amount of money in EUR, held as integer milli-cents.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_millicents(mc: i64) -> Self {
        Money(mc)
    }

    /// Rounds to the nearest milli-cent.
    pub fn from_eur(eur: f64) -> Self {
        Money((eur * MILLICENTS_PER_EUR).round() as i64)
    }

    pub fn millicents(self) -> i64 {
        self.0
    }

    pub fn eur(self) -> f64 {
        self.0 as f64 / MILLICENTS_PER_EUR
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    /// `self - other`, floored at zero.
    pub fn saturating_sub_floor(self, other: Money) -> Money {
        Money((self.0 - other.0).max(0))
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        Money(iter.map(|m| m.0).sum())
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.eur())
    }
}
