//! Non-leap-year hourly calendar helpers.

use std::fmt;
use std::str::FromStr;

pub const HOURS_PER_DAY: usize = 24;
pub const HOURS_PER_YEAR: usize = 8760;

pub const MONTH_DAYS: [usize; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
pub const MONTH_NAMES: [&str; 12] = [
    "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
];

/// First hour-of-year of month `month` (0-based), or 8760 for `month == 12`.
pub fn month_start_hour(month: usize) -> usize {
    MONTH_DAYS[..month.min(12)].iter().sum::<usize>() * HOURS_PER_DAY
}

/// Month index (0-based) containing `hour` of the year.
pub fn month_of_hour(hour: usize) -> usize {
    let mut end = 0;
    for (m, days) in MONTH_DAYS.iter().enumerate() {
        end += days * HOURS_PER_DAY;
        if hour < end {
            return m;
        }
    }
    11
}

/// A calendar day in a non-leap year.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Date {
    pub month: u8,
    pub day: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid date `{0}`: expected MM-DD in a non-leap year")]
pub struct DateParseError(pub String);

impl Date {
    pub fn new(month: u8, day: u8) -> Option<Self> {
        if !(1..=12).contains(&month) || day == 0 || day as usize > MONTH_DAYS[month as usize - 1] {
            return None;
        }
        Some(Self { month, day })
    }

    pub fn day_of_year(self) -> usize {
        MONTH_DAYS[..self.month as usize - 1].iter().sum::<usize>() + self.day as usize - 1
    }

    pub fn first_hour(self) -> usize {
        self.day_of_year() * HOURS_PER_DAY
    }
}

impl FromStr for Date {
    type Err = DateParseError;

    /// Accepts `MM-DD`, or `YYYY-MM-DD` with the year ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || DateParseError(s.to_string());
        let parts: Vec<&str> = s.trim().split('-').collect();
        let (m, d) = match parts.as_slice() {
            [m, d] => (m, d),
            [_, m, d] => (m, d),
            _ => return Err(err()),
        };
        let month: u8 = m.parse().map_err(|_| err())?;
        let day: u8 = d.parse().map_err(|_| err())?;
        Date::new(month, day).ok_or_else(err)
    }
}

impl fmt::Display for Date {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}-{:02}", self.month, self.day)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn month_boundaries() {
        assert_eq!(month_start_hour(0), 0);
        assert_eq!(month_start_hour(1), 744);
        assert_eq!(month_start_hour(12), HOURS_PER_YEAR);
        assert_eq!(month_of_hour(743), 0);
        assert_eq!(month_of_hour(744), 1);
        assert_eq!(month_of_hour(8759), 11);
    }

    #[test]
    fn parse_dates() {
        let d: Date = "07-15".parse().unwrap();
        assert_eq!(d.day_of_year(), 195);
        assert_eq!("2023-02-01".parse::<Date>().unwrap().first_hour(), 744);
        assert!("02-29".parse::<Date>().is_err());
        assert!("13-01".parse::<Date>().is_err());
        assert!("junk".parse::<Date>().is_err());
    }
}
