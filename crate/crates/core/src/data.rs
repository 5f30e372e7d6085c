//! Hourly exogenous series: farm load, PV generation and time-of-use price.
//!
//! A [`YearSeries`] is 8760 validated [`HourlyRecord`]s plus the PV nameplate
//! capacity and the three ascending tariff tiers the prices are drawn from.
//! Series come either from CSV (`hour,load_kwh,pv_kwh,price`) or from the
//! seeded synthetic generator.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calendar::{month_start_hour, HOURS_PER_DAY, HOURS_PER_YEAR};

pub const CSV_HEADER: [&str; 4] = ["hour", "load_kwh", "pv_kwh", "price"];

/// First hour of the training window (Jan 1).
pub const TRAIN_START: usize = 0;
/// One past the last training hour: Jan 1 to Jan 30 inclusive.
pub const TRAIN_END: usize = 30 * HOURS_PER_DAY;
/// First test hour (Feb 1). Jan 31 belongs to neither split.
pub const TEST_START: usize = 31 * HOURS_PER_DAY;
pub const TEST_END: usize = HOURS_PER_YEAR;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("data file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("bad CSV header: expected `hour,load_kwh,pv_kwh,price`, found `{0}`")]
    BadHeader(String),
    #[error("expected 8760 data rows, found {0}")]
    RowCount(usize),
    #[error("line {line}: field `{column}` is not a number: `{value}`")]
    NonNumericField {
        line: usize,
        column: &'static str,
        value: String,
    },
    #[error("line {line}: field `{column}` is negative ({value})")]
    NegativeValue {
        line: usize,
        column: &'static str,
        value: f64,
    },
    #[error("line {line}: price must be positive, found {value}")]
    NonPositivePrice { line: usize, value: f64 },
    #[error(
        "line {line}: hour index {found} breaks the consecutive sequence (expected {expected})"
    )]
    BadIndex {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("found {0} distinct prices; a three-tier tariff allows at most 3")]
    MoreThanThreeDistinctPrices(usize),
    #[error("found {0} distinct prices; a three-tier tariff needs exactly 3")]
    TooFewDistinctPrices(usize),
    #[error("tariff tiers must be three strictly ascending positive prices, got {0:?}")]
    BadTiers([f64; 3]),
    #[error("hour {hour}: pv_kwh {pv_kwh} exceeds PV capacity {capacity_kw} kW")]
    PvAboveCapacity {
        hour: usize,
        pv_kwh: f64,
        capacity_kw: f64,
    },
    #[error("hour {hour}: price {price} is not one of the tariff tiers")]
    PriceNotInTiers { hour: usize, price: f64 },
    #[error("hour {0}: non-finite value")]
    NonFinite(usize),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One hour of exogenous data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourlyRecord {
    /// Hour of the year, `0..8760`.
    pub index: usize,
    pub load_kwh: f64,
    pub pv_kwh: f64,
    pub price: f64,
}

impl HourlyRecord {
    pub fn hour_of_day(&self) -> usize {
        self.index % HOURS_PER_DAY
    }

    /// Demand left after PV, kWh.
    pub fn net_load(&self) -> f64 {
        (self.load_kwh - self.pv_kwh).max(0.0)
    }
}

/// Three strictly ascending tariff levels: night, day, peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct TariffTiers([f64; 3]);

impl TariffTiers {
    pub fn new(tiers: [f64; 3]) -> Result<Self, DataError> {
        let ok = tiers.iter().all(|p| p.is_finite() && *p > 0.0)
            && tiers[0] < tiers[1]
            && tiers[1] < tiers[2];
        if ok {
            Ok(Self(tiers))
        } else {
            Err(DataError::BadTiers(tiers))
        }
    }

    pub fn prices(&self) -> [f64; 3] {
        self.0
    }

    pub fn price(&self, tier: usize) -> f64 {
        self.0[tier]
    }

    /// Tier index of an exact tariff price.
    pub fn tier_of(&self, price: f64) -> Option<usize> {
        self.0.iter().position(|p| *p == price)
    }
}

impl Default for TariffTiers {
    fn default() -> Self {
        Self([0.08, 0.15, 0.30])
    }
}

impl TryFrom<[f64; 3]> for TariffTiers {
    type Error = DataError;
    fn try_from(v: [f64; 3]) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<TariffTiers> for [f64; 3] {
    fn from(t: TariffTiers) -> Self {
        t.0
    }
}

/// A validated non-leap year of hourly records.
#[derive(Debug, Clone, PartialEq)]
pub struct YearSeries {
    records: Vec<HourlyRecord>,
    pv_capacity_kw: f64,
    tiers: TariffTiers,
}

impl YearSeries {
    pub fn new(
        records: Vec<HourlyRecord>,
        pv_capacity_kw: f64,
        tiers: TariffTiers,
    ) -> Result<Self, DataError> {
        if records.len() != HOURS_PER_YEAR {
            return Err(DataError::RowCount(records.len()));
        }
        for (i, r) in records.iter().enumerate() {
            if r.index != i {
                return Err(DataError::BadIndex {
                    line: i + 2,
                    expected: i,
                    found: r.index,
                });
            }
            if !(r.load_kwh.is_finite() && r.pv_kwh.is_finite() && r.price.is_finite()) {
                return Err(DataError::NonFinite(i));
            }
            if r.load_kwh < 0.0 {
                return Err(DataError::NegativeValue {
                    line: i + 2,
                    column: "load_kwh",
                    value: r.load_kwh,
                });
            }
            if r.pv_kwh < 0.0 {
                return Err(DataError::NegativeValue {
                    line: i + 2,
                    column: "pv_kwh",
                    value: r.pv_kwh,
                });
            }
            if r.pv_kwh > pv_capacity_kw {
                return Err(DataError::PvAboveCapacity {
                    hour: i,
                    pv_kwh: r.pv_kwh,
                    capacity_kw: pv_capacity_kw,
                });
            }
            if tiers.tier_of(r.price).is_none() {
                return Err(DataError::PriceNotInTiers {
                    hour: i,
                    price: r.price,
                });
            }
        }
        Ok(Self {
            records,
            pv_capacity_kw,
            tiers,
        })
    }

    pub fn records(&self) -> &[HourlyRecord] {
        &self.records
    }

    pub fn pv_capacity_kw(&self) -> f64 {
        self.pv_capacity_kw
    }

    pub fn tiers(&self) -> &TariffTiers {
        &self.tiers
    }

    /// Tier index of the price at `record`; every price is a tier by construction.
    pub fn tier_of(&self, record: &HourlyRecord) -> usize {
        self.tiers
            .tier_of(record.price)
            .expect("validated series price outside tiers")
    }

    pub fn total_load(&self) -> f64 {
        self.records.iter().map(|r| r.load_kwh).sum()
    }

    /// Records of month `month` (0-based).
    pub fn month(&self, month: usize) -> &[HourlyRecord] {
        &self.records[month_start_hour(month)..month_start_hour(month + 1)]
    }
}

/// Train/test views into one series.
#[derive(Debug, Clone, Copy)]
pub struct DatasetSplit<'a> {
    pub train: &'a [HourlyRecord],
    pub test: &'a [HourlyRecord],
}

/// January 1–30 for training, February–December for testing.
pub fn split(series: &YearSeries) -> DatasetSplit<'_> {
    DatasetSplit {
        train: &series.records[TRAIN_START..TRAIN_END],
        test: &series.records[TEST_START..TEST_END],
    }
}

/// Reads a CSV series; PV capacity is taken as the largest observed `pv_kwh`.
pub fn load_csv(path: impl AsRef<Path>) -> Result<YearSeries, DataError> {
    load_csv_with_capacity(path, None)
}

pub fn load_csv_with_capacity(
    path: impl AsRef<Path>,
    pv_capacity_kw: Option<f64>,
) -> Result<YearSeries, DataError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().map(str::trim).ne(CSV_HEADER.iter().copied()) {
        return Err(DataError::BadHeader(
            header.iter().collect::<Vec<_>>().join(","),
        ));
    }

    let mut records = Vec::with_capacity(HOURS_PER_YEAR);
    for (row, result) in reader.records().enumerate() {
        let rec = result?;
        let line = row + 2;
        let field = |col: usize| rec.get(col).unwrap_or("").trim();
        let number = |col: usize| -> Result<f64, DataError> {
            let raw = field(col);
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::NonNumericField {
                    line,
                    column: CSV_HEADER[col],
                    value: raw.to_string(),
                })
        };
        let index: usize = field(0).parse().map_err(|_| DataError::NonNumericField {
            line,
            column: "hour",
            value: field(0).to_string(),
        })?;
        let load_kwh = number(1)?;
        let pv_kwh = number(2)?;
        let price = number(3)?;
        for (column, value) in [("load_kwh", load_kwh), ("pv_kwh", pv_kwh)] {
            if value < 0.0 {
                return Err(DataError::NegativeValue {
                    line,
                    column,
                    value,
                });
            }
        }
        if price <= 0.0 {
            return Err(DataError::NonPositivePrice { line, value: price });
        }
        if index != row {
            return Err(DataError::BadIndex {
                line,
                expected: row,
                found: index,
            });
        }
        records.push(HourlyRecord {
            index,
            load_kwh,
            pv_kwh,
            price,
        });
    }
    if records.len() != HOURS_PER_YEAR {
        return Err(DataError::RowCount(records.len()));
    }

    let mut prices: Vec<f64> = records.iter().map(|r| r.price).collect();
    prices.sort_by(f64::total_cmp);
    prices.dedup();
    match prices.len() {
        3 => {}
        n if n > 3 => return Err(DataError::MoreThanThreeDistinctPrices(n)),
        n => return Err(DataError::TooFewDistinctPrices(n)),
    }
    let tiers = TariffTiers::new([prices[0], prices[1], prices[2]])?;
    let capacity =
        pv_capacity_kw.unwrap_or_else(|| records.iter().map(|r| r.pv_kwh).fold(0.0, f64::max));
    YearSeries::new(records, capacity, tiers)
}

/// Writes the series with shortest round-trip float formatting and LF endings.
pub fn save_csv(series: &YearSeries, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_csv(series, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_csv<W: Write>(series: &YearSeries, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{}", CSV_HEADER.join(","))?;
    for r in &series.records {
        writeln!(out, "{},{},{},{}", r.index, r.load_kwh, r.pv_kwh, r.price)?;
    }
    Ok(())
}

/// Hour-of-day to tariff tier (0 = cheapest, 2 = most expensive).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct TouSchedule([usize; HOURS_PER_DAY]);

impl TouSchedule {
    pub fn new(tiers: [usize; HOURS_PER_DAY]) -> Option<Self> {
        tiers.iter().all(|t| *t < 3).then_some(Self(tiers))
    }

    pub fn tier_at(&self, hour_of_day: usize) -> usize {
        self.0[hour_of_day % HOURS_PER_DAY]
    }
}

impl Default for TouSchedule {
    /// Night 22–06, morning peak 06–09, day 09–17, evening peak 17–21, shoulder 21–22.
    fn default() -> Self {
        let mut t = [1; HOURS_PER_DAY];
        for (h, tier) in t.iter_mut().enumerate() {
            *tier = match h {
                0..=5 | 22..=23 => 0,
                6..=8 | 17..=20 => 2,
                _ => 1,
            };
        }
        Self(t)
    }
}

impl TryFrom<Vec<usize>> for TouSchedule {
    type Error = String;
    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        let arr: [usize; HOURS_PER_DAY] = v
            .try_into()
            .map_err(|v: Vec<usize>| format!("ToU schedule needs 24 entries, got {}", v.len()))?;
        Self::new(arr).ok_or_else(|| "ToU tier indices must be 0, 1 or 2".to_string())
    }
}

impl From<TouSchedule> for Vec<usize> {
    fn from(s: TouSchedule) -> Self {
        s.0.to_vec()
    }
}

/// Parameters of the synthetic dairy-farm year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub annual_load_kwh: f64,
    pub pv_capacity_kw: f64,
    pub tiers: TariffTiers,
    pub schedule: TouSchedule,
    /// Load floor between milking humps, as a fraction of the hump height.
    pub base_load_frac: f64,
    /// Hours (of day) of the morning and evening milking peaks.
    pub milking_hours: [f64; 2],
    pub milking_width_h: f64,
    /// Relative std-dev of the multiplicative hourly load noise.
    pub load_noise: f64,
    /// Seasonal PV amplitude in mid-winter relative to mid-summer.
    pub pv_winter_frac: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            annual_load_kwh: 261_000.0,
            pv_capacity_kw: 20.0,
            tiers: TariffTiers::default(),
            schedule: TouSchedule::default(),
            base_load_frac: 0.18,
            milking_hours: [6.5, 17.5],
            milking_width_h: 1.5,
            load_noise: 0.1,
            pv_winter_frac: 0.15,
        }
    }
}

const SUMMER_SOLSTICE_DAY: f64 = 171.0;

/// Seasonal cosine: 1 at the summer solstice, -1 half a year away.
fn season(day: usize) -> f64 {
    (2.0 * PI * (day as f64 - SUMMER_SOLSTICE_DAY) / 365.0).cos()
}

/// Seeded synthetic year: bell-shaped seasonal PV, double-hump milking load, ToU prices.
///
/// The load is rescaled so its annual sum equals `annual_load_kwh`.
pub fn generate_synthetic(seed: u64, cfg: &SyntheticConfig) -> Result<YearSeries, DataError> {
    assert!(cfg.annual_load_kwh > 0.0 && cfg.pv_capacity_kw > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.load_noise.max(0.0)).expect("finite std-dev");

    let days = HOURS_PER_YEAR / HOURS_PER_DAY;
    let mut load = Vec::with_capacity(HOURS_PER_YEAR);
    let mut pv = Vec::with_capacity(HOURS_PER_YEAR);
    let width2 = 2.0 * cfg.milking_width_h * cfg.milking_width_h;
    for day in 0..days {
        let s = season(day);
        // Finnish-latitude day length: roughly 6 h in December, 19 h in June.
        let day_length = 12.5 + 6.5 * s;
        let sunrise = 12.5 - day_length / 2.0;
        let amplitude = cfg.pv_winter_frac + (1.0 - cfg.pv_winter_frac) * 0.5 * (1.0 + s);
        let clearness = rng.gen_range(0.35..=1.0);
        // Slightly heavier demand in winter (lighting, water heating).
        let load_season = 1.0 - 0.08 * s;
        for hod in 0..HOURS_PER_DAY {
            let t = hod as f64 + 0.5;
            let bell = if t > sunrise && t < sunrise + day_length {
                (PI * (t - sunrise) / day_length).sin().powf(1.5)
            } else {
                0.0
            };
            let gen = (cfg.pv_capacity_kw * amplitude * clearness * bell).min(cfg.pv_capacity_kw);
            pv.push(gen);

            let humps: f64 = cfg
                .milking_hours
                .iter()
                .map(|c| (-(t - c).powi(2) / width2).exp())
                .sum();
            let shape = cfg.base_load_frac + humps;
            let jitter = (1.0 + noise.sample(&mut rng)).max(0.2);
            load.push(shape * load_season * jitter);
        }
    }
    let scale = cfg.annual_load_kwh / load.iter().sum::<f64>();

    let records = (0..HOURS_PER_YEAR)
        .map(|i| HourlyRecord {
            index: i,
            load_kwh: load[i] * scale,
            pv_kwh: pv[i],
            price: cfg.tiers.price(cfg.schedule.tier_at(i % HOURS_PER_DAY)),
        })
        .collect();
    YearSeries::new(records, cfg.pv_capacity_kw, cfg.tiers)
}
