//! Problem instances: ground users, flight altitude, mission period, speed
//! limit, power budget and the free-space link constants.
//!
//! Everything inside the library is in linear units (Watts, dimensionless
//! gains). Decibel values only appear in the scenario file, see
//! [`ScenarioFile`].

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PlanError, Result};

/// A point on the horizontal plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Point {
        Point::new(self.x + dx, self.y + dy)
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// A multicast planning instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Ground user locations.
    pub users: Vec<Point>,
    /// Fixed flight altitude `H`, meters.
    pub altitude: f64,
    /// Mission period `T`, seconds.
    pub period: f64,
    /// Maximum horizontal speed `V`, m/s.
    pub max_speed: f64,
    /// Average transmit power budget, Watts.
    pub power_ave: f64,
    /// Channel power gain at 1 m (linear).
    pub beta0: f64,
    /// Receiver noise power, Watts.
    pub noise_power: f64,
}

impl Scenario {
    /// Reference SNR `beta0 / noise_power`, per Watt. Always recomputed.
    pub fn gamma0(&self) -> f64 {
        self.beta0 / self.noise_power
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn altitude_sq(&self) -> f64 {
        self.altitude * self.altitude
    }

    /// Same instance with a different mission period.
    pub fn with_period(&self, period: f64) -> Scenario {
        Scenario {
            period,
            ..self.clone()
        }
    }

    /// Same instance with every user shifted by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Scenario {
        Scenario {
            users: self.users.iter().map(|u| u.translated(dx, dy)).collect(),
            ..self.clone()
        }
    }

    /// Checks every scenario invariant without mutating anything.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let mut check = |ok: bool, what: &str| {
            if !ok {
                violations.push(what.to_string());
            }
        };
        check(!self.users.is_empty(), "users non-empty");
        check(
            self.users.iter().all(|u| u.x.is_finite() && u.y.is_finite()),
            "user coordinates finite",
        );
        check(self.altitude > 0.0 && self.altitude.is_finite(), "altitude_H > 0");
        check(self.period > 0.0 && self.period.is_finite(), "period_T > 0");
        check(self.max_speed > 0.0 && self.max_speed.is_finite(), "speed_V > 0");
        check(
            self.power_ave >= 0.0 && self.power_ave.is_finite(),
            "power_ave >= 0",
        );
        check(self.beta0 > 0.0 && self.beta0.is_finite(), "beta0 > 0");
        check(
            self.noise_power > 0.0 && self.noise_power.is_finite(),
            "noise_power > 0",
        );
        ValidationReport { violations }
    }

    /// Like [`Scenario::validate`] but as a `Result`.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_ok() {
            Ok(())
        } else {
            Err(PlanError::InvalidScenario(report.violations))
        }
    }

    /// Axis-aligned box spanned by the user coordinates.
    pub fn user_bounding_box(&self) -> BoundingBox {
        let mut b = BoundingBox {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for u in &self.users {
            b.x_min = b.x_min.min(u.x);
            b.x_max = b.x_max.max(u.x);
            b.y_min = b.y_min.min(u.y);
            b.y_max = b.y_max.max(u.y);
        }
        b
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Scenario> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| PlanError::Parse(e.to_string()))?;
        let scenario = file.into_scenario();
        scenario.ensure_valid()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&ScenarioFile::from_scenario(self)).map_err(|e| PlanError::Parse(e.to_string()))
    }
}

/// Result of [`Scenario::validate`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }
}

/// Converts a power in dBm to Watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

// Decibel values in files are quantized so that load/save reaches a textual
// fixed point after one round trip.
fn quantize_db(db: f64) -> f64 {
    if db.is_finite() {
        (db * 1e9).round() / 1e9
    } else {
        db
    }
}

/// On-disk scenario layout. Units are part of the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub altitude_m: f64,
    pub period_s: f64,
    pub speed_mps: f64,
    pub power_ave_dbm: f64,
    pub beta0_db: f64,
    pub noise_dbm: f64,
    pub users: Vec<[f64; 2]>,
}

impl ScenarioFile {
    pub fn from_scenario(s: &Scenario) -> Self {
        ScenarioFile {
            altitude_m: s.altitude,
            period_s: s.period,
            speed_mps: s.max_speed,
            power_ave_dbm: quantize_db(watts_to_dbm(s.power_ave)),
            beta0_db: quantize_db(linear_to_db(s.beta0)),
            noise_dbm: quantize_db(watts_to_dbm(s.noise_power)),
            users: s.users.iter().map(|u| [u.x, u.y]).collect(),
        }
    }

    pub fn into_scenario(self) -> Scenario {
        Scenario {
            users: self.users.iter().map(|u| Point::new(u[0], u[1])).collect(),
            altitude: self.altitude_m,
            period: self.period_s,
            max_speed: self.speed_mps,
            power_ave: dbm_to_watts(self.power_ave_dbm),
            beta0: db_to_linear(self.beta0_db),
            noise_power: dbm_to_watts(self.noise_dbm),
        }
    }
}

/// Non-geometric parameters used by [`generate_random`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioDefaults {
    pub altitude: f64,
    pub period: f64,
    pub max_speed: f64,
    pub power_ave: f64,
    pub beta0: f64,
    pub noise_power: f64,
}

impl Default for ScenarioDefaults {
    /// 100 m altitude, 30 dBm budget, 20 m/s, -30 dB reference gain and
    /// -50 dBm noise. The 300 s period is a library default.
    fn default() -> Self {
        ScenarioDefaults {
            altitude: 100.0,
            period: 300.0,
            max_speed: 20.0,
            power_ave: dbm_to_watts(30.0),
            beta0: db_to_linear(-30.0),
            noise_power: dbm_to_watts(-50.0),
        }
    }
}

/// Places `k` users uniformly at random in `[0, width] x [0, height]`.
///
/// The output depends only on the arguments.
pub fn generate_random(
    seed: u64,
    k: usize,
    area: (f64, f64),
    defaults: &ScenarioDefaults,
) -> Result<Scenario> {
    if k == 0 {
        return Err(PlanError::InvalidArgument("K must be at least 1".into()));
    }
    let (width, height) = area;
    if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
        return Err(PlanError::InvalidArgument(format!(
            "area sides must be positive, got {width}x{height}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = (0..k)
        .map(|_| Point::new(rng.gen_range(0.0..width), rng.gen_range(0.0..height)))
        .collect();
    let scenario = Scenario {
        users,
        altitude: defaults.altitude,
        period: defaults.period,
        max_speed: defaults.max_speed,
        power_ave: defaults.power_ave,
        beta0: defaults.beta0,
        noise_power: defaults.noise_power,
    };
    scenario.ensure_valid()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Scenario {
        generate_random(1, 10, (1000.0, 1000.0), &ScenarioDefaults::default()).unwrap()
    }

    #[test]
    fn valid_default_scenario() {
        let s = base();
        assert_eq!(s.altitude, 100.0);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn zero_period_is_reported() {
        let s = base().with_period(0.0);
        assert_eq!(s.validate().violations, vec!["period_T > 0".to_string()]);
    }

    #[test]
    fn zero_noise_is_reported() {
        let mut s = base();
        s.noise_power = 0.0;
        assert!(s.validate().violations.contains(&"noise_power > 0".to_string()));
    }

    #[test]
    fn empty_users_rejected() {
        let mut s = base();
        s.users.clear();
        assert!(!s.validate().is_ok());
        assert!(s.ensure_valid().is_err());
    }

    #[test]
    fn bounding_box_two_points() {
        let mut s = base();
        s.users = vec![Point::new(0.0, 0.0), Point::new(1000.0, 1000.0)];
        let b = s.user_bounding_box();
        assert_eq!((b.x_min, b.x_max, b.y_min, b.y_max), (0.0, 1000.0, 0.0, 1000.0));
    }

    #[test]
    fn bounding_box_single_user() {
        let mut s = base();
        s.users = vec![Point::new(300.0, 700.0)];
        let b = s.user_bounding_box();
        assert_eq!((b.x_min, b.x_max, b.y_min, b.y_max), (300.0, 300.0, 700.0, 700.0));
    }

    #[test]
    fn bounding_box_three_users() {
        let mut s = base();
        s.users = vec![
            Point::new(0.0, 0.0),
            Point::new(500.0, -200.0),
            Point::new(-100.0, 400.0),
        ];
        let b = s.user_bounding_box();
        assert_eq!((b.x_min, b.x_max, b.y_min, b.y_max), (-100.0, 500.0, -200.0, 400.0));
    }

    #[test]
    fn generation_is_deterministic() {
        let d = ScenarioDefaults::default();
        let a = generate_random(7, 10, (1000.0, 1000.0), &d).unwrap();
        let b = generate_random(7, 10, (1000.0, 1000.0), &d).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_toml().unwrap(), b.to_toml().unwrap());
        assert_eq!(a.users.len(), 10);
        for u in &a.users {
            assert!((0.0..=1000.0).contains(&u.x) && (0.0..=1000.0).contains(&u.y));
        }
        let c = generate_random(8, 10, (1000.0, 1000.0), &d).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_reference_snr() {
        let s = generate_random(7, 1, (1000.0, 1000.0), &ScenarioDefaults::default()).unwrap();
        assert_eq!(s.users.len(), 1);
        assert!((s.gamma0() - 1e5).abs() < 1e-9 * 1e5);
        assert!((s.power_ave - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_users_is_invalid_argument() {
        let err = generate_random(7, 0, (1000.0, 1000.0), &ScenarioDefaults::default());
        assert!(matches!(err, Err(PlanError::InvalidArgument(_))));
    }

    #[test]
    fn file_uses_decibels() {
        let s = base();
        let text = s.to_toml().unwrap();
        assert!(text.contains("power_ave_dbm = 30.0"));
        assert!(text.contains("beta0_db = -30.0"));
        assert!(text.contains("noise_dbm = -50.0"));
    }

    #[test]
    fn save_load_round_trip() {
        let s = base();
        let text = s.to_toml().unwrap();
        let loaded = Scenario::from_toml(&text).unwrap();
        assert_eq!(loaded.users, s.users);
        assert_eq!(loaded.to_toml().unwrap(), text);
        for (a, b) in [
            (loaded.power_ave, s.power_ave),
            (loaded.beta0, s.beta0),
            (loaded.noise_power, s.noise_power),
        ] {
            assert!((a - b).abs() <= 1e-12 * b);
        }
        assert_eq!(loaded.gamma0(), loaded.beta0 / loaded.noise_power);
    }

    #[test]
    fn load_rejects_invalid_values() {
        let text = base().to_toml().unwrap().replace("period_s = 300.0", "period_s = 0.0");
        assert!(matches!(Scenario::from_toml(&text), Err(PlanError::InvalidScenario(_))));
    }
}
