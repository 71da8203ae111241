use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loading of one bus during one timestep, in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BusLoad {
    pub p_load_kw: f64,
    pub q_load_kvar: f64,
    pub p_gen_kw: f64,
}

/// Dense `timestep x bus` loading series. Buses are the non-root feeder
/// buses `1..=n_buses`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSeries {
    n_buses: usize,
    steps: Vec<Vec<BusLoad>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    t: usize,
    bus: usize,
    p_load_kw: f64,
    q_load_kvar: f64,
    p_gen_kw: f64,
}

impl ProfileSeries {
    pub fn new(n_buses: usize, steps: Vec<Vec<BusLoad>>) -> Result<Self> {
        for (t, row) in steps.iter().enumerate() {
            if row.len() != n_buses {
                return Err(Error::MissingProfileCell {
                    t,
                    bus: row.len().min(n_buses) + 1,
                });
            }
            for (j, l) in row.iter().enumerate() {
                if ![l.p_load_kw, l.q_load_kvar, l.p_gen_kw].iter().all(|x| x.is_finite()) {
                    return Err(Error::InvalidProblem(format!(
                        "non-finite profile value at timestep {t}, bus {}",
                        j + 1
                    )));
                }
                if l.p_gen_kw < 0.0 {
                    return Err(Error::InvalidProblem(format!(
                        "negative generation at timestep {t}, bus {}",
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { n_buses, steps })
    }

    /// The same loading at every bus for `timesteps` steps.
    pub fn constant(n_buses: usize, timesteps: usize, load: BusLoad) -> Result<Self> {
        Self::new(n_buses, vec![vec![load; n_buses]; timesteps])
    }

    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn at(&self, t: usize) -> &[BusLoad] {
        &self.steps[t]
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        self.write_to(&mut w)?;
        let bytes = w.into_inner().map_err(|e| Error::io("<memory>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write_to<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        if self.steps.is_empty() {
            w.write_record(["t", "bus", "p_load_kw", "q_load_kvar", "p_gen_kw"])?;
        }
        for (t, row) in self.steps.iter().enumerate() {
            for (j, l) in row.iter().enumerate() {
                w.serialize(Row {
                    t,
                    bus: j + 1,
                    p_load_kw: l.p_load_kw,
                    q_load_kvar: l.q_load_kvar,
                    p_gen_kw: l.p_gen_kw,
                })?;
            }
        }
        Ok(())
    }

    pub fn from_csv_str(text: &str, source: &Path) -> Result<Self> {
        Self::read_from(csv::Reader::from_reader(text.as_bytes()), source)
    }

    fn read_from<R: std::io::Read>(mut r: csv::Reader<R>, source: &Path) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            path: source.to_path_buf(),
            message,
        };
        let headers = r.headers()?.clone();
        let expected = ["t", "bus", "p_load_kw", "q_load_kvar", "p_gen_kw"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(parse_err(format!(
                "expected header `{}`, found `{}`",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut cells: Vec<Vec<Option<BusLoad>>> = Vec::new();
        let mut max_bus = 0;
        for (i, rec) in r.deserialize::<Row>().enumerate() {
            let row = rec.map_err(|e| parse_err(format!("record {}: {e}", i + 1)))?;
            if row.bus == 0 {
                return Err(parse_err(format!(
                    "record {}: bus 0 is the substation and carries no profile",
                    i + 1
                )));
            }
            if cells.len() <= row.t {
                cells.resize(row.t + 1, Vec::new());
            }
            let slot = &mut cells[row.t];
            if slot.len() < row.bus {
                slot.resize(row.bus, None);
            }
            if slot[row.bus - 1].is_some() {
                return Err(parse_err(format!(
                    "record {}: duplicate entry for t={}, bus={}",
                    i + 1,
                    row.t,
                    row.bus
                )));
            }
            slot[row.bus - 1] = Some(BusLoad {
                p_load_kw: row.p_load_kw,
                q_load_kvar: row.q_load_kvar,
                p_gen_kw: row.p_gen_kw,
            });
            max_bus = max_bus.max(row.bus);
        }
        let mut steps = Vec::with_capacity(cells.len());
        for (t, mut slot) in cells.into_iter().enumerate() {
            slot.resize(max_bus, None);
            let row = slot
                .into_iter()
                .enumerate()
                .map(|(j, c)| c.ok_or(Error::MissingProfileCell { t, bus: j + 1 }))
                .collect::<Result<Vec<_>>>()?;
            steps.push(row);
        }
        Self::new(max_bus, steps)
    }
}

/// Read a `t,bus,p_load_kw,q_load_kvar,p_gen_kw` CSV. Every `(t, bus)` cell
/// of the grid must be present exactly once.
pub fn load_profiles(path: &Path) -> Result<ProfileSeries> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ProfileSeries::read_from(csv::Reader::from_reader(file), path)
}

/// Shape of the built-in daily residential profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticProfile {
    pub minutes: usize,
    pub homes_per_bus: usize,
    /// Solar output of one home at its midday peak.
    pub solar_peak_kw: f64,
    /// Sunrise and sunset, hours.
    pub sunrise_h: f64,
    pub sunset_h: f64,
    /// Overnight load of one home.
    pub base_load_kw: f64,
    pub morning_peak_kw: f64,
    pub evening_peak_kw: f64,
    /// Reactive load as a fraction of active load.
    pub q_ratio: f64,
    /// Standard deviation of the additive per-home load noise.
    pub noise_kw: f64,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        Self {
            minutes: 1440,
            homes_per_bus: 20,
            solar_peak_kw: 3.5,
            sunrise_h: 6.0,
            sunset_h: 20.0,
            base_load_kw: 0.5,
            morning_peak_kw: 0.6,
            evening_peak_kw: 1.6,
            q_ratio: 0.3,
            noise_kw: 0.05,
        }
    }
}

impl SyntheticProfile {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("solar_peak_kw", self.solar_peak_kw),
            ("base_load_kw", self.base_load_kw),
            ("morning_peak_kw", self.morning_peak_kw),
            ("evening_peak_kw", self.evening_peak_kw),
            ("q_ratio", self.q_ratio),
            ("noise_kw", self.noise_kw),
        ];
        for (field, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(
                    format!("profiles.{field}"),
                    format!("must be a nonnegative number, got {v}"),
                ));
            }
        }
        if self.minutes == 0 || self.homes_per_bus == 0 {
            return Err(Error::config("profiles", "minutes and homes_per_bus must be positive"));
        }
        if !(0.0 <= self.sunrise_h && self.sunrise_h < self.sunset_h && self.sunset_h <= 24.0) {
            return Err(Error::config("profiles", "need 0 <= sunrise_h < sunset_h <= 24"));
        }
        Ok(())
    }

    /// Solar output of one home at hour `h`: a half sine between sunrise
    /// and sunset.
    pub fn solar_kw(&self, h: f64) -> f64 {
        if h <= self.sunrise_h || h >= self.sunset_h {
            return 0.0;
        }
        let phase = (h - self.sunrise_h) / (self.sunset_h - self.sunrise_h);
        self.solar_peak_kw * (std::f64::consts::PI * phase).sin()
    }

    /// Mean load of one home at hour `h`: overnight base plus a morning and
    /// a larger evening bump.
    pub fn load_kw(&self, h: f64) -> f64 {
        let bump = |center: f64, width: f64| (-(h - center).powi(2) / (2.0 * width * width)).exp();
        self.base_load_kw + self.morning_peak_kw * bump(7.5, 1.0) + self.evening_peak_kw * bump(19.0, 1.8)
    }

    /// Minute-sampled series for `n_buses` buses. Every home draws its own
    /// additive load noise and a small solar derating; a bus aggregates its
    /// homes. Generation is clipped to `rating_kva[j]` when given.
    pub fn generate(
        &self,
        n_buses: usize,
        rating_kva: Option<&[f64]>,
        rng: &mut ChaCha8Rng,
    ) -> Result<ProfileSeries> {
        self.validate()?;
        let noise = Normal::new(0.0, self.noise_kw).map_err(|e| Error::config("profiles.noise_kw", e.to_string()))?;
        let homes = self.homes_per_bus;
        // per-home solar panel efficiency within a few percent of nominal
        let derate: Vec<f64> = (0..n_buses * homes).map(|_| 1.0 - 0.05 * rng.random::<f64>()).collect();

        let mut steps = Vec::with_capacity(self.minutes);
        for m in 0..self.minutes {
            let h = m as f64 * 24.0 / self.minutes as f64;
            let solar = self.solar_kw(h);
            let load = self.load_kw(h);
            let mut row = Vec::with_capacity(n_buses);
            for j in 0..n_buses {
                let mut p_load = 0.0;
                let mut p_gen = 0.0;
                for k in 0..homes {
                    p_load += (load + noise.sample(rng)).max(0.0);
                    p_gen += solar * derate[j * homes + k];
                }
                if let Some(r) = rating_kva {
                    p_gen = p_gen.min(r[j]);
                }
                row.push(BusLoad {
                    p_load_kw: p_load,
                    q_load_kvar: self.q_ratio * p_load,
                    p_gen_kw: p_gen,
                });
            }
            steps.push(row);
        }
        ProfileSeries::new(n_buses, steps)
    }
}

/// Seeded generator for profile synthesis, independent of the
/// communication RNG of the same scenario seed.
pub(crate) fn profile_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    rng
}
