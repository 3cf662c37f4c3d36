use serde::{Deserialize, Serialize};
use vns_core::behavior::BehaviorParams;
use vns_core::body::{LedRing, Limits, LED_COUNT, LED_RING_RADIUS};
use vns_core::protocol::ProtocolConfig;
use vns_core::SimTime;

/// Prefix of environment variables that override [`Params`] fields, e.g.
/// `VNS_PARAM_LATENCY=0.02`.
pub const ENV_PREFIX: &str = "VNS_PARAM_";

/// Every tunable of a run. Times and distances are in seconds and meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub latency: f64,
    pub drop_probability: f64,
    pub heartbeat_period: f64,
    pub failure_timeout: f64,
    pub dt_phys: f64,
    pub dt_sense: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub r_sense: f64,
    pub k_leds: usize,
    pub eps_dock: f64,
    pub eps_angle: f64,
    pub r_point: f64,
    pub r_retreat: f64,
    pub hysteresis: f64,
    pub ramp: f64,
    pub stale: f64,
    pub t_recover: f64,
    /// Proportional gain of the go-to-pose controller, 1/s.
    pub nav_gain: f64,
    /// How far a detached body backs away after a split.
    pub separation: f64,
    /// Pose snapshot every this many physics ticks.
    pub snapshot_every: u32,
    pub trace_heartbeats: bool,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            latency: 0.01,
            drop_probability: 0.0,
            heartbeat_period: 0.1,
            failure_timeout: 0.5,
            dt_phys: 0.05,
            dt_sense: 0.1,
            v_max: 0.3,
            omega_max: 1.5,
            r_sense: 2.0,
            k_leds: 3,
            eps_dock: 0.02,
            eps_angle: 0.1,
            r_point: 1.5,
            r_retreat: 0.8,
            hysteresis: 0.1,
            ramp: 0.1,
            stale: 0.5,
            t_recover: 60.0,
            nav_gain: 2.0,
            separation: 0.5,
            snapshot_every: 4,
            trace_heartbeats: false,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ParamError {
    #[error("parameter {0} out of range")]
    OutOfRange(&'static str),
    #[error("unknown parameter {0}")]
    Unknown(String),
    #[error("bad value {value:?} for {key}")]
    BadValue { key: String, value: String },
}

impl Params {
    pub fn validate(&self) -> Result<(), ParamError> {
        let checks: [(&'static str, bool); 12] = [
            ("latency", self.latency > 0.0),
            ("drop_probability", (0.0..=1.0).contains(&self.drop_probability)),
            ("heartbeat_period", self.heartbeat_period > 0.0),
            ("failure_timeout", self.failure_timeout > self.heartbeat_period),
            ("dt_phys", self.dt_phys > 0.0),
            ("dt_sense", self.dt_sense > 0.0),
            ("v_max", self.v_max > 0.0),
            ("omega_max", self.omega_max > 0.0),
            ("k_leds", self.k_leds >= 1),
            ("r_retreat", self.r_retreat > 0.0 && self.r_retreat + self.hysteresis <= self.r_point),
            ("ramp", self.ramp > 0.0),
            ("snapshot_every", self.snapshot_every >= 1),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((name, _)) => Err(ParamError::OutOfRange(name)),
            None => Ok(()),
        }
    }

    /// Applies `VNS_PARAM_*` overrides from `vars`; other variables are
    /// ignored.
    pub fn with_overrides<I, K, V>(&self, vars: I) -> Result<Params, ParamError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut table = toml::Table::try_from(self).expect("params serialize");
        for (k, v) in vars {
            let Some(name) = k.as_ref().strip_prefix(ENV_PREFIX) else { continue };
            let key = name.to_ascii_lowercase();
            let raw = v.as_ref().trim();
            let bad = || ParamError::BadValue { key: key.clone(), value: raw.to_string() };
            let value = match table.get(&key) {
                None => return Err(ParamError::Unknown(key)),
                Some(toml::Value::Float(_)) => toml::Value::Float(raw.parse().map_err(|_| bad())?),
                Some(toml::Value::Integer(_)) => toml::Value::Integer(raw.parse().map_err(|_| bad())?),
                Some(toml::Value::Boolean(_)) => toml::Value::Boolean(raw.parse().map_err(|_| bad())?),
                Some(_) => return Err(bad()),
            };
            table.insert(key, value);
        }
        let out: Params = table.try_into().map_err(|e: toml::de::Error| ParamError::BadValue {
            key: "params".into(),
            value: e.to_string(),
        })?;
        out.validate()?;
        Ok(out)
    }

    pub fn protocol_config(&self) -> ProtocolConfig {
        ProtocolConfig {
            heartbeat_period: SimTime::from_secs(self.heartbeat_period),
            failure_timeout: SimTime::from_secs(self.failure_timeout),
        }
    }

    pub fn behavior(&self) -> BehaviorParams {
        BehaviorParams {
            r_point: self.r_point,
            r_retreat: self.r_retreat,
            h: self.hysteresis,
            h_ramp: self.ramp,
            v_max: self.v_max,
            k_leds: self.k_leds,
            stale: SimTime::from_secs(self.stale),
        }
    }

    pub fn limits(&self) -> Limits {
        Limits { v_max: self.v_max, omega_max: self.omega_max }
    }

    pub fn led_ring(&self) -> LedRing {
        LedRing { count: LED_COUNT, radius: LED_RING_RADIUS }
    }
}
