//! Link description shared by every stage of the pipeline: water optics,
//! source and receiver models, MIMO geometry, modem timing, receiver noise
//! and turbulence strength.
//!
//! A [`Scenario`] is immutable once built. It can be loaded from a TOML file
//! (see [`crate::config`]), constructed from one of the named presets, or
//! deserialized from JSON. [`validate_scenario`] reports every violated
//! invariant instead of stopping at the first one.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Smallest accepted LED semi-angle at half power (1 degree).
pub const MIN_HALF_POWER_ANGLE: f64 = PI / 180.0;

/// Absorption, scattering and extinction coefficients, all in 1/m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaterProperties {
    pub absorption: f64,
    pub scattering: f64,
    pub extinction: f64,
}

impl WaterProperties {
    pub fn new(absorption: f64, scattering: f64) -> Self {
        Self {
            absorption,
            scattering,
            extinction: absorption + scattering,
        }
    }

    /// Single-scattering albedo b/c, the weight kept at each interaction.
    pub fn albedo(&self) -> f64 {
        if self.extinction > 0.0 {
            self.scattering / self.extinction
        } else {
            0.0
        }
    }
}

/// Named water types with tabulated coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WaterType {
    ClearOcean,
    Coastal,
    TurbidHarbor,
}

impl WaterType {
    pub const ALL: [WaterType; 3] = [Self::ClearOcean, Self::Coastal, Self::TurbidHarbor];

    pub fn name(self) -> &'static str {
        match self {
            Self::ClearOcean => "clear-ocean",
            Self::Coastal => "coastal",
            Self::TurbidHarbor => "turbid-harbor",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|w| w.name() == name)
    }

    pub fn properties(self) -> WaterProperties {
        match self {
            Self::ClearOcean => WaterProperties {
                absorption: 0.114,
                scattering: 0.037,
                extinction: 0.151,
            },
            Self::Coastal => WaterProperties {
                absorption: 0.179,
                scattering: 0.219,
                extinction: 0.398,
            },
            Self::TurbidHarbor => WaterProperties {
                absorption: 0.366,
                scattering: 1.824,
                extinction: 2.190,
            },
        }
    }

    /// Default diffuse attenuation coefficient K_d (1/m). These are chosen
    /// inside the 0.04..4 range typical of each water class; they are
    /// configuration defaults, not measured values.
    pub fn default_diffuse_attenuation(self) -> f64 {
        match self {
            Self::ClearOcean => 0.08,
            Self::Coastal => 0.2,
            Self::TurbidHarbor => 1.1,
        }
    }
}

/// Emission pattern of the optical source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SourceKind {
    /// Gaussian-beam laser: half divergence angle (rad) and beam waist
    /// radius (m).
    Collimated {
        half_divergence: f64,
        beam_waist: f64,
    },
    /// Generalized Lambertian LED: semi-angle at half power (rad) and the
    /// derived Lambertian order.
    Lambertian { half_power_angle: f64, order: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub kind: SourceKind,
    /// Wavelength in metres.
    pub wavelength: f64,
}

impl SourceModel {
    pub fn laser(half_divergence: f64, beam_waist: f64, wavelength: f64) -> Self {
        Self {
            kind: SourceKind::Collimated {
                half_divergence,
                beam_waist,
            },
            wavelength,
        }
    }

    pub fn led(half_power_angle: f64, wavelength: f64) -> Result<Self> {
        let order = derive_lambertian_order(half_power_angle)?;
        Ok(Self {
            kind: SourceKind::Lambertian {
                half_power_angle,
                order,
            },
            wavelength,
        })
    }

    pub fn is_collimated(&self) -> bool {
        matches!(self.kind, SourceKind::Collimated { .. })
    }
}

/// One receiving aperture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverModel {
    /// Aperture diameter (m).
    pub aperture_diameter: f64,
    /// Half-angle field of view (rad).
    pub fov: f64,
}

/// Placement of M transmitters and N receivers.
///
/// Elements are laid on a line along y with centre-to-centre spacing
/// `spacing`. Index 0 is always the medial element; odd counts put it on the
/// axis, even counts straddle the axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MimoLayout {
    pub transmitters: usize,
    pub receivers: usize,
    /// Transverse centre-to-centre spacing (m).
    pub spacing: f64,
    /// Link length d0 (m): the receiver plane sits at z = d0.
    pub link_length: f64,
    /// Receiver index each transmitter is aimed at.
    pub pointing: Vec<usize>,
    /// Aperture diameter of the single-receiver reference system (m). Each
    /// of the N receivers gets `reference_aperture / sqrt(N)`.
    pub reference_aperture: f64,
}

impl MimoLayout {
    pub fn new(
        transmitters: usize,
        receivers: usize,
        spacing: f64,
        link_length: f64,
        reference_aperture: f64,
    ) -> Self {
        let pointing = (0..transmitters).map(|i| i % receivers.max(1)).collect();
        Self {
            transmitters,
            receivers,
            spacing,
            link_length,
            pointing,
            reference_aperture,
        }
    }

    /// Per-receiver aperture diameter D0/sqrt(N).
    pub fn receiver_diameter(&self) -> f64 {
        self.reference_aperture / (self.receivers as f64).sqrt()
    }

    pub fn transmitter_offsets(&self) -> Vec<f64> {
        line_offsets(self.transmitters, self.spacing)
    }

    pub fn receiver_offsets(&self) -> Vec<f64> {
        line_offsets(self.receivers, self.spacing)
    }

    pub fn links(&self) -> usize {
        self.transmitters * self.receivers
    }
}

/// Transverse offsets of `count` elements, medial element first.
pub fn line_offsets(count: usize, spacing: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    if count % 2 == 1 {
        out.push(0.0);
        let mut k = 1.0;
        while out.len() < count {
            out.push(k * spacing);
            if out.len() < count {
                out.push(-k * spacing);
            }
            k += 1.0;
        }
    } else {
        let mut k = 0.5;
        while out.len() < count {
            out.push(k * spacing);
            out.push(-k * spacing);
            k += 1.0;
        }
    }
    out
}

/// Bit timing of the BPPM modem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModemConfig {
    /// Bit duration T (s).
    pub bit_duration: f64,
}

impl ModemConfig {
    pub fn from_bit_rate(bit_rate: f64) -> Self {
        Self {
            bit_duration: 1.0 / bit_rate,
        }
    }

    pub fn bit_rate(&self) -> f64 {
        1.0 / self.bit_duration
    }

    /// Chip (half-slot) duration T/2.
    pub fn chip_duration(&self) -> f64 {
        self.bit_duration / 2.0
    }

    /// Electronic bandwidth B = 1/T.
    pub fn bandwidth(&self) -> f64 {
        1.0 / self.bit_duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Electron charge (C).
    pub electron_charge: f64,
    /// Planck constant (J s).
    pub planck: f64,
    /// Boltzmann constant (J/K).
    pub boltzmann: f64,
    /// Speed of light in vacuum (m/s).
    pub light_speed: f64,
    /// Refractive index of water.
    pub refractive_index: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            electron_charge: 1.602_176_634e-19,
            planck: 6.626_070_15e-34,
            boltzmann: 1.380_649e-23,
            light_speed: 299_792_458.0,
            refractive_index: 1.331,
        }
    }
}

impl PhysicalConstants {
    /// Photon group velocity in water (m/s).
    pub fn speed_in_water(&self) -> f64 {
        self.light_speed / self.refractive_index
    }
}

/// Receiver noise parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseEnvironment {
    pub quantum_efficiency: f64,
    /// Equivalent noise temperature (K).
    pub temperature: f64,
    /// Load resistance (ohm).
    pub load_resistance: f64,
    /// Dark current (A).
    pub dark_current: f64,
    /// Diffuse attenuation coefficient K_d (1/m).
    pub diffuse_attenuation: f64,
    /// Water depth of the receiver (m).
    pub depth: f64,
}

impl NoiseEnvironment {
    pub fn for_water(water: WaterType) -> Self {
        Self {
            quantum_efficiency: 0.8,
            temperature: 290.0,
            load_resistance: 100.0,
            dark_current: 1.226e-9,
            diffuse_attenuation: water.default_diffuse_attenuation(),
            depth: 30.0,
        }
    }

    /// Received background power (W): 25.57 nW attenuated by exp(-K_d D_w).
    pub fn background_power(&self) -> f64 {
        25.57e-9 * (-self.depth * self.diffuse_attenuation).exp()
    }

    pub fn responsivity(&self, wavelength: f64, constants: &PhysicalConstants) -> f64 {
        derive_responsivity(self.quantum_efficiency, wavelength, constants)
    }
}

/// Log-amplitude variance of every (i, j) link, row-major over
/// transmitters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadingSpec {
    pub log_amplitude_variance: Vec<f64>,
}

impl FadingSpec {
    pub fn uniform(links: usize, variance: f64) -> Self {
        Self {
            log_amplitude_variance: vec![variance; links],
        }
    }
}

/// Full description of a link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub water: WaterProperties,
    /// Henyey-Greenstein anisotropy of the scattering phase function.
    pub anisotropy: f64,
    pub source: SourceModel,
    pub layout: MimoLayout,
    pub receiver: ReceiverModel,
    pub modem: ModemConfig,
    pub noise: NoiseEnvironment,
    pub fading: FadingSpec,
    pub constants: PhysicalConstants,
}

/// Default HG anisotropy for ocean water.
pub const DEFAULT_ANISOTROPY: f64 = 0.924;

#[derive(Serialize)]
struct TransportKey<'a> {
    water: &'a WaterProperties,
    anisotropy: f64,
    refractive_index: f64,
    light_speed: f64,
    source: &'a SourceModel,
    layout: &'a MimoLayout,
    receiver: &'a ReceiverModel,
}

impl Scenario {
    /// Builds a scenario with table defaults for everything not given.
    pub fn builder(water: WaterType, source: SourceModel, link_length: f64) -> ScenarioBuilder {
        ScenarioBuilder::new(water, source, link_length)
    }

    pub fn responsivity(&self) -> f64 {
        self.noise
            .responsivity(self.source.wavelength, &self.constants)
    }

    /// Hash of everything that affects photon transport.
    pub fn transport_hash(&self) -> String {
        let key = TransportKey {
            water: &self.water,
            anisotropy: self.anisotropy,
            refractive_index: self.constants.refractive_index,
            light_speed: self.constants.light_speed,
            source: &self.source,
            layout: &self.layout,
            receiver: &self.receiver,
        };
        digest(&serde_json::to_vec(&key).expect("scenario serializes"))
    }

    /// Hash of the full scenario.
    pub fn hash(&self) -> String {
        digest(&serde_json::to_vec(self).expect("scenario serializes"))
    }

    pub fn fading_variance(&self, tx: usize, rx: usize) -> f64 {
        self.fading.log_amplitude_variance[tx * self.layout.receivers + rx]
    }

    /// Copy with a different M x N configuration, keeping everything else.
    /// Pointing is reset to the default and fading is spread uniformly
    /// using the first link's variance.
    pub fn with_configuration(&self, transmitters: usize, receivers: usize) -> Scenario {
        let mut s = self.clone();
        s.layout = MimoLayout::new(
            transmitters,
            receivers,
            self.layout.spacing,
            self.layout.link_length,
            self.layout.reference_aperture,
        );
        s.receiver.aperture_diameter = s.layout.receiver_diameter();
        let v = self.fading.log_amplitude_variance.first().copied().unwrap_or(0.0);
        s.fading = FadingSpec::uniform(transmitters * receivers, v);
        s.name = format!("{}-{}x{}", self.name, transmitters, receivers);
        s
    }
}

fn digest(bytes: &[u8]) -> String {
    let out = Sha256::digest(bytes);
    hex::encode(&out[..16])
}

pub struct ScenarioBuilder {
    scenario: Scenario,
}

impl ScenarioBuilder {
    fn new(water: WaterType, source: SourceModel, link_length: f64) -> Self {
        let layout = MimoLayout::new(1, 1, 0.25, link_length, 0.20);
        let receiver = ReceiverModel {
            aperture_diameter: layout.receiver_diameter(),
            fov: 40f64.to_radians(),
        };
        Self {
            scenario: Scenario {
                name: "custom".into(),
                water: water.properties(),
                anisotropy: DEFAULT_ANISOTROPY,
                source,
                layout,
                receiver,
                modem: ModemConfig::from_bit_rate(1e9),
                noise: NoiseEnvironment::for_water(water),
                fading: FadingSpec::uniform(1, 0.16),
                constants: PhysicalConstants::default(),
            },
        }
    }

    pub fn name(mut self, name: &str) -> Self {
        self.scenario.name = name.into();
        self
    }

    pub fn configuration(mut self, transmitters: usize, receivers: usize) -> Self {
        let l = &self.scenario.layout;
        self.scenario.layout =
            MimoLayout::new(transmitters, receivers, l.spacing, l.link_length, l.reference_aperture);
        self.scenario.receiver.aperture_diameter = self.scenario.layout.receiver_diameter();
        let v = self.scenario.fading.log_amplitude_variance[0];
        self.scenario.fading = FadingSpec::uniform(transmitters * receivers, v);
        self
    }

    pub fn bit_rate(mut self, bit_rate: f64) -> Self {
        self.scenario.modem = ModemConfig::from_bit_rate(bit_rate);
        self
    }

    pub fn fading(mut self, log_amplitude_variance: f64) -> Self {
        let links = self.scenario.layout.links();
        self.scenario.fading = FadingSpec::uniform(links, log_amplitude_variance);
        self
    }

    pub fn anisotropy(mut self, g: f64) -> Self {
        self.scenario.anisotropy = g;
        self
    }

    pub fn build(self) -> Scenario {
        self.scenario
    }
}

/// Lambertian order m with cos^m(theta_half) = 1/2.
pub fn derive_lambertian_order(half_power_angle: f64) -> Result<f64> {
    if !(MIN_HALF_POWER_ANGLE..PI / 2.0).contains(&half_power_angle) {
        return Err(Error::Domain(format!(
            "half-power semi-angle {half_power_angle} rad outside [1 deg, 90 deg)"
        )));
    }
    Ok(0.5f64.ln() / half_power_angle.cos().ln())
}

/// Photodetector responsivity eta q / (h f) in A/W.
pub fn derive_responsivity(
    quantum_efficiency: f64,
    wavelength: f64,
    constants: &PhysicalConstants,
) -> f64 {
    let frequency = constants.light_speed / wavelength;
    quantum_efficiency * constants.electron_charge / (constants.planck * frequency)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn check(&mut self, ok: bool, field: &str, message: impl Into<String>) {
        if !ok {
            self.violations.push(Violation {
                field: field.into(),
                message: message.into(),
            });
        }
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_valid() {
            return write!(f, "valid");
        }
        for v in &self.violations {
            writeln!(f, "{}: {}", v.field, v.message)?;
        }
        Ok(())
    }
}

/// Checks every scenario invariant and reports all violations.
pub fn validate_scenario(s: &Scenario) -> ValidationReport {
    let mut r = ValidationReport::default();
    let w = &s.water;
    r.check(w.absorption > 0.0, "water.absorption", "must be positive");
    r.check(w.scattering >= 0.0, "water.scattering", "must be non-negative");
    r.check(
        (w.extinction - (w.absorption + w.scattering)).abs() <= 1e-9 * w.extinction.abs(),
        "water.extinction",
        format!(
            "extinction {} differs from absorption + scattering {}",
            w.extinction,
            w.absorption + w.scattering
        ),
    );
    r.check(
        s.anisotropy > -1.0 && s.anisotropy < 1.0,
        "water.anisotropy",
        "must lie in (-1, 1)",
    );

    match s.source.kind {
        SourceKind::Collimated {
            half_divergence,
            beam_waist,
        } => {
            r.check(half_divergence > 0.0, "source.half_divergence", "must be positive");
            r.check(beam_waist >= 0.0, "source.beam_waist", "must be non-negative");
        }
        SourceKind::Lambertian {
            half_power_angle,
            order,
        } => {
            r.check(
                (MIN_HALF_POWER_ANGLE..PI / 2.0).contains(&half_power_angle),
                "source.half_power_angle",
                "must lie in [1 deg, 90 deg)",
            );
            r.check(order > 0.0 && order.is_finite(), "source.order", "must be positive");
            if let Ok(m) = derive_lambertian_order(half_power_angle) {
                r.check(
                    (m - order).abs() <= 1e-9 * m,
                    "source.order",
                    "inconsistent with half-power angle",
                );
            }
        }
    }
    r.check(s.source.wavelength > 0.0, "source.wavelength", "must be positive");

    let l = &s.layout;
    r.check(l.transmitters >= 1, "layout.transmitters", "at least one transmitter required");
    r.check(l.receivers >= 1, "layout.receivers", "at least one receiver required");
    r.check(
        !(l.transmitters > 1 || l.receivers > 1) || l.spacing > 0.0,
        "layout.spacing",
        "spacing required for multi-element layout",
    );
    r.check(l.link_length > 0.0, "layout.link_length", "must be positive");
    r.check(l.reference_aperture > 0.0, "layout.reference_aperture", "must be positive");
    r.check(
        l.pointing.len() == l.transmitters,
        "layout.pointing",
        "one entry per transmitter required",
    );
    r.check(
        l.pointing.iter().all(|&p| p < l.receivers),
        "layout.pointing",
        "points at a receiver that does not exist",
    );
    if l.receivers >= 1 && l.reference_aperture > 0.0 {
        let expected = l.receiver_diameter();
        r.check(
            (s.receiver.aperture_diameter - expected).abs() <= 1e-12 * expected,
            "receiver.aperture_diameter",
            "must equal reference aperture / sqrt(N)",
        );
    }
    r.check(s.receiver.aperture_diameter > 0.0, "receiver.aperture_diameter", "must be positive");
    r.check(
        s.receiver.fov > 0.0 && s.receiver.fov <= PI / 2.0,
        "receiver.fov",
        "must lie in (0, 90 deg]",
    );

    r.check(s.modem.bit_duration > 0.0, "modem.bit_duration", "must be positive");

    let n = &s.noise;
    r.check(
        n.quantum_efficiency > 0.0 && n.quantum_efficiency <= 1.0,
        "noise.quantum_efficiency",
        "must lie in (0, 1]",
    );
    r.check(n.temperature > 0.0, "noise.temperature", "must be positive");
    r.check(n.load_resistance > 0.0, "noise.load_resistance", "must be positive");
    r.check(n.dark_current >= 0.0, "noise.dark_current", "must be non-negative");
    r.check(n.diffuse_attenuation >= 0.0, "noise.diffuse_attenuation", "must be non-negative");
    r.check(n.depth >= 0.0, "noise.depth", "must be non-negative");

    r.check(
        s.fading.log_amplitude_variance.len() == l.links(),
        "fading.log_amplitude_variance",
        "one entry per link required",
    );
    r.check(
        s.fading.log_amplitude_variance.iter().all(|&v| v >= 0.0),
        "fading.log_amplitude_variance",
        "must be non-negative",
    );
    r.check(
        s.constants.refractive_index > 1.0,
        "water.refractive_index",
        "must exceed 1",
    );
    r
}

/// Named scenarios used throughout the documentation and test suites.
pub mod presets {
    use super::*;

    pub fn laser() -> SourceModel {
        SourceModel::laser(0.75e-3, 1e-3, 532e-9)
    }

    pub fn led() -> SourceModel {
        SourceModel::led(15f64.to_radians(), 532e-9).expect("15 deg is valid")
    }

    /// The six channel-study links, each as a 1 x 3 SIMO layout aimed at
    /// the medial receiver.
    pub fn channel_study() -> Vec<Scenario> {
        [
            ("laser-clear-60m", WaterType::ClearOcean, laser(), 60.0),
            ("laser-coastal-25m", WaterType::Coastal, laser(), 25.0),
            ("laser-harbor-10m", WaterType::TurbidHarbor, laser(), 10.0),
            ("led-clear-30m", WaterType::ClearOcean, led(), 30.0),
            ("led-coastal-15m", WaterType::Coastal, led(), 15.0),
            ("led-harbor-10m", WaterType::TurbidHarbor, led(), 10.0),
        ]
        .into_iter()
        .map(|(name, water, source, d)| {
            Scenario::builder(water, source, d)
                .name(name)
                .configuration(1, 3)
                .build()
        })
        .collect()
    }

    /// SISO links at 1 Gbps with log-amplitude variance 0.16.
    pub fn siso_1gbps() -> Vec<Scenario> {
        channel_study()
            .into_iter()
            .map(|s| {
                let name = format!("siso-{}", s.name);
                let mut s = s.with_configuration(1, 1);
                s.name = name;
                s
            })
            .collect()
    }

    /// 6 m LED link in turbid harbor water at 100 Mbps, SISO.
    pub fn led_harbor_6m() -> Scenario {
        Scenario::builder(WaterType::TurbidHarbor, led(), 6.0)
            .name("led-harbor-6m-100mbps")
            .bit_rate(100e6)
            .fading(0.16)
            .build()
    }

    /// 60 m laser link in clear ocean at 5 Gbps, SISO.
    pub fn laser_clear_60m_5gbps() -> Scenario {
        Scenario::builder(WaterType::ClearOcean, laser(), 60.0)
            .name("laser-clear-60m-5gbps")
            .bit_rate(5e9)
            .fading(0.16)
            .build()
    }

    /// 15 m LED link in coastal water, SISO, named after its bit rate.
    pub fn led_coastal_15m(bit_rate: f64) -> Scenario {
        Scenario::builder(WaterType::Coastal, led(), 15.0)
            .name(&format!("led-coastal-15m-{}mbps", bit_rate / 1e6))
            .bit_rate(bit_rate)
            .fading(0.16)
            .build()
    }

    /// 10 m laser link in turbid harbor water at 500 Mbps, weak fading.
    pub fn laser_harbor_10m_500mbps() -> Scenario {
        Scenario::builder(WaterType::TurbidHarbor, laser(), 10.0)
            .name("laser-harbor-10m-500mbps")
            .bit_rate(500e6)
            .fading(0.04)
            .build()
    }

    pub fn all() -> Vec<Scenario> {
        let mut out = channel_study();
        out.extend(siso_1gbps());
        out.push(led_harbor_6m());
        out.push(laser_clear_60m_5gbps());
        out.push(led_coastal_15m(100e6));
        out.push(laser_harbor_10m_500mbps());
        out
    }

    pub fn by_name(name: &str) -> Option<Scenario> {
        all().into_iter().find(|s| s.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn clear_ocean_preset_is_valid() {
        let s = presets::by_name("laser-clear-60m").unwrap();
        assert_eq!(s.water.absorption, 0.114);
        assert_eq!(s.water.scattering, 0.037);
        assert_eq!(s.water.extinction, 0.151);
        let report = validate_scenario(&s);
        assert!(report.is_valid(), "{report}");
    }

    #[test]
    fn all_presets_validate() {
        for s in presets::all() {
            assert!(validate_scenario(&s).is_valid(), "{}", s.name);
        }
    }

    #[test]
    fn inconsistent_extinction_is_reported() {
        let mut s = presets::laser_clear_60m_5gbps();
        s.water.extinction = 0.2;
        let r = validate_scenario(&s);
        assert!(r.violations.iter().any(|v| v.field == "water.extinction"));
    }

    #[test]
    fn multi_element_layout_needs_spacing() {
        let mut s = presets::laser_clear_60m_5gbps().with_configuration(2, 1);
        s.layout.spacing = 0.0;
        let r = validate_scenario(&s);
        assert!(r
            .violations
            .iter()
            .any(|v| v.message == "spacing required for multi-element layout"));
    }

    #[test]
    fn report_lists_every_violation() {
        let mut s = presets::led_harbor_6m();
        s.water.absorption = -1.0;
        s.noise.quantum_efficiency = 0.0;
        s.receiver.fov = 0.0;
        let r = validate_scenario(&s);
        assert!(r.violations.len() >= 4);
    }

    #[test]
    fn lambertian_order() {
        assert_relative_eq!(derive_lambertian_order(60f64.to_radians()).unwrap(), 1.0, epsilon = 1e-12);
        let m15 = derive_lambertian_order(15f64.to_radians()).unwrap();
        // ln 0.5 / ln cos 15deg
        assert_relative_eq!(m15, 19.993727358517113, max_relative = 1e-12);
        assert!(derive_lambertian_order(0.5f64.to_radians()).is_err());
        assert!(derive_lambertian_order(PI / 2.0).is_err());
        assert!(derive_lambertian_order(1f64.to_radians()).unwrap() < 7000.0);
    }

    #[test]
    fn responsivity_at_532nm() {
        let c = PhysicalConstants::default();
        let r = derive_responsivity(0.8, 532e-9, &c);
        assert_relative_eq!(r, 0.8 * 532e-9 * c.electron_charge / (c.planck * c.light_speed), max_relative = 1e-15);
        assert!((r - 0.343).abs() < 1e-3);
        assert_eq!(derive_responsivity(0.0, 532e-9, &c), 0.0);
        assert_relative_eq!(derive_responsivity(0.8, 1064e-9, &c), 2.0 * r, max_relative = 1e-14);
    }

    #[test]
    fn background_power_closed_form() {
        let n = NoiseEnvironment::for_water(WaterType::ClearOcean);
        assert_relative_eq!(n.background_power(), 25.57e-9 * (-30.0f64 * 0.08).exp(), max_relative = 1e-15);
    }

    #[test]
    fn offsets_put_medial_element_first() {
        assert_eq!(line_offsets(1, 0.25), vec![0.0]);
        assert_eq!(line_offsets(3, 0.25), vec![0.0, 0.25, -0.25]);
        assert_eq!(line_offsets(2, 0.25), vec![0.125, -0.125]);
        assert_eq!(line_offsets(4, 1.0), vec![0.5, -0.5, 1.5, -1.5]);
    }

    #[test]
    fn default_pointing() {
        let l = MimoLayout::new(3, 1, 0.25, 6.0, 0.2);
        assert_eq!(l.pointing, vec![0, 0, 0]);
        let l = MimoLayout::new(2, 2, 0.25, 6.0, 0.2);
        assert_eq!(l.pointing, vec![0, 1]);
    }

    #[test]
    fn hashes_track_relevant_fields() {
        let a = presets::led_harbor_6m();
        let mut b = a.clone();
        b.modem = ModemConfig::from_bit_rate(500e6);
        assert_eq!(a.transport_hash(), b.transport_hash());
        assert_ne!(a.hash(), b.hash());
        b.anisotropy = 0.9;
        assert_ne!(a.transport_hash(), b.transport_hash());
    }

    proptest! {
        #[test]
        fn aperture_area_is_conserved(n in 1usize..16, d0 in 0.01f64..2.0) {
            let l = MimoLayout::new(1, n, 0.25, 10.0, d0);
            let d = l.receiver_diameter();
            let total = n as f64 * PI * d * d / 4.0;
            let reference = PI * d0 * d0 / 4.0;
            prop_assert!(((total - reference) / reference).abs() <= 1e-12);
        }

        #[test]
        fn scenario_json_round_trip(a in 0.01f64..3.0, b in 0.0f64..3.0, d in 1.0f64..100.0,
                                    v in 0.0f64..0.5, rate in 1e6f64..1e10) {
            let mut s = Scenario::builder(WaterType::Coastal, presets::led(), d)
                .bit_rate(rate).fading(v).build();
            s.water = WaterProperties::new(a, b);
            let text = serde_json::to_string(&s).unwrap();
            let back: Scenario = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(&back, &s);
            prop_assert_eq!(back.hash(), s.hash());
        }
    }
}
