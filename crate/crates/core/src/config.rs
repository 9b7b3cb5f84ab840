//! TOML scenario files.
//!
//! ```toml
//! name = "laser-harbor-10m-500mbps"
//!
//! [water]
//! preset = "turbid-harbor"   # or absorption + scattering (1/m)
//! anisotropy = 0.924
//!
//! [source]
//! kind = "laser"             # "laser" or "led"
//! half_divergence_mrad = 0.75
//! beam_waist_mm = 1.0
//! wavelength_nm = 532
//!
//! [layout]
//! transmitters = 1
//! receivers = 1
//! link_length_m = 10
//!
//! [modem]
//! bit_rate_bps = 500e6
//!
//! [fading]
//! log_amplitude_variance = 0.04
//! ```
//!
//! Every key is checked; unknown keys and unknown presets are errors that
//! carry the line number. Omitted keys take the table defaults.

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{Error, Result};
use crate::scenario::{
    derive_lambertian_order, validate_scenario, FadingSpec, MimoLayout, ModemConfig, NoiseEnvironment, PhysicalConstants, ReceiverModel,
    Scenario, SourceModel, WaterProperties, WaterType, DEFAULT_ANISOTROPY,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: Option<String>,
    pub water: WaterSection,
    pub source: SourceSection,
    pub layout: LayoutSection,
    #[serde(default)]
    pub modem: ModemSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub fading: FadingSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaterSection {
    pub preset: Option<Spanned<String>>,
    pub absorption: Option<f64>,
    pub scattering: Option<f64>,
    pub anisotropy: Option<f64>,
    pub refractive_index: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub kind: Spanned<String>,
    pub half_divergence_mrad: Option<f64>,
    pub beam_waist_mm: Option<f64>,
    pub half_power_angle_deg: Option<f64>,
    pub wavelength_nm: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSection {
    pub transmitters: Option<usize>,
    pub receivers: Option<usize>,
    pub spacing_m: Option<f64>,
    pub link_length_m: f64,
    pub reference_aperture_m: Option<f64>,
    pub fov_deg: Option<f64>,
    pub pointing: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModemSection {
    pub bit_rate_bps: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub quantum_efficiency: Option<f64>,
    pub temperature_k: Option<f64>,
    pub load_resistance_ohm: Option<f64>,
    pub dark_current_a: Option<f64>,
    pub diffuse_attenuation: Option<f64>,
    pub depth_m: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FadingSection {
    pub log_amplitude_variance: Option<Variances>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Variances {
    Uniform(f64),
    PerLink(Vec<f64>),
}

/// 1-based line of a byte offset; 0 when the source text is unavailable.
fn line_of(text: &str, offset: usize) -> usize {
    if text.is_empty() {
        return 0;
    }
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn spanned_error<T>(text: &str, value: &Spanned<T>, message: String) -> Error {
    Error::Config {
        line: line_of(text, value.span().start),
        message,
    }
}

fn parse_error(text: &str, e: toml::de::Error) -> Error {
    Error::Config {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        message: e.message().to_string(),
    }
}

/// Parses a scenario file, applies `key=value` overrides (dotted keys such
/// as `layout.link_length_m=20`) and validates the result.
pub fn load_scenario_str(text: &str, overrides: &[String]) -> Result<Scenario> {
    let file: ScenarioFile = if overrides.is_empty() {
        toml::from_str(text).map_err(|e| parse_error(text, e))?
    } else {
        let mut doc: toml::Table = text.parse().map_err(|e| parse_error(text, e))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let merged = toml::to_string(&doc).map_err(|e| Error::Config {
            line: 0,
            message: e.to_string(),
        })?;
        toml::from_str(&merged).map_err(|e| Error::Config {
            line: 0,
            message: format!("after overrides: {}", e.message()),
        })?
    };
    // spans refer to the original text only when nothing was merged
    let text = if overrides.is_empty() { text } else { "" };
    build(&file, text)
}

pub fn load_scenario(path: &std::path::Path, overrides: &[String]) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    load_scenario_str(&text, overrides)
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let bad = |m: &str| Error::Config {
        line: 0,
        message: format!("override '{spec}': {m}"),
    };
    let (key, raw) = spec.split_once('=').ok_or_else(|| bad("expected key=value"))?;
    let value: toml::Value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("just inserted"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().ok_or_else(|| bad("empty key"))?;
    let mut table = doc;
    for p in path {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| bad("path runs through a non-table value"))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn build(f: &ScenarioFile, text: &str) -> Result<Scenario> {
    let err = |m: String| Error::Config { line: 0, message: m };
    let preset = match &f.water.preset {
        Some(p) => Some(WaterType::from_name(p.get_ref()).ok_or_else(|| {
            spanned_error(
                text,
                p,
                format!("unknown water preset '{}' (expected clear-ocean, coastal or turbid-harbor)", p.get_ref()),
            )
        })?),
        None => None,
    };
    let water = match (preset, f.water.absorption, f.water.scattering) {
        (Some(w), None, None) => w.properties(),
        (None, Some(a), Some(b)) => WaterProperties::new(a, b),
        (Some(_), _, _) => return Err(err("water: give either preset or absorption + scattering, not both".into())),
        (None, _, _) => return Err(err("water: preset or both absorption and scattering required".into())),
    };
    let reference_water = preset.unwrap_or(WaterType::Coastal);

    let wavelength = f.source.wavelength_nm.unwrap_or(532.0) / 1e9;
    let source = match f.source.kind.get_ref().as_str() {
        "laser" => SourceModel::laser(
            f.source.half_divergence_mrad.unwrap_or(0.75) / 1e3,
            f.source.beam_waist_mm.unwrap_or(1.0) / 1e3,
            wavelength,
        ),
        "led" => {
            let angle = f.source.half_power_angle_deg.unwrap_or(15.0).to_radians();
            derive_lambertian_order(angle).map_err(|e| spanned_error(text, &f.source.kind, e.to_string()))?;
            SourceModel::led(angle, wavelength)?
        }
        other => {
            return Err(spanned_error(
                text,
                &f.source.kind,
                format!("unknown source kind '{other}' (expected laser or led)"),
            ))
        }
    };

    let l = &f.layout;
    let mut layout = MimoLayout::new(
        l.transmitters.unwrap_or(1),
        l.receivers.unwrap_or(1),
        l.spacing_m.unwrap_or(0.25),
        l.link_length_m,
        l.reference_aperture_m.unwrap_or(0.20),
    );
    if let Some(p) = &l.pointing {
        layout.pointing = p.clone();
    }
    let receiver = ReceiverModel {
        aperture_diameter: layout.receiver_diameter(),
        fov: l.fov_deg.unwrap_or(40.0).to_radians(),
    };

    let mut noise = NoiseEnvironment::for_water(reference_water);
    let n = &f.noise;
    if let Some(v) = n.quantum_efficiency {
        noise.quantum_efficiency = v;
    }
    if let Some(v) = n.temperature_k {
        noise.temperature = v;
    }
    if let Some(v) = n.load_resistance_ohm {
        noise.load_resistance = v;
    }
    if let Some(v) = n.dark_current_a {
        noise.dark_current = v;
    }
    if let Some(v) = n.diffuse_attenuation {
        noise.diffuse_attenuation = v;
    }
    if let Some(v) = n.depth_m {
        noise.depth = v;
    }

    let links = layout.links();
    let fading = match &f.fading.log_amplitude_variance {
        None => FadingSpec::uniform(links, 0.16),
        Some(Variances::Uniform(v)) => FadingSpec::uniform(links, *v),
        Some(Variances::PerLink(v)) => FadingSpec {
            log_amplitude_variance: v.clone(),
        },
    };

    let mut constants = PhysicalConstants::default();
    if let Some(n) = f.water.refractive_index {
        constants.refractive_index = n;
    }
    let scenario = Scenario {
        name: f.name.clone().unwrap_or_else(|| "custom".into()),
        water,
        anisotropy: f.water.anisotropy.unwrap_or(DEFAULT_ANISOTROPY),
        source,
        layout,
        receiver,
        modem: ModemConfig::from_bit_rate(f.modem.bit_rate_bps.unwrap_or(1e9)),
        noise,
        fading,
        constants,
    };
    let report = validate_scenario(&scenario);
    if !report.is_valid() {
        return Err(Error::InvalidScenario(report.to_string().trim_end().to_string()));
    }
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::presets;

    const HARBOR: &str = r#"
name = "laser-harbor-10m-500mbps"

[water]
preset = "turbid-harbor"

[source]
kind = "laser"

[layout]
link_length_m = 10

[modem]
bit_rate_bps = 500e6

[fading]
log_amplitude_variance = 0.04
"#;

    #[test]
    fn file_matches_preset() {
        let s = load_scenario_str(HARBOR, &[]).unwrap();
        assert_eq!(s, presets::laser_harbor_10m_500mbps());
        assert_eq!(s.hash(), presets::laser_harbor_10m_500mbps().hash());
    }

    #[test]
    fn unknown_preset_reports_line() {
        let text = HARBOR.replace("turbid-harbor", "muddy");
        match load_scenario_str(&text, &[]) {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 5);
                assert!(message.contains("muddy"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = HARBOR.replace("link_length_m = 10", "link_length_m = 10\nlink_lenght = 3");
        match load_scenario_str(&text, &[]) {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 12);
                assert!(message.contains("link_lenght"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_apply() {
        let s = load_scenario_str(HARBOR, &["layout.link_length_m=20".into(), "name=x".into()]).unwrap();
        assert_eq!(s.layout.link_length, 20.0);
        assert_eq!(s.name, "x");
        assert!(load_scenario_str(HARBOR, &["nonsense".into()]).is_err());
        assert!(matches!(
            load_scenario_str(HARBOR, &["layout.bogus=1".into()]),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn custom_water_and_invalid_layout() {
        let text = HARBOR.replace("preset = \"turbid-harbor\"", "absorption = 0.2\nscattering = 0.1");
        let s = load_scenario_str(&text, &[]).unwrap();
        assert!((s.water.extinction - 0.3).abs() < 1e-15);
        let text = HARBOR.replace("link_length_m = 10", "link_length_m = 10\ntransmitters = 2\nspacing_m = 0");
        assert!(matches!(load_scenario_str(&text, &[]), Err(Error::InvalidScenario(_))));
    }
}
