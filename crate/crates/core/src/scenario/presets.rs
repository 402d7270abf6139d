//! Built-in scenarios, embedded at compile time.

use super::config::Scenario;
use crate::{Error, Result};

const PRESETS: &[(&str, &str)] = &[
    ("two_islands", include_str!("presets/two_islands.toml")),
    ("fast_local", include_str!("presets/fast_local.toml")),
    ("slow_global", include_str!("presets/slow_global.toml")),
    ("attraction_2zone", include_str!("presets/attraction_2zone.toml")),
    ("aggregation_quadratic", include_str!("presets/aggregation_quadratic.toml")),
    ("singular_collision", include_str!("presets/singular_collision.toml")),
    ("hydro_global", include_str!("presets/hydro_global.toml")),
    ("hydro_blowup", include_str!("presets/hydro_blowup.toml")),
    ("hybrid_upscale", include_str!("presets/hybrid_upscale.toml")),
];

const ALIASES: &[(&str, &str)] = &[("blowup_band", "hydro_blowup")];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

/// Preset by name (aliases accepted).
pub fn preset(name: &str) -> Result<Scenario> {
    let name = ALIASES.iter().find(|a| a.0 == name).map_or(name, |a| a.1);
    let (_, text) = PRESETS
        .iter()
        .find(|p| p.0 == name)
        .ok_or_else(|| Error::Config(format!("unknown preset '{name}' (known: {})", preset_names().join(", "))))?;
    Scenario::from_toml(text)
}

pub fn preset_library() -> Vec<Scenario> {
    PRESETS.iter().filter_map(|p| preset(p.0).ok()).collect()
}

/// A path to a scenario file, or else a preset name.
pub fn resolve(arg: &str) -> Result<Scenario> {
    let path = std::path::Path::new(arg);
    if path.is_file() {
        super::config::load_scenario(path)
    } else {
        preset(arg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_is_complete_and_valid() {
        for (name, _) in PRESETS {
            preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(preset_library().len() >= 9);
        let s = preset("two_islands").unwrap();
        assert_eq!(s.flocks.iter().map(|f| f.size).collect::<Vec<_>>(), vec![64, 8]);
        assert_eq!(preset("blowup_band").unwrap().name, "hydro_blowup");
        assert!(preset("nope").is_err());
    }

    #[test]
    fn presets_are_canonical_fixed_points() {
        for s in preset_library() {
            let once = s.to_canonical_toml().unwrap();
            let again = Scenario::from_toml(&once).unwrap().to_canonical_toml().unwrap();
            assert_eq!(once, again, "{}", s.name);
        }
    }
}
