//! Instruction templating and the inverse name parser.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::assets::AssetSpec;
use super::SceneGenError;

pub const DEFAULT_TEMPLATES: [&str; 5] = [
    "move {src} onto {dst}",
    "put the {src} on top of the {dst}",
    "place the {src} on the {dst}",
    "stack the {src} onto the {dst}",
    "pick up the {src} and put it on the {dst}",
];

/// Each template holds `{src}` and `{dst}` exactly once, in that order, so
/// that the names can be recovered from the text.
pub fn validate_templates(templates: &[String]) -> Result<(), SceneGenError> {
    if templates.is_empty() {
        return Err(SceneGenError::InvalidConfig("no instruction templates".into()));
    }
    for t in templates {
        let src = t.match_indices("{src}").count();
        let dst = t.match_indices("{dst}").count();
        if src != 1 || dst != 1 || t.find("{src}") > t.find("{dst}") {
            return Err(SceneGenError::InvalidConfig(format!(
                "template {t:?} must contain {{src}} then {{dst}}, once each"
            )));
        }
        if asset_regex().is_match(&t.replace("{src}", "").replace("{dst}", "")) {
            return Err(SceneGenError::InvalidConfig(format!(
                "template {t:?} contains an object name outside the placeholders"
            )));
        }
    }
    Ok(())
}

/// Fills a template chosen by `seed` with `"<size> <color> <shape>"` names.
pub fn instruction_text(
    src: &AssetSpec,
    dst: &AssetSpec,
    templates: &[String],
    seed: u64,
) -> Result<String, SceneGenError> {
    validate_templates(templates)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = &templates[rng.gen_range(0..templates.len())];
    Ok(t.replace("{src}", &src.to_string()).replace("{dst}", &dst.to_string()))
}

fn asset_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\b(large|small) (gray|red|blue|green|brown|purple|cyan|yellow) (cube|block|sphere)\b")
            .expect("static regex")
    })
}

/// Every object name mentioned in `text`, in order of appearance.
pub fn parse_asset_names(text: &str) -> Vec<AssetSpec> {
    asset_regex()
        .find_iter(text)
        .map(|m| m.as_str().parse().expect("regex only matches valid names"))
        .collect()
}
