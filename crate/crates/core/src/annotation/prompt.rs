//! Kinematics-aware describe prompt.

use std::sync::OnceLock;

use regex::Regex;

use crate::kinematics::SpeedSummary;

/// Instruction template with `{overall}`, `{head}`, `{forelimb_left}`,
/// `{forelimb_right}`, `{hindlimb_left}` and `{hindlimb_right}` slots.
pub const DESCRIBE_TEMPLATE: &str = include_str!("../../prompts/describe.txt");

/// Rendering of a speed slot with no value.
pub const MISSING_SPEED: &str = "unavailable";

fn render(speed: Option<f64>) -> String {
    match speed {
        Some(s) if s.is_finite() => format!("{s:.2}"),
        _ => MISSING_SPEED.to_string(),
    }
}

pub fn build_prompt(speeds: &SpeedSummary) -> String {
    DESCRIBE_TEMPLATE
        .trim_end()
        .replace("{overall}", &render(speeds.overall))
        .replace("{head}", &render(speeds.head))
        .replace("{forelimb_left}", &render(speeds.forelimb_left))
        .replace("{forelimb_right}", &render(speeds.forelimb_right))
        .replace("{hindlimb_left}", &render(speeds.hindlimb_left))
        .replace("{hindlimb_right}", &render(speeds.hindlimb_right))
}

/// Recovers the speeds quoted in a prompt produced by [`build_prompt`].
/// Values rendered as [`MISSING_SPEED`] come back as `None`.
pub fn parse_prompt_speeds(prompt: &str) -> Option<SpeedSummary> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        let n = r"(-?[0-9]+\.[0-9]+|unavailable)";
        Regex::new(&format!(
            r"overall movement speed of the mouse is: {n} cm/s, the speed of the head: {n} cm/s, speed of left and right forelimbs: {n}, {n} cm/s, and left and right hind limbs are {n}, {n} cm/s"
        ))
        .expect("static pattern")
    });
    let caps = re.captures(prompt)?;
    let get = |i: usize| caps.get(i).and_then(|m| m.as_str().parse::<f64>().ok());
    Some(SpeedSummary {
        overall: get(1),
        head: get(2),
        forelimb_left: get(3),
        forelimb_right: get(4),
        hindlimb_left: get(5),
        hindlimb_right: get(6),
    })
}
