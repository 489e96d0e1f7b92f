//! Deterministic stand-ins for every provider role.
//!
//! The describer reads the speeds quoted in the prompt and picks a behavior
//! category by fixed thresholds, then one of three phrasings chosen by a hash
//! of the image references. Keyword sets are arranged so that the category
//! keyword is present in every phrasing while each other keyword appears in
//! exactly two of the three.

use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::{DescribeRequest, Provider, ProviderError, RateRequest};
use crate::annotation::description::DescriptionFields;
use crate::annotation::extract::extract_json;
use crate::annotation::prompt::parse_prompt_speeds;
use crate::annotation::rating::offline_rubric;
use crate::embedding::HashedEmbedder;
use crate::kinematics::SpeedSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Jumping,
    Running,
    Walking,
    Rearing,
    Scratching,
    Grooming,
    Sniffing,
    Sitting,
    Resting,
}

impl Category {
    /// Speed thresholds in cm/s; missing speeds count as zero.
    pub fn from_speeds(s: &SpeedSummary) -> Self {
        let overall = s.overall.unwrap_or(0.0);
        let head = s.head.unwrap_or(0.0);
        let fore = s.forelimb_left.unwrap_or(0.0).max(s.forelimb_right.unwrap_or(0.0));
        let hind = s.hindlimb_left.unwrap_or(0.0).max(s.hindlimb_right.unwrap_or(0.0));
        if overall > 30.0 {
            Category::Jumping
        } else if overall >= 15.0 {
            Category::Running
        } else if overall >= 4.0 {
            Category::Walking
        } else if fore >= 6.0 {
            Category::Rearing
        } else if hind >= 5.0 {
            Category::Scratching
        } else if fore >= 2.5 {
            Category::Grooming
        } else if head >= 2.5 {
            Category::Sniffing
        } else if overall >= 1.0 {
            Category::Sitting
        } else {
            Category::Resting
        }
    }

    pub const ALL: [Category; 9] = [
        Category::Jumping,
        Category::Running,
        Category::Walking,
        Category::Rearing,
        Category::Scratching,
        Category::Grooming,
        Category::Sniffing,
        Category::Sitting,
        Category::Resting,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            Category::Jumping => "jumping",
            Category::Running => "running",
            Category::Walking => "walking",
            Category::Rearing => "rearing",
            Category::Scratching => "scratching",
            Category::Grooming => "grooming",
            Category::Sniffing => "sniffing",
            Category::Sitting => "sitting",
            Category::Resting => "resting",
        }
    }

    fn phrasings(self) -> &'static [Phrasing; 3] {
        match self {
            Category::Jumping => &JUMPING,
            Category::Running => &RUNNING,
            Category::Walking => &WALKING,
            Category::Rearing => &REARING,
            Category::Scratching => &SCRATCHING,
            Category::Grooming => &GROOMING,
            Category::Sniffing => &SNIFFING,
            Category::Sitting => &SITTING,
            Category::Resting => &RESTING,
        }
    }
}

struct Phrasing {
    overall: &'static str,
    head: &'static str,
    limb: &'static str,
    torso: &'static str,
    others: &'static str,
    keywords: &'static str,
}

const JUMPING: [Phrasing; 3] = [
    Phrasing {
        overall: "The mouse is in rapid motion and is jumping, with all four paws leaving the ground at the same moment.",
        head: "The head is raised and pointed forward along the direction of the leap.",
        limb: "The hind legs are fully extended after pushing off and the front paws are tucked under the chest in the air. The tail is lifted in the air behind the body.",
        torso: "The torso is airborne and stretched, with the spine extended in a long arc.",
        others: "The whole body is off the ground during the leap.",
        keywords: "jumping, airborne, hind legs extended, rapid motion, tail lifted",
    },
    Phrasing {
        overall: "The mouse is jumping upward in a sudden burst of movement.",
        head: "The head is tilted upward toward the top of the chamber during the jump.",
        limb: "The hind legs are extended below the body and the front paws reach upward in the air. The tail trails behind in the air.",
        torso: "The torso is stretched vertically and the spine is arched at the top of the jump.",
        others: "The mouse is briefly suspended in the air with no paw touching the floor.",
        keywords: "jumping, airborne, hind legs extended, spine arched, leaping",
    },
    Phrasing {
        overall: "The mouse is in rapid motion, leaping across the chamber in a single jump.",
        head: "The head is held level and pointed toward the landing spot.",
        limb: "The front paws are stretched forward to land and the hind paws are lifted off the floor. The tail is raised in the air.",
        torso: "The torso is extended and the spine is arched along the flight path.",
        others: "The jump covers a large distance within the frame.",
        keywords: "jumping, rapid motion, spine arched, leaping, tail lifted",
    },
];

const RUNNING: [Phrasing; 3] = [
    Phrasing {
        overall: "The mouse is running fast along the wall of the chamber.",
        head: "The head is stretched forward and held close to the floor.",
        limb: "The front paws and hind paws push off in quick strides, with some paws off the ground. The tail is held straight out behind the body.",
        torso: "The torso is long and low, stretched out in the direction of travel.",
        others: "Running mouse, a fast sprint with bounding gallop strides. The body covers a large part of the chamber within the frame.",
        keywords: "running, fast locomotion, stretched body, paws off ground, tail straight",
    },
    Phrasing {
        overall: "The mouse is running across the chamber in fast locomotion.",
        head: "The head is held low, pointing toward the far side of the chamber.",
        limb: "The legs move in a galloping pattern, the hind paws landing ahead of the front paws. The tail swings behind the body.",
        torso: "The torso is stretched out and the back flexes with each stride.",
        others: "Running mouse, a fast sprint with bounding gallop strides. Motion blur is visible on the paws.",
        keywords: "running, fast locomotion, stretched body, galloping, head low",
    },
    Phrasing {
        overall: "The mouse is running, galloping around the edge of the chamber.",
        head: "The head is low and steady while the body bounds forward.",
        limb: "The paws alternate between pushing off and lifting off the ground. The tail is straight and lifted slightly off the floor.",
        torso: "The torso bends and extends in a bounding rhythm.",
        others: "Running mouse, a fast sprint with bounding gallop strides. The mouse does not pause during the frame.",
        keywords: "running, paws off ground, tail straight, galloping, head low",
    },
];

const WALKING: [Phrasing; 3] = [
    Phrasing {
        overall: "The mouse is in motion and walking across the floor of the chamber at a {pace} pace.",
        head: "The head is pointed forward and slightly downward, sniffing along the path.",
        limb: "The front paws and hind paws are on the ground, stepping in a walking gait. The tail is extended on the ground behind the body.",
        torso: "The torso is horizontally stretched and parallel to the ground.",
        others: "Walking mouse, steady walking locomotion. The mouse keeps a steady heading while it moves along the wall.",
        keywords: "walking, moving forward, four paws on ground, torso horizontal, tail extended",
    },
    Phrasing {
        overall: "The mouse is walking forward at a {pace} pace, moving through the chamber.",
        head: "The head is facing forward in the direction of travel, looking ahead.",
        limb: "All four paws are on the ground and take alternating steps. The tail is held low and drags behind the body.",
        torso: "The torso is level with the ground, with the back slightly rounded.",
        others: "Walking mouse, steady walking locomotion. The mouse advances with a regular stride.",
        keywords: "walking, moving forward, four paws on ground, alternating steps, head forward",
    },
    Phrasing {
        overall: "The mouse is in motion, walking at a {pace} pace around the edge of the chamber.",
        head: "The head is facing forward and is turning left with the curve of the wall.",
        limb: "The front paws and hind paws take alternating steps on the ground. The tail is extended on the ground.",
        torso: "The torso is horizontally stretched, with the chest and abdomen close to the ground.",
        others: "Walking mouse, steady walking locomotion. The mouse follows the wall of the chamber while walking.",
        keywords: "walking, torso horizontal, tail extended, alternating steps, head forward",
    },
];

const REARING: [Phrasing; 3] = [
    Phrasing {
        overall: "The mouse is standing on its hind legs and rearing up against the wall of the chamber.",
        head: "The head is raised upward, facing the top of the chamber.",
        limb: "The front paws are in the air against the glass. The hind paws are on the ground and carry the body. The tail is extended on the ground.",
        torso: "The torso is stretched vertically, with the spine held upright.",
        others: "Rearing mouse, vertical exploration by rearing upright toward the lid. The mouse is exploring the upper part of the chamber.",
        keywords: "rearing, standing, head upward, front paws in air, hind paws on ground",
    },
    Phrasing {
        overall: "The mouse is rearing, standing upright on its hind legs in the open area.",
        head: "The head is raised upward and the nose is sniffing the air.",
        limb: "The front paws are held close to the chest. The hind legs are bent and carry the body weight. The tail rests on the ground.",
        torso: "The torso is upright and the spine is vertical.",
        others: "Rearing mouse, vertical exploration by rearing upright toward the lid. The mouse is exploring the surroundings from an elevated posture.",
        keywords: "rearing, standing, head upward, torso vertical, exploring",
    },
    Phrasing {
        overall: "The mouse is rearing with its body lifted off the floor, supported by the hind legs.",
        head: "The head is tilted up toward the rim of the chamber.",
        limb: "The front paws are in the air near the glass and the hind paws are on the ground. The tail is extended behind the body.",
        torso: "The torso is upright, with the chest and abdomen lifted off the ground.",
        others: "Rearing mouse, vertical exploration by rearing upright toward the lid. The mouse is exploring by reaching upward along the glass.",
        keywords: "rearing, front paws in air, hind paws on ground, torso vertical, exploring",
    },
];

const SCRATCHING: [Phrasing; 3] = [
    Phrasing {
        overall: "The mouse is scratching behind its ear with a hind paw.",
        head: "The head is turned sideways toward the scratching paw.",
        limb: "One hind paw is raised to the ear while the front paws and the other hind paw stay on the ground. The tail rests on the ground.",
        torso: "The torso is tilted to one side to bring the hind paw forward.",
        others: "Scratching mouse, an itching bout with repeated scratches of the flank. The hind paw moves in short strokes against the fur.",
        keywords: "scratching, hind paw raised, body tilted, ear scratch, head sideways",
    },
    Phrasing {
        overall: "The mouse is scratching, sitting low on the floor of the chamber.",
        head: "The head is tipped toward the shoulder.",
        limb: "A hind paw is raised and strikes the flank in rapid strokes. The front paws are on the ground. The tail lies flat behind the body.",
        torso: "The torso is tilted and lowered toward the floor.",
        others: "Scratching mouse, an itching bout with repeated scratches of the flank. The strokes are rapid and repeated.",
        keywords: "scratching, hind paw raised, body tilted, rapid strokes, sitting low",
    },
    Phrasing {
        overall: "The mouse is scratching its ear while sitting low.",
        head: "The head is turned sideways with the ear pressed toward the paw.",
        limb: "The hind paw reaches the ear with rapid strokes. Both front paws stay on the ground. The tail is curled on the ground.",
        torso: "The torso is compact and leans to one side.",
        others: "Scratching mouse, an itching bout with repeated scratches of the flank. The rest of the body stays in place during the strokes.",
        keywords: "scratching, ear scratch, head sideways, rapid strokes, sitting low",
    },
];

const GROOMING: [Phrasing; 3] = [
    Phrasing {
        overall: "The mouse is stationary and grooming, sitting on its haunches.",
        head: "The head is bent downward and the mouse is licking its front paws.",
        limb: "The front paws are held up to the mouth. The hind paws are on the ground under the body. The tail is curled on the ground beside the body.",
        torso: "The torso is curved, with the back hunched over the hind legs.",
        others: "Grooming mouse, a self-grooming bout of face washing and fur cleaning. The mouse repeats small strokes of the paws over the snout.",
        keywords: "grooming, licking paws, head downward, hunched posture, torso curved",
    },
    Phrasing {
        overall: "The mouse is grooming, with its body still and the paws moving around the face.",
        head: "The head is lowered toward the chest while the mouse is licking its paws.",
        limb: "The front paws are rubbing the face and ears. The hind paws are on the ground. The tail is extended on the ground.",
        torso: "The torso is compact and rounded over the hind legs.",
        others: "Grooming mouse, a self-grooming bout of face washing and fur cleaning. The grooming movements are quick and repetitive.",
        keywords: "grooming, licking paws, head downward, front paws at face, body still",
    },
    Phrasing {
        overall: "The mouse is sitting in one place and grooming its face.",
        head: "The head is tilted to one side while the front paws wipe the face.",
        limb: "The front paws are at the face, stroking the whiskers. The hind paws stay on the ground. The tail lies on the ground.",
        torso: "The torso is curved and the spine is bent forward.",
        others: "Grooming mouse, a self-grooming bout of face washing and fur cleaning. The body stays still apart from the paw strokes.",
        keywords: "grooming, hunched posture, torso curved, front paws at face, body still",
    },
];

const SNIFFING: [Phrasing; 3] = [
    Phrasing {
        overall: "The mouse is sniffing the floor, its nose moving quickly from spot to spot.",
        head: "The head is scanning left and right close to the floor.",
        limb: "All four paws are planted on the ground. The tail is extended on the ground.",
        torso: "The torso is horizontal and still while the head moves.",
        others: "Sniffing mouse, olfactory investigation with whisker sweeps. The whiskers are active and sweep back and forth.",
        keywords: "sniffing, nose moving, head scanning, four paws planted, whiskers active",
    },
    Phrasing {
        overall: "The mouse is sniffing and investigating the floor near the wall.",
        head: "The head is scanning the ground with the nose moving along the bedding.",
        limb: "The front paws are close together on the ground and the hind paws are under the body. The tail lies on the ground.",
        torso: "The torso is crouched low with the belly near the floor.",
        others: "Sniffing mouse, olfactory investigation with whisker sweeps. The mouse stays in one spot while investigating.",
        keywords: "sniffing, nose moving, head scanning, investigating floor, crouched low",
    },
    Phrasing {
        overall: "The mouse is crouched low, sniffing at a spot on the floor.",
        head: "The head is lowered, with the whiskers active around the snout.",
        limb: "All four paws are planted on the ground. The tail is stretched out behind.",
        torso: "The torso is crouched low and leans slightly forward.",
        others: "Sniffing mouse, olfactory investigation with whisker sweeps. The mouse is investigating the floor without moving its body.",
        keywords: "sniffing, four paws planted, whiskers active, investigating floor, crouched low",
    },
];

const SITTING: [Phrasing; 3] = [
    Phrasing {
        overall: "The mouse is sitting still and alert in the middle of the chamber.",
        head: "The head is held upright with the ears pointed up.",
        limb: "The paws are under the body on the ground. The tail is extended on the ground.",
        torso: "The torso is compact, with the weight shifting slightly between the legs.",
        others: "Sitting mouse, idle and watchful. The mouse is alert to its surroundings.",
        keywords: "sitting, alert, upright head, paws under body, shifting weight",
    },
    Phrasing {
        overall: "The mouse is sitting in a compact posture near the wall.",
        head: "The head is upright and the mouse appears alert.",
        limb: "The front paws are held near the chest and the hind paws are on the ground. The tail curves around the hind paws.",
        torso: "The torso is rounded and compact.",
        others: "Sitting mouse, idle and watchful. There are only small movements of the body.",
        keywords: "sitting, alert, upright head, compact posture, small movements",
    },
    Phrasing {
        overall: "The mouse is sitting with small movements of its body.",
        head: "The head is level and turned slightly to one side.",
        limb: "The paws are tucked under the body and the mouse is shifting its weight. The tail is extended on the ground.",
        torso: "The torso is held in a compact posture close to the floor.",
        others: "Sitting mouse, idle and watchful. The body shifts slightly from side to side.",
        keywords: "sitting, paws under body, shifting weight, compact posture, small movements",
    },
];

const RESTING: [Phrasing; 3] = [
    Phrasing {
        overall: "The mouse is stationary and resting, lying down on the ground of the chamber.",
        head: "The head is resting on the ground with the eyes half closed.",
        limb: "The front paws and hind paws are folded under the body on the ground. The tail is extended on the ground.",
        torso: "The torso lies flat on the ground, with the chest and abdomen in full contact with the floor.",
        others: "Resting mouse, breathing slowly in a resting state. The mouse is motionless apart from slow breathing.",
        keywords: "resting, lying down, motionless, eyes half closed, torso flat",
    },
    Phrasing {
        overall: "The mouse is resting, lying down and motionless in a corner of the chamber.",
        head: "The head is lowered to the floor and tucked near the front paws.",
        limb: "The paws are tucked beneath the body and stay on the ground. The tail is curled around the body on the ground.",
        torso: "The torso is curled into a compact ball on the ground.",
        others: "Resting mouse, breathing slowly in a resting state. The mouse stays motionless for the whole frame.",
        keywords: "resting, lying down, motionless, paws tucked, head lowered",
    },
    Phrasing {
        overall: "The mouse is stationary, resting on the floor with no visible movement.",
        head: "The head is lowered and the eyes are half closed.",
        limb: "The paws are tucked under the chest and the hind legs are folded on the ground. The tail is extended on the ground.",
        torso: "The torso is flat, resting fully on the ground.",
        others: "Resting mouse, breathing slowly in a resting state. The body rises and falls slightly with each breath.",
        keywords: "resting, eyes half closed, torso flat, paws tucked, head lowered",
    },
];

fn fnv64(parts: &[&str]) -> u64 {
    let mut h = FnvHasher::default();
    for p in parts {
        h.write(p.as_bytes());
        h.write(&[0]);
    }
    h.finish()
}

fn pace(overall: f64) -> &'static str {
    if overall < 8.0 {
        "slow"
    } else if overall < 15.0 {
        "moderate"
    } else {
        "rapid"
    }
}

/// The offline description for a given speed summary and variant selector.
pub fn offline_description(speeds: &SpeedSummary, selector: u64) -> DescriptionFields {
    let category = Category::from_speeds(speeds);
    let p = &category.phrasings()[(selector % 3) as usize];
    DescriptionFields {
        overall: p.overall.replace("{pace}", pace(speeds.overall.unwrap_or(0.0))),
        head: p.head.to_string(),
        limb: p.limb.to_string(),
        torso: p.torso.to_string(),
        others: p.others.to_string(),
        keywords: p.keywords.to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct OfflineProvider {
    embedder: HashedEmbedder,
}

impl OfflineProvider {
    pub fn new(embedding_dim: usize) -> Self {
        Self { embedder: HashedEmbedder::new(embedding_dim) }
    }
}

impl Provider for OfflineProvider {
    fn name(&self) -> String {
        format!("offline/hashed-{}", self.embedder.dim())
    }

    fn describe(&self, request: &DescribeRequest) -> Result<String, ProviderError> {
        let speeds = parse_prompt_speeds(&request.prompt)
            .ok_or_else(|| ProviderError::Parameter("prompt carries no speed block".into()))?;
        let selector = if request.images.is_empty() {
            fnv64(&[&request.prompt])
        } else {
            fnv64(&request.images.iter().map(String::as_str).collect::<Vec<_>>())
        };
        let fields = offline_description(&speeds, selector);
        let body = serde_json::to_string_pretty(&fields).map_err(|e| ProviderError::Protocol(e.to_string()))?;
        Ok(format!("Here is the description of the mouse in the photos.\n```json\n{body}\n```\n"))
    }

    fn rate(&self, request: &RateRequest) -> Result<f64, ProviderError> {
        Ok(match extract_json(&request.description) {
            Ok(d) => offline_rubric(&d),
            Err(_) => 0.0,
        })
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        self.embedder.embed(text).map_err(|e| ProviderError::Parameter(e.to_string()))
    }

    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        if let Some(answer) = crate::clustering::merge::answer_offline(prompt) {
            return Ok(answer);
        }
        if let Some(answer) = crate::finegrained::assign::answer_offline(prompt) {
            return Ok(answer);
        }
        if let Some(answer) = route_tool_offline(prompt) {
            return Ok(answer);
        }
        Err(ProviderError::Parameter("offline provider has no handler for this prompt".into()))
    }
}

/// Header of the tool-routing task sent by the chat endpoint.
pub const ROUTE_TASK: &str = "TASK: route-tool";

/// Keyword routing of a chat message to one typed tool. The answer is a JSON
/// object `{"tool": ..., "args": {...}}`.
pub fn route_tool_offline(prompt: &str) -> Option<String> {
    let rest = prompt.strip_prefix(ROUTE_TASK)?;
    let message = rest
        .lines()
        .find_map(|l| l.strip_prefix("MESSAGE:"))
        .unwrap_or("")
        .trim();
    let lower = message.to_lowercase();
    let answer = if lower.contains("novel") || lower.contains("anomal") || lower.contains("rare") {
        serde_json::json!({"tool": "anomaly", "args": {}})
    } else if lower.contains("fine") || lower.contains("body part") {
        serde_json::json!({"tool": "finegrained", "args": {}})
    } else if lower.contains("cluster") || lower.contains("profil") {
        serde_json::json!({"tool": "cluster", "args": {}})
    } else if lower.contains("predict") || lower.contains("phenotype") {
        serde_json::json!({"tool": "phenotype_predict", "args": {}})
    } else {
        let query = ["find ", "search for ", "search ", "show me ", "show "]
            .iter()
            .find_map(|p| lower.find(p).map(|i| message[i + p.len()..].trim()))
            .unwrap_or(message)
            .trim_end_matches(['.', '?', '!']);
        serde_json::json!({"tool": "search", "args": {"query": query, "n": 5}})
    };
    Some(answer.to_string())
}
