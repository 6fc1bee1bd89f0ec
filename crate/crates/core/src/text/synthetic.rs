//! Templated micro-narratives with counterfactual branches and paired
//! abductive instances whose difficulty is set by a separability knob ρ.
//!
//! World model (template set `micro-v1`): every action has a fixed
//! consequence and follow-up sentence.
//!
//! * story: `s1` premise, `s2` action, `s3` consequence, `s4` follow-up,
//!   `s5` a recap of the consequence ("The kite ... again."). The
//!   counterfactual branch swaps in another action for `s2'..s4'`; its
//!   ending `s5'` keeps a ρ fraction of the factual recap's content words
//!   and takes the rest from its own recap. At ρ = 1 both branches end
//!   identically, so only `s2` tells them apart.
//! * instance: `O1` a premise, `H+` the action whose consequence matches
//!   `O2`, `H-` another action. `O2` is the consequence of `H+` with a
//!   `1-ρ` fraction of its content words replaced by distractors. The
//!   `generated` field carries each hypothesis's natural continuation; the
//!   wrong one borrows a `0.2·(1-ρ)` fraction of content words from `O2`.
//!
//! Content words are every token except `the`, `a` and `.`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::{AbductiveInstance, Branch, Story};
use super::vocab::{split_words, SPECIALS};
use crate::autodiff::RngStream;
use crate::error::{Error, Result};

pub const TEMPLATE_SET: &str = "micro-v1";

/// Share of the wrong continuation's content words that may leak from `O2`
/// when ρ < 1.
pub const WRONG_OVERLAP_SCALE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_stories: usize,
    pub n_instances: usize,
    pub vocab_budget: usize,
    pub template_set: String,
    pub seed: u64,
    pub rho: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_stories: 200,
            n_instances: 200,
            vocab_budget: 1000,
            template_set: TEMPLATE_SET.to_string(),
            seed: 0,
            rho: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub stories: Vec<Story>,
    pub instances: Vec<AbductiveInstance>,
}

struct Action {
    object: &'static str,
    verb: &'static str,
    consequence: &'static str,
    follow_up: &'static str,
}

const NAMES: [&str; 16] = [
    "Anna", "Ben", "Carla", "Dan", "Eva", "Finn", "Gina", "Hugo", "Iris", "Jack", "Kate", "Leo",
    "Mia", "Noah", "Olga", "Paul",
];

const PREMISES: [&str; 8] = [
    "went to the market",
    "woke up early on saturday",
    "visited the old town",
    "spent the day at the lake",
    "planned a quiet afternoon",
    "started a new hobby",
    "walked to the park",
    "cleaned out the garage",
];

const ACTIONS: [Action; 20] = [
    Action { object: "kite", verb: "bought", consequence: "soared over green hills", follow_up: "Friends clapped loudly" },
    Action { object: "cake", verb: "baked", consequence: "smelled of warm vanilla", follow_up: "Neighbors asked for slices" },
    Action { object: "puppy", verb: "adopted", consequence: "licked every visitor", follow_up: "Children begged to play" },
    Action { object: "bike", verb: "fixed", consequence: "rolled smoothly downhill", follow_up: "Wheels hummed softly" },
    Action { object: "song", verb: "wrote", consequence: "echoed through empty halls", follow_up: "Strangers sang along" },
    Action { object: "garden", verb: "planted", consequence: "bloomed with bright tulips", follow_up: "Bees buzzed nearby" },
    Action { object: "boat", verb: "rented", consequence: "drifted across the bay", follow_up: "Ducks followed behind" },
    Action { object: "phone", verb: "dropped", consequence: "cracked into sharp pieces", follow_up: "Repairs cost money" },
    Action { object: "soup", verb: "cooked", consequence: "burned to black crust", follow_up: "Smoke filled everything" },
    Action { object: "car", verb: "washed", consequence: "sparkled under noon sun", follow_up: "Water pooled outside" },
    Action { object: "book", verb: "borrowed", consequence: "revealed a hidden map", follow_up: "Pages smelled dusty" },
    Action { object: "ticket", verb: "won", consequence: "granted free concert entry", follow_up: "Crowds cheered wildly" },
    Action { object: "tent", verb: "pitched", consequence: "collapsed during heavy rain", follow_up: "Mud covered sleeping bags" },
    Action { object: "painting", verb: "finished", consequence: "hung above the fireplace", follow_up: "Guests admired colors" },
    Action { object: "ladder", verb: "climbed", consequence: "wobbled near the roof", follow_up: "Tools slipped down" },
    Action { object: "letter", verb: "mailed", consequence: "arrived after two weeks", follow_up: "Grandma called back" },
    Action { object: "lamp", verb: "broke", consequence: "shattered on kitchen tiles", follow_up: "Glass scattered widely" },
    Action { object: "race", verb: "entered", consequence: "started at dawn exactly", follow_up: "Runners stretched first" },
    Action { object: "puzzle", verb: "solved", consequence: "showed a lighthouse scene", follow_up: "Pieces clicked together" },
    Action { object: "camera", verb: "lost", consequence: "vanished somewhere downtown", follow_up: "Photos disappeared forever" },
];

const DISTRACTORS: [&str; 20] = [
    "somehow", "meanwhile", "perhaps", "eventually", "suddenly", "quietly", "honestly",
    "apparently", "anyway", "later", "really", "truly", "barely", "simply", "mostly", "nearly",
    "oddly", "rarely", "surely", "gently",
];

const FUNCTION_WORDS: [&str; 3] = ["the", "a", "."];

pub fn is_content_word(token: &str) -> bool {
    !FUNCTION_WORDS.contains(&token)
}

/// Joins tokens into a sentence: capitalised, no space before `.`.
fn render(tokens: &[String]) -> String {
    let mut s = String::new();
    for t in tokens {
        if !s.is_empty() && t != "." {
            s.push(' ');
        }
        s.push_str(t);
    }
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => s,
    }
}

fn premise(name: &str, p: &str) -> String {
    format!("{name} {p}.")
}

fn hypothesis(name: &str, a: &Action) -> String {
    format!("{name} {} a {}.", a.verb, a.object)
}

fn consequence(a: &Action) -> String {
    format!("The {} {}.", a.object, a.consequence)
}

fn follow_up(a: &Action) -> String {
    format!("{}.", a.follow_up)
}

fn outcome(a: &Action) -> String {
    format!("The {} {} again.", a.object, a.consequence)
}

/// Positions of the object and consequence words inside an outcome.
fn recap_positions(tokens: &[String]) -> Vec<usize> {
    (1..tokens.len().saturating_sub(2)).collect()
}

fn content_positions(tokens: &[String]) -> Vec<usize> {
    (0..tokens.len()).filter(|&i| is_content_word(&tokens[i])).collect()
}

/// Replaces `count` randomly chosen content positions of `tokens` using
/// `pick(position)` for the new token.
fn replace_content(
    tokens: &mut [String],
    count: usize,
    rng: &mut RngStream,
    mut pick: impl FnMut(usize, &mut RngStream) -> String,
) {
    let mut positions = content_positions(tokens);
    positions.shuffle(rng);
    for &p in positions.iter().take(count) {
        tokens[p] = pick(p, rng);
    }
}

fn required_words() -> Vec<String> {
    let mut texts: Vec<String> = Vec::new();
    for n in NAMES {
        for p in PREMISES {
            texts.push(premise(n, p));
        }
        for a in &ACTIONS {
            texts.push(hypothesis(n, a));
            texts.push(outcome(a));
        }
    }
    for a in &ACTIONS {
        texts.push(consequence(a));
        texts.push(follow_up(a));
    }
    texts.extend(DISTRACTORS.iter().map(|d| d.to_string()));
    let mut words: Vec<String> = texts.iter().flat_map(|t| split_words(t)).collect();
    words.sort();
    words.dedup();
    words
}

/// Vocabulary size (reserved tokens included) the template set needs.
pub fn required_vocab_size(template_set: &str) -> Result<usize> {
    if template_set != TEMPLATE_SET {
        return Err(Error::Synthetic(format!(
            "unknown template set {template_set:?} (available: {TEMPLATE_SET})"
        )));
    }
    Ok(required_words().len() + SPECIALS.len())
}

fn round_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

fn two_distinct(rng: &mut RngStream, n: usize) -> (usize, usize) {
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    (a, b)
}

fn gen_story(rng: &mut RngStream, rho: f64) -> Story {
    let name = NAMES[rng.random_range(0..NAMES.len())];
    let p = PREMISES[rng.random_range(0..PREMISES.len())];
    let (ai, bi) = two_distinct(rng, ACTIONS.len());
    let (a, b) = (&ACTIONS[ai], &ACTIONS[bi]);

    let own_outcome = split_words(&outcome(b));
    let mut cf_outcome = split_words(&outcome(a));
    let own = recap_positions(&own_outcome);
    let mut positions = recap_positions(&cf_outcome);
    let count = round_count(1.0 - rho, positions.len());
    positions.shuffle(rng);
    for &p in positions.iter().take(count) {
        // same content index in the other recap, wrapping when shorter
        cf_outcome[p] = own_outcome[own[(p - 1) % own.len()]].clone();
    }

    Story {
        premise: premise(name, p),
        initial: hypothesis(name, a),
        ending: [consequence(a), follow_up(a), outcome(a)],
        counterfactual: Some(Branch {
            initial: hypothesis(name, b),
            ending: [consequence(b), follow_up(b), render(&cf_outcome)],
        }),
    }
}

fn gen_instance(rng: &mut RngStream, rho: f64, label: u8, index: usize) -> AbductiveInstance {
    let name = NAMES[rng.random_range(0..NAMES.len())];
    let p = PREMISES[rng.random_range(0..PREMISES.len())];
    let (pi, ni) = two_distinct(rng, ACTIONS.len());
    let (pos, neg) = (&ACTIONS[pi], &ACTIONS[ni]);

    let right = split_words(&consequence(pos));
    let mut obs2 = right.clone();
    let n_content = content_positions(&obs2).len();
    let mut distractors: Vec<&str> = DISTRACTORS.to_vec();
    distractors.shuffle(rng);
    let mut next = distractors.into_iter();
    replace_content(&mut obs2, round_count(1.0 - rho, n_content), rng, |_, _| {
        next.next().expect("enough distractors").to_string()
    });

    let mut wrong = split_words(&consequence(neg));
    let obs2_content: Vec<String> = content_positions(&obs2)
        .into_iter()
        .map(|i| obs2[i].clone())
        .collect();
    let wrong_content = content_positions(&wrong).len();
    replace_content(
        &mut wrong,
        round_count(WRONG_OVERLAP_SCALE * (1.0 - rho), wrong_content),
        rng,
        |_, r| obs2_content[r.random_range(0..obs2_content.len())].clone(),
    );

    let (h_pos, h_neg) = (hypothesis(name, pos), hypothesis(name, neg));
    let (g_pos, g_neg) = (render(&right), render(&wrong));
    let (hyp1, hyp2, generated) = if label == 1 {
        (h_pos, h_neg, [g_pos, g_neg])
    } else {
        (h_neg, h_pos, [g_neg, g_pos])
    };
    AbductiveInstance {
        id: Some(format!("syn-{index}")),
        obs1: premise(name, p),
        obs2: render(&obs2),
        hyp1,
        hyp2,
        label: Some(label),
        category: None,
        generated: Some(generated),
    }
}

/// Generates stories and abductive instances; a pure function of `spec`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    if !(0.0..=1.0).contains(&spec.rho) || spec.rho.is_nan() {
        return Err(Error::Synthetic(format!("rho {} outside [0, 1]", spec.rho)));
    }
    let needed = required_vocab_size(&spec.template_set)?;
    if spec.vocab_budget < needed {
        return Err(Error::Synthetic(format!(
            "vocabulary budget {} is below the {needed} tokens template set {} needs",
            spec.vocab_budget, spec.template_set
        )));
    }
    let root = RngStream::new(spec.seed);
    let mut story_rng = root.split_named("stories");
    let stories = (0..spec.n_stories)
        .map(|_| gen_story(&mut story_rng, spec.rho))
        .collect();

    // Balanced labels in random order.
    let mut labels: Vec<u8> = (0..spec.n_instances)
        .map(|i| if i % 2 == 0 { 1 } else { 2 })
        .collect();
    let mut inst_rng = root.split_named("instances");
    labels.shuffle(&mut inst_rng);
    let instances = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| gen_instance(&mut inst_rng, spec.rho, l, i))
        .collect();
    Ok(SyntheticCorpus { stories, instances })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, rho: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_stories: n,
            n_instances: n,
            seed,
            rho,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn distractors_never_occur_in_templates() {
        let mut template_words: Vec<String> = Vec::new();
        for a in &ACTIONS {
            template_words.extend(split_words(&consequence(a)));
            template_words.extend(split_words(&follow_up(a)));
            template_words.extend(split_words(&hypothesis("x", a)));
            template_words.extend(split_words(&outcome(a)));
        }
        for p in PREMISES {
            template_words.extend(split_words(p));
        }
        for d in DISTRACTORS {
            assert!(!template_words.iter().any(|w| w == d), "{d}");
        }
    }

    #[test]
    fn consequences_share_only_function_words() {
        for (i, a) in ACTIONS.iter().enumerate() {
            let wa = split_words(&consequence(a));
            for b in &ACTIONS[i + 1..] {
                let wb = split_words(&consequence(b));
                for w in wa.iter().filter(|w| is_content_word(w)) {
                    assert!(!wb.contains(w), "{w} shared by {} and {}", a.object, b.object);
                }
            }
        }
    }

    #[test]
    fn rho_one_continuation_equals_observation() {
        let c = gen_synthetic(&spec(10, 1.0, 3)).unwrap();
        assert_eq!(c.instances.len(), 10);
        for inst in &c.instances {
            let right = inst.label.unwrap() as usize - 1;
            let gen = inst.generated.as_ref().unwrap();
            assert_eq!(split_words(&gen[right]), split_words(&inst.obs2));
            assert_ne!(split_words(&gen[1 - right]), split_words(&inst.obs2));
        }
    }

    #[test]
    fn rho_controls_overlap() {
        let c = gen_synthetic(&spec(50, 0.5, 4)).unwrap();
        for inst in &c.instances {
            let right = inst.label.unwrap() as usize - 1;
            let gen = split_words(&inst.generated.as_ref().unwrap()[right]);
            let obs = split_words(&inst.obs2);
            let content: Vec<_> = (0..gen.len()).filter(|&i| is_content_word(&gen[i])).collect();
            let kept = content.iter().filter(|&&i| gen[i] == obs[i]).count();
            assert_eq!(kept, content.len() - round_count(0.5, content.len()));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_synthetic(&spec(30, 0.7, 9)).unwrap();
        let b = gen_synthetic(&spec(30, 0.7, 9)).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(&spec(30, 0.7, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn stories_have_counterfactual_branches() {
        let c = gen_synthetic(&spec(5, 1.0, 1)).unwrap();
        for s in &c.stories {
            let cf = s.counterfactual.as_ref().unwrap();
            assert_ne!(cf.initial, s.initial);
            // rho = 1: the endings agree
            assert_eq!(cf.ending[2], s.ending[2]);
        }
        let c = gen_synthetic(&spec(5, 0.0, 1)).unwrap();
        for s in &c.stories {
            assert_ne!(s.counterfactual.as_ref().unwrap().ending[2], s.ending[2]);
        }
    }

    #[test]
    fn labels_are_balanced() {
        let c = gen_synthetic(&spec(201, 0.5, 2)).unwrap();
        let ones = c.instances.iter().filter(|i| i.label == Some(1)).count();
        assert!(ones == 100 || ones == 101);
    }

    #[test]
    fn budget_and_rho_are_checked() {
        let need = required_vocab_size(TEMPLATE_SET).unwrap();
        let mut s = spec(2, 1.0, 0);
        s.vocab_budget = need - 1;
        assert!(gen_synthetic(&s).is_err());
        s.vocab_budget = need;
        assert!(gen_synthetic(&s).is_ok());
        assert!(gen_synthetic(&spec(2, 1.5, 0)).is_err());
        let mut s = spec(2, 1.0, 0);
        s.template_set = "other".into();
        assert!(gen_synthetic(&s).is_err());
    }
}
