//! Shared vocabulary pools and the five built-in style families.
//!
//! Every family places equal weight on its own support slice of each pool and
//! a small residual weight on everything else, so temperature mostly moves
//! mass between the support and the residual tail.

use super::{StyleProfile, Weighted};

pub const CONNECTIVES: [&str; 40] = [
    "First",
    "Second",
    "Next",
    "Then",
    "After that",
    "Finally",
    "Therefore",
    "Thus",
    "Hence",
    "So",
    "Consequently",
    "As a result",
    "To begin",
    "Now",
    "Meanwhile",
    "In addition",
    "Moreover",
    "Furthermore",
    "Also",
    "On the other hand",
    "However",
    "Notice that",
    "Recall that",
    "Observe that",
    "Let us see",
    "We know that",
    "Given that",
    "Since",
    "Because of this",
    "This means",
    "In other words",
    "Putting it together",
    "Step by step",
    "To summarize",
    "Overall",
    "Clearly",
    "Note that",
    "It follows that",
    "Accordingly",
    "At this point",
];

/// Sentence skeletons. Slots: `{c}` connective, `{w}` filler word,
/// `{q}` question keyword, `{n}` question number, `{k}` step index.
pub const TEMPLATES: [&str; 25] = [
    "{c}, we {w} the {q}.",
    "{c}, let's {w} how the {q} changes.",
    "{c} the {w} is {n}.",
    "{c}, we note that {q} equals {n}.",
    "{c}, I {w} {n} {q}.",
    "{c}: {w} the {w} and keep {n}.",
    "{c}, it is useful to {w} the {q} first.",
    "{c} we get {n} after we {w}.",
    "Step {k}. {c}, {w} {n}.",
    "{c}, the problem asks for the {w} of {q}.",
    "{c}, consider {n} {q} in total.",
    "{c}, multiply or add to {w} the {q}.",
    "({k}) {c}, {w} gives {n}.",
    "{c}; write down {n} and {w} it.",
    "{c}, my plan is to {w} the {q}.",
    "{c}, here {q} means {n}.",
    "{c} I will {w} each {q} carefully.",
    "{c}, so the {w} becomes {n}.",
    "{c}, by the rule we {w} {n}.",
    "{c}, check that {n} {q} makes sense.",
    "{c}, the key quantity is the {w}.",
    "{c}, combining gives {n}.",
    "Part {k}: {c}, {w} the {q}.",
    "{c}, we can {w} using {n}.",
    "{c}, this leaves {n} {q}.",
];

pub const LEXICON: [&str; 80] = [
    "compute", "count", "identify", "total", "subtract", "add", "divide", "multiply",
    "determine", "evaluate", "record", "track", "compare", "combine", "estimate", "verify",
    "derive", "find", "calculate", "measure", "split", "group", "remainder", "sum",
    "difference", "product", "quotient", "amount", "value", "number", "result", "answer",
    "quantity", "rate", "share", "portion", "balance", "unit", "figure", "tally",
    "inspect", "list", "organize", "simplify", "expand", "reduce", "isolate", "substitute",
    "express", "translate", "model", "represent", "outline", "sketch", "review", "confirm",
    "summarize", "restate", "examine", "trace", "accumulate", "distribute", "allocate", "partition",
    "increase", "decrease", "double", "halve", "scale", "convert", "round", "approximate",
    "equation", "expression", "variable", "constant", "ratio", "fraction", "percentage", "interval",
];

/// Step counts that any profile may draw from.
pub const STEP_COUNTS: std::ops::RangeInclusive<u32> = 2..=10;

/// Weight of an off-support item relative to an on-support item.
pub const TAIL_RATIO: f64 = 0.002;

struct FamilyLayout {
    id: &'static str,
    seed: u64,
    steps: &'static [u32],
}

const FAMILIES: [FamilyLayout; 5] = [
    FamilyLayout { id: "aurora", seed: 0xA11CE, steps: &[4, 5, 6] },
    FamilyLayout { id: "basalt", seed: 0xBA5A17, steps: &[5, 6, 7] },
    FamilyLayout { id: "cobalt", seed: 0xC0BA17, steps: &[3, 4, 5] },
    FamilyLayout { id: "dune", seed: 0xD00E, steps: &[6, 7, 8] },
    FamilyLayout { id: "ember", seed: 0xE3BE2, steps: &[4, 5, 6, 7] },
];

/// Own slice of width `own` for family `f`, plus `borrow` items from the next family's slice.
fn support(pool_len: usize, f: usize, own: usize, borrow: usize) -> Vec<usize> {
    let mut s: Vec<usize> = (f * own..(f + 1) * own).collect();
    let next = ((f + 1) % FAMILIES.len()) * own;
    s.extend((next..next + borrow).map(|i| i % pool_len));
    s
}

fn tiered<T: Clone>(pool: &[T], support: &[usize]) -> Vec<Weighted<T>> {
    let raw: Vec<f64> = (0..pool.len())
        .map(|i| if support.contains(&i) { 1.0 } else { TAIL_RATIO })
        .collect();
    let total: f64 = raw.iter().sum();
    pool.iter()
        .zip(raw)
        .map(|(item, w)| Weighted { item: item.clone(), weight: w / total })
        .collect()
}

fn owned(pool: &[&str]) -> Vec<String> {
    pool.iter().map(|s| s.to_string()).collect()
}

/// The five built-in families. The first three play source/benign roles and
/// the last two are held out as unseen benign models.
pub fn default_profiles() -> Vec<StyleProfile> {
    let steps: Vec<u32> = STEP_COUNTS.collect();
    FAMILIES
        .iter()
        .enumerate()
        .map(|(f, layout)| {
            let step_support: Vec<usize> = steps
                .iter()
                .enumerate()
                .filter(|(_, s)| layout.steps.contains(s))
                .map(|(i, _)| i)
                .collect();
            StyleProfile {
                family_id: layout.id.to_string(),
                connectives: tiered(&owned(&CONNECTIVES), &support(CONNECTIVES.len(), f, 8, 2)),
                step_count_distribution: tiered(&steps, &step_support),
                phrasing_templates: tiered(&owned(&TEMPLATES), &support(TEMPLATES.len(), f, 5, 1)),
                lexical_pool: tiered(&owned(&LEXICON), &support(LEXICON.len(), f, 16, 4)),
                base_seed: layout.seed,
            }
        })
        .collect()
}

pub fn default_profile(family_id: &str) -> Option<StyleProfile> {
    default_profiles().into_iter().find(|p| p.family_id == family_id)
}
