use super::WordPair;

const ANTONYMS: &[(&str, &str)] = &[
    ("good", "bad"), ("hot", "cold"), ("big", "small"), ("no", "yes"), ("up", "down"),
    ("fast", "slow"), ("high", "low"), ("light", "dark"), ("open", "closed"), ("old", "new"),
    ("rich", "poor"), ("hard", "soft"), ("early", "late"), ("happy", "sad"), ("long", "short"),
    ("wet", "dry"), ("full", "empty"), ("strong", "weak"), ("true", "false"), ("win", "lose"),
    ("push", "pull"), ("left", "right"), ("in", "out"), ("near", "far"), ("thick", "thin"),
    ("clean", "dirty"), ("loud", "quiet"), ("heavy", "light"), ("wide", "narrow"), ("love", "hate"),
    ("buy", "sell"), ("give", "take"), ("first", "last"), ("day", "night"), ("begin", "end"),
    ("sweet", "sour"), ("young", "old"), ("safe", "risky"), ("cheap", "costly"), ("brave", "timid"),
    ("calm", "angry"), ("deep", "shallow"), ("sharp", "dull"), ("tight", "loose"), ("raise", "lower"),
    ("inner", "outer"), ("north", "south"), ("east", "west"), ("above", "below"), ("before", "after"),
    ("max", "min"), ("add", "remove"), ("accept", "reject"), ("allow", "deny"), ("arrive", "leave"),
    ("asleep", "awake"), ("bright", "dim"), ("cause", "effect"), ("come", "go"), ("enter", "exit"),
    ("even", "odd"), ("friend", "enemy"), ("gain", "loss"), ("guilty", "innocent"), ("hello", "goodbye"),
    ("kind", "cruel"), ("lazy", "busy"), ("major", "minor"), ("many", "few"), ("more", "less"),
    ("noisy", "silent"), ("on", "off"), ("plus", "minus"), ("pure", "mixed"), ("question", "answer"),
    ("rough", "smooth"), ("same", "different"), ("simple", "complex"), ("start", "stop"), ("top", "bottom"),
    ("under", "over"), ("visible", "hidden"), ("warm", "cool"), ("wild", "tame"), ("wise", "foolish"),
    ("with", "without"), ("male", "female"), ("always", "never"), ("alive", "dead"), ("asc", "desc"),
    ("input", "output"), ("import", "export"), ("increase", "decrease"), ("maximum", "minimum"),
    ("positive", "negative"), ("public", "private"), ("sunny", "rainy"), ("summer", "winter"),
    ("teacher", "student"), ("true", "untrue"),
];

const SYNONYMS: &[(&str, &str)] = &[
    ("big", "large"), ("quick", "fast"), ("small", "tiny"), ("happy", "glad"), ("begin", "start"),
    ("end", "finish"), ("smart", "clever"), ("sad", "unhappy"), ("shut", "close"), ("buy", "purchase"),
    ("help", "assist"), ("rich", "wealthy"), ("hard", "difficult"), ("easy", "simple"), ("angry", "mad"),
    ("choose", "pick"), ("gift", "present"), ("job", "work"), ("house", "home"), ("road", "street"),
    ("speak", "talk"), ("look", "see"), ("shout", "yell"), ("jump", "leap"), ("rock", "stone"),
    ("center", "middle"), ("error", "mistake"), ("fix", "repair"), ("hide", "conceal"), ("keep", "retain"),
    ("near", "close"), ("odd", "strange"), ("quiet", "silent"), ("rule", "law"), ("sick", "ill"),
    ("street", "avenue"), ("tidy", "neat"), ("under", "below"), ("wealth", "riches"), ("world", "earth"),
    ("answer", "reply"), ("brave", "bold"), ("calm", "still"), ("cold", "chilly"), ("damp", "moist"),
    ("fair", "just"), ("gather", "collect"), ("grin", "smile"), ("huge", "vast"), ("idea", "notion"),
    ("kid", "child"), ("loud", "noisy"), ("mend", "patch"), ("old", "aged"), ("part", "piece"),
    ("quit", "leave"), ("rapid", "swift"), ("safe", "secure"), ("test", "exam"), ("wish", "desire"),
];

fn owned(pairs: &[(&str, &str)]) -> Vec<WordPair> {
    pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
}

/// Built-in antonym pairs in fixed order.
pub fn builtin_antonyms() -> Vec<WordPair> {
    owned(ANTONYMS)
}

/// Built-in synonym pairs in fixed order.
pub fn builtin_synonyms() -> Vec<WordPair> {
    owned(SYNONYMS)
}
