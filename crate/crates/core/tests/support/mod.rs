#![allow(dead_code)]

use std::path::PathBuf;

use ibl_core::gateway::{CompletionBackend, CompletionRequest, GatewayError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixtures().join(name)).unwrap()
}

/// O(n²) AUC: fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj != 0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Deterministic stand-in for a chat model. Code-model requests get a mix
/// of expression-dialect programs and the usual failure shapes; per-row
/// requests get a probability computed from the query row.
pub struct SyntheticLlm;

impl SyntheticLlm {
    fn code_model(&self, req: &CompletionRequest, rng: &mut ChaCha8Rng) -> String {
        let header = req
            .user_text
            .lines()
            .find(|l| l.ends_with(",target"))
            .expect("prompt carries a data header");
        let names: Vec<&str> = header.split(',').filter(|n| *n != "target").collect();
        let roll: f64 = rng.random();
        if roll < 0.12 {
            return "Here is a model:\n```python\ndef predict(x):\n    return 0.5\n```\nIt is simple.".into();
        }
        let k = rng.random_range(2..=names.len().min(5));
        let mut terms = Vec::new();
        for _ in 0..k {
            let name = names[rng.random_range(0..names.len())];
            let w: f64 = rng.random_range(-1.5..1.5);
            terms.push(format!("{w:.3} * row['{name}']"));
        }
        let linear = terms.join(" + ");
        let body = if roll < 0.2 {
            format!("{linear} + 0.5")
        } else if roll < 0.25 {
            format!("1 / (row['{0}'] - row['{0}'])", names[0])
        } else if roll < 0.6 {
            format!("sigmoid({linear})")
        } else {
            format!("let score = {linear};\nclamp(0.5 + score / 4)")
        };
        format!(
            "```\n# Do not change the code before this point.\n# Please describe the process required to make \
             the prediction below.\n{body}\n# Do not change the code after this point.\n```"
        )
    }

    fn row_answer(&self, req: &CompletionRequest, rng: &mut ChaCha8Rng) -> String {
        let lines: Vec<&str> = req.user_text.lines().collect();
        let at = lines
            .iter()
            .position(|l| l.contains("except `target`"))
            .expect("query section present");
        let header: Vec<&str> = lines[at + 2].split(',').collect();
        let values: Vec<f64> = lines[at + 3].split(',').map(|v| v.parse().unwrap()).collect();
        let mut z = 0.0;
        for (name, v) in header.iter().zip(&values) {
            if name.contains("female") || name.contains("child") {
                z += 1.5 * v;
            } else if *name == "pclass" {
                z -= 0.6 * v;
            } else if name.starts_with("Feature_1") || *name == "a" || *name == "c" {
                z += v;
            } else if name.starts_with("Feature_2") || *name == "b" || *name == "d" {
                z -= v;
            }
        }
        z += rng.random_range(-0.5..0.5);
        let p = 1.0 / (1.0 + (-z).exp());
        match rng.random_range(0..10) {
            0 => "I cannot determine that from the data.".into(),
            1 => format!("The probability is {p:.3}."),
            _ => format!("{p:.3}"),
        }
    }
}

impl CompletionBackend for SyntheticLlm {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(req.attempt_tag.as_str()));
        if req.attempt_tag.as_str().contains(".icl.") {
            Ok(self.row_answer(req, &mut rng))
        } else {
            Ok(self.code_model(req, &mut rng))
        }
    }

    fn max_concurrency(&self) -> usize {
        4
    }
}

/// Forwards to another backend and keeps every request it sees.
pub struct Spy<B> {
    pub inner: B,
    pub seen: std::sync::Mutex<Vec<CompletionRequest>>,
}

impl<B> Spy<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, seen: std::sync::Mutex::new(Vec::new()) }
    }
}

impl<B: CompletionBackend> CompletionBackend for Spy<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        self.seen.lock().unwrap().push(req.clone());
        self.inner.complete(req)
    }
}

/// Thirty scripted replies for one cell: five that cannot be parsed and
/// twenty-five linear-sigmoid programs whose test AUCs are all distinct.
/// Returns the replies, the index of the best valid one and its AUC, with
/// every AUC computed by direct evaluation and the pairwise oracle.
pub fn best_of_n_script(test: &ibl_core::Dataset) -> (Vec<String>, usize, f64) {
    const MALFORMED_AT: [usize; 5] = [0, 4, 13, 21, 29];
    let malformed = [
        "Sure! Here is my approach:\n\n```python\ndef predict(x):\n    return x['Feature_1'] > 0\n```".to_string(),
        "sigmoid(0.3 * Feature_3)".to_string(),
        "let y = ;\nclamp(y)".to_string(),
        "I am not able to derive a formula from so few rows.".to_string(),
        "clamp(0.5 + (Feature_1 * 0.2)".to_string(),
    ];
    let labels = test.labels();
    let mut seen: Vec<f64> = Vec::new();
    let mut valid = Vec::new();
    let mut step = 0;
    while valid.len() < 25 {
        let angle = -1.2 + 0.05 * step as f64;
        step += 1;
        let (w1, w2) = (angle.cos(), angle.sin());
        let (w1, w2) = ((w1 * 1e4).round() / 1e4, (w2 * 1e4).round() / 1e4);
        let scores: Vec<f64> = test.rows().map(|r| 1.0 / (1.0 + (-(w1 * r[0] + w2 * r[1])).exp())).collect();
        let a = pairwise_auc(&scores, labels);
        if seen.iter().any(|s| (s - a).abs() < 1e-12) {
            continue;
        }
        seen.push(a);
        valid.push((format!("sigmoid({w1} * Feature_1 + {w2} * Feature_2)"), a));
    }
    // interleave so the best candidate is not simply the last one
    valid.sort_by(|x, y| x.1.total_cmp(&y.1));
    let mut order: Vec<(String, f64)> = Vec::new();
    let (mut lo, mut hi) = (0, valid.len());
    while lo < hi {
        hi -= 1;
        order.push(valid[hi].clone());
        if lo < hi {
            order.push(valid[lo].clone());
            lo += 1;
        }
    }
    order.rotate_left(7);
    let mut replies = Vec::new();
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    let mut valid_iter = order.into_iter();
    let mut bad_iter = malformed.into_iter();
    for i in 0..30 {
        if MALFORMED_AT.contains(&i) {
            replies.push(bad_iter.next().unwrap());
        } else {
            let (text, a) = valid_iter.next().unwrap();
            if a > best.1 {
                best = (i, a);
            }
            replies.push(text);
        }
    }
    (replies, best.0, best.1)
}
