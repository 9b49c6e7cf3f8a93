//! Template grammars for the structured prompt datasets.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FrapError, Result};
use crate::prompt::{PromptSpec, DEFAULT_TOKENS};

/// Slot name to candidate words. Multi-word entries (scenes) are allowed.
pub type Vocabulary = BTreeMap<String, Vec<String>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateId {
    /// `a {animal} and a {animal}`
    AnimalAnimal,
    /// `a {color} {object} and a {color} {object}`
    ColorObject,
    /// `a {animal} and a {color} {object}`
    AnimalObject,
    /// `a {animal} and a {animal} {scene}`
    AnimalScene,
    /// `a {color} {object} and a {color} {object} {scene}`
    ColorObjectScene,
    /// `a {object} and a {object} and a {object}`
    MultiObject,
}

impl TemplateId {
    pub const ALL: [TemplateId; 6] = [
        TemplateId::AnimalAnimal,
        TemplateId::ColorObject,
        TemplateId::AnimalObject,
        TemplateId::AnimalScene,
        TemplateId::ColorObjectScene,
        TemplateId::MultiObject,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateId::AnimalAnimal => "animal-animal",
            TemplateId::ColorObject => "color-object",
            TemplateId::AnimalObject => "animal-object",
            TemplateId::AnimalScene => "animal-scene",
            TemplateId::ColorObjectScene => "color-object-scene",
            TemplateId::MultiObject => "multi-object",
        }
    }

    fn slots(self) -> &'static [&'static str] {
        match self {
            TemplateId::AnimalAnimal => &["animals"],
            TemplateId::ColorObject => &["colors", "objects"],
            TemplateId::AnimalObject => &["animals", "colors", "objects"],
            TemplateId::AnimalScene => &["animals", "scenes"],
            TemplateId::ColorObjectScene => &["colors", "objects", "scenes"],
            TemplateId::MultiObject => &["objects"],
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TemplateId {
    type Err = FrapError;

    fn from_str(s: &str) -> Result<Self> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| FrapError::UnknownTemplate(s.to_string()))
    }
}

/// Incrementally assembled prompt: words plus annotated word positions.
#[derive(Default)]
struct Builder {
    words: Vec<String>,
    objects: Vec<usize>,
    pairs: Vec<(usize, usize)>,
}

impl Builder {
    fn plain(&mut self, text: &str) -> &mut Self {
        self.words.extend(text.split_whitespace().map(str::to_string));
        self
    }

    fn object(&mut self, word: &str) -> &mut Self {
        self.plain(word);
        self.objects.push(self.words.len() - 1);
        self
    }

    /// Color modifier bound to the object that follows it.
    fn colored(&mut self, color: &str, word: &str) -> &mut Self {
        self.plain(color);
        let m = self.words.len() - 1;
        self.object(word);
        let s = self.words.len() - 1;
        self.pairs.push((s, m));
        self
    }

    fn build(&self) -> Result<PromptSpec> {
        PromptSpec::from_words(&self.words.join(" "), DEFAULT_TOKENS, &self.objects, &self.pairs)
    }
}

fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

fn two_colors<'a>(rng: &mut ChaCha8Rng, colors: &'a [String]) -> (&'a str, &'a str) {
    let a = rng.random_range(0..colors.len());
    let b = if colors.len() > 1 {
        let k = rng.random_range(0..colors.len() - 1);
        if k >= a {
            k + 1
        } else {
            k
        }
    } else {
        a
    };
    (&colors[a], &colors[b])
}

/// Expands a template over a vocabulary. Colors are drawn from the seeded
/// generator (distinct within a prompt whenever the vocabulary allows it);
/// everything else enumerates unordered combinations deterministically.
pub fn expand_template(template: TemplateId, vocab: &Vocabulary, seed: u64) -> Result<Vec<PromptSpec>> {
    let slot = |name: &str| -> Result<&[String]> {
        vocab
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| FrapError::config(format!("vocabulary lacks slot `{name}` for {template}")))
    };
    for name in template.slots() {
        slot(name)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    match template {
        TemplateId::AnimalAnimal => {
            let animals = slot("animals")?;
            for (i, j) in pairs(animals.len()) {
                out.push(
                    Builder::default()
                        .plain("a")
                        .object(&animals[i])
                        .plain("and a")
                        .object(&animals[j])
                        .build()?,
                );
            }
        }
        TemplateId::ColorObject | TemplateId::ColorObjectScene => {
            let objects = slot("objects")?;
            let colors = slot("colors")?;
            if colors.is_empty() {
                return Err(FrapError::config("vocabulary slot `colors` is empty"));
            }
            let scenes: Vec<Option<&str>> = if template == TemplateId::ColorObjectScene {
                slot("scenes")?.iter().map(|s| Some(s.as_str())).collect()
            } else {
                vec![None]
            };
            for (i, j) in pairs(objects.len()) {
                for scene in &scenes {
                    let (ca, cb) = two_colors(&mut rng, colors);
                    let mut b = Builder::default();
                    b.plain("a")
                        .colored(ca, &objects[i])
                        .plain("and a")
                        .colored(cb, &objects[j]);
                    if let Some(scene) = scene {
                        b.plain(scene);
                    }
                    out.push(b.build()?);
                }
            }
        }
        TemplateId::AnimalObject => {
            let animals = slot("animals")?;
            let objects = slot("objects")?;
            let colors = slot("colors")?;
            if colors.is_empty() {
                return Err(FrapError::config("vocabulary slot `colors` is empty"));
            }
            for animal in animals {
                for object in objects {
                    let color = &colors[rng.random_range(0..colors.len())];
                    out.push(
                        Builder::default()
                            .plain("a")
                            .object(animal)
                            .plain("and a")
                            .colored(color, object)
                            .build()?,
                    );
                }
            }
        }
        TemplateId::AnimalScene => {
            let animals = slot("animals")?;
            let scenes = slot("scenes")?;
            for (i, j) in pairs(animals.len()) {
                for scene in scenes {
                    out.push(
                        Builder::default()
                            .plain("a")
                            .object(&animals[i])
                            .plain("and a")
                            .object(&animals[j])
                            .plain(scene)
                            .build()?,
                    );
                }
            }
        }
        TemplateId::MultiObject => {
            let objects = slot("objects")?;
            let n = objects.len();
            for i in 0..n {
                for (j, k) in pairs(n).filter(|&(j, _)| j > i) {
                    out.push(
                        Builder::default()
                            .plain("a")
                            .object(&objects[i])
                            .plain("and a")
                            .object(&objects[j])
                            .plain("and a")
                            .object(&objects[k])
                            .build()?,
                    );
                }
            }
        }
    }
    Ok(out)
}

/// The vocabulary shipped with the crate (`data/vocab.json`).
pub fn default_vocabulary() -> Vocabulary {
    serde_json::from_str(include_str!("../data/vocab.json")).expect("bundled vocabulary parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(entries: &[(&str, &[&str])]) -> Vocabulary {
        entries
            .iter()
            .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    #[test]
    fn color_object_single_color() {
        let v = vocab(&[("colors", &["red"]), ("objects", &["apple", "chair"])]);
        let out = expand_template(TemplateId::ColorObject, &v, 7).unwrap();
        assert_eq!(out.len(), 1);
        let p = &out[0];
        assert_eq!(p.text(), "a red apple and a red chair");
        // <sot> a red apple and a red chair <eot>
        assert_eq!(p.objects(), &[3, 7]);
        assert_eq!(p.pairs(), &[(3, 2), (7, 6)]);
    }

    #[test]
    fn animal_animal_pair() {
        let v = vocab(&[("animals", &["dog", "cat"])]);
        let out = expand_template(TemplateId::AnimalAnimal, &v, 0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].text(), "a dog and a cat");
        assert_eq!(out[0].objects(), &[2, 5]);
        assert!(out[0].pairs().is_empty());
    }

    #[test]
    fn seeded_expansion_is_deterministic() {
        let v = default_vocabulary();
        for t in TemplateId::ALL {
            let a = expand_template(t, &v, 3).unwrap();
            let b = expand_template(t, &v, 3).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn distinct_colors_when_possible() {
        let v = vocab(&[("colors", &["red", "blue"]), ("objects", &["a1", "a2", "a3"])]);
        for p in expand_template(TemplateId::ColorObject, &v, 11).unwrap() {
            let words: Vec<&str> = p.text().split(' ').collect();
            assert_ne!(words[1], words[5]);
        }
    }

    #[test]
    fn unknown_template_and_missing_slot() {
        assert!(matches!(
            "cat-cat".parse::<TemplateId>(),
            Err(FrapError::UnknownTemplate(_))
        ));
        let v = vocab(&[("animals", &["dog"])]);
        assert!(expand_template(TemplateId::ColorObject, &v, 0).is_err());
    }
}
