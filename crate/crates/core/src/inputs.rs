//! Model inputs: word-level text, grid scenes, and the gender side channel.
//!
//! A scene is a small grid of cells; each cell is empty, holds one object
//! category, or holds the (at most one) person. Gender is carried next to
//! the cells as a side channel that ordinary feature computation never
//! reads — only planted bias terms do.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    /// +1 for male, -1 for female; the sign read by planted bias terms.
    pub fn sign(self) -> f64 {
        match self {
            Gender::Male => 1.0,
            Gender::Female => -1.0,
        }
    }

    pub fn opposite(self) -> Gender {
        match self {
            Gender::Male => Gender::Female,
            Gender::Female => Gender::Male,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

/// Word-level vocabulary: the configured categories followed by the four
/// special words `person`, `man`, `woman`, and `.`.
#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<String>,
    n_categories: usize,
}

impl Vocab {
    pub const PERSON: &'static str = "person";
    pub const MAN: &'static str = "man";
    pub const WOMAN: &'static str = "woman";
    pub const PERIOD: &'static str = ".";

    pub fn new(categories: &[String]) -> Result<Self> {
        if categories.is_empty() {
            return Err(Error::BadModelConfig("category list is empty".into()));
        }
        let mut words = categories.to_vec();
        for special in [Self::PERSON, Self::MAN, Self::WOMAN, Self::PERIOD] {
            if words.iter().any(|w| w == special) {
                return Err(Error::BadModelConfig(format!(
                    "category list may not contain the reserved word {special:?}"
                )));
            }
            words.push(special.to_string());
        }
        let mut dedup = words.clone();
        dedup.sort();
        dedup.dedup();
        if dedup.len() != words.len() {
            return Err(Error::BadModelConfig("duplicate category name".into()));
        }
        Ok(Self {
            words,
            n_categories: categories.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn categories(&self) -> &[String] {
        &self.words[..self.n_categories]
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn id(&self, word: &str) -> Result<usize> {
        self.words
            .iter()
            .position(|w| w == word)
            .ok_or_else(|| Error::UnknownToken(word.to_string()))
    }

    pub fn person_id(&self) -> usize {
        self.n_categories
    }

    pub fn man_id(&self) -> usize {
        self.n_categories + 1
    }

    pub fn woman_id(&self) -> usize {
        self.n_categories + 2
    }

    pub fn period_id(&self) -> usize {
        self.n_categories + 3
    }

    pub fn is_category(&self, id: usize) -> bool {
        id < self.n_categories
    }

    /// Gender sign of a token sequence: +1 if `man` occurs, -1 if `woman`
    /// occurs, 0 otherwise. Both present is rejected.
    pub fn gender_sign_text(&self, text: &TextInput) -> Result<f64> {
        let has_man = text.tokens.iter().any(|&t| t == self.man_id());
        let has_woman = text.tokens.iter().any(|&t| t == self.woman_id());
        match (has_man, has_woman) {
            (true, true) => Err(Error::AmbiguousGender),
            (true, false) => Ok(1.0),
            (false, true) => Ok(-1.0),
            (false, false) => Ok(0.0),
        }
    }
}

/// Token id sequence. Category words are separated by the period token,
/// mirroring the category-prompt style the detector is driven with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextInput {
    pub tokens: Vec<usize>,
}

impl TextInput {
    /// Standard detection prompt: every category in vocabulary order, each
    /// followed by `.`, then an optional trailing gender word and `.`.
    pub fn prompt(vocab: &Vocab, gender_word: Option<Gender>) -> Self {
        let mut tokens = Vec::with_capacity(2 * vocab.n_categories() + 2);
        for c in 0..vocab.n_categories() {
            tokens.push(c);
            tokens.push(vocab.period_id());
        }
        if let Some(g) = gender_word {
            tokens.push(match g {
                Gender::Male => vocab.man_id(),
                Gender::Female => vocab.woman_id(),
            });
            tokens.push(vocab.period_id());
        }
        Self { tokens }
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        for &t in &self.tokens {
            if t >= vocab.len() {
                return Err(Error::UnknownToken(format!("id {t}")));
            }
        }
        Ok(())
    }

    /// Positions of category tokens, in prompt order.
    pub fn category_positions(&self, vocab: &Vocab) -> Vec<(usize, usize)> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, &t)| vocab.is_category(t))
            .map(|(pos, &t)| (pos, t))
            .collect()
    }
}

/// Contents of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellContent {
    Empty,
    /// Object of the given category id.
    Object(usize),
    Person,
}

/// Synthetic grid image.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneInput {
    pub grid: usize,
    pub cells: Vec<CellContent>,
    /// +1 male, -1 female, 0 none/masked; nonzero only at the person cell.
    pub gender_channel: Vec<i8>,
    /// One appearance feature row per cell.
    pub appearance: Tensor2,
}

impl SceneInput {
    pub fn n_cells(&self) -> usize {
        self.grid * self.grid
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_cells();
        if self.cells.len() != n || self.gender_channel.len() != n {
            return Err(Error::Internal(format!(
                "scene with {} cells has {} descriptors / {} channel entries",
                n,
                self.cells.len(),
                self.gender_channel.len()
            )));
        }
        if self.appearance.rows() != n {
            return Err(Error::Internal(format!(
                "appearance has {} rows for {} cells",
                self.appearance.rows(),
                n
            )));
        }
        let persons = self
            .cells
            .iter()
            .filter(|c| matches!(c, CellContent::Person))
            .count();
        if persons > 1 {
            return Err(Error::Internal(format!("{persons} person cells")));
        }
        for (i, (&ch, cell)) in self.gender_channel.iter().zip(&self.cells).enumerate() {
            if !(-1..=1).contains(&ch) {
                return Err(Error::Internal(format!("gender channel {ch} at cell {i}")));
            }
            if ch != 0 && !matches!(cell, CellContent::Person) {
                return Err(Error::Internal(format!(
                    "gender channel set at non-person cell {i}"
                )));
            }
        }
        Ok(())
    }

    pub fn person_cell(&self) -> Option<usize> {
        self.cells
            .iter()
            .position(|c| matches!(c, CellContent::Person))
    }

    /// Gender sign of the image: the person cell's channel, 0 without one.
    pub fn gender_sign(&self) -> f64 {
        match self.person_cell() {
            Some(i) => f64::from(self.gender_channel[i]),
            None => 0.0,
        }
    }

    /// Category ids present in the scene.
    pub fn object_set(&self) -> BTreeSet<usize> {
        self.cells
            .iter()
            .filter_map(|c| match c {
                CellContent::Object(id) => Some(*id),
                _ => None,
            })
            .collect()
    }
}

/// One benchmark example: scene, prompt, ground truth, gender label.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub scene: SceneInput,
    pub text: TextInput,
    pub truth: BTreeSet<usize>,
    pub gender: Option<Gender>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::new(&["cat".into(), "dog".into()]).unwrap()
    }

    #[test]
    fn gender_sign_text_cases() {
        let v = vocab();
        let man = TextInput {
            tokens: vec![0, v.period_id(), v.man_id()],
        };
        let person = TextInput {
            tokens: vec![0, v.period_id(), v.person_id()],
        };
        let objects = TextInput {
            tokens: vec![0, v.period_id(), 1],
        };
        assert_eq!(v.gender_sign_text(&man).unwrap(), 1.0);
        assert_eq!(v.gender_sign_text(&person).unwrap(), 0.0);
        assert_eq!(v.gender_sign_text(&objects).unwrap(), 0.0);

        let both = TextInput {
            tokens: vec![v.man_id(), v.woman_id()],
        };
        assert!(matches!(
            v.gender_sign_text(&both),
            Err(Error::AmbiguousGender)
        ));
    }

    #[test]
    fn vocab_rejects_reserved_and_duplicate_names() {
        assert!(Vocab::new(&["person".into()]).is_err());
        assert!(Vocab::new(&["cat".into(), "cat".into()]).is_err());
        assert!(Vocab::new(&[]).is_err());
    }

    #[test]
    fn prompt_layout() {
        let v = vocab();
        let t = TextInput::prompt(&v, Some(Gender::Female));
        let words: Vec<&str> = t.tokens.iter().map(|&id| v.word(id)).collect();
        assert_eq!(words, vec!["cat", ".", "dog", ".", "woman", "."]);
        let cats = t.category_positions(&v);
        assert_eq!(cats, vec![(0, 0), (2, 1)]);
    }
}
