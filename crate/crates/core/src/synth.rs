//! Synthetic corpus whose captions are deterministic templates over the
//! input labels and two salience signals carried by the image features.
//!
//! Feature layout per grid row: dims 0..5 one-hot setting (×2), dim 5 the
//! entity salience, dim 6 the object salience (both with Gaussian noise),
//! remaining dims pure noise. Entity salience decides how many true entities
//! the caption names; unnamed ones appear in the alt-text as unlabeled
//! look-alikes that selective hypernymization maps to their hypernym.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::dataset::{FeatureSource, Record};
use crate::text::labels::{ObjectLabel, WebEntity};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub feature_rows: usize,
    pub feature_dim: usize,
    /// Standard deviation of the noise on the two salience dims.
    pub signal_noise: f64,
    /// Standard deviation of the pure-noise dims.
    pub feature_noise: f64,
    /// Adds lower-scored distractor objects and entities to the labels.
    pub noise_labels: bool,
    /// Share of examples with both a person and a place.
    pub two_entity_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train: 5000,
            dev: 500,
            test: 500,
            feature_rows: 4,
            feature_dim: 16,
            signal_noise: 0.1,
            feature_noise: 0.5,
            noise_labels: true,
            two_entity_fraction: 0.7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 7 || self.feature_rows == 0 {
            return Err(Error::Config(
                "synthetic features need at least 1 row and 7 dims".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.two_entity_fraction) || self.signal_noise < 0.0 || self.feature_noise < 0.0 {
            return Err(Error::Config("synthetic noise and fractions out of range".into()));
        }
        Ok(())
    }
}

struct PersonType {
    ty: &'static str,
    verb: &'static str,
    hypernym: &'static str,
    names: &'static [&'static str],
}

struct PlaceType {
    ty: &'static str,
    prep: &'static str,
    hypernym: &'static str,
    names: &'static [&'static str],
}

const PEOPLE: &[PersonType] = &[
    PersonType {
        ty: "ARTIST",
        verb: "performs on stage",
        hypernym: "musician",
        names: &[
            "Lena Hart",
            "Owen Price",
            "Maya Stone",
            "Theo Brandt",
            "Iris Kowal",
            "Jonah Reed",
        ],
    },
    PersonType {
        ty: "ACTOR",
        verb: "attends the premiere",
        hypernym: "actor",
        names: &[
            "Clara Voss",
            "Felix Moreau",
            "Nina Patel",
            "Hugo Lind",
            "Rosa Delgado",
            "Ivan Sokol",
        ],
    },
    PersonType {
        ty: "ATHLETE",
        verb: "celebrates with teammates",
        hypernym: "player",
        names: &[
            "Marco Silva",
            "Ada Okafor",
            "Leo Tanaka",
            "Sara Novak",
            "Ben Quist",
            "Elif Kaya",
        ],
    },
    PersonType {
        ty: "POLITICIAN",
        verb: "speaks to supporters",
        hypernym: "politician",
        names: &[
            "Paul Werner",
            "Greta Holm",
            "Omar Haddad",
            "Julia Ferro",
            "Karl Benes",
            "Mina Sato",
        ],
    },
];

const PLACES: &[PlaceType] = &[
    PlaceType {
        ty: "THEATER",
        prep: "at",
        hypernym: "theater",
        names: &["Apollo Hall", "Lyric House", "Orpheum Rooms", "Carlton Playhouse"],
    },
    PlaceType {
        ty: "STADIUM",
        prep: "at",
        hypernym: "stadium",
        names: &["Eagle Park", "Harbor Field", "Summit Grounds", "Falcon Dome"],
    },
    PlaceType {
        ty: "CITY",
        prep: "in",
        hypernym: "city",
        names: &["Porto", "Lima", "Oslo", "Quito", "Dakar", "Perth"],
    },
];

const OBJECTS: &[&str] = &[
    "guitar",
    "microphone",
    "trophy",
    "umbrella",
    "flag",
    "banner",
    "camera",
    "bouquet",
];
const SETTINGS: &[&str] = &["", "at night", "in the rain", "at sunset", "in winter"];
const LANDMARKS: &[&str] = &["Old Mill", "Birch Tower", "Crane Bridge", "Mossy Gate"];

/// Level of entity naming for a salience value: 0 names nothing, 1 the
/// person, 2 person and place.
pub fn naming_level(s_we: f64, two_entities: bool) -> usize {
    match (two_entities, s_we) {
        (true, s) if s < 0.3 => 0,
        (true, s) if s < 0.6 => 1,
        (true, _) => 2,
        (false, s) if s < 0.4 => 0,
        (false, _) => 1,
    }
}

fn pick_other<'a>(rng: &mut ChaCha8Rng, pool: &'a [&'a str], not: &[&str]) -> &'a str {
    let free: Vec<&&str> = pool.iter().filter(|n| !not.contains(n)).collect();
    free.choose(rng).map(|n| **n).unwrap_or(pool[0])
}

fn one(rng: &mut ChaCha8Rng, cfg: &SynthConfig, id: String) -> Record {
    let person = &PEOPLE[rng.random_range(0..PEOPLE.len())];
    let two = rng.random_bool(cfg.two_entity_fraction);
    let place = &PLACES[rng.random_range(0..PLACES.len())];
    let s_we: f64 = rng.random();
    let s_obj: f64 = rng.random();
    let setting = rng.random_range(0..SETTINGS.len());
    let object = OBJECTS[rng.random_range(0..OBJECTS.len())];
    let level = naming_level(s_we, two);

    let true_person = *person.names.choose(rng).expect("names");
    let true_place = *place.names.choose(rng).expect("names");
    let mut entities = vec![WebEntity::new(
        true_person,
        person.ty,
        round(rng.random_range(0.85..0.99)),
    )];
    if two {
        entities.push(WebEntity::new(true_place, place.ty, round(rng.random_range(0.7..0.84))));
    }
    let mut objects = vec![ObjectLabel::new(object, round(rng.random_range(0.8..0.99)))];
    if cfg.noise_labels {
        for _ in 0..rng.random_range(0..3) {
            let o = pick_other(
                rng,
                OBJECTS,
                &objects.iter().map(|o| o.name.as_str()).collect::<Vec<_>>(),
            );
            objects.push(ObjectLabel::new(o, round(rng.random_range(0.2..0.6))));
        }
        for _ in 0..rng.random_range(0..3) {
            let p = &PEOPLE[rng.random_range(0..PEOPLE.len())];
            let taken: Vec<&str> = entities.iter().map(|e| e.name.as_str()).collect();
            let n = pick_other(rng, p.names, &taken);
            entities.push(WebEntity::new(n, p.ty, round(rng.random_range(0.2..0.6))));
        }
    }

    let labeled: Vec<&str> = entities.iter().map(|e| e.name.as_str()).collect();
    let person_mention = if level >= 1 {
        true_person
    } else {
        pick_other(rng, person.names, &labeled)
    };
    let mut alt = format!("{person_mention} {}", person.verb);
    if two {
        let place_mention = if level >= 2 {
            true_place
        } else {
            pick_other(rng, place.names, &labeled)
        };
        alt.push_str(&format!(" {} {place_mention}", place.prep));
    }
    if s_obj >= 0.5 {
        alt.push_str(&format!(" with {object}"));
    }
    if setting > 0 {
        alt.push(' ');
        alt.push_str(SETTINGS[setting]);
    }
    if rng.random_bool(0.3) {
        alt.push_str(&format!(" near {}", LANDMARKS.choose(rng).expect("landmarks")));
    }

    let mut hypernyms = BTreeMap::new();
    for p in PEOPLE {
        for n in p.names {
            hypernyms.insert(n.to_string(), p.hypernym.to_string());
        }
    }
    for p in PLACES {
        for n in p.names {
            hypernyms.insert(n.to_string(), p.hypernym.to_string());
        }
    }

    let sig = Normal::new(0.0, cfg.signal_noise.max(1e-12)).expect("finite sigma");
    let noise = Normal::new(0.0, cfg.feature_noise.max(1e-12)).expect("finite sigma");
    let grid = (0..cfg.feature_rows)
        .map(|_| {
            (0..cfg.feature_dim)
                .map(|d| match d {
                    0..=4 => {
                        if d == setting {
                            2.0
                        } else {
                            0.0
                        }
                    }
                    5 => (s_we + sig.sample(rng)) as f32,
                    6 => (s_obj + sig.sample(rng)) as f32,
                    _ => noise.sample(rng) as f32,
                })
                .collect()
        })
        .collect();
    Record {
        example_id: Some(id),
        image_features: FeatureSource::Inline(grid),
        object_labels: objects,
        web_entities: entities,
        alt_text: alt,
        caption: None,
        hypernyms,
    }
}

fn round(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// `n` raw records with ids `{prefix}-{i}`.
pub fn generate(cfg: &SynthConfig, seed: u64, prefix: &str, n: usize) -> Result<Vec<Record>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|i| one(&mut rng, cfg, format!("{prefix}-{i}"))).collect())
}

/// Train, dev and test splits from independent seeds.
pub fn generate_splits(cfg: &SynthConfig, seed: u64) -> Result<[Vec<Record>; 3]> {
    Ok([
        generate(cfg, seed, "train", cfg.train)?,
        generate(cfg, seed.wrapping_add(1), "dev", cfg.dev)?,
        generate(cfg, seed.wrapping_add(2), "test", cfg.test)?,
    ])
}
