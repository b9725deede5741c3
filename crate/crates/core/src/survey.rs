//! Blinded rating survey: rendered instance files, the manifest that maps
//! aliases to methods, and de-blinding of collected ratings.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::Interpolation;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::evaluate::Candidate;
use crate::formats::ply::save_ply;
use crate::geometry::{back_project, DistanceImage};
use crate::metrics::{mos_aggregate, MosReport, RatingRecord};

pub const MANIFEST_FILE: &str = "manifest.json";
/// Method name of the pass-through candidate.
pub const GROUND_TRUTH: &str = "gt";

/// A named candidate taking part in the survey.
#[derive(Debug, Clone, Copy)]
pub struct SurveyMethod<'a> {
    pub name: &'a str,
    pub candidate: Candidate<'a>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyInstance {
    pub scene: String,
    pub alias: String,
    /// PLY file name relative to the manifest.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectOrder {
    pub subject: String,
    /// Indices into the instance list in presentation order.
    pub order: Vec<usize>,
}

/// Calibration examples shown before the first rating.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchors {
    /// Example of the best category (ground truth).
    pub best: String,
    /// Example of the worst category (nearest-neighbour up-sampling).
    pub worst: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyManifest {
    pub seed: u64,
    /// Blinded token → method name.
    pub aliases: BTreeMap<String, String>,
    pub instances: Vec<SurveyInstance>,
    pub subjects: Vec<SubjectOrder>,
    pub anchors: Anchors,
}

impl SurveyManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn method_of(&self, alias: &str) -> Result<&str> {
        self.aliases
            .get(alias)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownAlias(alias.to_string()))
    }
}

fn token(rng: &mut impl Rng) -> String {
    format!("{:08x}", rng.random::<u32>())
}

fn write_cloud(dir: &Path, file: &str, image: &DistanceImage) -> Result<()> {
    let mut cloud = back_project(image);
    // Only the ground truth carries labels; dropping them keeps files alike.
    cloud.labels = None;
    save_ply(&dir.join(file), &cloud)
}

/// Renders every scene with every method into `out_dir`, assigns random
/// aliases and shuffles the presentation order per subject.
pub fn survey_prepare(
    scenes: &[(String, Sample)],
    methods: &[SurveyMethod<'_>],
    seed: u64,
    subjects: &[String],
    out_dir: &Path,
) -> Result<SurveyManifest> {
    if scenes.is_empty() {
        return Err(Error::BadConfig("survey needs at least one scene".into()));
    }
    if methods.len() < 2 {
        return Err(Error::BadConfig("survey needs at least two methods".into()));
    }
    let names: BTreeSet<&str> = methods.iter().map(|m| m.name).collect();
    if names.len() != methods.len() {
        return Err(Error::BadConfig("method names must be unique".into()));
    }
    let scene_ids: BTreeSet<&str> = scenes.iter().map(|(id, _)| id.as_str()).collect();
    if scene_ids.len() != scenes.len() {
        return Err(Error::BadConfig("scene names must be unique".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut aliases = BTreeMap::new();
    let mut alias_of = Vec::with_capacity(methods.len());
    for m in methods {
        let mut t = token(&mut rng);
        while aliases.contains_key(&t) {
            t = token(&mut rng);
        }
        aliases.insert(t.clone(), m.name.to_string());
        alias_of.push(t);
    }

    let mut pairs: Vec<(usize, usize)> = (0..scenes.len())
        .flat_map(|s| (0..methods.len()).map(move |m| (s, m)))
        .collect();
    pairs.shuffle(&mut rng);
    let mut instances = Vec::with_capacity(pairs.len());
    for (k, &(s, m)) in pairs.iter().enumerate() {
        let (scene, sample) = &scenes[s];
        let file = format!("inst_{k:03}.ply");
        write_cloud(out_dir, &file, &methods[m].candidate.predict(sample)?)?;
        instances.push(SurveyInstance {
            scene: scene.clone(),
            alias: alias_of[m].clone(),
            file,
        });
    }

    let anchor_scene = &scenes[0].1;
    let anchors = Anchors {
        best: "anchor_best.ply".into(),
        worst: "anchor_worst.ply".into(),
    };
    write_cloud(out_dir, &anchors.best, &Candidate::GroundTruth.predict(anchor_scene)?)?;
    write_cloud(
        out_dir,
        &anchors.worst,
        &Candidate::Interpolation(Interpolation::Nearest).predict(anchor_scene)?,
    )?;

    let subjects = subjects
        .iter()
        .enumerate()
        .map(|(i, subject)| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64 + 1);
            let mut order: Vec<usize> = (0..instances.len()).collect();
            order.shuffle(&mut r);
            SubjectOrder {
                subject: subject.clone(),
                order,
            }
        })
        .collect();

    let manifest = SurveyManifest {
        seed,
        aliases,
        instances,
        subjects,
        anchors,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Replaces aliases by method names and aggregates per method.
pub fn survey_aggregate(ratings: &[RatingRecord], manifest: &SurveyManifest) -> Result<MosReport> {
    let named = ratings
        .iter()
        .map(|r| {
            Ok(RatingRecord {
                alias: manifest.method_of(&r.alias)?.to_string(),
                ..r.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    mos_aggregate(&named)
}
