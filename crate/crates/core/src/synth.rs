//! Ground-truthed synthetic scene generation. The observation model runs in
//! reverse: interacting people are placed on an o-space circle that passes
//! through the camera, oriented toward its center; bystanders are placed
//! at random (or, adversarially, with the exact interacting geometry but a
//! neutral expression regime). Distances map to face heights through the
//! inverse of the same quadratic family the pipeline fits, so the round
//! trip is consistent by construction.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    save_identities, save_manifest, save_sequence_file, Category, DatasetManifest, FrameEntry,
    FrameObservation, IdentityEntry, IngestError, ManifestDoc, SequenceLabels, SequenceRecord,
    SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),
    #[error("invalid scene spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Canonical quadratic `distance_cm = a·h² + b·h + c`, decreasing over the
/// usable height range; its inverse drives face-height synthesis and its
/// sampled table is emitted as the dataset calibration file.
pub const CANONICAL_QUADRATIC: (f64, f64, f64) = (0.002, -1.6, 350.0);

/// Distances measured for the calibration table.
pub const CALIBRATION_DISTANCES_CM: [f64; 7] = [30.0, 50.0, 70.0, 100.0, 150.0, 200.0, 250.0];

/// Face height whose canonical distance equals `d`, valid for
/// d ∈ [30, 275] cm.
pub fn height_for_distance(d: f64) -> f64 {
    let d = d.clamp(30.0, 274.0);
    400.0 - (500.0 * d - 15_000.0).sqrt()
}

/// Target expression distribution plus a Dirichlet concentration; lower
/// concentration means freer per-frame variation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpressionRegime {
    pub target: [f64; 8],
    pub concentration: f64,
}

impl ExpressionRegime {
    /// Dominantly neutral, tightly concentrated.
    pub fn formal() -> Self {
        ExpressionRegime {
            target: [0.85, 0.03, 0.02, 0.02, 0.02, 0.02, 0.02, 0.02],
            concentration: 60.0,
        }
    }

    /// Happiness/surprise weighted with visibly more variation.
    pub fn informal() -> Self {
        ExpressionRegime {
            target: [0.24, 0.40, 0.21, 0.03, 0.03, 0.03, 0.03, 0.03],
            concentration: 12.0,
        }
    }

    /// Flat neutral for people who are merely present in the scene.
    pub fn neutral() -> Self {
        ExpressionRegime {
            target: [0.90, 0.02, 0.02, 0.012, 0.012, 0.012, 0.012, 0.012],
            concentration: 80.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptorSpec {
    pub dim: usize,
    /// Amplitude of the category-specific sparse support.
    pub separation: f64,
    /// Amplitude of the dense background noise.
    pub noise: f64,
}

impl Default for DescriptorSpec {
    fn default() -> Self {
        DescriptorSpec { dim: 96, separation: 1.0, noise: 0.15 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub dim: usize,
    pub noise: f64,
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec { dim: 32, noise: 0.25 }
    }
}

/// Everything needed to sample one candidate social event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub people: usize,
    pub interacting_fraction: f64,
    pub o_space_radius_cm: (f64, f64),
    pub bystander_radius_cm: (f64, f64),
    /// Adversarial crowds: bystanders reuse the interacting placement and
    /// orientation model so geometry alone cannot separate the classes.
    pub bystander_mimicry: bool,
    pub frame_count: (usize, usize),
    pub height_noise_px: f64,
    pub angle_noise_deg: f64,
    /// Per-sequence tilt applied to each person's expression target.
    pub expression_drift: f64,
    /// Per-frame probability of dropping a track's observation.
    pub occlusion_rate: f64,
    pub category: Category,
    pub interacting_regime: ExpressionRegime,
    pub bystander_regime: ExpressionRegime,
    pub descriptor: Option<DescriptorSpec>,
    pub embedding: Option<EmbeddingSpec>,
    pub frame_interval_s: f64,
}

impl SceneSpec {
    /// Everyone in the scene interacts; expressions follow the category.
    pub fn interaction_scene(category: Category, people: usize) -> SceneSpec {
        SceneSpec {
            people,
            interacting_fraction: 1.0,
            o_space_radius_cm: (60.0, 120.0),
            bystander_radius_cm: (60.0, 240.0),
            bystander_mimicry: false,
            frame_count: (20, 60),
            height_noise_px: 4.0,
            angle_noise_deg: 6.0,
            expression_drift: 0.05,
            occlusion_rate: 0.05,
            category,
            interacting_regime: match category {
                Category::Formal => ExpressionRegime::formal(),
                Category::Informal => ExpressionRegime::informal(),
            },
            bystander_regime: ExpressionRegime::neutral(),
            descriptor: Some(DescriptorSpec::default()),
            embedding: Some(EmbeddingSpec::default()),
            frame_interval_s: 30.0,
        }
    }

    /// Nobody interacts; bystanders stand wherever they like.
    pub fn crowd_scene(people: usize) -> SceneSpec {
        SceneSpec {
            interacting_fraction: 0.0,
            category: Category::Informal,
            ..SceneSpec::interaction_scene(Category::Informal, people)
        }
    }

    /// Nobody interacts, but the crowd mimics interacting geometry; only
    /// the (neutral) expressions give them away.
    pub fn adversarial_crowd(people: usize) -> SceneSpec {
        SceneSpec { bystander_mimicry: true, ..SceneSpec::crowd_scene(people) }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.people == 0 {
            return Err(SynthError::BadSpec("scene needs at least one person".into()));
        }
        if !(0.0..=1.0).contains(&self.interacting_fraction) {
            return Err(SynthError::BadSpec(format!(
                "interacting_fraction {} outside [0, 1]",
                self.interacting_fraction
            )));
        }
        let (lo, hi) = self.frame_count;
        if lo < 1 || hi > 200 || lo > hi {
            return Err(SynthError::BadSpec(format!("frame_count range ({lo}, {hi}) invalid")));
        }
        let interacting = self.interacting_count();
        if interacting >= 1 && self.o_space_radius_cm.0 <= 0.0 {
            return Err(SynthError::InfeasibleGeometry(format!(
                "o-space radius {} with {} interacting agents",
                self.o_space_radius_cm.0, interacting
            )));
        }
        Ok(())
    }

    fn interacting_count(&self) -> usize {
        (self.people as f64 * self.interacting_fraction).round() as usize
    }
}

/// A person in the global pool: a stable name and a latent identity
/// embedding shared by all their appearances.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonIdentity {
    pub name: String,
    pub vector: Vec<f64>,
}

impl PersonIdentity {
    /// Deterministic pool of unit identity vectors.
    pub fn pool(count: usize, dim: usize, seed: u64) -> Vec<PersonIdentity> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1d);
        (0..count)
            .map(|p| {
                let mut v: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
                for x in &mut v {
                    *x /= norm;
                }
                PersonIdentity { name: format!("p{p:03}"), vector: v }
            })
            .collect()
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn sample_range(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn sample_expression(rng: &mut impl Rng, target: &[f64; 8], concentration: f64) -> [f64; 8] {
    let mut out = [0.0f64; 8];
    let mut sum = 0.0;
    for (o, &t) in out.iter_mut().zip(target) {
        let alpha = (t * concentration).max(0.01);
        let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
        *o = gamma.sample(rng);
        sum += *o;
    }
    if sum <= 1e-12 {
        out = [0.0; 8];
        out[0] = 1.0;
        return out;
    }
    for o in &mut out {
        *o /= sum;
    }
    out
}

struct Placement {
    distance_cm: f64,
    yaw_deg: f64,
    x_pos: f64,
}

/// Interacting placement: a point on the o-space circle through the camera,
/// facing the circle center.
fn place_on_o_space(radius: f64, theta_deg: f64) -> Placement {
    let theta = theta_deg * PI / 180.0;
    let pos = (radius * theta.sin(), radius * (1.0 - theta.cos()));
    let center = (0.0, radius);
    let facing = (center.0 - pos.0, center.1 - pos.1);
    let to_camera = (-pos.0, -pos.1);
    let cross = facing.0 * to_camera.1 - facing.1 * to_camera.0;
    let dot = facing.0 * to_camera.0 + facing.1 * to_camera.1;
    let yaw = cross.atan2(dot) * 180.0 / PI;
    let distance = (pos.0 * pos.0 + pos.1 * pos.1).sqrt();
    let x_pos = (0.5 + pos.0 / (2.0 * (pos.1.abs() + 1.0))).clamp(0.0, 1.0);
    Placement { distance_cm: distance, yaw_deg: yaw, x_pos }
}

struct PersonPlan {
    track_id: u32,
    person: String,
    interacting: bool,
    base: Placement,
    base_pitch: f64,
    base_roll: f64,
    target: [f64; 8],
    concentration: f64,
    identity: Vec<f64>,
}

/// One labeled synthetic sequence. `persons` supplies one identity per
/// scene member (tracks are numbered 1..=people in that order); labels and
/// the ground-truth identity mapping are attached to the output.
pub fn generate_sequence(
    spec: &SceneSpec,
    sequence_id: &str,
    day_index: u32,
    persons: &[PersonIdentity],
    seed: u64,
) -> Result<(SequenceRecord, Vec<IdentityEntry>), SynthError> {
    spec.validate()?;
    if persons.len() != spec.people {
        return Err(SynthError::BadSpec(format!(
            "scene wants {} people but {} identities were supplied",
            spec.people,
            persons.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let interacting_count = spec.interacting_count();
    let frames = rng.random_range(spec.frame_count.0..=spec.frame_count.1);
    let o_radius = sample_range(&mut rng, spec.o_space_radius_cm);

    let mut plans = Vec::with_capacity(spec.people);
    for (idx, person) in persons.iter().enumerate() {
        let interacting = idx < interacting_count;
        let base = if interacting {
            // Spread interacting members over the far arc of the circle;
            // a lone partner stands diametrically opposite the camera.
            let span = 120.0;
            let theta = if interacting_count == 1 {
                180.0
            } else {
                180.0 - span / 2.0 + span * idx as f64 / (interacting_count - 1) as f64
            };
            place_on_o_space(o_radius, theta)
        } else if spec.bystander_mimicry {
            let radius = sample_range(&mut rng, spec.o_space_radius_cm);
            let theta = rng.random_range(120.0..240.0);
            place_on_o_space(radius, theta)
        } else {
            let distance = sample_range(&mut rng, spec.bystander_radius_cm);
            Placement {
                distance_cm: distance,
                yaw_deg: rng.random_range(-90.0..90.0),
                x_pos: rng.random_range(0.0..1.0),
            }
        };
        let regime =
            if interacting { &spec.interacting_regime } else { &spec.bystander_regime };
        let mut target = regime.target;
        if spec.expression_drift > 0.0 {
            let mut sum = 0.0;
            for t in &mut target {
                *t = (*t + spec.expression_drift * gaussian(&mut rng).abs()).max(1e-3);
                sum += *t;
            }
            for t in &mut target {
                *t /= sum;
            }
        }
        plans.push(PersonPlan {
            track_id: idx as u32 + 1,
            person: person.name.clone(),
            interacting,
            base,
            base_pitch: if interacting { 0.0 } else { gaussian(&mut rng) * 8.0 },
            base_roll: if interacting { 0.0 } else { gaussian(&mut rng) * 8.0 },
            target,
            concentration: regime.concentration,
            identity: person.vector.clone(),
        });
    }

    // Category-specific sparse descriptor support.
    let descriptor_base: Option<Vec<f64>> = spec.descriptor.as_ref().map(|d| {
        let block = d.dim / 3;
        let offset = match spec.category {
            Category::Formal => 0,
            Category::Informal => block,
        };
        let mut base = vec![0.0; d.dim];
        for k in 0..block {
            base[offset + k] = d.separation * (0.3 + 0.7 * rng.random::<f64>());
        }
        base
    });

    let mut track_frames: Vec<BTreeSet<u64>> = Vec::with_capacity(plans.len());
    for _ in &plans {
        let mut kept = BTreeSet::new();
        for f in 0..frames as u64 {
            if rng.random::<f64>() >= spec.occlusion_rate {
                kept.insert(f);
            }
        }
        if kept.is_empty() {
            kept.insert(frames as u64 / 2);
        }
        track_frames.push(kept);
    }

    let mut frame_entries = Vec::with_capacity(frames);
    for f in 0..frames as u64 {
        let mut observations = Vec::new();
        for (plan, kept) in plans.iter().zip(&track_frames) {
            if !kept.contains(&f) {
                continue;
            }
            let distance = (plan.base.distance_cm
                + gaussian(&mut rng) * spec.height_noise_px * 0.3)
                .clamp(30.0, 274.0);
            let height =
                (height_for_distance(distance) + gaussian(&mut rng) * spec.height_noise_px)
                    .clamp(30.0, 450.0);
            let noise_deg = spec.angle_noise_deg;
            let yaw = (plan.base.yaw_deg + gaussian(&mut rng) * noise_deg).clamp(-90.0, 90.0);
            let pitch = (plan.base_pitch + gaussian(&mut rng) * noise_deg).clamp(-90.0, 90.0);
            let roll = (plan.base_roll + gaussian(&mut rng) * noise_deg).clamp(-90.0, 90.0);
            let expression_probs =
                sample_expression(&mut rng, &plan.target, plan.concentration);
            let embedding = spec.embedding.as_ref().map(|e| {
                let mut v: Vec<f64> = plan
                    .identity
                    .iter()
                    .map(|&x| x + e.noise * gaussian(&mut rng))
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
                for x in &mut v {
                    *x /= norm;
                }
                v
            });
            observations.push(FrameObservation {
                frame_id: f,
                track_id: plan.track_id,
                face_height: height,
                x_pos: plan.base.x_pos,
                yaw,
                pitch,
                roll,
                expression_probs,
                embedding,
            });
        }
        let descriptor = descriptor_base.as_ref().map(|base| {
            let noise = spec.descriptor.as_ref().map_or(0.0, |d| d.noise);
            base.iter()
                .map(|&b| (b + noise * gaussian(&mut rng).abs()) as f32)
                .collect::<Vec<f32>>()
        });
        frame_entries.push(FrameEntry { frame_id: f, descriptor, observations });
    }

    let labels = SequenceLabels {
        interacting: plans.iter().map(|p| (p.track_id, p.interacting)).collect(),
        category: if interacting_count >= 1 { Some(spec.category) } else { None },
    };
    let record = SequenceRecord {
        sequence_id: sequence_id.to_string(),
        day_index,
        frame_interval_s: spec.frame_interval_s,
        labels: Some(labels),
        frames: frame_entries,
    };
    let identities = plans
        .iter()
        .map(|p| IdentityEntry {
            sequence_id: sequence_id.to_string(),
            track_id: p.track_id,
            person: p.person.clone(),
        })
        .collect();
    Ok((record, identities))
}

// ---------------------------------------------------------------------------
// Dataset-level generation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetPlan {
    pub spec: SceneSpec,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub plans: Vec<DatasetPlan>,
    pub observation_days: u32,
    /// Size of the recurring-person pool sequences draw from.
    pub person_pool: usize,
    pub seed: u64,
}

fn mix(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Generates every sequence of the plan set (in parallel, one derived seed
/// per sequence), writes the canonical dataset layout under `out_dir` and
/// returns the loaded manifest. Fixed seeds give bit-identical files.
pub fn generate_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<DatasetManifest, SynthError> {
    if spec.observation_days < 1 {
        return Err(SynthError::BadSpec("observation_days must be at least 1".into()));
    }
    if spec.plans.iter().all(|p| p.count == 0) {
        return Err(SynthError::BadSpec("plan set generates no sequences".into()));
    }
    let embedding_dim =
        spec.plans.iter().find_map(|p| p.spec.embedding.as_ref().map(|e| e.dim)).unwrap_or(32);
    let pool = PersonIdentity::pool(spec.person_pool.max(1), embedding_dim, spec.seed);

    let mut jobs: Vec<(usize, SceneSpec)> = Vec::new();
    for plan in &spec.plans {
        for _ in 0..plan.count {
            let index = jobs.len();
            jobs.push((index, plan.spec.clone()));
        }
    }

    let generated: Vec<Result<(SequenceRecord, Vec<IdentityEntry>), SynthError>> = jobs
        .par_iter()
        .map(|(index, scene)| {
            let sub_seed = mix(spec.seed, *index);
            // Deterministic rotation through the pool keeps every person
            // recurring across sequences.
            let mut chooser = ChaCha8Rng::seed_from_u64(sub_seed ^ 0xc0ffee);
            let start = chooser.random_range(0..pool.len());
            let persons: Vec<PersonIdentity> =
                (0..scene.people).map(|k| pool[(start + k) % pool.len()].clone()).collect();
            let sequence_id = format!("seq_{index:04}");
            let day = (*index as u32 % spec.observation_days) + 1;
            generate_sequence(scene, &sequence_id, day, &persons, sub_seed)
        })
        .collect();

    std::fs::create_dir_all(out_dir.join("sequences"))
        .map_err(|e| IngestError::Io { path: out_dir.to_path_buf(), source: e })?;

    let mut sequence_files = Vec::new();
    let mut identities = Vec::new();
    let mut descriptor_dim = None;
    for result in generated {
        let (record, ids) = result?;
        let rel = format!("sequences/{}.jsonl", record.sequence_id);
        save_sequence_file(&record, &out_dir.join(&rel))?;
        if descriptor_dim.is_none() {
            descriptor_dim = record.frames.iter().find_map(|f| f.descriptor.as_ref().map(Vec::len));
        }
        sequence_files.push(rel);
        identities.extend(ids);
    }

    let mut calibration = String::from("# face_height_px distance_cm\n");
    for &d in &CALIBRATION_DISTANCES_CM {
        let h = height_for_distance(d);
        // Three measured persons per distance, as a real table would hold.
        for _ in 0..3 {
            calibration.push_str(&format!("{h:.6} {d:.1}\n"));
        }
    }
    std::fs::write(out_dir.join("calibration.txt"), calibration)
        .map_err(|e| IngestError::Io { path: out_dir.join("calibration.txt"), source: e })?;

    save_identities(&identities, &out_dir.join("identities.json"))?;

    let mut settings: Vec<String> =
        ["SID1", "SID2", "SID3", "SID4"].iter().map(|s| s.to_string()).collect();
    if descriptor_dim.is_some() {
        settings.extend(["SIC1", "SIC2", "SIC3"].iter().map(|s| s.to_string()));
    }
    let doc = ManifestDoc {
        schema_version: SCHEMA_VERSION,
        observation_days: spec.observation_days,
        sequences: sequence_files,
        calibration_table: Some("calibration.txt".to_string()),
        settings,
        descriptor_dim,
        identities: Some("identities.json".to_string()),
    };
    save_manifest(&doc, &out_dir.join("manifest.json"))?;
    Ok(crate::ingest::load_manifest(&out_dir.join("manifest.json"))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{extract_prototypes, load_sequences};

    fn noiseless_spec() -> SceneSpec {
        SceneSpec {
            height_noise_px: 0.0,
            angle_noise_deg: 0.0,
            expression_drift: 0.0,
            occlusion_rate: 0.0,
            o_space_radius_cm: (90.0, 90.0),
            frame_count: (25, 25),
            ..SceneSpec::interaction_scene(Category::Informal, 1)
        }
    }

    #[test]
    fn noiseless_single_partner_geometry() {
        let pool = PersonIdentity::pool(1, 32, 0);
        let (record, _) = generate_sequence(&noiseless_spec(), "s0", 1, &pool, 7).unwrap();
        assert_eq!(record.frames.len(), 25);
        let first = &record.frames[0].observations[0];
        for frame in &record.frames {
            let obs = &frame.observations[0];
            assert_eq!(obs.face_height, first.face_height);
            assert!(obs.yaw.abs() < 1e-9, "yaw {}", obs.yaw);
        }
        // Diametric partner: distance is the o-space diameter.
        let d = 0.002 * first.face_height * first.face_height - 1.6 * first.face_height + 350.0;
        assert!((d - 180.0).abs() < 1e-6, "distance {d}");
        assert!(record.labels.as_ref().unwrap().interacting[&1]);
    }

    #[test]
    fn bystander_scene_is_all_negative() {
        let spec = SceneSpec::crowd_scene(3);
        let pool = PersonIdentity::pool(3, 32, 0);
        let (record, _) = generate_sequence(&spec, "s0", 1, &pool, 3).unwrap();
        let labels = record.labels.as_ref().unwrap();
        assert!(labels.interacting.values().all(|&v| !v));
        assert_eq!(labels.category, None);
        let protos = extract_prototypes(&record);
        assert_eq!(protos.len(), 3);
        assert!(protos.iter().all(|p| p.label == Some(false)));
    }

    #[test]
    fn formal_regime_has_lower_expression_entropy() {
        let entropy = |p: &[f64; 8]| -> f64 {
            p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let formal = ExpressionRegime::formal();
        let informal = ExpressionRegime::informal();
        let mut formal_sum = 0.0;
        let mut informal_sum = 0.0;
        for _ in 0..100 {
            formal_sum += entropy(&sample_expression(&mut rng, &formal.target, formal.concentration));
            informal_sum +=
                entropy(&sample_expression(&mut rng, &informal.target, informal.concentration));
        }
        assert!(
            formal_sum / 100.0 < informal_sum / 100.0,
            "formal {formal_sum} informal {informal_sum}"
        );
    }

    #[test]
    fn infeasible_geometry_is_rejected() {
        let spec = SceneSpec {
            o_space_radius_cm: (0.0, 0.0),
            ..SceneSpec::interaction_scene(Category::Informal, 2)
        };
        let pool = PersonIdentity::pool(2, 32, 0);
        match generate_sequence(&spec, "s0", 1, &pool, 0) {
            Err(SynthError::InfeasibleGeometry(_)) => {}
            other => panic!("expected InfeasibleGeometry, got {other:?}"),
        }
    }

    #[test]
    fn dataset_balance_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            plans: vec![
                DatasetPlan { spec: SceneSpec::interaction_scene(Category::Informal, 1), count: 5 },
                DatasetPlan { spec: SceneSpec::crowd_scene(1), count: 5 },
            ],
            observation_days: 4,
            person_pool: 6,
            seed: 99,
        };
        let manifest = generate_dataset(&spec, dir.path()).unwrap();
        assert_eq!(manifest.doc.sequences.len(), 10);
        let loaded = load_sequences(&manifest).unwrap();
        assert_eq!(loaded.sequences.len(), 10);
        assert!(loaded.warnings.is_empty(), "warnings: {:?}", loaded.warnings);
        let positives = loaded
            .sequences
            .iter()
            .filter(|s| s.labels.as_ref().unwrap().interacting.values().any(|&v| v))
            .count();
        assert_eq!(positives, 5);
    }

    #[test]
    fn dataset_is_bit_identical_for_fixed_seed() {
        let make = |dir: &Path| {
            let spec = DatasetSpec {
                plans: vec![DatasetPlan {
                    spec: SceneSpec::interaction_scene(Category::Formal, 2),
                    count: 4,
                }],
                observation_days: 2,
                person_pool: 5,
                seed: 1234,
            };
            generate_dataset(&spec, dir).unwrap();
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        make(dir_a.path());
        make(dir_b.path());
        let mut names: Vec<String> = std::fs::read_dir(dir_a.path().join("sequences"))
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().to_string())
            .collect();
        names.sort();
        assert!(!names.is_empty());
        for name in names {
            let a = std::fs::read(dir_a.path().join("sequences").join(&name)).unwrap();
            let b = std::fs::read(dir_b.path().join("sequences").join(&name)).unwrap();
            assert_eq!(a, b, "file {name}");
        }
        for name in ["manifest.json", "calibration.txt", "identities.json"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "file {name}");
        }

        // A different seed must produce a different corpus.
        let dir_c = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            plans: vec![DatasetPlan {
                spec: SceneSpec::interaction_scene(Category::Formal, 2),
                count: 4,
            }],
            observation_days: 2,
            person_pool: 5,
            seed: 4321,
        };
        generate_dataset(&spec, dir_c.path()).unwrap();
        let a = std::fs::read(dir_a.path().join("sequences/seq_0000.jsonl")).unwrap();
        let c = std::fs::read(dir_c.path().join("sequences/seq_0000.jsonl")).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn identity_embeddings_separate_same_from_cross() {
        let pool = PersonIdentity::pool(2, 32, 11);
        let spec = SceneSpec::interaction_scene(Category::Informal, 2);
        let (record, ids) = generate_sequence(&spec, "s0", 1, &pool, 42).unwrap();
        assert_eq!(ids.len(), 2);
        let mut same = Vec::new();
        let mut cross = Vec::new();
        let protos = extract_prototypes(&record);
        let track: Vec<Vec<&Vec<f64>>> = protos
            .iter()
            .map(|p| p.observations.iter().map(|o| o.embedding.as_ref().unwrap()).collect())
            .collect();
        let cos = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
        for i in 0..track[0].len() {
            for j in (i + 1)..track[0].len() {
                same.push(cos(track[0][i], track[0][j]));
            }
            for j in 0..track[1].len() {
                cross.push(cos(track[0][i], track[1][j]));
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&same) > mean(&cross) + 0.15,
            "same {} vs cross {}",
            mean(&same),
            mean(&cross)
        );
    }

    #[test]
    fn calibration_fit_recovers_canonical_model() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            plans: vec![DatasetPlan {
                spec: SceneSpec::interaction_scene(Category::Informal, 1),
                count: 1,
            }],
            observation_days: 1,
            person_pool: 1,
            seed: 0,
        };
        let manifest = generate_dataset(&spec, dir.path()).unwrap();
        let table =
            crate::ingest::load_calibration(&manifest.calibration_path().unwrap()).unwrap();
        assert_eq!(table.len(), 21);
        let model = crate::signals::fit_distance_model(&table).unwrap();
        let (a, b, c) = CANONICAL_QUADRATIC;
        assert!((model.a - a).abs() < 1e-6);
        assert!((model.b - b).abs() < 1e-4);
        assert!((model.c - c).abs() < 1e-2);
        assert!(model.residual_rms < 1e-6);
    }
}
