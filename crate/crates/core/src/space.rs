//! Factorized block search space over a fixed stage skeleton.
//!
//! A genome holds one [`BlockChoice`] per stage. Decoding expands each stage
//! into `num_layers` repeats of the chosen block between a fixed stem
//! (3x3 stride-2 conv) and head (global pool + dense).

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{LayerSpec, ModelGraph, TensorShape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockType {
    Ibn,
    FusedIbn,
    PlainConv,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockChoice {
    pub block: BlockType,
    pub kernel: u32,
    /// Ignored by `plain_conv`.
    pub expansion: u32,
    pub filter_mult: f64,
    pub num_layers: u32,
    /// Residual connection on repeats whose input and output shapes match.
    pub skip: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArchGenome(pub Vec<BlockChoice>);

impl ArchGenome {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("genomes always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn stages(&self) -> &[BlockChoice] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub base_filters: u32,
    /// Applied to the stage's first repeat.
    pub stride: u32,
    pub base_layers: u32,
}

/// Value domain of each gene field; shared by all stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneDomains {
    pub block_types: Vec<BlockType>,
    pub kernels: Vec<u32>,
    pub expansions: Vec<u32>,
    pub filter_mults: Vec<f64>,
    pub num_layers: Vec<u32>,
    pub skip: Vec<bool>,
}

impl Default for GeneDomains {
    fn default() -> Self {
        Self {
            block_types: vec![BlockType::Ibn, BlockType::FusedIbn, BlockType::PlainConv],
            kernels: vec![3, 5],
            expansions: vec![1, 3, 6],
            filter_mults: vec![0.75, 1.0, 1.25],
            num_layers: vec![1, 2, 3, 4],
            skip: vec![false, true],
        }
    }
}

impl GeneDomains {
    fn sizes(&self) -> [usize; 6] {
        [
            self.block_types.len(),
            self.kernels.len(),
            self.expansions.len(),
            self.filter_mults.len(),
            self.num_layers.len(),
            self.skip.len(),
        ]
    }

    fn contains(&self, c: &BlockChoice) -> bool {
        self.block_types.contains(&c.block)
            && self.kernels.contains(&c.kernel)
            && self.expansions.contains(&c.expansion)
            && self.filter_mults.contains(&c.filter_mult)
            && self.num_layers.contains(&c.num_layers)
            && self.skip.contains(&c.skip)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Skeleton {
    pub input: TensorShape,
    pub stem_channels: u32,
    pub head_units: u32,
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub domains: GeneDomains,
}

impl Default for Skeleton {
    /// MobileNetV2-shaped seven-stage skeleton at 224x224x3.
    fn default() -> Self {
        let strides = [1, 2, 2, 2, 1, 2, 1];
        let filters = [16, 24, 40, 80, 112, 192, 320];
        let layers = [1, 2, 2, 3, 3, 4, 1];
        Self {
            input: TensorShape::new(224, 224, 3),
            stem_channels: 32,
            head_units: 1000,
            stages: (0..7)
                .map(|i| Stage {
                    base_filters: filters[i],
                    stride: strides[i],
                    base_layers: layers[i],
                })
                .collect(),
            domains: GeneDomains::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GenomeError {
    #[error("genome has {got} stages, skeleton has {expected}")]
    Length { expected: usize, got: usize },
    #[error("stage {0} holds a value outside its domain")]
    OutOfDomain(usize),
    #[error("stage {0} decodes to zero channels")]
    ZeroChannels(usize),
}

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("cannot read skeleton: {0}")]
    Io(String),
    #[error("cannot parse skeleton: {0}")]
    Parse(String),
    #[error("invalid skeleton: {0}")]
    Invalid(String),
}

impl Skeleton {
    pub fn from_toml(text: &str) -> Result<Self, SkeletonError> {
        let skeleton: Self = toml::from_str(text).map_err(|e| SkeletonError::Parse(e.to_string()))?;
        skeleton.check()?;
        Ok(skeleton)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SkeletonError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| SkeletonError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("skeletons always serialize")
    }

    fn check(&self) -> Result<(), SkeletonError> {
        let bad = |m: &str| Err(SkeletonError::Invalid(m.to_owned()));
        if self.stages.is_empty() {
            return bad("no stages");
        }
        if self.domains.sizes().contains(&0) {
            return bad("empty gene domain");
        }
        if self.stages.iter().any(|s| s.stride != 1 && s.stride != 2) {
            return bad("stage strides must be 1 or 2");
        }
        if !self.input.is_valid() || self.stem_channels == 0 || self.head_units == 0 {
            return bad("zero-sized input, stem or head");
        }
        let d = &self.domains;
        if d.kernels.iter().any(|k| *k != 3 && *k != 5)
            || d.expansions.iter().any(|e| ![1, 3, 6].contains(e))
            || d.num_layers.contains(&0)
            || d.filter_mults.iter().any(|m| !(*m > 0.0))
        {
            return bad("gene domain value outside the supported layer set");
        }
        Ok(())
    }

    pub fn channels(&self, stage: usize, mult: f64) -> u32 {
        (self.stages[stage].base_filters as f64 * mult).round() as u32
    }

    pub fn check_genome(&self, genome: &ArchGenome) -> Result<(), GenomeError> {
        if genome.0.len() != self.stages.len() {
            return Err(GenomeError::Length {
                expected: self.stages.len(),
                got: genome.0.len(),
            });
        }
        for (i, gene) in genome.0.iter().enumerate() {
            if !self.domains.contains(gene) {
                return Err(GenomeError::OutOfDomain(i));
            }
            if self.channels(i, gene.filter_mult) == 0 {
                return Err(GenomeError::ZeroChannels(i));
            }
        }
        Ok(())
    }
}

/// Builds the model a genome describes.
pub fn decode(genome: &ArchGenome, skeleton: &Skeleton) -> Result<ModelGraph, GenomeError> {
    skeleton.check_genome(genome)?;
    let mut layers = vec![LayerSpec::Conv2D {
        kernel: 3,
        stride: 2,
        out_channels: skeleton.stem_channels,
    }];
    let mut channels = skeleton.stem_channels;
    for (i, (gene, stage)) in genome.0.iter().zip(&skeleton.stages).enumerate() {
        let out_channels = skeleton.channels(i, gene.filter_mult);
        for repeat in 0..gene.num_layers {
            let stride = if repeat == 0 { stage.stride } else { 1 };
            let residual = gene.skip && stride == 1 && channels == out_channels;
            let (kernel, expansion) = (gene.kernel, gene.expansion);
            layers.push(match gene.block {
                BlockType::Ibn => LayerSpec::Ibn {
                    kernel,
                    stride,
                    expansion,
                    out_channels,
                    residual,
                },
                BlockType::FusedIbn => LayerSpec::FusedIbn {
                    kernel,
                    stride,
                    expansion,
                    out_channels,
                    residual,
                },
                BlockType::PlainConv => LayerSpec::Conv2D {
                    kernel,
                    stride,
                    out_channels,
                },
            });
            channels = out_channels;
        }
    }
    layers.push(LayerSpec::GlobalAvgPool);
    layers.push(LayerSpec::Dense {
        units: skeleton.head_units,
    });
    Ok(ModelGraph::new("candidate", skeleton.input, layers))
}

/// Rewrites fields that cannot affect the decoded graph to a fixed value, so
/// two genomes decode to the same graph iff their canonical forms are equal.
pub fn canonical(genome: &ArchGenome, skeleton: &Skeleton) -> ArchGenome {
    let mut channels = skeleton.stem_channels;
    let stages = genome
        .0
        .iter()
        .zip(&skeleton.stages)
        .enumerate()
        .map(|(i, (gene, stage))| {
            let mut gene = *gene;
            let out = skeleton.channels(i, gene.filter_mult);
            let first_eligible = stage.stride == 1 && channels == out;
            let any_eligible = first_eligible || gene.num_layers > 1;
            if gene.block == BlockType::PlainConv {
                gene.expansion = skeleton.domains.expansions[0];
                gene.skip = false;
            } else if !any_eligible {
                gene.skip = false;
            }
            channels = out;
            gene
        })
        .collect();
    ArchGenome(stages)
}

pub fn sample_with<R: Rng + ?Sized>(skeleton: &Skeleton, rng: &mut R) -> ArchGenome {
    let d = &skeleton.domains;
    let pick = |rng: &mut R, n: usize| rng.random_range(0..n);
    ArchGenome(
        skeleton
            .stages
            .iter()
            .map(|_| BlockChoice {
                block: d.block_types[pick(rng, d.block_types.len())],
                kernel: d.kernels[pick(rng, d.kernels.len())],
                expansion: d.expansions[pick(rng, d.expansions.len())],
                filter_mult: d.filter_mults[pick(rng, d.filter_mults.len())],
                num_layers: d.num_layers[pick(rng, d.num_layers.len())],
                skip: d.skip[pick(rng, d.skip.len())],
            })
            .collect(),
    )
}

/// Uniform independent draw of every gene; deterministic per seed.
pub fn sample(skeleton: &Skeleton, seed: u64) -> ArchGenome {
    sample_with(skeleton, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn resample<T: Copy + PartialEq, R: Rng + ?Sized>(domain: &[T], current: T, rng: &mut R) -> T {
    let others: Vec<T> = domain.iter().copied().filter(|v| *v != current).collect();
    *others.choose(rng).expect("mutable fields have another value")
}

/// Resamples exactly one (stage, field) position to a different value. Fields
/// with a single-value domain are never chosen; if no field can change the
/// genome is returned as is.
pub fn mutate_with<R: Rng + ?Sized>(
    genome: &ArchGenome,
    skeleton: &Skeleton,
    rng: &mut R,
) -> ArchGenome {
    let sizes = skeleton.domains.sizes();
    let mutable: Vec<usize> = (0..6).filter(|f| sizes[*f] > 1).collect();
    if mutable.is_empty() || genome.0.is_empty() {
        return genome.clone();
    }
    let stage = rng.random_range(0..genome.0.len());
    let field = *mutable.choose(rng).expect("non-empty");
    let d = &skeleton.domains;
    let mut child = genome.clone();
    let gene = &mut child.0[stage];
    match field {
        0 => gene.block = resample(&d.block_types, gene.block, rng),
        1 => gene.kernel = resample(&d.kernels, gene.kernel, rng),
        2 => gene.expansion = resample(&d.expansions, gene.expansion, rng),
        3 => gene.filter_mult = resample(&d.filter_mults, gene.filter_mult, rng),
        4 => gene.num_layers = resample(&d.num_layers, gene.num_layers, rng),
        _ => gene.skip = resample(&d.skip, gene.skip, rng),
    }
    child
}

pub fn mutate(genome: &ArchGenome, skeleton: &Skeleton, seed: u64) -> ArchGenome {
    mutate_with(genome, skeleton, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Number of distinct genomes.
pub fn space_size(skeleton: &Skeleton) -> u128 {
    let per_stage: u128 = skeleton.domains.sizes().iter().map(|s| *s as u128).product();
    (0..skeleton.stages.len()).fold(1u128, |acc, _| acc.saturating_mul(per_stage))
}
