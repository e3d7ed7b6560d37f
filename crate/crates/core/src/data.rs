//! Synthetic data generation and the parameter layout shared by the online
//! learner, the comparator, and the risk experiments.
//!
//! A model's parameter vector is organized as `blocks` stacked coefficient
//! vectors of `block_dim` features each. Single-output models with
//! per-source parameters select the block named by an example's source id
//! (the feature vector is conceptually embedded as `(0, ..., x, ..., 0)`);
//! multi-class models apply every block — one per class — to the same
//! features. Flat single-output models are the `blocks = 1` case.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::likelihoods::{Example, Label, LikelihoodSpec, LinearValue};
use crate::math::{sigmoid, softmax};
use crate::priors::PriorSpec;

/// Block structure of a parameter vector: `blocks` coefficient vectors of
/// `block_dim` entries, stacked block-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub blocks: usize,
    pub block_dim: usize,
}

impl Layout {
    /// Flat layout: one block over all features.
    pub fn flat(block_dim: usize) -> Self {
        Layout { blocks: 1, block_dim }
    }

    /// Length of the stacked parameter vector.
    pub fn total_dim(&self) -> usize {
        self.blocks * self.block_dim
    }

    /// Index of an example's block: `source - 1` when a source is present,
    /// block 0 otherwise.
    pub fn block_of(&self, example: &Example) -> Result<usize> {
        match example.source() {
            None => Ok(0),
            Some(s) => {
                if s >= 1 && s <= self.blocks {
                    Ok(s - 1)
                } else {
                    Err(Error::InvalidParameter {
                        name: "source",
                        reason: "source id exceeds the number of parameter blocks",
                        value: s as f64,
                    })
                }
            }
        }
    }
}

fn feature_dim(examples: &[Example]) -> Result<usize> {
    let n = examples[0].num_features();
    for ex in examples {
        if ex.num_features() != n {
            return Err(Error::dim(n, ex.num_features(), "feature vector"));
        }
    }
    Ok(n)
}

fn check_source_presence(examples: &[Example], required: bool) -> Result<()> {
    for ex in examples {
        match (required, ex.source()) {
            (true, None) => {
                return Err(Error::UnsupportedConfiguration(
                    "every example must carry a source id under a multi-block layout".to_string(),
                ))
            }
            (false, Some(_)) => {
                return Err(Error::UnsupportedConfiguration(
                    "source ids are not admissible for this likelihood".to_string(),
                ))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Determines the parameter layout for a dataset, optionally reconciling it
/// with a prior.
///
/// Multi-class likelihoods use one block per class and admit no source ids.
/// Single-output likelihoods use the prior's block count when one is given
/// (a flat prior then simply ignores source tags, as in per-source baseline
/// fits); without a prior the block count is the largest source id seen, or
/// 1 for unsourced data. Empty data is allowed only with a prior, whose
/// shape then determines the layout outright.
pub fn infer_layout(
    likelihood: &LikelihoodSpec,
    examples: &[Example],
    prior: Option<&PriorSpec>,
) -> Result<Layout> {
    if examples.is_empty() {
        let prior = prior.ok_or(Error::EmptyInput("examples"))?;
        return match likelihood {
            LikelihoodSpec::MultiClassLogistic { num_classes } => {
                let d = prior.total_dim();
                if d % num_classes != 0 {
                    return Err(Error::dim(*num_classes, d, "prior dimension per class"));
                }
                Ok(Layout {
                    blocks: *num_classes,
                    block_dim: d / num_classes,
                })
            }
            _ => Ok(Layout {
                blocks: prior.num_blocks(),
                block_dim: prior.block_dim(),
            }),
        };
    }
    let n = feature_dim(examples)?;
    let layout = match likelihood {
        LikelihoodSpec::MultiClassLogistic { num_classes } => {
            check_source_presence(examples, false)?;
            Layout {
                blocks: *num_classes,
                block_dim: n,
            }
        }
        _ => {
            let max_source = examples.iter().filter_map(|e| e.source()).max();
            let any_missing = examples.iter().any(|e| e.source().is_none());
            match prior {
                Some(p) if p.num_blocks() > 1 => {
                    check_source_presence(examples, true)?;
                    Layout {
                        blocks: p.num_blocks(),
                        block_dim: n,
                    }
                }
                Some(_) => Layout::flat(n),
                None => match (max_source, any_missing) {
                    (None, _) => Layout::flat(n),
                    (Some(_), true) => {
                        return Err(Error::UnsupportedConfiguration(
                            "examples mix sourced and unsourced rows".to_string(),
                        ))
                    }
                    (Some(k), false) => Layout {
                        blocks: k,
                        block_dim: n,
                    },
                },
            }
        }
    };
    if let Some(p) = prior {
        if p.total_dim() != layout.total_dim() {
            return Err(Error::dim(
                layout.total_dim(),
                p.total_dim(),
                "prior dimension",
            ));
        }
    }
    if layout.blocks > 1 && !matches!(likelihood, LikelihoodSpec::MultiClassLogistic { .. }) {
        for ex in examples {
            layout.block_of(ex)?;
        }
    }
    Ok(layout)
}

/// The example's feature vector embedded into the stacked parameter space:
/// zeros everywhere except the example's block. Multi-class models do not
/// use this (every block sees the raw features).
pub fn embedded_feature(layout: &Layout, example: &Example) -> Result<DVector<f64>> {
    let block = layout.block_of(example)?;
    let n = layout.block_dim;
    if example.num_features() != n {
        return Err(Error::dim(n, example.num_features(), "feature vector"));
    }
    let mut full = DVector::zeros(layout.total_dim());
    full.rows_mut(block * n, n).copy_from(example.features());
    Ok(full)
}

/// Linear value of a stacked parameter vector on one example: a scalar
/// `theta_block . x` for single-output families, the per-class score vector
/// for multi-class.
pub fn linear_value(
    likelihood: &LikelihoodSpec,
    layout: &Layout,
    theta: &DVector<f64>,
    example: &Example,
) -> Result<LinearValue> {
    if theta.len() != layout.total_dim() {
        return Err(Error::dim(layout.total_dim(), theta.len(), "parameter vector"));
    }
    let n = layout.block_dim;
    if example.num_features() != n {
        return Err(Error::dim(n, example.num_features(), "feature vector"));
    }
    match likelihood {
        LikelihoodSpec::MultiClassLogistic { num_classes } => {
            let scores = DVector::from_fn(*num_classes, |k, _| {
                theta.rows(k * n, n).dot(example.features())
            });
            Ok(LinearValue::Vector(scores))
        }
        _ => {
            let block = layout.block_of(example)?;
            Ok(LinearValue::Scalar(
                theta.rows(block * n, n).dot(example.features()),
            ))
        }
    }
}

/// Cumulative log-loss of a fixed parameter vector over a dataset.
pub fn loss_of_theta(
    likelihood: &LikelihoodSpec,
    layout: &Layout,
    theta: &DVector<f64>,
    examples: &[Example],
) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        let z = linear_value(likelihood, layout, theta, ex)?;
        total += likelihood.neg_log_loss(&z, ex.label())?;
    }
    Ok(total)
}

/// Where the generating parameter comes from.
#[derive(Debug, Clone)]
pub enum ThetaSource {
    /// A fixed, user-supplied stacked parameter vector.
    Fixed(DVector<f64>),
    /// One draw from a prior (its stacked dimension must match the layout).
    FromPrior(PriorSpec),
}

/// Which sources generate which rounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceSchedule {
    /// Unsourced examples for `rounds` steps (flat models, multi-class).
    Single { rounds: usize },
    /// Sources `1..=num_sources` cycling one step at a time.
    RoundRobin { num_sources: usize, rounds: usize },
    /// Source `k+1` observed for `per_source[k]` consecutive steps.
    Blocks { per_source: Vec<usize> },
}

impl SourceSchedule {
    /// Total number of rounds the schedule produces.
    pub fn rounds(&self) -> usize {
        match self {
            SourceSchedule::Single { rounds } | SourceSchedule::RoundRobin { rounds, .. } => {
                *rounds
            }
            SourceSchedule::Blocks { per_source } => per_source.iter().sum(),
        }
    }

    /// Number of parameter blocks the schedule implies.
    pub fn num_sources(&self) -> usize {
        match self {
            SourceSchedule::Single { .. } => 1,
            SourceSchedule::RoundRobin { num_sources, .. } => *num_sources,
            SourceSchedule::Blocks { per_source } => per_source.len(),
        }
    }

    fn source_of_round(&self, t: usize) -> Option<usize> {
        match self {
            SourceSchedule::Single { .. } => None,
            SourceSchedule::RoundRobin { num_sources, .. } => Some(t % num_sources + 1),
            SourceSchedule::Blocks { per_source } => {
                let mut remaining = t;
                for (k, &count) in per_source.iter().enumerate() {
                    if remaining < count {
                        return Some(k + 1);
                    }
                    remaining -= count;
                }
                unreachable!("round index beyond schedule length")
            }
        }
    }
}

/// Recipe for a synthetic dataset.
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub likelihood: LikelihoodSpec,
    pub theta: ThetaSource,
    pub num_features: usize,
    pub schedule: SourceSchedule,
}

/// A generated dataset together with the parameter that produced it.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub examples: Vec<Example>,
    pub theta_true: DVector<f64>,
    pub layout: Layout,
}

/// Generates a dataset deterministically from a seed: standard-normal
/// feature vectors rescaled onto the unit ball whenever they exceed it,
/// labels drawn from the model at `theta_true`.
pub fn generate(config: &SyntheticConfig, seed: u64) -> Result<SyntheticDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.num_features;
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "num_features",
            reason: "must be at least 1",
            value: 0.0,
        });
    }
    let layout = match &config.likelihood {
        LikelihoodSpec::MultiClassLogistic { num_classes } => {
            if config.schedule.num_sources() != 1 {
                return Err(Error::UnsupportedConfiguration(
                    "multi-class generation does not take a source schedule".to_string(),
                ));
            }
            Layout {
                blocks: *num_classes,
                block_dim: n,
            }
        }
        _ => Layout {
            blocks: config.schedule.num_sources(),
            block_dim: n,
        },
    };
    let theta_true = match &config.theta {
        ThetaSource::Fixed(theta) => {
            if theta.len() != layout.total_dim() {
                return Err(Error::dim(layout.total_dim(), theta.len(), "theta_true"));
            }
            theta.clone()
        }
        ThetaSource::FromPrior(prior) => {
            if prior.total_dim() != layout.total_dim() {
                return Err(Error::dim(
                    layout.total_dim(),
                    prior.total_dim(),
                    "generating prior",
                ));
            }
            prior.sample(&mut rng)
        }
    };
    let rounds = config.schedule.rounds();
    let mut examples = Vec::with_capacity(rounds);
    for t in 0..rounds {
        let source = config.schedule.source_of_round(t);
        let x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        // Build a label-less probe first so the linear value uses the final
        // (possibly rescaled) features.
        let probe = Example::new_normalized(x, Label::Real(0.0), source)?;
        let z = linear_value(&config.likelihood, &layout, &theta_true, &probe)?;
        let y = draw_label(&config.likelihood, &z, &mut rng);
        examples.push(Example::new(probe.features().clone(), y, source)?);
    }
    Ok(SyntheticDataset {
        examples,
        theta_true,
        layout,
    })
}

fn draw_label<R: Rng + ?Sized>(likelihood: &LikelihoodSpec, z: &LinearValue, rng: &mut R) -> Label {
    match (likelihood, z) {
        (LikelihoodSpec::GaussianRegression { noise_variance }, LinearValue::Scalar(z)) => {
            let eps: f64 = rng.sample(StandardNormal);
            Label::Real(z + noise_variance.sqrt() * eps)
        }
        (LikelihoodSpec::BinaryLogistic, LinearValue::Scalar(z)) => {
            // p(+1 | z) = sigmoid(-z) under the f_y(z) = ln(1 + e^{yz})
            // convention.
            let p_plus = sigmoid(-z);
            Label::Sign(if rng.gen::<f64>() < p_plus { 1 } else { -1 })
        }
        (LikelihoodSpec::MultiClassLogistic { .. }, LinearValue::Vector(z)) => {
            let probs = softmax(z);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (k, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return Label::Class(k + 1);
                }
            }
            Label::Class(probs.len())
        }
        _ => unreachable!("layout construction guarantees matching shapes"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gauss() -> LikelihoodSpec {
        LikelihoodSpec::gaussian_regression(1.0).unwrap()
    }

    #[test]
    fn layout_flat_and_sourced() {
        let flat = infer_layout(
            &gauss(),
            &[Example::new(DVector::from_vec(vec![0.5]), Label::Real(1.0), None).unwrap()],
            None,
        )
        .unwrap();
        assert_eq!(flat, Layout::flat(1));
        let sourced = vec![
            Example::new(DVector::from_vec(vec![0.5]), Label::Real(1.0), Some(2)).unwrap(),
            Example::new(DVector::from_vec(vec![0.1]), Label::Real(0.0), Some(1)).unwrap(),
        ];
        let layout = infer_layout(&gauss(), &sourced, None).unwrap();
        assert_eq!(layout.blocks, 2);
        // Mixing sourced and unsourced rows is rejected.
        let mixed = vec![
            sourced[0].clone(),
            Example::new(DVector::from_vec(vec![0.5]), Label::Real(1.0), None).unwrap(),
        ];
        assert!(infer_layout(&gauss(), &mixed, None).is_err());
    }

    #[test]
    fn layout_respects_prior_shape() {
        let prior = PriorSpec::hier_gauss_one_level(1.0, 1.0, 3, 1).unwrap();
        let sourced = vec![
            Example::new(DVector::from_vec(vec![0.5]), Label::Real(1.0), Some(1)).unwrap(),
        ];
        let layout = infer_layout(&gauss(), &sourced, Some(&prior)).unwrap();
        assert_eq!(layout.blocks, 3);
        // A source id beyond the prior's block count is rejected.
        let bad = vec![
            Example::new(DVector::from_vec(vec![0.5]), Label::Real(1.0), Some(4)).unwrap(),
        ];
        assert!(infer_layout(&gauss(), &bad, Some(&prior)).is_err());
        // Empty data falls back to the prior's shape.
        let layout = infer_layout(&gauss(), &[], Some(&prior)).unwrap();
        assert_eq!(layout.total_dim(), 3);
        // A flat prior over sourced data ignores the tags.
        let flat_prior = PriorSpec::iso_gaussian(1.0, 1).unwrap();
        let layout = infer_layout(&gauss(), &sourced, Some(&flat_prior)).unwrap();
        assert_eq!(layout, Layout::flat(1));
    }

    #[test]
    fn embedding_places_features_in_the_source_block() {
        let layout = Layout { blocks: 3, block_dim: 2 };
        let ex = Example::new(
            DVector::from_vec(vec![0.3, -0.4]),
            Label::Real(0.0),
            Some(2),
        )
        .unwrap();
        let full = embedded_feature(&layout, &ex).unwrap();
        assert_eq!(
            full.as_slice(),
            &[0.0, 0.0, 0.3, -0.4, 0.0, 0.0][..]
        );
        let theta = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        match linear_value(&gauss(), &layout, &theta, &ex).unwrap() {
            LinearValue::Scalar(z) => assert_relative_eq!(z, 3.0 * 0.3 - 4.0 * 0.4),
            _ => panic!("scalar expected"),
        }
    }

    #[test]
    fn multi_class_scores_use_every_block() {
        let likelihood = LikelihoodSpec::multi_class_logistic(3).unwrap();
        let layout = Layout { blocks: 3, block_dim: 2 };
        let ex = Example::new(DVector::from_vec(vec![0.5, 0.5]), Label::Class(2), None).unwrap();
        let theta = DVector::from_vec(vec![1.0, -1.0, 2.0, 0.0, 0.0, 2.0]);
        match linear_value(&likelihood, &layout, &theta, &ex).unwrap() {
            LinearValue::Vector(z) => {
                assert_relative_eq!(z[0], 0.0);
                assert_relative_eq!(z[1], 1.0);
                assert_relative_eq!(z[2], 1.0);
            }
            _ => panic!("vector expected"),
        }
        // Sourced examples are rejected for multi-class models.
        let sourced =
            Example::new(DVector::from_vec(vec![0.5, 0.5]), Label::Class(2), Some(1)).unwrap();
        assert!(infer_layout(&likelihood, &[sourced], None).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_respects_the_unit_ball() {
        let config = SyntheticConfig {
            likelihood: gauss(),
            theta: ThetaSource::FromPrior(PriorSpec::iso_gaussian(1.0, 4).unwrap()),
            num_features: 4,
            schedule: SourceSchedule::Single { rounds: 50 },
        };
        let a = generate(&config, 7).unwrap();
        let b = generate(&config, 7).unwrap();
        let c = generate(&config, 8).unwrap();
        assert_eq!(a.theta_true, b.theta_true);
        assert_ne!(a.theta_true, c.theta_true);
        for (ea, eb) in a.examples.iter().zip(&b.examples) {
            assert_eq!(ea.features(), eb.features());
            assert_eq!(ea.label(), eb.label());
            assert!(ea.features().norm() <= 1.0 + crate::likelihoods::FEATURE_NORM_TOLERANCE);
        }
        assert!(a
            .examples
            .iter()
            .zip(&c.examples)
            .any(|(x, y)| x.features() != y.features()));
    }

    #[test]
    fn schedules_produce_the_announced_sources() {
        let config = SyntheticConfig {
            likelihood: gauss(),
            theta: ThetaSource::FromPrior(
                PriorSpec::hier_gauss_one_level(1.0, 1.0, 2, 3).unwrap(),
            ),
            num_features: 3,
            schedule: SourceSchedule::Blocks {
                per_source: vec![4, 2],
            },
        };
        let data = generate(&config, 3).unwrap();
        let sources: Vec<usize> = data.examples.iter().map(|e| e.source().unwrap()).collect();
        assert_eq!(sources, vec![1, 1, 1, 1, 2, 2]);
        assert_eq!(data.layout.blocks, 2);
        assert_eq!(data.theta_true.len(), 6);

        let rr = SyntheticConfig {
            likelihood: gauss(),
            theta: ThetaSource::Fixed(DVector::zeros(6)),
            num_features: 2,
            schedule: SourceSchedule::RoundRobin {
                num_sources: 3,
                rounds: 7,
            },
        };
        let data = generate(&rr, 4).unwrap();
        let sources: Vec<usize> = data.examples.iter().map(|e| e.source().unwrap()).collect();
        assert_eq!(sources, vec![1, 2, 3, 1, 2, 3, 1]);
    }

    #[test]
    fn labels_match_the_likelihood_family() {
        for (likelihood, dim) in [
            (gauss(), 2),
            (LikelihoodSpec::binary_logistic(), 2),
            (LikelihoodSpec::multi_class_logistic(3).unwrap(), 6),
        ] {
            let config = SyntheticConfig {
                likelihood: likelihood.clone(),
                theta: ThetaSource::Fixed(DVector::from_element(dim, 0.5)),
                num_features: 2,
                schedule: SourceSchedule::Single { rounds: 30 },
            };
            let data = generate(&config, 11).unwrap();
            for ex in &data.examples {
                likelihood.validate_label(ex.label()).unwrap();
            }
        }
    }

    #[test]
    fn labels_follow_dominant_scores() {
        // Whenever one class's score dwarfs the rest, the drawn label is
        // that class (up to the vanishing tail probability).
        let likelihood = LikelihoodSpec::multi_class_logistic(3).unwrap();
        let mut theta = DVector::zeros(6);
        theta[2] = 50.0; // class 2's block, first coordinate
        theta[3] = 50.0;
        let config = SyntheticConfig {
            likelihood: likelihood.clone(),
            theta: ThetaSource::Fixed(theta.clone()),
            num_features: 2,
            schedule: SourceSchedule::Single { rounds: 200 },
        };
        let data = generate(&config, 13).unwrap();
        let mut clear = 0;
        let mut mismatches = 0;
        for ex in &data.examples {
            let z = match linear_value(&likelihood, &data.layout, &theta, ex).unwrap() {
                LinearValue::Vector(z) => z,
                _ => panic!("vector expected"),
            };
            let top = z.imax();
            let runner_up = z
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != top)
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if z[top] - runner_up > 10.0 {
                clear += 1;
                if *ex.label() != Label::Class(top + 1) {
                    mismatches += 1;
                }
            }
        }
        assert!(clear > 50, "only {clear} clear-margin examples");
        assert_eq!(mismatches, 0, "{mismatches} labels defied a >10-nat margin");
    }
}
