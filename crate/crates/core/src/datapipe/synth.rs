//! Synthetic labelled recordings with the same schema as the clinical data.
//!
//! Every signal channel is a first-order autoregressive process whose mean
//! and scale depend on the subject's class. A per-subject latent process is
//! added to every channel so that channels are correlated.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::schema::{signal_channels, ChannelSpec, DEMOGRAPHICS};
use super::stream::{Stream, Subject};
use crate::error::{Error, Result};

/// Typical value and within-class spread of each demographic feature, and
/// whether the feature is a yes/no answer.
const DEMOGRAPHIC_BASE: [(f64, f64, bool); 7] = [
    (45.0, 12.0, false),
    (0.5, 0.0, true),
    (170.0, 9.0, false),
    (75.0, 12.0, false),
    (0.4, 0.0, true),
    (0.25, 0.0, true),
    (0.35, 0.0, true),
];

const EPOCH_MS: i64 = 1_600_000_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Number of subjects per class.
    pub class_counts: Vec<usize>,
    /// Recording length range in hours; each subject draws uniformly.
    pub min_hours: f64,
    pub max_hours: f64,
    /// Class mean offset in units of a channel's spread. Zero makes every
    /// class identically distributed.
    pub separation: f64,
    /// Per-subject mean offset in units of a channel's spread.
    pub subject_jitter: f64,
    /// Within-class variation of demographic features (1 = typical).
    pub demographic_spread: f64,
    /// Lag-one-second autocorrelation of every channel.
    pub phi: f64,
    /// Innovation scale in units of a channel's spread.
    pub noise: f64,
    /// Weight of the per-subject latent process shared by all channels.
    pub shared_noise: f64,
    /// Maximum random delay of each stream's first timestamp.
    pub max_start_offset_ms: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            class_counts: vec![27, 25],
            min_hours: 1.0,
            max_hours: 1.5,
            separation: 1.0,
            subject_jitter: 0.3,
            demographic_spread: 1.0,
            phi: 0.9,
            noise: 1.0,
            shared_noise: 0.3,
            max_start_offset_ms: 2000,
        }
    }
}

impl SynthConfig {
    /// Three classes: type-1, type-2, healthy.
    pub fn three_class() -> Self {
        Self {
            class_counts: vec![14, 13, 25],
            ..Self::default()
        }
    }

    pub fn num_subjects(&self) -> usize {
        self.class_counts.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Parameter(what.to_string()));
        if !(self.min_hours > 0.0)
            || !(self.max_hours >= self.min_hours)
            || !self.max_hours.is_finite()
        {
            return bad("recording duration must be positive with min_hours <= max_hours");
        }
        if self.class_counts.len() < 2 {
            return bad("at least two classes are required");
        }
        if !(-1.0 < self.phi && self.phi < 1.0) {
            return bad("phi must lie in (-1, 1)");
        }
        for (name, v) in [
            ("separation", self.separation),
            ("subject_jitter", self.subject_jitter),
            ("demographic_spread", self.demographic_spread),
            ("noise", self.noise),
            ("shared_noise", self.shared_noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!(
                    "{name} must be finite and non-negative"
                )));
            }
        }
        if self.max_start_offset_ms < 0 {
            return bad("max_start_offset_ms must be non-negative");
        }
        Ok(())
    }
}

/// Class-conditional parameters drawn once per dataset.
#[derive(Debug, Clone)]
pub struct SynthModel {
    config: SynthConfig,
    channels: Vec<ChannelSpec>,
    /// `[class][channel]` mean offset direction.
    mean_dir: Vec<Vec<f64>>,
    /// `[class][channel]` log-scale direction.
    scale_dir: Vec<Vec<f64>>,
    /// `[class][feature]` demographic offset direction.
    demo_dir: Vec<Vec<f64>>,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

impl SynthModel {
    pub fn new<R: Rng + ?Sized>(config: SynthConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let channels: Vec<ChannelSpec> = signal_channels().copied().collect();
        let classes = config.class_counts.len();
        let mut draw = |n: usize| -> Vec<Vec<f64>> {
            (0..classes)
                .map(|_| (0..n).map(|_| normal(rng)).collect())
                .collect()
        };
        let mean_dir = draw(channels.len());
        let scale_dir = draw(channels.len());
        let demo_dir = draw(DEMOGRAPHICS.len());
        Ok(Self {
            config,
            channels,
            mean_dir,
            scale_dir,
            demo_dir,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    /// Class of the `index`-th subject: classes are laid out in order.
    pub fn label_of(&self, index: usize) -> Option<usize> {
        let mut upto = 0;
        for (k, &n) in self.config.class_counts.iter().enumerate() {
            upto += n;
            if index < upto {
                return Some(k);
            }
        }
        None
    }

    /// Generates the `index`-th subject.
    pub fn subject<R: Rng + ?Sized>(&self, index: usize, rng: &mut R) -> Result<Subject> {
        let cfg = &self.config;
        let label = self.label_of(index).ok_or(Error::Index {
            index,
            limit: cfg.num_subjects(),
        })?;
        let hours = if cfg.max_hours > cfg.min_hours {
            rng.random_range(cfg.min_hours..=cfg.max_hours)
        } else {
            cfg.min_hours
        };
        let duration_s = (hours * 3600.0).round();
        let base_ms = EPOCH_MS + index as i64 * 86_400_000;

        // Shared latent process sampled once per second.
        let seconds = duration_s as usize + 1;
        let innov = (1.0 - cfg.phi * cfg.phi).sqrt();
        let mut latent = Vec::with_capacity(seconds);
        let mut z = normal(rng);
        for _ in 0..seconds {
            latent.push(z);
            z = cfg.phi * z + innov * normal(rng);
        }

        let mut streams = Vec::with_capacity(self.channels.len());
        for (c, spec) in self.channels.iter().enumerate() {
            let offset = if cfg.max_start_offset_ms > 0 {
                rng.random_range(0..=cfg.max_start_offset_ms)
            } else {
                0
            };
            let mean = spec.level
                + spec.spread
                    * (cfg.separation * self.mean_dir[label][c] + cfg.subject_jitter * normal(rng));
            let scale =
                spec.spread * cfg.noise * (0.25 * cfg.separation * self.scale_dir[label][c]).exp();
            let shared = spec.spread * cfg.shared_noise;
            let phi = cfg.phi.abs().powf(1.0 / spec.rate_hz).copysign(cfg.phi);
            let step_innov = (1.0 - phi * phi).sqrt();
            let n = (spec.rate_hz * duration_s).round() as usize;
            let mut x = normal(rng);
            let samples = (0..n)
                .map(|i| {
                    let second = ((i as f64 / spec.rate_hz) as usize).min(seconds - 1);
                    let v = mean + scale * x + shared * latent[second];
                    x = phi * x + step_innov * normal(rng);
                    v
                })
                .collect();
            streams.push(Stream {
                name: spec.name.to_string(),
                rate_hz: spec.rate_hz,
                start_ms: base_ms + offset,
                samples,
            });
        }

        let demographics = DEMOGRAPHIC_BASE
            .iter()
            .enumerate()
            .map(|(d, &(level, spread, binary))| {
                let dir = self.demo_dir[label][d];
                if binary {
                    let p = (level + 0.3 * (cfg.separation * dir).tanh()).clamp(0.0, 1.0);
                    if cfg.demographic_spread > 0.0 {
                        f64::from(rng.random::<f64>() < p)
                    } else {
                        f64::from(p >= 0.5)
                    }
                } else {
                    (level
                        + spread
                            * (0.5 * cfg.separation * dir + cfg.demographic_spread * normal(rng)))
                    .round()
                }
            })
            .collect();

        Ok(Subject {
            id: format!("s{index:03}"),
            streams,
            demographics,
            label,
        })
    }
}

/// Generates the whole dataset in subject order.
pub fn synth_generate<R: Rng + ?Sized>(config: &SynthConfig, rng: &mut R) -> Result<Vec<Subject>> {
    let model = SynthModel::new(config.clone(), rng)?;
    (0..config.num_subjects())
        .map(|i| model.subject(i, rng))
        .collect()
}
