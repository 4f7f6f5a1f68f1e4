use clipsight_tensor::{
    dense_forward, dense_params, BoundParams, ConvCfg, Init, ParamStore, Tape, Tensor, Var,
};

use crate::audio::mel::N_MELS;
use crate::audio::patchify::{MomentPatchSeries, PATCH_FRAMES};
use crate::error::{ModelError, Result};
use crate::train::{fit, TrainCfg, TrainReport};

/// The eight moment taxonomy buckets sound classes roll up into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SoundCategory {
    Human,
    Music,
    Silence,
    Things,
    Animal,
    SourceAmbiguous,
    Background,
    Natural,
}

impl SoundCategory {
    pub const ALL: [SoundCategory; 8] = [
        SoundCategory::Human,
        SoundCategory::Music,
        SoundCategory::Silence,
        SoundCategory::Things,
        SoundCategory::Animal,
        SoundCategory::SourceAmbiguous,
        SoundCategory::Background,
        SoundCategory::Natural,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SoundCategory::Human => "Human",
            SoundCategory::Music => "Music",
            SoundCategory::Silence => "Silence",
            SoundCategory::Things => "Things",
            SoundCategory::Animal => "Animal",
            SoundCategory::SourceAmbiguous => "SourceAmbiguous",
            SoundCategory::Background => "Background",
            SoundCategory::Natural => "Natural",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        SoundCategory::ALL.iter().copied().find(|c| c.name() == name)
    }

    pub fn index(self) -> usize {
        SoundCategory::ALL.iter().position(|&c| c == self).unwrap()
    }
}

/// Class index to category assignment.
#[derive(Clone, Debug)]
pub struct CategoryMap {
    class_to_category: Vec<SoundCategory>,
}

impl CategoryMap {
    pub fn new(class_to_category: Vec<SoundCategory>) -> Self {
        CategoryMap { class_to_category }
    }

    /// Classes cycle through the eight categories in order.
    pub fn round_robin(num_classes: usize) -> Self {
        CategoryMap {
            class_to_category: (0..num_classes)
                .map(|k| SoundCategory::ALL[k % SoundCategory::ALL.len()])
                .collect(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_to_category.len()
    }

    pub fn category(&self, class: usize) -> SoundCategory {
        self.class_to_category[class]
    }

    pub fn classes_in(&self, cat: SoundCategory) -> Vec<usize> {
        (0..self.class_to_category.len())
            .filter(|&k| self.class_to_category[k] == cat)
            .collect()
    }
}

/// Max class probability per category for one moment's probability row.
pub fn category_max_probs(probs_row: &[f64], map: &CategoryMap) -> [f64; 8] {
    let mut out = [0.0; 8];
    for (k, &p) in probs_row.iter().enumerate() {
        let c = map.category(k).index();
        if p > out[c] {
            out[c] = p;
        }
    }
    out
}

/// Category indicator: some class in the category exceeds probability 0.5.
pub fn category_indicators(probs_row: &[f64], map: &CategoryMap) -> [bool; 8] {
    category_max_probs(probs_row, map).map(|p| p > 0.5)
}

/// Per-category count of moments whose indicator is on; the per-video
/// duration sums used by the moment regressions.
pub fn category_durations(probs: &Tensor, map: &CategoryMap) -> [f64; 8] {
    let mut out = [0.0; 8];
    for t in 0..probs.shape()[0] {
        for (c, &on) in category_indicators(probs.row(t), map).iter().enumerate() {
            if on {
                out[c] += 1.0;
            }
        }
    }
    out
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ClassifierConfig {
    pub num_classes: usize,
    pub stem_channels: usize,
    /// Depthwise-separable blocks as (out_channels, stride).
    pub blocks: Vec<(usize, usize)>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            num_classes: 16,
            stem_channels: 8,
            blocks: vec![(16, 2), (24, 2), (32, 1)],
        }
    }
}

impl ClassifierConfig {
    pub fn tiny() -> Self {
        ClassifierConfig {
            num_classes: 8,
            stem_channels: 4,
            blocks: vec![(8, 2), (12, 2), (16, 1)],
        }
    }

    fn last_channels(&self) -> usize {
        self.blocks.last().map(|&(c, _)| c).unwrap_or(self.stem_channels)
    }
}

pub fn register_classifier_params(store: &mut ParamStore, cfg: &ClassifierConfig) {
    store.get_or_init(
        "stem/w",
        &[3, 3, 1, cfg.stem_channels],
        Init::HeUniform { fan_in: 9 },
    );
    store.get_or_init("stem/b", &[cfg.stem_channels], Init::Zeros);
    let mut in_ch = cfg.stem_channels;
    for (i, &(out_ch, _)) in cfg.blocks.iter().enumerate() {
        store.get_or_init(&format!("b{i}/dw/w"), &[3, 3, in_ch], Init::HeUniform { fan_in: 9 });
        store.get_or_init(&format!("b{i}/dw/b"), &[in_ch], Init::Zeros);
        store.get_or_init(
            &format!("b{i}/pw/w"),
            &[1, 1, in_ch, out_ch],
            Init::HeUniform { fan_in: in_ch },
        );
        store.get_or_init(&format!("b{i}/pw/b"), &[out_ch], Init::Zeros);
        in_ch = out_ch;
    }
    dense_params(store, "head/out", cfg.last_channels(), cfg.num_classes);
}

/// Stem conv, depthwise-separable blocks, global average pool, dense
/// per-class logits. Input [B, 96, 64, 1], output [B, num_classes].
pub fn classifier_forward(
    cfg: &ClassifierConfig,
    tape: &Tape,
    bound: &BoundParams,
    x: Var,
) -> Result<Var> {
    let mut h = tape.conv2d(x, bound.var("stem/w"), ConvCfg::same(2))?;
    h = tape.add(h, bound.var("stem/b"))?;
    h = tape.relu(h)?;
    for (i, &(_, stride)) in cfg.blocks.iter().enumerate() {
        h = tape.depthwise_conv2d(h, bound.var(&format!("b{i}/dw/w")), ConvCfg::same(stride))?;
        h = tape.add(h, bound.var(&format!("b{i}/dw/b")))?;
        h = tape.relu(h)?;
        h = tape.conv2d(h, bound.var(&format!("b{i}/pw/w")), ConvCfg::same(1))?;
        h = tape.add(h, bound.var(&format!("b{i}/pw/b")))?;
        h = tape.relu(h)?;
    }
    let pooled = tape.global_avg_pool(h)?;
    Ok(dense_forward(tape, bound, "head/out", pooled)?)
}

/// Per-moment sound classifier trained with multi-label sigmoid targets.
pub struct AudioClassifier {
    pub cfg: ClassifierConfig,
    pub store: ParamStore,
}

impl AudioClassifier {
    pub fn new(cfg: ClassifierConfig, seed: u64) -> Self {
        let mut store = ParamStore::new(seed);
        register_classifier_params(&mut store, &cfg);
        AudioClassifier { cfg, store }
    }

    /// Sigmoid class probabilities for every patch, [count, num_classes].
    pub fn probs(&self, series: &MomentPatchSeries) -> Result<Tensor> {
        if series.is_empty() {
            return Err(ModelError::bad_input("classify_moments", "no patches"));
        }
        let tape = Tape::new();
        let bound = self.store.bind(&tape);
        let x = tape.leaf(series.stacked());
        let logits = classifier_forward(&self.cfg, &tape, &bound, x)?;
        let probs = tape.sigmoid(logits)?;
        Ok(tape.value_cloned(probs))
    }

    /// Trains on (patch, multi-hot class targets) pairs.
    pub fn train(
        &mut self,
        train_set: &[(Tensor, Vec<f64>)],
        val_set: &[(Tensor, Vec<f64>)],
        tcfg: &TrainCfg,
    ) -> Result<TrainReport> {
        let cfg = self.cfg.clone();
        for (patch, targets) in train_set.iter().chain(val_set) {
            if patch.shape() != [PATCH_FRAMES, N_MELS] || targets.len() != cfg.num_classes {
                return Err(ModelError::bad_input(
                    "classifier train",
                    format!(
                        "expected [{PATCH_FRAMES}, {N_MELS}] patches and {} targets, got {:?} and {}",
                        cfg.num_classes,
                        patch.shape(),
                        targets.len()
                    ),
                ));
            }
        }
        fit(&mut self.store, train_set, val_set, tcfg, |tape, bound, (patch, targets), _| {
            let x = tape.leaf(patch.clone().reshape(vec![1, PATCH_FRAMES, N_MELS, 1])?);
            let logits = classifier_forward(&cfg, tape, bound, x)?;
            Ok(tape.bce_with_logits(logits, targets)?)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::patchify::patchify;

    #[test]
    fn zero_weights_give_half_probability_everywhere() {
        let cfg = ClassifierConfig::tiny();
        let mut clf = AudioClassifier::new(cfg.clone(), 1);
        let paths: Vec<String> = clf.store.paths().map(String::from).collect();
        for p in paths {
            let shape = clf.store.get(&p).unwrap().shape().to_vec();
            clf.store.set(&p, Tensor::zeros(shape));
        }
        let mel = Tensor::full(vec![96, 64], 0.3);
        let series = patchify(&mel).unwrap();
        let probs = clf.probs(&series).unwrap();
        assert_eq!(probs.shape(), &[1, cfg.num_classes]);
        assert!(probs.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn probs_shape_is_60_by_classes_for_a_full_clip() {
        let cfg = ClassifierConfig::tiny();
        let clf = AudioClassifier::new(cfg.clone(), 2);
        let data: Vec<f64> = (0..2998 * 64).map(|i| ((i % 31) as f64 - 15.0) / 40.0).collect();
        let mel = Tensor::new(vec![2998, 64], data).unwrap();
        let probs = clf.probs(&patchify(&mel).unwrap()).unwrap();
        assert_eq!(probs.shape(), &[60, cfg.num_classes]);
        assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn indicators_are_monotone_in_class_probability() {
        let map = CategoryMap::round_robin(16);
        let mut row = vec![0.2; 16];
        row[1] = 0.45; // Music class below threshold
        let before = category_indicators(&row, &map);
        assert!(!before[SoundCategory::Music.index()]);
        row[1] = 0.55;
        let after = category_indicators(&row, &map);
        assert!(after[SoundCategory::Music.index()]);
        // raising one class never clears any other category
        for (b, a) in before.iter().zip(&after) {
            assert!(!b || *a);
        }
    }

    #[test]
    fn durations_count_indicator_moments() {
        let map = CategoryMap::round_robin(8);
        let mut data = vec![0.1; 3 * 8];
        data[0] = 0.9; // moment 0: Human
        data[8] = 0.6; // moment 1: Human
        data[2 * 8 + 1] = 0.7; // moment 2: Music
        let probs = Tensor::new(vec![3, 8], data).unwrap();
        let d = category_durations(&probs, &map);
        assert_eq!(d[SoundCategory::Human.index()], 2.0);
        assert_eq!(d[SoundCategory::Music.index()], 1.0);
        assert_eq!(d[SoundCategory::Natural.index()], 0.0);
    }
}
