//! Clustered case library and the softmax-weighted ensemble baseline.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::models::ModelSpec;
use crate::error::{Error, Result};
use crate::memory::{k_medoids, DistanceConfig, DistanceMatrix, KMedoidsConfig, MedoidInit, ZScored};
use crate::metrics;
use crate::series::{make_windows, ChannelLayout, LookbackView, TimeSeries};
use crate::serde_nan;
use crate::toolkit::{num, PromptBlock};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LibraryConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
    pub k_clusters: usize,
    pub max_iter: usize,
    pub seed: u64,
    pub init: MedoidInit,
    /// Term weights. Scales are recalibrated on the training windows.
    pub distance: DistanceConfig,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        Self {
            lookback: 96,
            horizon: 96,
            stride: 24,
            k_clusters: 8,
            max_iter: 100,
            seed: 0,
            init: MedoidInit::Build,
            distance: DistanceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Lookback of the medoid window, all channels.
    #[serde(with = "serde_nan::matrix")]
    pub medoid: Array2<f64>,
    /// Origin index of the medoid window in the training series.
    pub medoid_origin: usize,
    pub member_count: usize,
    /// Origin indices of all member windows, ascending.
    pub members: Vec<usize>,
    /// Mean MSE per pool model over member windows, aligned with the pool.
    /// Infinite when a model never produced a forecast for this cluster.
    pub model_losses: Vec<f64>,
}

/// Immutable after construction; share it read-only across workers.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseLibrary {
    lookback: usize,
    horizon: usize,
    layout: ChannelLayout,
    pool: Vec<ModelSpec>,
    distance: DistanceConfig,
    seed: u64,
    clusters: Vec<Cluster>,
    medoid_z: Vec<ZScored>,
}

impl CaseLibrary {
    pub fn new(
        lookback: usize,
        horizon: usize,
        layout: ChannelLayout,
        pool: Vec<ModelSpec>,
        distance: DistanceConfig,
        seed: u64,
        clusters: Vec<Cluster>,
    ) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::Library("empty model pool".into()));
        }
        if clusters.is_empty() {
            return Err(Error::Library("no clusters".into()));
        }
        for (i, c) in clusters.iter().enumerate() {
            if c.member_count == 0 || c.member_count != c.members.len() {
                return Err(Error::Library(format!("cluster {i} has inconsistent membership")));
            }
            if !c.members.contains(&c.medoid_origin) {
                return Err(Error::Library(format!("cluster {i} medoid is not a member")));
            }
            if c.medoid.dim() != (lookback, layout.channel_count()) {
                return Err(Error::Library(format!("cluster {i} medoid has shape {:?}", c.medoid.dim())));
            }
            if c.model_losses.len() != pool.len() || c.model_losses.iter().any(|l| l.is_nan() || *l < 0.0) {
                return Err(Error::Library(format!("cluster {i} needs one non-negative loss per pool model")));
            }
        }
        let medoid_z = clusters.iter().map(|c| ZScored::new(&c.medoid.column(layout.target).to_vec())).collect();
        Ok(Self { lookback, horizon, layout, pool, distance, seed, clusters, medoid_z })
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn layout(&self) -> &ChannelLayout {
        &self.layout
    }

    pub fn pool(&self) -> &[ModelSpec] {
        &self.pool
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.pool.iter().map(ModelSpec::id).collect()
    }

    pub fn distance(&self) -> &DistanceConfig {
        &self.distance
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    /// Nearest medoid by composite distance on the z-scored target channel.
    /// Ties go to the lower cluster index.
    pub fn nearest(&self, target: &[f64]) -> Result<(usize, f64)> {
        let q = ZScored::new(target);
        let mut best: Option<(usize, f64)> = None;
        for (i, m) in self.medoid_z.iter().enumerate() {
            let d = self.distance.distance(&q, m)?;
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        best.ok_or_else(|| Error::Library("no clusters".into()))
    }
}

/// Windows the training series, clusters their z-scored targets with
/// K-medoids under the composite distance, and records each pool model's
/// mean MSE per cluster.
pub fn build_case_library(train: &TimeSeries, config: &LibraryConfig, pool: &[ModelSpec]) -> Result<CaseLibrary> {
    for spec in pool {
        spec.validate()?;
    }
    if pool.is_empty() {
        return Err(Error::Library("empty model pool".into()));
    }
    let windows = make_windows(train, config.lookback, config.horizon, config.stride, true)
        .map_err(|e| Error::Library(e.to_string()))?;
    if config.k_clusters == 0 || windows.len() < 2 * config.k_clusters {
        return Err(Error::Library(format!(
            "{} training windows cannot support {} clusters (need at least {})",
            windows.len(),
            config.k_clusters,
            2 * config.k_clusters
        )));
    }
    let z: Vec<ZScored> = windows.iter().map(|w| ZScored::new(&w.view().target())).collect();
    let distance = config.distance.calibrated(&z)?;
    let dm = DistanceMatrix::build(&z, |a, b| distance.distance(a, b))?;
    let km = KMedoidsConfig { max_iter: config.max_iter, seed: config.seed, init: config.init };
    let clustering = k_medoids(&dm, config.k_clusters, &km)?;

    let models: Vec<_> = pool.iter().map(ModelSpec::build).collect();
    let losses: Vec<Vec<Option<f64>>> = windows
        .iter()
        .map(|w| {
            let truth = w.target_future().expect("windows built with futures");
            models
                .iter()
                .map(|m| m.forecast(&w.view()).ok().and_then(|f| metrics::observed_mse(&f, &truth)))
                .collect()
        })
        .collect();

    let clusters = clustering
        .medoids
        .iter()
        .enumerate()
        .map(|(c, &medoid)| {
            let member_idx = clustering.members(c);
            let model_losses = (0..pool.len())
                .map(|k| {
                    let vals: Vec<f64> = member_idx.iter().filter_map(|&i| losses[i][k]).collect();
                    if vals.is_empty() {
                        f64::INFINITY
                    } else {
                        vals.iter().sum::<f64>() / vals.len() as f64
                    }
                })
                .collect();
            Cluster {
                medoid: windows[medoid].view().matrix().to_owned(),
                medoid_origin: windows[medoid].origin_index(),
                member_count: member_idx.len(),
                members: member_idx.iter().map(|&i| windows[i].origin_index()).collect(),
                model_losses,
            }
        })
        .collect();
    CaseLibrary::new(
        config.lookback,
        config.horizon,
        train.layout().clone(),
        pool.to_vec(),
        distance,
        config.seed,
        clusters,
    )
}

/// Share of each cluster's members carrying its most common label.
pub fn cluster_purity(library: &CaseLibrary, label_of: impl Fn(usize) -> String) -> Vec<f64> {
    library
        .clusters()
        .iter()
        .map(|c| {
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for &origin in &c.members {
                *counts.entry(label_of(origin)).or_default() += 1;
            }
            counts.values().copied().max().unwrap_or(0) as f64 / c.member_count as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeight {
    pub model: String,
    pub weight: f64,
}

/// Softmax of negated losses, shifted by the minimum loss for stability.
pub fn ensemble_weights(losses: &[(String, f64)]) -> Result<Vec<ModelWeight>> {
    if losses.is_empty() {
        return Err(Error::Ensemble("no models to weight".into()));
    }
    if let Some((m, l)) = losses.iter().find(|(_, l)| !l.is_finite()) {
        return Err(Error::Ensemble(format!("loss for {m} is not finite: {l}")));
    }
    let min = losses.iter().map(|(_, l)| *l).fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = losses.iter().map(|(_, l)| (-(l - min)).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(losses.iter().zip(raw).map(|((m, _), r)| ModelWeight { model: m.clone(), weight: r / total }).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub model: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedModel {
    pub model: String,
    pub reason: String,
}

/// Anchorer output: the weighted pool forecast and how it was formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleBaseline {
    pub values: Vec<f64>,
    pub weights: Vec<ModelWeight>,
    pub components: Vec<ModelOutput>,
    pub source_cluster: usize,
    pub retrieval_distance: f64,
    /// Pool models left out of this ensemble; weights were renormalised
    /// over the rest.
    pub excluded: Vec<ExcludedModel>,
}

impl EnsembleBaseline {
    /// Weights on the simplex and values equal to the weighted components.
    pub fn check(&self) -> Result<()> {
        let sum: f64 = self.weights.iter().map(|w| w.weight).sum();
        if (sum - 1.0).abs() > 1e-9 || self.weights.iter().any(|w| w.weight < 0.0) {
            return Err(Error::Ensemble(format!("weights sum to {sum}")));
        }
        for (h, v) in self.values.iter().enumerate() {
            let mix: f64 = self.weights.iter().zip(&self.components).map(|(w, c)| w.weight * c.values[h]).sum();
            if (mix - v).abs() > 1e-9 * v.abs().max(1.0) {
                return Err(Error::Ensemble(format!("value {h} is {v}, weighted sum is {mix}")));
            }
        }
        Ok(())
    }
}

/// Retrieves the nearest cluster and mixes the pool forecasts on this
/// lookback with that cluster's softmax weights. Failing models and models
/// without a finite historical loss are excluded.
pub fn anchor_forecast(view: &LookbackView<'_>, library: &CaseLibrary) -> Result<EnsembleBaseline> {
    if view.len() != library.lookback() || view.horizon() != library.horizon() {
        return Err(Error::Library(format!(
            "library built for L={}, H={}; window has L={}, H={}",
            library.lookback(),
            library.horizon(),
            view.len(),
            view.horizon()
        )));
    }
    let (source_cluster, retrieval_distance) = library.nearest(&view.target())?;
    let cluster = &library.clusters()[source_cluster];
    let mut components = vec![];
    let mut losses = vec![];
    let mut excluded = vec![];
    for (spec, &loss) in library.pool().iter().zip(&cluster.model_losses) {
        if !loss.is_finite() {
            excluded.push(ExcludedModel { model: spec.id(), reason: "no finite historical loss".into() });
            continue;
        }
        match spec.build().forecast(view) {
            Ok(values) => {
                losses.push((spec.id(), loss));
                components.push(ModelOutput { model: spec.id(), values });
            }
            Err(e) => excluded.push(ExcludedModel { model: spec.id(), reason: e.to_string() }),
        }
    }
    if components.is_empty() {
        return Err(Error::Ensemble("every pool model was excluded".into()));
    }
    let weights = ensemble_weights(&losses)?;
    let values = (0..view.horizon())
        .map(|h| weights.iter().zip(&components).map(|(w, c)| w.weight * c.values[h]).sum())
        .collect();
    Ok(EnsembleBaseline { values, weights, components, source_cluster, retrieval_distance, excluded })
}

/// Convenience wrapper scoring a baseline against a truth vector.
pub fn baseline_mse(baseline: &EnsembleBaseline, truth: &[f64]) -> Result<f64> {
    metrics::mse(&baseline.values, truth)
}

impl PromptBlock for EnsembleBaseline {
    fn prompt_block(&self) -> String {
        let weights: Vec<String> = self.weights.iter().map(|w| format!("{}:{}", w.model, num(w.weight))).collect();
        let values: Vec<String> = self.values.iter().map(|v| num(*v)).collect();
        let mut out = format!(
            "[model_auxiliary]\nsource_cluster={} retrieval_distance={}\nweights={}\nbaseline={}\n",
            self.source_cluster,
            num(self.retrieval_distance),
            weights.join(","),
            values.join(",")
        );
        for e in &self.excluded {
            out.push_str(&format!("excluded={} reason={}\n", e.model, e.reason));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::Window;
    use proptest::prelude::*;

    fn named(losses: &[f64]) -> Vec<(String, f64)> {
        losses.iter().enumerate().map(|(i, l)| (format!("m{i}"), *l)).collect()
    }

    #[test]
    fn weight_examples() {
        let w = ensemble_weights(&named(&[2.0, 2.0])).unwrap();
        assert_eq!((w[0].weight, w[1].weight), (0.5, 0.5));
        let w = ensemble_weights(&named(&[0.0, 3f64.ln()])).unwrap();
        assert!((w[0].weight - 0.75).abs() < 1e-12 && (w[1].weight - 0.25).abs() < 1e-12);
        assert_eq!(ensemble_weights(&named(&[7.0])).unwrap()[0].weight, 1.0);
        assert!(matches!(ensemble_weights(&[]), Err(Error::Ensemble(_))));
        assert!(ensemble_weights(&named(&[1.0, f64::INFINITY])).is_err());
    }

    proptest! {
        #[test]
        fn weights_form_a_simplex(losses in prop::collection::vec(0.0f64..50.0, 1..10)) {
            let w = ensemble_weights(&named(&losses)).unwrap();
            let sum: f64 = w.iter().map(|x| x.weight).sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(w.iter().all(|x| x.weight > 0.0));
        }
    }

    fn series(values: &[f64]) -> TimeSeries {
        TimeSeries::from_values(values)
    }

    #[test]
    fn single_cluster_single_model_reproduces_the_model() {
        let x: Vec<f64> = (0..80).map(|t| (t as f64 * 0.5).sin() * 3.0 + t as f64 * 0.1).collect();
        let cfg = LibraryConfig { lookback: 16, horizon: 4, stride: 4, k_clusters: 1, ..Default::default() };
        let lib = build_case_library(&series(&x), &cfg, &[ModelSpec::Naive]).unwrap();
        assert_eq!(lib.clusters().len(), 1);
        assert_eq!(lib.clusters()[0].member_count, (80 - 20) / 4 + 1);
        let w = Window::univariate(&x[10..26], None, 4).unwrap();
        let b = anchor_forecast(&w.view(), &lib).unwrap();
        assert_eq!(b.values, vec![x[25]; 4]);
        assert_eq!(b.weights[0].weight, 1.0);
        b.check().unwrap();
    }

    #[test]
    fn k_one_loss_is_global_mean() {
        let x: Vec<f64> = (0..60).map(|t| ((t * 7) % 11) as f64).collect();
        let cfg = LibraryConfig { lookback: 10, horizon: 5, stride: 5, k_clusters: 1, ..Default::default() };
        let lib = build_case_library(&series(&x), &cfg, &[ModelSpec::Naive]).unwrap();
        let ts = series(&x);
        let windows = make_windows(&ts, 10, 5, 5, true).unwrap();
        let mut total = 0.0;
        for w in &windows {
            let last = w.view().target()[9];
            let truth = w.target_future().unwrap();
            total += truth.iter().map(|t| (t - last) * (t - last)).sum::<f64>() / 5.0;
        }
        assert!((lib.clusters()[0].model_losses[0] - total / windows.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn identical_windows_have_that_window_as_medoid() {
        let x: Vec<f64> = (0..64).map(|t| (t % 8) as f64).collect();
        let cfg = LibraryConfig { lookback: 8, horizon: 8, stride: 8, k_clusters: 1, ..Default::default() };
        let lib = build_case_library(&series(&x), &cfg, &[ModelSpec::Naive]).unwrap();
        let medoid: Vec<f64> = lib.clusters()[0].medoid.column(0).to_vec();
        assert_eq!(medoid, (0..8).map(|t| t as f64).collect::<Vec<_>>());
        let w = Window::univariate(&medoid, None, 8).unwrap();
        let b = anchor_forecast(&w.view(), &lib).unwrap();
        assert_eq!(b.retrieval_distance, 0.0);
    }

    #[test]
    fn too_few_windows_is_a_library_error() {
        let x = vec![1.0; 30];
        let cfg = LibraryConfig { lookback: 10, horizon: 5, stride: 5, k_clusters: 3, ..Default::default() };
        assert!(matches!(build_case_library(&series(&x), &cfg, &[ModelSpec::Naive]), Err(Error::Library(_))));
    }

    #[test]
    fn failing_model_is_excluded_and_weights_renormalise() {
        let x: Vec<f64> = (0..80).map(|t| (t as f64 * 0.3).cos()).collect();
        let cfg = LibraryConfig { lookback: 16, horizon: 4, stride: 4, k_clusters: 1, ..Default::default() };
        let pool = vec![
            ModelSpec::Naive,
            ModelSpec::External { name: "missing".into(), command: "/nonexistent/plugin".into(), args: vec![] },
        ];
        let lib = build_case_library(&series(&x), &cfg, &pool).unwrap();
        assert!(lib.clusters()[0].model_losses[1].is_infinite());
        let w = Window::univariate(&x[0..16], None, 4).unwrap();
        let b = anchor_forecast(&w.view(), &lib).unwrap();
        assert_eq!(b.weights.len(), 1);
        assert_eq!(b.excluded.len(), 1);
        b.check().unwrap();
    }
}
