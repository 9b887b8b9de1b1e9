#![allow(dead_code)]

use std::collections::VecDeque;
use std::sync::Mutex;

use anchorcast::model_pool::{build_case_library, CaseLibrary, LibraryConfig, ModelSpec};
use anchorcast::series::{split_windows, SplitSpec, SplitWindows, TimeSeries};
use anchorcast::synthetic::SeasonalTrend;
use anchorcast::workflow::{
    ForecastRequest, LogicVerdict, MockPolicy, PlanRequest, PolicyAdapter, PolicyIds, ReflectRequest, Reply,
    ToolSchedule,
};
use anchorcast::{Error, Result};

pub struct Fixture {
    pub series: TimeSeries,
    pub windows: SplitWindows,
    pub library: CaseLibrary,
}

/// Seasonal series of 600 rows, L = H = 24, stride 12, three clusters.
pub fn fixture() -> Fixture {
    let gen = SeasonalTrend { length: 600, period: 12, seed: 11, ..Default::default() };
    let series = TimeSeries::from_values(&gen.values());
    let spec = SplitSpec { stride: 12, ..Default::default() };
    let windows = split_windows(&series, &spec, 24, 24).unwrap();
    let train = series.slice(0, spec.segment_lengths(series.len()).0);
    let cfg = LibraryConfig { lookback: 24, horizon: 24, stride: 12, k_clusters: 3, ..Default::default() };
    let library = build_case_library(&train, &cfg, &ModelSpec::default_pool(12)).unwrap();
    Fixture { series, windows, library }
}

/// What a scripted forecaster does on its next call.
#[derive(Debug, Clone)]
pub enum Script {
    Respond(String),
    TransportError,
}

/// Mock planner and reflector with a scripted forecaster. Once the script
/// runs out the last step repeats.
pub struct ScriptedPolicy {
    pub inner: MockPolicy,
    script: Mutex<VecDeque<Script>>,
    last: Mutex<Option<Script>>,
    pub fail_planner: bool,
}

impl ScriptedPolicy {
    pub fn new(script: Vec<Script>) -> Self {
        Self { inner: MockPolicy::default(), script: Mutex::new(script.into()), last: Mutex::new(None), fail_planner: false }
    }

    fn next(&self) -> Script {
        let mut q = self.script.lock().unwrap();
        let mut last = self.last.lock().unwrap();
        if let Some(s) = q.pop_front() {
            *last = Some(s);
        }
        last.clone().expect("non-empty script")
    }
}

impl PolicyAdapter for ScriptedPolicy {
    fn ids(&self) -> PolicyIds {
        PolicyIds { planner: "mock-planner".into(), forecaster: "scripted".into(), reflector: "mock-reflector".into() }
    }

    fn plan(&self, req: &PlanRequest<'_>) -> Result<Reply<ToolSchedule>> {
        if self.fail_planner {
            return Err(Error::Adapter("connection refused".into()));
        }
        self.inner.plan(req)
    }

    fn forecast(&self, _req: &ForecastRequest<'_>) -> Result<Reply<String>> {
        match self.next() {
            Script::Respond(text) => Ok(Reply::new(text)),
            Script::TransportError => Err(Error::Adapter("timeout".into())),
        }
    }

    fn reflect(&self, req: &ReflectRequest<'_>) -> Result<Reply<LogicVerdict>> {
        self.inner.reflect(req)
    }
}

/// Fenced block with `n` copies of `v`.
pub fn block(v: f64, n: usize) -> String {
    anchorcast::workflow::render_block(&vec![v; n])
}
