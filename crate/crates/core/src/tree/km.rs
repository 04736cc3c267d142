use serde::{Deserialize, Serialize};

/// Product-limit estimate stored as a step table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaplanMeier {
    pub event_times: Vec<f64>,
    /// `survival[k]` is S just after `event_times[k]`.
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub deaths: Vec<usize>,
    /// Largest observed time, event or not.
    pub max_time: f64,
}

impl KaplanMeier {
    /// Fits `(time, event)` pairs. Tied times are handled jointly: deaths at
    /// `t` are counted against everyone with time `>= t`, censorings at `t`
    /// leave the risk set after the deaths.
    pub fn fit(obs: &[(f64, bool)]) -> Self {
        let mut sorted: Vec<(f64, bool)> = obs.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let max_time = sorted.last().map_or(0.0, |o| o.0);

        let mut km = KaplanMeier {
            event_times: Vec::new(),
            survival: Vec::new(),
            at_risk: Vec::new(),
            deaths: Vec::new(),
            max_time,
        };
        let mut s = 1.0;
        let mut remaining = sorted.len();
        let mut i = 0;
        while i < sorted.len() {
            let t = sorted[i].0;
            let mut j = i;
            let mut d = 0;
            while j < sorted.len() && sorted[j].0 == t {
                d += sorted[j].1 as usize;
                j += 1;
            }
            if d > 0 {
                s *= 1.0 - d as f64 / remaining as f64;
                km.event_times.push(t);
                km.survival.push(s);
                km.at_risk.push(remaining);
                km.deaths.push(d);
            }
            remaining -= j - i;
            i = j;
        }
        km
    }

    /// Right-continuous `S(t)`.
    pub fn survival_at(&self, t: f64) -> f64 {
        let k = self.event_times.partition_point(|&e| e <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }

    /// Left limit `S(t-)`.
    pub fn survival_before(&self, t: f64) -> f64 {
        let k = self.event_times.partition_point(|&e| e < t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }

    /// Median survival time and whether the fallback was used: the first
    /// event time with `S <= 0.5`, else the largest observed time.
    pub fn median(&self) -> (f64, bool) {
        match self.survival.iter().position(|&s| s <= 0.5) {
            Some(k) => (self.event_times[k], false),
            None => (self.max_time, true),
        }
    }
}
