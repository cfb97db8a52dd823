use super::Hazard;

/// Laplace add-one predictive probability of `bit` after `ones` ones in
/// `total` observations.
pub fn laplace_predict(ones: u64, total: u64, bit: bool) -> f64 {
    debug_assert!(ones <= total);
    let k = if bit { ones } else { total - ones };
    (k + 1) as f64 / (total + 2) as f64
}

/// `ln(i)` for small integers, grown on demand.
#[derive(Debug, Clone, Default)]
struct LnTable(Vec<f64>);

impl LnTable {
    fn get(&mut self, i: u64) -> f64 {
        let i = i as usize;
        if i >= self.0.len() {
            let start = self.0.len();
            self.0.extend((start..=i.max(2 * start)).map(|k| (k as f64).ln()));
        }
        self.0[i]
    }
}

#[derive(Debug, Clone)]
struct Forecaster {
    start: u64,
    /// Log weight relative to the origin forecaster's log weight.
    rel: f64,
    ones: u64,
    total: u64,
}

/// Weighted experts restarted at origin `r`; forecaster `s` assumes the most
/// recent change happened at `s`. Weights are kept in log domain relative to
/// the origin, which keeps them finite on arbitrarily long streams.
#[derive(Debug, Clone)]
pub struct ForecasterBank {
    hazard: Hazard,
    origin: u64,
    t: u64,
    forecasters: Vec<Forecaster>,
    ln: LnTable,
}

impl ForecasterBank {
    /// Empty bank; the first update creates the origin forecaster at `origin`.
    pub fn new(origin: u64, hazard: Hazard) -> Self {
        ForecasterBank { hazard, origin, t: origin.saturating_sub(1), forecasters: Vec::new(), ln: LnTable::default() }
    }

    pub fn origin(&self) -> u64 {
        self.origin
    }

    /// Index of the last observation absorbed.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.forecasters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forecasters.is_empty()
    }

    pub fn starts(&self) -> impl Iterator<Item = u64> + '_ {
        self.forecasters.iter().map(|f| f.start)
    }

    fn ln_predict(&mut self, idx: usize, bit: bool) -> f64 {
        let f = &self.forecasters[idx];
        let k = if bit { f.ones } else { f.total - f.ones };
        let total = f.total;
        self.ln.get(k + 1) - self.ln.get(total + 2)
    }

    /// Absorbs observation `y_t` at `t = self.t() + 1`.
    pub fn update(&mut self, bit: bool) {
        self.t += 1;
        let t = self.t;
        let r = self.origin;
        if self.forecasters.is_empty() {
            self.forecasters.push(Forecaster { start: t, rel: 0.0, ones: bit as u64, total: 1 });
            return;
        }
        let origin_gain = self.hazard.log_ratio(r, r, t) + self.ln_predict(0, bit);
        for i in 1..self.forecasters.len() {
            let s = self.forecasters[i].start;
            let gain = self.hazard.log_ratio(r, s, t) + self.ln_predict(i, bit);
            self.forecasters[i].rel += gain - origin_gain;
        }
        // Loss of the origin on y_t is the only term separating L_{r:t-1} from L_{r:t}.
        let origin_loss = -self.ln_predict(0, bit);
        let new_rel = self.hazard.log_eta(r, t, t) - self.hazard.log_eta(r, r, t) + origin_loss;
        for f in &mut self.forecasters {
            f.ones += bit as u64;
            f.total += 1;
        }
        self.forecasters.push(Forecaster { start: t, rel: new_rel, ones: bit as u64, total: 1 });
    }

    /// Normalized weights `(s, weight)` in start order.
    pub fn weights(&self) -> Vec<(u64, f64)> {
        let max = self.forecasters.iter().map(|f| f.rel).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = self.forecasters.iter().map(|f| (f.rel - max).exp()).sum();
        let log_norm = max + sum.ln();
        self.forecasters.iter().map(|f| (f.start, (f.rel - log_norm).exp())).collect()
    }

    /// True iff some forecaster started after the origin outweighs it.
    pub fn change_criterion(&self) -> bool {
        match self.forecasters.split_first() {
            Some((origin, rest)) => rest.iter().any(|f| f.rel > origin.rel),
            None => false,
        }
    }

    /// Start of the heaviest competitor of the origin.
    pub fn strongest_competitor(&self) -> Option<u64> {
        self.forecasters[1.min(self.forecasters.len())..]
            .iter()
            .max_by(|a, b| a.rel.total_cmp(&b.rel))
            .map(|f| f.start)
    }

    /// Drops every forecaster and restarts at `origin`.
    pub fn restart(&mut self, origin: u64) {
        self.origin = origin;
        self.t = origin - 1;
        self.forecasters.clear();
    }

    #[cfg(test)]
    fn shift_log_weights(&mut self, c: f64) {
        for f in &mut self.forecasters {
            f.rel += c;
        }
    }
}

/// Free-function form of [`ForecasterBank::update`].
pub fn update_bank(bank: &mut ForecasterBank, bit: bool) {
    bank.update(bit)
}

pub fn change_criterion(bank: &ForecasterBank) -> bool {
    bank.change_criterion()
}

/// A detection by one restarted run: time `t` and the start of the forecaster
/// that triggered it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunDetection {
    pub t: u64,
    pub location: u64,
}

/// One restarted detector pass; the bank restarts at `t + 1` after every
/// detection.
#[derive(Debug, Clone)]
pub struct SingleRun {
    bank: ForecasterBank,
}

impl SingleRun {
    pub fn new(hazard: Hazard, origin: u64) -> Self {
        SingleRun { bank: ForecasterBank::new(origin, hazard) }
    }

    pub fn bank(&self) -> &ForecasterBank {
        &self.bank
    }

    pub fn push(&mut self, bit: bool) -> Option<RunDetection> {
        self.bank.update(bit);
        if !self.bank.change_criterion() {
            return None;
        }
        let t = self.bank.t();
        let location = self.bank.strongest_competitor().unwrap_or(t);
        self.bank.restart(t + 1);
        Some(RunDetection { t, location })
    }
}

/// Detection times of one run over a bit stream indexed from `origin`.
pub fn run_single(bits: &[bool], hazard: Hazard, origin: u64) -> Vec<u64> {
    let mut run = SingleRun::new(hazard, origin);
    bits.iter().filter_map(|&b| run.push(b)).map(|d| d.t).collect()
}
