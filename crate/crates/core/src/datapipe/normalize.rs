//! Per-confining-pressure RMS scaling of `p` and `q`, global min-max scaling
//! of the third state channel, the exogenous inputs and the test constants.

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, State, TestKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsGroup {
    pub sigma3: f64,
    pub p_rms: f64,
    pub q_rms: f64,
}

/// RMS factors for each exact-`sigma3` group, sorted by `sigma3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsStats {
    pub groups: Vec<RmsGroup>,
}

impl RmsStats {
    pub fn fit(ds: &Dataset) -> Result<Self, DataError> {
        let mut acc: Vec<(f64, f64, f64, usize)> = Vec::new();
        for s in &ds.series {
            s.validate()?;
            let key = s.theta.sigma3;
            let slot = match acc.iter().position(|g| g.0 == key) {
                Some(i) => i,
                None => {
                    acc.push((key, 0.0, 0.0, 0));
                    acc.len() - 1
                }
            };
            // steps t = 1..N
            for st in &s.states[1..] {
                acc[slot].1 += st[0] * st[0];
                acc[slot].2 += st[1] * st[1];
            }
            acc[slot].3 += s.n_steps();
        }
        let mut groups = Vec::with_capacity(acc.len());
        for (sigma3, sp, sq, count) in acc {
            if count == 0 {
                return Err(DataError::Invalid {
                    id: format!("sigma3 = {sigma3}"),
                    msg: "group has no load steps".into(),
                });
            }
            let p_rms = (sp / count as f64).sqrt();
            let q_rms = (sq / count as f64).sqrt();
            if p_rms == 0.0 {
                return Err(DataError::ZeroRms { sigma3, channel: "p" });
            }
            if q_rms == 0.0 {
                return Err(DataError::ZeroRms { sigma3, channel: "q" });
            }
            groups.push(RmsGroup { sigma3, p_rms, q_rms });
        }
        groups.sort_by(|a, b| a.sigma3.total_cmp(&b.sigma3));
        Ok(Self { groups })
    }

    /// Group for `sigma3`: the exact match if present, otherwise the nearest
    /// group in log-space (ties go to the lower pressure).
    pub fn lookup(&self, sigma3: f64) -> Result<&RmsGroup, DataError> {
        if let Some(g) = self.groups.iter().find(|g| g.sigma3 == sigma3) {
            return Ok(g);
        }
        if !(sigma3 > 0.0) {
            return Err(DataError::NoGroup(sigma3));
        }
        let target = sigma3.ln();
        self.groups
            .iter()
            .filter(|g| g.sigma3 > 0.0)
            .min_by(|a, b| {
                let da = (a.sigma3.ln() - target).abs();
                let db = (b.sigma3.ln() - target).abs();
                da.total_cmp(&db)
            })
            .ok_or(DataError::NoGroup(sigma3))
    }
}

/// Closed interval used for min-max scaling. A degenerate range (admitted
/// only under [`ConstantFieldPolicy::Center`]) maps its value to 0 with unit
/// span.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let mut r = Range {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        };
        for v in values {
            r.min = r.min.min(v);
            r.max = r.max.max(v);
        }
        r
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.max > self.min)
    }

    pub fn span(&self) -> f64 {
        if self.is_degenerate() {
            1.0
        } else {
            self.max - self.min
        }
    }

    pub fn scale(&self, x: f64) -> f64 {
        (x - self.min) / self.span()
    }

    pub fn unscale(&self, x: f64) -> f64 {
        x * self.span() + self.min
    }
}

/// What to do with a field that takes a single value across the fitting set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantFieldPolicy {
    #[default]
    Error,
    /// Shift to zero with unit span. The field then carries no information
    /// but keeps the network input layout fixed.
    Center,
}

const INPUT_FIELDS: [&str; 4] = ["eps", "deps", "delta", "cycle"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeStats {
    pub kind: TestKind,
    pub third: Range,
    /// One range per exogenous feature used by `kind`.
    pub inputs: Vec<Range>,
    pub sigma3: Range,
    pub e0: Range,
}

fn input_value(u: &super::ExogenousInput, i: usize) -> f64 {
    match i {
        0 => u.eps,
        1 => u.deps,
        2 => u.delta,
        _ => u.cycle,
    }
}

fn set_input_value(u: &mut super::ExogenousInput, i: usize, v: f64) {
    match i {
        0 => u.eps = v,
        1 => u.deps = v,
        2 => u.delta = v,
        _ => u.cycle = v,
    }
}

impl RangeStats {
    pub fn fit(ds: &Dataset, policy: ConstantFieldPolicy) -> Result<Self, DataError> {
        let kind = ds.kind()?;
        for s in &ds.series {
            s.validate()?;
        }
        let third = Range::of(ds.series.iter().flat_map(|s| s.states.iter().map(|st| st[2])));
        let inputs: Vec<Range> = (0..kind.input_width())
            .map(|i| {
                Range::of(
                    ds.series
                        .iter()
                        .flat_map(|s| s.inputs.iter().map(move |u| input_value(u, i))),
                )
            })
            .collect();
        let sigma3 = Range::of(ds.series.iter().map(|s| s.theta.sigma3));
        let e0 = Range::of(ds.series.iter().map(|s| s.theta.e0));

        let check = |name: &'static str, r: &Range| -> Result<(), DataError> {
            if !r.min.is_finite() || !r.max.is_finite() {
                return Err(DataError::Invalid {
                    id: name.into(),
                    msg: "no finite values".into(),
                });
            }
            if r.is_degenerate() && policy == ConstantFieldPolicy::Error {
                return Err(DataError::DegenerateRange(name));
            }
            Ok(())
        };
        check("third_value", &third)?;
        for (i, r) in inputs.iter().enumerate() {
            check(INPUT_FIELDS[i], r)?;
        }
        check("sigma3_kpa", &sigma3)?;
        check("e0", &e0)?;
        if policy == ConstantFieldPolicy::Center {
            let degenerate: Vec<&str> = std::iter::once(("third_value", &third))
                .chain(inputs.iter().enumerate().map(|(i, r)| (INPUT_FIELDS[i], r)))
                .chain([("sigma3_kpa", &sigma3), ("e0", &e0)])
                .filter(|(_, r)| r.is_degenerate())
                .map(|(n, _)| n)
                .collect();
            if !degenerate.is_empty() {
                log::info!("constant fields centered: {}", degenerate.join(", "));
            }
        }
        Ok(Self {
            kind,
            third,
            inputs,
            sigma3,
            e0,
        })
    }

    fn apply(&self, ds: &mut Dataset, forward: bool) {
        let f = |r: &Range, x: f64| if forward { r.scale(x) } else { r.unscale(x) };
        for s in &mut ds.series {
            for st in &mut s.states {
                st[2] = f(&self.third, st[2]);
            }
            for u in &mut s.inputs {
                for (i, r) in self.inputs.iter().enumerate() {
                    set_input_value(u, i, f(r, input_value(u, i)));
                }
            }
            s.theta.sigma3 = f(&self.sigma3, s.theta.sigma3);
            s.theta.e0 = f(&self.e0, s.theta.e0);
        }
    }
}

/// RMS-normalizes `p` and `q` within each confining-pressure group.
pub fn rms_normalize(ds: &Dataset) -> Result<(Dataset, RmsStats), DataError> {
    let stats = RmsStats::fit(ds)?;
    let mut out = ds.clone();
    for s in &mut out.series {
        let g = *stats.lookup(s.theta.sigma3)?;
        for st in &mut s.states {
            st[0] /= g.p_rms;
            st[1] /= g.q_rms;
        }
    }
    Ok((out, stats))
}

/// Min-max scales the third channel, the exogenous inputs and theta to
/// `[0, 1]`. Constant fields are rejected.
pub fn minmax_scale(ds: &Dataset) -> Result<(Dataset, RangeStats), DataError> {
    let stats = RangeStats::fit(ds, ConstantFieldPolicy::Error)?;
    let mut out = ds.clone();
    stats.apply(&mut out, true);
    Ok((out, stats))
}

/// Complete normalization state, fitted on training data and reused for
/// validation, test and prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub kind: TestKind,
    pub rms: RmsStats,
    pub ranges: RangeStats,
}

impl NormStats {
    pub fn fit(train: &Dataset, policy: ConstantFieldPolicy) -> Result<Self, DataError> {
        let kind = train.kind()?;
        Ok(Self {
            kind,
            rms: RmsStats::fit(train)?,
            ranges: RangeStats::fit(train, policy)?,
        })
    }

    fn check_kind(&self, ds: &Dataset) -> Result<(), DataError> {
        if let Some(s) = ds.series.iter().find(|s| s.kind != self.kind) {
            return Err(DataError::MixedKinds(self.kind, s.kind));
        }
        Ok(())
    }

    /// Scale factors `[p, q, third]` for a series with raw confining pressure
    /// `sigma3`: raw = normalized * scale + offset.
    pub fn channel_scales(&self, sigma3: f64) -> Result<[f64; 3], DataError> {
        let g = self.rms.lookup(sigma3)?;
        Ok([g.p_rms, g.q_rms, self.ranges.third.span()])
    }

    pub fn channel_offsets(&self) -> [f64; 3] {
        [0.0, 0.0, self.ranges.third.min]
    }

    pub fn normalize_state(&self, sigma3: f64, s: &State) -> Result<State, DataError> {
        let sc = self.channel_scales(sigma3)?;
        let off = self.channel_offsets();
        Ok([0, 1, 2].map(|c| (s[c] - off[c]) / sc[c]))
    }

    pub fn denormalize_state(&self, sigma3: f64, s: &State) -> Result<State, DataError> {
        let sc = self.channel_scales(sigma3)?;
        let off = self.channel_offsets();
        Ok([0, 1, 2].map(|c| s[c] * sc[c] + off[c]))
    }

    /// Variance in raw units.
    pub fn denormalize_var(&self, sigma3: f64, v: &State) -> Result<State, DataError> {
        let sc = self.channel_scales(sigma3)?;
        Ok([0, 1, 2].map(|c| v[c] * sc[c] * sc[c]))
    }

    pub fn normalize(&self, ds: &Dataset) -> Result<Dataset, DataError> {
        self.check_kind(ds)?;
        let mut out = ds.clone();
        for s in &mut out.series {
            let g = *self.rms.lookup(s.theta.sigma3)?;
            for st in &mut s.states {
                st[0] /= g.p_rms;
                st[1] /= g.q_rms;
            }
        }
        self.ranges.apply(&mut out, true);
        Ok(out)
    }

    pub fn denormalize(&self, ds: &Dataset) -> Result<Dataset, DataError> {
        self.check_kind(ds)?;
        let mut out = ds.clone();
        self.ranges.apply(&mut out, false);
        for s in &mut out.series {
            let g = *self.rms.lookup(s.theta.sigma3)?;
            for st in &mut s.states {
                st[0] *= g.p_rms;
                st[1] *= g.q_rms;
            }
        }
        Ok(out)
    }
}
