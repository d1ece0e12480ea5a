use super::{DataError, Dataset, State, TriaxSeries};

/// Training segment `S_{H,k}` of series `m`: the measured state before the
/// window, `H` exogenous rows and `H` target states.
///
/// Each `exo` row is `[u_t..., theta...]`, i.e. the network input without the
/// leading state.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub series: usize,
    /// 1-based start step `k`; the first target is `s_k`.
    pub start: usize,
    pub init: State,
    pub exo: Vec<Vec<f64>>,
    pub targets: Vec<State>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

fn exo_rows(s: &TriaxSeries, from: usize, to: usize) -> Vec<Vec<f64>> {
    let theta = s.theta.as_array();
    (from..to)
        .map(|t| {
            let mut row = Vec::with_capacity(s.kind.input_width() + 2);
            s.inputs[t - 1].push_features(s.kind, &mut row);
            row.extend_from_slice(&theta);
            row
        })
        .collect()
}

/// All `M * (N - H + 1)` overlapping windows of length `h`.
pub fn segment_windows(ds: &Dataset, h: usize) -> Result<Vec<Window>, DataError> {
    let Some(n) = ds.common_steps()? else {
        return Ok(Vec::new());
    };
    if h == 0 || h > n {
        return Err(DataError::WindowLength { h, n });
    }
    let mut out = Vec::with_capacity(ds.len() * (n - h + 1));
    for (m, s) in ds.series.iter().enumerate() {
        for k in 1..=n - h + 1 {
            out.push(Window {
                series: m,
                start: k,
                init: s.states[k - 1],
                exo: exo_rows(s, k, k + h),
                targets: s.states[k..k + h].to_vec(),
            });
        }
    }
    Ok(out)
}

/// The whole series as a single window starting from `s_0`.
pub fn full_sequence(s: &TriaxSeries, m: usize) -> Window {
    let n = s.n_steps();
    Window {
        series: m,
        start: 1,
        init: s.states[0],
        exo: exo_rows(s, 1, n + 1),
        targets: s.states[1..].to_vec(),
    }
}
