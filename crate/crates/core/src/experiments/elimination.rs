//! Greedy backward electrode elimination and the importance scores derived from it.

use rayon::prelude::*;

use super::{ExperimentError, Result};

/// Outcome of one backward elimination.
#[derive(Debug, Clone, PartialEq)]
pub struct Elimination {
    /// Starting channel set, in montage order.
    pub channels: Vec<String>,
    /// Channels from least to most important: the removed channels in removal
    /// order followed by the last survivor. Empty for a single channel.
    pub order: Vec<String>,
    /// Score of the starting set, then of the kept set after every removal;
    /// `curve[k]` belongs to `channels.len() - k` channels.
    pub curve: Vec<f64>,
}

impl Elimination {
    pub fn to_text(&self) -> String {
        let curve: Vec<String> = self.curve.iter().map(|v| format!("{v:?}")).collect();
        format!(
            "channels = {}\norder = {}\ncurve = {}\n",
            self.channels.join(","),
            self.order.join(","),
            curve.join(",")
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut channels = None;
        let mut order = None;
        let mut curve = None;
        let list = |v: &str| -> Vec<String> {
            if v.is_empty() {
                Vec::new()
            } else {
                v.split(',').map(str::to_string).collect()
            }
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(" = ")
                .or_else(|| line.strip_suffix(" =").map(|k| (k, "")))
                .ok_or_else(|| ExperimentError::Store(format!("malformed elimination line {line:?}")))?;
            match k {
                "channels" => channels = Some(list(v)),
                "order" => order = Some(list(v)),
                "curve" => {
                    curve = Some(
                        list(v)
                            .iter()
                            .map(|x| x.parse::<f64>().map_err(|e| ExperimentError::Store(format!("curve value {x:?}: {e}"))))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                other => return Err(ExperimentError::Store(format!("unknown elimination field `{other}`"))),
            }
        }
        let missing = |f: &str| ExperimentError::Store(format!("elimination record lacks `{f}`"));
        Ok(Self {
            channels: channels.ok_or_else(|| missing("channels"))?,
            order: order.ok_or_else(|| missing("order"))?,
            curve: curve.ok_or_else(|| missing("curve"))?,
        })
    }
}

/// Repeatedly drops the channel whose removal leaves the highest score until
/// one channel remains.
///
/// Candidates of one step are scored in parallel; ties go to the channel
/// listed first in `channels`. Evaluator errors are reported with the step and
/// candidate set they came from.
pub fn backward_eliminate<F>(evaluator: F, channels: &[String]) -> Result<Elimination>
where
    F: Fn(&[String]) -> Result<f64> + Sync,
{
    if channels.is_empty() {
        return Err(ExperimentError::Argument("elimination needs at least one channel".into()));
    }
    for (i, c) in channels.iter().enumerate() {
        if channels[..i].contains(c) {
            return Err(ExperimentError::Argument(format!("duplicate channel {c}")));
        }
    }
    if channels.len() == 1 {
        return Ok(Elimination { channels: channels.to_vec(), order: Vec::new(), curve: Vec::new() });
    }
    fn wrap(step: usize, set: &[String]) -> impl FnOnce(ExperimentError) -> ExperimentError {
        let channels = set.join(",");
        move |e| ExperimentError::Elimination { step, channels, source: Box::new(e) }
    }
    let mut kept = channels.to_vec();
    let mut curve = vec![evaluator(&kept).map_err(wrap(0, &kept))?];
    let mut order = Vec::with_capacity(channels.len());
    let mut step = 1;
    while kept.len() > 1 {
        let candidates: Vec<Vec<String>> = (0..kept.len())
            .map(|i| kept.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, c)| c.clone()).collect())
            .collect();
        let scores = candidates
            .par_iter()
            .map(|set| evaluator(set).map_err(wrap(step, set)))
            .collect::<Result<Vec<f64>>>()?;
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s.is_nan() {
                return Err(wrap(step, &candidates[i])(ExperimentError::Argument("evaluator returned NaN".into())));
            }
            if s > scores[best] {
                best = i;
            }
        }
        order.push(kept.remove(best));
        curve.push(scores[best]);
        step += 1;
    }
    order.push(kept.remove(0));
    Ok(Elimination { channels: channels.to_vec(), order, curve })
}

/// Per-channel usage scores summed over several eliminations of the same montage.
#[derive(Debug, Clone, PartialEq)]
pub struct Importance {
    pub channels: Vec<String>,
    /// Sum over runs of the number of channel sets (the full set included)
    /// in which the channel was still present.
    pub raw: Vec<f64>,
    /// `raw` min-max scaled to `[0, 1]`; all ones when every raw score is equal.
    pub normalized: Vec<f64>,
}

/// Usage frequency of every channel of `montage` across `runs`.
pub fn electrode_importance(runs: &[Elimination], montage: &[String]) -> Result<Importance> {
    if runs.is_empty() {
        return Err(ExperimentError::Argument("no elimination runs to aggregate".into()));
    }
    let mut raw = vec![0.0; montage.len()];
    for (r, run) in runs.iter().enumerate() {
        let mut sorted_run = run.channels.clone();
        let mut sorted_parent = montage.to_vec();
        sorted_run.sort();
        sorted_parent.sort();
        if sorted_run != sorted_parent {
            return Err(ExperimentError::Argument(format!(
                "run {r} eliminated over {} but the montage is {}",
                run.channels.join(","),
                montage.join(",")
            )));
        }
        if run.order.is_empty() {
            raw[0] += 1.0;
            continue;
        }
        for (k, ch) in run.order.iter().enumerate() {
            let i = montage.iter().position(|m| m == ch).expect("order is a permutation of the montage");
            raw[i] += (k + 1) as f64;
        }
    }
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let normalized = raw.iter().map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 1.0 }).collect();
    Ok(Importance { channels: montage.to_vec(), raw, normalized })
}
