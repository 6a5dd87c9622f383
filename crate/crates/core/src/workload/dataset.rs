use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ScenarioKind, Transform, WorkloadSpec};
use crate::nn::Tensor2;
use crate::rng::{stream_rng, streams};
use crate::{Error, Result};

/// One labelled sample pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    pub data: Tensor2,
    pub labels: Vec<usize>,
    /// Globally unique sample ids.
    pub ids: Vec<u64>,
}

impl Pool {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> (Tensor2, Vec<usize>) {
        (
            self.data.select_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioData {
    pub id: usize,
    pub classes: Vec<usize>,
    pub train: Pool,
    pub val: Pool,
    pub test: Pool,
    /// Class means in effect during this scenario.
    pub class_means: BTreeMap<usize, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dims: usize,
    pub batch_size: usize,
    pub scenarios: Vec<ScenarioData>,
    /// Non-fatal generation notes, e.g. overlapping class means.
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn train_batch_count(&self, scenario: usize) -> usize {
        self.scenarios[scenario].train.len() / self.batch_size
    }

    pub fn train_batch(&self, scenario: usize, index: usize) -> (Tensor2, Vec<usize>) {
        let start = index * self.batch_size;
        let idx: Vec<usize> = (start..start + self.batch_size).collect();
        self.scenarios[scenario].train.select(&idx)
    }
}

/// Rotates every consecutive coordinate pair `(0,1), (2,3), …` by `angle`
/// and adds `shift`.
pub(crate) fn apply_transform(t: &Transform, v: &[f64]) -> Vec<f64> {
    let (s, c) = t.angle_deg.to_radians().sin_cos();
    let mut out = v.to_vec();
    for pair in out.chunks_exact_mut(2) {
        let (x, y) = (pair[0], pair[1]);
        pair[0] = c * x - s * y;
        pair[1] = s * x + c * y;
    }
    for (o, d) in out.iter_mut().zip(&t.shift) {
        *o += d;
    }
    out
}

/// Smallest validation count `v` with `v = round(0.05 · (train + v))`.
pub(crate) fn validation_count(train: usize) -> usize {
    (0..=train)
        .find(|&v| ((train + v) as f64 * 0.05).round() as usize == v)
        .unwrap_or(0)
}

pub fn generate_dataset(spec: &WorkloadSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, streams::DATASET);
    let dims = spec.dims;
    let scale = spec.separation / (2.0 * dims as f64).sqrt();
    let mut means: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut next_id: u64 = 0;
    let mut scenarios = Vec::with_capacity(spec.scenarios.len());

    for (sid, sc) in spec.scenarios.iter().enumerate() {
        if matches!(sc.kind, ScenarioKind::NewPattern | ScenarioKind::Mixed) {
            for m in means.values_mut() {
                *m = apply_transform(&sc.transform, m);
            }
        }
        for &c in &sc.classes {
            if !means.contains_key(&c) {
                if sc.kind == ScenarioKind::NewPattern {
                    return Err(Error::config(format!(
                        "scenario {sid} is new_pattern but introduces class {c}"
                    )));
                }
                let m: Vec<f64> = (0..dims)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                for (other, om) in &means {
                    let d = m
                        .iter()
                        .zip(om)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    if d < spec.noise_std {
                        warnings.push(format!(
                            "scenario {sid}: class {c} mean lies {d:.3} from class {other} (< 1 sigma)"
                        ));
                    }
                }
                means.insert(c, m);
            }
        }

        let mut draw = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Pool {
            let mut labels: Vec<usize> = (0..n).map(|i| sc.classes[i % sc.classes.len()]).collect();
            labels.shuffle(rng);
            let mut data = Vec::with_capacity(n * dims);
            for &y in &labels {
                let m = &means[&y];
                data.extend(
                    m.iter()
                        .map(|mu| mu + spec.noise_std * rng.sample::<f64, _>(StandardNormal)),
                );
            }
            let ids = (next_id..next_id + n as u64).collect();
            next_id += n as u64;
            Pool {
                data: Tensor2::from_vec(n, dims, data).expect("sized buffer"),
                labels,
                ids,
            }
        };

        let train_n = sc.train_batches * spec.batch_size;
        let val_n = validation_count(train_n);
        let train = draw(train_n, &mut rng);
        let val = draw(val_n, &mut rng);
        let test = draw(spec.test_per_scenario, &mut rng);
        let class_means = sc.classes.iter().map(|&c| (c, means[&c].clone())).collect();
        scenarios.push(ScenarioData {
            id: sid,
            classes: sc.classes.clone(),
            train,
            val,
            test,
            class_means,
        });
    }
    Ok(Dataset {
        dims,
        batch_size: spec.batch_size,
        scenarios,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_share_rounds() {
        for train in [0, 16, 160, 3200, 777] {
            let v = validation_count(train);
            assert_eq!(v, ((train + v) as f64 * 0.05).round() as usize);
        }
    }

    #[test]
    fn quarter_turn_on_pairs() {
        let t = Transform {
            angle_deg: 90.0,
            shift: vec![],
        };
        let v = apply_transform(&t, &[1.0, 0.0, 0.0, 2.0, 5.0]);
        assert!((v[0]).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
        assert!((v[2] + 2.0).abs() < 1e-15 && v[3].abs() < 1e-15);
        assert_eq!(v[4], 5.0);
    }
}
