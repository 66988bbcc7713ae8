use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{dsc, mean, sample_std};
use crate::data::{Sample, SegMask};
use crate::error::{Error, Result};

/// Anything that maps a sample to a predicted mask.
pub trait Segmenter {
    fn segment(&self, sample: &Sample) -> Result<SegMask>;
}

impl<F> Segmenter for F
where
    F: Fn(&Sample) -> Result<SegMask>,
{
    fn segment(&self, sample: &Sample) -> Result<SegMask> {
        self(sample)
    }
}

/// Returns each sample's own ground truth.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleSegmenter;

impl Segmenter for OracleSegmenter {
    fn segment(&self, sample: &Sample) -> Result<SegMask> {
        sample
            .mask
            .clone()
            .ok_or_else(|| Error::Validation(format!("sample `{}` has no ground-truth mask", sample.id)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub dsc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_sample: Vec<SampleScore>,
    pub mean: f64,
    /// Sample (`n − 1`) standard deviation of the per-sample scores.
    pub std: f64,
    pub config_fingerprint: String,
    pub seeds: Vec<u64>,
}

impl EvalReport {
    pub fn from_scores(per_sample: Vec<SampleScore>, config_fingerprint: &str, seeds: &[u64]) -> Self {
        let values: Vec<f64> = per_sample.iter().map(|s| s.dsc).collect();
        Self {
            mean: mean(&values),
            std: sample_std(&values),
            per_sample,
            config_fingerprint: config_fingerprint.to_string(),
            seeds: seeds.to_vec(),
        }
    }

    pub fn scores(&self) -> Vec<f64> {
        self.per_sample.iter().map(|s| s.dsc).collect()
    }

    /// Writes `sample_id,dsc` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sample_id", "dsc"])?;
        for s in &self.per_sample {
            w.write_record([s.id.clone(), format!("{}", s.dsc)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores every sample, in sample-id order.
pub fn evaluate(
    model: &dyn Segmenter,
    samples: &[Sample],
    config_fingerprint: &str,
    seeds: &[u64],
) -> Result<EvalReport> {
    let mut ordered: Vec<&Sample> = samples.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let mut scores = Vec::with_capacity(ordered.len());
    for s in ordered {
        let gt = s
            .mask
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("sample `{}` has no ground-truth mask", s.id)))?;
        let pred = model.segment(s)?;
        if pred.resolution() != gt.resolution() {
            return Err(Error::Dimension(format!(
                "sample `{}`: prediction {:?} vs ground truth {:?}",
                s.id,
                pred.resolution(),
                gt.resolution()
            )));
        }
        scores.push(SampleScore {
            id: s.id.clone(),
            dsc: dsc(&pred, gt)?,
        });
    }
    Ok(EvalReport::from_scores(scores, config_fingerprint, seeds))
}

/// A named pipeline built afresh for each seed.
pub struct PipelineSpec<'a> {
    pub name: String,
    pub config_fingerprint: String,
    pub build: Box<dyn Fn(u64) -> Result<Box<dyn Segmenter + 'a>> + 'a>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub name: String,
    pub seed: u64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub names: Vec<String>,
    pub seeds: Vec<u64>,
    pub entries: Vec<ComparisonEntry>,
}

/// Evaluates every pipeline under every seed.
pub fn compare_pipelines(configs: &[PipelineSpec<'_>], samples: &[Sample], seeds: &[u64]) -> Result<ComparisonReport> {
    if configs.is_empty() || seeds.is_empty() {
        return Err(Error::Config("comparison needs at least one pipeline and one seed".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for c in configs {
        if !seen.insert(c.name.as_str()) {
            return Err(Error::Config(format!("duplicate pipeline name `{}`", c.name)));
        }
    }
    let mut entries = Vec::with_capacity(configs.len() * seeds.len());
    for c in configs {
        for &seed in seeds {
            let model = (c.build)(seed)?;
            entries.push(ComparisonEntry {
                name: c.name.clone(),
                seed,
                report: evaluate(model.as_ref(), samples, &c.config_fingerprint, &[seed])?,
            });
        }
    }
    Ok(ComparisonReport {
        names: configs.iter().map(|c| c.name.clone()).collect(),
        seeds: seeds.to_vec(),
        entries,
    })
}

impl ComparisonReport {
    pub fn entries_for<'s>(&'s self, name: &'s str) -> impl Iterator<Item = &'s ComparisonEntry> + 's {
        self.entries.iter().filter(move |e| e.name == name)
    }

    /// Mean over seeds of each seed's mean DSC.
    pub fn mean_dsc(&self, name: &str) -> Option<f64> {
        let means: Vec<f64> = self.entries_for(name).map(|e| e.report.mean).collect();
        (!means.is_empty()).then(|| mean(&means))
    }

    /// Summary rows: `config,seed,n,mean,std,fingerprint`.
    pub fn write_summary_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["config", "seed", "n", "mean_dsc", "std_dsc", "config_fingerprint"])?;
        for e in &self.entries {
            w.write_record([
                e.name.clone(),
                e.seed.to_string(),
                e.report.per_sample.len().to_string(),
                format!("{}", e.report.mean),
                format!("{}", e.report.std),
                e.report.config_fingerprint.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Wide per-sample table: `seed,sample_id` then one DSC column per config.
    pub fn write_per_sample_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut rows: BTreeMap<(u64, String), BTreeMap<&str, f64>> = BTreeMap::new();
        for e in &self.entries {
            for s in &e.report.per_sample {
                rows.entry((e.seed, s.id.clone()))
                    .or_default()
                    .insert(e.name.as_str(), s.dsc);
            }
        }
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["seed".to_string(), "sample_id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for ((seed, id), cols) in rows {
            let mut rec = vec![seed.to_string(), id];
            for n in &self.names {
                rec.push(cols.get(n.as_str()).map(|v| format!("{v}")).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
