use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate, CroppedModel};
use super::metrics::median;
use super::{train_with, RunConfig};
use crate::data::{split_scenes, Dataset};
use crate::error::{Error, Result};
use crate::model::Toggles;
use crate::pseudo_ref::PrVariant;

pub const METRICS_HEADER: &str = "variant,toggles,T,seed,lcc,srocc";
pub const MEDIANS_HEADER: &str = "variant,toggles,T,runs,lcc,srocc";

/// One trained architecture of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Arm {
    pub variant: PrVariant,
    pub toggles: Toggles,
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.variant, self.toggles.label())
    }
}

impl FromStr for Arm {
    type Err = Error;

    /// `variant:toggles`, e.g. `location:pr1-ssim1-pyr1`.
    fn from_str(s: &str) -> Result<Self> {
        let (v, t) = s.trim().split_once(':').ok_or_else(|| Error::Config(format!("arm {s:?} is not variant:toggles")))?;
        Ok(Self { variant: v.parse()?, toggles: Toggles::parse_label(t)? })
    }
}

/// The variant comparison (all five variants, full architecture) plus the
/// architecture ablation of the default variant: no pseudo-reference, no
/// pyramid, no SSIM.
pub fn default_arms() -> Vec<Arm> {
    let full = Toggles::default();
    let mut arms: Vec<Arm> = PrVariant::ALL.iter().map(|&variant| Arm { variant, toggles: full }).collect();
    for toggles in [
        Toggles::BASELINE,
        Toggles { pyramid: false, ..full },
        Toggles { ssim: false, ..full },
    ] {
        arms.push(Arm { variant: PrVariant::default(), toggles });
    }
    arms
}

/// Splits an ablation config into its optional `arms = a, b, ...` line and
/// the remaining run configuration.
pub fn parse_ablation_config(text: &str) -> Result<(RunConfig, Vec<Arm>)> {
    let mut arms = None;
    let mut rest = String::new();
    for line in text.lines() {
        let content = line.split('#').next().unwrap_or("");
        match content.split_once('=') {
            Some((k, v)) if k.trim() == "arms" => {
                if arms.is_some() {
                    return Err(Error::Config("duplicate key \"arms\"".into()));
                }
                arms = Some(v.split(',').map(str::parse).collect::<Result<Vec<Arm>>>()?);
            }
            _ => {
                rest.push_str(line);
                rest.push('\n');
            }
        }
    }
    let arms = arms.unwrap_or_else(default_arms);
    if arms.is_empty() {
        return Err(Error::Config("ablation grid has no arms".into()));
    }
    Ok((RunConfig::from_kv(&rest)?, arms))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub variant: PrVariant,
    pub toggles: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub seed: u64,
    pub lcc: f64,
    pub srocc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianRow {
    pub variant: PrVariant,
    pub toggles: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub runs: usize,
    pub lcc: f64,
    pub srocc: f64,
}

impl MedianRow {
    pub fn arm(&self) -> Result<Arm> {
        Ok(Arm { variant: self.variant, toggles: Toggles::parse_label(&self.toggles)? })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

fn csv_string<R: Serialize>(rows: &[R], header: &str) -> String {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        wtr.serialize(r).expect("in-memory CSV write");
    }
    let body = String::from_utf8(wtr.into_inner().expect("in-memory CSV flush")).expect("CSV is UTF-8");
    format!("{header}\n{body}")
}

impl MetricsReport {
    /// Median LCC and SROCC over seeds for each (arm, T), in first-seen order.
    pub fn medians(&self) -> Result<Vec<MedianRow>> {
        let mut groups: Vec<((PrVariant, &str, usize), Vec<f64>, Vec<f64>)> = Vec::new();
        for r in &self.rows {
            let key = (r.variant, r.toggles.as_str(), r.t);
            let i = match groups.iter().position(|g| g.0 == key) {
                Some(i) => i,
                None => {
                    groups.push((key, Vec::new(), Vec::new()));
                    groups.len() - 1
                }
            };
            groups[i].1.push(r.lcc);
            groups[i].2.push(r.srocc);
        }
        groups
            .into_iter()
            .map(|((variant, toggles, t), lcc, srocc)| {
                Ok(MedianRow {
                    variant,
                    toggles: toggles.to_string(),
                    t,
                    runs: lcc.len(),
                    lcc: median(&lcc)?,
                    srocc: median(&srocc)?,
                })
            })
            .collect()
    }

    pub fn median_srocc(&self, arm: Arm, t: usize) -> Result<f64> {
        let label = arm.toggles.label();
        let v: Vec<f64> =
            self.rows.iter().filter(|r| r.variant == arm.variant && r.toggles == label && r.t == t).map(|r| r.srocc).collect();
        median(&v).map_err(|_| Error::Data(format!("report has no rows for {arm} at T={t}")))
    }

    pub fn to_csv(&self) -> String {
        csv_string(&self.rows, METRICS_HEADER)
    }

    pub fn medians_csv(&self) -> Result<String> {
        Ok(csv_string(&self.medians()?, MEDIANS_HEADER))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Format { path: "<metrics csv>".into(), message: m };
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| bad(e.to_string()))?.iter().collect::<Vec<_>>().join(",");
        if header != METRICS_HEADER {
            return Err(bad(format!("expected header {METRICS_HEADER:?}, got {header:?}")));
        }
        let rows = rdr.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| bad(e.to_string()))?;
        Ok(Self { rows })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("metrics.csv", self.to_csv()),
            ("medians.csv", self.medians_csv()?),
            ("srocc_vs_t.svg", super::plot::srocc_vs_t_svg(&self.medians()?)?),
        ];
        for (name, body) in files {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Trains every arm once per seed on the training scenes and evaluates each
/// run at every T on the held-out scenes. The test partition depends only on
/// `partition_seed`, so all arms and seeds see identical sets.
pub fn ablation_run(base: &RunConfig, arms: &[Arm], data: &Dataset, mut log: impl FnMut(&str)) -> Result<MetricsReport> {
    base.validate()?;
    let (train, test) = split_scenes(data, base.train_fraction, base.split_seed)?;
    if train.scenes.is_empty() || test.scenes.is_empty() {
        return Err(Error::Config(format!(
            "split of {} scenes leaves {} train / {} test",
            data.scenes.len(),
            train.scenes.len(),
            test.scenes.len()
        )));
    }
    let mut report = MetricsReport::default();
    for &arm in arms {
        let config = RunConfig { variant: arm.variant, toggles: arm.toggles, ..base.clone() };
        for &seed in &base.seeds {
            let ck = train_with(&config, seed, &train, |s| {
                log(&format!("{arm} seed {seed} epoch {} lr {:.2e} loss {:.6}", s.epoch, s.lr, s.mean_loss))
            })?;
            let scorer = CroppedModel { model: &ck.model, crop: config.crop };
            for &t in &base.t_values {
                let ev = evaluate(&scorer, &test, t, base.partition_seed)?;
                log(&format!("{arm} seed {seed} T {t} lcc {:.4} srocc {:.4}", ev.lcc, ev.srocc));
                report.rows.push(MetricsRow {
                    variant: arm.variant,
                    toggles: arm.toggles.label(),
                    t,
                    seed,
                    lcc: ev.lcc,
                    srocc: ev.srocc,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, srocc: f64) -> MetricsRow {
        MetricsRow { variant: PrVariant::LocationWeight, toggles: "pr1-ssim1-pyr1".into(), t: 5, seed, lcc: srocc / 2.0, srocc }
    }

    #[test]
    fn median_of_three_seeds() {
        let report = MetricsReport { rows: vec![row(0, 0.3), row(1, 0.9), row(2, 0.5)] };
        let m = report.medians().unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].runs, m[0].srocc, m[0].lcc), (3, 0.5, 0.25));
    }

    #[test]
    fn csv_round_trip() {
        let report = MetricsReport { rows: vec![row(0, 0.1 + 0.2), row(1, -1.0 / 3.0)] };
        let text = report.to_csv();
        assert!(text.starts_with(METRICS_HEADER));
        assert_eq!(MetricsReport::from_csv(&text).unwrap(), report);
    }

    #[test]
    fn arms_parse() {
        let arm: Arm = "mean:pr1-ssim0-pyr1".parse().unwrap();
        assert_eq!(arm.to_string(), "mean:pr1-ssim0-pyr1");
        let (cfg, arms) = parse_ablation_config("epochs = 2\narms = location:pr0-ssim0-pyr0, iv:pr1-ssim1-pyr1\n").unwrap();
        assert_eq!(cfg.epochs, 2);
        assert_eq!(arms.len(), 2);
        assert_eq!(parse_ablation_config("").unwrap().1.len(), 8);
    }
}
