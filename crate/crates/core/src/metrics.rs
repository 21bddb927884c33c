//! Segmentation metrics over binary masks and label maps.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

fn same_shape(a: ArrayView2<'_, bool>, b: ArrayView2<'_, bool>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("masks {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// True/false positive/negative counts of `pred` against `truth`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn of(pred: ArrayView2<'_, bool>, truth: ArrayView2<'_, bool>) -> Result<Self> {
        same_shape(pred, truth)?;
        let mut c = Confusion::default();
        Zip::from(pred).and(truth).for_each(|&p, &t| match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        });
        Ok(c)
    }

    fn ratio(num: usize, den: usize) -> f64 {
        if den == 0 {
            1.0
        } else {
            num as f64 / den as f64
        }
    }

    pub fn dice(&self) -> f64 {
        Self::ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn jaccard(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    pub fn accuracy(&self) -> f64 {
        Self::ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }

    pub fn recall(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn precision(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp)
    }
}

/// `2|A∩B| / (|A|+|B|)`, 1 when both masks are empty.
pub fn dice(pred: ArrayView2<'_, bool>, truth: ArrayView2<'_, bool>) -> Result<f64> {
    Confusion::of(pred, truth).map(|c| c.dice())
}

/// `|A∩B| / |A∪B|`, 1 when both masks are empty.
pub fn jaccard(pred: ArrayView2<'_, bool>, truth: ArrayView2<'_, bool>) -> Result<f64> {
    Confusion::of(pred, truth).map(|c| c.jaccard())
}

pub fn accuracy(pred: ArrayView2<'_, bool>, truth: ArrayView2<'_, bool>) -> Result<f64> {
    Confusion::of(pred, truth).map(|c| c.accuracy())
}

pub fn recall(pred: ArrayView2<'_, bool>, truth: ArrayView2<'_, bool>) -> Result<f64> {
    Confusion::of(pred, truth).map(|c| c.recall())
}

pub fn precision(pred: ArrayView2<'_, bool>, truth: ArrayView2<'_, bool>) -> Result<f64> {
    Confusion::of(pred, truth).map(|c| c.precision())
}

/// Percentile `q ∈ [0, 1]` of sorted values with linear interpolation.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn points(mask: ArrayView2<'_, bool>) -> Vec<(f64, f64)> {
    mask.indexed_iter()
        .filter(|(_, &m)| m)
        .map(|((y, x), _)| (y as f64, x as f64))
        .collect()
}

fn directed<'a>(from: &'a [(f64, f64)], to: &'a [(f64, f64)]) -> impl Iterator<Item = f64> + 'a {
    from.iter().map(move |&(y, x)| {
        to.iter()
            .map(|&(v, u)| (y - v).powi(2) + (x - u).powi(2))
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    })
}

/// 95th percentile of the pooled nearest-neighbour distances from each mask
/// to the other. `∞` when exactly one mask is empty, 0 when both are.
pub fn hd95(pred: ArrayView2<'_, bool>, truth: ArrayView2<'_, bool>) -> Result<f64> {
    same_shape(pred, truth)?;
    let (a, b) = (points(pred), points(truth));
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return Ok(0.0),
        (true, false) | (false, true) => return Ok(f64::INFINITY),
        _ => {}
    }
    let mut d: Vec<f64> = directed(&a, &b).chain(directed(&b, &a)).collect();
    d.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&d, 0.95))
}

/// Nested region masks `labels ≥ k` for `k = 1 … n_classes − 1`.
pub fn composite_regions(labels: ArrayView2<'_, i32>, n_classes: usize) -> Result<Vec<Array2<bool>>> {
    if let Some(&bad) = labels.iter().find(|&&l| l < 0 || l as usize >= n_classes) {
        return Err(Error::LabelOutOfRange {
            label: bad as i64,
            classes: n_classes,
        });
    }
    Ok((1..n_classes as i32).map(|k| labels.mapv(|l| l >= k)).collect())
}

/// Serializes `∞` as the string `"inf"`.
mod distance {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad distance {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionScores {
    pub dice: f64,
    pub jaccard: f64,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    #[serde(with = "distance")]
    pub hd95: f64,
}

impl RegionScores {
    pub fn of(pred: ArrayView2<'_, bool>, truth: ArrayView2<'_, bool>) -> Result<Self> {
        let c = Confusion::of(pred, truth)?;
        Ok(RegionScores {
            dice: c.dice(),
            jaccard: c.jaccard(),
            accuracy: c.accuracy(),
            recall: c.recall(),
            precision: c.precision(),
            hd95: hd95(pred, truth)?,
        })
    }

    /// Mean over regions; infinite distances count as `hd_cap`.
    pub fn mean(items: &[RegionScores], hd_cap: f64) -> RegionScores {
        let n = items.len().max(1) as f64;
        let avg = |f: fn(&RegionScores) -> f64| items.iter().map(f).sum::<f64>() / n;
        RegionScores {
            dice: avg(|r| r.dice),
            jaccard: avg(|r| r.jaccard),
            accuracy: avg(|r| r.accuracy),
            recall: avg(|r| r.recall),
            precision: avg(|r| r.precision),
            hd95: items.iter().map(|r| r.hd95.min(hd_cap)).sum::<f64>() / n,
        }
    }
}

/// Scores per class (`labels == k`) and per nested region (`labels ≥ k`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    pub n_samples: usize,
    pub classes: Vec<RegionScores>,
    pub regions: Vec<RegionScores>,
    /// Mean Dice over the nested regions.
    pub mean_dice: f64,
}

impl SegReport {
    /// Scores one predicted label map against the truth.
    pub fn evaluate(pred: ArrayView2<'_, i32>, truth: ArrayView2<'_, i32>, n_classes: usize) -> Result<Self> {
        if pred.dim() != truth.dim() {
            return Err(Error::shape(format!("labels {:?} vs {:?}", pred.dim(), truth.dim())));
        }
        let rp = composite_regions(pred, n_classes)?;
        let rt = composite_regions(truth, n_classes)?;
        let regions = rp
            .iter()
            .zip(&rt)
            .map(|(p, t)| RegionScores::of(p.view(), t.view()))
            .collect::<Result<Vec<_>>>()?;
        let classes = (1..n_classes as i32)
            .map(|k| RegionScores::of(pred.mapv(|l| l == k).view(), truth.mapv(|l| l == k).view()))
            .collect::<Result<Vec<_>>>()?;
        let mean_dice = regions.iter().map(|r| r.dice).sum::<f64>() / regions.len() as f64;
        Ok(SegReport {
            n_samples: 1,
            classes,
            regions,
            mean_dice,
        })
    }

    /// Sample-weighted mean of reports. Infinite HD95 values are replaced by
    /// `hd_cap` (the image diagonal is the natural choice).
    pub fn aggregate(reports: &[SegReport], hd_cap: f64) -> Result<SegReport> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Config("no reports to aggregate".into()))?;
        let n: usize = reports.iter().map(|r| r.n_samples).sum();
        let merge = |pick: fn(&SegReport) -> &Vec<RegionScores>| {
            (0..pick(first).len())
                .map(|i| {
                    let mut acc = RegionScores::mean(&[], 0.0);
                    for r in reports {
                        let w = r.n_samples as f64 / n as f64;
                        let s = pick(r)[i];
                        acc.dice += w * s.dice;
                        acc.jaccard += w * s.jaccard;
                        acc.accuracy += w * s.accuracy;
                        acc.recall += w * s.recall;
                        acc.precision += w * s.precision;
                        acc.hd95 += w * s.hd95.min(hd_cap);
                    }
                    acc
                })
                .collect::<Vec<_>>()
        };
        if reports
            .iter()
            .any(|r| r.classes.len() != first.classes.len() || r.regions.len() != first.regions.len())
        {
            return Err(Error::shape("reports cover different class counts"));
        }
        let regions = merge(|r| &r.regions);
        let mean_dice = regions.iter().map(|r| r.dice).sum::<f64>() / regions.len().max(1) as f64;
        Ok(SegReport {
            n_samples: n,
            classes: merge(|r| &r.classes),
            regions,
            mean_dice,
        })
    }

    /// Aligned text table, one row per nested region plus the mean.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<Vec<String>> = self
            .regions
            .iter()
            .enumerate()
            .map(|(i, r)| {
                vec![
                    format!("labels>={}", i + 1),
                    pct(r.jaccard),
                    pct(r.dice),
                    pct(r.accuracy),
                    pct(r.recall),
                    pct(r.precision),
                    if r.hd95.is_infinite() {
                        "inf".into()
                    } else {
                        format!("{:.2}", r.hd95)
                    },
                ]
            })
            .collect();
        rows.push(vec!["mean Dice".into(), String::new(), pct(self.mean_dice)]);
        format_table(&["Region", "JI", "Dice", "Accuracy", "Recall", "Precision", "HD95"], &rows)
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// Left-aligned first column, right-aligned others.
pub fn format_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate().take(cols) {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, w) in widths.iter().enumerate() {
            let cell = cells.get(i).copied().unwrap_or("");
            if i == 0 {
                s.push_str(&format!("{cell:<w$}"));
            } else {
                s.push_str(&format!("  {cell:>w$}"));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(headers.to_vec());
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}
