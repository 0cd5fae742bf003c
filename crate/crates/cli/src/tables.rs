use std::fmt::Write;

use flowbundle::flow_io::PatchDataset;
use flowbundle::patch::{directionality, ZERO_CONTRAST_EPS};
use flowbundle::stats::{nearest_rank_percentile, top_percent_cutoff};

/// Nearest-rank percentiles `0, 1, …, 100` of directionality per dataset.
pub fn directionality_percentiles(datasets: &[&PatchDataset]) -> Vec<Vec<f64>> {
    datasets
        .iter()
        .map(|ds| {
            let mut r: Vec<f64> = ds.records.iter().map(|x| directionality(&x.patch)).collect();
            r.sort_by(f64::total_cmp);
            if r.is_empty() {
                return vec![f64::NAN; 101];
            }
            (0..=100).map(|p| nearest_rank_percentile(&r, p as f64)).collect()
        })
        .collect()
}

pub fn percentiles_csv(names: &[String], curves: &[Vec<f64>]) -> String {
    let mut out = String::from("percentile");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for p in 0..=100 {
        let _ = write!(out, "{p}");
        for c in curves {
            let _ = write!(out, ",{}", c[p]);
        }
        out.push('\n');
    }
    out
}

/// The smallest tier (most exclusive top-percent cut by original contrast)
/// each record belongs to. Membership uses the same cut-off rule as the
/// contrast filter, so tier counts match its output sizes.
pub fn annotate_locations(ds: &PatchDataset, tiers: &[f64]) -> Vec<Option<f64>> {
    let contrasts: Vec<f64> =
        ds.records.iter().map(|r| r.original_contrast).filter(|&c| c > ZERO_CONTRAST_EPS).collect();
    let mut sorted = tiers.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cutoffs: Vec<(f64, f64)> =
        sorted.iter().filter_map(|&t| top_percent_cutoff(&contrasts, t).map(|c| (t, c))).collect();
    ds.records
        .iter()
        .map(|r| {
            if r.original_contrast <= ZERO_CONTRAST_EPS {
                return None;
            }
            cutoffs.iter().find(|&&(_, c)| r.original_contrast >= c).map(|&(t, _)| t)
        })
        .collect()
}

pub fn locations_csv(ds: &PatchDataset, tiers: &[Option<f64>]) -> String {
    let mut out = String::from("frame,row,col,tier\n");
    for (r, t) in ds.records.iter().zip(tiers) {
        let tier = t.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{tier}", r.frame, r.row, r.col);
    }
    out
}
