//! Long-format panel CSV: `site_id,time_index,count[,feature...]`, one row
//! per (site, period), every combination present. Lines starting with `#`
//! are comments.

use std::collections::{BTreeMap, HashMap};
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;

use super::{PanelDataset, Split};
use crate::error::{Error, Result};

pub const PANEL_SCHEMA_VERSION: u32 = 1;
const KEY_COLUMNS: [&str; 3] = ["site_id", "time_index", "count"];

/// Reads a dense panel. Sites keep their order of first appearance; periods
/// are sorted by `time_index`. The split defaults to 70 / 15 / 15.
pub fn load_panel_csv(path: &Path) -> Result<PanelDataset> {
    let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), message };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.len() < 3 || header[..3] != KEY_COLUMNS {
        return Err(parse_err(format!(
            "header must start with {}, found {}",
            KEY_COLUMNS.join(","),
            header.join(",")
        )));
    }
    let feature_names = header[3..].to_vec();
    let d = feature_names.len();

    let mut site_order: Vec<String> = Vec::new();
    let mut site_pos: HashMap<String, usize> = HashMap::new();
    // (site position, time) -> (count, features, line)
    let mut cells: BTreeMap<(usize, i64), (f64, Vec<f64>, u64)> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let site = record[0].to_string();
        let time: i64 = record[1]
            .parse()
            .map_err(|_| parse_err(format!("line {line}: time_index '{}' is not an integer", &record[1])))?;
        let count_txt = &record[2];
        let count: u64 = count_txt.parse().map_err(|_| {
            if count_txt.starts_with('-') {
                parse_err(format!("line {line}: negative count {count_txt}"))
            } else {
                parse_err(format!("line {line}: count '{count_txt}' is not a non-negative integer"))
            }
        })?;
        let features = (3..3 + d)
            .map(|i| {
                record[i]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(format!("line {line}: bad value '{}' for {}", &record[i], header[i])))
            })
            .collect::<Result<Vec<_>>>()?;
        let pos = *site_pos.entry(site.clone()).or_insert_with(|| {
            site_order.push(site.clone());
            site_order.len() - 1
        });
        if let Some((_, _, first)) = cells.insert((pos, time), (count as f64, features, line)) {
            return Err(parse_err(format!(
                "line {line}: duplicate cell (site {site}, time {time}), first seen on line {first}"
            )));
        }
    }
    if cells.is_empty() {
        return Err(parse_err("no data rows".into()));
    }

    let mut times: Vec<i64> = cells.keys().map(|&(_, t)| t).collect();
    times.sort_unstable();
    times.dedup();
    let (t_len, s_len) = (times.len(), site_order.len());
    if cells.len() != t_len * s_len {
        let missing: Vec<String> = site_order
            .iter()
            .enumerate()
            .flat_map(|(pos, site)| {
                let cells = &cells;
                times
                    .iter()
                    .filter(move |&&t| !cells.contains_key(&(pos, t)))
                    .map(move |t| format!("(site {site}, time {t})"))
            })
            .take(10)
            .collect();
        return Err(parse_err(format!("panel is not dense; missing {}", missing.join(", "))));
    }

    let time_pos: HashMap<i64, usize> = times.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let mut counts = Array2::zeros((t_len, s_len));
    let mut features = vec![0.0; t_len * s_len * d];
    for ((pos, time), (count, feats, _)) in cells {
        let t = time_pos[&time];
        counts[[t, pos]] = count;
        let start = (t * s_len + pos) * d;
        features[start..start + d].copy_from_slice(&feats);
    }
    let split = if t_len >= 3 {
        Split::by_fraction(t_len, 0.7, 0.15)?
    } else {
        Split::new(0..t_len, t_len..t_len, t_len..t_len, t_len)?
    };
    PanelDataset::new(counts, split)?
        .with_features(feature_names, features)?
        .with_site_ids(site_order)?
        .with_time_index(times)
}

/// Writes rows ordered by period, then site. Floats use shortest
/// round-trip formatting, so reading back reproduces every value.
pub fn write_panel_csv(panel: &PanelDataset, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "# schema_version {PANEL_SCHEMA_VERSION}")?;
    let mut writer = csv::Writer::from_writer(file);
    let mut header: Vec<&str> = KEY_COLUMNS.to_vec();
    header.extend(panel.feature_names().iter().map(String::as_str));
    writer.write_record(&header)?;
    let d = panel.n_features();
    for t in 0..panel.n_periods() {
        let period = panel.period(t);
        for (s, site) in panel.site_ids().iter().enumerate() {
            let mut row = vec![
                site.clone(),
                panel.time_index()[t].to_string(),
                format!("{}", panel.counts()[[t, s]] as u64),
            ];
            if d > 0 {
                row.extend(period.site_features(s).iter().map(|v| v.to_string()));
            }
            writer.write_record(&row)?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_negbin_panel, NegBinPanelSpec};

    fn load_text(text: &str) -> Result<PanelDataset> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        std::fs::write(&path, text).unwrap();
        load_panel_csv(&path)
    }

    #[test]
    fn toy_panel() {
        let p = load_text("# comment\nsite_id,time_index,count\nb,1,4\na,0,1\nb,0,2\na,1,3\n").unwrap();
        assert_eq!(p.site_ids(), &["b", "a"]);
        assert_eq!(p.time_index(), &[0, 1]);
        assert_eq!(p.counts(), &ndarray::array![[2.0, 1.0], [4.0, 3.0]]);
    }

    #[test]
    fn errors_name_the_problem() {
        let missing = load_text("site_id,time_index,count\na,0,1\nb,0,2\na,1,3\n").unwrap_err();
        assert!(missing.to_string().contains("(site b, time 1)"), "{missing}");
        let dup = load_text("site_id,time_index,count\na,0,1\na,0,2\n").unwrap_err();
        assert!(dup.to_string().contains("duplicate"), "{dup}");
        let neg = load_text("site_id,time_index,count\na,0,-1\n").unwrap_err();
        assert!(neg.to_string().contains("negative"), "{neg}");
        assert!(load_text("site_id,time_index,count,x\na,0,1\n").is_err());
        assert!(load_text("site,time,count\na,0,1\n").is_err());
    }

    #[test]
    fn round_trip_is_lossless() {
        let panel = gen_negbin_panel(NegBinPanelSpec { n_sites: 4, n_periods: 6, n_features: 3, seed: 1, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_panel_csv(&panel, &path).unwrap();
        let back = load_panel_csv(&path).unwrap().with_split(panel.split().clone()).unwrap();
        assert_eq!(back.counts(), panel.counts());
        assert_eq!(back.features(), panel.features());
        assert_eq!(back.feature_names(), panel.feature_names());
        let path2 = dir.path().join("q.csv");
        write_panel_csv(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }
}
