//! Export of shared embeddings with labels and predictions.

use std::path::Path;

use crate::dataio::Dataset;
use crate::error::Result;
use crate::model::{embed, forward_heads, ModelParams};
use crate::diffcore::Tensor;

/// One CSV row per sample: id, split, labels, predicted class, then `z`.
pub fn export_embeddings(params: &ModelParams, ds: &Dataset, path: &Path) -> Result<usize> {
    let images: Vec<_> = ds.images.iter().collect();
    let dim = params.backbone().embedding_dim;
    let z = if images.is_empty() { Vec::new() } else { embed(params, &images)? };
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        let mut header: Vec<String> = ["image", "split", "overall", "illum", "clarity", "contrast", "pred"].map(String::from).to_vec();
        header.extend((0..dim).map(|k| format!("z{k}")));
        w.write_record(&header)?;
        for (row, zi) in ds.rows.iter().zip(&z) {
            let (probs, _) = forward_heads(params, &Tensor::new(&[1, dim], zi.clone())?, false)?;
            let pred = argmax(probs.data());
            let opt = |v: Option<u8>| v.map(|x| x.to_string()).unwrap_or_default();
            let mut rec = vec![row.image.to_string_lossy().into_owned(), row.split.to_string(), opt(row.overall)];
            rec.extend(row.details.iter().map(|d| opt(*d)));
            rec.push(pred.to_string());
            rec.extend(zi.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(z.len())
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
