use std::path::Path;

use halluc_core::dataio::{resolve, FeatureFile};
use halluc_core::numkit::{Dictionary, GmmEm, GmmModel, KMeans, Matrix};
use halluc_core::{Error, Result};
use serde_json::json;

use crate::{CliResult, DictKind, FitDictArgs};

/// Stores centroids as a `K × D` feature file.
pub fn save_dictionary(path: &Path, dict: &Dictionary) -> Result<()> {
    FeatureFile::from_matrix(dict.centroids()).write(path)
}

pub fn load_dictionary(path: &Path) -> Result<Dictionary> {
    Dictionary::new(FeatureFile::read(path)?.to_matrix()?)
}

/// Stores a GMM as a `K × (1 + 2D)` feature file; row `k` is
/// `[w_k, μ_k, σ_k]`.
pub fn save_gmm(path: &Path, gmm: &GmmModel) -> Result<()> {
    let (k, d) = (gmm.components(), gmm.dim());
    let mut data = Vec::with_capacity(k * (1 + 2 * d));
    for c in 0..k {
        data.push(gmm.weights()[c]);
        data.extend_from_slice(gmm.means().row(c));
        data.extend_from_slice(gmm.stds().row(c));
    }
    FeatureFile::from_matrix(&Matrix::from_vec(k, 1 + 2 * d, data)?).write(path)
}

pub fn load_gmm(path: &Path) -> Result<GmmModel> {
    let m = FeatureFile::read(path)?.to_matrix()?;
    if m.cols() < 3 || m.cols() % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "GMM file needs 1 + 2D columns, got {}",
            m.cols()
        )));
    }
    let d = (m.cols() - 1) / 2;
    let rows = 0..m.rows();
    let weights = rows.clone().map(|r| m.row(r)[0]).collect();
    let means = Matrix::from_rows(&rows.clone().map(|r| &m.row(r)[1..=d]).collect::<Vec<_>>())?;
    let stds = Matrix::from_rows(&rows.map(|r| &m.row(r)[1 + d..]).collect::<Vec<_>>())?;
    GmmModel::new(weights, means, stds)
}

pub(crate) fn fit_dict(root: &Path, args: &FitDictArgs) -> CliResult<()> {
    let points = FeatureFile::read(&resolve(root, &args.descriptors.to_string_lossy()))?.to_matrix()?;
    let out = root.join(&args.out);
    let report = match args.kind {
        DictKind::Kmeans => {
            let fit = KMeans::default().fit(&points, args.k, args.seed)?;
            save_dictionary(&out, &fit.dictionary)?;
            json!({
                "kind": "kmeans",
                "k": args.k,
                "points": points.rows(),
                "dim": points.cols(),
                "objective": fit.objective,
                "iterations": fit.history.len(),
            })
        }
        DictKind::Gmm => {
            let fit = GmmEm::default().fit(&points, args.k, args.seed)?;
            save_gmm(&out, &fit.model)?;
            json!({
                "kind": "gmm",
                "k": args.k,
                "points": points.rows(),
                "dim": points.cols(),
                "log_likelihood": fit.model.log_likelihood(&points),
                "iterations": fit.history.len(),
                "reseeded": fit.reseeded,
            })
        }
    };
    println!("{report}");
    Ok(())
}
