//! Similarity-based replacement of missing sensor embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::robustness::{cca_fit, CcaProjection, ExemplarOptions, MaskVector, SharedSpace};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairProjection {
    /// Sensor whose embedding forms the query.
    pub from: usize,
    /// Sensor whose embedding is searched for.
    pub to: usize,
    pub projection: CcaProjection,
}

/// Training-sample embeddings per sensor, plus optional CCA projections for
/// every ordered sensor pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gallery {
    /// `embeddings[s]` is `[G × d]`.
    pub embeddings: Vec<Tensor>,
    pub ids: Vec<String>,
    pub pairs: Vec<PairProjection>,
    pub options: ExemplarOptions,
}

impl Gallery {
    /// Builds a gallery from training embeddings; with a CCA shared space a
    /// projection is fitted for every ordered pair of sensors.
    pub fn build(embeddings: Vec<Tensor>, ids: Vec<String>, options: ExemplarOptions) -> Result<Self> {
        let g = ids.len();
        if embeddings.iter().any(|e| e.ndim() != 2 || e.rows() != g) {
            return Err(Error::Dimension("gallery embeddings must be [G × d] per sensor".into()));
        }
        let (embeddings, ids) = match options.gallery_size {
            Some(cap) if cap < g && cap > 0 => {
                let pick: Vec<usize> = (0..cap).map(|i| i * g / cap).collect();
                (
                    embeddings.iter().map(|e| e.select_rows(&pick)).collect(),
                    pick.iter().map(|&i| ids[i].clone()).collect(),
                )
            }
            _ => (embeddings, ids),
        };
        let mut pairs = Vec::new();
        if let SharedSpace::Cca { components } = options.shared_space {
            for from in 0..embeddings.len() {
                for to in 0..embeddings.len() {
                    if from == to {
                        continue;
                    }
                    let d = embeddings[from].shape()[1].min(embeddings[to].shape()[1]);
                    let c = components.unwrap_or((d / 2).max(1)).min(d);
                    pairs.push(PairProjection {
                        from,
                        to,
                        projection: cca_fit(&embeddings[from], &embeddings[to], c)?,
                    });
                }
            }
        }
        Ok(Self {
            embeddings,
            ids,
            pairs,
            options,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn pair(&self, from: usize, to: usize) -> Option<&CcaProjection> {
        self.pairs
            .iter()
            .find(|p| p.from == from && p.to == to)
            .map(|p| &p.projection)
    }
}

/// Neighbor chosen for each missing sensor and the completed embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct ExemplarMatch {
    /// `Some(gallery index)` for every unavailable sensor.
    pub neighbors: Vec<Option<usize>>,
    pub embeddings: Vec<Vec<f64>>,
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn argmax_first(scores: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Completes the embeddings of unavailable sensors from the most similar
/// gallery sample. `query[s]` must hold the sample's embedding for every
/// available sensor; entries of unavailable sensors are ignored.
///
/// With the raw shared space a single neighbor maximizes the cosine
/// similarity of the concatenated available embeddings and supplies every
/// missing sensor. With CCA, each missing sensor `b` gets its own neighbor
/// maximizing the summed cosine similarity between each available `a`
/// projected by the `(a, b)` pair and the gallery's `b` embeddings projected
/// into the same space. Ties go to the lowest gallery index.
pub fn exemplar_lookup(query: &[Vec<f64>], availability: &MaskVector, gallery: &Gallery) -> Result<ExemplarMatch> {
    if gallery.is_empty() {
        return Err(Error::EmptyGallery);
    }
    if query.len() != gallery.embeddings.len() || availability.len() != query.len() {
        return Err(Error::Dimension(format!(
            "query has {} sensors, gallery {}",
            query.len(),
            gallery.embeddings.len()
        )));
    }
    let available: Vec<usize> = (0..query.len()).filter(|&s| availability.is_available(s)).collect();
    if available.is_empty() {
        return Err(Error::NoInformation("exemplar lookup with no available sensor".into()));
    }
    let mut neighbors = vec![None; query.len()];
    let mut embeddings = query.to_vec();
    let missing: Vec<usize> = (0..query.len()).filter(|&s| !availability.is_available(s)).collect();
    if missing.is_empty() {
        return Ok(ExemplarMatch { neighbors, embeddings });
    }

    match gallery.options.shared_space {
        SharedSpace::Raw => {
            let q: Vec<f64> = available.iter().flat_map(|&s| query[s].iter().copied()).collect();
            let best = argmax_first((0..gallery.len()).map(|i| {
                let g: Vec<f64> = available
                    .iter()
                    .flat_map(|&s| gallery.embeddings[s].row(i).iter().copied())
                    .collect();
                cosine(&q, &g)
            }))
            .expect("gallery is non-empty");
            for &s in &missing {
                neighbors[s] = Some(best);
            }
        }
        SharedSpace::Cca { .. } => {
            for &b in &missing {
                let projected: Vec<(Vec<f64>, &CcaProjection)> = available
                    .iter()
                    .map(|&a| {
                        let p = gallery
                            .pair(a, b)
                            .ok_or_else(|| Error::Config(format!("gallery has no CCA pair ({a}, {b})")))?;
                        Ok((p.project_a(&query[a]), p))
                    })
                    .collect::<Result<_>>()?;
                let best = argmax_first((0..gallery.len()).map(|i| {
                    projected
                        .iter()
                        .map(|(qa, p)| cosine(qa, &p.project_b(gallery.embeddings[b].row(i))))
                        .sum()
                }))
                .expect("gallery is non-empty");
                neighbors[b] = Some(best);
            }
        }
    }
    for &s in &missing {
        let i = neighbors[s].expect("set above");
        embeddings[s] = gallery.embeddings[s].row(i).to_vec();
    }
    Ok(ExemplarMatch { neighbors, embeddings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gallery() -> Gallery {
        Gallery::build(
            vec![
                Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap(),
                Tensor::from_rows(&[vec![10.0], vec![20.0], vec![30.0]]).unwrap(),
            ],
            vec!["a".into(), "b".into(), "c".into()],
            ExemplarOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn self_match_returns_entry() {
        let g = gallery();
        let m = exemplar_lookup(&[vec![0.0, 1.0], vec![0.0]], &MaskVector(vec![true, false]), &g).unwrap();
        assert_eq!(m.neighbors, vec![None, Some(1)]);
        assert_eq!(m.embeddings[1], vec![20.0]);
        assert_eq!(m.embeddings[0], vec![0.0, 1.0]);
    }

    #[test]
    fn nothing_available_is_an_error() {
        let g = gallery();
        let r = exemplar_lookup(&[vec![0.0, 1.0], vec![0.0]], &MaskVector(vec![false, false]), &g);
        assert!(matches!(r, Err(Error::NoInformation(_))));
    }

    #[test]
    fn empty_gallery_is_an_error() {
        let g = Gallery::build(
            vec![Tensor::zeros(&[0, 2]), Tensor::zeros(&[0, 1])],
            vec![],
            ExemplarOptions::default(),
        )
        .unwrap();
        let r = exemplar_lookup(&[vec![0.0, 1.0], vec![0.0]], &MaskVector(vec![true, false]), &g);
        assert!(matches!(r, Err(Error::EmptyGallery)));
    }

    #[test]
    fn gallery_size_caps_entries() {
        let g = Gallery::build(
            vec![Tensor::zeros(&[10, 2])],
            (0..10).map(|i| i.to_string()).collect(),
            ExemplarOptions {
                gallery_size: Some(4),
                shared_space: SharedSpace::Raw,
            },
        )
        .unwrap();
        assert_eq!(g.ids, vec!["0", "2", "5", "7"]);
    }
}
