use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{Network, WeightStore};
use crate::error::{Error, Result};
use crate::saliency::{compute_maps, Method, SaliencyConfig, SaliencyMap};
use crate::tensor::Tensor;

/// Maps of several methods over one ordered list of images, all from the same
/// weights.
#[derive(Clone, Debug, PartialEq)]
pub struct MapSet {
    pub image_ids: Vec<String>,
    pub height: usize,
    pub width: usize,
    pub model_fingerprint: u64,
    pub maps: BTreeMap<Method, Vec<Vec<f32>>>,
}

#[derive(Serialize, Deserialize)]
struct Index {
    image_ids: Vec<String>,
    methods: Vec<Method>,
    height: usize,
    width: usize,
    model_fingerprint: String,
}

impl MapSet {
    pub fn methods(&self) -> Vec<Method> {
        self.maps.keys().copied().collect()
    }

    pub fn method(&self, method: Method) -> Result<&[Vec<f32>]> {
        self.maps
            .get(&method)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::precondition(format!("no {method} maps were computed")))
    }

    /// The same maps restricted to `ids`, in that order.
    pub fn subset(&self, ids: &[String]) -> Result<MapSet> {
        let idx: Vec<usize> = ids
            .iter()
            .map(|id| {
                self.image_ids
                    .iter()
                    .position(|x| x == id)
                    .ok_or_else(|| Error::precondition(format!("no maps for image {id}")))
            })
            .collect::<Result<_>>()?;
        Ok(MapSet {
            image_ids: ids.to_vec(),
            height: self.height,
            width: self.width,
            model_fingerprint: self.model_fingerprint,
            maps: self
                .maps
                .iter()
                .map(|(&m, v)| (m, idx.iter().map(|&i| v[i].clone()).collect()))
                .collect(),
        })
    }

    /// Writes `<id>_<METHOD>.salf` and `.pgm` per map plus `index.json`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (&method, maps) in &self.maps {
            for (id, values) in self.image_ids.iter().zip(maps) {
                let map = SaliencyMap {
                    method,
                    image_id: id.clone(),
                    model_fingerprint: self.model_fingerprint,
                    height: self.height,
                    width: self.width,
                    values: values.clone(),
                };
                map.export(dir, &format!("{id}_{method}"))?;
            }
        }
        let index = Index {
            image_ids: self.image_ids.clone(),
            methods: self.methods(),
            height: self.height,
            width: self.width,
            model_fingerprint: format!("{:016x}", self.model_fingerprint),
        };
        fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index)? + "\n")?;
        Ok(())
    }

    pub fn import(dir: &Path) -> Result<MapSet> {
        let index_path = dir.join("index.json");
        let text = fs::read_to_string(&index_path).map_err(|e| Error::data(&index_path, e.to_string()))?;
        let index: Index = serde_json::from_str(&text).map_err(|e| Error::data(&index_path, e.to_string()))?;
        let model_fingerprint = u64::from_str_radix(&index.model_fingerprint, 16)
            .map_err(|e| Error::data(&index_path, format!("bad fingerprint: {e}")))?;
        let mut maps = BTreeMap::new();
        for &method in &index.methods {
            let mut per_image = Vec::with_capacity(index.image_ids.len());
            for id in &index.image_ids {
                let path = dir.join(format!("{id}_{method}.salf"));
                let bytes = fs::read(&path).map_err(|e| Error::data(&path, e.to_string()))?;
                let (h, w, values) = SaliencyMap::parse_salf(&bytes).map_err(|e| Error::data(&path, e.to_string()))?;
                if (h, w) != (index.height, index.width) {
                    return Err(Error::data(
                        &path,
                        format!("map is {h}x{w} but the index says {}x{}", index.height, index.width),
                    ));
                }
                per_image.push(values);
            }
            maps.insert(method, per_image);
        }
        Ok(MapSet {
            image_ids: index.image_ids,
            height: index.height,
            width: index.width,
            model_fingerprint,
            maps,
        })
    }
}

/// Computes `methods` for every image, in parallel across images.
pub fn compute_map_set(
    net: &Network,
    weights: &WeightStore,
    images: &[(String, Tensor)],
    methods: &[Method],
    cfg: &SaliencyConfig,
) -> Result<MapSet> {
    let shape = net.input_shape();
    let (height, width) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let methods: Vec<Method> = methods.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let per_image: Vec<Vec<SaliencyMap>> = images
        .par_iter()
        .map(|(id, image)| compute_maps(net, weights, image, id, &methods, cfg))
        .collect::<Result<_>>()?;
    let mut maps: BTreeMap<Method, Vec<Vec<f32>>> = methods.iter().map(|&m| (m, Vec::new())).collect();
    for image_maps in per_image {
        for map in image_maps {
            maps.get_mut(&map.method).expect("requested method").push(map.values);
        }
    }
    Ok(MapSet {
        image_ids: images.iter().map(|(id, _)| id.clone()).collect(),
        height,
        width,
        model_fingerprint: weights.fingerprint(),
        maps,
    })
}
