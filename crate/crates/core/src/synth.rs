//! Synthetic multiview scenes.
//!
//! A scene is a person with six binary facial attributes. Its latent vector
//! holds one signed value per attribute (positive sign selects the first
//! term of the pair). View `v` renders the latent through its own linear map
//! `R_v = B + mix·N_v` after hiding the attributes that are not visible from
//! that view. Patch tokens are scaled copies of the rendering plus fixed
//! per-patch offsets, and every token carries Gaussian noise.
//!
//! With two or more views each attribute is visible in a random proper,
//! non-empty subset of the views, so no single view shows everything while
//! the union does.
//!
//! Renderers come from stream 0 of the seeded generator and scene `i` from
//! stream `i + 1`, so any scene can be regenerated on its own.

use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{read_jsonl, write_jsonl, AttributeRecord, AttributeTerm};
use crate::error::{Error, Result};
use crate::map::embedding::{read_views, write_views};
use crate::map::RawView;
use crate::tensor::Tensor;

/// The most views a scene can have.
pub const MAX_VIEWS: usize = 9;

/// Category, term for a positive latent, term for a negative latent, and
/// whether the noun takes an article.
pub const ATTRIBUTES: [(&str, &str, &str, bool); 6] = [
    ("hair", "blonde", "black", false),
    ("chin", "pointed", "rounded", true),
    ("nose", "big", "small", true),
    ("eyebrows", "bushy", "thin", false),
    ("face", "oval", "square", true),
    ("skin", "pale", "tanned", false),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub encoder_dim: usize,
    pub patches: usize,
    pub views: usize,
    /// Standard deviation of per-token noise.
    pub noise: f64,
    /// Weight of the view-specific part of each renderer.
    pub view_mix: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            encoder_dim: 16,
            patches: 4,
            views: 3,
            noise: 0.05,
            view_mix: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_VIEWS).contains(&self.views) {
            return Err(Error::Config(format!(
                "views must lie in 1..={MAX_VIEWS}, got {}",
                self.views
            )));
        }
        if self.encoder_dim < ATTRIBUTES.len() || self.patches == 0 {
            return Err(Error::Config(format!(
                "synthetic data needs encoder_dim >= {} and at least one patch",
                ATTRIBUTES.len()
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite() && self.view_mix.is_finite()) {
            return Err(Error::Config("noise must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Fixed linear renderers shared by every scene of one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Renderer {
    /// One `K × d_enc` map per view slot.
    pub views: Vec<Tensor>,
    pub patch_gain: Vec<f64>,
    /// `p × d_enc`.
    pub patch_offset: Tensor,
}

fn gaussian(rng: &mut impl Rng, std: f64, n: usize) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; n];
    }
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

impl Renderer {
    pub fn new(cfg: &SynthConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = ATTRIBUTES.len();
        let d = cfg.encoder_dim;
        let base = gaussian(&mut rng, 1.0, k * d);
        let views = (0..MAX_VIEWS)
            .map(|_| {
                let own = gaussian(&mut rng, cfg.view_mix, k * d);
                let data = base.iter().zip(own).map(|(b, o)| b + o).collect();
                Tensor::matrix(k, d, data).expect("renderer shape")
            })
            .collect();
        let patch_gain = (0..cfg.patches).map(|_| rng.random_range(0.5..1.5)).collect();
        let patch_offset =
            Tensor::matrix(cfg.patches, d, gaussian(&mut rng, 0.1, cfg.patches * d)).expect("offset shape");
        Renderer {
            views,
            patch_gain,
            patch_offset,
        }
    }

    /// Noise-free rendering `(z ⊙ mask) · R_v`.
    pub fn render(&self, view: usize, latent: &[f64], visible: &[bool]) -> Vec<f64> {
        let r = &self.views[view];
        let d = r.shape()[1];
        let mut out = vec![0.0; d];
        for (k, (&z, &vis)) in latent.iter().zip(visible).enumerate() {
            if vis {
                for (o, &w) in out.iter_mut().zip(r.row(k)) {
                    *o += z * w;
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub scene_id: String,
    pub latent: Vec<f64>,
    /// `visibility[v][k]`: attribute `k` can be seen in view `v`.
    pub visibility: Vec<Vec<bool>>,
    pub view_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub meta: SceneMeta,
    pub views: Vec<RawView>,
}

impl SyntheticScene {
    pub fn scene_id(&self) -> &str {
        &self.meta.scene_id
    }

    /// Term describing attribute `k` of this scene.
    pub fn term(&self, k: usize) -> &'static str {
        let (_, pos, neg, _) = ATTRIBUTES[k];
        if self.meta.latent[k] > 0.0 {
            pos
        } else {
            neg
        }
    }

    /// One single-attribute caption record per attribute.
    pub fn records(&self) -> Vec<AttributeRecord> {
        (0..ATTRIBUTES.len())
            .map(|k| {
                let (category, _, _, with_article) = ATTRIBUTES[k];
                let term = self.term(k);
                let article = match (with_article, term.starts_with(['a', 'e', 'i', 'o', 'u'])) {
                    (false, _) => "",
                    (true, true) => "an ",
                    (true, false) => "a ",
                };
                let lead = format!("This person has {article}");
                let caption = format!("{lead}{term} {category}.");
                let span = AttributeTerm {
                    term: term.to_string(),
                    category: category.to_string(),
                    start: lead.len(),
                    end: lead.len() + term.len(),
                };
                AttributeRecord::new(self.meta.scene_id.clone(), caption, vec![span]).expect("well-formed caption")
            })
            .collect()
    }
}

pub fn scene_id(index: usize) -> String {
    format!("scene-{index:05}")
}

/// Regenerates scene `index` of the dataset drawn with `seed`.
pub fn gen_scene(index: usize, cfg: &SynthConfig, renderer: &Renderer, seed: u64) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let k = ATTRIBUTES.len();
    let n = cfg.views;
    let latent: Vec<f64> = (0..k)
        .map(|_| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.random_range(0.5..1.5)
        })
        .collect();
    let mut visibility = vec![vec![n == 1; k]; n];
    if n > 1 {
        for attr in 0..k {
            let count = rng.random_range(1..n);
            for v in index::sample(&mut rng, n, count) {
                visibility[v][attr] = true;
            }
        }
    }
    let id = scene_id(index);
    let d = cfg.encoder_dim;
    let mut views = Vec::with_capacity(n);
    for (v, visible) in visibility.iter().enumerate() {
        let clean = renderer.render(v, &latent, visible);
        let cls: Vec<f64> = clean
            .iter()
            .zip(gaussian(&mut rng, cfg.noise, d))
            .map(|(c, e)| c + e)
            .collect();
        let mut patches = Vec::with_capacity(cfg.patches * d);
        for j in 0..cfg.patches {
            let gain = renderer.patch_gain[j];
            let noise = gaussian(&mut rng, cfg.noise, d);
            for c in 0..d {
                patches.push(gain * clean[c] + renderer.patch_offset.get(j, c) + noise[c]);
            }
        }
        let patches = Tensor::matrix(cfg.patches, d, patches).expect("patch shape");
        views.push(RawView::new(format!("{id}/v{v}"), cls, patches).expect("finite rendering"));
    }
    SyntheticScene {
        meta: SceneMeta {
            scene_id: id,
            latent,
            visibility,
            view_ids: views.iter().map(|v| v.view_id.clone()).collect(),
        },
        views,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub seed: u64,
    pub count: usize,
    pub config: SynthConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub info: DatasetInfo,
    pub scenes: Vec<SyntheticScene>,
}

/// `count` scenes drawn with `seed`; generation runs in parallel but the
/// result depends only on the arguments.
pub fn gen_synthetic(count: usize, cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::Config("scene count must be at least 1".into()));
    }
    let renderer = Renderer::new(cfg, seed);
    let scenes = (0..count)
        .into_par_iter()
        .map(|i| gen_scene(i, cfg, &renderer, seed))
        .collect();
    Ok(Dataset {
        info: DatasetInfo {
            seed,
            count,
            config: cfg.clone(),
        },
        scenes,
    })
}

pub const INFO_FILE: &str = "dataset.json";
pub const SCENES_FILE: &str = "scenes.jsonl";
pub const VIEWS_FILE: &str = "views.bin";
pub const RECORDS_FILE: &str = "records.jsonl";

impl Dataset {
    pub fn records(&self) -> Vec<AttributeRecord> {
        self.scenes.iter().flat_map(SyntheticScene::records).collect()
    }

    pub fn scene(&self, id: &str) -> Option<&SyntheticScene> {
        self.scenes
            .binary_search_by(|s| s.meta.scene_id.as_str().cmp(id))
            .ok()
            .map(|i| &self.scenes[i])
    }

    /// Writes `dataset.json`, `scenes.jsonl`, `views.bin` and `records.jsonl`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let info_path = dir.join(INFO_FILE);
        let info = serde_json::to_string_pretty(&self.info).map_err(|e| Error::format(&info_path, e))?;
        std::fs::write(&info_path, info).map_err(|e| Error::io(&info_path, e))?;
        let metas: Vec<&SceneMeta> = self.scenes.iter().map(|s| &s.meta).collect();
        write_jsonl(&dir.join(SCENES_FILE), &metas)?;
        let views: Vec<RawView> = self.scenes.iter().flat_map(|s| s.views.iter().cloned()).collect();
        write_views(&dir.join(VIEWS_FILE), &views)?;
        write_jsonl(&dir.join(RECORDS_FILE), &self.records())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let info_path = dir.join(INFO_FILE);
        let text = std::fs::read_to_string(&info_path).map_err(|e| Error::io(&info_path, e))?;
        let info: DatasetInfo = serde_json::from_str(&text).map_err(|e| Error::format(&info_path, e))?;
        let metas: Vec<SceneMeta> = read_jsonl(&dir.join(SCENES_FILE))?;
        let mut views = read_views(&dir.join(VIEWS_FILE))?.into_iter();
        let mut scenes = Vec::with_capacity(metas.len());
        for meta in metas {
            let vs: Vec<RawView> = views.by_ref().take(meta.view_ids.len()).collect();
            if vs.iter().map(|v| &v.view_id).ne(meta.view_ids.iter()) {
                return Err(Error::Data(format!(
                    "views on disk do not match scene {}",
                    meta.scene_id
                )));
            }
            scenes.push(SyntheticScene { meta, views: vs });
        }
        if views.next().is_some() {
            return Err(Error::Data("views file holds views that belong to no scene".into()));
        }
        if !scenes.windows(2).all(|w| w[0].meta.scene_id < w[1].meta.scene_id) {
            return Err(Error::Data("scenes must be sorted by id".into()));
        }
        Ok(Dataset { info, scenes })
    }
}
