//! The assembled inference chain: DTI-style image → LGE-style image →
//! high-resolution mask. The segmentor used during style training plays no
//! part here and its weights are never read.

use crate::checkpoint::CheckpointReader;
use crate::data::{GrayImage, Sample, SegMask};
use crate::error::{Error, Result};
use crate::eval::Segmenter;
use crate::params::ParamStore;
use crate::sseg::{SSegConfig, SSegNet};
use crate::style::{translate_image, ResnetGenerator, StyleConfig, G_ST_PREFIX};

pub const STYLE_MODULE: &str = "style";
pub const SSEG_MODULE: &str = "sseg";
pub const SSL_MODULE: &str = "ssl";

/// The DTI→LGE generator alone.
#[derive(Debug, Clone)]
pub struct Translator {
    generator: ResnetGenerator,
    params: ParamStore,
    resolution: usize,
}

impl Translator {
    /// Reads only the `g_st.` tensors of a style archive.
    pub fn load(reader: &CheckpointReader) -> Result<Self> {
        reader.manifest().verify(STYLE_MODULE, None, false)?;
        let cfg: StyleConfig = reader.manifest().config_as()?;
        let params = ParamStore::new(0);
        let generator = ResnetGenerator::new(cfg.ngf, cfg.n_blocks, params.var_builder().pp("g_st"))?;
        let expected = params.names_with_prefix(G_ST_PREFIX);
        let loaded = reader.restore_into(&params, G_ST_PREFIX)?;
        if loaded != expected {
            return Err(Error::KeyMismatch {
                keys: expected.into_iter().filter(|n| !loaded.contains(n)).collect(),
            });
        }
        Ok(Self {
            generator,
            params,
            resolution: cfg.resolution,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn translate(&self, img: &GrayImage) -> Result<GrayImage> {
        translate_image(&self.generator, &self.params, self.resolution, img)
    }
}

/// Loads a segmentation network from an `sseg` archive.
pub fn load_sseg(reader: &CheckpointReader) -> Result<SSegNet> {
    reader.manifest().verify(SSEG_MODULE, None, false)?;
    let cfg: SSegConfig = reader.manifest().config_as()?;
    let net = SSegNet::new(cfg, &ParamStore::new(0))?;
    let expected = net.params().names();
    let loaded = reader.restore_into(net.params(), "")?;
    if loaded != expected {
        let missing: Vec<String> = expected.into_iter().filter(|n| !loaded.contains(n)).collect();
        let extra: Vec<String> = loaded.into_iter().filter(|n| net.params().get(n).is_none()).collect();
        return Err(Error::KeyMismatch {
            keys: missing.into_iter().chain(extra).collect(),
        });
    }
    Ok(net)
}

/// Optional style translation followed by super-resolution segmentation.
#[derive(Debug, Clone)]
pub struct InferencePipeline {
    translator: Option<Translator>,
    sseg: SSegNet,
}

impl InferencePipeline {
    pub fn new(translator: Option<Translator>, sseg: SSegNet) -> Result<Self> {
        if let Some(t) = &translator {
            let r = sseg.config().encoder.input_resolution;
            if t.resolution() != r {
                return Err(Error::Checkpoint(format!(
                    "style model works at {}x{0}, segmentation model expects {r}x{r}",
                    t.resolution()
                )));
            }
        }
        Ok(Self { translator, sseg })
    }

    pub fn load(style: Option<&CheckpointReader>, sseg: &CheckpointReader) -> Result<Self> {
        let translator = style.map(Translator::load).transpose()?;
        Self::new(translator, load_sseg(sseg)?)
    }

    pub fn sseg(&self) -> &SSegNet {
        &self.sseg
    }

    pub fn translator(&self) -> Option<&Translator> {
        self.translator.as_ref()
    }

    /// Output side length for an input of side `input`.
    pub fn output_resolution(&self, input: usize) -> usize {
        input * self.sseg.config().scale
    }

    pub fn infer(&self, img: &GrayImage) -> Result<SegMask> {
        let r = self.sseg.config().encoder.input_resolution;
        if img.resolution() != (r, r) {
            return Err(Error::Dimension(format!(
                "pipeline expects {r}x{r} input, got {}x{}",
                img.height(),
                img.width()
            )));
        }
        match &self.translator {
            Some(t) => self.sseg.predict(&t.translate(img)?),
            None => self.sseg.predict(img),
        }
    }
}

impl Segmenter for InferencePipeline {
    fn segment(&self, sample: &Sample) -> Result<SegMask> {
        self.infer(&sample.image)
    }
}

impl Segmenter for SSegNet {
    fn segment(&self, sample: &Sample) -> Result<SegMask> {
        self.predict(&sample.image)
    }
}
