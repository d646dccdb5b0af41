//! Opening corpora either raw or through a preprocessed cache.

use std::path::Path;

use log::info;
use uniconv::config::Config;
use uniconv::corpus::{load_dataset, read_cache, read_manifest, write_cache, CacheManifest, Dataset, LoadReport, CACHE_VERSION};
use uniconv::delex::Delexicalizer;
use uniconv::model::UniConv;
use uniconv::vocab::{build_vocab, Vocab};
use uniconv::{Error, Result};

/// A dataset plus the vocabularies frozen by preprocessing, if any.
pub struct Prepared {
    pub ds: Dataset,
    pub vocabs: Option<(Vocab, Vocab)>,
}

impl Prepared {
    /// Fresh model for this data: cached vocabularies when present, otherwise
    /// built from the training split.
    pub fn model(&self, config: &Config) -> Result<UniConv> {
        match &self.vocabs {
            Some((src, res)) => UniConv::new(config.model.clone(), self.ds.ontology.clone(), src.clone(), res.clone(), config.train.seed),
            None => UniConv::for_dataset(config.model.clone(), &self.ds, config.train.min_count, config.train.seed),
        }
    }
}

fn is_cache(path: &Path) -> bool {
    path.join("manifest.json").is_file()
}

/// Opens a corpus directory or a cache written by [`preprocess`].
pub fn open(path: &Path) -> Result<Prepared> {
    if is_cache(path) {
        let (m, corpus) = read_cache(path)?;
        let delex = Delexicalizer::new(&m.kb, &[], &[]);
        return Ok(Prepared {
            ds: Dataset {
                ontology: m.ontology,
                kb: m.kb,
                delex,
                corpus,
                report: LoadReport::default(),
                fingerprint: m.fingerprint,
            },
            vocabs: Some((m.src_vocab, m.res_vocab)),
        });
    }
    if !path.is_dir() {
        return Err(Error::Data(format!("corpus directory {} not found", path.display())));
    }
    Ok(Prepared {
        ds: load_dataset(path)?,
        vocabs: None,
    })
}

/// Loads, delexicalises and indexes a corpus into `cache`. Returns `false`
/// without touching the cache when it already matches the input.
pub fn preprocess(corpus: &Path, cache: &Path, min_count: usize) -> Result<bool> {
    let ds = load_dataset(corpus)?;
    if ds.kb.tables.is_empty() {
        return Err(Error::Data(format!("no database tables found in {}", corpus.join("db").display())));
    }
    if is_cache(cache) {
        if let Ok(m) = read_manifest(cache) {
            if m.fingerprint == ds.fingerprint {
                info!("cache {} is up to date", cache.display());
                return Ok(false);
            }
        }
    }
    let tags: Vec<String> = ds.delex.tags().iter().cloned().collect();
    let (src_vocab, res_vocab) = build_vocab(&ds.corpus.train, &ds.ontology, &tags, min_count);
    let manifest = CacheManifest {
        version: CACHE_VERSION,
        fingerprint: ds.fingerprint.clone(),
        ontology: ds.ontology.clone(),
        src_vocab,
        res_vocab,
        kb: ds.kb.clone(),
        tags,
    };
    write_cache(cache, &manifest, &ds.corpus)?;
    info!(
        "cached {} train, {} val, {} test dialogues in {}",
        ds.corpus.train.len(),
        ds.corpus.val.len(),
        ds.corpus.test.len(),
        cache.display()
    );
    Ok(true)
}
