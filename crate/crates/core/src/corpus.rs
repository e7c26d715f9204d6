//! Multilingual corpora, byte-level tokenization and segment sampling.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MbsError, Result};
use crate::rng;

pub const VOCAB_SIZE: usize = 256;

/// Byte-level token id.
pub type Token = u8;

/// Bytes map one-to-one onto token ids.
pub fn tokenize(text: &[u8]) -> Vec<Token> {
    text.to_vec()
}

pub fn detokenize(tokens: &[Token]) -> Vec<u8> {
    tokens.to_vec()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageEntry {
    pub lang_id: String,
    pub byte_size: u64,
    pub train_path: Option<PathBuf>,
    pub eval_path: Option<PathBuf>,
}

impl LanguageEntry {
    pub fn new(lang_id: impl Into<String>, byte_size: u64) -> Self {
        Self {
            lang_id: lang_id.into(),
            byte_size,
            train_path: None,
            eval_path: None,
        }
    }
}

/// Languages in declaration order with their training-set byte sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageManifest {
    entries: Vec<LanguageEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    languages: Vec<ManifestFileEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFileEntry {
    id: String,
    #[serde(default)]
    bytes: Option<serde_json::Number>,
    #[serde(default)]
    train: Option<PathBuf>,
    #[serde(default)]
    eval: Option<PathBuf>,
}

impl LanguageManifest {
    pub fn new(entries: Vec<LanguageEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.lang_id.is_empty() {
                return Err(MbsError::InvalidArgument("empty language id".into()));
            }
            if !seen.insert(e.lang_id.as_str()) {
                return Err(MbsError::DuplicateLanguage(e.lang_id.clone()));
            }
        }
        if !entries.iter().any(|e| e.byte_size > 0) {
            return Err(MbsError::InvalidArgument(
                "manifest needs at least one language with a positive byte size".into(),
            ));
        }
        Ok(Self { entries })
    }

    /// Reads `{"languages":[{"id":…, "bytes":…, "train":…, "eval":…}]}`.
    ///
    /// Relative corpus paths resolve against the manifest's directory. When
    /// `bytes` is absent the size of the `train` file is used.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| MbsError::io(path, e))?;
        let file: ManifestFile = serde_json::from_str(&text).map_err(|e| MbsError::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve =
            |p: Option<PathBuf>| p.map(|p| if p.is_absolute() { p } else { base.join(p) });

        let mut entries = Vec::with_capacity(file.languages.len());
        for raw in file.languages {
            let train_path = resolve(raw.train);
            let eval_path = resolve(raw.eval);
            let byte_size = match raw.bytes {
                Some(n) => parse_byte_size(&n).map_err(|reason| MbsError::Manifest {
                    path: path.to_path_buf(),
                    reason: format!("language \"{}\": {reason}", raw.id),
                })?,
                None => {
                    let train = train_path.as_ref().ok_or_else(|| MbsError::Manifest {
                        path: path.to_path_buf(),
                        reason: format!("language \"{}\" has neither bytes nor train", raw.id),
                    })?;
                    fs::metadata(train)
                        .map_err(|e| MbsError::io(train, e))?
                        .len()
                }
            };
            entries.push(LanguageEntry {
                lang_id: raw.id,
                byte_size,
                train_path,
                eval_path,
            });
        }
        Self::new(entries).map_err(|e| match e {
            MbsError::InvalidArgument(reason) => MbsError::Manifest {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }

    pub fn entries(&self) -> &[LanguageEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, lang: &str) -> Option<&LanguageEntry> {
        self.entries.iter().find(|e| e.lang_id == lang)
    }

    pub fn lang_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.lang_id.as_str())
    }

    pub fn total_bytes(&self) -> u128 {
        self.entries.iter().map(|e| u128::from(e.byte_size)).sum()
    }
}

fn parse_byte_size(n: &serde_json::Number) -> std::result::Result<u64, String> {
    if let Some(v) = n.as_u64() {
        return Ok(v);
    }
    if let Some(v) = n.as_i64() {
        return Err(format!("negative byte size {v}"));
    }
    let v = n
        .as_f64()
        .ok_or_else(|| format!("unreadable byte size {n}"))?;
    if v < 0.0 {
        Err(format!("negative byte size {v}"))
    } else if v.fract() != 0.0 || v > u64::MAX as f64 {
        Err(format!("byte size {v} is not a whole number"))
    } else {
        Ok(v as u64)
    }
}

/// Fixed-length token window tagged with its language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub lang_id: String,
    pub tokens: Vec<Token>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Train,
    Eval,
}

#[derive(Debug, Clone, Default)]
struct Texts {
    train: Vec<Token>,
    eval: Vec<Token>,
}

/// Tokenized train/eval text for every manifest language. Read-only once built.
#[derive(Debug, Clone)]
pub struct Corpus {
    manifest: LanguageManifest,
    texts: BTreeMap<String, Texts>,
}

impl Corpus {
    /// Loads every `train`/`eval` file named in the manifest.
    pub fn load(manifest: LanguageManifest) -> Result<Self> {
        let mut texts = BTreeMap::new();
        for e in manifest.entries() {
            let read = |p: &Option<PathBuf>| -> Result<Vec<Token>> {
                match p {
                    Some(p) => Ok(tokenize(&fs::read(p).map_err(|err| MbsError::io(p, err))?)),
                    None => Ok(Vec::new()),
                }
            };
            let t = Texts {
                train: read(&e.train_path)?,
                eval: read(&e.eval_path)?,
            };
            texts.insert(e.lang_id.clone(), t);
        }
        Ok(Self { manifest, texts })
    }

    /// Builds a corpus from in-memory `(lang, train, eval)` texts; byte sizes
    /// come from the train text lengths.
    pub fn from_texts<I, S>(texts: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<u8>, Vec<u8>)>,
        S: Into<String>,
    {
        let mut entries = Vec::new();
        let mut map = BTreeMap::new();
        for (lang, train, eval) in texts {
            let lang = lang.into();
            entries.push(LanguageEntry::new(lang.clone(), train.len() as u64));
            map.insert(
                lang,
                Texts {
                    train: tokenize(&train),
                    eval: tokenize(&eval),
                },
            );
        }
        Ok(Self {
            manifest: LanguageManifest::new(entries)?,
            texts: map,
        })
    }

    pub fn manifest(&self) -> &LanguageManifest {
        &self.manifest
    }

    pub fn tokens(&self, lang: &str, source: Source) -> Result<&[Token]> {
        let t = self
            .texts
            .get(lang)
            .ok_or_else(|| MbsError::UnknownLanguage(lang.to_string()))?;
        Ok(match source {
            Source::Train => &t.train,
            Source::Eval => &t.eval,
        })
    }

    /// `count` windows of `seg_len` tokens at uniformly random start offsets
    /// (with replacement), using the stream keyed by `(seed, lang)`.
    pub fn draw_segments(
        &self,
        lang: &str,
        source: Source,
        seg_len: usize,
        count: usize,
        seed: u64,
    ) -> Result<Vec<Segment>> {
        if seg_len == 0 {
            return Err(MbsError::InvalidArgument(
                "segment length must be positive".into(),
            ));
        }
        let tokens = self.tokens(lang, source)?;
        if tokens.len() < seg_len {
            return Err(MbsError::CorpusTooShort {
                lang: lang.to_string(),
                available: tokens.len(),
                seg_len,
            });
        }
        let starts = tokens.len() - seg_len + 1;
        let mut rng = rng::keyed(seed, lang);
        Ok((0..count)
            .map(|_| {
                let s = rng::uniform_index(&mut rng, starts);
                Segment {
                    lang_id: lang.to_string(),
                    tokens: tokens[s..s + seg_len].to_vec(),
                }
            })
            .collect())
    }

    /// First 8 bytes (big-endian) of SHA-256 over every language id and its
    /// training tokens, in manifest order.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        for lang in self.manifest.lang_ids() {
            h.update((lang.len() as u64).to_le_bytes());
            h.update(lang.as_bytes());
            let train = self
                .texts
                .get(lang)
                .map(|t| t.train.as_slice())
                .unwrap_or(&[]);
            h.update((train.len() as u64).to_le_bytes());
            h.update(train);
        }
        let digest = h.finalize();
        u64::from_be_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
    }
}

/// Synthetic "languages": order-n Markov chains over a private alphabet.
pub mod synthetic {
    use std::collections::HashMap;

    use crate::rng;

    /// Random Markov source. Every context of `order` symbols has `branching`
    /// successors with random weights.
    #[derive(Debug, Clone)]
    pub struct MarkovLanguage {
        alphabet: Vec<u8>,
        order: usize,
        branching: usize,
        seed: u64,
    }

    impl MarkovLanguage {
        pub fn new(alphabet: &[u8], order: usize, branching: usize, seed: u64) -> Self {
            assert!(!alphabet.is_empty() && order >= 1 && branching >= 1);
            Self {
                alphabet: alphabet.to_vec(),
                order,
                branching: branching.min(alphabet.len()),
                seed,
            }
        }

        fn successors(&self, context: &[u8]) -> Vec<(u8, f64)> {
            let label: String = context.iter().map(|&b| format!("{b:02x}")).collect();
            let mut r = rng::keyed(self.seed, &label);
            let mut out: Vec<(u8, f64)> = Vec::with_capacity(self.branching);
            while out.len() < self.branching {
                let sym = self.alphabet[rng::uniform_index(&mut r, self.alphabet.len())];
                if out.iter().all(|&(s, _)| s != sym) {
                    out.push((sym, 0.2 + rng::unit_f64(&mut r)));
                }
            }
            out
        }

        /// `len` bytes sampled from the chain; `stream` selects an independent
        /// sample path (e.g. train vs eval text).
        pub fn generate(&self, len: usize, stream: u64) -> Vec<u8> {
            let mut table: HashMap<Vec<u8>, Vec<(u8, f64)>> = HashMap::new();
            let mut r = rng::keyed(self.seed ^ stream.rotate_left(17), "markov-walk");
            let mut out: Vec<u8> = (0..self.order)
                .map(|_| self.alphabet[rng::uniform_index(&mut r, self.alphabet.len())])
                .collect();
            while out.len() < len + self.order {
                let ctx = out[out.len() - self.order..].to_vec();
                let succ = table.entry(ctx).or_insert_with_key(|c| self.successors(c));
                let total: f64 = succ.iter().map(|s| s.1).sum();
                let mut u = rng::unit_f64(&mut r) * total;
                let mut pick = succ[succ.len() - 1].0;
                for &(s, w) in succ.iter() {
                    if u < w {
                        pick = s;
                        break;
                    }
                    u -= w;
                }
                out.push(pick);
            }
            out.split_off(self.order)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_is_byte_identity() {
        assert_eq!(tokenize(b"abc"), vec![97, 98, 99]);
        assert!(tokenize(b"").is_empty());
        assert_eq!(tokenize("é".as_bytes()), vec![195, 169]);
    }

    fn toy() -> Corpus {
        Corpus::from_texts([("A", b"abcdefghij".to_vec(), b"abcdefghij".to_vec())]).unwrap()
    }

    #[test]
    fn draw_matches_reference_stream() {
        // Offsets computed by an independent SplitMix64 + xoshiro256** script.
        let segs = toy().draw_segments("A", Source::Train, 4, 2, 7).unwrap();
        assert_eq!(segs[0].tokens, vec![99, 100, 101, 102]);
        assert_eq!(segs[1].tokens, vec![97, 98, 99, 100]);
        assert!(segs.iter().all(|s| s.lang_id == "A"));
    }

    #[test]
    fn draw_edge_cases() {
        let c = toy();
        assert!(c
            .draw_segments("A", Source::Train, 4, 0, 1)
            .unwrap()
            .is_empty());
        assert!(matches!(
            c.draw_segments("A", Source::Train, 11, 1, 1),
            Err(MbsError::CorpusTooShort { .. })
        ));
        assert!(c
            .draw_segments("A", Source::Train, 11, 1, 1)
            .unwrap_err()
            .to_string()
            .contains("corpus too short"));
        assert!(matches!(
            c.draw_segments("zz", Source::Train, 2, 1, 1),
            Err(MbsError::UnknownLanguage(_))
        ));
        assert_eq!(
            c.draw_segments("A", Source::Eval, 10, 3, 1).unwrap()[2]
                .tokens
                .len(),
            10
        );
    }

    #[test]
    fn manifest_validation() {
        let dup = LanguageManifest::new(vec![
            LanguageEntry::new("fr", 1),
            LanguageEntry::new("fr", 2),
        ]);
        match dup {
            Err(MbsError::DuplicateLanguage(id)) => assert_eq!(id, "fr"),
            other => panic!("expected duplicate error, got {other:?}"),
        }
        assert!(LanguageManifest::new(vec![LanguageEntry::new("a", 0)]).is_err());
        assert!(LanguageManifest::new(vec![LanguageEntry::new("", 3)]).is_err());
    }

    #[test]
    fn manifest_load_formats() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"0123456789").unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(
            &p,
            r#"{"languages":[{"id":"A","bytes":9000,"train":"a.txt","eval":"a.txt"},
                              {"id":"B","bytes":1000},
                              {"id":"C","train":"a.txt"},
                              {"id":"D","bytes":4.85E+11}]}"#,
        )
        .unwrap();
        let m = LanguageManifest::load(&p).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m.get("A").unwrap().byte_size, 9000);
        assert_eq!(m.get("C").unwrap().byte_size, 10);
        assert_eq!(m.get("D").unwrap().byte_size, 485_000_000_000);
        assert_eq!(
            m.get("A").unwrap().train_path.as_deref(),
            Some(dir.path().join("a.txt").as_path())
        );

        std::fs::write(&p, r#"{"languages":[{"id":"A","bytes":-5}]}"#).unwrap();
        let err = LanguageManifest::load(&p).unwrap_err().to_string();
        assert!(err.contains("\"A\"") && err.contains("negative"), "{err}");

        std::fs::write(
            &p,
            r#"{"languages":[{"id":"fr","bytes":1},{"id":"fr","bytes":2}]}"#,
        )
        .unwrap();
        assert!(LanguageManifest::load(&p)
            .unwrap_err()
            .to_string()
            .contains("fr"));

        assert!(matches!(
            LanguageManifest::load(dir.path().join("missing.json")),
            Err(MbsError::Io { .. })
        ));
    }

    #[test]
    fn markov_language_is_deterministic_and_closed() {
        let lang = synthetic::MarkovLanguage::new(b"abcdefgh", 2, 3, 11);
        let a = lang.generate(500, 0);
        assert_eq!(a, lang.generate(500, 0));
        assert_ne!(a, lang.generate(500, 1));
        assert_eq!(a.len(), 500);
        assert!(a.iter().all(|b| b"abcdefgh".contains(b)));
    }

    proptest::proptest! {
        #[test]
        fn detokenize_inverts_tokenize(bytes in proptest::collection::vec(proptest::num::u8::ANY, 0..64)) {
            proptest::prop_assert_eq!(detokenize(&tokenize(&bytes)), bytes);
        }

        #[test]
        fn draws_are_deterministic_and_well_formed(seed in 0u64..1000, seg_len in 1usize..10, count in 0usize..6) {
            let c = toy();
            let a = c.draw_segments("A", Source::Train, seg_len, count, seed).unwrap();
            let b = c.draw_segments("A", Source::Train, seg_len, count, seed).unwrap();
            proptest::prop_assert_eq!(&a, &b);
            proptest::prop_assert_eq!(a.len(), count);
            for s in &a {
                proptest::prop_assert_eq!(s.len(), seg_len);
            }
        }
    }
}
