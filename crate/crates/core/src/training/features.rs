use crate::config::{ImacConfig, TokenizerConfig};
use crate::corpus::{tokenize, ArticleRecord, Normalizer, TextTokenizer, WhitespaceTokenizer, WordPieceTokenizer};
use crate::encoder::{read_checkpoint_config, EncoderKind};
use crate::fusion::FeatureBundle;
use crate::{Error, Result};

/// Everything fitted on the training split that turns an article into
/// model inputs: the tokenizer and the metadata normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Featurizer {
    pub tokenizer: TextTokenizer,
    pub normalizer: Normalizer,
    pub limits: TokenizerConfig,
}

impl Featurizer {
    /// Fits on `train`. The pretrained encoder brings its own vocabulary;
    /// the small encoder gets a whitespace vocabulary over the training text.
    pub fn fit(train: &[ArticleRecord], cfg: &ImacConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::domain("cannot fit features on an empty training split"));
        }
        let tokenizer = match cfg.model.encoder.kind {
            EncoderKind::SmallTrainable => {
                let texts = train
                    .iter()
                    .flat_map(|r| [r.title.as_str(), r.abstract_text.as_str()]);
                TextTokenizer::Whitespace(WhitespaceTokenizer::fit(
                    texts,
                    cfg.tokenizer.min_count,
                    cfg.tokenizer.max_vocab,
                ))
            }
            EncoderKind::PretrainedCheckpoint => {
                let dir = cfg
                    .model
                    .encoder
                    .checkpoint_dir
                    .as_deref()
                    .ok_or_else(|| Error::Config("pretrained_checkpoint encoder needs checkpoint_dir".into()))?;
                let ck = read_checkpoint_config(dir)?;
                TextTokenizer::WordPiece(WordPieceTokenizer::from_vocab_file(&dir.join("vocab.txt"), ck.lowercase)?)
            }
        };
        Ok(Self {
            tokenizer,
            normalizer: Normalizer::fit(train)?,
            limits: cfg.tokenizer,
        })
    }

    pub fn vocab_size(&self) -> usize {
        use crate::corpus::Tokenizer;
        self.tokenizer.vocab_size()
    }

    pub fn bundle(&self, record: &ArticleRecord) -> Result<FeatureBundle> {
        Ok(FeatureBundle {
            title: tokenize(&record.title, self.limits.title_max_len, &self.tokenizer)?,
            abstract_tokens: tokenize(&record.abstract_text, self.limits.abstract_max_len, &self.tokenizer)?,
            metadata: self.normalizer.transform_record(record),
        })
    }

    pub fn bundles<'a>(&self, records: impl IntoIterator<Item = &'a ArticleRecord>) -> Result<Vec<FeatureBundle>> {
        records.into_iter().map(|r| self.bundle(r)).collect()
    }
}
