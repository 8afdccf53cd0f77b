//! Rank templates, their tokenization, and prompt assembly.
//!
//! A task supplies one template string with a single `{slot}` and the ordered
//! list of rank labels. Each label is substituted into the slot, and the rank
//! tokens of every template are padded to a common length `n` so that the rank
//! embeddings form a rectangular `M × n × d_embed` array.

use std::collections::HashMap;
use std::fmt::Write as _;

use ndarray::{s, Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::gaussian;

/// Turns text into token ids.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<usize>;
    fn vocab_size(&self) -> usize;
    /// Id reserved for rank-span padding.
    fn pad_id(&self) -> usize;
}

const TOY_WORDS: &[&str] = &[
    "a", "an", "the", "of", "is", "at", "in", "on", "to", "and", "with", "for", "from", "by", "this", "that",
    "photo", "picture", "image", "portrait", "face", "person", "people", "man", "woman", "child", "years", "year",
    "old", "age", "aged", "estimation", "rank", "level", "score", "grade", "class", "decade", "decades", "taken",
    "historical", "color", "colour", "beauty", "beautiful", "attractive", "aesthetic", "quality", "rating",
    "group", "range", "between", "about", "around", "very", "more", "less", "most", "least", "low", "high",
    "medium", "young", "adult", "teen", "senior", "s",
];

const TOY_PUNCT: &[char] = &['.', ',', ':', ';', '!', '?', '\'', '"', '-', '(', ')', '/', '+', '%'];

/// Whitespace tokenizer with a small fixed vocabulary.
///
/// Known words map to one token. Unknown alphabetic runs fall back to one
/// token per letter, digit runs are split greedily into two-digit chunks.
#[derive(Debug, Clone)]
pub struct ToyTokenizer {
    index: HashMap<String, usize>,
    size: usize,
}

impl ToyTokenizer {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;

    pub fn new() -> Self {
        let mut entries: Vec<String> = vec!["<pad>".into(), "<unk>".into()];
        entries.extend(TOY_WORDS.iter().map(|w| w.to_string()));
        entries.extend(('a'..='z').map(|c| format!("#{c}")));
        entries.extend((0..10).map(|d| d.to_string()));
        entries.extend((0..100).map(|d| format!("{d:02}")));
        entries.extend(TOY_PUNCT.iter().map(|c| c.to_string()));
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.into_iter().enumerate() {
            index.entry(e).or_insert(i);
        }
        let size = index.values().max().map_or(0, |m| m + 1);
        ToyTokenizer { index, size }
    }

    fn id(&self, key: &str) -> usize {
        self.index.get(key).copied().unwrap_or(Self::UNK)
    }

    fn push_piece(&self, piece: &str, kind: CharKind, out: &mut Vec<usize>) {
        match kind {
            CharKind::Alpha => match self.index.get(piece) {
                Some(&id) => out.push(id),
                None => out.extend(piece.chars().map(|c| self.id(&format!("#{c}")))),
            },
            CharKind::Digit => {
                let bytes = piece.as_bytes();
                for chunk in bytes.chunks(2) {
                    out.push(self.id(std::str::from_utf8(chunk).expect("ascii digits")));
                }
            }
            CharKind::Other => out.extend(piece.chars().map(|c| self.id(&c.to_string()))),
        }
    }
}

impl Default for ToyTokenizer {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CharKind {
    Alpha,
    Digit,
    Other,
}

fn char_kind(c: char) -> CharKind {
    if c.is_ascii_digit() {
        CharKind::Digit
    } else if c.is_alphabetic() {
        CharKind::Alpha
    } else {
        CharKind::Other
    }
}

impl Tokenizer for ToyTokenizer {
    fn tokenize(&self, text: &str) -> Vec<usize> {
        let lower = text.to_lowercase();
        let mut out = Vec::new();
        for word in lower.split_whitespace() {
            let mut start = 0;
            let chars: Vec<(usize, char)> = word.char_indices().collect();
            while start < chars.len() {
                let kind = char_kind(chars[start].1);
                let mut end = start + 1;
                if kind != CharKind::Other {
                    while end < chars.len() && char_kind(chars[end].1) == kind {
                        end += 1;
                    }
                }
                let from = chars[start].0;
                let to = chars.get(end).map_or(word.len(), |c| c.0);
                self.push_piece(&word[from..to], kind, &mut out);
                start = end;
            }
        }
        out
    }

    fn vocab_size(&self) -> usize {
        self.size
    }

    fn pad_id(&self) -> usize {
        Self::PAD
    }
}

/// What a task contributes to prompt construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDescriptor {
    /// Template text with exactly one `{slot}`.
    pub template: String,
    /// Text substituted into the slot, one per rank.
    pub label_names: Vec<String>,
    /// Ordered rank values, one per label.
    pub rank_labels: Vec<i64>,
}

impl TaskDescriptor {
    /// Labels are the decimal rendering of each rank value.
    pub fn numeric(template: impl Into<String>, ranks: impl IntoIterator<Item = i64>) -> Self {
        let rank_labels: Vec<i64> = ranks.into_iter().collect();
        TaskDescriptor {
            template: template.into(),
            label_names: rank_labels.iter().map(|r| r.to_string()).collect(),
            rank_labels,
        }
    }

    pub fn num_ranks(&self) -> usize {
        self.rank_labels.len()
    }
}

/// `M` tokenized templates sharing one rank-token span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTemplateSet {
    pub templates: Vec<String>,
    pub rank_labels: Vec<i64>,
    pub token_ids: Vec<Vec<usize>>,
    /// Start index of the rank tokens inside each tokenized template.
    pub span_start: usize,
    /// Number of (padded) rank tokens, `n`.
    pub span_len: usize,
}

/// Locates the single `{...}` slot, returning its byte range.
fn find_slot(template: &str) -> Result<(usize, usize)> {
    let mut slots = Vec::new();
    let mut open = None;
    for (i, c) in template.char_indices() {
        match c {
            '{' => open = Some(i),
            '}' => {
                if let Some(o) = open.take() {
                    slots.push((o, i + 1));
                }
            }
            _ => {}
        }
    }
    match slots.as_slice() {
        [one] => Ok(*one),
        _ => Err(Error::MissingSlot { found: slots.len() }),
    }
}

pub fn build_templates(task: &TaskDescriptor, tokenizer: &dyn Tokenizer, n_max: usize) -> Result<RankTemplateSet> {
    let m = task.rank_labels.len();
    if m < 2 {
        return Err(Error::TooFewRanks { min: 2, got: m });
    }
    if task.label_names.len() != m {
        return Err(Error::Invalid(format!("{} label names for {} ranks", task.label_names.len(), m)));
    }
    if let Some(i) = task.rank_labels.windows(2).position(|w| w[0] >= w[1]) {
        return Err(Error::UnorderedRanks { index: i + 1 });
    }
    let (lo, hi) = find_slot(&task.template)?;
    let prefix = &task.template[..lo];
    let suffix = &task.template[hi..];
    let prefix_ids = tokenizer.tokenize(prefix);
    let suffix_ids = tokenizer.tokenize(suffix);

    let label_ids: Vec<Vec<usize>> = task.label_names.iter().map(|l| tokenizer.tokenize(l)).collect();
    for (label, ids) in task.label_names.iter().zip(&label_ids) {
        if ids.len() > n_max {
            return Err(Error::RankTooLong { label: label.clone(), len: ids.len(), n_max });
        }
    }
    let n = label_ids.iter().map(Vec::len).max().unwrap_or(0);
    if n == 0 {
        return Err(Error::Invalid("rank labels produce no tokens".into()));
    }

    let mut templates = Vec::with_capacity(m);
    let mut token_ids = Vec::with_capacity(m);
    for (label, ids) in task.label_names.iter().zip(&label_ids) {
        templates.push(format!("{prefix}{label}{suffix}"));
        let mut seq = prefix_ids.clone();
        seq.extend(ids);
        seq.extend(std::iter::repeat_n(tokenizer.pad_id(), n - ids.len()));
        seq.extend(&suffix_ids);
        token_ids.push(seq);
    }
    Ok(RankTemplateSet {
        templates,
        rank_labels: task.rank_labels.clone(),
        token_ids,
        span_start: prefix_ids.len(),
        span_len: n,
    })
}

impl RankTemplateSet {
    pub fn num_ranks(&self) -> usize {
        self.templates.len()
    }

    /// Tokenized length `T` shared by every template.
    pub fn seq_len(&self) -> usize {
        self.token_ids.first().map_or(0, Vec::len)
    }

    pub fn span(&self) -> std::ops::Range<usize> {
        self.span_start..self.span_start + self.span_len
    }

    /// Plain-text listing: a header line followed by one template per line.
    pub fn to_listing(&self) -> String {
        let mut out = format!(
            "# M={} n={} span={}..{} T={}\n",
            self.num_ranks(),
            self.span_len,
            self.span_start,
            self.span_start + self.span_len,
            self.seq_len()
        );
        for t in &self.templates {
            let _ = writeln!(out, "{t}");
        }
        out
    }
}

/// Word-embedding lookup table, `vocab × d_embed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub weights: Array2<f64>,
}

impl EmbeddingTable {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, vocab: usize, d_embed: usize, std: f64) -> Self {
        EmbeddingTable { weights: gaussian(rng, vocab, d_embed, std) }
    }

    pub fn d_embed(&self) -> usize {
        self.weights.ncols()
    }

    fn check(&self, id: usize) -> Result<()> {
        if id >= self.weights.nrows() {
            return Err(Error::OutOfVocab { id, vocab: self.weights.nrows() });
        }
        Ok(())
    }

    /// Embeds every template in full, `M × T × d_embed`.
    pub fn embed_templates(&self, set: &RankTemplateSet) -> Result<Array3<f64>> {
        let (m, t, d) = (set.num_ranks(), set.seq_len(), self.d_embed());
        let mut out = Array3::zeros((m, t, d));
        for (i, ids) in set.token_ids.iter().enumerate() {
            for (k, &id) in ids.iter().enumerate() {
                self.check(id)?;
                out.slice_mut(s![i, k, ..]).assign(&self.weights.row(id));
            }
        }
        Ok(out)
    }
}

/// Rank-token embeddings `R`, shape `M × n × d_embed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTokenEmbeddings {
    pub values: Array3<f64>,
}

impl RankTokenEmbeddings {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.values.dim()
    }
}

pub fn embed_rank_tokens(set: &RankTemplateSet, table: &EmbeddingTable) -> Result<RankTokenEmbeddings> {
    let (m, n, d) = (set.num_ranks(), set.span_len, table.d_embed());
    let mut values = Array3::zeros((m, n, d));
    for (i, ids) in set.token_ids.iter().enumerate() {
        for (k, &id) in ids[set.span()].iter().enumerate() {
            table.check(id)?;
            values.slice_mut(s![i, k, ..]).assign(&table.weights.row(id));
        }
    }
    Ok(RankTokenEmbeddings { values })
}

/// Learnable context vectors shared by every rank prompt, `L × d_embed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPrompts {
    pub values: Array2<f64>,
}

impl ContextPrompts {
    pub const INIT_STD: f64 = 0.02;

    pub fn random<R: Rng + ?Sized>(rng: &mut R, count: usize, d_embed: usize) -> Self {
        ContextPrompts { values: gaussian(rng, count, d_embed, Self::INIT_STD) }
    }

    pub fn empty(d_embed: usize) -> Self {
        ContextPrompts { values: Array2::zeros((0, d_embed)) }
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }
}

/// A template set together with its frozen full-length token embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptScaffold {
    pub set: RankTemplateSet,
    pub embedded: Array3<f64>,
}

impl PromptScaffold {
    pub fn new(set: RankTemplateSet, table: &EmbeddingTable) -> Result<Self> {
        let embedded = table.embed_templates(&set)?;
        Ok(PromptScaffold { set, embedded })
    }

    /// The untouched rank-token slice of the scaffold.
    pub fn rank_tokens(&self) -> RankTokenEmbeddings {
        RankTokenEmbeddings { values: self.embedded.slice(s![.., self.set.span(), ..]).to_owned() }
    }

    pub fn d_embed(&self) -> usize {
        self.embedded.dim().2
    }
}

/// Full per-rank prompt sequences, `M × (L + T) × d_embed`: the shared
/// context first, then the template with its rank span replaced by `refined`.
pub fn assemble_prompts(
    context: &ContextPrompts,
    refined: &RankTokenEmbeddings,
    scaffold: &PromptScaffold,
) -> Result<Array3<f64>> {
    let (m, t, d) = scaffold.embedded.dim();
    if context.values.ncols() != d {
        return Err(Error::Shape(format!("context d_embed {} != {}", context.values.ncols(), d)));
    }
    if refined.shape() != (m, scaffold.set.span_len, d) {
        return Err(Error::Shape(format!(
            "refined rank tokens {:?} != ({m}, {}, {d})",
            refined.shape(),
            scaffold.set.span_len
        )));
    }
    let l = context.len();
    let mut out = Array3::zeros((m, l + t, d));
    let span = scaffold.set.span();
    for i in 0..m {
        out.slice_mut(s![i, ..l, ..]).assign(&context.values);
        out.slice_mut(s![i, l.., ..]).assign(&scaffold.embedded.slice(s![i, .., ..]));
        out.slice_mut(s![i, l + span.start..l + span.end, ..]).assign(&refined.values.slice(s![i, .., ..]));
    }
    Ok(out)
}

/// Splits a gradient over assembled prompts into `(d context, d refined)`.
/// Context receives the sum over ranks since it is shared.
pub fn assemble_prompts_backward(
    grad: &Array3<f64>,
    context_len: usize,
    set: &RankTemplateSet,
) -> (Array2<f64>, Array3<f64>) {
    let span = set.span();
    let dctx = grad.slice(s![.., ..context_len, ..]).sum_axis(ndarray::Axis(0));
    let drank = grad
        .slice(s![.., context_len + span.start..context_len + span.end, ..])
        .to_owned();
    (dctx, drank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table(vocab: usize, d: usize) -> EmbeddingTable {
        EmbeddingTable::random(&mut ChaCha8Rng::seed_from_u64(1), vocab, d, 1.0)
    }

    #[test]
    fn age_templates_cover_zero_to_hundred() {
        let tok = ToyTokenizer::new();
        let task = TaskDescriptor::numeric("A photo of {age} years old face.", 0..=100);
        let set = build_templates(&task, &tok, 8).unwrap();
        assert_eq!(set.num_ranks(), 101);
        assert_eq!(set.templates[30], "A photo of 30 years old face.");
        // "100" splits into "10" + "0", every other age is one token.
        assert_eq!(set.span_len, 2);
        assert_eq!(set.span_start, 3);
        assert!(set.token_ids.iter().all(|t| t.len() == set.seq_len()));
        assert_eq!(set.token_ids[5][4], ToyTokenizer::PAD);
    }

    #[test]
    fn minimal_two_rank_task() {
        let tok = ToyTokenizer::new();
        let task = TaskDescriptor::numeric("rank {r}", [1, 2]);
        let set = build_templates(&task, &tok, 4).unwrap();
        assert_eq!(set.num_ranks(), 2);
        assert_eq!(set.token_ids[0].len(), set.token_ids[1].len());
        assert_eq!((set.span_start, set.span_len), (1, 1));
    }

    #[test]
    fn decade_labels_share_one_span() {
        let tok = ToyTokenizer::new();
        let names: Vec<String> = (1930..=1970).step_by(10).map(|y| format!("{y}s")).collect();
        let task = TaskDescriptor {
            template: "A photo taken in the {decade}.".into(),
            label_names: names,
            rank_labels: (1930..=1970).step_by(10).collect(),
        };
        let set = build_templates(&task, &tok, 8).unwrap();
        // "1930s" -> "19" "30" "s"
        assert_eq!(tok.tokenize("1930s").len(), 3);
        assert_eq!(set.span_len, 3);
        assert_eq!(set.span_start, 5);
        assert_eq!(set.num_ranks(), 5);
    }

    #[test]
    fn slot_errors() {
        let tok = ToyTokenizer::new();
        let none = TaskDescriptor::numeric("no slot here", [1, 2]);
        assert!(matches!(build_templates(&none, &tok, 4), Err(Error::MissingSlot { found: 0 })));
        let two = TaskDescriptor::numeric("{a} and {b}", [1, 2]);
        assert!(matches!(build_templates(&two, &tok, 4), Err(Error::MissingSlot { found: 2 })));
        let long = TaskDescriptor::numeric("age {a}", [1, 123456]);
        assert!(matches!(build_templates(&long, &tok, 2), Err(Error::RankTooLong { len: 3, .. })));
        let one = TaskDescriptor::numeric("age {a}", [1]);
        assert!(matches!(build_templates(&one, &tok, 2), Err(Error::TooFewRanks { .. })));
    }

    #[test]
    fn build_is_deterministic() {
        let tok = ToyTokenizer::new();
        let task = TaskDescriptor::numeric("The age of the face is {age}.", 10..40);
        assert_eq!(build_templates(&task, &tok, 4).unwrap(), build_templates(&task, &tok, 4).unwrap());
    }

    #[test]
    fn direct_lookup_and_padding() {
        let tok = ToyTokenizer::new();
        let tab = table(tok.vocab_size(), 4);
        let task = TaskDescriptor::numeric("rank {r}", [7, 100]);
        let set = build_templates(&task, &tok, 4).unwrap();
        let r = embed_rank_tokens(&set, &tab).unwrap();
        assert_eq!(r.shape(), (2, 2, 4));
        let seven = tok.tokenize("7")[0];
        assert_eq!(r.values.slice(s![0, 0, ..]), tab.weights.row(seven));
        assert_eq!(r.values.slice(s![0, 1, ..]), tab.weights.row(ToyTokenizer::PAD));
    }

    #[test]
    fn out_of_vocab_is_reported() {
        let tok = ToyTokenizer::new();
        let tab = table(3, 4);
        let set = build_templates(&TaskDescriptor::numeric("rank {r}", [1, 2]), &tok, 4).unwrap();
        assert!(matches!(embed_rank_tokens(&set, &tab), Err(Error::OutOfVocab { .. })));
    }

    #[test]
    fn age_embedding_shape() {
        let tok = ToyTokenizer::new();
        let tab = table(tok.vocab_size(), 8);
        let set = build_templates(&TaskDescriptor::numeric("A photo of {age} years old face.", 0..=100), &tok, 8).unwrap();
        assert_eq!(embed_rank_tokens(&set, &tab).unwrap().shape(), (101, set.span_len, 8));
    }

    #[test]
    fn identity_splice_equals_plain_embedding() {
        let tok = ToyTokenizer::new();
        let tab = table(tok.vocab_size(), 6);
        let set = build_templates(&TaskDescriptor::numeric("A photo of {age} years old face.", 0..=100), &tok, 8).unwrap();
        let scaffold = PromptScaffold::new(set, &tab).unwrap();
        let out = assemble_prompts(&ContextPrompts::empty(6), &scaffold.rank_tokens(), &scaffold).unwrap();
        assert_eq!(out, scaffold.embedded);
    }

    #[test]
    fn context_is_prepended_to_every_rank() {
        let tok = ToyTokenizer::new();
        let tab = table(tok.vocab_size(), 6);
        let set = build_templates(&TaskDescriptor::numeric("rank {r}", 1..=4), &tok, 4).unwrap();
        let t = set.seq_len();
        let scaffold = PromptScaffold::new(set, &tab).unwrap();
        let ctx = ContextPrompts::random(&mut ChaCha8Rng::seed_from_u64(2), 5, 6);
        let out = assemble_prompts(&ctx, &scaffold.rank_tokens(), &scaffold).unwrap();
        assert_eq!(out.dim(), (4, 5 + t, 6));
        for i in 0..4 {
            assert_eq!(out.slice(s![i, ..5, ..]), ctx.values);
        }
        let bad = ContextPrompts::empty(5);
        assert!(matches!(assemble_prompts(&bad, &scaffold.rank_tokens(), &scaffold), Err(Error::Shape(_))));
    }

    #[test]
    fn listing_header() {
        let tok = ToyTokenizer::new();
        let set = build_templates(&TaskDescriptor::numeric("rank {r}", [1, 2]), &tok, 4).unwrap();
        assert_eq!(set.to_listing(), "# M=2 n=1 span=1..2 T=2\nrank 1\nrank 2\n");
    }
}
