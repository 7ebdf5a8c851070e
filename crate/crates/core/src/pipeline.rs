//! Stage orchestration over a run directory.
//!
//! Each stage reads its inputs from `run/<stage>/<artifact>` files written by
//! earlier stages and writes its own, so a full `pipeline` run and a sequence
//! of single-stage invocations produce identical bytes.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::rc::Rc;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::RunDir;
use crate::collab::{
    build_matrix, confidence_scores, expand_query, factorize, parse_label_file, pseudo_classes, FactorModel,
    FactorParams, InteractionMatrix, MultiQuerySet,
};
use crate::config::{EmbedMode, PipelineConfig, PoolMode};
use crate::corpus::{parse_manifest, Corpus, Split, SplitAssignment};
use crate::descriptors::codec::indexed_ids;
use crate::descriptors::{describe_image_file, fit_pca_at_most, FeatureMatrix, PcaModel};
use crate::embed::{train_embedding, EmbedParams, EmbeddingModel};
use crate::error::{Error, Result};
use crate::eval::{EvalReport, Judged};
use crate::fisher::{average_pool, fit_gmm, pool_and_normalize, GmmModel, GmmParams};
use crate::math::Matrix;
use crate::retrieval::{aqe_requery, compact_multiquery, rank, Database, RankedList};
use crate::topic::{build_codebook, candidate_topics, fit_lda, related_users, LdaParams, PhotoTopics, TopicModel, TopicSet, VocabCodebook, VocabMode};

pub const SINGLE: &str = "single";
pub const AQE: &str = "aqe";
pub const MULTI_FV: &str = "multi-fv";
pub const MULTI_AVERAGE: &str = "multi-average";
pub const METHODS: [&str; 4] = [SINGLE, AQE, MULTI_FV, MULTI_AVERAGE];

/// Stages in execution order.
pub const STAGES: [&str; 11] = [
    "ingest", "describe", "lda", "factorize", "expand", "pseudo", "embed", "gmm", "encode", "retrieve", "evaluate",
];

pub fn multi_method(pool: PoolMode) -> &'static str {
    match pool {
        PoolMode::Fisher => MULTI_FV,
        PoolMode::Average => MULTI_AVERAGE,
    }
}

/// Columns of the report for a pooling mode.
pub fn report_methods(pool: PoolMode) -> Vec<String> {
    vec![SINGLE.into(), AQE.into(), multi_method(pool).into()]
}

// ---------------------------------------------------------------- ingest

/// Stratified split plus the query list. Given queries (and their junk
/// duplicates) are moved into the test split; otherwise queries are sampled
/// per landmark from the test split.
pub fn plan_queries(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    queries: Option<&[String]>,
) -> Result<(SplitAssignment, Vec<String>)> {
    let mut split = crate::corpus::split_corpus(corpus, cfg.split, cfg.stage_seed("split"))?;
    let chosen = match queries {
        Some(list) => {
            for q in list {
                if corpus.photo(q).is_none() {
                    return Err(Error::invalid(format!("query `{q}` is not in the corpus")));
                }
            }
            let mut pinned: Vec<&str> = list.iter().map(String::as_str).collect();
            for q in list {
                pinned.extend(corpus.junk_of(q));
            }
            split.pin(pinned, Split::Test);
            list.to_vec()
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed("queries"));
            let mut chosen = Vec::new();
            for landmark in corpus.landmarks() {
                let mut pool: Vec<&str> = split
                    .ids(corpus, Split::Test)
                    .into_iter()
                    .filter(|id| {
                        let p = corpus.photo(id).expect("split ids come from the corpus");
                        &p.landmark_id == landmark && p.is_junk_of.is_none()
                    })
                    .collect();
                pool.shuffle(&mut rng);
                // leave at least one relevant photo in the database
                let take = cfg.queries_per_landmark.min(pool.len().saturating_sub(1));
                chosen.extend(pool[..take].iter().map(|s| s.to_string()));
            }
            chosen
        }
    };
    if chosen.is_empty() {
        return Err(Error::invalid("no queries available; the test split is too small"));
    }
    Ok((split, chosen))
}

pub fn run_ingest(run: &RunDir, cfg: &PipelineConfig, corpus: &Corpus, queries: Option<&[String]>) -> Result<()> {
    let (split, chosen) = plan_queries(cfg, corpus, queries)?;
    run.write_text("ingest", "corpus.tsv", "manifest", &corpus.to_manifest())?;
    run.write_text("ingest", "split.tsv", "split", &split.to_text(corpus))?;
    run.write_text("ingest", "queries.txt", "queries", &crate::synth::queries_text(&chosen))?;
    info!("ingest: {} photos, {} queries", corpus.len(), chosen.len());
    Ok(())
}

pub fn load_corpus(run: &RunDir) -> Result<Corpus> {
    let text = run.read_text("ingest", "corpus.tsv", "manifest")?;
    parse_manifest(&text, &run.path("ingest", "corpus.tsv").display().to_string())
}

pub fn load_split(run: &RunDir) -> Result<SplitAssignment> {
    let text = run.read_text("ingest", "split.tsv", "split")?;
    SplitAssignment::parse(&text, &run.path("ingest", "split.tsv").display().to_string())
}

pub fn load_queries(run: &RunDir) -> Result<Vec<String>> {
    Ok(crate::synth::parse_queries(&run.read_text("ingest", "queries.txt", "queries")?))
}

// ---------------------------------------------------------------- describe

/// Descriptors for every corpus photo, in corpus order.
pub fn align_descriptors(corpus: &Corpus, features: &FeatureMatrix) -> Result<FeatureMatrix> {
    let ids: Vec<String> = corpus.photos().iter().map(|p| p.photo_id.clone()).collect();
    let index = features.index();
    if let Some(missing) = ids.iter().find(|id| !index.contains_key(id.as_str())) {
        return Err(Error::invalid(format!("no descriptor for photo `{missing}`")));
    }
    FeatureMatrix::from_matrix(ids.clone(), &features.select(&ids)?)
}

/// Baseline descriptors computed from each photo's image file, resolved
/// relative to `image_root`.
pub fn describe_images(corpus: &Corpus, image_root: &Path) -> Result<FeatureMatrix> {
    let mut rows = Vec::with_capacity(corpus.len());
    for p in corpus.photos() {
        let rel = p
            .image_path
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("photo `{}` has no image path", p.photo_id)))?;
        rows.push(crate::descriptors::DescriptorVector {
            photo_id: p.photo_id.clone(),
            values: describe_image_file(image_root.join(rel))?,
        });
    }
    FeatureMatrix::from_descriptors(&rows)
}

pub fn run_describe(run: &RunDir, features: &FeatureMatrix) -> Result<()> {
    let corpus = load_corpus(run)?;
    let aligned = align_descriptors(&corpus, features)?;
    run.write_features("describe", "descriptors.mqlf", "descriptors", &aligned)?;
    info!("describe: {} x {}", aligned.len(), aligned.dim());
    Ok(())
}

fn load_descriptors(run: &RunDir) -> Result<FeatureMatrix> {
    run.read_features("describe", "descriptors.mqlf", "descriptors")
}

// ---------------------------------------------------------------- lda

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicStage {
    pub codebook: Option<VocabCodebook>,
    pub tokens: BTreeMap<String, usize>,
    pub model: TopicModel,
}

impl TopicStage {
    pub fn photo_topics(&self) -> PhotoTopics {
        PhotoTopics::from_map(
            self.tokens
                .iter()
                .map(|(id, &t)| (id.clone(), self.model.dominant_topic(t)))
                .collect(),
        )
    }
}

/// Codebook fit on the training split, tokens for every photo, LDA over
/// all albums.
pub fn fit_topics(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    split: &SplitAssignment,
    descriptors: &FeatureMatrix,
) -> Result<TopicStage> {
    let aligned = align_descriptors(corpus, descriptors)?.to_matrix();
    let (codebook, tokens, vocab) = match cfg.vocab_mode {
        VocabMode::Codebook => {
            let train: Vec<usize> = corpus
                .photos()
                .iter()
                .enumerate()
                .filter(|(_, p)| split.get(&p.photo_id) == Some(Split::Train))
                .map(|(i, _)| i)
                .collect();
            let cb = build_codebook(&aligned.select_rows(&train), cfg.vocab, cfg.codebook_iters, cfg.stage_seed("codebook"))?;
            let mut tokens = BTreeMap::new();
            for (i, p) in corpus.photos().iter().enumerate() {
                tokens.insert(p.photo_id.clone(), cb.tokenize(aligned.row(i))?);
            }
            let v = cb.size();
            (Some(cb), tokens, v)
        }
        VocabMode::PhotoId => {
            let tokens = corpus.photos().iter().enumerate().map(|(i, p)| (p.photo_id.clone(), i)).collect();
            (None, tokens, corpus.len())
        }
    };
    let docs: Vec<Vec<usize>> = corpus
        .albums(cfg.album_mode)
        .iter()
        .map(|a| a.photo_ids.iter().map(|id| tokens[id]).collect())
        .collect();
    let params = LdaParams {
        topics: cfg.topics,
        alpha: cfg.alpha(),
        eta: cfg.eta,
        sweeps: cfg.sweeps,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        seed: cfg.stage_seed("lda"),
    };
    let model = fit_lda(&docs, vocab, &params)?;
    Ok(TopicStage { codebook, tokens, model })
}

pub fn run_lda(run: &RunDir, cfg: &PipelineConfig) -> Result<()> {
    let corpus = load_corpus(run)?;
    let split = load_split(run)?;
    let stage = fit_topics(cfg, &corpus, &split, &load_descriptors(run)?)?;
    let mut tokens = String::new();
    for p in corpus.photos() {
        writeln!(tokens, "{}\t{}", p.photo_id, stage.tokens[&p.photo_id]).unwrap();
    }
    run.write_text("lda", "tokens.tsv", "tokens", &tokens)?;
    if let Some(cb) = &stage.codebook {
        let words = FeatureMatrix::from_matrix(indexed_ids("w", cb.size()), &cb.centroids)?;
        run.write_features("lda", "codebook.mqlf", "codebook", &words)?;
    }
    let albums: Vec<String> = corpus.albums(cfg.album_mode).iter().map(|a| a.album_id.clone()).collect();
    run.write_bytes("lda", "topic-model.bin", "topic-model", &stage.model.to_bytes(&albums)?)?;
    info!("lda: Z={} V={}", stage.model.topics, stage.model.vocab);
    Ok(())
}

fn load_topics(run: &RunDir) -> Result<TopicStage> {
    let (model, _) = TopicModel::from_bytes(&run.read_bytes("lda", "topic-model.bin", "topic-model")?)?;
    let codebook = if run.exists("lda", "codebook.mqlf") {
        let words = run.read_features("lda", "codebook.mqlf", "codebook")?;
        Some(VocabCodebook { centroids: words.to_matrix() })
    } else {
        None
    };
    let mut tokens = BTreeMap::new();
    for (n, line) in run.read_text("lda", "tokens.tsv", "tokens")?.lines().enumerate() {
        let parsed = line
            .split_once('\t')
            .and_then(|(id, t)| Some((id.to_owned(), t.parse::<usize>().ok()?)));
        let (id, t) = parsed.ok_or_else(|| Error::format(format!("tokens line {}: expected `photo_id<TAB>token`", n + 1)))?;
        if t >= model.vocab {
            return Err(Error::format(format!("token {t} outside vocabulary of size {}", model.vocab)));
        }
        tokens.insert(id, t);
    }
    Ok(TopicStage { codebook, tokens, model })
}

// ---------------------------------------------------------------- factorize

fn factor_params(cfg: &PipelineConfig, stage: &str) -> FactorParams {
    FactorParams {
        latent: cfg.latent,
        mf_lambda: cfg.mf_lambda,
        lr: cfg.mf_lr,
        epochs: cfg.mf_epochs,
        negative_ratio: cfg.negative_ratio,
        seed: cfg.stage_seed(stage),
    }
}

/// Factorization of every user against the training photos; its photo
/// factors feed the pseudo-classes.
pub fn fit_global_factors(cfg: &PipelineConfig, corpus: &Corpus, split: &SplitAssignment) -> Result<FactorModel> {
    let train: Vec<&crate::corpus::PhotoRecord> = corpus
        .photos()
        .iter()
        .filter(|p| split.get(&p.photo_id) == Some(Split::Train))
        .collect();
    let photos: Vec<String> = train.iter().map(|p| p.photo_id.clone()).collect();
    let users: Vec<String> = train
        .iter()
        .map(|p| p.user_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let uploads = train.iter().map(|p| (p.user_id.as_str(), p.photo_id.as_str()));
    let m = InteractionMatrix::from_uploads(users, photos, uploads)?;
    factorize(&m, &factor_params(cfg, "factorize"))
}

pub fn run_factorize(run: &RunDir, cfg: &PipelineConfig) -> Result<()> {
    let corpus = load_corpus(run)?;
    let split = load_split(run)?;
    let model = fit_global_factors(cfg, &corpus, &split)?;
    info!(
        "factorize: {} users x {} photos, objective {:.4} -> {:.4}",
        model.users.len(),
        model.photos.len(),
        model.trace.first().copied().unwrap_or(f64::NAN),
        model.trace.last().copied().unwrap_or(f64::NAN)
    );
    run.write_json("factorize", "model.json", "factor-model", &model)?;
    Ok(())
}

// ---------------------------------------------------------------- expand

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    pub query: String,
    pub user: String,
    pub topics: TopicSet,
    pub community: usize,
    pub matrix_photos: usize,
    pub set: MultiQuerySet,
}

/// Topic detection, community discovery and collaborative expansion for
/// each query. Identical (topic set, community) pairs share one
/// factorization.
pub fn expand_queries(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    topics: &TopicStage,
    queries: &[String],
) -> Result<Vec<Expansion>> {
    let photo_topics = topics.photo_topics();
    let params = factor_params(cfg, "expand");
    let mut cache: HashMap<(Vec<usize>, BTreeSet<String>), Rc<FactorModel>> = HashMap::new();
    let mut out = Vec::with_capacity(queries.len());
    let mut fallbacks = 0;
    for q in queries {
        let photo = corpus
            .photo(q)
            .ok_or_else(|| Error::invalid(format!("query `{q}` is not in the corpus")))?;
        let token = *topics
            .tokens
            .get(q)
            .ok_or_else(|| Error::invalid(format!("query `{q}` has no token")))?;
        let set = candidate_topics(&topics.model, q, token, cfg.lambda)?;
        if set.fallback {
            debug!("query {q}: no topic reaches lambda={}, using the most probable topic", cfg.lambda);
            fallbacks += 1;
        }
        let community = related_users(corpus, &photo_topics, &set, &photo.user_id)?;
        let key = (set.topics.clone(), community.clone());
        let model = match cache.get(&key) {
            Some(m) => Rc::clone(m),
            None => {
                let m = build_matrix(corpus, &community, &photo_topics, &set)?;
                let model = Rc::new(factorize(&m, &params)?);
                cache.insert(key, Rc::clone(&model));
                model
            }
        };
        let scores = confidence_scores(&model, &photo.user_id)?;
        let expanded = expand_query(&model.photos, &scores, cfg.k, q)?;
        if expanded.short {
            warn!("query {q}: only {} expansion candidates (K={})", expanded.expanded.len(), cfg.k);
        }
        out.push(Expansion {
            query: q.clone(),
            user: photo.user_id.clone(),
            topics: set,
            community: community.len(),
            matrix_photos: model.photos.len(),
            set: expanded,
        });
    }
    if fallbacks > 0 {
        warn!("{fallbacks} of {} queries had no topic reaching lambda={}; used the most probable topic", queries.len(), cfg.lambda);
    }
    info!("expand: {} queries, {} factorizations", queries.len(), cache.len());
    Ok(out)
}

pub fn run_expand(run: &RunDir, cfg: &PipelineConfig) -> Result<()> {
    let corpus = load_corpus(run)?;
    let queries = load_queries(run)?;
    let expansions = expand_queries(cfg, &corpus, &load_topics(run)?, &queries)?;
    run.write_json("expand", "multiquery.json", "multiquery", &expansions)?;
    Ok(())
}

fn load_expansions(run: &RunDir) -> Result<Vec<Expansion>> {
    run.read_json("expand", "multiquery.json", "multiquery")
}

// ---------------------------------------------------------------- pseudo

pub fn run_pseudo(run: &RunDir, cfg: &PipelineConfig) -> Result<()> {
    let model: FactorModel = run.read_json("factorize", "model.json", "factor-model")?;
    let assignment = pseudo_classes(&model, cfg.classes, cfg.stage_seed("pseudo"))?;
    run.write_text("pseudo", "labels.tsv", "pseudo-labels", &assignment.to_label_file())?;
    info!("pseudo: {} photos into {} classes", assignment.photo_ids.len(), assignment.num_classes);
    Ok(())
}

// ---------------------------------------------------------------- embed

/// Trains the pseudo-class network (or passes descriptors through) and
/// embeds every photo.
pub fn embed_all(
    cfg: &PipelineConfig,
    descriptors: &FeatureMatrix,
    labels: &[(String, usize)],
) -> Result<(Option<EmbeddingModel>, FeatureMatrix)> {
    if cfg.embed_mode == EmbedMode::Passthrough {
        return Ok((None, descriptors.clone()));
    }
    let ids: Vec<String> = labels.iter().map(|(id, _)| id.clone()).collect();
    let x = descriptors.select(&ids)?;
    let y: Vec<usize> = labels.iter().map(|&(_, c)| c).collect();
    let params = EmbedParams {
        hidden: cfg.hidden,
        epochs: cfg.embed_epochs,
        lr: cfg.embed_lr,
        batch: cfg.batch,
        seed: cfg.stage_seed("embed"),
    };
    let (model, report) = train_embedding(&x, &y, cfg.classes, &params)?;
    info!(
        "embed: loss {:.4} -> {:.4}, train accuracy {:.3}",
        report.loss_trace[0],
        report.loss_trace.last().copied().unwrap_or(f64::NAN),
        report.train_accuracy
    );
    let all = descriptors.to_matrix();
    let mut rows = Vec::with_capacity(all.rows());
    for r in all.iter_rows() {
        rows.push(model.embed(r)?);
    }
    let embedded = FeatureMatrix::from_matrix(descriptors.ids().to_vec(), &Matrix::from_rows(&rows))?;
    Ok((Some(model), embedded))
}

pub fn run_embed(run: &RunDir, cfg: &PipelineConfig) -> Result<()> {
    let descriptors = load_descriptors(run)?;
    let labels = if cfg.embed_mode == EmbedMode::Train {
        let text = run.read_text("pseudo", "labels.tsv", "pseudo-labels")?;
        parse_label_file(&text, &run.path("pseudo", "labels.tsv").display().to_string())?
    } else {
        Vec::new()
    };
    let (model, embedded) = embed_all(cfg, &descriptors, &labels)?;
    if let Some(model) = model {
        run.write_json("embed", "model.json", "embedding-model", &model)?;
    }
    run.write_features("embed", "embedded.mqlf", "embedded", &embedded)?;
    Ok(())
}

fn load_embedded(run: &RunDir) -> Result<FeatureMatrix> {
    run.read_features("embed", "embedded.mqlf", "embedded")
}

// ---------------------------------------------------------------- gmm

pub fn fit_vocabulary(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    split: &SplitAssignment,
    embedded: &FeatureMatrix,
) -> Result<(PcaModel, GmmModel)> {
    let train: Vec<String> = split.ids(corpus, Split::Train).into_iter().map(str::to_owned).collect();
    let x = embedded.select(&train)?;
    let pca = fit_pca_at_most(&x, cfg.pca_dim)?;
    if pca.output_dim() < cfg.pca_dim {
        warn!("gmm: embedding rank only supports {} PCA components", pca.output_dim());
    }
    let projected = pca.project_all(&x)?;
    let params = GmmParams {
        components: cfg.gmm_components,
        max_iters: cfg.gmm_iters,
        tol: cfg.gmm_tol,
        seed: cfg.stage_seed("gmm"),
    };
    let fit = fit_gmm(&projected, &params)?;
    info!(
        "gmm: G={} D={} after {} EM iterations",
        fit.model.components(),
        fit.model.dim(),
        fit.log_likelihood_trace.len()
    );
    Ok((pca, fit.model))
}

pub fn run_gmm(run: &RunDir, cfg: &PipelineConfig) -> Result<()> {
    let corpus = load_corpus(run)?;
    let split = load_split(run)?;
    let (pca, gmm) = fit_vocabulary(cfg, &corpus, &split, &load_embedded(run)?)?;
    run.write_json("gmm", "pca.json", "pca", &pca)?;
    run.write_bytes("gmm", "gmm.bin", "gmm", &gmm.to_bytes()?)?;
    Ok(())
}

// ---------------------------------------------------------------- encode

/// Test-split photos minus the query set, in corpus order.
pub fn database_ids<'a>(corpus: &Corpus, split: &SplitAssignment, queries: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let held_out: HashSet<&str> = queries.into_iter().collect();
    split
        .ids(corpus, Split::Test)
        .into_iter()
        .filter(|id| !held_out.contains(id))
        .map(str::to_owned)
        .collect()
}

/// Query and database representations for every method.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub database_fv: FeatureMatrix,
    pub database_average: FeatureMatrix,
    pub queries_single: FeatureMatrix,
    pub queries_multi_fv: FeatureMatrix,
    pub queries_multi_average: FeatureMatrix,
    /// Query → compacted expansion photos.
    pub compacted: Vec<(String, Vec<String>)>,
}

#[allow(clippy::too_many_arguments)]
pub fn encode_all(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    split: &SplitAssignment,
    embedded: &FeatureMatrix,
    pca: &PcaModel,
    gmm: &GmmModel,
    expansions: &[Expansion],
) -> Result<Encoded> {
    let index = embedded.index();
    let project = |id: &str| -> Result<Vec<f64>> {
        let i = *index
            .get(id)
            .ok_or_else(|| Error::invalid(format!("photo `{id}` has no embedding")))?;
        pca.project(&embedded.row_f64(i))
    };

    let db_ids = database_ids(corpus, split, expansions.iter().map(|e| e.query.as_str()));
    let mut db_fv = Vec::with_capacity(db_ids.len());
    let mut db_avg = Vec::with_capacity(db_ids.len());
    for id in &db_ids {
        let x = project(id)?;
        db_fv.push(pool_and_normalize(gmm, &[&x])?.values);
        db_avg.push(x);
    }

    let mut q_ids = Vec::with_capacity(expansions.len());
    let (mut single, mut multi_fv, mut multi_avg, mut compacted) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for e in expansions {
        let q = project(&e.query)?;
        let candidates: Vec<(String, Vec<f64>)> = e
            .set
            .expanded
            .iter()
            .map(|id| Ok((id.clone(), project(id)?)))
            .collect::<Result<_>>()?;
        let kept = if candidates.is_empty() {
            Vec::new()
        } else {
            compact_multiquery(&q, &candidates, cfg.s)?
        };
        let by_id: HashMap<&str, &Vec<f64>> = candidates.iter().map(|(id, v)| (id.as_str(), v)).collect();
        let mut pooled: Vec<&[f64]> = vec![&q];
        pooled.extend(kept.iter().map(|id| by_id[id.as_str()].as_slice()));

        single.push(pool_and_normalize(gmm, &[&q])?.values);
        multi_fv.push(pool_and_normalize(gmm, &pooled)?.values);
        multi_avg.push(average_pool(&pooled)?);
        q_ids.push(e.query.clone());
        compacted.push((e.query.clone(), kept));
    }
    let fm = |ids: &[String], rows: &[Vec<f64>]| -> Result<FeatureMatrix> {
        if rows.is_empty() {
            return FeatureMatrix::from_parts(Vec::new(), 0, Vec::new());
        }
        FeatureMatrix::from_matrix(ids.to_vec(), &Matrix::from_rows(rows))
    };
    Ok(Encoded {
        database_fv: fm(&db_ids, &db_fv)?,
        database_average: fm(&db_ids, &db_avg)?,
        queries_single: fm(&q_ids, &single)?,
        queries_multi_fv: fm(&q_ids, &multi_fv)?,
        queries_multi_average: fm(&q_ids, &multi_avg)?,
        compacted,
    })
}

pub fn run_encode(run: &RunDir, cfg: &PipelineConfig) -> Result<()> {
    let corpus = load_corpus(run)?;
    let split = load_split(run)?;
    let embedded = load_embedded(run)?;
    let pca: PcaModel = run.read_json("gmm", "pca.json", "pca")?;
    let gmm = GmmModel::from_bytes(&run.read_bytes("gmm", "gmm.bin", "gmm")?)?;
    let expansions = load_expansions(run)?;
    let enc = encode_all(cfg, &corpus, &split, &embedded, &pca, &gmm, &expansions)?;
    run.write_features("encode", "database-fv.mqlf", "database-fv", &enc.database_fv)?;
    run.write_features("encode", "database-average.mqlf", "database-average", &enc.database_average)?;
    run.write_features("encode", "queries-single.mqlf", "queries-single", &enc.queries_single)?;
    run.write_features("encode", "queries-multi-fv.mqlf", "queries-multi-fv", &enc.queries_multi_fv)?;
    run.write_features("encode", "queries-multi-average.mqlf", "queries-multi-average", &enc.queries_multi_average)?;
    let mut text = String::new();
    for (q, kept) in &enc.compacted {
        writeln!(text, "{q}\t{}", kept.join(",")).unwrap();
    }
    run.write_text("encode", "compacted.tsv", "compacted", &text)?;
    info!("encode: {} database photos, {} queries", enc.database_fv.len(), enc.queries_single.len());
    Ok(())
}

// ---------------------------------------------------------------- retrieve

fn database(f: &FeatureMatrix) -> Result<Database> {
    let rows = (0..f.len()).map(|i| f.row_f64(i)).collect();
    Database::new(f.ids().to_vec(), rows)
}

/// Ranked lists for every method. Lists are cut at `n` plus the query's
/// junk count so that `n` entries remain after junk removal.
pub fn retrieve_all(cfg: &PipelineConfig, corpus: &Corpus, enc: &Encoded) -> Result<BTreeMap<String, Vec<RankedList>>> {
    let db_fv = database(&enc.database_fv)?;
    let db_avg = database(&enc.database_average)?;
    let mut out: BTreeMap<String, Vec<RankedList>> = BTreeMap::new();
    for (i, q) in enc.queries_single.ids().iter().enumerate() {
        let cutoff = cfg.n + corpus.junk_of(q).len();
        let single = enc.queries_single.row_f64(i);
        let initial = rank(q, &single, &db_fv, cutoff)?;
        let depth = cfg.aqe_k.min(initial.entries.len());
        let aqe = if depth == 0 {
            initial.clone()
        } else {
            rank(q, &aqe_requery(&initial, &db_fv, &single, depth)?, &db_fv, cutoff)?
        };
        let multi_fv = rank(q, &enc.queries_multi_fv.row_f64(i), &db_fv, cutoff)?;
        let multi_avg = rank(q, &enc.queries_multi_average.row_f64(i), &db_avg, cutoff)?;
        out.entry(SINGLE.into()).or_default().push(initial);
        out.entry(AQE.into()).or_default().push(aqe);
        out.entry(MULTI_FV.into()).or_default().push(multi_fv);
        out.entry(MULTI_AVERAGE.into()).or_default().push(multi_avg);
    }
    Ok(out)
}

pub fn rankings_to_text(lists: &[RankedList]) -> String {
    let mut out = String::new();
    for l in lists {
        writeln!(out, "# query={}", l.query).unwrap();
        out.push_str(&l.to_text());
    }
    out
}

pub fn rankings_from_text(text: &str) -> Result<Vec<RankedList>> {
    let mut out = Vec::new();
    let mut current: Option<(String, String)> = None;
    for line in text.lines() {
        if let Some(q) = line.strip_prefix("# query=") {
            if let Some((query, body)) = current.take() {
                out.push(RankedList::parse_text(&query, &body)?);
            }
            current = Some((q.to_owned(), String::new()));
        } else if let Some((_, body)) = current.as_mut() {
            body.push_str(line);
            body.push('\n');
        } else if !line.trim().is_empty() {
            return Err(Error::format("ranked-list file must start with `# query=`"));
        }
    }
    if let Some((query, body)) = current {
        out.push(RankedList::parse_text(&query, &body)?);
    }
    Ok(out)
}

pub fn run_retrieve(run: &RunDir, cfg: &PipelineConfig) -> Result<()> {
    let enc = Encoded {
        database_fv: run.read_features("encode", "database-fv.mqlf", "database-fv")?,
        database_average: run.read_features("encode", "database-average.mqlf", "database-average")?,
        queries_single: run.read_features("encode", "queries-single.mqlf", "queries-single")?,
        queries_multi_fv: run.read_features("encode", "queries-multi-fv.mqlf", "queries-multi-fv")?,
        queries_multi_average: run.read_features("encode", "queries-multi-average.mqlf", "queries-multi-average")?,
        compacted: Vec::new(),
    };
    let corpus = load_corpus(run)?;
    for (method, lists) in retrieve_all(cfg, &corpus, &enc)? {
        run.write_text("retrieve", &format!("ranked-{method}.tsv"), "ranked", &rankings_to_text(&lists))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- evaluate

/// Scores ranked lists against the corpus labels. The database is the test
/// split minus the query set; relevant photos share the query's landmark,
/// minus its junk duplicates.
pub fn evaluate_rankings(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    split: &SplitAssignment,
    rankings: &BTreeMap<String, Vec<RankedList>>,
    methods: &[String],
) -> Result<EvalReport> {
    let queries: BTreeSet<&str> = rankings.values().flatten().map(|l| l.query.as_str()).collect();
    let database = database_ids(corpus, split, queries);
    let mut judged = Vec::new();
    for method in methods {
        let lists = rankings
            .get(method)
            .ok_or_else(|| Error::invalid(format!("no ranked lists for method `{method}`")))?;
        for list in lists {
            let q = corpus
                .photo(&list.query)
                .ok_or_else(|| Error::invalid(format!("query `{}` is not in the corpus", list.query)))?;
            let junk: HashSet<String> = corpus.junk_of(&q.photo_id).into_iter().map(str::to_owned).collect();
            let relevant: HashSet<String> = database
                .iter()
                .filter(|id| **id != q.photo_id && !junk.contains(id.as_str()))
                .filter(|id| corpus.photo(id).is_some_and(|p| p.landmark_id == q.landmark_id))
                .cloned()
                .collect();
            if relevant.is_empty() {
                warn!("query {} has no relevant database photo; skipped", q.photo_id);
                continue;
            }
            judged.push(Judged {
                query: q.photo_id.clone(),
                landmark: q.landmark_id.clone(),
                method: method.clone(),
                ranked: list.ids().into_iter().map(str::to_owned).collect(),
                relevant,
                junk,
            });
        }
    }
    EvalReport::build(&judged, methods, cfg.n, cfg.queries_per_landmark)
}

pub fn load_rankings(run: &RunDir, methods: &[String]) -> Result<BTreeMap<String, Vec<RankedList>>> {
    let mut out = BTreeMap::new();
    for m in methods {
        let text = run.read_text("retrieve", &format!("ranked-{m}.tsv"), "ranked")?;
        out.insert(m.clone(), rankings_from_text(&text)?);
    }
    Ok(out)
}

pub fn run_evaluate(run: &RunDir, cfg: &PipelineConfig) -> Result<EvalReport> {
    let corpus = load_corpus(run)?;
    let split = load_split(run)?;
    let methods = report_methods(cfg.pool);
    let rankings = load_rankings(run, &methods)?;
    let report = evaluate_rankings(cfg, &corpus, &split, &rankings, &methods)?;
    let pool = cfg.pool.name();
    run.write_text("evaluate", &format!("report-{pool}.txt"), "report", &report.to_table())?;
    run.write_text("evaluate", &format!("report-{pool}.json"), "report", &report.to_json())?;
    for m in &methods {
        if let Some(text) = report.pr_text(m) {
            run.write_text("evaluate", &format!("pr-{m}.tsv"), "pr-curve", &text)?;
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------- all

/// Where descriptors come from.
pub enum DescriptorSource<'a> {
    Features(&'a FeatureMatrix),
    Images(&'a Path),
}

/// Every stage in order.
pub fn run_pipeline(
    run: &RunDir,
    cfg: &PipelineConfig,
    corpus: &Corpus,
    descriptors: DescriptorSource<'_>,
    queries: Option<&[String]>,
) -> Result<EvalReport> {
    run_ingest(run, cfg, corpus, queries)?;
    let features = match descriptors {
        DescriptorSource::Features(f) => f.clone(),
        DescriptorSource::Images(root) => describe_images(corpus, root)?,
    };
    run_describe(run, &features)?;
    run_lda(run, cfg)?;
    run_factorize(run, cfg)?;
    run_expand(run, cfg)?;
    if cfg.embed_mode == EmbedMode::Train {
        run_pseudo(run, cfg)?;
    }
    run_embed(run, cfg)?;
    run_gmm(run, cfg)?;
    run_encode(run, cfg)?;
    run_retrieve(run, cfg)?;
    run_evaluate(run, cfg)
}
