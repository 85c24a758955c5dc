#include "cohlab/architectures.hpp"

#include <algorithm>

namespace cohlab {

TaskHeadKind task_head_kind_from_string(const std::string& s) {
  if (s == "classify2") return TaskHeadKind::classify2;
  if (s == "classify3") return TaskHeadKind::classify3;
  if (s == "regress") return TaskHeadKind::regress;
  if (s == "rank_score") return TaskHeadKind::rank_score;
  if (s == "entail") return TaskHeadKind::entail;
  throw ContractError("unknown task head kind '" + s + "'");
}

std::string to_string(TaskHeadKind k) {
  switch (k) {
    case TaskHeadKind::classify2: return "classify2";
    case TaskHeadKind::classify3: return "classify3";
    case TaskHeadKind::regress: return "regress";
    case TaskHeadKind::rank_score: return "rank_score";
    case TaskHeadKind::entail: return "entail";
  }
  throw ContractError("invalid task head kind");
}

ArchKind arch_kind_from_string(const std::string& s) {
  if (s == "vanilla") return ArchKind::vanilla;
  if (s == "hierarchical" || s == "hier") return ArchKind::hierarchical;
  if (s == "mtl") return ArchKind::mtl;
  if (s == "fact_aware" || s == "fact") return ArchKind::fact_aware;
  throw ContractError("unknown architecture kind '" + s + "'");
}

std::string to_string(ArchKind k) {
  switch (k) {
    case ArchKind::vanilla: return "vanilla";
    case ArchKind::hierarchical: return "hierarchical";
    case ArchKind::mtl: return "mtl";
    case ArchKind::fact_aware: return "fact_aware";
  }
  throw ContractError("invalid architecture kind");
}

std::size_t head_output_dim(TaskHeadKind kind) {
  switch (kind) {
    case TaskHeadKind::classify2:
    case TaskHeadKind::entail:
      return 2;
    case TaskHeadKind::classify3:
      return 3;
    case TaskHeadKind::regress:
    case TaskHeadKind::rank_score:
      return 1;
  }
  throw ContractError("invalid task head kind");
}

std::vector<std::pair<std::string, Tensor>> TaskHeadParams::named(
    const std::string& prefix) const {
  return {{prefix + "w1", w1},
          {prefix + "b1", b1},
          {prefix + "w2", w2},
          {prefix + "b2", b2}};
}

void ArchitectureSpec::validate() const {
  encoder_cfg.validate();
  const bool two_level = kind == ArchKind::hierarchical || kind == ArchKind::fact_aware;
  if (two_level) {
    if (!doc_encoder_cfg)
      throw ContractError(to_string(kind) + " architecture requires doc_encoder_cfg");
    doc_encoder_cfg->validate();
    if (doc_encoder_cfg->d_model != encoder_cfg.d_model)
      throw ContractError("doc encoder d_model must match sentence encoder d_model");
  }
  if (kind == ArchKind::mtl && head_kind == TaskHeadKind::entail)
    throw ContractError("MTL primary head cannot be the entailment head");
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (auto& [n, t] : encoder.named()) out.emplace_back("encoder." + n, t);
  if (doc_encoder)
    for (auto& [n, t] : doc_encoder->named())
      out.emplace_back("doc_encoder." + n, t);
  if (doc_cls.defined()) out.emplace_back("doc_cls", doc_cls);
  if (pool_query.defined()) out.emplace_back("pool_query", pool_query);
  for (auto& [n, t] : head.named("head.")) out.emplace_back(n, t);
  if (aux_head)
    for (auto& [n, t] : aux_head->named("aux_head.")) out.emplace_back(n, t);
  return out;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (auto& [n, t] : named_parameters()) out.push_back(t);
  return out;
}

namespace {

TaskHeadParams init_head(TaskHeadKind kind, std::size_t d_model,
                         std::size_t hidden, std::mt19937_64& rng,
                         double init_std) {
  TaskHeadParams h;
  h.kind = kind;
  h.hidden_dim = hidden;
  h.w1 = Tensor::randn({d_model, hidden}, init_std, rng, true);
  h.b1 = Tensor::zeros({hidden}, true);
  h.w2 = Tensor::randn({hidden, head_output_dim(kind)}, init_std, rng, true);
  h.b2 = Tensor::zeros({head_output_dim(kind)}, true);
  return h;
}

}  // namespace

Model init_model(const ArchitectureSpec& spec, std::mt19937_64& rng,
                 double init_std) {
  spec.validate();
  Model m;
  m.spec = spec;
  m.encoder = init_encoder_params(spec.encoder_cfg, rng, init_std);
  if (spec.doc_encoder_cfg) {
    // second level is randomly initialized; first level is the shared stack
    m.doc_encoder = init_encoder_params(*spec.doc_encoder_cfg, rng, init_std);
    m.doc_cls = Tensor::randn({spec.encoder_cfg.d_model}, init_std, rng, true);
  }
  if (spec.kind == ArchKind::hierarchical &&
      spec.pooling == PoolStrategy::attention)
    m.pool_query = Tensor::randn({spec.encoder_cfg.d_model, 1}, init_std, rng, true);
  m.head = init_head(spec.head_kind, spec.encoder_cfg.d_model, spec.head_hidden,
                     rng, init_std);
  if (spec.kind == ArchKind::mtl)
    m.aux_head = init_head(TaskHeadKind::entail, spec.encoder_cfg.d_model,
                           spec.head_hidden, rng, init_std);
  return m;
}

namespace {

std::vector<std::size_t> clip_tokens(std::vector<std::size_t> ids,
                                     std::size_t max_len) {
  if (ids.size() > max_len) ids.resize(max_len);
  return ids;
}

std::vector<std::size_t> tokenize_nonempty(const Vocabulary& vocab,
                                           const std::string& text) {
  auto ids = tokenize(vocab, text);
  if (ids.empty()) ids.push_back(Vocabulary::kUnk);
  return ids;
}

}  // namespace

DocInput prepare_doc(const Vocabulary& vocab, const Document& doc,
                     const ArchitectureSpec& spec,
                     const std::vector<Fact>& facts) {
  DocInput in;
  if (spec.kind == ArchKind::hierarchical) {
    for (const auto& s : doc.sentences)
      in.sentence_tokens.push_back(tokenize_nonempty(vocab, s));
    if (in.sentence_tokens.empty())
      in.sentence_tokens.push_back(tokenize_nonempty(vocab, doc.text));
    return in;
  }
  std::vector<std::size_t> ids{Vocabulary::kCls};
  for (std::size_t id : tokenize(vocab, doc.text)) ids.push_back(id);
  in.tokens = clip_tokens(std::move(ids), spec.encoder_cfg.max_seq_len);
  in.mask.assign(in.tokens.size(), true);
  if (spec.kind == ArchKind::fact_aware) {
    std::vector<Fact> ordered;
    for (const auto& f : facts) {
      if (f.doc_id != doc.id) continue;
      if (f.sentence_index >= doc.sentences.size())
        throw DataError("fact for document '" + doc.id +
                        "' references sentence " +
                        std::to_string(f.sentence_index) + " but only " +
                        std::to_string(doc.sentences.size()) + " exist");
      ordered.push_back(f);
    }
    // ordered by source sentence; extraction order preserved within a sentence
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const Fact& a, const Fact& b) {
                       return a.sentence_index < b.sentence_index;
                     });
    for (const auto& f : ordered) {
      FactTokens ft;
      ft.sentence_index = f.sentence_index;
      ft.tokens.push_back(Vocabulary::kCls);
      for (std::size_t id : tokenize_nonempty(vocab, f.subject))
        ft.tokens.push_back(id);
      ft.tokens.push_back(Vocabulary::kSep);
      for (std::size_t id : tokenize_nonempty(vocab, f.verb))
        ft.tokens.push_back(id);
      ft.tokens.push_back(Vocabulary::kSep);
      for (std::size_t id : tokenize_nonempty(vocab, f.object))
        ft.tokens.push_back(id);
      ft.tokens = clip_tokens(std::move(ft.tokens), spec.encoder_cfg.max_seq_len);
      in.facts.push_back(std::move(ft));
    }
  }
  return in;
}

DocInput prepare_pair_input(const Vocabulary& vocab, const std::string& premise,
                            const std::string& hypothesis,
                            const ArchitectureSpec& spec) {
  DocInput in;
  in.tokens.push_back(Vocabulary::kCls);
  for (std::size_t id : tokenize_nonempty(vocab, premise)) in.tokens.push_back(id);
  in.tokens.push_back(Vocabulary::kSep);
  for (std::size_t id : tokenize_nonempty(vocab, hypothesis))
    in.tokens.push_back(id);
  in.tokens = clip_tokens(std::move(in.tokens), spec.encoder_cfg.max_seq_len);
  in.mask.assign(in.tokens.size(), true);
  return in;
}

Tensor head_forward(const TaskHeadParams& head, const Tensor& x,
                    const RunContext& ctx, double dropout_p) {
  Tensor input = x.rank() == 1 ? stack_rows({x}) : x;
  Tensor h = relu(add_bias(matmul(input, head.w1), head.b1));
  h = ctx.apply_dropout(h, dropout_p);
  Tensor out = add_bias(matmul(h, head.w2), head.b2);
  return x.rank() == 1 ? row(out, 0) : out;
}

namespace {

Tensor encode_cls(const EncoderConfig& cfg, const EncoderParams& params,
                  const std::vector<std::size_t>& ids,
                  const std::vector<bool>& mask, const RunContext& ctx) {
  return row(encode_sequence(cfg, params, ids, mask, ctx), 0);
}

Tensor vanilla_repr(const Model& model, const DocInput& doc, const RunContext& ctx) {
  if (doc.tokens.empty()) throw ContractError("document has no tokens");
  return encode_cls(model.spec.encoder_cfg, model.encoder, doc.tokens, doc.mask, ctx);
}

Tensor hierarchical_repr(const Model& model, const DocInput& doc,
                         const RunContext& ctx) {
  const EncoderConfig& cfg = model.spec.encoder_cfg;
  if (doc.sentence_tokens.empty())
    throw ContractError("hierarchical forward needs at least one sentence");

  struct Segment {
    std::size_t pack = 0, begin = 0, end = 0;
  };
  std::vector<Segment> segments(doc.sentence_tokens.size());
  std::vector<std::vector<std::size_t>> packs;

  if (model.spec.per_sentence_mode) {
    // one [CLS] s_i pass per sentence
    for (std::size_t i = 0; i < doc.sentence_tokens.size(); ++i) {
      const auto& toks = doc.sentence_tokens[i];
      if (toks.size() + 1 > cfg.max_seq_len)
        throw ContractError("sentence " + std::to_string(i) +
                            " exceeds sentence-encoder max length");
      std::vector<std::size_t> pack{Vocabulary::kCls};
      pack.insert(pack.end(), toks.begin(), toks.end());
      segments[i] = {packs.size(), 1, pack.size()};
      packs.push_back(std::move(pack));
    }
  } else {
    // packed: [CLS] s1 [SEP] s2 [SEP] ...; overflow starts a new pack
    std::vector<std::size_t> cur{Vocabulary::kCls};
    for (std::size_t i = 0; i < doc.sentence_tokens.size(); ++i) {
      const auto& toks = doc.sentence_tokens[i];
      if (toks.size() + 2 > cfg.max_seq_len)
        throw ContractError("sentence " + std::to_string(i) +
                            " exceeds sentence-encoder max length");
      if (cur.size() + toks.size() + 1 > cfg.max_seq_len) {
        packs.push_back(std::move(cur));
        cur = {Vocabulary::kCls};
      }
      segments[i] = {packs.size(), cur.size(), cur.size() + toks.size()};
      cur.insert(cur.end(), toks.begin(), toks.end());
      cur.push_back(Vocabulary::kSep);
    }
    packs.push_back(std::move(cur));
  }

  std::vector<Tensor> pack_hidden;
  for (const auto& p : packs) {
    std::vector<bool> mask(p.size(), true);
    pack_hidden.push_back(encode_sequence(cfg, model.encoder, p, mask, ctx));
  }

  std::vector<Tensor> sentence_vecs{model.doc_cls};
  const Tensor* query = model.pool_query.defined() ? &model.pool_query : nullptr;
  for (const auto& seg : segments)
    sentence_vecs.push_back(pool(pack_hidden[seg.pack], seg.begin, seg.end,
                                 model.spec.pooling, query));

  Tensor doc_hidden =
      encode_vectors(*model.spec.doc_encoder_cfg, *model.doc_encoder,
                     sentence_vecs, ctx);
  return row(doc_hidden, 0);
}

Tensor fact_aware_repr(const Model& model, const DocInput& doc,
                       const RunContext& ctx) {
  // document and fact encoders share weights by construction
  Tensor doc_repr = vanilla_repr(model, doc, ctx);
  std::vector<Tensor> inputs{model.doc_cls, doc_repr};
  for (const auto& f : doc.facts) {
    std::vector<bool> mask(f.tokens.size(), true);
    inputs.push_back(encode_cls(model.spec.encoder_cfg, model.encoder, f.tokens,
                                mask, ctx));
  }
  Tensor hidden = encode_vectors(*model.spec.doc_encoder_cfg, *model.doc_encoder,
                                 inputs, ctx);
  return row(hidden, 0);
}

}  // namespace

Tensor doc_representation(const Model& model, const DocInput& doc,
                          const RunContext& ctx) {
  switch (model.spec.kind) {
    case ArchKind::vanilla:
    case ArchKind::mtl:
      return vanilla_repr(model, doc, ctx);
    case ArchKind::hierarchical:
      return hierarchical_repr(model, doc, ctx);
    case ArchKind::fact_aware:
      return fact_aware_repr(model, doc, ctx);
  }
  throw ContractError("invalid architecture kind");
}

Tensor forward_batch(const Model& model, const std::vector<DocInput>& docs,
                     const RunContext& ctx) {
  if (docs.empty()) throw ContractError("forward_batch: empty batch");
  std::vector<Tensor> reprs;
  for (const auto& d : docs) reprs.push_back(doc_representation(model, d, ctx));
  return head_forward(model.head, stack_rows(reprs), ctx,
                      model.spec.encoder_cfg.dropout_p);
}

Tensor vanilla_forward(const Model& model, const std::vector<DocInput>& docs,
                       const RunContext& ctx) {
  if (model.spec.kind != ArchKind::vanilla)
    throw ContractError("vanilla_forward requires a vanilla model");
  return forward_batch(model, docs, ctx);
}

Tensor hierarchical_forward(const Model& model, const std::vector<DocInput>& docs,
                            const RunContext& ctx) {
  if (model.spec.kind != ArchKind::hierarchical)
    throw ContractError("hierarchical_forward requires a hierarchical model");
  return forward_batch(model, docs, ctx);
}

Tensor fact_aware_forward(const Model& model, const std::vector<DocInput>& docs,
                          const RunContext& ctx) {
  if (model.spec.kind != ArchKind::fact_aware)
    throw ContractError("fact_aware_forward requires a fact-aware model");
  return forward_batch(model, docs, ctx);
}

MtlResult mtl_forward(const Model& model, const std::vector<DocInput>& coh_batch,
                      const std::vector<std::size_t>& coh_targets,
                      const std::vector<DocInput>& entail_batch,
                      const std::vector<std::size_t>& entail_targets,
                      const RunContext& ctx) {
  if (model.spec.kind != ArchKind::mtl)
    throw ContractError("mtl_forward requires an mtl model");
  if (!model.aux_head) throw ContractError("mtl model is missing its entail head");
  if (coh_batch.empty() || entail_batch.empty())
    throw ContractError("mtl_forward requires non-empty batches for both tasks");

  MtlResult res;
  res.coh_out = forward_batch(model, coh_batch, ctx);
  std::vector<Tensor> ent_reprs;
  for (const auto& d : entail_batch)
    ent_reprs.push_back(vanilla_repr(model, d, ctx));
  res.entail_out = head_forward(*model.aux_head, stack_rows(ent_reprs), ctx,
                                model.spec.encoder_cfg.dropout_p);
  res.coh_loss = cross_entropy(res.coh_out, coh_targets);
  res.entail_loss = cross_entropy(res.entail_out, entail_targets);
  res.joint_loss = add(res.coh_loss, res.entail_loss);
  return res;
}

SiameseResult siamese_rank(const Model& model, const DocInput& doc_a,
                           const DocInput& doc_b, double margin,
                           const RunContext& ctx) {
  if (model.spec.head_kind != TaskHeadKind::rank_score)
    throw ContractError("siamese_rank requires a rank_score head");
  SiameseResult res;
  Tensor ra = doc_representation(model, doc_a, ctx);
  Tensor rb = doc_representation(model, doc_b, ctx);
  Tensor sa = head_forward(model.head, ra, ctx, model.spec.encoder_cfg.dropout_p);
  Tensor sb = head_forward(model.head, rb, ctx, model.spec.encoder_cfg.dropout_p);
  res.score_a = sa;
  res.score_b = sb;
  res.loss = margin_ranking_loss(sum(sa), sum(sb), margin);
  return res;
}

}  // namespace cohlab
