#include "cohlab/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <cstdlib>
#include <numeric>
#include <set>
#include <thread>

#include "cohlab/metrics.hpp"

namespace cohlab {

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "2way" || s == "classify2") return TaskKind::classify2;
  if (s == "3way" || s == "classify3") return TaskKind::classify3;
  if (s == "order") return TaskKind::order;
  if (s == "score") return TaskKind::score;
  throw DataError("unknown task '" + s + "' (expected 2way|3way|order|score)");
}

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::classify2: return "2way";
    case TaskKind::classify3: return "3way";
    case TaskKind::order: return "order";
    case TaskKind::score: return "score";
  }
  throw ContractError("bad TaskKind");
}

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "adamw") return OptimizerKind::adamw;
  throw DataError("unknown optimizer '" + s + "' (expected adam|adamw)");
}

std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::adam ? "adam" : "adamw";
}

void TrainConfig::validate() const {
  if (lr <= 0.0 && lr != 0.0) throw ContractError("lr must be >= 0");
  if (weight_decay < 0.0 || weight_decay >= 1.0)
    throw ContractError("weight_decay must lie in [0,1)");
  if (margin < 0.0) throw ContractError("margin must be >= 0");
  if (dropout_p < 0.0 || dropout_p >= 1.0)
    throw ContractError("dropout_p must lie in [0,1)");
  if (batch_size == 0) throw ContractError("batch_size must be positive");
  if (epochs == 0) throw ContractError("epochs must be positive");
  if (n_seeds == 0) throw ContractError("n_seeds must be positive");
}

// ---- optimizer -------------------------------------------------------------

AdamState init_adam_state(const NamedParams& params) {
  AdamState state;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const auto& [name, t] : params) {
    state.m.emplace_back(t.size(), 0.0);
    state.v.emplace_back(t.size(), 0.0);
  }
  return state;
}

namespace {

void adam_core(const NamedParams& params, AdamState& state,
               const TrainConfig& cfg, bool decoupled_decay) {
  if (state.m.size() != params.size())
    throw ContractError("optimizer state initialized for " +
                        std::to_string(state.m.size()) + " tensors, got " +
                        std::to_string(params.size()));
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& [name, t] = params[p];
    auto& theta = const_cast<Tensor&>(t).data();
    const bool has_grad = t.has_grad();
    const std::vector<double>* g = has_grad ? &t.grad() : nullptr;
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = has_grad ? (*g)[i] : 0.0;
      if (!std::isfinite(gi))
        throw NumericError("non-finite gradient in parameter '" + name +
                           "' at element " + std::to_string(i) + " (step " +
                           std::to_string(state.step) + ")");
      if (decoupled_decay) theta[i] -= cfg.lr * cfg.weight_decay * theta[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

}  // namespace

void adam_step(const NamedParams& params, AdamState& state,
               const TrainConfig& cfg) {
  adam_core(params, state, cfg, false);
}

void adamw_step(const NamedParams& params, AdamState& state,
                const TrainConfig& cfg) {
  adam_core(params, state, cfg, true);
}

double clip_global_norm(const NamedParams& params, double clip_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (clip_norm > 0.0 && norm > clip_norm) {
    const double s = clip_norm / norm;
    for (const auto& [name, t] : params) {
      if (!t.has_grad()) continue;
      auto& grad = const_cast<std::vector<double>&>(t.grad());
      for (double& g : grad) g *= s;
    }
  }
  return norm;
}

// ---- RNG substreams --------------------------------------------------------

std::mt19937_64 rng_substream(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a over the stream name
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (h | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  z ^= z >> 31;
  return std::mt19937_64(z);
}

// ---- dataset plumbing ------------------------------------------------------

namespace {

std::size_t label3_index(const Document& d) {
  if (d.label3) {
    if (*d.label3 == "low") return 0;
    if (*d.label3 == "medium") return 1;
    if (*d.label3 == "high") return 2;
    throw DataError("document '" + d.id + "' has unknown label '" + *d.label3 + "'");
  }
  throw DataError("document '" + d.id + "' lacks a 3-way label");
}

std::size_t label2_index(const Document& d) {
  if (!d.expert_scores.empty())
    return derive_binary_label(d.expert_scores) == BinaryLabel::non_coherent ? 0 : 1;
  if (d.label3) return *d.label3 == "low" ? 0 : 1;
  throw DataError("document '" + d.id + "' has neither expert scores nor a label");
}

double score_target(const Document& d) {
  if (d.gold_score) return *d.gold_score;
  if (!d.expert_scores.empty()) return derive_gold_score(d.expert_scores);
  throw DataError("document '" + d.id + "' has no gold score");
}

TaskHeadKind head_for(TaskKind task) {
  switch (task) {
    case TaskKind::classify2: return TaskHeadKind::classify2;
    case TaskKind::classify3: return TaskHeadKind::classify3;
    case TaskKind::order: return TaskHeadKind::rank_score;
    case TaskKind::score: return TaskHeadKind::regress;
  }
  throw ContractError("bad TaskKind");
}

/// Grows max_seq_len so every prepared input fits; position tables are sized
/// from it at init time.
void fit_sequence_lengths(ArchitectureSpec& spec, const Vocabulary& vocab,
                          const Dataset& data,
                          const std::map<std::string, std::vector<Fact>>& facts) {
  std::size_t l1 = spec.encoder_cfg.max_seq_len;
  std::size_t l2 = spec.doc_encoder_cfg ? spec.doc_encoder_cfg->max_seq_len : 0;
  for (const auto& d : data.docs) {
    l1 = std::max(l1, tokenize(vocab, d.text).size() + d.sentences.size() + 2);
    for (const auto& s : d.sentences)
      l1 = std::max(l1, tokenize(vocab, s).size() + 2);
    l2 = std::max(l2, d.sentences.size() + 2);
    auto it = facts.find(d.id);
    if (it != facts.end()) l2 = std::max(l2, it->second.size() + 2);
  }
  for (const auto& e : data.entail)
    l1 = std::max(l1, tokenize(vocab, e.premise).size() +
                          tokenize(vocab, e.hypothesis).size() + 3);
  spec.encoder_cfg.max_seq_len = l1;
  if (spec.doc_encoder_cfg) spec.doc_encoder_cfg->max_seq_len = l2;
}

struct PairExample {
  DocInput original;
  DocInput permuted;
};

Document permuted_document(const Document& doc, const PermutationPair& perm) {
  Document out = doc;
  out.id = doc.id + "#perm" + std::to_string(perm.perm_index);
  out.sentences = apply_order(doc.sentences, perm.order);
  std::string text;
  for (const auto& s : out.sentences) {
    if (!text.empty()) text += " ";
    text += s;
  }
  out.text = text;
  return out;
}

std::vector<Fact> remap_facts(const std::vector<Fact>& facts,
                              const std::vector<std::size_t>& order) {
  const auto inv = inverse_order(order);
  std::vector<Fact> out = facts;
  for (auto& f : out) f.sentence_index = inv[f.sentence_index];
  std::sort(out.begin(), out.end(), [](const Fact& a, const Fact& b) {
    return a.sentence_index < b.sentence_index;
  });
  return out;
}

struct TaskData {
  // classification / regression
  std::vector<DocInput> inputs;
  std::vector<std::size_t> cls_targets;
  std::vector<double> reg_targets;
  // ordering
  std::vector<PairExample> pairs;

  std::size_t size(TaskKind task) const {
    return task == TaskKind::order ? pairs.size() : inputs.size();
  }
};

TaskData build_task_data(const Vocabulary& vocab, const ArchitectureSpec& spec,
                         const std::vector<const Document*>& docs,
                         const std::map<std::string, std::vector<Fact>>& facts,
                         const std::vector<PermutationPair>& perms,
                         TaskKind task) {
  TaskData out;
  static const std::vector<Fact> kNoFacts;
  auto facts_of = [&](const std::string& id) -> const std::vector<Fact>& {
    auto it = facts.find(id);
    return it == facts.end() ? kNoFacts : it->second;
  };
  if (task == TaskKind::order) {
    std::map<std::string, const Document*> by_id;
    for (const Document* d : docs) by_id.emplace(d->id, d);
    for (const auto& perm : perms) {
      auto it = by_id.find(perm.original_id);
      if (it == by_id.end()) continue;  // permutation of a doc in the other split
      const Document& doc = *it->second;
      Document shuffled = permuted_document(doc, perm);
      const auto& doc_facts = facts_of(doc.id);
      out.pairs.push_back(
          {prepare_doc(vocab, doc, spec, doc_facts),
           prepare_doc(vocab, shuffled, spec,
                       remap_facts(doc_facts, perm.order))});
    }
    return out;
  }
  for (const Document* d : docs) {
    out.inputs.push_back(prepare_doc(vocab, *d, spec, facts_of(d->id)));
    switch (task) {
      case TaskKind::classify2: out.cls_targets.push_back(label2_index(*d)); break;
      case TaskKind::classify3: out.cls_targets.push_back(label3_index(*d)); break;
      case TaskKind::score: out.reg_targets.push_back(score_target(*d)); break;
      case TaskKind::order: break;
    }
  }
  return out;
}

Tensor batch_loss(const Model& model, const TaskData& data,
                  const std::vector<std::size_t>& idx, TaskKind task,
                  double margin, const RunContext& ctx) {
  if (task == TaskKind::order) {
    Tensor total;
    for (std::size_t i : idx) {
      const auto& pair = data.pairs[i];
      Tensor l = siamese_rank(model, pair.original, pair.permuted, margin, ctx).loss;
      total = total.defined() ? add(total, l) : l;
    }
    return scale(total, 1.0 / static_cast<double>(idx.size()));
  }
  std::vector<DocInput> batch;
  batch.reserve(idx.size());
  for (std::size_t i : idx) batch.push_back(data.inputs[i]);
  Tensor out = forward_batch(model, batch, ctx);
  if (task == TaskKind::score) {
    std::vector<double> t;
    for (std::size_t i : idx) t.push_back(data.reg_targets[i]);
    return mse(out, Tensor({idx.size(), 1}, std::move(t)));
  }
  std::vector<std::size_t> t;
  for (std::size_t i : idx) t.push_back(data.cls_targets[i]);
  return cross_entropy(out, t);
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n,
                                                   std::size_t batch_size,
                                                   std::mt19937_64* shuffle_rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_rng) std::shuffle(order.begin(), order.end(), *shuffle_rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < n; b += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                         order.begin() +
                             static_cast<std::ptrdiff_t>(std::min(n, b + batch_size)));
  }
  return batches;
}

std::size_t argmax_row(const Tensor& logits, std::size_t i) {
  const std::size_t k = logits.dim(1);
  const double* p = logits.data().data() + i * k;
  return static_cast<std::size_t>(std::max_element(p, p + k) - p);
}

void eval_split(const Model& model, const TaskData& data, TaskKind task,
                double margin, std::size_t batch_size, const std::string& prefix,
                std::map<std::string, double>& metrics) {
  if (data.size(task) == 0) return;
  RunContext ctx;  // eval mode
  if (task == TaskKind::order) {
    std::vector<RankedPair> pairs;
    for (const auto& pair : data.pairs) {
      auto r = siamese_rank(model, pair.original, pair.permuted, margin, ctx);
      pairs.push_back({r.score_a.value(), r.score_b.value()});
    }
    metrics[prefix + "pra"] = pairwise_ranking_accuracy(pairs);
    return;
  }
  std::vector<int> pred_i, gold_i;
  std::vector<double> pred_s;
  for (const auto& batch : make_batches(data.inputs.size(), batch_size, nullptr)) {
    std::vector<DocInput> docs;
    for (std::size_t i : batch) docs.push_back(data.inputs[i]);
    Tensor out = forward_batch(model, docs, ctx);
    for (std::size_t r = 0; r < batch.size(); ++r) {
      if (task == TaskKind::score) {
        pred_s.push_back(out.data()[r]);
      } else {
        pred_i.push_back(static_cast<int>(argmax_row(out, r)));
        gold_i.push_back(static_cast<int>(data.cls_targets[batch[r]]));
      }
    }
  }
  if (task == TaskKind::score) {
    try {
      metrics[prefix + "spearman"] = spearman(pred_s, data.reg_targets);
    } catch (const std::exception&) {
      // constant gold on a tiny split: correlation undefined, metric omitted
    }
    return;
  }
  metrics[prefix + "accuracy"] = accuracy(pred_i, gold_i);
  if (task == TaskKind::classify2) {
    auto to_labels = [](const std::vector<int>& v) {
      std::vector<BinaryLabel> out;
      for (int x : v)
        out.push_back(x == 0 ? BinaryLabel::non_coherent : BinaryLabel::other);
      return out;
    };
    metrics[prefix + "f05_low"] =
        f_beta_low(to_labels(pred_i), to_labels(gold_i)).value;
  }
}

double weighted_epoch_loss(const Model& model, const TaskData& data,
                           const TaskData* entail, TaskKind task, double margin,
                           std::size_t batch_size, const RunContext& ctx) {
  // Example-weighted so the value is invariant to batch grouping.
  double total = 0.0;
  std::size_t n = 0;
  std::size_t entail_cursor = 0;
  auto entail_batches =
      entail ? make_batches(entail->inputs.size(), batch_size, nullptr)
             : std::vector<std::vector<std::size_t>>{};
  for (const auto& batch : make_batches(data.size(task), batch_size, nullptr)) {
    Tensor loss;
    if (entail) {
      std::vector<DocInput> coh;
      std::vector<std::size_t> coh_t;
      for (std::size_t i : batch) {
        coh.push_back(data.inputs[i]);
        coh_t.push_back(data.cls_targets[i]);
      }
      const auto& eb = entail_batches[entail_cursor++ % entail_batches.size()];
      std::vector<DocInput> ent;
      std::vector<std::size_t> ent_t;
      for (std::size_t i : eb) {
        ent.push_back(entail->inputs[i]);
        ent_t.push_back(entail->cls_targets[i]);
      }
      loss = mtl_forward(model, coh, coh_t, ent, ent_t, ctx).joint_loss;
    } else {
      loss = batch_loss(model, data, batch, task, margin, ctx);
    }
    total += loss.value() * static_cast<double>(batch.size());
    n += batch.size();
  }
  return total / static_cast<double>(n);
}

}  // namespace

// ---- training loop ---------------------------------------------------------

RunResult train_task(const ArchitectureSpec& spec, const TrainConfig& cfg,
                     const Dataset& data, TaskKind task) {
  return train_task(spec, cfg, data, task, nullptr);
}

Vocabulary training_vocabulary(const Dataset& data) {
  // Every text the run will tokenize, entailment pairs included.
  std::vector<Document> vocab_docs = data.docs;
  for (const auto& e : data.entail) {
    Document d;
    d.text = e.premise + " " + e.hypothesis;
    vocab_docs.push_back(std::move(d));
  }
  return build_vocab(vocab_docs, 1);
}

std::map<std::string, double> evaluate_model(const Model& model,
                                             const Vocabulary& vocab,
                                             const Dataset& data, TaskKind task,
                                             double margin,
                                             std::size_t batch_size) {
  if (data.docs.empty()) throw DataError("empty dataset");
  if (task == TaskKind::order && data.perms.empty())
    throw DataError("ordering task needs a permutation file");
  std::map<std::string, std::vector<Fact>> facts_by_doc;
  if (model.spec.kind == ArchKind::fact_aware)
    for (const auto& f : data.facts) facts_by_doc[f.doc_id].push_back(f);
  std::vector<const Document*> docs;
  for (const auto& d : data.docs) docs.push_back(&d);
  TaskData td =
      build_task_data(vocab, model.spec, docs, facts_by_doc, data.perms, task);
  std::map<std::string, double> metrics;
  eval_split(model, td, task, margin, batch_size, "", metrics);
  return metrics;
}

RunResult train_task(const ArchitectureSpec& spec_in, const TrainConfig& cfg,
                     const Dataset& data, TaskKind task, Model* out_model) {
  cfg.validate();
  if (data.docs.empty()) throw DataError("empty dataset");
  if (task == TaskKind::order && data.perms.empty())
    throw DataError("ordering task needs a permutation file");
  if (spec_in.kind == ArchKind::mtl && data.entail.empty())
    throw DataError("mtl architecture needs entailment examples");
  if (spec_in.kind == ArchKind::mtl &&
      (task == TaskKind::order || task == TaskKind::score))
    throw DataError("mtl supports the classification tasks only");

  const Vocabulary vocab = training_vocabulary(data);

  std::map<std::string, std::vector<Fact>> facts_by_doc;
  if (spec_in.kind == ArchKind::fact_aware)
    for (const auto& f : data.facts) facts_by_doc[f.doc_id].push_back(f);

  ArchitectureSpec spec = spec_in;
  spec.head_kind = head_for(task);
  spec.encoder_cfg.vocab_size = vocab.size();
  spec.encoder_cfg.dropout_p = cfg.dropout_p;
  if (spec.doc_encoder_cfg) {
    spec.doc_encoder_cfg->vocab_size = vocab.size();
    spec.doc_encoder_cfg->dropout_p = cfg.dropout_p;
  }
  fit_sequence_lengths(spec, vocab, data, facts_by_doc);
  spec.validate();

  const std::size_t n_eval =
      std::min(data.docs.size() - 1,
               data.n_eval ? *data.n_eval : data.docs.size() / 5);
  std::vector<const Document*> train_docs, eval_docs;
  for (std::size_t i = 0; i < data.docs.size(); ++i) {
    (i < data.docs.size() - n_eval ? train_docs : eval_docs)
        .push_back(&data.docs[i]);
  }

  TaskData train_data =
      build_task_data(vocab, spec, train_docs, facts_by_doc, data.perms, task);
  TaskData eval_data =
      build_task_data(vocab, spec, eval_docs, facts_by_doc, data.perms, task);
  if (train_data.size(task) == 0)
    throw DataError("no training examples for task " + to_string(task));

  TaskData entail_data;
  const bool is_mtl = spec.kind == ArchKind::mtl;
  if (is_mtl) {
    for (const auto& e : data.entail) {
      entail_data.inputs.push_back(
          prepare_pair_input(vocab, e.premise, e.hypothesis, spec));
      entail_data.cls_targets.push_back(e.entailment ? 1 : 0);
    }
  }

  auto init_rng = rng_substream(cfg.seed, "init");
  auto shuffle_rng = rng_substream(cfg.seed, "shuffle");
  auto dropout_rng = rng_substream(cfg.seed, "dropout");

  Model model = init_model(spec, init_rng, cfg.init_std);
  NamedParams all_params = model.named_parameters();
  NamedParams opt_params;
  for (const auto& p : all_params) {
    if (cfg.freeze_embeddings && p.first.find("tok_emb") != std::string::npos)
      continue;
    opt_params.push_back(p);
  }
  AdamState state = init_adam_state(opt_params);

  RunResult result;
  result.seed = cfg.seed;
  RunContext train_ctx{true, &dropout_rng};
  RunContext eval_ctx;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_total = 0.0;
    std::size_t epoch_n = 0;
    auto batches = make_batches(train_data.size(task), cfg.batch_size, &shuffle_rng);
    auto entail_batches =
        is_mtl ? make_batches(entail_data.inputs.size(), cfg.batch_size, &shuffle_rng)
               : std::vector<std::vector<std::size_t>>{};
    std::size_t entail_cursor = 0;

    for (const auto& batch : batches) {
      Tensor loss;
      if (is_mtl) {
        std::vector<DocInput> coh;
        std::vector<std::size_t> coh_t;
        for (std::size_t i : batch) {
          coh.push_back(train_data.inputs[i]);
          coh_t.push_back(train_data.cls_targets[i]);
        }
        const auto& eb = entail_batches[entail_cursor++ % entail_batches.size()];
        std::vector<DocInput> ent;
        std::vector<std::size_t> ent_t;
        for (std::size_t i : eb) {
          ent.push_back(entail_data.inputs[i]);
          ent_t.push_back(entail_data.cls_targets[i]);
        }
        loss = mtl_forward(model, coh, coh_t, ent, ent_t, train_ctx).joint_loss;
      } else {
        loss = batch_loss(model, train_data, batch, task, cfg.margin, train_ctx);
      }
      epoch_total += loss.value() * static_cast<double>(batch.size());
      epoch_n += batch.size();

      for (const auto& p : all_params) {
        Tensor t = p.second;  // handles alias the node
        t.zero_grad();
      }
      backward(loss);
      clip_global_norm(opt_params, cfg.clip_norm);
      if (cfg.optimizer == OptimizerKind::adam)
        adam_step(opt_params, state, cfg);
      else
        adamw_step(opt_params, state, cfg);
    }
    result.epoch_losses.push_back(epoch_total / static_cast<double>(epoch_n));
    result.epoch_eval_losses.push_back(weighted_epoch_loss(
        model, train_data, is_mtl ? &entail_data : nullptr, task, cfg.margin,
        cfg.batch_size, eval_ctx));
  }

  eval_split(model, train_data, task, cfg.margin, cfg.batch_size, "train_",
             result.metrics);
  eval_split(model, eval_data, task, cfg.margin, cfg.batch_size, "eval_",
             result.metrics);
  if (is_mtl)
    eval_split(model, entail_data, TaskKind::classify2, cfg.margin,
               cfg.batch_size, "entail_", result.metrics);
  for (const auto& [k, v] : result.metrics)
    if (!std::isfinite(v))
      throw NumericError("non-finite metric " + k);

  if (out_model) *out_model = model;
  return result;
}

// ---- whole-model gradient check --------------------------------------------

ModelGradcheck gradcheck_architecture(ArchKind kind, double tol,
                                      std::uint64_t seed) {
  // Tiny deterministic setup: two synthetic docs, dropout off. The loss is a
  // fixed random projection of the head outputs; a sum-of-squares probe after
  // the final layer norm is nearly parameter-invariant and would drown the
  // signal in finite-difference noise.
  std::mt19937_64 rng(seed + 17);
  SynthOptions opts;
  opts.n_docs = 2;
  opts.sents_per_doc = 3;
  opts.n_entities = 8;
  Dataset data;
  data.docs = synth_corpus(opts, rng);
  const Vocabulary vocab = training_vocabulary(data);

  ArchitectureSpec spec;
  spec.kind = kind;
  spec.encoder_cfg = {1, 2, 8, 16, 0.0, 8, vocab.size()};
  if (kind == ArchKind::hierarchical || kind == ArchKind::fact_aware)
    spec.doc_encoder_cfg = EncoderConfig{1, 2, 8, 16, 0.0, 8, vocab.size()};
  if (kind == ArchKind::mtl) spec.head_kind = TaskHeadKind::classify2;
  spec.head_hidden = 8;

  std::map<std::string, std::vector<Fact>> facts_by_doc;
  if (kind == ArchKind::fact_aware)
    for (const auto& d : data.docs)
      facts_by_doc[d.id] = extract_facts_naive(d, synth_verb_lexicon());
  fit_sequence_lengths(spec, vocab, data, facts_by_doc);
  spec.validate();

  std::vector<DocInput> docs;
  static const std::vector<Fact> kNone;
  for (const auto& d : data.docs) {
    auto it = facts_by_doc.find(d.id);
    docs.push_back(prepare_doc(vocab, d, spec,
                               it == facts_by_doc.end() ? kNone : it->second));
  }
  std::vector<DocInput> entail;
  std::vector<std::size_t> entail_t{1, 0};
  if (kind == ArchKind::mtl) {
    entail.push_back(prepare_pair_input(vocab, data.docs[0].sentences[0],
                                        data.docs[0].sentences[1], spec));
    entail.push_back(prepare_pair_input(vocab, data.docs[1].sentences[0],
                                        data.docs[0].sentences[2], spec));
  }

  // larger init keeps gradients above finite-difference noise at this scale
  Model model = init_model(spec, rng, 0.5);
  const std::size_t out_dim = head_output_dim(spec.head_kind);
  Tensor probe = Tensor::randn({docs.size(), out_dim}, 1.0, rng);
  Tensor aux_probe =
      kind == ArchKind::mtl ? Tensor::randn({entail.size(), 2}, 1.0, rng) : Tensor();

  RunContext ctx;  // eval mode
  std::vector<std::size_t> coh_t{0, 1};
  auto loss_fn = [&]() -> Tensor {
    if (kind == ArchKind::mtl) {
      MtlResult r = mtl_forward(model, docs, coh_t, entail, entail_t, ctx);
      return add(sum(mul(r.coh_out, probe)), sum(mul(r.entail_out, aux_probe)));
    }
    return sum(mul(forward_batch(model, docs, ctx), probe));
  };

  NamedParams params = model.named_parameters();
  for (const auto& p : params) {
    Tensor t = p.second;
    t.zero_grad();
  }
  backward(loss_fn());

  ModelGradcheck result;
  result.pass = true;
  const double eps = 1e-5;
  std::mt19937_64 pick_rng(seed + 23);
  for (const auto& [name, t] : params) {
    std::vector<double> analytic(t.grad());
    // spot-check a handful of elements per tensor
    std::vector<std::size_t> idx;
    if (t.size() <= 4) {
      idx.resize(t.size());
      std::iota(idx.begin(), idx.end(), 0);
    } else {
      std::uniform_int_distribution<std::size_t> dist(0, t.size() - 1);
      for (int k = 0; k < 4; ++k) idx.push_back(dist(pick_rng));
    }
    auto& theta = const_cast<Tensor&>(t).data();
    for (std::size_t i : idx) {
      const double saved = theta[i];
      theta[i] = saved + eps;
      const double up = loss_fn().value();
      theta[i] = saved - eps;
      const double down = loss_fn().value();
      theta[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      // Some gradients are identically zero (e.g. key bias: a constant shift
      // of every key cancels in the softmax); there the quotient only
      // measures finite-difference noise.
      if (std::abs(analytic[i]) < 1e-6 && std::abs(numeric) < 1e-6) continue;
      const double rel = std::abs(analytic[i] - numeric) /
                         std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_param = name;
      }
    }
  }
  result.pass = result.max_rel_err <= tol;
  return result;
}

// ---- multi-seed aggregation ------------------------------------------------

namespace {

std::size_t env_thread_cap() {
  const char* s = std::getenv("COHERENCE_LAB_THREADS");
  if (!s) return 0;
  char* end = nullptr;
  const unsigned long v = std::strtoul(s, &end, 10);
  if (end == s || *end != '\0' || v == 0)
    throw DataError("COHERENCE_LAB_THREADS must be a positive integer");
  return static_cast<std::size_t>(v);
}

}  // namespace

MultiSeedResult multi_seed(const ArchitectureSpec& spec, const TrainConfig& cfg,
                           const Dataset& data, TaskKind task,
                           std::size_t n_threads) {
  cfg.validate();
  if (n_threads == 0) {
    const std::size_t cap = env_thread_cap();
    n_threads = cap ? cap : std::max<std::size_t>(1, std::thread::hardware_concurrency());
  }
  n_threads = std::min(n_threads, cfg.n_seeds);

  MultiSeedResult agg;
  agg.runs.resize(cfg.n_seeds);
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cfg.n_seeds) return;
      try {
        TrainConfig run_cfg = cfg;
        run_cfg.seed = cfg.seed + i;
        agg.runs[i] = train_task(spec, run_cfg, data, task);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::set<std::uint64_t> seeds;
  for (const auto& run : agg.runs) seeds.insert(run.seed);
  if (seeds.size() != agg.runs.size())
    throw ContractError("seeds not disjoint across runs");

  std::map<std::string, std::size_t> counts;
  for (const auto& run : agg.runs)
    for (const auto& [k, v] : run.metrics) {
      agg.mean[k] += v;
      ++counts[k];
    }
  for (auto& [k, v] : agg.mean) v /= static_cast<double>(counts[k]);
  for (const auto& [k, m] : agg.mean) {
    double sq = 0.0;
    std::size_t n = 0;
    for (const auto& run : agg.runs) {
      auto it = run.metrics.find(k);
      if (it == run.metrics.end()) continue;
      sq += (it->second - m) * (it->second - m);
      ++n;
    }
    agg.stddev[k] = std::sqrt(sq / static_cast<double>(n));
  }
  return agg;
}

nlohmann::json run_report_json(const RunResult& run) {
  return nlohmann::json{{"seed", run.seed},
                        {"epoch_losses", run.epoch_losses},
                        {"epoch_eval_losses", run.epoch_eval_losses},
                        {"metrics", run.metrics}};
}

nlohmann::json aggregate_report_json(const MultiSeedResult& agg) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : agg.runs) runs.push_back(run_report_json(run));
  return nlohmann::json{
      {"runs", runs}, {"mean", agg.mean}, {"std", agg.stddev}};
}

}  // namespace cohlab
