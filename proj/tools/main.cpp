// coherence_lab: data generation, permutation, training, evaluation, and
// gradient verification behind one subcommand-style binary.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "cohlab/checkpoint.hpp"
#include "cohlab/train.hpp"

using namespace cohlab;
using nlohmann::json;

namespace {

// exit 1; distinct from data errors (exit 2) and numeric failures (exit 3)
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key))
      throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

/// String-to-enum conversions from the library throw DataError; inside a
/// config they are usage mistakes (exit 1), not data errors (exit 2).
template <typename F>
auto cfg_parse(F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

ArchKind parse_arch(const std::string& s) {
  if (s == "vanilla") return ArchKind::vanilla;
  if (s == "hier" || s == "hierarchical") return ArchKind::hierarchical;
  if (s == "mtl") return ArchKind::mtl;
  if (s == "fact" || s == "fact_aware") return ArchKind::fact_aware;
  throw ConfigError("unknown architecture '" + s +
                    "' (expected vanilla|hier|mtl|fact)");
}

struct CliConfig {
  TaskKind task = TaskKind::classify3;
  bool task_set = false;
  ArchitectureSpec spec;
  TrainConfig train;
  std::string corpus_path, perms_path, facts_path, entail_path;
  std::optional<std::size_t> n_eval;
  std::string out_dir = ".";
};

template <typename T>
void assign_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

CliConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  check_keys(j, {"task", "arch", "out_dir", "train", "model", "data"}, path);

  CliConfig cfg;
  if (j.contains("task")) {
    cfg.task = cfg_parse([&] { return task_kind_from_string(j.at("task").get<std::string>()); });
    cfg.task_set = true;
  }
  if (j.contains("arch")) cfg.spec.kind = parse_arch(j.at("arch").get<std::string>());
  assign_if(j, "out_dir", cfg.out_dir);

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t,
               {"epochs", "lr", "beta1", "beta2", "adam_eps", "weight_decay",
                "dropout_p", "margin", "batch_size", "seed", "n_seeds",
                "optimizer", "clip_norm", "freeze_embeddings", "init_std"},
               "train");
    assign_if(t, "epochs", cfg.train.epochs);
    assign_if(t, "lr", cfg.train.lr);
    assign_if(t, "beta1", cfg.train.beta1);
    assign_if(t, "beta2", cfg.train.beta2);
    assign_if(t, "adam_eps", cfg.train.adam_eps);
    assign_if(t, "weight_decay", cfg.train.weight_decay);
    assign_if(t, "dropout_p", cfg.train.dropout_p);
    assign_if(t, "margin", cfg.train.margin);
    assign_if(t, "batch_size", cfg.train.batch_size);
    assign_if(t, "seed", cfg.train.seed);
    assign_if(t, "n_seeds", cfg.train.n_seeds);
    assign_if(t, "clip_norm", cfg.train.clip_norm);
    assign_if(t, "freeze_embeddings", cfg.train.freeze_embeddings);
    assign_if(t, "init_std", cfg.train.init_std);
    if (t.contains("optimizer"))
      cfg.train.optimizer = cfg_parse([&] {
        return optimizer_kind_from_string(t.at("optimizer").get<std::string>());
      });
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m,
               {"n_layers", "n_heads", "d_model", "d_ff", "max_seq_len",
                "head_hidden", "pooling", "per_sentence_mode", "doc_n_layers",
                "doc_n_heads", "doc_d_ff", "doc_max_seq_len"},
               "model");
    EncoderConfig& e = cfg.spec.encoder_cfg;
    assign_if(m, "n_layers", e.n_layers);
    assign_if(m, "n_heads", e.n_heads);
    assign_if(m, "d_model", e.d_model);
    assign_if(m, "d_ff", e.d_ff);
    assign_if(m, "max_seq_len", e.max_seq_len);
    assign_if(m, "head_hidden", cfg.spec.head_hidden);
    assign_if(m, "per_sentence_mode", cfg.spec.per_sentence_mode);
    if (m.contains("pooling"))
      cfg.spec.pooling = cfg_parse([&] {
        return pool_strategy_from_string(m.at("pooling").get<std::string>());
      });
    if (m.contains("doc_n_layers") || m.contains("doc_n_heads") ||
        m.contains("doc_d_ff") || m.contains("doc_max_seq_len")) {
      EncoderConfig d = e;  // second level shares d_model with the first
      d.n_layers = 1;
      assign_if(m, "doc_n_layers", d.n_layers);
      assign_if(m, "doc_n_heads", d.n_heads);
      assign_if(m, "doc_d_ff", d.d_ff);
      assign_if(m, "doc_max_seq_len", d.max_seq_len);
      cfg.spec.doc_encoder_cfg = d;
    }
  }

  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, {"corpus", "perms", "facts", "entail", "n_eval"}, "data");
    assign_if(d, "corpus", cfg.corpus_path);
    assign_if(d, "perms", cfg.perms_path);
    assign_if(d, "facts", cfg.facts_path);
    assign_if(d, "entail", cfg.entail_path);
    if (d.contains("n_eval")) cfg.n_eval = d.at("n_eval").get<std::size_t>();
  }
  return cfg;
}

void save_vocab(const std::string& path, const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << json(vocab.id_to_token).dump() << "\n";
}

Vocabulary load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  Vocabulary vocab;
  vocab.id_to_token = j.get<std::vector<std::string>>();
  for (std::size_t i = 0; i < vocab.id_to_token.size(); ++i)
    vocab.token_to_id.emplace(vocab.id_to_token[i], i);
  return vocab;
}

Dataset load_dataset(const CliConfig& cfg, ArchKind arch, TaskKind task) {
  if (cfg.corpus_path.empty()) throw ConfigError("no corpus path configured");
  if (task == TaskKind::order && cfg.perms_path.empty())
    throw ConfigError("ordering task needs a permutation file (data.perms)");
  if (arch == ArchKind::mtl && cfg.entail_path.empty())
    throw ConfigError("mtl architecture needs entailment data (data.entail)");

  Dataset data;
  data.docs = load_corpus(cfg.corpus_path);
  if (!cfg.perms_path.empty()) data.perms = load_perms(cfg.perms_path);
  if (!cfg.entail_path.empty()) data.entail = load_entailment(cfg.entail_path);
  if (arch == ArchKind::fact_aware) {
    if (!cfg.facts_path.empty()) {
      data.facts = load_facts_sidecar(cfg.facts_path, data.docs);
    } else {
      // no sidecar: fall back to naive extraction with the synthetic lexicon
      for (const auto& d : data.docs)
        for (auto& f : extract_facts_naive(d, synth_verb_lexicon()))
          data.facts.push_back(std::move(f));
    }
  }
  data.n_eval = cfg.n_eval;
  return data;
}

int cmd_gen_synth(const std::string& out, std::size_t docs, std::size_t sents,
                  std::size_t entities, std::uint64_t seed) {
  if (sents < 2)
    throw ConfigError("--sents must be >= 2: one-sentence documents are "
                      "excluded from every task");
  SynthOptions opts;
  opts.n_docs = docs;
  opts.sents_per_doc = sents;
  opts.n_entities = entities;
  std::mt19937_64 rng(seed);
  save_corpus(out, synth_corpus(opts, rng));
  return 0;
}

int cmd_permute(const std::string& corpus, std::size_t k, std::uint64_t seed,
                const std::string& out) {
  auto docs = load_corpus(corpus);
  std::mt19937_64 rng(seed);
  std::vector<PermutationPair> perms;
  std::size_t skipped = 0;
  for (const auto& doc : docs) {
    if (doc.sentences.size() < 2) {
      ++skipped;
      continue;
    }
    for (auto& p : generate_permutations(doc, k, rng)) perms.push_back(std::move(p));
  }
  save_perms(out, perms);
  if (skipped)
    std::cerr << "warning: skipped " << skipped
              << " document(s) with fewer than 2 sentences\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& task_flag,
              const std::string& arch_flag, std::size_t seeds_flag) {
  CliConfig cfg = parse_config_file(config_path);
  if (!task_flag.empty()) {
    cfg.task = cfg_parse([&] { return task_kind_from_string(task_flag); });
    cfg.task_set = true;
  }
  if (!cfg.task_set) throw ConfigError("no task selected (config or --task)");
  if (!arch_flag.empty()) cfg.spec.kind = parse_arch(arch_flag);
  if (seeds_flag) cfg.train.n_seeds = seeds_flag;
  try {
    cfg.train.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  if ((cfg.spec.kind == ArchKind::hierarchical ||
       cfg.spec.kind == ArchKind::fact_aware) &&
      !cfg.spec.doc_encoder_cfg)
    cfg.spec.doc_encoder_cfg = cfg.spec.encoder_cfg;

  Dataset data = load_dataset(cfg, cfg.spec.kind, cfg.task);
  std::filesystem::create_directories(cfg.out_dir);
  const std::filesystem::path out_dir(cfg.out_dir);

  if (cfg.train.n_seeds == 1) {
    Model model;
    RunResult run = train_task(cfg.spec, cfg.train, data, cfg.task, &model);
    std::ofstream(out_dir / ("run_seed" + std::to_string(run.seed) + ".json"))
        << run_report_json(run).dump(2) << "\n";
    save_model((out_dir / "model").string(), model);
    save_vocab((out_dir / "model.vocab.json").string(),
               training_vocabulary(data));
    std::cout << run_report_json(run).dump(2) << "\n";
    return 0;
  }

  MultiSeedResult agg = multi_seed(cfg.spec, cfg.train, data, cfg.task);
  for (const auto& run : agg.runs)
    std::ofstream(out_dir / ("run_seed" + std::to_string(run.seed) + ".json"))
        << run_report_json(run).dump(2) << "\n";
  std::ofstream(out_dir / "aggregate.json")
      << aggregate_report_json(agg).dump(2) << "\n";
  std::cout << json{{"mean", agg.mean}, {"std", agg.stddev}}.dump(2) << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& corpus,
             const std::string& task_s, const std::string& perms,
             const std::string& facts) {
  Model model = load_model(checkpoint);
  Vocabulary vocab = load_vocab(checkpoint + ".vocab.json");
  TaskKind task = cfg_parse([&] { return task_kind_from_string(task_s); });
  CliConfig cfg;
  cfg.corpus_path = corpus;
  cfg.perms_path = perms;
  cfg.facts_path = facts;
  cfg.n_eval = 0;
  if (task == TaskKind::order && perms.empty())
    throw ConfigError("ordering task needs --perms");
  Dataset data = load_dataset(cfg, model.spec.kind, task);
  auto metrics = evaluate_model(model, vocab, data, task);
  json report = json::array();
  for (const auto& [name, value] : metrics)
    report.push_back(json{{"task", to_string(task)},
                          {"metric", name},
                          {"value", value},
                          {"n", data.docs.size()}});
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& arch_s, double tol, std::uint64_t seed) {
  ArchKind kind = parse_arch(arch_s);
  ModelGradcheck r = gradcheck_architecture(kind, tol, seed);
  std::cout << json{{"arch", to_string(kind)},
                    {"tol", tol},
                    {"pass", r.pass},
                    {"max_rel_err", r.max_rel_err},
                    {"worst_param", r.worst_param}}
                   .dump(2)
            << "\n";
  return r.pass ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coherence_lab: toy transformer coherence models"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic corpus");
  std::string gen_out;
  std::size_t gen_docs = 0, gen_sents = 4, gen_entities = 30;
  std::uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "output corpus.jsonl")->required();
  gen->add_option("--docs", gen_docs, "number of documents")->required();
  gen->add_option("--sents", gen_sents, "sentences per document");
  gen->add_option("--entities", gen_entities, "entity inventory size");
  gen->add_option("--seed", gen_seed, "rng seed");

  auto* perm = app.add_subcommand("permute", "emit sentence permutations");
  std::string perm_corpus, perm_out;
  std::size_t perm_k = 20;
  std::uint64_t perm_seed = 0;
  perm->add_option("--corpus", perm_corpus, "input corpus.jsonl")->required();
  perm->add_option("--k", perm_k, "permutations per document");
  perm->add_option("--seed", perm_seed, "rng seed");
  perm->add_option("--out", perm_out, "output perms.jsonl")->required();

  auto* train = app.add_subcommand("train", "train one architecture on one task");
  std::string train_config, train_task_s, train_arch;
  std::size_t train_seeds = 0;
  train->add_option("--config", train_config, "JSON config file")->required();
  train->add_option("--task", train_task_s, "2way|3way|order|score");
  train->add_option("--arch", train_arch, "vanilla|hier|mtl|fact");
  train->add_option("--seeds", train_seeds, "number of seeds (overrides config)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
  std::string eval_ckpt, eval_corpus, eval_task, eval_perms, eval_facts;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint prefix")->required();
  eval->add_option("--corpus", eval_corpus, "corpus.jsonl")->required();
  eval->add_option("--task", eval_task, "2way|3way|order|score")->required();
  eval->add_option("--perms", eval_perms, "perms.jsonl (ordering task)");
  eval->add_option("--facts", eval_facts, "facts.jsonl (fact-aware model)");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  std::string gc_arch;
  double gc_tol = 1e-4;
  std::uint64_t gc_seed = 0;
  gc->add_option("--arch", gc_arch, "vanilla|hier|mtl|fact")->required();
  gc->add_option("--tol", gc_tol, "max relative error");
  gc->add_option("--seed", gc_seed, "rng seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed())
      return cmd_gen_synth(gen_out, gen_docs, gen_sents, gen_entities, gen_seed);
    if (perm->parsed()) return cmd_permute(perm_corpus, perm_k, perm_seed, perm_out);
    if (train->parsed())
      return cmd_train(train_config, train_task_s, train_arch, train_seeds);
    if (eval->parsed())
      return cmd_eval(eval_ckpt, eval_corpus, eval_task, eval_perms, eval_facts);
    if (gc->parsed()) return cmd_gradcheck(gc_arch, gc_tol, gc_seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const TensorError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
