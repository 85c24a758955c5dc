#pragma once

#include <map>
#include <optional>

#include <json.hpp>

#include "cohlab/architectures.hpp"

namespace cohlab {

enum class TaskKind { classify2, classify3, order, score };
enum class OptimizerKind { adam, adamw };

TaskKind task_kind_from_string(const std::string& s);
std::string to_string(TaskKind k);
OptimizerKind optimizer_kind_from_string(const std::string& s);
std::string to_string(OptimizerKind k);

struct TrainConfig {
  std::size_t epochs = 10;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;  // decoupled; plain adam ignores it
  double dropout_p = 0.1;
  double margin = 1.0;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  std::size_t n_seeds = 10;
  OptimizerKind optimizer = OptimizerKind::adamw;
  double clip_norm = 1.0;  // global-norm gradient clipping; <= 0 disables
  bool freeze_embeddings = false;
  double init_std = 0.02;

  void validate() const;
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

struct AdamState {
  std::vector<std::vector<double>> m, v;  // first/second moments per tensor
  std::size_t step = 0;
};

AdamState init_adam_state(const NamedParams& params);

/// Adaptive-moment update with bias correction; missing grads count as zero.
/// Plain adam never touches weight_decay.
void adam_step(const NamedParams& params, AdamState& state, const TrainConfig& cfg);
/// Decoupled decay theta <- theta - lr*wd*theta, applied before the moment
/// update term. Bitwise equal to adam_step when weight_decay == 0.
void adamw_step(const NamedParams& params, AdamState& state, const TrainConfig& cfg);

/// Scales all grads by clip_norm/norm when the global L2 norm exceeds
/// clip_norm. Returns the pre-clip norm.
double clip_global_norm(const NamedParams& params, double clip_norm);

/// Deterministic per-purpose RNG so toggling dropout never perturbs
/// shuffling: each name hashes to an independent stream of `seed`.
std::mt19937_64 rng_substream(std::uint64_t seed, const std::string& name);

struct Dataset {
  std::vector<Document> docs;
  std::vector<Fact> facts;               // fact-aware architecture
  std::vector<PermutationPair> perms;    // ordering task
  std::vector<EntailmentExample> entail; // MTL auxiliary task
  /// Held-out split = last n_eval docs; unset -> 20% of docs (floor, can be 0).
  std::optional<std::size_t> n_eval;
};

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<double> epoch_losses;       // train-mode, example-weighted mean
  std::vector<double> epoch_eval_losses;  // eval-mode loss on the train split
  std::map<std::string, double> metrics;  // train_*/eval_* per task
};

RunResult train_task(const ArchitectureSpec& spec, const TrainConfig& cfg,
                     const Dataset& data, TaskKind task);

/// Like train_task but also hands back the trained model (for checkpointing).
RunResult train_task(const ArchitectureSpec& spec, const TrainConfig& cfg,
                     const Dataset& data, TaskKind task, Model* out_model);

struct MultiSeedResult {
  std::vector<RunResult> runs;  // seeds cfg.seed .. cfg.seed + n_seeds - 1
  std::map<std::string, double> mean;
  std::map<std::string, double> stddev;  // population std
};

/// Runs n_seeds independent runs, possibly across worker threads
/// (COHERENCE_LAB_THREADS caps the count; n_threads=0 -> auto).
MultiSeedResult multi_seed(const ArchitectureSpec& spec, const TrainConfig& cfg,
                           const Dataset& data, TaskKind task,
                           std::size_t n_threads = 0);

/// Metrics of a trained model on a corpus, keyed by metric name.
std::map<std::string, double> evaluate_model(const Model& model,
                                             const Vocabulary& vocab,
                                             const Dataset& data, TaskKind task,
                                             double margin = 1.0,
                                             std::size_t batch_size = 8);

/// The vocabulary train_task builds internally (docs plus entailment text).
Vocabulary training_vocabulary(const Dataset& data);

struct ModelGradcheck {
  bool pass = false;
  double max_rel_err = 0.0;
  std::string worst_param;
};

/// Central-difference check of a full forward pass (probe-projection loss)
/// against the analytic gradients, spot-checking elements of every parameter.
ModelGradcheck gradcheck_architecture(ArchKind kind, double tol = 1e-4,
                                      std::uint64_t seed = 0);

nlohmann::json run_report_json(const RunResult& run);
nlohmann::json aggregate_report_json(const MultiSeedResult& agg);

}  // namespace cohlab
