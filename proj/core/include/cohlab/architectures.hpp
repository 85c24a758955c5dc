#pragma once

#include <optional>

#include "cohlab/encoder.hpp"
#include "cohlab/text.hpp"

namespace cohlab {

enum class TaskHeadKind { classify2, classify3, regress, rank_score, entail };
enum class ArchKind { vanilla, hierarchical, mtl, fact_aware };

TaskHeadKind task_head_kind_from_string(const std::string& s);
std::string to_string(TaskHeadKind k);
ArchKind arch_kind_from_string(const std::string& s);
std::string to_string(ArchKind k);

/// Output width per head kind: classify2/entail -> 2, classify3 -> 3,
/// regress/rank_score -> 1.
std::size_t head_output_dim(TaskHeadKind kind);

struct TaskHeadParams {
  TaskHeadKind kind = TaskHeadKind::classify3;
  std::size_t hidden_dim = 32;
  Tensor w1, b1;  // dense + ReLU
  Tensor w2, b2;  // task-specific output layer

  std::vector<std::pair<std::string, Tensor>> named(const std::string& prefix) const;
};

struct ArchitectureSpec {
  ArchKind kind = ArchKind::vanilla;
  EncoderConfig encoder_cfg;
  std::optional<EncoderConfig> doc_encoder_cfg;  // hierarchical / fact-aware
  PoolStrategy pooling = PoolStrategy::mean;     // hierarchical sentence pooling
  TaskHeadKind head_kind = TaskHeadKind::classify3;
  std::size_t head_hidden = 32;
  bool per_sentence_mode = false;  // hierarchical: one encoder pass per sentence

  void validate() const;
};

struct Model {
  ArchitectureSpec spec;
  EncoderParams encoder;                    // shared first-level encoder
  std::optional<EncoderParams> doc_encoder; // second-level stack
  Tensor doc_cls;      // learned CLS embedding for the second-level input
  Tensor pool_query;   // [d x 1] query for attention pooling
  TaskHeadParams head;
  std::optional<TaskHeadParams> aux_head;   // MTL entailment head

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
};

Model init_model(const ArchitectureSpec& spec, std::mt19937_64& rng,
                 double init_std = 0.02);

/// One tokenized fact: [CLS] subject [SEP] verb [SEP] object.
struct FactTokens {
  std::size_t sentence_index = 0;
  std::vector<std::size_t> tokens;
};

/// Architecture-ready view of one document.
struct DocInput {
  std::vector<std::size_t> tokens;  // [CLS] + word ids (vanilla/mtl/fact doc path)
  std::vector<bool> mask;
  std::vector<std::vector<std::size_t>> sentence_tokens;  // hierarchical
  std::vector<FactTokens> facts;                          // fact-aware
};

/// Tokenizes a document for the given architecture. Facts are ordered by
/// (sentence_index, file order); a fact pointing past the document's last
/// sentence raises DataError.
DocInput prepare_doc(const Vocabulary& vocab, const Document& doc,
                     const ArchitectureSpec& spec,
                     const std::vector<Fact>& facts = {});

DocInput prepare_pair_input(const Vocabulary& vocab, const std::string& premise,
                            const std::string& hypothesis,
                            const ArchitectureSpec& spec);

Tensor head_forward(const TaskHeadParams& head, const Tensor& x,
                    const RunContext& ctx, double dropout_p);

/// Document representation [d_model] for any architecture kind.
Tensor doc_representation(const Model& model, const DocInput& doc,
                          const RunContext& ctx);

/// Batched forward through the primary task head -> [B x out_dim].
Tensor forward_batch(const Model& model, const std::vector<DocInput>& docs,
                     const RunContext& ctx);

Tensor vanilla_forward(const Model& model, const std::vector<DocInput>& docs,
                       const RunContext& ctx);
Tensor hierarchical_forward(const Model& model, const std::vector<DocInput>& docs,
                            const RunContext& ctx);
Tensor fact_aware_forward(const Model& model, const std::vector<DocInput>& docs,
                          const RunContext& ctx);

struct MtlResult {
  Tensor coh_out;      // [B x out]
  Tensor entail_out;   // [B2 x 2]
  Tensor coh_loss;
  Tensor entail_loss;
  Tensor joint_loss;   // coh_loss + entail_loss, unit weights
};

MtlResult mtl_forward(const Model& model, const std::vector<DocInput>& coh_batch,
                      const std::vector<std::size_t>& coh_targets,
                      const std::vector<DocInput>& entail_batch,
                      const std::vector<std::size_t>& entail_targets,
                      const RunContext& ctx);

struct SiameseResult {
  Tensor score_a;
  Tensor score_b;
  Tensor loss;
};

/// Both branches share every weight; doc_a is the coherent/original document
/// during training.
SiameseResult siamese_rank(const Model& model, const DocInput& doc_a,
                           const DocInput& doc_b, double margin,
                           const RunContext& ctx);

}  // namespace cohlab
