#pragma once

#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "cohlab/tensor.hpp"

namespace cohlab {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Vocabulary {
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kCls = 2;
  static constexpr std::size_t kSep = 3;

  std::vector<std::string> id_to_token;  // index == id; [0,3] are specials
  std::unordered_map<std::string, std::size_t> token_to_id;

  std::size_t size() const { return id_to_token.size(); }
  /// UNK for out-of-vocabulary tokens.
  std::size_t id_of(const std::string& token) const;
  const std::string& token_of(std::size_t id) const;
};

struct Document {
  std::string id;
  std::string text;
  std::vector<std::string> sentences;
  std::optional<std::string> label3;       // "low" | "medium" | "high"
  std::vector<int> expert_scores;          // each in {1,2,3}
  std::optional<double> gold_score;
};

struct Fact {
  std::string doc_id;
  std::size_t sentence_index = 0;
  std::string subject, verb, object;
};

struct PermutationPair {
  std::string original_id;
  int perm_index = 0;
  std::vector<std::size_t> order;  // new_sentences[i] = sentences[order[i]]
};

struct EntailmentExample {
  std::string premise;
  std::string hypothesis;
  bool entailment = false;
};

enum class BinaryLabel { non_coherent, other };

/// Lower-cased word/punctuation surface tokens, whitespace-split.
std::vector<std::string> word_tokens(const std::string& text);

Vocabulary build_vocab(const std::vector<Document>& corpus, std::size_t min_freq);
std::vector<std::size_t> tokenize(const Vocabulary& vocab, const std::string& text);
std::string detokenize(const Vocabulary& vocab, const std::vector<std::size_t>& ids);

std::vector<std::string> segment_sentences(const std::string& text);

/// Up to k distinct non-identity sentence orderings, uniform without
/// replacement; orderings whose applied sentence sequence reproduces the
/// original (possible with duplicate sentences) are excluded.
std::vector<PermutationPair> generate_permutations(const Document& doc,
                                                   std::size_t k,
                                                   std::mt19937_64& rng);

std::vector<std::string> apply_order(const std::vector<std::string>& sentences,
                                     const std::vector<std::size_t>& order);
std::vector<std::size_t> inverse_order(const std::vector<std::size_t>& order);

/// First longest case-insensitive lexicon-verb match splits each sentence
/// into (subject, verb, object); a fact is emitted only when both sides are
/// non-empty after stripping punctuation.
std::vector<Fact> extract_facts_naive(const Document& doc,
                                      const std::vector<std::string>& verb_lexicon);

BinaryLabel derive_binary_label(const std::vector<int>& expert_scores);
double derive_gold_score(const std::vector<int>& expert_scores);

struct SynthOptions {
  std::size_t n_docs = 0;
  std::size_t sents_per_doc = 4;
  std::size_t n_entities = 30;
  bool coherent_only = false;  // emit only intact-chain (high) documents
};

/// Entity-chain synthetic corpus: adjacent sentences of a coherent document
/// share exactly one entity token; degraded variants break the chain and
/// carry lower labels/expert scores.
std::vector<Document> synth_corpus(const SynthOptions& opts, std::mt19937_64& rng);

/// Verbs the synthetic corpus draws from; doubles as the extraction lexicon.
const std::vector<std::string>& synth_verb_lexicon();

// JSONL readers/writers. Writers re-parse their own output as a self-check.
std::vector<Document> load_corpus(const std::string& path);
void save_corpus(const std::string& path, const std::vector<Document>& docs);
std::vector<Fact> load_facts_sidecar(const std::string& path,
                                     const std::vector<Document>& corpus);
void save_facts(const std::string& path, const std::vector<Fact>& facts);
std::vector<EntailmentExample> load_entailment(const std::string& path);
void save_entailment(const std::string& path,
                     const std::vector<EntailmentExample>& items);
std::vector<PermutationPair> load_perms(const std::string& path);
void save_perms(const std::string& path, const std::vector<PermutationPair>& perms);

}  // namespace cohlab
