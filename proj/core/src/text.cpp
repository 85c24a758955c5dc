#include "cohlab/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace cohlab {

using nlohmann::json;

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '\'';
}

bool is_punct_token(const std::string& t) {
  return t.size() == 1 && !is_word_char(t[0]);
}

const std::set<std::string>& abbreviations() {
  static const std::set<std::string> abbr{
      "mr.", "mrs.", "ms.", "dr.", "prof.", "st.", "jr.", "sr.", "vs.",
      "etc.", "e.g.", "i.e.", "no.", "inc.", "ltd.", "co.", "u.s.", "a.m.",
      "p.m."};
  return abbr;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

void validate_scores(const std::vector<int>& scores) {
  for (int v : scores)
    if (v < 1 || v > 3)
      throw DataError("expert score " + std::to_string(v) +
                      " outside {1,2,3}");
}

}  // namespace

std::size_t Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(std::size_t id) const {
  if (id >= id_to_token.size())
    throw IndexError("token id " + std::to_string(id) + " out of vocabulary");
  return id_to_token[id];
}

std::vector<std::string> word_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (is_word_char(c)) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
      if (!std::isspace(static_cast<unsigned char>(c)))
        out.push_back(std::string(1, c));
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

Vocabulary build_vocab(const std::vector<Document>& corpus, std::size_t min_freq) {
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> freq;  // ordered map for determinism
  for (const auto& doc : corpus)
    for (const auto& tok : word_tokens(doc.text)) ++freq[tok];

  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, n] : freq)
    if (n >= min_freq) kept.emplace_back(tok, n);
  // frequency descending, then lexicographic
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary v;
  v.id_to_token = {"<pad>", "<unk>", "<cls>", "<sep>"};
  for (const auto& [tok, n] : kept) v.id_to_token.push_back(tok);
  for (std::size_t i = 0; i < v.id_to_token.size(); ++i)
    v.token_to_id[v.id_to_token[i]] = i;
  return v;
}

std::vector<std::size_t> tokenize(const Vocabulary& vocab, const std::string& text) {
  std::vector<std::size_t> ids;
  for (const auto& tok : word_tokens(text)) ids.push_back(vocab.id_of(tok));
  return ids;
}

std::string detokenize(const Vocabulary& vocab, const std::vector<std::size_t>& ids) {
  std::string out;
  for (std::size_t id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += vocab.token_of(id);
  }
  return out;
}

std::vector<std::string> segment_sentences(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    cur.push_back(c);
    if (c == '.' || c == '!' || c == '?') {
      const bool at_end = i + 1 >= text.size();
      const bool ws_next =
          !at_end && std::isspace(static_cast<unsigned char>(text[i + 1])) != 0;
      if (!at_end && !ws_next) continue;
      if (c == '.') {
        // keep abbreviations like "Mr." inside the sentence
        std::size_t e = cur.size();
        std::size_t b = e;
        while (b > 0 && !std::isspace(static_cast<unsigned char>(cur[b - 1]))) --b;
        const std::string last = lower(cur.substr(b, e - b));
        if (abbreviations().count(last)) continue;
      }
      const std::string s = trim(cur);
      if (!s.empty()) out.push_back(s);
      cur.clear();
    }
  }
  const std::string tail = trim(cur);
  if (!tail.empty()) out.push_back(tail);
  return out;
}

std::vector<std::string> apply_order(const std::vector<std::string>& sentences,
                                     const std::vector<std::size_t>& order) {
  if (order.size() != sentences.size())
    throw DataError("permutation order length != sentence count");
  std::vector<std::string> out(order.size());
  std::vector<bool> seen(order.size(), false);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] >= sentences.size() || seen[order[i]])
      throw DataError("permutation order is not a bijection");
    seen[order[i]] = true;
    out[i] = sentences[order[i]];
  }
  return out;
}

std::vector<std::size_t> inverse_order(const std::vector<std::size_t>& order) {
  std::vector<std::size_t> inv(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) inv[order[i]] = i;
  return inv;
}

std::vector<PermutationPair> generate_permutations(const Document& doc,
                                                   std::size_t k,
                                                   std::mt19937_64& rng) {
  const std::size_t n = doc.sentences.size();
  if (n < 2)
    throw DataError("document '" + doc.id +
                    "' has fewer than 2 sentences and is excluded");

  auto seq_key = [&](const std::vector<std::size_t>& order) {
    std::string key;
    for (std::size_t i : order) {
      key += doc.sentences[i];
      key.push_back('\x1f');
    }
    return key;
  };
  std::string original_key;
  {
    std::vector<std::size_t> ident(n);
    std::iota(ident.begin(), ident.end(), 0);
    original_key = seq_key(ident);
  }

  std::set<std::string> used;
  std::vector<std::vector<std::size_t>> orders;
  auto try_add = [&](const std::vector<std::size_t>& order) {
    const std::string key = seq_key(order);
    if (key == original_key || used.count(key)) return;
    used.insert(key);
    orders.push_back(order);
  };

  // uniform rejection sampling, capped at 50*k attempts
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t attempt = 0; attempt < 50 * k && orders.size() < k; ++attempt) {
    std::shuffle(order.begin(), order.end(), rng);
    try_add(order);
  }

  // exhaustive enumeration fallback guarantees min(k, n!-1) for small n
  if (orders.size() < k && n <= 8) {
    std::vector<std::vector<std::size_t>> all;
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    std::set<std::string> have;
    for (const auto& o : orders) have.insert(seq_key(o));
    do {
      const std::string key = seq_key(p);
      if (key != original_key && !have.count(key)) {
        have.insert(key);
        all.push_back(p);
      }
    } while (std::next_permutation(p.begin(), p.end()));
    std::shuffle(all.begin(), all.end(), rng);
    for (const auto& o : all) {
      if (orders.size() >= k) break;
      orders.push_back(o);
    }
  }

  std::vector<PermutationPair> out;
  for (std::size_t i = 0; i < orders.size(); ++i)
    out.push_back({doc.id, static_cast<int>(i), orders[i]});
  return out;
}

std::vector<Fact> extract_facts_naive(const Document& doc,
                                      const std::vector<std::string>& verb_lexicon) {
  if (verb_lexicon.empty()) throw DataError("extract_facts_naive: empty lexicon");
  std::vector<std::vector<std::string>> phrases;
  for (const auto& v : verb_lexicon) phrases.push_back(word_tokens(v));

  auto join_side = [](const std::vector<std::string>& toks, std::size_t b,
                      std::size_t e) {
    std::string out;
    for (std::size_t i = b; i < e; ++i) {
      if (is_punct_token(toks[i])) continue;
      if (!out.empty()) out.push_back(' ');
      out += toks[i];
    }
    return out;
  };

  std::vector<Fact> facts;
  for (std::size_t si = 0; si < doc.sentences.size(); ++si) {
    const auto toks = word_tokens(doc.sentences[si]);
    std::size_t best_start = toks.size(), best_len = 0;
    for (std::size_t start = 0; start < toks.size() && best_len == 0; ++start) {
      for (const auto& ph : phrases) {
        if (ph.empty() || start + ph.size() > toks.size()) continue;
        bool match = true;
        for (std::size_t j = 0; j < ph.size() && match; ++j)
          match = toks[start + j] == ph[j];
        if (match && ph.size() > best_len) {
          best_start = start;
          best_len = ph.size();
        }
      }
    }
    if (best_len == 0) continue;
    const std::string subj = join_side(toks, 0, best_start);
    const std::string obj = join_side(toks, best_start + best_len, toks.size());
    if (subj.empty() || obj.empty()) continue;
    Fact f;
    f.doc_id = doc.id;
    f.sentence_index = si;
    f.subject = subj;
    f.verb = join_side(toks, best_start, best_start + best_len);
    f.object = obj;
    facts.push_back(std::move(f));
  }
  return facts;
}

BinaryLabel derive_binary_label(const std::vector<int>& expert_scores) {
  validate_scores(expert_scores);
  const long lows = std::count(expert_scores.begin(), expert_scores.end(), 1);
  return lows >= 2 ? BinaryLabel::non_coherent : BinaryLabel::other;
}

double derive_gold_score(const std::vector<int>& expert_scores) {
  if (expert_scores.empty()) throw DataError("derive_gold_score: empty score list");
  validate_scores(expert_scores);
  const double s = std::accumulate(expert_scores.begin(), expert_scores.end(), 0.0);
  return s / static_cast<double>(expert_scores.size());
}

const std::vector<std::string>& synth_verb_lexicon() {
  static const std::vector<std::string> verbs{"introduces", "meets", "calls",
                                              "follows", "greets"};
  return verbs;
}

std::vector<Document> synth_corpus(const SynthOptions& opts, std::mt19937_64& rng) {
  if (opts.n_docs == 0) return {};
  if (opts.sents_per_doc < 2)
    throw DataError("synth_corpus: sents_per_doc must be >= 2");
  if (opts.n_entities < opts.sents_per_doc + 1)
    throw DataError("synth_corpus: need more entities than sentences per doc");

  const std::vector<std::string>& verbs = synth_verb_lexicon();
  std::vector<Document> docs;
  for (std::size_t d = 0; d < opts.n_docs; ++d) {
    // distinct entity chain e_{c0} -> e_{c1} -> ...
    std::vector<std::size_t> pool(opts.n_entities);
    std::iota(pool.begin(), pool.end(), 0);
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<std::string> sentences;
    for (std::size_t s = 0; s < opts.sents_per_doc; ++s) {
      std::uniform_int_distribution<std::size_t> pick(0, verbs.size() - 1);
      sentences.push_back("ent" + std::to_string(pool[s]) + " " +
                          verbs[pick(rng)] + " ent" + std::to_string(pool[s + 1]) +
                          " .");
    }

    const int variant = opts.coherent_only ? 2 : static_cast<int>(d % 3);
    Document doc;
    doc.id = "synth-" + std::to_string(d);
    if (variant == 0) {
      // low coherence: shuffle until the chain is broken
      std::vector<std::string> shuffled = sentences;
      do {
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
      } while (shuffled == sentences);
      sentences = shuffled;
      doc.label3 = "low";
      doc.expert_scores = {1, 1, 2};
    } else if (variant == 1) {
      // medium: one adjacent swap breaks two links
      std::uniform_int_distribution<std::size_t> pick(0, sentences.size() - 2);
      const std::size_t i = pick(rng);
      std::swap(sentences[i], sentences[i + 1]);
      doc.label3 = "medium";
      doc.expert_scores = {2, 2, 3};
    } else {
      doc.label3 = "high";
      doc.expert_scores = {3, 3, 2};
    }
    doc.sentences = sentences;
    std::string text;
    for (const auto& s : sentences) {
      if (!text.empty()) text.push_back(' ');
      text += s;
    }
    doc.text = text;
    doc.gold_score = derive_gold_score(doc.expert_scores);
    docs.push_back(std::move(doc));
  }
  return docs;
}

// ---- JSONL ----------------------------------------------------------------

namespace {

json parse_line(const std::string& line, const std::string& path, std::size_t lineno) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
  }
}

template <typename Fn>
void for_each_line(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    fn(parse_line(line, path, lineno), lineno);
  }
}

void write_lines(const std::string& path, const std::vector<json>& lines) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  for (const auto& j : lines) out << j.dump() << "\n";
  out.close();
  if (!out) throw DataError("failed writing " + path);
}

}  // namespace

std::vector<Document> load_corpus(const std::string& path) {
  std::vector<Document> docs;
  for_each_line(path, [&](const json& j, std::size_t lineno) {
    try {
      Document d;
      d.id = j.at("id").get<std::string>();
      d.text = j.at("text").get<std::string>();
      if (j.contains("sentences"))
        d.sentences = j.at("sentences").get<std::vector<std::string>>();
      else
        d.sentences = segment_sentences(d.text);
      if (j.contains("label3")) {
        d.label3 = j.at("label3").get<std::string>();
        if (*d.label3 != "low" && *d.label3 != "medium" && *d.label3 != "high")
          throw DataError("label3 must be low|medium|high");
      }
      if (j.contains("expert_scores")) {
        d.expert_scores = j.at("expert_scores").get<std::vector<int>>();
        validate_scores(d.expert_scores);
      }
      if (j.contains("gold_score")) d.gold_score = j.at("gold_score").get<double>();
      docs.push_back(std::move(d));
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  });
  return docs;
}

void save_corpus(const std::string& path, const std::vector<Document>& docs) {
  std::vector<json> lines;
  for (const auto& d : docs) {
    json j{{"id", d.id}, {"text", d.text}, {"sentences", d.sentences}};
    if (d.label3) j["label3"] = *d.label3;
    if (!d.expert_scores.empty()) j["expert_scores"] = d.expert_scores;
    if (d.gold_score) j["gold_score"] = *d.gold_score;
    lines.push_back(std::move(j));
  }
  write_lines(path, lines);
  if (load_corpus(path).size() != docs.size())
    throw DataError("corpus writer self-check failed for " + path);
}

std::vector<Fact> load_facts_sidecar(const std::string& path,
                                     const std::vector<Document>& corpus) {
  std::unordered_map<std::string, std::size_t> sent_counts;
  for (const auto& d : corpus) sent_counts[d.id] = d.sentences.size();
  std::vector<Fact> facts;
  for_each_line(path, [&](const json& j, std::size_t lineno) {
    try {
      Fact f;
      f.doc_id = j.at("doc_id").get<std::string>();
      f.sentence_index = j.at("sentence_index").get<std::size_t>();
      f.subject = j.at("subject").get<std::string>();
      f.verb = j.at("verb").get<std::string>();
      f.object = j.at("object").get<std::string>();
      if (f.subject.empty() || f.verb.empty() || f.object.empty())
        throw DataError("fact fields must be non-empty");
      if (!corpus.empty()) {
        auto it = sent_counts.find(f.doc_id);
        if (it == sent_counts.end())
          throw DataError(path + ":" + std::to_string(lineno) +
                          ": fact references unknown document '" + f.doc_id + "'");
        if (f.sentence_index >= it->second)
          throw DataError(path + ":" + std::to_string(lineno) +
                          ": fact sentence_index " +
                          std::to_string(f.sentence_index) +
                          " out of range for document '" + f.doc_id + "' with " +
                          std::to_string(it->second) + " sentences");
      }
      facts.push_back(std::move(f));
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  });
  return facts;
}

void save_facts(const std::string& path, const std::vector<Fact>& facts) {
  std::vector<json> lines;
  for (const auto& f : facts)
    lines.push_back(json{{"doc_id", f.doc_id},
                         {"sentence_index", f.sentence_index},
                         {"subject", f.subject},
                         {"verb", f.verb},
                         {"object", f.object}});
  write_lines(path, lines);
  if (load_facts_sidecar(path, {}).size() != facts.size())
    throw DataError("facts writer self-check failed for " + path);
}

std::vector<EntailmentExample> load_entailment(const std::string& path) {
  std::vector<EntailmentExample> items;
  for_each_line(path, [&](const json& j, std::size_t lineno) {
    try {
      EntailmentExample e;
      e.premise = j.at("premise").get<std::string>();
      e.hypothesis = j.at("hypothesis").get<std::string>();
      const std::string label = j.at("label").get<std::string>();
      if (label == "entailment")
        e.entailment = true;
      else if (label == "not_entailment")
        e.entailment = false;
      else
        throw DataError("label must be entailment|not_entailment");
      items.push_back(std::move(e));
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  });
  return items;
}

void save_entailment(const std::string& path,
                     const std::vector<EntailmentExample>& items) {
  std::vector<json> lines;
  for (const auto& e : items)
    lines.push_back(json{{"premise", e.premise},
                         {"hypothesis", e.hypothesis},
                         {"label", e.entailment ? "entailment" : "not_entailment"}});
  write_lines(path, lines);
  if (load_entailment(path).size() != items.size())
    throw DataError("entailment writer self-check failed for " + path);
}

std::vector<PermutationPair> load_perms(const std::string& path) {
  std::vector<PermutationPair> perms;
  for_each_line(path, [&](const json& j, std::size_t lineno) {
    try {
      PermutationPair p;
      p.original_id = j.at("original_id").get<std::string>();
      p.perm_index = j.at("perm_index").get<int>();
      p.order = j.at("order").get<std::vector<std::size_t>>();
      std::vector<bool> seen(p.order.size(), false);
      bool identity = true;
      for (std::size_t i = 0; i < p.order.size(); ++i) {
        if (p.order[i] >= p.order.size() || seen[p.order[i]])
          throw DataError("order is not a bijection");
        seen[p.order[i]] = true;
        identity = identity && p.order[i] == i;
      }
      if (identity)
        throw DataError(path + ":" + std::to_string(lineno) +
                        ": identity ordering not allowed");
      perms.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  });
  return perms;
}

void save_perms(const std::string& path, const std::vector<PermutationPair>& perms) {
  std::vector<json> lines;
  for (const auto& p : perms)
    lines.push_back(json{{"original_id", p.original_id},
                         {"perm_index", p.perm_index},
                         {"order", p.order}});
  write_lines(path, lines);
  if (load_perms(path).size() != perms.size())
    throw DataError("perms writer self-check failed for " + path);
}

}  // namespace cohlab
