#include "cohlab/checkpoint.hpp"

#include <fstream>
#include <random>
#include <unordered_map>

namespace cohlab {

using nlohmann::json;

json encoder_config_to_json(const EncoderConfig& cfg) {
  return json{{"n_layers", cfg.n_layers},   {"n_heads", cfg.n_heads},
              {"d_model", cfg.d_model},     {"d_ff", cfg.d_ff},
              {"dropout_p", cfg.dropout_p}, {"max_seq_len", cfg.max_seq_len},
              {"vocab_size", cfg.vocab_size}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig cfg;
  cfg.n_layers = j.at("n_layers").get<std::size_t>();
  cfg.n_heads = j.at("n_heads").get<std::size_t>();
  cfg.d_model = j.at("d_model").get<std::size_t>();
  cfg.d_ff = j.at("d_ff").get<std::size_t>();
  cfg.dropout_p = j.value("dropout_p", 0.1);
  cfg.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
  return cfg;
}

json arch_spec_to_json(const ArchitectureSpec& spec) {
  json j{{"kind", to_string(spec.kind)},
         {"encoder_cfg", encoder_config_to_json(spec.encoder_cfg)},
         {"pooling", to_string(spec.pooling)},
         {"head_kind", to_string(spec.head_kind)},
         {"head_hidden", spec.head_hidden},
         {"per_sentence_mode", spec.per_sentence_mode}};
  if (spec.doc_encoder_cfg)
    j["doc_encoder_cfg"] = encoder_config_to_json(*spec.doc_encoder_cfg);
  return j;
}

ArchitectureSpec arch_spec_from_json(const json& j) {
  ArchitectureSpec spec;
  spec.kind = arch_kind_from_string(j.at("kind").get<std::string>());
  spec.encoder_cfg = encoder_config_from_json(j.at("encoder_cfg"));
  if (j.contains("doc_encoder_cfg"))
    spec.doc_encoder_cfg = encoder_config_from_json(j.at("doc_encoder_cfg"));
  spec.pooling = pool_strategy_from_string(j.value("pooling", "mean"));
  spec.head_kind = task_head_kind_from_string(j.at("head_kind").get<std::string>());
  spec.head_hidden = j.value("head_hidden", std::size_t{32});
  spec.per_sentence_mode = j.value("per_sentence_mode", false);
  spec.validate();
  return spec;
}

void save_model(const std::string& prefix, const Model& model) {
  json manifest;
  manifest["arch"] = arch_spec_to_json(model.spec);
  json params = json::array();
  std::ofstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw DataError("cannot open " + prefix + ".bin for writing");
  std::size_t offset = 0;
  for (const auto& [name, t] : model.named_parameters()) {
    params.push_back(json{{"name", name},
                          {"shape", t.shape()},
                          {"offset", offset},
                          {"count", t.size()}});
    static_assert(sizeof(double) == 8);
    bin.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
    offset += t.size();
  }
  bin.close();
  if (!bin) throw DataError("failed writing " + prefix + ".bin");
  manifest["params"] = std::move(params);
  std::ofstream out(prefix + ".json");
  if (!out) throw DataError("cannot open " + prefix + ".json for writing");
  out << manifest.dump(2) << "\n";
}

Model load_model(const std::string& prefix) {
  std::ifstream in(prefix + ".json");
  if (!in) throw DataError("cannot open checkpoint manifest " + prefix + ".json");
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw ParseError(prefix + ".json: " + e.what());
  }
  ArchitectureSpec spec = arch_spec_from_json(manifest.at("arch"));
  std::mt19937_64 rng(0);
  Model model = init_model(spec, rng);

  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw DataError("cannot open checkpoint data " + prefix + ".bin");

  std::unordered_map<std::string, Tensor> by_name;
  for (auto& [name, t] : model.named_parameters()) by_name.emplace(name, t);

  std::size_t loaded = 0;
  for (const auto& p : manifest.at("params")) {
    const std::string name = p.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw DataError("checkpoint parameter '" + name + "' unknown to this model");
    Tensor t = it->second;
    const Shape shape = p.at("shape").get<Shape>();
    if (shape != t.shape())
      throw DataError("checkpoint parameter '" + name + "' has shape " +
                      shape_str(shape) + ", expected " + shape_str(t.shape()));
    bin.seekg(static_cast<std::streamoff>(p.at("offset").get<std::size_t>() *
                                          sizeof(double)));
    bin.read(reinterpret_cast<char*>(t.data().data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!bin) throw DataError("checkpoint data truncated at parameter '" + name + "'");
    ++loaded;
  }
  if (loaded != by_name.size())
    throw DataError("checkpoint holds " + std::to_string(loaded) +
                    " parameters, model expects " + std::to_string(by_name.size()));
  return model;
}

}  // namespace cohlab
