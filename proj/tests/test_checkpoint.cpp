#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "cohlab/checkpoint.hpp"

using namespace cohlab;

namespace {

ArchitectureSpec small_spec(ArchKind kind) {
  ArchitectureSpec spec;
  spec.kind = kind;
  spec.encoder_cfg = {2, 2, 16, 32, 0.1, 64, 40};
  if (kind == ArchKind::hierarchical || kind == ArchKind::fact_aware)
    spec.doc_encoder_cfg = EncoderConfig{1, 2, 16, 32, 0.1, 32, 40};
  if (kind == ArchKind::mtl) spec.head_kind = TaskHeadKind::classify2;
  return spec;
}

struct TmpDir {
  std::filesystem::path path;
  TmpDir() {
    path = std::filesystem::temp_directory_path() /
           ("cohlab_ckpt_" + std::to_string(std::rand()));
    std::filesystem::create_directories(path);
  }
  ~TmpDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("spec json round trip") {
  for (ArchKind kind : {ArchKind::vanilla, ArchKind::hierarchical, ArchKind::mtl,
                        ArchKind::fact_aware}) {
    ArchitectureSpec spec = small_spec(kind);
    ArchitectureSpec back = arch_spec_from_json(arch_spec_to_json(spec));
    CHECK(back.kind == spec.kind);
    CHECK(back.encoder_cfg.d_model == spec.encoder_cfg.d_model);
    CHECK(back.encoder_cfg.vocab_size == spec.encoder_cfg.vocab_size);
    CHECK(back.doc_encoder_cfg.has_value() == spec.doc_encoder_cfg.has_value());
    CHECK(back.head_kind == spec.head_kind);
  }
}

TEST_CASE("model checkpoint round trip is bitwise") {
  TmpDir tmp;
  for (ArchKind kind : {ArchKind::vanilla, ArchKind::hierarchical, ArchKind::mtl,
                        ArchKind::fact_aware}) {
    std::mt19937_64 rng(7 + static_cast<unsigned>(kind));
    Model model = init_model(small_spec(kind), rng);
    const std::string prefix = (tmp.path / to_string(kind)).string();
    save_model(prefix, model);
    Model back = load_model(prefix);

    auto a = model.named_parameters();
    auto b = back.named_parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].first == b[i].first);
      REQUIRE(a[i].second.shape() == b[i].second.shape());
      const auto& da = a[i].second.data();
      const auto& db = b[i].second.data();
      for (std::size_t j = 0; j < da.size(); ++j) {
        REQUIRE(da[j] == db[j]);  // bitwise for finite doubles
      }
    }
  }
}

TEST_CASE("load rejects shape mismatch") {
  TmpDir tmp;
  std::mt19937_64 rng(3);
  Model model = init_model(small_spec(ArchKind::vanilla), rng);
  const std::string prefix = (tmp.path / "m").string();
  save_model(prefix, model);

  // Corrupt the manifest: claim a different shape for one parameter.
  std::ifstream in(prefix + ".json");
  nlohmann::json manifest;
  in >> manifest;
  manifest["params"][0]["shape"] = {1, 1};
  std::ofstream out(prefix + ".json");
  out << manifest.dump();
  out.close();
  CHECK_THROWS_AS(load_model(prefix), DataError);
}

TEST_CASE("load rejects missing data file") {
  TmpDir tmp;
  std::mt19937_64 rng(3);
  Model model = init_model(small_spec(ArchKind::vanilla), rng);
  const std::string prefix = (tmp.path / "m").string();
  save_model(prefix, model);
  std::filesystem::remove(prefix + ".bin");
  CHECK_THROWS_AS(load_model(prefix), DataError);
}
