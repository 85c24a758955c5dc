#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "cohlab/architectures.hpp"

using namespace cohlab;

namespace {

EncoderConfig tiny_encoder(std::size_t vocab, std::size_t max_len = 32) {
  EncoderConfig cfg;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_model = 8;
  cfg.d_ff = 16;
  cfg.dropout_p = 0.0;
  cfg.max_seq_len = max_len;
  cfg.vocab_size = vocab;
  return cfg;
}

ArchitectureSpec make_spec(ArchKind kind, TaskHeadKind head,
                           std::size_t vocab = 40) {
  ArchitectureSpec spec;
  spec.kind = kind;
  spec.encoder_cfg = tiny_encoder(vocab);
  spec.head_kind = head;
  spec.head_hidden = 8;
  if (kind == ArchKind::hierarchical || kind == ArchKind::fact_aware)
    spec.doc_encoder_cfg = tiny_encoder(vocab, 16);
  return spec;
}

Vocabulary demo_vocab() {
  Document d;
  d.id = "v";
  d.text = "alpha beta gamma delta epsilon zeta eta theta iota kappa . "
           "cats chase dogs birds sing mice run fast slow";
  d.sentences = {d.text};
  return build_vocab({d}, 1);
}

Document doc_of(const std::string& id, std::vector<std::string> sentences) {
  Document d;
  d.id = id;
  d.sentences = std::move(sentences);
  for (const auto& s : d.sentences) {
    if (!d.text.empty()) d.text.push_back(' ');
    d.text += s;
  }
  return d;
}

}  // namespace

TEST_CASE("spec validation") {
  ArchitectureSpec spec = make_spec(ArchKind::hierarchical, TaskHeadKind::classify3);
  spec.doc_encoder_cfg.reset();
  CHECK_THROWS_AS(spec.validate(), ContractError);

  spec = make_spec(ArchKind::fact_aware, TaskHeadKind::classify3);
  spec.doc_encoder_cfg->d_model = 4;
  CHECK_THROWS_AS(spec.validate(), ContractError);
}

TEST_CASE("vanilla forward shapes and determinism") {
  Vocabulary vocab = demo_vocab();
  ArchitectureSpec spec = make_spec(ArchKind::vanilla, TaskHeadKind::classify3,
                                    vocab.size());
  std::mt19937_64 rng(1);
  Model model = init_model(spec, rng);
  RunContext ctx;

  Document d = doc_of("a", {"cats chase dogs .", "birds sing ."});
  std::vector<DocInput> batch(4, prepare_doc(vocab, d, spec));
  Tensor out = vanilla_forward(model, batch, ctx);
  CHECK(out.shape() == Shape{4, 3});

  // identical docs in a batch produce identical logit rows
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(out.data()[0 * 3 + j] == out.data()[1 * 3 + j]);
    CHECK(out.data()[0 * 3 + j] == out.data()[3 * 3 + j]);
  }

  // classification probabilities sum to 1 at inference
  Tensor probs = softmax(out, 1);
  for (std::size_t b = 0; b < 4; ++b) {
    double s = 0;
    for (std::size_t j = 0; j < 3; ++j) s += probs.data()[b * 3 + j];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("hierarchical forward") {
  Vocabulary vocab = demo_vocab();
  ArchitectureSpec spec = make_spec(ArchKind::hierarchical, TaskHeadKind::classify3,
                                    vocab.size());
  std::mt19937_64 rng(2);
  Model model = init_model(spec, rng);
  RunContext ctx;

  Document five = doc_of("h", {"alpha beta .", "beta gamma .", "gamma delta .",
                               "delta epsilon .", "epsilon zeta ."});
  Tensor out = hierarchical_forward(model, {prepare_doc(vocab, five, spec)}, ctx);
  CHECK(out.shape() == Shape{1, 3});

  // document-encoder input is CLS + one vector per sentence: 5 sentences fit
  // a length-6 budget but not length-5
  ArchitectureSpec narrow = spec;
  narrow.doc_encoder_cfg->max_seq_len = 6;
  std::mt19937_64 rng2(2);
  Model m6 = init_model(narrow, rng2);
  CHECK_NOTHROW(hierarchical_forward(m6, {prepare_doc(vocab, five, narrow)}, ctx));
  narrow.doc_encoder_cfg->max_seq_len = 5;
  std::mt19937_64 rng3(2);
  Model m5 = init_model(narrow, rng3);
  CHECK_THROWS_AS(hierarchical_forward(m5, {prepare_doc(vocab, five, narrow)}, ctx),
                  ContractError);

  // sentence order is not ignored
  Document permuted = doc_of("h2", {"gamma delta .", "alpha beta .",
                                    "epsilon zeta .", "beta gamma .",
                                    "delta epsilon ."});
  Tensor out2 = hierarchical_forward(model, {prepare_doc(vocab, permuted, spec)}, ctx);
  double delta = 0;
  for (std::size_t i = 0; i < out.size(); ++i)
    delta += std::abs(out.data()[i] - out2.data()[i]);
  CHECK(delta > 0.0);

  // per-sentence mode also runs
  ArchitectureSpec per = spec;
  per.per_sentence_mode = true;
  std::mt19937_64 rng4(2);
  Model mp = init_model(per, rng4);
  CHECK(hierarchical_forward(mp, {prepare_doc(vocab, five, per)}, ctx).shape() ==
        Shape{1, 3});

  // over-long sentence names its index
  std::string longs;
  for (int i = 0; i < 40; ++i) longs += "alpha ";
  Document toolong = doc_of("h3", {"alpha beta .", longs + "."});
  try {
    hierarchical_forward(model, {prepare_doc(vocab, toolong, spec)}, ctx);
    CHECK(false);
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("sentence 1") != std::string::npos);
  }
}

TEST_CASE("mtl forward contract") {
  Vocabulary vocab = demo_vocab();
  ArchitectureSpec spec = make_spec(ArchKind::mtl, TaskHeadKind::classify3,
                                    vocab.size());
  std::mt19937_64 rng(3);
  Model model = init_model(spec, rng);
  RunContext ctx;

  Document d1 = doc_of("a", {"cats chase dogs ."});
  Document d2 = doc_of("b", {"birds sing ."});
  std::vector<DocInput> coh{prepare_doc(vocab, d1, spec),
                            prepare_doc(vocab, d2, spec)};
  std::vector<DocInput> ent{
      prepare_pair_input(vocab, "cats chase dogs .", "dogs run .", spec),
      prepare_pair_input(vocab, "birds sing .", "mice run .", spec),
      prepare_pair_input(vocab, "cats chase mice .", "cats chase .", spec)};

  MtlResult res = mtl_forward(model, coh, {0, 2}, ent, {1, 0, 1}, ctx);
  CHECK(res.entail_out.shape() == Shape{3, 2});
  // joint loss is the exact sum
  CHECK(res.joint_loss.value() == res.coh_loss.value() + res.entail_loss.value());

  CHECK_THROWS_AS(mtl_forward(model, coh, {0, 2}, {}, {}, ctx), ContractError);

  // shared-parameter gradient equals the sum of per-task gradients
  backward(res.joint_loss);
  auto joint_grad = model.encoder.tok_emb.grad();

  std::mt19937_64 rng2(3);
  Model m2 = init_model(spec, rng2);
  MtlResult r2 = mtl_forward(m2, coh, {0, 2}, ent, {1, 0, 1}, ctx);
  backward(r2.coh_loss);
  auto coh_grad = m2.encoder.tok_emb.grad();
  m2.encoder.tok_emb.zero_grad();
  backward(r2.entail_loss);
  auto ent_grad = m2.encoder.tok_emb.grad();
  for (std::size_t i = 0; i < joint_grad.size(); ++i)
    CHECK(std::abs(joint_grad[i] - (coh_grad[i] + ent_grad[i])) < 1e-12);
}

TEST_CASE("fact-aware forward") {
  Vocabulary vocab = demo_vocab();
  ArchitectureSpec spec = make_spec(ArchKind::fact_aware, TaskHeadKind::classify3,
                                    vocab.size());
  std::mt19937_64 rng(4);
  Model model = init_model(spec, rng);
  RunContext ctx;

  Document d = doc_of("f", {"cats chase dogs .", "birds sing ."});

  // no facts: degenerate [CLS, T] input still works
  Tensor out0 = fact_aware_forward(model, {prepare_doc(vocab, d, spec, {})}, ctx);
  CHECK(out0.shape() == Shape{1, 3});

  std::vector<Fact> facts{{"f", 0, "cats", "chase", "dogs"},
                          {"f", 1, "birds", "sing", "loudly"}};
  Tensor out2 = fact_aware_forward(model, {prepare_doc(vocab, d, spec, facts)}, ctx);
  CHECK(out2.shape() == Shape{1, 3});

  // two facts: fact-aware encoder input [CLS, T, f1, f2] needs length 4
  ArchitectureSpec narrow = spec;
  narrow.doc_encoder_cfg->max_seq_len = 4;
  std::mt19937_64 rngn(4);
  Model m4 = init_model(narrow, rngn);
  CHECK_NOTHROW(fact_aware_forward(m4, {prepare_doc(vocab, d, narrow, facts)}, ctx));
  narrow.doc_encoder_cfg->max_seq_len = 3;
  std::mt19937_64 rngn3(4);
  Model m3 = init_model(narrow, rngn3);
  CHECK_THROWS_AS(
      fact_aware_forward(m3, {prepare_doc(vocab, d, narrow, facts)}, ctx),
      ContractError);

  // fact order matters through position embeddings
  std::vector<Fact> swapped{{"f", 0, "birds", "sing", "loudly"},
                            {"f", 0, "cats", "chase", "dogs"}};
  Tensor outs = fact_aware_forward(model, {prepare_doc(vocab, d, spec, swapped)}, ctx);
  double delta = 0;
  for (std::size_t i = 0; i < out2.size(); ++i)
    delta += std::abs(out2.data()[i] - outs.data()[i]);
  CHECK(delta > 0.0);

  // misaligned fact -> error
  std::vector<Fact> bad{{"f", 9, "x", "y", "z"}};
  CHECK_THROWS_AS(prepare_doc(vocab, d, spec, bad), DataError);
}

TEST_CASE("siamese ranking") {
  Vocabulary vocab = demo_vocab();
  ArchitectureSpec spec = make_spec(ArchKind::vanilla, TaskHeadKind::rank_score,
                                    vocab.size());
  std::mt19937_64 rng(5);
  Model model = init_model(spec, rng);
  RunContext ctx;

  Document a = doc_of("a", {"cats chase dogs .", "dogs run fast ."});
  Document b = doc_of("b", {"dogs run fast .", "cats chase dogs ."});
  DocInput ia = prepare_doc(vocab, a, spec);
  DocInput ib = prepare_doc(vocab, b, spec);

  // identical inputs: equal scores, loss exactly the margin
  SiameseResult same = siamese_rank(model, ia, ia, 1.0, ctx);
  CHECK(same.score_a.value() == same.score_b.value());
  CHECK(same.loss.value() == 1.0);

  // swapping inputs swaps scores exactly
  SiameseResult ab = siamese_rank(model, ia, ib, 1.0, ctx);
  SiameseResult ba = siamese_rank(model, ib, ia, 1.0, ctx);
  CHECK(ab.score_a.value() == ba.score_b.value());
  CHECK(ab.score_b.value() == ba.score_a.value());

  // hinge: satisfied margin gives zero loss
  CHECK(margin_ranking_loss(Tensor::scalar(ab.score_b.value() + 2.0),
                            ab.score_b, 1.0)
            .value() == 0.0);

  ArchitectureSpec wrong = make_spec(ArchKind::vanilla, TaskHeadKind::classify3,
                                     vocab.size());
  std::mt19937_64 rng2(5);
  Model mw = init_model(wrong, rng2);
  CHECK_THROWS_AS(siamese_rank(mw, ia, ib, 1.0, ctx), ContractError);
}

TEST_CASE("weight sharing is structural") {
  Vocabulary vocab = demo_vocab();
  ArchitectureSpec spec = make_spec(ArchKind::mtl, TaskHeadKind::classify3,
                                    vocab.size());
  std::mt19937_64 rng(6);
  Model model = init_model(spec, rng);
  RunContext ctx;

  Document d = doc_of("a", {"cats chase dogs ."});
  DocInput di = prepare_doc(vocab, d, spec);
  DocInput ei = prepare_pair_input(vocab, "cats chase dogs .", "dogs run .", spec);

  Tensor coh_before = forward_batch(model, {di}, ctx);
  std::vector<Tensor> er{doc_representation(model, ei, ctx)};
  Tensor ent_before = head_forward(*model.aux_head, stack_rows(er), ctx, 0.0);

  // mutate the shared CLS embedding row through one branch's handle
  const std::size_t d_model = spec.encoder_cfg.d_model;
  model.encoder.tok_emb.data()[Vocabulary::kCls * d_model] += 10.0;

  Tensor coh_after = forward_batch(model, {di}, ctx);
  std::vector<Tensor> er2{doc_representation(model, ei, ctx)};
  Tensor ent_after = head_forward(*model.aux_head, stack_rows(er2), ctx, 0.0);

  // both branches observe the mutation: same parameter node, not a copy
  double dc = 0, de = 0;
  for (std::size_t i = 0; i < coh_before.size(); ++i)
    dc += std::abs(coh_before.data()[i] - coh_after.data()[i]);
  for (std::size_t i = 0; i < ent_before.size(); ++i)
    de += std::abs(ent_before.data()[i] - ent_after.data()[i]);
  CHECK(dc > 0.0);
  CHECK(de > 0.0);

  // named parameter handles alias model storage
  for (auto& [name, t] : model.named_parameters())
    if (name == "encoder.tok_emb") CHECK(t.same_node(model.encoder.tok_emb));
}

TEST_CASE("architecture gradcheck through the head") {
  Vocabulary vocab = demo_vocab();
  for (ArchKind kind : {ArchKind::vanilla, ArchKind::hierarchical,
                        ArchKind::mtl, ArchKind::fact_aware}) {
    ArchitectureSpec spec = make_spec(kind, TaskHeadKind::classify3, vocab.size());
    std::mt19937_64 rng(7);
    Model model = init_model(spec, rng, 0.5);
    RunContext ctx;

    Document d = doc_of("g", {"cats chase dogs .", "birds sing ."});
    std::vector<Fact> facts{{"g", 0, "cats", "chase", "dogs"}};
    DocInput di = prepare_doc(vocab, d, spec,
                              kind == ArchKind::fact_aware ? facts
                                                           : std::vector<Fact>{});
    auto f = [&](const Tensor& w1) {
      Model m2 = model;
      m2.head.w1 = w1;
      return cross_entropy(forward_batch(m2, {di}, ctx), {1});
    };
    CHECK(gradcheck(f, model.head.w1, 1e-5, 1e-4).pass);
  }
}
