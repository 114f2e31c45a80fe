#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "jessi/gradcheck.hpp"
#include "jessi/model.hpp"

using namespace jessi;

namespace {

// Small-but-complete model setup shared by the tests.
template <typename Real>
struct Fixture {
  ModelHyper hyper;
  Vocab vocab;
  std::unique_ptr<JessiModel<Real>> model;

  explicit Fixture(BranchConfig branch, std::uint64_t seed = 7) {
    hyper.branch = branch;
    hyper.emb_dim_g = 4;
    hyper.emb_dim_c = 4;
    hyper.cnn_channels = 5;
    hyper.filter_widths = {3};
    hyper.sru_hidden = 4;
    hyper.sru_layers = 2;
    hyper.d_model = 8;
    hyper.transformer_layers = 1;
    hyper.heads = 2;
    hyper.d_ff = 12;
    hyper.max_len = 12;
    hyper.mlp_hidden = 6;
    hyper.dropout = 0.0;
    vocab = build_vocab({tokenize("please add more cables to the dock now thanks")}, 1);
    RngStream rng(seed);
    EmbeddingPair<Real> emb;
    emb.table_g = load_embeddings<Real>("", vocab, hyper.emb_dim_g, rng);
    emb.table_c = load_embeddings<Real>("", vocab, hyper.emb_dim_c, rng);
    model = std::make_unique<JessiModel<Real>>(hyper, vocab, std::move(emb), seed);
  }

  Batch batch(std::initializer_list<const char*> sentences,
              std::initializer_list<int> labels, std::initializer_list<int> domains) {
    std::vector<RawExample> raws;
    auto lbl = labels.begin();
    auto dom = domains.begin();
    int i = 0;
    for (const char* s : sentences)
      raws.push_back({strf("x%d", i++), s, *lbl++, static_cast<Domain>(*dom++)});
    RngStream rng(0);
    return make_batches(encode_examples(raws, vocab), raws.size(), false, rng).front();
  }
};

}  // namespace

TEST_CASE("mlp head produces distributions; zero weights give [0.5, 0.5]") {
  RngStream rng(1);
  MlpHead<double> head("h.", 7, 5, rng);
  RngStream drop(0);
  Graph<double> g;
  Var x = g.input(Tensor<double>::uniform({3, 7}, -2.0, 2.0, rng));
  Var p = head.probs(g, x, Mode::Eval, 0.0, drop);
  for (std::size_t b = 0; b < 3; ++b)
    CHECK(g.val(p)(b, 0) + g.val(p)(b, 1) == doctest::Approx(1.0).epsilon(1e-6));

  std::vector<Parameter<double>*> params;
  head.collect_params(params);
  for (auto* prm : params) prm->value.zero();
  Graph<double> gz;  // fresh tape: leaves snapshot parameter values at creation
  Var xz = gz.input(Tensor<double>::uniform({3, 7}, -2.0, 2.0, rng));
  Var p0 = head.probs(gz, xz, Mode::Eval, 0.0, drop);
  for (std::size_t b = 0; b < 3; ++b) {
    CHECK(gz.val(p0)(b, 0) == doctest::Approx(0.5));
    CHECK(gz.val(p0)(b, 1) == doctest::Approx(0.5));
  }

  Graph<double> g2;
  Var bad = g2.input(Tensor<double>({3, 6}));
  CHECK_THROWS_AS(head.probs(g2, bad, Mode::Eval, 0.0, drop), ShapeError);
}

TEST_CASE("mlp head equals the layer-by-layer oracle") {
  RngStream rng(2);
  const std::size_t in = 5, hid = 4;
  MlpHead<double> head("h.", in, hid, rng);
  std::vector<Parameter<double>*> params;
  head.collect_params(params);  // order: w1 b1 w2 b2 w3 b3
  const auto& w1 = params[0]->value;
  const auto& b1 = params[1]->value;
  const auto& w2 = params[2]->value;
  const auto& b2 = params[3]->value;
  const auto& w3 = params[4]->value;
  const auto& b3 = params[5]->value;

  Tensor<double> x = Tensor<double>::uniform({in}, -1.5, 1.5, rng);
  RngStream drop(0);
  Graph<double> g;
  Var p = head.probs(g, g.input(x), Mode::Eval, 0.0, drop);

  auto affine = [](const Tensor<double>& w, const Tensor<double>& b,
                   const std::vector<double>& v) {
    std::vector<double> out(w.shape[0], 0.0);
    for (std::size_t r = 0; r < w.shape[0]; ++r) {
      for (std::size_t c = 0; c < w.shape[1]; ++c) out[r] += w(r, c) * v[c];
      out[r] += b[r];
    }
    return out;
  };
  std::vector<double> h1 = affine(w1, b1, x.data);
  for (double& v : h1) v = std::tanh(v);
  std::vector<double> h2 = affine(w2, b2, h1);
  for (double& v : h2) v = std::tanh(v);
  std::vector<double> logits = affine(w3, b3, h2);
  const double mx = std::max(logits[0], logits[1]);
  const double e0 = std::exp(logits[0] - mx), e1 = std::exp(logits[1] - mx);
  CHECK(std::abs(g.val(p)[0] - e0 / (e0 + e1)) < 1e-10);
  CHECK(std::abs(g.val(p)[1] - e1 / (e0 + e1)) < 1e-10);
}

TEST_CASE("lambda schedule hits the closed-form values and increases") {
  CHECK(lambda_at(0, 10) == doctest::Approx(0.0));
  // p = 0.5 with gamma 10
  CHECK(lambda_at(5, 11) == doctest::Approx(0.986614).epsilon(1e-6));
  double prev = -1.0;
  for (std::size_t e = 0; e < 20; ++e) {
    const double l = lambda_at(e, 20);
    CHECK(l > prev);
    CHECK(l < 1.0);
    CHECK(l >= 0.0);
    prev = l;
  }
  CHECK_THROWS_AS(lambda_at(20, 20), ValueError);
}

TEST_CASE("combined loss closed forms") {
  Graph<double> g;
  Var py_half = g.input(Tensor<double>({2}, {0.5, 0.5}));
  Var pd_half = g.input(Tensor<double>({2}, {0.5, 0.5}));
  Var py_sure = g.input(Tensor<double>({2}, {0, 1}));
  Var pd_sure = g.input(Tensor<double>({2}, {1, 0}));

  // lambda = 0: suggestion term alone
  CHECK(g.val(combined_loss(g, py_half, 0, pd_half, 1, 0.0)).data[0] ==
        doctest::Approx(std::log(2.0)));
  // certainty on both: zero loss
  CHECK(g.val(combined_loss(g, py_sure, 1, pd_sure, 0, 1.0)).data[0] == doctest::Approx(0.0));
  // both at 0.5 with lambda 1: 2 ln 2
  CHECK(g.val(combined_loss(g, py_half, 0, pd_half, 1, 1.0)).data[0] ==
        doctest::Approx(1.3862943611).epsilon(1e-9));
  // unlabeled suggestion input drops the first term
  CHECK(g.val(combined_loss(g, py_half, -1, pd_half, 1, 1.0)).data[0] ==
        doctest::Approx(std::log(2.0)));
  // additivity: equals the sum of separately computed terms exactly
  const double ce_y = g.val(cross_entropy(g, py_half, 0)).data[0];
  const double ce_d = g.val(cross_entropy(g, pd_half, 1)).data[0];
  CHECK(g.val(combined_loss(g, py_half, 0, pd_half, 1, 0.7)).data[0] == ce_y + 0.7 * ce_d);
}

TEST_CASE("joint encoding dimensions track the branch config") {
  Fixture<double> both(BranchConfig::preset_b());
  // bisru: 4*4 = 16; cnn branch: 1 width x 5 channels = 5
  CHECK(both.model->joint_dim() == 16 + 5);

  BranchConfig no_cnn = BranchConfig::preset_b();
  no_cnn.cnn_branch = false;
  Fixture<double> word_only(no_cnn);
  CHECK(word_only.model->joint_dim() == 16);

  BranchConfig no_word = BranchConfig::preset_b();
  no_word.word_branch = false;
  Fixture<double> cnn_only(no_word);
  CHECK(cnn_only.model->joint_dim() == 5);

  BranchConfig none;
  none.word_branch = false;
  none.cnn_branch = false;
  CHECK_THROWS_AS(none.validate(), ValueError);

  // joint vector's first block equals the word-branch vector alone
  Batch batch = both.batch({"please add cables", "the dock works"}, {1, 0}, {0, 0});
  Graph<double> g;
  RngStream rng(0);
  auto enc = both.model->joint_encode(g, batch, Mode::Eval, rng);
  const auto& joint = g.val(enc.joint);
  const auto& word = g.val(enc.word);
  REQUIRE(joint.shape == std::vector<std::size_t>{2, 21});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 0; j < 16; ++j) CHECK(joint(b, j) == word(b, j));
}

TEST_CASE("default-width model reaches the dimensions on record") {
  ModelHyper h;
  h.branch = BranchConfig::preset_b();
  CHECK(h.filter_widths.size() * h.cnn_channels == 600);
  CHECK(4 * h.sru_hidden == 600);
}

TEST_CASE("domain head forward is reversal-free; gradients flip only upstream") {
  Fixture<double> fx(BranchConfig::preset_b());
  Batch domain_batch = fx.model->hyper().branch.domain_adversarial
                           ? fx.batch({"please add cables", "the lobby suite"}, {-1, -1}, {0, 1})
                           : Batch{};

  RngStream rng(0);
  // forward pass equals the head applied directly to the joint encoding
  {
    Graph<double> g;
    Var joint = fx.model->joint_encode(g, domain_batch, Mode::Eval, rng).joint;
    Var with = fx.model->domain_probs(g, joint, Mode::Eval, rng, true);
    Var without = fx.model->domain_probs(g, joint, Mode::Eval, rng, false);
    CHECK(g.val(with).data == g.val(without).data);
  }

  auto domain_loss = [&](Graph<double>& g, bool with_reversal) {
    Var joint = fx.model->joint_encode(g, domain_batch, Mode::Eval, rng).joint;
    Var p_d = fx.model->domain_probs(g, joint, Mode::Eval, rng, with_reversal);
    return cross_entropy_mean(g, p_d, domain_batch.domains);
  };

  auto grads_of = [&](bool with_reversal, const std::vector<Parameter<double>*>& params) {
    for (auto* p : fx.model->params()) p->zero_grad();
    Graph<double> g;
    g.backward(domain_loss(g, with_reversal));
    std::vector<std::vector<double>> out;
    for (auto* p : params) out.push_back(p->grad.data);
    return out;
  };

  auto encoder_params = fx.model->encoder_params();
  auto head_params = fx.model->domain_head_params();
  auto enc_with = grads_of(true, encoder_params);
  auto enc_without = grads_of(false, encoder_params);
  REQUIRE(enc_with.size() == enc_without.size());
  bool any_nonzero = false;
  for (std::size_t p = 0; p < enc_with.size(); ++p)
    for (std::size_t i = 0; i < enc_with[p].size(); ++i) {
      CHECK(std::abs(enc_with[p][i] + enc_without[p][i]) < 1e-10);
      any_nonzero = any_nonzero || enc_with[p][i] != 0.0;
    }
  CHECK(any_nonzero);

  auto head_with = grads_of(true, head_params);
  auto head_without = grads_of(false, head_params);
  for (std::size_t p = 0; p < head_with.size(); ++p)
    for (std::size_t i = 0; i < head_with[p].size(); ++i)
      CHECK(head_with[p][i] == doctest::Approx(head_without[p][i]).epsilon(1e-12));
}

TEST_CASE("full adversarial graph passes the finite-difference check") {
  Fixture<double> fx(BranchConfig::preset_b());
  Batch labeled = fx.batch({"please add cables", "the dock works"}, {1, 0}, {0, 0});
  Batch domain = fx.batch({"add more dock", "the now thanks"}, {-1, -1}, {0, 1});
  const double lambda = 0.8;

  RngStream rng(0);
  auto build = [&](Graph<double>& g) {
    return fx.model->training_loss(g, labeled, &domain, lambda, Mode::Eval, rng);
  };
  // The reversal makes the tape report gradients of a sign-flipped surrogate:
  // ce_y - lambda ce_d for everything upstream of the reversal, ce_y +
  // lambda ce_d for the domain head itself.
  auto build_signed = [&](Graph<double>& g, double sign) {
    Var joint_y = fx.model->joint_encode(g, labeled, Mode::Eval, rng).joint;
    Var ce_y = cross_entropy_mean(g, fx.model->suggestion_probs(g, joint_y, Mode::Eval, rng),
                                  labeled.labels);
    Var joint_d = fx.model->joint_encode(g, domain, Mode::Eval, rng).joint;
    Var p_d = fx.model->domain_probs(g, joint_d, Mode::Eval, rng, false);
    Var ce_d = cross_entropy_mean(g, p_d, domain.domains);
    return add(g, ce_y, scale(g, ce_d, sign * lambda));
  };
  auto build_minus = [&](Graph<double>& g) { return build_signed(g, -1.0); };
  auto build_plus = [&](Graph<double>& g) { return build_signed(g, +1.0); };

  std::vector<Parameter<double>*> upstream = fx.model->encoder_params();
  RngStream pick(11);
  auto r_up = gradient_check2<double>(build, build_minus, upstream, 1e-5, 160, pick);
  CHECK(r_up.max_rel_err < 1e-4);
  auto r_head = gradient_check2<double>(build, build_plus, fx.model->domain_head_params(), 1e-5,
                                        80, pick);
  CHECK(r_head.max_rel_err < 1e-4);

  // and without the adversarial term the whole graph checks directly
  auto build_plain = [&](Graph<double>& g) {
    return fx.model->training_loss(g, labeled, nullptr, 0.0, Mode::Eval, rng);
  };
  auto r_all = gradient_check<double>(build_plain, fx.model->params(), 1e-5, 200, pick);
  CHECK(r_all.max_rel_err < 1e-4);
}

TEST_CASE("model save/load round-trips predictions bitwise") {
  Fixture<float> fx(BranchConfig::preset_b(), 21);
  std::vector<RawExample> raws = {{"a", "please add cables now", 1, Domain::SourceA},
                                  {"b", "the dock works fine", 0, Domain::SourceA},
                                  {"c", "you should add more", 1, Domain::SourceA}};
  auto encoded = encode_examples(raws, fx.vocab);

  const std::string path = (std::filesystem::temp_directory_path() / "jessi_model.ckpt").string();
  fx.model->save(path);
  auto loaded = JessiModel<float>::load(path);
  CHECK(loaded->hyper().branch.domain_adversarial == true);
  CHECK(loaded->vocab().size() == fx.vocab.size());
  CHECK(loaded->predict(encoded) == fx.model->predict(encoded));

  // warm-start loading by name prefix hits every tensor here
  Fixture<float> other(BranchConfig::preset_b(), 99);
  CHECK(other.model->load_matching(path) == other.model->params().size());
  CHECK(other.model->predict(encoded) == fx.model->predict(encoded));
  std::remove(path.c_str());
}

TEST_CASE("hyper json round-trip") {
  ModelHyper h;
  h.branch = BranchConfig::preset_b();
  h.emb_dim_g = 17;
  h.filter_widths = {3, 7};
  h.dropout = 0.25;
  h.emb_trainable_c = false;
  ModelHyper back = hyper_from_json(hyper_to_json(h));
  CHECK(back.branch.domain_adversarial == h.branch.domain_adversarial);
  CHECK(back.branch.sentence_encoder == h.branch.sentence_encoder);
  CHECK(back.emb_dim_g == 17);
  CHECK(back.filter_widths == std::vector<std::size_t>{3, 7});
  CHECK(back.dropout == 0.25);
  CHECK(back.emb_trainable_c == false);
}
