#pragma once

#include <json.hpp>
#include <memory>
#include <string>
#include <vector>

#include "jessi/checkpoint.hpp"
#include "jessi/encoders.hpp"
#include "jessi/graph.hpp"
#include "jessi/ops.hpp"
#include "jessi/text.hpp"

namespace jessi {

enum class SentenceEncoderKind { CnnMaxpool, BiSru };

inline const char* sentence_encoder_name(SentenceEncoderKind k) {
  return k == SentenceEncoderKind::CnnMaxpool ? "cnn_maxpool" : "bisru";
}

inline SentenceEncoderKind sentence_encoder_from_name(const std::string& name) {
  if (name == "cnn_maxpool") return SentenceEncoderKind::CnnMaxpool;
  if (name == "bisru") return SentenceEncoderKind::BiSru;
  throw ValueError(strf("unknown sentence encoder '%s'", name.c_str()));
}

// Which branches are live. Presets: subtask A = CNN_MAXPOOL sentence encoder
// and no domain adversary; subtask B = BISRU plus the adversary.
struct BranchConfig {
  bool word_branch = true;  // transformer word encoder + sentence encoder
  bool cnn_branch = true;   // CNN + attention pooling on static embeddings
  SentenceEncoderKind sentence_encoder = SentenceEncoderKind::CnnMaxpool;
  bool domain_adversarial = false;

  void validate() const {
    if (!word_branch && !cnn_branch)
      throw ValueError("branch config: at least one branch must be enabled");
  }

  static BranchConfig preset_a() { return {true, true, SentenceEncoderKind::CnnMaxpool, false}; }
  static BranchConfig preset_b() { return {true, true, SentenceEncoderKind::BiSru, true}; }
};

// lambda(p) = 2 / (1 + exp(-gamma p)) - 1 with p the epoch fraction; starts at
// 0, strictly increases, stays below 1.
inline double lambda_at(std::size_t epoch_index, std::size_t total_epochs, double gamma = 10.0) {
  if (total_epochs == 0 || epoch_index >= total_epochs)
    throw ValueError(strf("lambda_at: epoch %zu outside of %zu", epoch_index, total_epochs));
  const double denom = static_cast<double>(total_epochs > 1 ? total_epochs - 1 : 1);
  const double p = static_cast<double>(epoch_index) / denom;
  return 2.0 / (1.0 + std::exp(-gamma * p)) - 1.0;
}

struct LambdaSchedule {
  double gamma = 10.0;
  std::size_t total_epochs = 1;
  double at(std::size_t epoch_index) const { return lambda_at(epoch_index, total_epochs, gamma); }
};

// Single-example combined objective: cross_entropy(p_y) + lambda *
// cross_entropy(p_d). Pass y_gold = -1 for unlabeled-suggestion input, which
// drops the first term.
template <typename Real>
Var combined_loss(Graph<Real>& g, Var p_y, int y_gold, Var p_d, int d_gold, Real lambda) {
  if (lambda < Real(0)) throw ValueError("combined_loss: lambda must be nonnegative");
  Var domain_term = scale(g, cross_entropy(g, p_d, static_cast<std::size_t>(d_gold)), lambda);
  if (y_gold < 0) return domain_term;
  Var y_term = cross_entropy(g, p_y, static_cast<std::size_t>(y_gold));
  return add(g, y_term, domain_term);
}

// ---------------------------------------------------------------------------
// two-hidden-layer MLP head with softmax output
// ---------------------------------------------------------------------------

template <typename Real>
class MlpHead {
 public:
  MlpHead() = default;
  MlpHead(const std::string& prefix, std::size_t in_dim, std::size_t hidden, RngStream& rng)
      : w1_(glorot_param<Real>(prefix + "l1.w", {hidden, in_dim}, rng)),
        b1_(prefix + "l1.b", Tensor<Real>({hidden})),
        w2_(glorot_param<Real>(prefix + "l2.w", {hidden, hidden}, rng)),
        b2_(prefix + "l2.b", Tensor<Real>({hidden})),
        w3_(glorot_param<Real>(prefix + "out.w", {2, hidden}, rng)),
        b3_(prefix + "out.b", Tensor<Real>({2})),
        in_dim_(in_dim) {}

  std::size_t in_dim() const { return in_dim_; }

  // x is (B x in_dim) or (in_dim); output distributions over 2 classes.
  Var probs(Graph<Real>& g, Var x, Mode mode, double dropout_rate, RngStream& rng) {
    const auto& shape = g.val(x).shape;
    if (shape.back() != in_dim_)
      throw ShapeError(strf("mlp head: input %s does not end in %zu",
                            shape_str(shape).c_str(), in_dim_));
    Var h1 = dropout(g, tanh_op(g, linear(g, x, g.param(w1_), g.param(b1_))), dropout_rate, mode,
                     rng);
    Var h2 = dropout(g, tanh_op(g, linear(g, h1, g.param(w2_), g.param(b2_))), dropout_rate, mode,
                     rng);
    return masked_softmax(g, linear(g, h2, g.param(w3_), g.param(b3_)));
  }

  void collect_params(std::vector<Parameter<Real>*>& out) {
    for (auto* p : {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_}) out.push_back(p);
  }

 private:
  Parameter<Real> w1_, b1_, w2_, b2_, w3_, b3_;
  std::size_t in_dim_ = 0;
};

// ---------------------------------------------------------------------------
// full model
// ---------------------------------------------------------------------------

struct ModelHyper {
  BranchConfig branch;
  std::size_t emb_dim_g = 50;
  std::size_t emb_dim_c = 50;
  std::size_t cnn_channels = 200;
  std::vector<std::size_t> filter_widths = {3, 5, 7};
  std::size_t sru_hidden = 150;
  std::size_t sru_layers = 2;
  std::size_t d_model = 64;
  std::size_t transformer_layers = 2;
  std::size_t heads = 4;
  std::size_t d_ff = 128;
  std::size_t max_len = 128;
  std::size_t mlp_hidden = 300;
  double dropout = 0.5;
  bool emb_trainable_g = true;
  bool emb_trainable_c = true;
};

nlohmann::json hyper_to_json(const ModelHyper& h);
ModelHyper hyper_from_json(const nlohmann::json& j);

template <typename Real>
class JessiModel {
 public:
  JessiModel(ModelHyper hyper, Vocab vocab, EmbeddingPair<Real> embeddings, std::uint64_t seed)
      : hyper_(std::move(hyper)), vocab_(std::move(vocab)) {
    hyper_.branch.validate();
    if (embeddings.table_g.shape != std::vector<std::size_t>{vocab_.size(), hyper_.emb_dim_g} ||
        embeddings.table_c.shape != std::vector<std::size_t>{vocab_.size(), hyper_.emb_dim_c})
      throw ShapeError("model: embedding tables do not match vocab/dims");

    RngStream rng(seed);
    emb_g_ = Parameter<Real>("emb_g", std::move(embeddings.table_g));
    emb_c_ = Parameter<Real>("emb_c", std::move(embeddings.table_c));
    emb_trainable_g_ = embeddings.trainable_g && hyper_.emb_trainable_g;
    emb_trainable_c_ = embeddings.trainable_c && hyper_.emb_trainable_c;

    RngStream r_cnn = rng.split(1);
    RngStream r_word = rng.split(2);
    RngStream r_sent = rng.split(3);
    RngStream r_heads = rng.split(4);

    if (hyper_.branch.cnn_branch)
      cnn_att_ = CnnAttEncoder<Real>("cnn_att", hyper_.emb_dim_g + hyper_.emb_dim_c,
                                     hyper_.filter_widths, hyper_.cnn_channels, r_cnn);
    if (hyper_.branch.word_branch) {
      typename TransformerWordEncoder<Real>::Config tc;
      tc.d_model = hyper_.d_model;
      tc.layers = hyper_.transformer_layers;
      tc.heads = hyper_.heads;
      tc.d_ff = hyper_.d_ff;
      tc.max_len = hyper_.max_len;
      word_enc_ = TransformerWordEncoder<Real>("word_enc", vocab_.size(), tc, r_word);
      if (hyper_.branch.sentence_encoder == SentenceEncoderKind::BiSru)
        sent_sru_ = BiSruStack<Real>("sent_sru", hyper_.d_model, hyper_.sru_hidden,
                                     hyper_.sru_layers, r_sent);
      else
        sent_cnn_ = CnnMaxpoolEncoder<Real>("sent_cnn", hyper_.d_model, hyper_.filter_widths,
                                            hyper_.cnn_channels, r_sent);
    }

    RngStream r_y = r_heads.split(1);
    RngStream r_d = r_heads.split(2);
    mlp_y_ = MlpHead<Real>("mlp_y.", joint_dim(), hyper_.mlp_hidden, r_y);
    if (hyper_.branch.domain_adversarial)
      mlp_d_ = MlpHead<Real>("mlp_d.", joint_dim(), hyper_.mlp_hidden, r_d);
  }

  const ModelHyper& hyper() const { return hyper_; }
  const Vocab& vocab() const { return vocab_; }

  std::size_t joint_dim() const {
    std::size_t dim = 0;
    if (hyper_.branch.word_branch) dim += word_branch_dim();
    if (hyper_.branch.cnn_branch) dim += hyper_.filter_widths.size() * hyper_.cnn_channels;
    return dim;
  }

  std::size_t word_branch_dim() const {
    return hyper_.branch.sentence_encoder == SentenceEncoderKind::BiSru
               ? 4 * hyper_.sru_hidden
               : hyper_.filter_widths.size() * hyper_.cnn_channels;
  }

  struct JointEncoding {
    Var word;   // s from the transformer branch (invalid when branch is off)
    Var cnn;    // s from the CNN->Att branch (invalid when branch is off)
    Var joint;  // [word ; cnn], or whichever single branch is live
  };

  JointEncoding joint_encode(Graph<Real>& g, const Batch& batch, Mode mode, RngStream& rng) {
    const Tensor<Real> mask = batch.template mask_tensor<Real>();
    JointEncoding out;
    if (hyper_.branch.word_branch) {
      Var e_b = word_enc_.encode(g, batch.token_ids, batch.size, batch.max_len, mask, mode,
                                 hyper_.dropout, rng);
      e_b = mask_zero(g, e_b, mask);
      out.word = hyper_.branch.sentence_encoder == SentenceEncoderKind::BiSru
                     ? sent_sru_.encode(g, e_b, mask, mode, hyper_.dropout, rng)
                     : sent_cnn_.encode(g, e_b, mask, mode, hyper_.dropout, rng);
    }
    if (hyper_.branch.cnn_branch) {
      Var eg = embedding_lookup(g, g.param(emb_g_), batch.token_ids, batch.size, batch.max_len,
                                mask);
      Var ec = embedding_lookup(g, g.param(emb_c_), batch.token_ids, batch.size, batch.max_len,
                                mask);
      out.cnn = cnn_att_.encode(g, concat_last(g, eg, ec), mask, mode, hyper_.dropout, rng);
    }
    if (out.word.valid() && out.cnn.valid())
      out.joint = concat_last(g, out.word, out.cnn);
    else
      out.joint = out.word.valid() ? out.word : out.cnn;
    return out;
  }

  Var suggestion_probs(Graph<Real>& g, Var joint, Mode mode, RngStream& rng) {
    return mlp_y_.probs(g, joint, mode, hyper_.dropout, rng);
  }

  // Domain head behind gradient reversal: forward identical to a plain MLP,
  // backward pushes negated gradients into the encoders while the head's own
  // parameters see unnegated ones. with_reversal=false is the test hook.
  Var domain_probs(Graph<Real>& g, Var joint, Mode mode, RngStream& rng,
                   bool with_reversal = true) {
    if (!hyper_.branch.domain_adversarial)
      throw ValueError("domain_probs: model was built without the domain adversary");
    Var in = with_reversal ? grad_reverse(g, joint) : joint;
    return mlp_d_.probs(g, in, mode, hyper_.dropout, rng);
  }

  // Batched objective: mean suggestion cross-entropy on the labeled batch
  // plus lambda times the mean domain cross-entropy on the domain batch.
  Var training_loss(Graph<Real>& g, const Batch& labeled, const Batch* domain_batch, Real lambda,
                    Mode mode, RngStream& rng) {
    Var loss{};
    {
      Var joint = joint_encode(g, labeled, mode, rng).joint;
      Var p_y = suggestion_probs(g, joint, mode, rng);
      loss = cross_entropy_mean(g, p_y, labeled.labels);
    }
    if (domain_batch != nullptr && hyper_.branch.domain_adversarial && lambda > Real(0)) {
      Var joint = joint_encode(g, *domain_batch, mode, rng).joint;
      Var p_d = domain_probs(g, joint, mode, rng);
      loss = add(g, loss, scale(g, cross_entropy_mean(g, p_d, domain_batch->domains), lambda));
    }
    return loss;
  }

  std::vector<int> predict(const std::vector<EncodedExample>& examples,
                           std::size_t batch_size = 64) {
    std::vector<int> out;
    out.reserve(examples.size());
    RngStream rng(0);
    for (const Batch& batch : make_batches(examples, batch_size, false, rng)) {
      Graph<Real> g;
      Var probs = suggestion_probs(g, joint_encode(g, batch, Mode::Eval, rng).joint, Mode::Eval,
                                   rng);
      const Tensor<Real>& p = g.val(probs);
      for (std::size_t b = 0; b < batch.size; ++b)
        out.push_back(p(b, 1) > p(b, 0) ? 1 : 0);
    }
    return out;
  }

  std::vector<Parameter<Real>*> params() {
    std::vector<Parameter<Real>*> out;
    out.push_back(&emb_g_);
    out.push_back(&emb_c_);
    if (hyper_.branch.cnn_branch) cnn_att_.collect_params(out);
    if (hyper_.branch.word_branch) {
      word_enc_.collect_params(out);
      if (hyper_.branch.sentence_encoder == SentenceEncoderKind::BiSru)
        sent_sru_.collect_params(out);
      else
        sent_cnn_.collect_params(out);
    }
    mlp_y_.collect_params(out);
    if (hyper_.branch.domain_adversarial) mlp_d_.collect_params(out);
    return out;
  }

  std::vector<Parameter<Real>*> trainable_params() {
    std::vector<Parameter<Real>*> out;
    for (auto* p : params()) {
      if (p == &emb_g_ && !emb_trainable_g_) continue;
      if (p == &emb_c_ && !emb_trainable_c_) continue;
      out.push_back(p);
    }
    return out;
  }

  // Encoder-side parameters, i.e. everything that feeds the joint encoding
  // (used by the reversal contract checks).
  std::vector<Parameter<Real>*> encoder_params() {
    std::vector<Parameter<Real>*> out;
    out.push_back(&emb_g_);
    out.push_back(&emb_c_);
    if (hyper_.branch.cnn_branch) cnn_att_.collect_params(out);
    if (hyper_.branch.word_branch) {
      word_enc_.collect_params(out);
      if (hyper_.branch.sentence_encoder == SentenceEncoderKind::BiSru)
        sent_sru_.collect_params(out);
      else
        sent_cnn_.collect_params(out);
    }
    return out;
  }

  std::vector<Parameter<Real>*> domain_head_params() {
    std::vector<Parameter<Real>*> out;
    if (hyper_.branch.domain_adversarial) mlp_d_.collect_params(out);
    return out;
  }

  std::vector<Tensor<Real>> snapshot() {
    std::vector<Tensor<Real>> out;
    for (auto* p : params()) out.push_back(p->value);
    return out;
  }

  void restore(const std::vector<Tensor<Real>>& snap) {
    auto ps = params();
    if (snap.size() != ps.size()) throw ValueError("restore: snapshot size mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = snap[i];
  }

  void save(const std::string& path) {
    nlohmann::json meta;
    meta["version"] = 1;
    meta["hyper"] = hyper_to_json(hyper_);
    meta["vocab"] = vocab_.entries();
    save_checkpoint(path, checkpoint_from_params(params(), meta.dump()));
  }

  static std::unique_ptr<JessiModel> load(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.meta.empty())
      throw IoError(strf("model: %s has no architecture record", path.c_str()));
    nlohmann::json meta = nlohmann::json::parse(ckpt.meta);
    ModelHyper hyper = hyper_from_json(meta.at("hyper"));
    Vocab vocab(meta.at("vocab").get<std::vector<std::string>>());
    EmbeddingPair<Real> emb;
    emb.table_g = Tensor<Real>({vocab.size(), hyper.emb_dim_g});
    emb.table_c = Tensor<Real>({vocab.size(), hyper.emb_dim_c});
    auto model = std::make_unique<JessiModel>(hyper, std::move(vocab), std::move(emb), 0);
    checkpoint_into_params(ckpt, model->params());
    return model;
  }

  // Loads any name-and-shape matching tensors from a warm-start checkpoint,
  // e.g. externally pretrained word-encoder weights; ignores the rest.
  std::size_t load_matching(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    std::size_t hits = 0;
    for (auto* p : params()) {
      const Tensor<float>* t = ckpt.find(p->name);
      if (t && t->shape == p->value.shape) {
        p->value = t->template cast<Real>();
        ++hits;
      }
    }
    return hits;
  }

 private:
  ModelHyper hyper_;
  Vocab vocab_;
  Parameter<Real> emb_g_, emb_c_;
  bool emb_trainable_g_ = true;
  bool emb_trainable_c_ = true;
  CnnAttEncoder<Real> cnn_att_;
  TransformerWordEncoder<Real> word_enc_;
  BiSruStack<Real> sent_sru_;
  CnnMaxpoolEncoder<Real> sent_cnn_;
  MlpHead<Real> mlp_y_, mlp_d_;
};

inline nlohmann::json hyper_to_json(const ModelHyper& h) {
  nlohmann::json j;
  j["word_branch"] = h.branch.word_branch;
  j["cnn_branch"] = h.branch.cnn_branch;
  j["sentence_encoder"] = sentence_encoder_name(h.branch.sentence_encoder);
  j["domain_adversarial"] = h.branch.domain_adversarial;
  j["emb_dim_g"] = h.emb_dim_g;
  j["emb_dim_c"] = h.emb_dim_c;
  j["cnn_channels"] = h.cnn_channels;
  j["filter_widths"] = h.filter_widths;
  j["sru_hidden"] = h.sru_hidden;
  j["sru_layers"] = h.sru_layers;
  j["d_model"] = h.d_model;
  j["transformer_layers"] = h.transformer_layers;
  j["heads"] = h.heads;
  j["d_ff"] = h.d_ff;
  j["max_len"] = h.max_len;
  j["mlp_hidden"] = h.mlp_hidden;
  j["dropout"] = h.dropout;
  j["emb_trainable_g"] = h.emb_trainable_g;
  j["emb_trainable_c"] = h.emb_trainable_c;
  return j;
}

inline ModelHyper hyper_from_json(const nlohmann::json& j) {
  ModelHyper h;
  h.branch.word_branch = j.at("word_branch").get<bool>();
  h.branch.cnn_branch = j.at("cnn_branch").get<bool>();
  h.branch.sentence_encoder = sentence_encoder_from_name(j.at("sentence_encoder").get<std::string>());
  h.branch.domain_adversarial = j.at("domain_adversarial").get<bool>();
  h.emb_dim_g = j.at("emb_dim_g").get<std::size_t>();
  h.emb_dim_c = j.at("emb_dim_c").get<std::size_t>();
  h.cnn_channels = j.at("cnn_channels").get<std::size_t>();
  h.filter_widths = j.at("filter_widths").get<std::vector<std::size_t>>();
  h.sru_hidden = j.at("sru_hidden").get<std::size_t>();
  h.sru_layers = j.at("sru_layers").get<std::size_t>();
  h.d_model = j.at("d_model").get<std::size_t>();
  h.transformer_layers = j.at("transformer_layers").get<std::size_t>();
  h.heads = j.at("heads").get<std::size_t>();
  h.d_ff = j.at("d_ff").get<std::size_t>();
  h.max_len = j.at("max_len").get<std::size_t>();
  h.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
  h.dropout = j.at("dropout").get<double>();
  h.emb_trainable_g = j.at("emb_trainable_g").get<bool>();
  h.emb_trainable_c = j.at("emb_trainable_c").get<bool>();
  return h;
}

}  // namespace jessi
