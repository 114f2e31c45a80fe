#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <numeric>
#include <thread>
#include <vector>

#include "jessi/metrics.hpp"
#include "jessi/model.hpp"
#include "jessi/text.hpp"

namespace jessi {

// ---------------------------------------------------------------------------
// Adadelta with row-wise max-norm projection
// ---------------------------------------------------------------------------

template <typename Real>
struct AdadeltaState {
  Tensor<Real> eg2;   // running E[g^2]
  Tensor<Real> edx2;  // running E[dx^2]
  Real rho = static_cast<Real>(0.95);
  Real eps = static_cast<Real>(1e-6);

  AdadeltaState() = default;
  explicit AdadeltaState(const std::vector<std::size_t>& shape) : eg2(shape), edx2(shape) {}
};

//   E[g^2]  <- rho E[g^2] + (1-rho) g^2
//   dx      <- -(sqrt(E[dx^2]+eps) / sqrt(E[g^2]+eps)) g
//   E[dx^2] <- rho E[dx^2] + (1-rho) dx^2
//   param   <- param + dx
template <typename Real>
void adadelta_step(Parameter<Real>& param, const Tensor<Real>& grad, AdadeltaState<Real>& state) {
  if (!grad.same_shape(param.value))
    throw ShapeError(strf("adadelta_step: grad %s vs param '%s' %s",
                          shape_str(grad.shape).c_str(), param.name.c_str(),
                          shape_str(param.value.shape).c_str()));
  if (!grad.all_finite())
    throw ValueError(strf("adadelta_step: non-finite gradient for '%s', aborting step",
                          param.name.c_str()));
  const Real rho = state.rho, eps = state.eps;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const Real g = grad.data[i];
    state.eg2.data[i] = rho * state.eg2.data[i] + (Real(1) - rho) * g * g;
    const Real dx = -std::sqrt(state.edx2.data[i] + eps) / std::sqrt(state.eg2.data[i] + eps) * g;
    state.edx2.data[i] = rho * state.edx2.data[i] + (Real(1) - rho) * dx * dx;
    param.value.data[i] += dx;
  }
}

// Rows with L2 norm above the bound are rescaled onto it. A vector counts as
// one row; a rank-3 conv kernel (h x Din x Dout) is projected per output
// channel. Idempotent.
template <typename Real>
void max_norm_project(Tensor<Real>& t, Real bound) {
  if (bound <= Real(0)) throw ValueError("max_norm_project: bound must be positive");
  auto project_strided = [&](Real* base, std::size_t count, std::size_t stride) {
    double ss = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      const double v = static_cast<double>(base[i * stride]);
      ss += v * v;
    }
    const double norm = std::sqrt(ss);
    // rounding slack keeps a re-projection from touching an already-projected row
    if (norm > static_cast<double>(bound) * (1.0 + 1e-12)) {
      const Real s = static_cast<Real>(static_cast<double>(bound) / norm);
      for (std::size_t i = 0; i < count; ++i) base[i * stride] *= s;
    }
  };
  if (t.rank() <= 1) {
    project_strided(t.ptr(), t.size(), 1);
  } else if (t.rank() == 2) {
    for (std::size_t r = 0; r < t.shape[0]; ++r)
      project_strided(t.ptr() + r * t.shape[1], t.shape[1], 1);
  } else if (t.rank() == 3) {
    const std::size_t dout = t.shape[2];
    for (std::size_t o = 0; o < dout; ++o)
      project_strided(t.ptr() + o, t.shape[0] * t.shape[1], dout);
  } else {
    throw ShapeError(strf("max_norm_project: unsupported rank %zu", t.rank()));
  }
}

// Steps every parameter from its accumulated gradient, applies the max-norm
// constraint to weight matrices (rank >= 2; biases and other vectors are
// untouched), then clears the accumulators.
template <typename Real>
class Adadelta {
 public:
  Adadelta(std::vector<Parameter<Real>*> params, Real max_norm)
      : params_(std::move(params)), max_norm_(max_norm) {
    states_.reserve(params_.size());
    for (auto* p : params_) {
      states_.emplace_back(p->value.shape);
      if (max_norm_ > Real(0) && p->value.rank() >= 2) p->max_norm = max_norm_;
    }
  }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      adadelta_step(*params_[i], params_[i]->grad, states_[i]);
      if (params_[i]->max_norm > Real(0)) max_norm_project(params_[i]->value, params_[i]->max_norm);
      params_[i]->zero_grad();
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

 private:
  std::vector<Parameter<Real>*> params_;
  std::vector<AdadeltaState<Real>> states_;
  Real max_norm_;
};

// ---------------------------------------------------------------------------
// training protocol
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::size_t batch_size = 32;
  double dropout_rate = 0.5;
  double max_norm = 3.0;
  std::size_t max_epochs = 20;
  std::size_t patience = 5;
  std::size_t folds = 10;
  std::size_t top_k = 3;
  double lambda_gamma = 10.0;
  std::uint64_t seed = 42;
  Domain eval_domain = Domain::SourceA;  // which trial set drives early stopping
  ModelHyper hyper;

  void validate() const {
    if (batch_size == 0) throw ConfigError("batchSize must be positive");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw ConfigError(strf("dropoutRate %.3f outside [0,1)", dropout_rate));
    if (max_norm <= 0.0) throw ConfigError("maxNorm must be positive");
    if (max_epochs == 0) throw ConfigError("maxEpochs must be positive");
    if (folds < 2) throw ConfigError("folds must be at least 2");
    if (top_k == 0 || top_k > folds) throw ConfigError("topK must be in [1, folds]");
    if (top_k % 2 == 0) throw ConfigError("topK must be odd for binary majority voting");
    if (lambda_gamma <= 0.0) throw ConfigError("lambdaGamma must be positive");
    hyper.branch.validate();
  }
};

struct TrainData {
  std::vector<EncodedExample> train;    // labeled, source domain
  std::vector<EncodedExample> trial_a;  // labeled; text doubles as domain-A sample
  std::vector<EncodedExample> trial_b;  // labeled; text doubles as domain-B sample
};

template <typename Real>
struct TrainResult {
  std::unique_ptr<JessiModel<Real>> model;  // restored to the best epoch
  std::vector<double> trial_f1_per_epoch;
  double best_f1 = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

template <typename Real>
double suggestion_f1(JessiModel<Real>& model, const std::vector<EncodedExample>& examples) {
  std::vector<int> gold;
  gold.reserve(examples.size());
  for (const auto& ex : examples) {
    if (ex.label < 0) throw ValueError("suggestion_f1: unlabeled example");
    gold.push_back(ex.label);
  }
  return prf1(model.predict(examples), gold).f1;
}

namespace detail {

// Domain batches draw evenly from both trial sets, label-blind.
template <typename Real>
class DomainBatcher {
 public:
  DomainBatcher(const TrainData& data, std::size_t batch_size, RngStream rng)
      : a_(data.trial_a), b_(data.trial_b), half_(std::max<std::size_t>(batch_size / 2, 1)),
        rng_(rng) {
    reshuffle(a_, order_a_);
    reshuffle(b_, order_b_);
  }

  Batch next() {
    std::vector<EncodedExample> chunk;
    chunk.reserve(2 * half_);
    for (std::size_t i = 0; i < half_; ++i) chunk.push_back(take(a_, order_a_, pos_a_));
    for (std::size_t i = 0; i < half_; ++i) chunk.push_back(take(b_, order_b_, pos_b_));
    RngStream unused(0);
    return make_batches(chunk, chunk.size(), false, unused).front();
  }

 private:
  void reshuffle(const std::vector<EncodedExample>& pool, std::vector<std::size_t>& order) {
    order.resize(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng_.shuffle(order.begin(), order.end());
  }

  EncodedExample take(const std::vector<EncodedExample>& pool, std::vector<std::size_t>& order,
                      std::size_t& pos) {
    if (pool.empty()) throw ValueError("domain batches need non-empty trial sets");
    if (pos >= order.size()) {
      reshuffle(pool, order);
      pos = 0;
    }
    EncodedExample ex = pool[order[pos++]];
    ex.label = -1;  // label-blind for the domain term
    return ex;
  }

  const std::vector<EncodedExample>& a_;
  const std::vector<EncodedExample>& b_;
  std::size_t half_;
  RngStream rng_;
  std::vector<std::size_t> order_a_, order_b_;
  std::size_t pos_a_ = 0, pos_b_ = 0;
};

}  // namespace detail

// One full training run: shuffled mini-batches of the combined loss, per-epoch
// trial F1, early stopping with best-epoch restore.
template <typename Real>
TrainResult<Real> train_model(const TrainConfig& cfg, const TrainData& data, const Vocab& vocab,
                              const EmbeddingPair<Real>& emb_init, std::uint64_t seed) {
  cfg.validate();
  if (data.train.empty()) throw ValueError("train_model: empty training set");

  ModelHyper hyper = cfg.hyper;
  hyper.dropout = cfg.dropout_rate;
  RngStream root(seed);
  TrainResult<Real> result;
  result.model =
      std::make_unique<JessiModel<Real>>(hyper, vocab, emb_init, root.split(1).seed());

  const bool dom_adv = hyper.branch.domain_adversarial;
  LambdaSchedule schedule{cfg.lambda_gamma, cfg.max_epochs};
  Adadelta<Real> optimizer(result.model->trainable_params(), static_cast<Real>(cfg.max_norm));

  const std::vector<EncodedExample>& eval_set =
      cfg.eval_domain == Domain::TargetB ? data.trial_b : data.trial_a;
  if (eval_set.empty()) throw ValueError("train_model: empty trial set for early stopping");

  std::vector<Tensor<Real>> best_snapshot = result.model->snapshot();
  std::size_t epochs_since_best = 0;
  bool have_best = false;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const Real lambda =
        dom_adv ? static_cast<Real>(schedule.at(epoch)) : Real(0);
    RngStream epoch_rng = root.split(100 + epoch);
    RngStream batch_rng = epoch_rng.split(1);
    RngStream dropout_rng = epoch_rng.split(2);
    detail::DomainBatcher<Real> domain_batcher(data, cfg.batch_size, epoch_rng.split(3));

    for (const Batch& batch : make_batches(data.train, cfg.batch_size, true, batch_rng)) {
      Graph<Real> g;
      Batch domain_batch;
      const Batch* domain_ptr = nullptr;
      if (dom_adv && lambda > Real(0)) {
        domain_batch = domain_batcher.next();
        domain_ptr = &domain_batch;
      }
      Var loss = result.model->training_loss(g, batch, domain_ptr, lambda, Mode::Train,
                                             dropout_rng);
      const double loss_value = static_cast<double>(g.val(loss).data[0]);
      if (!std::isfinite(loss_value))
        throw ValueError(strf("train_model: non-finite loss %.6f at epoch %zu", loss_value,
                              epoch));
      optimizer.zero_grad();
      g.backward(loss);
      optimizer.step();
    }

    const double f1 = suggestion_f1(*result.model, eval_set);
    result.trial_f1_per_epoch.push_back(f1);
    result.epochs_run = epoch + 1;
    if (!have_best || f1 > result.best_f1) {
      result.best_f1 = f1;
      result.best_epoch = epoch;
      best_snapshot = result.model->snapshot();
      epochs_since_best = 0;
      have_best = true;
    } else {
      ++epochs_since_best;
      if (epochs_since_best > cfg.patience) break;
    }
  }

  result.model->restore(best_snapshot);
  return result;
}

// ---------------------------------------------------------------------------
// k-fold training and top-k ensembling
// ---------------------------------------------------------------------------

inline std::size_t max_parallel_jobs() {
  if (const char* env = std::getenv("JESSI_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? hw : 1;
}

// Deterministic partition: shuffled order dealt round-robin, so fold sizes
// differ by at most one and the folds cover the set disjointly.
inline std::vector<std::vector<std::size_t>> kfold_partition(std::size_t n, std::size_t folds,
                                                             std::uint64_t seed) {
  if (n < folds) throw ValueError(strf("kfold: %zu examples cannot fill %zu folds", n, folds));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RngStream rng = RngStream(seed).split(0xF01D);
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<std::size_t>> out(folds);
  for (std::size_t i = 0; i < n; ++i) out[i % folds].push_back(order[i]);
  return out;
}

template <typename Real>
struct FoldOutcome {
  std::size_t fold = 0;
  TrainResult<Real> result;
};

// Trains `folds` models, each holding one fold out of the training data; the
// trial sets are shared. Jobs are independent and run on up to JESSI_THREADS
// workers; results are identical to a serial run.
template <typename Real>
std::vector<FoldOutcome<Real>> kfold_train(const TrainConfig& cfg, const TrainData& data,
                                           const Vocab& vocab,
                                           const EmbeddingPair<Real>& emb_init) {
  cfg.validate();
  const auto partition = kfold_partition(data.train.size(), cfg.folds, cfg.seed);

  std::vector<FoldOutcome<Real>> outcomes(cfg.folds);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::string failure;
  std::mutex failure_mutex;

  auto worker = [&]() {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= cfg.folds || failed.load()) return;
      try {
        TrainData fold_data;
        fold_data.trial_a = data.trial_a;
        fold_data.trial_b = data.trial_b;
        for (std::size_t j = 0; j < cfg.folds; ++j) {
          if (j == k) continue;
          for (std::size_t idx : partition[j]) fold_data.train.push_back(data.train[idx]);
        }
        outcomes[k].fold = k;
        outcomes[k].result =
            train_model<Real>(cfg, fold_data, vocab, emb_init, RngStream(cfg.seed).split(1000 + k).seed());
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        failed.store(true);
        if (failure.empty()) failure = strf("fold %zu: %s", k, e.what());
      }
    }
  };

  const std::size_t jobs = std::min(max_parallel_jobs(), cfg.folds);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < jobs; ++i) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (failed.load()) throw Error(strf("kfold_train: %s", failure.c_str()));
  return outcomes;
}

struct EnsembleSelection {
  std::vector<std::size_t> members;  // indices into the candidate pool
  std::vector<double> scores;       // matching selection scores
};

// Top-k by score, ties broken toward the lower index.
inline EnsembleSelection ensemble_select(const std::vector<double>& scores, std::size_t top_k) {
  if (scores.size() < top_k)
    throw ValueError(strf("ensemble_select: %zu candidates for top %zu", scores.size(), top_k));
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  EnsembleSelection sel;
  for (std::size_t i = 0; i < top_k; ++i) {
    sel.members.push_back(order[i]);
    sel.scores.push_back(scores[order[i]]);
  }
  return sel;
}

// Majority vote across an odd number of binary voters.
inline std::vector<int> majority_vote(const std::vector<std::vector<int>>& member_predictions) {
  if (member_predictions.empty()) throw ValueError("majority_vote: no members");
  if (member_predictions.size() % 2 == 0)
    throw ValueError("majority_vote: member count must be odd");
  const std::size_t n = member_predictions[0].size();
  for (const auto& preds : member_predictions)
    if (preds.size() != n) throw ValueError("majority_vote: ragged member predictions");
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t ones = 0;
    for (const auto& preds : member_predictions) ones += preds[i] == 1;
    out[i] = 2 * ones > member_predictions.size() ? 1 : 0;
  }
  return out;
}

template <typename Real>
std::vector<int> ensemble_predict(std::vector<JessiModel<Real>*> members,
                                  const std::vector<EncodedExample>& examples) {
  std::vector<std::vector<int>> votes;
  votes.reserve(members.size());
  for (auto* m : members) votes.push_back(m->predict(examples));
  return majority_vote(votes);
}

}  // namespace jessi
